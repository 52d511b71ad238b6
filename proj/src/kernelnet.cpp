#include "glocalk/kernelnet.hpp"

#include <cmath>

namespace glocalk {

namespace {

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void apply_activation(DenseMatrix& z, Activation act) {
    if (act == Activation::Identity) return;
    auto vals = z.values();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(vals.size()); ++i)
        vals[i] = sigmoid(vals[i]);
}

// Z = A * W'^T + 1 b^T, batch rows.
DenseMatrix affine_rows(const DenseMatrix& a, const DenseMatrix& weff,
                        const std::vector<double>& b) {
    DenseMatrix z = matmul_transB(a, weff);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(z.rows()); ++r) {
        double* zrow = z.row_ptr(r);
        for (std::size_t c = 0; c < z.cols(); ++c) zrow[c] += b[c];
    }
    return z;
}

} // namespace

KernelNet KernelNet::make(std::size_t n_users, std::size_t hidden, std::size_t num_hidden,
                          std::size_t d, bool kernelize_all) {
    std::vector<std::size_t> widths;
    widths.push_back(n_users);
    for (std::size_t l = 0; l < num_hidden; ++l) widths.push_back(hidden);
    widths.push_back(n_users);

    KernelNet net;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        LocalKernelLayer layer;
        const std::size_t in = widths[l], out = widths[l + 1];
        layer.W = DenseMatrix(out, in);
        // kernelize_all=false keeps the kernel trick on the encoder and
        // decoder only, leaving interior layers plain.
        layer.kernelized = kernelize_all || l == 0 || l + 2 == widths.size();
        if (layer.kernelized) {
            layer.U = DenseMatrix(in, d);
            layer.V = DenseMatrix(out, d);
        }
        layer.b.assign(out, 0.0);
        layer.act = (l + 2 == widths.size()) ? Activation::Identity : Activation::Sigmoid;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

DenseMatrix rbf_kernel_matrix(const DenseMatrix& U, const DenseMatrix& V) {
    if (U.cols() != V.cols())
        throw ShapeError("rbf_kernel_matrix: position dimensions " + std::to_string(U.cols()) +
                         " vs " + std::to_string(V.cols()));
    const std::size_t in = U.rows(), out = V.rows(), d = U.cols();
    DenseMatrix k(out, in);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t o = 0; o < static_cast<std::ptrdiff_t>(out); ++o) {
        const double* vrow = V.row_ptr(o);
        double* krow = k.row_ptr(o);
        for (std::size_t i = 0; i < in; ++i) {
            const double* urow = U.row_ptr(i);
            double dist2 = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = urow[c] - vrow[c];
                dist2 += diff * diff;
            }
            krow[i] = std::max(0.0, 1.0 - dist2);
        }
    }
    return k;
}

DenseMatrix effective_weights(const LocalKernelLayer& layer) {
    if (!layer.kernelized) return layer.W;
    DenseMatrix k = rbf_kernel_matrix(layer.U, layer.V);
    if (!k.same_shape(layer.W)) throw ShapeError("effective_weights: kernel/weight shape mismatch");
    DenseMatrix w = layer.W;
    auto wv = w.values();
    auto kv = k.values();
    for (std::size_t i = 0; i < wv.size(); ++i) wv[i] *= kv[i];
    return w;
}

DenseMatrix layer_forward(const LocalKernelLayer& layer, const DenseMatrix& x_cols) {
    if (x_cols.rows() != layer.in())
        throw ShapeError("layer_forward: input dim " + std::to_string(x_cols.rows()) +
                         ", layer expects " + std::to_string(layer.in()));
    DenseMatrix z = matmul(effective_weights(layer), x_cols);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        double* zrow = z.row_ptr(r);
        for (std::size_t c = 0; c < z.cols(); ++c) zrow[c] += layer.b[r];
    }
    apply_activation(z, layer.act);
    return z;
}

DenseMatrix net_forward(const KernelNet& net, const DenseMatrix& r_in) {
    return ae_forward(net, r_in).acts.back();
}

AeCache ae_forward(const KernelNet& net, const DenseMatrix& input) {
    if (input.cols() != net.input_dim())
        throw ShapeError("net_forward: input has " + std::to_string(input.cols()) +
                         " columns, net expects " + std::to_string(net.input_dim()));
    AeCache cache;
    cache.acts.reserve(net.layers.size() + 1);
    cache.acts.push_back(input);
    for (const auto& layer : net.layers) {
        cache.weff.push_back(effective_weights(layer));
        cache.kmat.push_back(layer.kernelized ? rbf_kernel_matrix(layer.U, layer.V)
                                              : DenseMatrix());
        DenseMatrix z = affine_rows(cache.acts.back(), cache.weff.back(), layer.b);
        apply_activation(z, layer.act);
        cache.acts.push_back(std::move(z));
    }
    return cache;
}

double masked_data_loss(const DenseMatrix& recon, const DenseMatrix& target,
                        const DenseMatrix& mask) {
    if (!recon.same_shape(target) || !recon.same_shape(mask))
        throw ShapeError("masked_data_loss: shape mismatch");
    std::vector<double> row_sums(recon.rows(), 0.0);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(recon.rows()); ++r) {
        const double* prow = recon.row_ptr(r);
        const double* trow = target.row_ptr(r);
        const double* mrow = mask.row_ptr(r);
        double s = 0.0;
        for (std::size_t c = 0; c < recon.cols(); ++c) {
            const double diff = (trow[c] - prow[c]) * mrow[c];
            s += diff * diff;
        }
        row_sums[r] = s;
    }
    double total = 0.0;
    for (double s : row_sums) total += s;
    return total;
}

double masked_loss(const DenseMatrix& recon, const DenseMatrix& target, const DenseMatrix& mask,
                   const KernelNet& net, double lambda2, double lambda_s, bool reg_kernel_on_uv) {
    if (lambda2 < 0.0 || lambda_s < 0.0)
        throw ConfigError("masked_loss: penalty parameters must be nonnegative");
    double loss = masked_data_loss(recon, target, mask);
    for (const auto& layer : net.layers) {
        loss += lambda2 * frobenius_sq(layer.W);
        if (!layer.kernelized) continue;
        if (reg_kernel_on_uv)
            loss += lambda_s * (frobenius_sq(layer.U) + frobenius_sq(layer.V));
        else
            loss += lambda_s * frobenius_sq(rbf_kernel_matrix(layer.U, layer.V));
    }
    return loss;
}

double ae_backward(const KernelNet& net, const AeCache& cache, const DenseMatrix& gout,
                   const RegConfig& reg, KernelNet& gnet, DenseMatrix* ginput) {
    const std::size_t num_layers = net.layers.size();
    double reg_loss = 0.0;
    DenseMatrix ga = gout; // dL/dA_l, walking backwards
    for (std::size_t li = num_layers; li-- > 0;) {
        const auto& layer = net.layers[li];
        auto& glayer = gnet.layers[li];
        const DenseMatrix& act_out = cache.acts[li + 1];
        const DenseMatrix& act_in = cache.acts[li];

        // dL/dZ from dL/dA through the activation.
        if (layer.act == Activation::Sigmoid) {
            auto gv = ga.values();
            auto av = act_out.values();
#pragma omp parallel for schedule(static)
            for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(gv.size()); ++i)
                gv[i] *= av[i] * (1.0 - av[i]);
        }

        DenseMatrix gweff = matmul_transA(ga, act_in); // out x in

        // Bias gradient: column sums of dL/dZ, rows accumulated in order.
        glayer.b.assign(layer.out(), 0.0);
        for (std::size_t r = 0; r < ga.rows(); ++r) {
            const double* grow = ga.row_ptr(r);
            for (std::size_t c = 0; c < ga.cols(); ++c) glayer.b[c] += grow[c];
        }

        const bool need_input_grad = li > 0 || ginput != nullptr;
        DenseMatrix ga_prev;
        if (need_input_grad) ga_prev = matmul(ga, cache.weff[li]); // m x in

        // Split the effective-weight gradient into the free-weight and
        // kernel paths, then push the kernel path onto U and V. Entries with
        // kernel exactly 0 (hinge inactive or at the kink) pass nothing.
        reg_loss += reg.lambda2 * frobenius_sq(layer.W);
        if (layer.kernelized) {
            const DenseMatrix& kmat = cache.kmat[li];
            DenseMatrix gkmat(kmat.rows(), kmat.cols());
            auto gw = glayer.W.values();
            auto ge = gweff.values();
            auto wv = layer.W.values();
            auto kv = kmat.values();
            auto gk = gkmat.values();
            for (std::size_t i = 0; i < ge.size(); ++i) {
                gw[i] = ge[i] * kv[i] + 2.0 * reg.lambda2 * wv[i];
                gk[i] = ge[i] * wv[i];
            }
            if (reg.reg_kernel_on_uv) {
                reg_loss += reg.lambda_s * (frobenius_sq(layer.U) + frobenius_sq(layer.V));
            } else {
                reg_loss += reg.lambda_s * frobenius_sq(kmat);
                for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += 2.0 * reg.lambda_s * kv[i];
            }

            const std::size_t in = layer.in(), out = layer.out(), d = layer.d();
            glayer.U.fill(0.0);
            glayer.V.fill(0.0);
#pragma omp parallel for schedule(static)
            for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(in); ++i) {
                const double* urow = layer.U.row_ptr(i);
                double* gurow = glayer.U.row_ptr(i);
                for (std::size_t o = 0; o < out; ++o) {
                    if (kmat(o, i) <= 0.0) continue;
                    const double g = gkmat(o, i);
                    const double* vrow = layer.V.row_ptr(o);
                    for (std::size_t c = 0; c < d; ++c)
                        gurow[c] -= 2.0 * g * (urow[c] - vrow[c]);
                }
            }
#pragma omp parallel for schedule(static)
            for (std::ptrdiff_t o = 0; o < static_cast<std::ptrdiff_t>(out); ++o) {
                const double* vrow = layer.V.row_ptr(o);
                double* gvrow = glayer.V.row_ptr(o);
                const double* krow = cache.kmat[li].row_ptr(o);
                const double* gkrow = gkmat.row_ptr(o);
                for (std::size_t i = 0; i < in; ++i) {
                    if (krow[i] <= 0.0) continue;
                    const double g = gkrow[i];
                    const double* urow = layer.U.row_ptr(i);
                    for (std::size_t c = 0; c < d; ++c)
                        gvrow[c] += 2.0 * g * (urow[c] - vrow[c]);
                }
            }
            if (reg.reg_kernel_on_uv) {
                auto gu = glayer.U.values();
                auto uu = layer.U.values();
                for (std::size_t i = 0; i < gu.size(); ++i) gu[i] += 2.0 * reg.lambda_s * uu[i];
                auto gv2 = glayer.V.values();
                auto vv = layer.V.values();
                for (std::size_t i = 0; i < gv2.size(); ++i) gv2[i] += 2.0 * reg.lambda_s * vv[i];
            }
        } else {
            auto gw = glayer.W.values();
            auto ge = gweff.values();
            auto wv = layer.W.values();
            for (std::size_t i = 0; i < ge.size(); ++i)
                gw[i] = ge[i] + 2.0 * reg.lambda2 * wv[i];
        }

        if (li == 0) {
            if (ginput != nullptr) *ginput = std::move(ga_prev);
        } else {
            ga = std::move(ga_prev);
        }
    }
    return reg_loss;
}

// --- flat parameter plumbing ---------------------------------------------

ParamLayout ParamLayout::of(const KernelNet& net) {
    ParamLayout layout;
    std::size_t offset = 0;
    for (std::uint32_t li = 0; li < net.layers.size(); ++li) {
        const auto& layer = net.layers[li];
        auto add = [&](const char* name, std::size_t rows, std::size_t cols) {
            layout.segments.push_back({li, name, offset, rows, cols});
            offset += rows * cols;
        };
        add("W", layer.out(), layer.in());
        if (layer.kernelized) {
            add("U", layer.in(), layer.d());
            add("V", layer.out(), layer.d());
        }
        add("b", layer.out(), 1);
    }
    layout.total = offset;
    return layout;
}

std::vector<double> flatten(const KernelNet& net) {
    std::vector<double> x;
    for (const auto& layer : net.layers) {
        x.insert(x.end(), layer.W.values().begin(), layer.W.values().end());
        if (layer.kernelized) {
            x.insert(x.end(), layer.U.values().begin(), layer.U.values().end());
            x.insert(x.end(), layer.V.values().begin(), layer.V.values().end());
        }
        x.insert(x.end(), layer.b.begin(), layer.b.end());
    }
    return x;
}

void unflatten(std::span<const double> x, KernelNet& net) {
    std::size_t pos = 0;
    auto take = [&](double* dst, std::size_t count) {
        if (pos + count > x.size()) throw ShapeError("unflatten: parameter vector too short");
        std::copy(x.begin() + pos, x.begin() + pos + count, dst);
        pos += count;
    };
    for (auto& layer : net.layers) {
        take(layer.W.values().data(), layer.W.size());
        if (layer.kernelized) {
            take(layer.U.values().data(), layer.U.size());
            take(layer.V.values().data(), layer.V.size());
        }
        take(layer.b.data(), layer.b.size());
    }
    if (pos != x.size()) throw ShapeError("unflatten: parameter vector too long");
}

void init_params(KernelNet& net, SeededRng& rng) {
    for (auto& layer : net.layers) {
        const double a = std::sqrt(6.0 / static_cast<double>(layer.in() + layer.out()));
        for (double& w : layer.W.values()) w = rng.uniform(-a, a);
        if (layer.kernelized) {
            const double sd = 1.0 / std::sqrt(static_cast<double>(layer.d()));
            for (double& u : layer.U.values()) u = rng.normal(0.0, sd);
            for (double& v : layer.V.values()) v = rng.normal(0.0, sd);
        }
        layer.b.assign(layer.b.size(), 0.0);
    }
}

// --- pre-training objective ------------------------------------------------

KernelNetObjective::KernelNetObjective(const RatingMatrix& data, KernelNet net, RegConfig reg)
    : data_(&data), net_(std::move(net)), reg_(reg) {
    if (data_->dense.cols() != net_.input_dim())
        throw ShapeError("KernelNetObjective: matrix has " + std::to_string(data_->dense.cols()) +
                         " users, net expects " + std::to_string(net_.input_dim()));
    layout_ = ParamLayout::of(net_);
}

double KernelNetObjective::eval(std::span<const double> x, std::vector<double>& grad) {
    unflatten(x, net_);
    AeCache cache = ae_forward(net_, data_->dense);
    const DenseMatrix& recon = cache.acts.back();

    const double data_loss = masked_data_loss(recon, data_->dense, data_->mask);

    DenseMatrix gout(recon.rows(), recon.cols());
    auto gv = gout.values();
    auto pv = recon.values();
    auto tv = data_->dense.values();
    auto mv = data_->mask.values();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(gv.size()); ++i)
        gv[i] = 2.0 * (pv[i] - tv[i]) * mv[i];

    KernelNet gnet = net_; // same shapes; entries overwritten below
    const double reg_loss = ae_backward(net_, cache, gout, reg_, gnet, nullptr);
    grad = flatten(gnet);

    const double loss = data_loss + reg_loss;
    if (!std::isfinite(loss)) {
        double wmax = 0.0;
        for (const auto& layer : net_.layers)
            for (double w : layer.W.values()) wmax = std::max(wmax, std::abs(w));
        throw NumericError("loss is not finite (max |W| = " + std::to_string(wmax) + ")");
    }
    return loss;
}

DenseMatrix KernelNetObjective::reconstruct(std::span<const double> x) {
    unflatten(x, net_);
    return net_forward(net_, data_->dense);
}

} // namespace glocalk
