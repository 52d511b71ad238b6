#include "glocalk/globalkernel.hpp"

#include <cmath>

namespace glocalk {

GlobalKernelBank init_kernel_bank(std::size_t m, std::size_t t, SeededRng& rng) {
    if (t % 2 == 0) throw ConfigError("init_kernel_bank: kernel size must be odd");
    GlobalKernelBank bank;
    bank.t = t;
    bank.k_bank = DenseMatrix(m, t * t);
    const double sd = 0.1 / static_cast<double>(t * t);
    for (double& v : bank.k_bank.values()) v = rng.normal(0.0, sd);
    return bank;
}

void clip_matrix(DenseMatrix& m, double lo, double hi) {
    for (double& v : m.values()) v = std::min(hi, std::max(lo, v));
}

PooledSummary item_avg_pool(const DenseMatrix& recon, double lo, double hi) {
    if (recon.rows() == 0 || recon.cols() == 0)
        throw ValidationError("item_avg_pool: empty matrix");
    PooledSummary out;
    out.mu.resize(recon.rows());
    for (std::size_t r = 0; r < recon.rows(); ++r) {
        const double* row = recon.row_ptr(r);
        double s = 0.0;
        for (std::size_t c = 0; c < recon.cols(); ++c)
            s += std::min(hi, std::max(lo, row[c]));
        out.mu[r] = s / static_cast<double>(recon.cols());
    }
    return out;
}

DenseMatrix aggregate_kernel(const PooledSummary& mu, const GlobalKernelBank& bank,
                             AggregationMode mode) {
    const std::size_t m = bank.k_bank.rows(), t = bank.t;
    if (mu.mu.size() != m)
        throw ShapeError("aggregate_kernel: " + std::to_string(mu.mu.size()) +
                         " weights for " + std::to_string(m) + " kernel vectors");
    std::vector<double> flat(t * t, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double w = (mode == AggregationMode::Weighted)
                             ? mu.mu[i]
                             : 1.0 / static_cast<double>(m);
        const double* krow = bank.k_bank.row_ptr(i);
        for (std::size_t j = 0; j < flat.size(); ++j) flat[j] += w * krow[j];
    }
    DenseMatrix gk(t, t);
    std::copy(flat.begin(), flat.end(), gk.values().begin());
    return gk;
}

DenseMatrix build_transformed_matrix(const RatingMatrix& r, const DenseMatrix& gk) {
    return conv2d_same(r.dense, gk);
}

DenseMatrix global_kernel_gradient(const DenseMatrix& upstream, const DenseMatrix& conv_input,
                                   const PooledSummary& mu, std::size_t t) {
    if (!upstream.all_finite()) throw NumericError("global_kernel_gradient: non-finite upstream");
    const DenseMatrix dgk = conv2d_grad_kernel(conv_input, upstream, t);
    DenseMatrix dbank(mu.mu.size(), t * t);
    for (std::size_t i = 0; i < mu.mu.size(); ++i) {
        double* row = dbank.row_ptr(i);
        const auto flat = dgk.values();
        for (std::size_t j = 0; j < flat.size(); ++j) row[j] = mu.mu[i] * flat[j];
    }
    return dbank;
}

FinetuneObjective::FinetuneObjective(const RatingMatrix& data, KernelNet net, PooledSummary mu,
                                     std::size_t t, std::size_t conv_layers, AggregationMode agg,
                                     RegConfig reg)
    : data_(&data), net_(std::move(net)), mu_(std::move(mu)), t_(t), conv_layers_(conv_layers),
      agg_(agg), reg_(reg) {
    if (t_ % 2 == 0) throw ConfigError("FinetuneObjective: kernel size must be odd");
    if (conv_layers_ == 0) throw ConfigError("FinetuneObjective: need at least one conv layer");
    if (mu_.mu.size() != data_->items)
        throw ShapeError("FinetuneObjective: mu length != item count");
    ae_dim_ = ParamLayout::of(net_).total;
    bank_dim_ = data_->items * t_ * t_;
}

std::vector<double> FinetuneObjective::pack(const KernelNet& net,
                                            std::span<const GlobalKernelBank> banks) const {
    std::vector<double> x = flatten(net);
    x.reserve(dim());
    for (const auto& bank : banks)
        x.insert(x.end(), bank.k_bank.values().begin(), bank.k_bank.values().end());
    if (x.size() != dim()) throw ShapeError("pack: wrong bank count or shape");
    return x;
}

std::vector<GlobalKernelBank> FinetuneObjective::unpack_banks(std::span<const double> x) const {
    if (x.size() != dim()) throw ShapeError("unpack_banks: wrong parameter vector length");
    std::vector<GlobalKernelBank> banks(conv_layers_);
    std::size_t pos = ae_dim_;
    for (auto& bank : banks) {
        bank.t = t_;
        bank.k_bank = DenseMatrix(data_->items, t_ * t_);
        std::copy(x.begin() + pos, x.begin() + pos + bank_dim_, bank.k_bank.values().begin());
        pos += bank_dim_;
    }
    return banks;
}

DenseMatrix FinetuneObjective::reconstruct(std::span<const double> x) {
    unflatten(x.subspan(0, ae_dim_), net_);
    auto banks = unpack_banks(x);
    DenseMatrix r_hat = data_->dense;
    for (const auto& bank : banks)
        r_hat = conv2d_same(r_hat, aggregate_kernel(mu_, bank, agg_));
    return net_forward(net_, r_hat);
}

double FinetuneObjective::eval(std::span<const double> x, std::vector<double>& grad) {
    unflatten(x.subspan(0, ae_dim_), net_);
    auto banks = unpack_banks(x);

    // Convolution chain, keeping every intermediate as input to the next.
    std::vector<DenseMatrix> gks;
    std::vector<DenseMatrix> chain; // chain[0] = R, chain[l] = conv(chain[l-1], GK_l)
    chain.push_back(data_->dense);
    for (const auto& bank : banks) {
        gks.push_back(aggregate_kernel(mu_, bank, agg_));
        chain.push_back(conv2d_same(chain.back(), gks.back()));
    }

    AeCache cache = ae_forward(net_, chain.back());
    const DenseMatrix& recon = cache.acts.back();
    const double data_loss = masked_data_loss(recon, data_->dense, data_->mask);

    DenseMatrix gout(recon.rows(), recon.cols());
    {
        auto gv = gout.values();
        auto pv = recon.values();
        auto tv = data_->dense.values();
        auto mv = data_->mask.values();
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(gv.size()); ++i)
            gv[i] = 2.0 * (pv[i] - tv[i]) * mv[i];
    }

    KernelNet gnet = net_;
    DenseMatrix g_rhat;
    double reg_loss = ae_backward(net_, cache, gout, reg_, gnet, &g_rhat);

    grad = flatten(gnet);
    grad.resize(dim());

    // Walk the convolution chain backwards, filling bank gradients.
    std::size_t pos = ae_dim_ + bank_dim_ * conv_layers_;
    for (std::size_t l = conv_layers_; l-- > 0;) {
        pos -= bank_dim_;
        const DenseMatrix dgk = conv2d_grad_kernel(chain[l], g_rhat, t_);
        const auto flat = dgk.values();
        const std::size_t m = data_->items;
        for (std::size_t i = 0; i < m; ++i) {
            const double w = (agg_ == AggregationMode::Weighted)
                                 ? mu_.mu[i]
                                 : 1.0 / static_cast<double>(m);
            const double* bank_row = banks[l].k_bank.row_ptr(i);
            double* grow = grad.data() + pos + i * t_ * t_;
            for (std::size_t j = 0; j < flat.size(); ++j)
                grow[j] = w * flat[j] + 2.0 * reg_.lambda2 * bank_row[j];
        }
        reg_loss += reg_.lambda2 * frobenius_sq(banks[l].k_bank);
        if (l > 0) g_rhat = conv2d_grad_input(g_rhat, gks[l]);
    }

    const double loss = data_loss + reg_loss;
    if (!std::isfinite(loss))
        throw NumericError("fine-tuning loss is not finite");
    return loss;
}

} // namespace glocalk
