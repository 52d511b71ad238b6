#include "glocalk/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "glocalk/gradcheck.hpp"

namespace glocalk {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

LbfgsConfig lbfgs_defaults(std::size_t maxiter) {
    LbfgsConfig c;
    c.maxiter = maxiter;
    return c;
}

void append_trace(std::ofstream& os, const char* stage, std::uint64_t seed,
                  const std::vector<TraceEntry>& trace) {
    for (const auto& te : trace) {
        json j;
        j["stage"] = stage;
        j["seed"] = seed;
        j["epoch"] = te.epoch;
        j["iter"] = te.iter;
        j["loss"] = te.loss;
        j["grad_norm"] = te.grad_norm;
        j["step"] = te.step;
        j["wall_ms"] = te.wall_ms;
        os << j.dump() << "\n";
    }
}

void write_id_map(const IdIndex& idx, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open " + path + " for writing");
    os << "raw_id,dense_id\n";
    for (std::size_t k = 0; k < idx.to_raw.size(); ++k) os << idx.to_raw[k] << "," << k << "\n";
}

} // namespace

LoadedData load_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
    LoadedData out;
    if (cfg.dataset == "ml100k") {
        const fs::path dir = cfg.data_path;
        if (cfg.split == "canonical") {
            out.train = parse_movielens_100k((dir / "u1.base").string());
            out.test = parse_movielens_100k((dir / "u1.test").string());
        } else {
            RatingDataset full = parse_movielens_100k((dir / "u.data").string());
            SeededRng rng(SeededRng::derive(seed, rng_stream::split));
            auto [tr, te] = random_split(full, cfg.test_fraction, rng);
            out.train = std::move(tr);
            out.test = std::move(te);
        }
    } else if (cfg.dataset == "ml1m") {
        if (cfg.split != "random")
            throw ConfigError("load_dataset: ml1m has no canonical split; set split = random");
        RatingDataset full = parse_movielens_1m(cfg.data_path);
        SeededRng rng(SeededRng::derive(seed, rng_stream::split));
        auto [tr, te] = random_split(full, cfg.test_fraction, rng);
        out.train = std::move(tr);
        out.test = std::move(te);
    } else if (cfg.dataset == "triplets") {
        out.train = parse_triplet_csv(cfg.data_path);
        if (cfg.split == "canonical") {
            if (cfg.test_path.empty())
                throw ConfigError("load_dataset: triplets with canonical split need test_path");
            out.test = parse_triplet_csv(cfg.test_path);
        } else {
            SeededRng rng(SeededRng::derive(seed, rng_stream::split));
            auto [tr, te] = random_split(out.train, cfg.test_fraction, rng);
            out.train = std::move(tr);
            out.test = std::move(te);
        }
    } else {
        throw ConfigError("load_dataset: unknown dataset '" + cfg.dataset + "'");
    }

    unify_indices(out.train, out.test);
    out.items = out.train.item_index.size();
    out.users = out.train.user_index.size();

    RatingDataset all;
    all.name = cfg.dataset;
    all.triplets = out.train.triplets;
    all.triplets.insert(all.triplets.end(), out.test.triplets.begin(), out.test.triplets.end());
    all.user_index = out.train.user_index;
    all.item_index = out.train.item_index;
    out.stats = dataset_stats(all);

    if (cfg.train_ratio < 1.0) {
        SeededRng rng(SeededRng::derive(seed, rng_stream::subsample));
        out.train = subsample_train(out.train, cfg.train_ratio, rng);
    }
    return out;
}

PretrainResult pretrain(const ExperimentConfig& cfg, const RatingMatrix& train,
                        SeededRng& init_rng) {
    const auto t0 = std::chrono::steady_clock::now();
    PretrainResult res;
    res.net = KernelNet::make(train.users, cfg.h, cfg.num_hidden, cfg.d, cfg.kernelize_all);
    init_params(res.net, init_rng);

    const RegConfig reg{cfg.lambda2, cfg.lambda_s, cfg.reg_kernel_on_uv};
    KernelNetObjective obj(train, res.net, reg);
    Objective f = [&obj](std::span<const double> x, std::vector<double>& g) {
        return obj.eval(x, g);
    };
    res.opt = run_epochs(f, flatten(res.net), cfg.pretrain_epochs, cfg.maxiter_p,
                         lbfgs_defaults(cfg.maxiter_p), cfg.carry_memory);
    res.x = res.opt.x;
    unflatten(res.x, res.net);
    res.seconds = seconds_since(t0);
    return res;
}

FinetuneResult finetune(const ExperimentConfig& cfg, const PretrainResult& pre,
                        const RatingMatrix& train, SeededRng& bank_rng) {
    const auto t0 = std::chrono::steady_clock::now();
    FinetuneResult res;
    res.net = pre.net;
    res.mu = item_avg_pool(net_forward(pre.net, train.dense), cfg.rating_min, cfg.rating_max);
    for (std::size_t l = 0; l < cfg.conv_layers; ++l)
        res.banks.push_back(init_kernel_bank(train.items, cfg.t, bank_rng));

    const RegConfig reg{cfg.lambda2, cfg.lambda_s, cfg.reg_kernel_on_uv};
    FinetuneObjective obj(train, pre.net, res.mu, cfg.t, cfg.conv_layers, cfg.aggregation(), reg);
    Objective f = [&obj](std::span<const double> x, std::vector<double>& g) {
        return obj.eval(x, g);
    };

    EpochCallback cb;
    if (cfg.refresh_mu) {
        KernelNet scratch = pre.net;
        cb = [&obj, &train, &cfg, scratch](std::size_t, std::span<const double> x, double,
                                           double) mutable {
            unflatten(x.subspan(0, obj.ae_dim()), scratch);
            obj.set_mu(item_avg_pool(net_forward(scratch, train.dense), cfg.rating_min,
                                     cfg.rating_max));
        };
    }

    res.opt = run_epochs(f, obj.pack(pre.net, res.banks), cfg.finetune_epochs, cfg.maxiter_f,
                         lbfgs_defaults(cfg.maxiter_f), cfg.carry_memory, cb);
    res.x = res.opt.x;
    unflatten(std::span<const double>(res.x).subspan(0, obj.ae_dim()), res.net);
    res.banks = obj.unpack_banks(res.x);
    res.mu = obj.mu();
    res.seconds = seconds_since(t0);
    return res;
}

DenseMatrix predict_matrix(const ExperimentConfig& cfg, const KernelNet& net,
                           const std::vector<GlobalKernelBank>& banks, const PooledSummary& mu,
                           const RatingMatrix& train) {
    DenseMatrix r_hat = train.dense;
    for (const auto& bank : banks)
        r_hat = conv2d_same(r_hat, aggregate_kernel(mu, bank, cfg.aggregation()));
    return net_forward(net, r_hat);
}

double evaluate_rmse(const DenseMatrix& predictions, const RatingDataset& test, double lo,
                     double hi) {
    if (test.triplets.empty()) throw ValidationError("evaluate_rmse: empty test set");
    double se = 0.0;
    for (const auto& t : test.triplets) {
        const std::uint32_t i = test.item_index.dense(t.item);
        const std::uint32_t u = test.user_index.dense(t.user);
        if (i >= predictions.rows() || u >= predictions.cols())
            throw ValidationError("evaluate_rmse: test triplet outside prediction matrix");
        const double p = std::min(hi, std::max(lo, predictions(i, u)));
        const double diff = p - t.rating;
        se += diff * diff;
    }
    return std::sqrt(se / static_cast<double>(test.triplets.size()));
}

SeedRun run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    SeedRun sr;
    sr.seed = seed;
    LoadedData data = load_dataset(cfg, seed);
    const RatingMatrix train = build_matrix(data.train, data.items, data.users);

    SeededRng init_rng(SeededRng::derive(seed, rng_stream::init));
    PretrainResult pre = pretrain(cfg, train, init_rng);
    sr.pretrain_loss = pre.opt.loss;
    sr.pretrain_seconds = pre.seconds;
    sr.pretrain_trace = pre.opt.trace;

    SeededRng bank_rng(SeededRng::derive(seed, rng_stream::bank));
    FinetuneResult fin = finetune(cfg, pre, train, bank_rng);
    sr.finetune_loss = fin.opt.loss;
    sr.finetune_seconds = fin.seconds;
    sr.finetune_trace = fin.opt.trace;

    sr.rmse = evaluate_rmse(predict_matrix(cfg, fin.net, fin.banks, fin.mu, train), data.test,
                            cfg.rating_min, cfg.rating_max);
    return sr;
}

EvalReport run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    EvalReport rep;
    rep.config_hash = cfg.hash();

    std::ofstream report_os, trace_os;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        report_os.open(fs::path(out_dir) / "report.jsonl", std::ios::trunc);
        trace_os.open(fs::path(out_dir) / "trace.jsonl", std::ios::trunc);
        std::ofstream cfg_os(fs::path(out_dir) / "config.txt", std::ios::trunc);
        cfg_os << cfg.serialize();
    }

    bool wrote_maps = false;
    for (std::uint64_t seed : cfg.seeds) {
        try {
            LoadedData data = load_dataset(cfg, seed);
            if (rep.runs.empty()) rep.stats = data.stats;
            if (!out_dir.empty() && !wrote_maps) {
                write_id_map(data.train.item_index, (fs::path(out_dir) / "items.csv").string());
                write_id_map(data.train.user_index, (fs::path(out_dir) / "users.csv").string());
                wrote_maps = true;
            }
            const RatingMatrix train = build_matrix(data.train, data.items, data.users);

            SeededRng init_rng(SeededRng::derive(seed, rng_stream::init));
            PretrainResult pre = pretrain(cfg, train, init_rng);
            SeededRng bank_rng(SeededRng::derive(seed, rng_stream::bank));
            FinetuneResult fin = finetune(cfg, pre, train, bank_rng);

            SeedRun sr;
            sr.seed = seed;
            sr.pretrain_loss = pre.opt.loss;
            sr.pretrain_seconds = pre.seconds;
            sr.pretrain_trace = pre.opt.trace;
            sr.finetune_loss = fin.opt.loss;
            sr.finetune_seconds = fin.seconds;
            sr.finetune_trace = fin.opt.trace;
            sr.rmse = evaluate_rmse(predict_matrix(cfg, fin.net, fin.banks, fin.mu, train),
                                    data.test, cfg.rating_min, cfg.rating_max);

            if (!out_dir.empty()) {
                const std::string tag = "seed" + std::to_string(seed);
                save_checkpoint((fs::path(out_dir) / ("pretrain_" + tag + ".ckpt")).string(),
                                checkpoint_from_net(pre.net, rep.config_hash));
                save_checkpoint((fs::path(out_dir) / ("finetune_" + tag + ".ckpt")).string(),
                                checkpoint_from_finetune(fin.net, fin.banks, fin.mu,
                                                         rep.config_hash));
                append_trace(trace_os, "pretrain", seed, sr.pretrain_trace);
                append_trace(trace_os, "finetune", seed, sr.finetune_trace);
                json j;
                j["dataset"] = cfg.dataset;
                j["seed"] = seed;
                j["rmse"] = sr.rmse;
                j["pretrain_loss"] = sr.pretrain_loss;
                j["finetune_loss"] = sr.finetune_loss;
                j["pretrain_seconds"] = sr.pretrain_seconds;
                j["finetune_seconds"] = sr.finetune_seconds;
                j["config_hash"] = hex64(rep.config_hash);
                report_os << j.dump() << "\n";
            }
            rep.runs.push_back(std::move(sr));
        } catch (const std::exception& e) {
            rep.partial = true;
            rep.error = "seed " + std::to_string(seed) + ": " + e.what();
            break;
        }
    }

    for (const auto& r : rep.runs) rep.per_seed_rmse.push_back(r.rmse);
    if (!rep.per_seed_rmse.empty()) {
        double s = 0.0;
        for (double v : rep.per_seed_rmse) s += v;
        rep.mean_rmse = s / static_cast<double>(rep.per_seed_rmse.size());
    }

    if (!out_dir.empty()) {
        json j;
        j["mean_rmse"] = rep.mean_rmse;
        j["per_seed_rmse"] = rep.per_seed_rmse;
        j["config_hash"] = hex64(rep.config_hash);
        j["partial"] = rep.partial;
        if (rep.partial) j["error"] = rep.error;
        j["users"] = rep.stats.users;
        j["items"] = rep.stats.items;
        j["ratings"] = rep.stats.ratings;
        j["density"] = rep.stats.density;
        report_os << j.dump() << "\n";
    }
    return rep;
}

namespace {

void write_sweep_summary(const std::vector<SweepRow>& rows, const std::string& key,
                         const std::string& out_dir) {
    if (out_dir.empty()) return;
    fs::create_directories(out_dir);
    std::ofstream os(fs::path(out_dir) / "summary.csv", std::ios::trunc);
    os << key << ",mean_rmse,per_seed_rmse\n";
    for (const auto& row : rows) {
        os << row.label << "," << row.report.mean_rmse << ",\"";
        for (std::size_t i = 0; i < row.report.per_seed_rmse.size(); ++i)
            os << (i ? ";" : "") << row.report.per_seed_rmse[i];
        os << "\"\n";
    }
}

} // namespace

std::vector<SweepRow> sweep_pretrain_epochs(const ExperimentConfig& cfg,
                                            const std::vector<std::size_t>& epoch_counts,
                                            const std::string& out_dir) {
    std::vector<SweepRow> rows;
    for (std::size_t e : epoch_counts) {
        ExperimentConfig c = cfg;
        c.pretrain_epochs = e;
        SweepRow row;
        row.label = "pretrain_epochs=" + std::to_string(e);
        row.value = static_cast<double>(e);
        row.report = run_experiment(c);
        rows.push_back(std::move(row));
    }
    write_sweep_summary(rows, "pretrain_epochs", out_dir);
    return rows;
}

std::vector<SweepRow> sweep_train_ratio(const ExperimentConfig& cfg,
                                        const std::vector<double>& ratios,
                                        const std::string& out_dir) {
    std::vector<SweepRow> rows;
    for (double r : ratios) {
        ExperimentConfig c = cfg;
        c.train_ratio = r;
        SweepRow row;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", r);
        row.label = std::string("train_ratio=") + buf;
        row.value = r;
        row.report = run_experiment(c);
        rows.push_back(std::move(row));
    }
    write_sweep_summary(rows, "train_ratio", out_dir);
    return rows;
}

std::vector<SweepRow> sweep_global_kernel(const ExperimentConfig& cfg,
                                          const std::string& out_dir) {
    // One factor at a time around (t, conv_layers, agg_mode); the base cell
    // runs once.
    struct Cell {
        std::size_t t, layers;
        const char* agg;
    };
    const Cell cells[] = {
        {3, 1, "weighted"}, {5, 1, "weighted"}, {7, 1, "weighted"},
        {3, 2, "weighted"}, {3, 3, "weighted"}, {3, 1, "avg"},
    };
    std::vector<SweepRow> rows;
    for (const Cell& cell : cells) {
        ExperimentConfig c = cfg;
        c.t = cell.t;
        c.conv_layers = cell.layers;
        c.agg_mode = cell.agg;
        SweepRow row;
        row.label = "t=" + std::to_string(cell.t) + ",conv_layers=" +
                    std::to_string(cell.layers) + ",agg=" + cell.agg;
        row.value = static_cast<double>(cell.t);
        row.report = run_experiment(c);
        rows.push_back(std::move(row));
    }
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream os(fs::path(out_dir) / "summary.csv", std::ios::trunc);
        os << "t,conv_layers,agg_mode,mean_rmse\n";
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const Cell& cell = cells[i];
            os << cell.t << "," << cell.layers << "," << cell.agg << ","
               << rows[i].report.mean_rmse << "\n";
        }
    }
    return rows;
}

namespace {

// Random instance small enough for the finite-difference oracle, re-drawn if
// any kernel entry sits within 1e-6 of the hinge kink.
struct SmallInstance {
    RatingMatrix data;
    KernelNet net;
    RegConfig reg;
};

bool near_kink(const KernelNet& net) {
    for (const auto& l : net.layers) {
        if (!l.kernelized) continue;
        for (std::size_t i = 0; i < l.U.rows(); ++i)
            for (std::size_t o = 0; o < l.V.rows(); ++o) {
                double dist2 = 0.0;
                for (std::size_t c = 0; c < l.U.cols(); ++c) {
                    const double diff = l.U(i, c) - l.V(o, c);
                    dist2 += diff * diff;
                }
                if (std::abs(1.0 - dist2) < 1e-6) return true;
            }
    }
    return false;
}

SmallInstance draw_instance(SeededRng& rng, bool kernelize_all, bool reg_on_uv) {
    SmallInstance inst;
    const std::size_t m = 4 + rng.next_below(3);
    const std::size_t n = 3 + rng.next_below(3);
    const std::size_t h = 2 + rng.next_below(2);
    const std::size_t d = 1 + rng.next_below(2);
    const std::size_t num_hidden = 1 + rng.next_below(2);

    inst.data.items = m;
    inst.data.users = n;
    inst.data.dense = DenseMatrix(m, n);
    inst.data.mask = DenseMatrix(m, n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t u = 0; u < n; ++u)
            if (rng.uniform01() < 0.6) {
                inst.data.dense(i, u) = rng.uniform(1.0, 5.0);
                inst.data.mask(i, u) = 1.0;
            }
    // A fully unobserved matrix makes a degenerate loss; pin one entry.
    inst.data.dense(0, 0) = 3.0;
    inst.data.mask(0, 0) = 1.0;

    for (int attempt = 0;; ++attempt) {
        inst.net = KernelNet::make(n, h, num_hidden, d, kernelize_all);
        init_params(inst.net, rng);
        if (!near_kink(inst.net)) break;
        if (attempt > 100) throw NumericError("gradcheck: cannot avoid hinge kink");
    }
    inst.reg = RegConfig{0.3, 0.1, reg_on_uv};
    return inst;
}

void fold_block_errors(const ParamLayout& layout, std::span<const double> analytic,
                       const std::vector<double>& numeric, GradcheckReport& rep,
                       std::size_t bank_dim, std::size_t conv_layers, std::size_t t) {
    auto update = [&](const std::string& name, std::size_t offset, std::size_t count) {
        double worst = -1.0;
        std::size_t worst_i = 0;
        for (std::size_t i = offset; i < offset + count; ++i) {
            const double e = grad_rel_error(analytic[i], numeric[i]);
            if (e > worst) {
                worst = e;
                worst_i = i;
            }
        }
        if (worst < 0.0) return;
        auto it = std::find_if(rep.blocks.begin(), rep.blocks.end(),
                               [&](const GradcheckBlock& b) { return b.name == name; });
        if (it == rep.blocks.end()) {
            rep.blocks.push_back({name, -1.0, 0, 0.0, 0.0});
            it = rep.blocks.end() - 1;
        }
        if (worst > it->max_rel_error) {
            it->max_rel_error = worst;
            it->worst_index = worst_i;
            it->analytic = analytic[worst_i];
            it->numeric = numeric[worst_i];
        }
        rep.max_rel_error = std::max(rep.max_rel_error, worst);
    };

    for (const auto& seg : layout.segments)
        update("L" + std::to_string(seg.layer) + "." + seg.name, seg.offset, seg.count());
    for (std::size_t l = 0; l < conv_layers; ++l)
        update("bank" + std::to_string(l) + "(t=" + std::to_string(t) + ")",
               layout.total + l * bank_dim, bank_dim);
}

} // namespace

GradcheckReport gradcheck(std::size_t draws, std::uint64_t seed, double eps, double tol) {
    GradcheckReport rep;
    rep.tol = tol;
    rep.draws = draws;
    SeededRng rng(seed);

    for (std::size_t k = 0; k < draws; ++k) {
        const bool finetune_draw = k % 2 == 1;
        const bool kernelize_all = k % 4 < 2;
        const bool reg_on_uv = k % 8 >= 6;
        SmallInstance inst = draw_instance(rng, kernelize_all, reg_on_uv);
        const ParamLayout layout = ParamLayout::of(inst.net);

        if (!finetune_draw) {
            KernelNetObjective obj(inst.data, inst.net, inst.reg);
            const std::vector<double> x = flatten(inst.net);
            std::vector<double> g;
            obj.eval(x, g);
            std::vector<double> scratch;
            const auto fd = finite_diff_gradient(
                [&](const std::vector<double>& p) { return obj.eval(p, scratch); }, x, eps);
            fold_block_errors(layout, g, fd, rep, 0, 0, 0);
        } else {
            const std::size_t t = k % 4 == 1 ? 3 : 1;
            const std::size_t conv_layers = 1 + (k / 2) % 2;
            const AggregationMode agg =
                k % 4 == 1 ? AggregationMode::Weighted : AggregationMode::ElementwiseAvg;
            PooledSummary mu = item_avg_pool(net_forward(inst.net, inst.data.dense));
            FinetuneObjective obj(inst.data, inst.net, mu, t, conv_layers, agg, inst.reg);
            std::vector<GlobalKernelBank> banks;
            for (std::size_t l = 0; l < conv_layers; ++l)
                banks.push_back(init_kernel_bank(inst.data.items, t, rng));
            const std::vector<double> x = obj.pack(inst.net, banks);
            std::vector<double> g;
            obj.eval(x, g);
            std::vector<double> scratch;
            const auto fd = finite_diff_gradient(
                [&](const std::vector<double>& p) { return obj.eval(p, scratch); }, x, eps);
            fold_block_errors(layout, g, fd, rep, obj.bank_dim(), conv_layers, t);
        }
    }
    rep.pass = rep.max_rel_error <= tol;
    return rep;
}

std::string format_gradcheck(const GradcheckReport& rep) {
    std::ostringstream os;
    os << (rep.pass ? "PASS" : "FAIL") << ": max relative error " << rep.max_rel_error
       << " over " << rep.draws << " draws (tol " << rep.tol << ")\n";
    for (const auto& b : rep.blocks) {
        os << "  " << b.name << ": max rel err " << b.max_rel_error;
        if (b.max_rel_error > rep.tol)
            os << "  WORST coord " << b.worst_index << " analytic " << b.analytic << " vs fd "
               << b.numeric;
        os << "\n";
    }
    return os.str();
}

} // namespace glocalk
