#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "glocalk/pipeline.hpp"

namespace {

using namespace glocalk;

// One bundle of hyperparameter flags shared by every subcommand. Resolution
// order: per-dataset defaults, then the config file, then explicit flags.
struct CommonOpts {
    CLI::App* cmd = nullptr;

    std::string dataset, data_path, test_path, config_file, split, agg, seed_list, out = "out";
    double lambda2 = 0, lambda_s = 0, train_ratio = 0, test_fraction = 0;
    std::uint64_t h = 0, num_hidden = 0, d = 0, t = 0, conv_layers = 0;
    std::uint64_t maxiter_p = 0, maxiter_f = 0, pretrain_epochs = 0, finetune_epochs = 0;
    bool kernelize_all = true, reg_kernel_on_uv = false, refresh_mu = false,
         carry_memory = false;

    void attach(CLI::App& c) {
        cmd = &c;
        c.add_option("--dataset", dataset, "ml100k|ml1m|triplets");
        c.add_option("--data-path", data_path,
                     "ml100k: directory with u1.base/u1.test; ml1m: ratings.dat; "
                     "triplets: train csv");
        c.add_option("--test-path", test_path, "test csv for --dataset triplets");
        c.add_option("--config", config_file, "key = value config file");
        c.add_option("--split", split, "canonical|random");
        c.add_option("--test-fraction", test_fraction, "random split test fraction");
        c.add_option("--seed-list", seed_list, "comma-separated seeds, default 0,1,2,3,4");
        c.add_option("--out", out, "output directory (reports, checkpoints)");
        c.add_option("--lambda2", lambda2, "weight penalty");
        c.add_option("--lambda-s", lambda_s, "kernel penalty");
        c.add_option("--hidden", h, "hidden width");
        c.add_option("--num-hidden", num_hidden, "hidden layer count");
        c.add_option("--d", d, "kernel position dimension");
        c.add_option("--t", t, "global kernel size (odd)");
        c.add_option("--conv-layers", conv_layers, "global convolution layers");
        c.add_option("--agg", agg, "weighted|avg kernel aggregation");
        c.add_option("--maxiter-p", maxiter_p, "L-BFGS iterations per pre-training epoch");
        c.add_option("--maxiter-f", maxiter_f, "L-BFGS iterations per fine-tuning epoch");
        c.add_option("--pretrain-epochs", pretrain_epochs, "pre-training epochs");
        c.add_option("--finetune-epochs", finetune_epochs, "fine-tuning epochs");
        c.add_option("--train-ratio", train_ratio, "training subsample ratio in (0,1]");
        c.add_flag("--kernelize-all,!--kernelize-ends", kernelize_all,
                   "kernelize every layer vs only encoder/decoder");
        c.add_flag("--reg-kernel-on-uv", reg_kernel_on_uv,
                   "penalize ||U||^2+||V||^2 instead of ||K(U,V)||^2");
        c.add_flag("--refresh-mu", refresh_mu, "recompute pooling weights every epoch");
        c.add_flag("--carry-memory", carry_memory, "keep curvature pairs across epochs");
    }

    bool given(const std::string& name) const { return cmd->count(name) > 0; }

    ExperimentConfig resolve() const {
        std::string ds = "ml100k";
        if (given("--config")) {
            ExperimentConfig probe;
            apply_config_file(config_file, probe);
            ds = probe.dataset;
        }
        if (given("--dataset")) ds = dataset;

        ExperimentConfig cfg = ExperimentConfig::defaults_for(ds);
        if (given("--config")) apply_config_file(config_file, cfg);
        cfg.dataset = ds;

        if (given("--data-path")) cfg.data_path = data_path;
        if (given("--test-path")) cfg.test_path = test_path;
        if (given("--split")) cfg.split = split;
        if (given("--test-fraction")) cfg.test_fraction = test_fraction;
        if (given("--seed-list")) cfg.set_kv("seeds", seed_list);
        if (given("--out")) cfg.out_dir = out;
        if (given("--lambda2")) cfg.lambda2 = lambda2;
        if (given("--lambda-s")) cfg.lambda_s = lambda_s;
        if (given("--hidden")) cfg.h = h;
        if (given("--num-hidden")) cfg.num_hidden = num_hidden;
        if (given("--d")) cfg.d = d;
        if (given("--t")) cfg.t = t;
        if (given("--conv-layers")) cfg.conv_layers = conv_layers;
        if (given("--agg")) cfg.agg_mode = agg;
        if (given("--maxiter-p")) cfg.maxiter_p = maxiter_p;
        if (given("--maxiter-f")) cfg.maxiter_f = maxiter_f;
        if (given("--pretrain-epochs")) cfg.pretrain_epochs = pretrain_epochs;
        if (given("--finetune-epochs")) cfg.finetune_epochs = finetune_epochs;
        if (given("--train-ratio")) cfg.train_ratio = train_ratio;
        if (given("--kernelize-all") || given("--kernelize-ends"))
            cfg.kernelize_all = kernelize_all;
        if (given("--reg-kernel-on-uv")) cfg.reg_kernel_on_uv = reg_kernel_on_uv;
        if (given("--refresh-mu")) cfg.refresh_mu = refresh_mu;
        if (given("--carry-memory")) cfg.carry_memory = carry_memory;
        cfg.validate();
        return cfg;
    }
};

int report_outcome(const EvalReport& rep) {
    for (const auto& r : rep.runs)
        std::printf("seed %llu: rmse %.6f  (pretrain %.1fs, finetune %.1fs)\n",
                    static_cast<unsigned long long>(r.seed), r.rmse, r.pretrain_seconds,
                    r.finetune_seconds);
    std::printf("mean rmse over %zu seed(s): %.6f\n", rep.runs.size(), rep.mean_rmse);
    if (rep.partial) {
        std::fprintf(stderr, "aborted: %s\n", rep.error.c_str());
        return 1;
    }
    return 0;
}

void print_sweep(const std::vector<SweepRow>& rows) {
    for (const auto& row : rows)
        std::printf("%-40s mean rmse %.6f%s\n", row.label.c_str(), row.report.mean_rmse,
                    row.report.partial ? "  (partial)" : "");
}

std::vector<std::size_t> parse_count_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::string part;
    std::stringstream ss(s);
    while (std::getline(ss, part, ',')) out.push_back(std::stoull(part));
    return out;
}

std::vector<double> parse_real_list(const std::string& s) {
    std::vector<double> out;
    std::string part;
    std::stringstream ss(s);
    while (std::getline(ss, part, ',')) out.push_back(std::stod(part));
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"GLocal-K matrix completion: kernelized autoencoder with a "
                 "global convolution kernel"};
    app.require_subcommand(1);

    CommonOpts train_o, eval_o, sweep_e_o, sweep_r_o, sweep_k_o, stats_o;

    CLI::App* train = app.add_subcommand("train", "pretrain + finetune + evaluate per seed");
    train_o.attach(*train);

    CLI::App* eval = app.add_subcommand("evaluate", "evaluate a saved checkpoint");
    eval_o.attach(*eval);
    std::string ckpt_path;
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();

    CLI::App* sweep_e = app.add_subcommand("sweep-epochs", "vary pretrain_epochs");
    sweep_e_o.attach(*sweep_e);
    std::string epoch_list = "0,10,20,30,40,50,60";
    sweep_e->add_option("--epoch-list", epoch_list, "comma-separated epoch counts");

    CLI::App* sweep_r = app.add_subcommand("sweep-ratio", "vary training ratio");
    sweep_r_o.attach(*sweep_r);
    std::string ratio_list = "0.2,0.4,0.6,0.8,1.0";
    sweep_r->add_option("--ratio-list", ratio_list, "comma-separated ratios in (0,1]");

    CLI::App* sweep_k = app.add_subcommand("sweep-kernel",
                                           "vary kernel size, conv layers, aggregation");
    sweep_k_o.attach(*sweep_k);

    CLI::App* grad = app.add_subcommand("gradcheck",
                                        "analytic vs finite-difference gradients");
    std::size_t gc_draws = 24;
    std::uint64_t gc_seed = 123;
    double gc_eps = 1e-5, gc_tol = 1e-4;
    grad->add_option("--draws", gc_draws, "random instances (half per objective)");
    grad->add_option("--seed", gc_seed, "rng seed");
    grad->add_option("--eps", gc_eps, "finite difference step");
    grad->add_option("--tol", gc_tol, "max relative error allowed");

    CLI::App* stats = app.add_subcommand("stats", "dataset statistics");
    stats_o.attach(*stats);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            const ExperimentConfig cfg = train_o.resolve();
            return report_outcome(run_experiment(cfg, cfg.out_dir));
        }
        if (eval->parsed()) {
            const ExperimentConfig cfg = eval_o.resolve();
            const Checkpoint ckpt = load_checkpoint(ckpt_path);
            if (ckpt.config_hash != cfg.hash())
                std::fprintf(stderr,
                             "warning: checkpoint config hash %016llx != current %016llx\n",
                             static_cast<unsigned long long>(ckpt.config_hash),
                             static_cast<unsigned long long>(cfg.hash()));
            const std::uint64_t seed = cfg.seeds.front();
            LoadedData data = load_dataset(cfg, seed);
            const RatingMatrix train_m = build_matrix(data.train, data.items, data.users);
            KernelNet net =
                KernelNet::make(data.users, cfg.h, cfg.num_hidden, cfg.d, cfg.kernelize_all);
            const bool finetuned =
                std::any_of(ckpt.segments.begin(), ckpt.segments.end(),
                            [](const CheckpointSegment& s) { return s.kind == 5; });
            DenseMatrix pred(0, 0);
            if (finetuned) {
                std::vector<GlobalKernelBank> banks(cfg.conv_layers);
                for (auto& b : banks) {
                    b.t = cfg.t;
                    b.k_bank = DenseMatrix(data.items, cfg.t * cfg.t);
                }
                PooledSummary mu;
                mu.mu.resize(data.items);
                checkpoint_into_finetune(ckpt, net, banks, mu);
                pred = predict_matrix(cfg, net, banks, mu, train_m);
            } else {
                checkpoint_into_net(ckpt, net);
                pred = net_forward(net, train_m.dense);
            }
            const double rmse =
                evaluate_rmse(pred, data.test, cfg.rating_min, cfg.rating_max);
            std::printf("%s checkpoint rmse: %.6f\n", finetuned ? "finetune" : "pretrain",
                        rmse);
            return 0;
        }
        if (sweep_e->parsed()) {
            const ExperimentConfig cfg = sweep_e_o.resolve();
            const auto rows = sweep_pretrain_epochs(cfg, parse_count_list(epoch_list),
                                                    cfg.out_dir);
            print_sweep(rows);
            return 0;
        }
        if (sweep_r->parsed()) {
            const ExperimentConfig cfg = sweep_r_o.resolve();
            const auto rows = sweep_train_ratio(cfg, parse_real_list(ratio_list), cfg.out_dir);
            print_sweep(rows);
            return 0;
        }
        if (sweep_k->parsed()) {
            const ExperimentConfig cfg = sweep_k_o.resolve();
            const auto rows = sweep_global_kernel(cfg, cfg.out_dir);
            print_sweep(rows);
            return 0;
        }
        if (grad->parsed()) {
            const GradcheckReport rep = gradcheck(gc_draws, gc_seed, gc_eps, gc_tol);
            std::cout << format_gradcheck(rep);
            return rep.pass ? 0 : 1;
        }
        if (stats->parsed()) {
            const ExperimentConfig cfg = stats_o.resolve();
            LoadedData data = load_dataset(cfg, cfg.seeds.front());
            std::printf("dataset %s: %zu users, %zu items, %zu ratings, density %.4f\n",
                        cfg.dataset.c_str(), data.stats.users, data.stats.items,
                        data.stats.ratings, data.stats.density);
            std::printf("train: %zu ratings, test: %zu ratings\n", data.train.triplets.size(),
                        data.test.triplets.size());
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
