#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "glocalk/gradcheck.hpp"
#include "glocalk/pipeline.hpp"
#include "testutil.hpp"

using namespace glocalk;
using nlohmann::json;

namespace {

// A triplet-file experiment small enough that a full multi-seed run takes
// well under a second.
struct Fixture {
    testutil::TempFile file;
    ExperimentConfig cfg;

    explicit Fixture(std::uint64_t data_seed = 7) : file("") {
        RatingDataset ds = testutil::synthetic_dataset(12, 10, 2, 0.7, data_seed);
        write_triplet_csv(ds, file.path());
        cfg.dataset = "triplets";
        cfg.data_path = file.path();
        cfg.split = "random";
        cfg.test_fraction = 0.2;
        cfg.h = 6;
        cfg.num_hidden = 1;
        cfg.d = 2;
        cfg.t = 3;
        cfg.conv_layers = 1;
        cfg.lambda2 = 1.0;
        cfg.lambda_s = 0.01;
        cfg.maxiter_p = 3;
        cfg.maxiter_f = 3;
        cfg.pretrain_epochs = 2;
        cfg.finetune_epochs = 2;
        cfg.seeds = {0, 1};
        cfg.out_dir = "";
    }
};

std::vector<RatingTriplet> sorted(std::vector<RatingTriplet> v) {
    std::sort(v.begin(), v.end(), [](const RatingTriplet& a, const RatingTriplet& b) {
        return std::tie(a.user, a.item, a.rating) < std::tie(b.user, b.item, b.rating);
    });
    return v;
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream is(path);
    std::vector<json> out;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) out.push_back(json::parse(line));
    return out;
}

bool has_block(const GradcheckReport& rep, const std::string& name) {
    return std::any_of(rep.blocks.begin(), rep.blocks.end(),
                       [&](const GradcheckBlock& b) { return b.name == name; });
}

} // namespace

TEST_CASE("evaluate_rmse on hand-built predictions") {
    RatingDataset test;
    test.triplets = {{1, 10, 4.0}, {2, 20, 2.0}};
    test.rebuild_index();

    DenseMatrix pred(2, 2);
    pred(0, 0) = 4.0;
    pred(1, 1) = 2.0;
    CHECK(evaluate_rmse(pred, test, 1.0, 5.0) == 0.0);

    SUBCASE("single error of 2") {
        RatingDataset one;
        one.triplets = {{1, 10, 5.0}};
        one.rebuild_index();
        DenseMatrix p(1, 1);
        p(0, 0) = 3.0;
        CHECK(evaluate_rmse(p, one, 1.0, 5.0) == 2.0);
    }
    SUBCASE("predictions are clipped before scoring") {
        pred(0, 0) = 6.2; // clips to 5, actual 4 -> error 1
        pred(1, 1) = 0.3; // clips to 1, actual 2 -> error 1
        CHECK(evaluate_rmse(pred, test, 1.0, 5.0) == 1.0);
        // far outside the range clips to the same endpoints
        pred(0, 0) = 123.0;
        pred(1, 1) = -7.0;
        CHECK(evaluate_rmse(pred, test, 1.0, 5.0) == 1.0);
    }
    SUBCASE("empty test set") {
        RatingDataset empty;
        CHECK_THROWS_AS(evaluate_rmse(pred, empty, 1.0, 5.0), ValidationError);
    }
    SUBCASE("test triplet outside the prediction matrix") {
        DenseMatrix narrow(1, 2);
        CHECK_THROWS_AS(evaluate_rmse(narrow, test, 1.0, 5.0), ValidationError);
    }
}

TEST_CASE("load_dataset splits triplet files randomly") {
    Fixture fix;
    RatingDataset full = parse_triplet_csv(fix.cfg.data_path);
    LoadedData data = load_dataset(fix.cfg, 3);

    auto combined = data.train.triplets;
    combined.insert(combined.end(), data.test.triplets.begin(), data.test.triplets.end());
    CHECK(sorted(combined) == sorted(full.triplets));
    CHECK(data.test.triplets.size() ==
          static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(full.triplets.size()))));

    CHECK(data.items == full.item_index.size());
    CHECK(data.users == full.user_index.size());
    CHECK(data.train.item_index.size() == data.items);
    CHECK(data.test.item_index.size() == data.items);
    CHECK(data.stats.ratings == full.triplets.size());
    CHECK(data.stats.items == data.items);
    CHECK(data.stats.users == data.users);

    SUBCASE("same seed reproduces the split") {
        LoadedData again = load_dataset(fix.cfg, 3);
        CHECK(again.train.triplets == data.train.triplets);
        CHECK(again.test.triplets == data.test.triplets);
    }
    SUBCASE("different seed moves the split") {
        LoadedData other = load_dataset(fix.cfg, 4);
        CHECK(sorted(other.test.triplets) != sorted(data.test.triplets));
    }
}

TEST_CASE("load_dataset canonical triplet split") {
    Fixture fix;
    fix.cfg.split = "canonical";
    SUBCASE("requires test_path") {
        CHECK_THROWS_AS(load_dataset(fix.cfg, 0), ConfigError);
    }
    SUBCASE("keeps both files as-is in a unified coordinate system") {
        RatingDataset test_ds;
        test_ds.triplets = {{1, 3, 4.0}, {2, 5, 2.0}, {3, 99, 5.0}};
        test_ds.rebuild_index();
        testutil::TempFile test_file("");
        write_triplet_csv(test_ds, test_file.path());
        fix.cfg.test_path = test_file.path();

        RatingDataset train_ds = parse_triplet_csv(fix.cfg.data_path);
        LoadedData data = load_dataset(fix.cfg, 0);
        CHECK(sorted(data.train.triplets) == sorted(train_ds.triplets));
        CHECK(sorted(data.test.triplets) == sorted(test_ds.triplets));
        // item 99 exists only in the test file but must be indexable everywhere
        CHECK(data.items == train_ds.item_index.size() + 1);
        CHECK(data.train.item_index.dense(99) == data.test.item_index.dense(99));
        CHECK(data.stats.ratings == train_ds.triplets.size() + test_ds.triplets.size());
    }
}

TEST_CASE("load_dataset rejects bad dataset configs") {
    Fixture fix;
    SUBCASE("ml1m requires a random split") {
        fix.cfg.dataset = "ml1m";
        fix.cfg.split = "canonical";
        CHECK_THROWS_AS(load_dataset(fix.cfg, 0), ConfigError);
    }
    SUBCASE("unknown dataset name") {
        fix.cfg.dataset = "netflix";
        CHECK_THROWS_AS(load_dataset(fix.cfg, 0), ConfigError);
    }
}

TEST_CASE("train_ratio subsamples after the stats are taken") {
    Fixture fix;
    LoadedData base = load_dataset(fix.cfg, 1);
    fix.cfg.train_ratio = 0.5;
    LoadedData half = load_dataset(fix.cfg, 1);

    CHECK(half.train.triplets.size() ==
          static_cast<std::size_t>(
              std::llround(0.5 * static_cast<double>(base.train.triplets.size()))));
    CHECK(half.test.triplets == base.test.triplets);
    CHECK(half.stats.ratings == base.stats.ratings);
    CHECK(half.items == base.items);

    auto base_sorted = sorted(base.train.triplets);
    auto half_sorted = sorted(half.train.triplets);
    CHECK(std::includes(base_sorted.begin(), base_sorted.end(), half_sorted.begin(),
                        half_sorted.end(), [](const RatingTriplet& a, const RatingTriplet& b) {
                            return std::tie(a.user, a.item, a.rating) <
                                   std::tie(b.user, b.item, b.rating);
                        }));
}

TEST_CASE("pretrain with zero epochs returns the initialization") {
    Fixture fix;
    fix.cfg.pretrain_epochs = 0;
    RatingDataset ds = parse_triplet_csv(fix.cfg.data_path);
    RatingMatrix train = build_matrix(ds, ds.item_index.size(), ds.user_index.size());

    SeededRng rng(99);
    PretrainResult pre = pretrain(fix.cfg, train, rng);

    SeededRng twin(99);
    KernelNet expected =
        KernelNet::make(train.users, fix.cfg.h, fix.cfg.num_hidden, fix.cfg.d,
                        fix.cfg.kernelize_all);
    init_params(expected, twin);
    CHECK(pre.x == flatten(expected));
    CHECK(pre.opt.iterations == 0);
    CHECK(pre.opt.trace.empty());

    KernelNetObjective obj(train, expected,
                           RegConfig{fix.cfg.lambda2, fix.cfg.lambda_s, fix.cfg.reg_kernel_on_uv});
    std::vector<double> g;
    CHECK(pre.opt.loss == obj.eval(pre.x, g));
}

TEST_CASE("finetune with zero epochs keeps the fresh banks and AE parameters") {
    Fixture fix;
    fix.cfg.conv_layers = 2;
    fix.cfg.finetune_epochs = 0;
    fix.cfg.pretrain_epochs = 1;
    RatingDataset ds = parse_triplet_csv(fix.cfg.data_path);
    RatingMatrix train = build_matrix(ds, ds.item_index.size(), ds.user_index.size());

    SeededRng init_rng(5);
    PretrainResult pre = pretrain(fix.cfg, train, init_rng);
    SeededRng bank_rng(17);
    FinetuneResult fin = finetune(fix.cfg, pre, train, bank_rng);

    SeededRng twin(17);
    for (std::size_t l = 0; l < fix.cfg.conv_layers; ++l) {
        GlobalKernelBank expected = init_kernel_bank(train.items, fix.cfg.t, twin);
        CHECK(fin.banks[l].t == expected.t);
        CHECK(fin.banks[l].k_bank == expected.k_bank);
    }
    CHECK(fin.banks.size() == fix.cfg.conv_layers);
    CHECK(fin.opt.iterations == 0);
    CHECK(std::equal(pre.x.begin(), pre.x.end(), fin.x.begin()));
    CHECK(flatten(fin.net) == pre.x);

    PooledSummary expected_mu =
        item_avg_pool(net_forward(pre.net, train.dense), fix.cfg.rating_min, fix.cfg.rating_max);
    CHECK(fin.mu.mu == expected_mu.mu);
}

TEST_CASE("predict_matrix applies the convolution chain ahead of the net") {
    Fixture fix;
    RatingDataset ds = parse_triplet_csv(fix.cfg.data_path);
    RatingMatrix train = build_matrix(ds, ds.item_index.size(), ds.user_index.size());
    KernelNet net = KernelNet::make(train.users, fix.cfg.h, 1, fix.cfg.d);
    SeededRng rng(2);
    init_params(net, rng);

    // mu picks out row 0 of the bank, which holds a centered delta, so the
    // aggregated kernel is the identity and the chain reduces to the plain AE.
    GlobalKernelBank bank;
    bank.t = 3;
    bank.k_bank = DenseMatrix(train.items, 9);
    bank.k_bank(0, 4) = 1.0;
    PooledSummary mu;
    mu.mu.assign(train.items, 0.0);
    mu.mu[0] = 1.0;

    DenseMatrix direct = net_forward(net, train.dense);
    CHECK(predict_matrix(fix.cfg, net, {bank}, mu, train) == direct);
    CHECK(predict_matrix(fix.cfg, net, {bank, bank}, mu, train) == direct);
}

TEST_CASE("run_seed is deterministic") {
    Fixture fix;
    SeedRun a = run_seed(fix.cfg, 0);
    SeedRun b = run_seed(fix.cfg, 0);
    CHECK(a.rmse == b.rmse);
    CHECK(a.pretrain_loss == b.pretrain_loss);
    CHECK(a.finetune_loss == b.finetune_loss);
    CHECK(a.pretrain_trace.size() == b.pretrain_trace.size());
    CHECK(a.finetune_trace.size() == b.finetune_trace.size());
    for (std::size_t i = 0; i < a.finetune_trace.size(); ++i) {
        CHECK(a.finetune_trace[i].loss == b.finetune_trace[i].loss);
        CHECK(a.finetune_trace[i].step == b.finetune_trace[i].step);
    }
    CHECK(std::isfinite(a.rmse));
    CHECK(a.rmse >= 0.0);
    CHECK(a.rmse <= 4.0); // both sides live in [1,5] after clipping
    CHECK(!a.pretrain_trace.empty());
    CHECK(!a.finetune_trace.empty());
}

TEST_CASE("run_experiment aggregates per-seed runs") {
    Fixture fix;
    EvalReport rep = run_experiment(fix.cfg);
    REQUIRE(rep.runs.size() == 2);
    CHECK_FALSE(rep.partial);
    CHECK(rep.error.empty());
    CHECK(rep.config_hash == fix.cfg.hash());
    CHECK(rep.per_seed_rmse.size() == 2);
    CHECK(rep.mean_rmse == (rep.per_seed_rmse[0] + rep.per_seed_rmse[1]) / 2.0);
    for (std::size_t i = 0; i < rep.runs.size(); ++i) {
        CHECK(rep.runs[i].seed == fix.cfg.seeds[i]);
        CHECK(rep.runs[i].rmse == rep.per_seed_rmse[i]);
        CHECK(rep.runs[i].rmse >= 0.0);
        CHECK(rep.runs[i].rmse <= 4.0);
    }
    CHECK(rep.stats.ratings > 0);

    // the same seed through the single-run entry point gives the same numbers
    SeedRun direct = run_seed(fix.cfg, 0);
    CHECK(direct.rmse == rep.per_seed_rmse[0]);
}

TEST_CASE("run_experiment writes report, trace, config and checkpoints") {
    Fixture fix;
    testutil::TempDir dir;
    EvalReport rep = run_experiment(fix.cfg, dir.path());
    REQUIRE_FALSE(rep.partial);

    namespace fs = std::filesystem;
    const fs::path out(dir.path());
    for (const char* name : {"report.jsonl", "trace.jsonl", "config.txt", "items.csv",
                             "users.csv", "pretrain_seed0.ckpt", "finetune_seed0.ckpt",
                             "pretrain_seed1.ckpt", "finetune_seed1.ckpt"})
        CHECK(fs::exists(out / name));

    CHECK(read_file((out / "config.txt").string()) == fix.cfg.serialize());

    auto report = read_jsonl((out / "report.jsonl").string());
    REQUIRE(report.size() == 3); // one object per seed plus the summary
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(report[i]["seed"].get<std::uint64_t>() == fix.cfg.seeds[i]);
        CHECK(report[i]["rmse"].get<double>() == rep.per_seed_rmse[i]);
        CHECK(report[i]["dataset"] == "triplets");
    }
    CHECK(report[2]["mean_rmse"].get<double>() == rep.mean_rmse);
    CHECK(report[2]["partial"].get<bool>() == false);
    CHECK(report[2]["per_seed_rmse"].get<std::vector<double>>() == rep.per_seed_rmse);
    CHECK(report[2]["ratings"].get<std::size_t>() == rep.stats.ratings);

    auto trace = read_jsonl((out / "trace.jsonl").string());
    std::size_t expected_lines = 0;
    for (const auto& r : rep.runs)
        expected_lines += r.pretrain_trace.size() + r.finetune_trace.size();
    CHECK(trace.size() == expected_lines);
    for (const auto& j : trace) {
        const std::string stage = j["stage"].get<std::string>();
        CHECK((stage == "pretrain" || stage == "finetune"));
        CHECK(j["iter"].get<std::size_t>() >= 1);
    }

    // id maps cover the whole coordinate system
    std::ifstream items((out / "items.csv").string());
    std::string line;
    std::getline(items, line);
    CHECK(line == "raw_id,dense_id");
    std::size_t item_lines = 0;
    while (std::getline(items, line))
        if (!line.empty()) ++item_lines;
    CHECK(item_lines == rep.stats.items);

    // checkpoints restore into freshly shaped nets
    Checkpoint pre_ck = load_checkpoint((out / "pretrain_seed0.ckpt").string());
    CHECK(pre_ck.config_hash == fix.cfg.hash());
    KernelNet net = KernelNet::make(rep.stats.users, fix.cfg.h, fix.cfg.num_hidden, fix.cfg.d,
                                    fix.cfg.kernelize_all);
    CHECK_NOTHROW(checkpoint_into_net(pre_ck, net));

    Checkpoint fin_ck = load_checkpoint((out / "finetune_seed0.ckpt").string());
    KernelNet fin_net = KernelNet::make(rep.stats.users, fix.cfg.h, fix.cfg.num_hidden, fix.cfg.d,
                                        fix.cfg.kernelize_all);
    std::vector<GlobalKernelBank> banks(fix.cfg.conv_layers);
    for (auto& b : banks) {
        b.t = fix.cfg.t;
        b.k_bank = DenseMatrix(rep.stats.items, fix.cfg.t * fix.cfg.t);
    }
    PooledSummary mu;
    CHECK_NOTHROW(checkpoint_into_finetune(fin_ck, fin_net, banks, mu));
    CHECK(mu.mu.size() == rep.stats.items);
    CHECK(frobenius_sq(banks[0].k_bank) > 0.0);
}

TEST_CASE("two runs of the same config report identical RMSE fields") {
    Fixture fix;
    testutil::TempDir dir_a, dir_b;
    run_experiment(fix.cfg, dir_a.path());
    run_experiment(fix.cfg, dir_b.path());

    namespace fs = std::filesystem;
    auto a = read_jsonl((fs::path(dir_a.path()) / "report.jsonl").string());
    auto b = read_jsonl((fs::path(dir_b.path()) / "report.jsonl").string());
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i + 1 < a.size(); ++i)
        CHECK(a[i]["rmse"].get<double>() == b[i]["rmse"].get<double>());
    CHECK(a.back()["mean_rmse"].get<double>() == b.back()["mean_rmse"].get<double>());
    CHECK(a.back()["per_seed_rmse"] == b.back()["per_seed_rmse"]);
    CHECK(a.back()["config_hash"] == b.back()["config_hash"]);
}

TEST_CASE("run_experiment marks a failed run as partial") {
    Fixture fix;
    fix.cfg.data_path = "/nonexistent/ratings.csv";
    EvalReport rep = run_experiment(fix.cfg);
    CHECK(rep.partial);
    CHECK(rep.runs.empty());
    CHECK(rep.mean_rmse == 0.0);
    CHECK(rep.error.rfind("seed 0:", 0) == 0);
}

TEST_CASE("refresh_mu and carry_memory variants run end to end") {
    Fixture fix;
    SUBCASE("refresh_mu") { fix.cfg.refresh_mu = true; }
    SUBCASE("carry_memory") { fix.cfg.carry_memory = true; }
    SUBCASE("reg_kernel_on_uv") { fix.cfg.reg_kernel_on_uv = true; }
    SUBCASE("elementwise aggregation, deeper chain") {
        fix.cfg.agg_mode = "avg";
        fix.cfg.conv_layers = 2;
    }
    SeedRun sr = run_seed(fix.cfg, 0);
    CHECK(std::isfinite(sr.rmse));
    CHECK(sr.rmse >= 0.0);
    CHECK(sr.rmse <= 4.0);
    CHECK(!sr.finetune_trace.empty());
    for (const auto& te : sr.finetune_trace) {
        CHECK(te.epoch < fix.cfg.finetune_epochs);
        CHECK(te.iter >= 1);
        CHECK(te.iter <= fix.cfg.maxiter_f);
    }
}

TEST_CASE("sweep_pretrain_epochs applies exactly the epoch override") {
    Fixture fix;
    fix.cfg.seeds = {0};
    fix.cfg.pretrain_epochs = 1; // sweep must override this
    testutil::TempDir dir;
    auto rows = sweep_pretrain_epochs(fix.cfg, {0, 2}, dir.path());
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].label == "pretrain_epochs=0");
    CHECK(rows[0].value == 0.0);
    CHECK(rows[1].label == "pretrain_epochs=2");
    CHECK(rows[1].value == 2.0);

    ExperimentConfig none = fix.cfg;
    none.pretrain_epochs = 0;
    CHECK(rows[0].report.mean_rmse == run_experiment(none).mean_rmse);
    ExperimentConfig two = fix.cfg;
    two.pretrain_epochs = 2;
    CHECK(rows[1].report.mean_rmse == run_experiment(two).mean_rmse);

    std::ifstream is((std::filesystem::path(dir.path()) / "summary.csv").string());
    std::string header;
    std::getline(is, header);
    CHECK(header == "pretrain_epochs,mean_rmse,per_seed_rmse");
    std::size_t lines = 0;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) ++lines;
    CHECK(lines == rows.size());
}

TEST_CASE("sweep_train_ratio at ratio one matches the base run") {
    Fixture fix;
    fix.cfg.seeds = {0};
    auto rows = sweep_train_ratio(fix.cfg, {1.0, 0.5});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].label == "train_ratio=1");
    CHECK(rows[1].label == "train_ratio=0.5");
    CHECK(rows[0].report.mean_rmse == run_experiment(fix.cfg).mean_rmse);
    CHECK(rows[1].report.runs.size() == 1);
}

TEST_CASE("sweep_global_kernel covers the one-factor cells") {
    Fixture fix;
    fix.cfg.seeds = {0};
    fix.cfg.pretrain_epochs = 1;
    fix.cfg.finetune_epochs = 1;
    fix.cfg.maxiter_p = 2;
    fix.cfg.maxiter_f = 2;
    testutil::TempDir dir;
    auto rows = sweep_global_kernel(fix.cfg, dir.path());
    REQUIRE(rows.size() == 6);
    const char* labels[] = {
        "t=3,conv_layers=1,agg=weighted", "t=5,conv_layers=1,agg=weighted",
        "t=7,conv_layers=1,agg=weighted", "t=3,conv_layers=2,agg=weighted",
        "t=3,conv_layers=3,agg=weighted", "t=3,conv_layers=1,agg=avg",
    };
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(rows[i].label == labels[i]);
        CHECK_FALSE(rows[i].report.partial);
    }
    CHECK(rows[0].report.mean_rmse == run_experiment(fix.cfg).mean_rmse);

    std::ifstream is((std::filesystem::path(dir.path()) / "summary.csv").string());
    std::string header;
    std::getline(is, header);
    CHECK(header == "t,conv_layers,agg_mode,mean_rmse");
}

TEST_CASE("gradcheck passes and reports per-block errors") {
    GradcheckReport rep = gradcheck(8, 2026);
    CHECK(rep.pass);
    CHECK(rep.draws == 8);
    CHECK(rep.max_rel_error <= rep.tol);
    CHECK(!rep.blocks.empty());
    CHECK(has_block(rep, "L0.W"));
    CHECK(has_block(rep, "L0.U"));
    CHECK(has_block(rep, "L0.b"));
    // the finetune draws alternate kernel width and chain depth
    CHECK(has_block(rep, "bank0(t=3)"));
    CHECK(has_block(rep, "bank0(t=1)"));
    CHECK(has_block(rep, "bank1(t=1)"));
    for (const auto& b : rep.blocks) CHECK(b.max_rel_error <= rep.tol);

    const std::string text = format_gradcheck(rep);
    CHECK(text.rfind("PASS", 0) == 0);
    CHECK(text.find("bank0") != std::string::npos);
}

TEST_CASE("the finite-difference oracle flags a corrupted gradient") {
    RatingDataset ds = testutil::synthetic_dataset(5, 4, 2, 0.8, 3);
    RatingMatrix rm = build_matrix(ds, ds.item_index.size(), ds.user_index.size());
    KernelNet net = KernelNet::make(rm.users, 3, 1, 2);
    SeededRng rng(11);
    init_params(net, rng);
    KernelNetObjective obj(rm, net, RegConfig{0.2, 0.05, false});

    std::vector<double> x = flatten(net), g;
    obj.eval(x, g);
    std::vector<double> scratch;
    auto fd = finite_diff_gradient(
        [&](const std::vector<double>& p) { return obj.eval(p, scratch); }, x, 1e-5);
    g[0] += 0.5;
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        worst = std::max(worst, grad_rel_error(g[i], fd[i]));
    CHECK(worst > 1e-2);
}
