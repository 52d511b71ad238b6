#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glocalk/errors.hpp"
#include "glocalk/globalkernel.hpp"

namespace glocalk {

// Everything a run needs. Defaults are the ML-100K setup; defaults_for()
// switches the per-dataset hyperparameters.
struct ExperimentConfig {
    std::string dataset = "ml100k"; // ml100k | ml1m | triplets
    std::string data_path;          // ml100k: directory with u1.base/u1.test;
                                    // ml1m: ratings.dat; triplets: train csv
    std::string test_path;          // triplets with canonical split: test csv
    std::string split = "canonical"; // canonical | random
    double test_fraction = 0.1;

    std::size_t h = 500;
    std::size_t num_hidden = 2;
    std::size_t d = 5;
    std::size_t t = 3;
    std::size_t conv_layers = 1;
    std::string agg_mode = "weighted"; // weighted | avg

    double lambda2 = 20.0;
    double lambda_s = 0.006;
    std::size_t maxiter_p = 5;
    std::size_t maxiter_f = 5;
    std::size_t pretrain_epochs = 30;
    std::size_t finetune_epochs = 10;

    double train_ratio = 1.0;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    double rating_min = 1.0;
    double rating_max = 5.0;

    bool kernelize_all = true;
    bool reg_kernel_on_uv = false;
    bool refresh_mu = false;
    bool carry_memory = false;

    std::string out_dir = "out";

    void validate() const; // ConfigError on violation
    AggregationMode aggregation() const;

    // Canonical key=value form; also what hash() digests.
    std::string serialize() const;
    std::uint64_t hash() const; // FNV-1a over serialize()

    // ConfigError on unknown key or unparsable value.
    void set_kv(const std::string& key, const std::string& value);

    static ExperimentConfig defaults_for(const std::string& dataset);
};

// key = value lines applied onto base; '#' comments and blank lines skipped.
void apply_config_file(const std::string& path, ExperimentConfig& base);

std::uint64_t fnv1a64(const std::string& s);

} // namespace glocalk
