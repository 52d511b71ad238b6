#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glocalk/checkpoint.hpp"
#include "glocalk/config.hpp"
#include "glocalk/data.hpp"
#include "glocalk/globalkernel.hpp"
#include "glocalk/kernelnet.hpp"
#include "glocalk/lbfgs.hpp"

namespace glocalk {

// Fixed sub-stream tags: every stage of a seeded run draws from its own
// generator, so adding draws to one stage never shifts another.
namespace rng_stream {
inline constexpr std::uint64_t split = 1;
inline constexpr std::uint64_t init = 2;
inline constexpr std::uint64_t subsample = 3;
inline constexpr std::uint64_t bank = 4;
} // namespace rng_stream

struct LoadedData {
    RatingDataset train;
    RatingDataset test;
    std::size_t items = 0; // m over the union of both splits
    std::size_t users = 0; // n
    DatasetStats stats;    // of the union
};

// Parses, splits (canonical or seeded random) and applies train_ratio.
LoadedData load_dataset(const ExperimentConfig& cfg, std::uint64_t seed);

struct PretrainResult {
    KernelNet net;
    std::vector<double> x;
    MinimizeResult opt;
    double seconds = 0.0;
};

// pretrain_epochs x maxiter_p L-BFGS iterations on the masked loss over the
// zero-imputed training matrix.
PretrainResult pretrain(const ExperimentConfig& cfg, const RatingMatrix& train,
                        SeededRng& init_rng);

struct FinetuneResult {
    KernelNet net;
    std::vector<GlobalKernelBank> banks;
    PooledSummary mu;
    std::vector<double> x; // [AE params | banks]
    MinimizeResult opt;
    double seconds = 0.0;
};

// mu from the pre-trained reconstruction (clipped), fresh kernel banks, then
// finetune_epochs x maxiter_f joint iterations on the transformed matrix.
FinetuneResult finetune(const ExperimentConfig& cfg, const PretrainResult& pre,
                        const RatingMatrix& train, SeededRng& bank_rng);

// Full fine-tuned forward pass: convolution chain then the AE. Un-clipped.
DenseMatrix predict_matrix(const ExperimentConfig& cfg, const KernelNet& net,
                           const std::vector<GlobalKernelBank>& banks, const PooledSummary& mu,
                           const RatingMatrix& train);

// sqrt(mean squared error) over test triplets, predictions clipped to
// [lo, hi] first. ValidationError on an empty test set.
double evaluate_rmse(const DenseMatrix& predictions, const RatingDataset& test, double lo,
                     double hi);

struct SeedRun {
    std::uint64_t seed = 0;
    double rmse = 0.0;
    double pretrain_loss = 0.0;
    double finetune_loss = 0.0;
    double pretrain_seconds = 0.0;
    double finetune_seconds = 0.0;
    std::vector<TraceEntry> pretrain_trace;
    std::vector<TraceEntry> finetune_trace;
};

struct EvalReport {
    std::vector<SeedRun> runs;
    std::vector<double> per_seed_rmse;
    double mean_rmse = 0.0;
    std::uint64_t config_hash = 0;
    DatasetStats stats;
    bool partial = false; // a seed failed; completed seeds are kept
    std::string error;
};

// Full protocol: per seed split -> pretrain -> finetune -> evaluate. With a
// nonempty out_dir also writes report.jsonl, trace.jsonl, per-stage
// checkpoints and the raw<->dense id maps.
EvalReport run_experiment(const ExperimentConfig& cfg, const std::string& out_dir = "");

// One fine-tuned run end to end for a single seed (unit-test surface).
SeedRun run_seed(const ExperimentConfig& cfg, std::uint64_t seed);

struct SweepRow {
    std::string label; // e.g. "pretrain_epochs=30" or "t=5"
    double value = 0.0;
    EvalReport report;
};

std::vector<SweepRow> sweep_pretrain_epochs(const ExperimentConfig& cfg,
                                            const std::vector<std::size_t>& epoch_counts,
                                            const std::string& out_dir = "");
std::vector<SweepRow> sweep_train_ratio(const ExperimentConfig& cfg,
                                        const std::vector<double>& ratios,
                                        const std::string& out_dir = "");
// One-factor-at-a-time cells around the base config: t in {3,5,7},
// conv_layers in {1,2,3}, agg in {weighted, avg}.
std::vector<SweepRow> sweep_global_kernel(const ExperimentConfig& cfg,
                                          const std::string& out_dir = "");

struct GradcheckBlock {
    std::string name; // "L0.W", "L1.b", "bank0", ...
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradcheckReport {
    bool pass = true;
    double max_rel_error = 0.0;
    std::size_t draws = 0;
    double tol = 1e-4;
    std::vector<GradcheckBlock> blocks; // worst case per block over all draws
};

// Random small instances of both training objectives vs the central
// finite-difference oracle. Draws alternate between the pre-training and the
// full fine-tuning objective.
GradcheckReport gradcheck(std::size_t draws, std::uint64_t seed, double eps = 1e-5,
                          double tol = 1e-4);

std::string format_gradcheck(const GradcheckReport& rep);

} // namespace glocalk
