#pragma once

#include <span>
#include <vector>

#include "glocalk/conv.hpp"
#include "glocalk/kernelnet.hpp"

namespace glocalk {

// Per-item means of the (clipped) reconstruction; the weights that aggregate
// the learnable kernel vectors into the global convolution kernel.
struct PooledSummary {
    std::vector<double> mu; // length m
};

// m learnable kernel vectors of length t*t.
struct GlobalKernelBank {
    DenseMatrix k_bank; // m x t^2, row i is kernel vector k_i
    std::size_t t = 3;
};

enum class AggregationMode { Weighted, ElementwiseAvg };

GlobalKernelBank init_kernel_bank(std::size_t m, std::size_t t, SeededRng& rng);

// Row means of the reconstruction after clipping entries to [1,5].
PooledSummary item_avg_pool(const DenseMatrix& recon, double lo = 1.0, double hi = 5.0);

// Weighted: GK = reshape(sum_i mu_i k_i, t x t).
// ElementwiseAvg: GK = reshape(mean_i k_i, t x t).
DenseMatrix aggregate_kernel(const PooledSummary& mu, const GlobalKernelBank& bank,
                             AggregationMode mode);

// R_hat = conv2d_same(R.dense, GK). The mask is not applied; the transformed
// matrix is a dense autoencoder input.
DenseMatrix build_transformed_matrix(const RatingMatrix& r, const DenseMatrix& gk);

// Chain rule through aggregation + convolution: given dL/dR_hat,
// dL/dk_i = mu_i * vec(dL/dGK) with dL/dGK correlated from the conv input.
DenseMatrix global_kernel_gradient(const DenseMatrix& upstream, const DenseMatrix& conv_input,
                                   const PooledSummary& mu, std::size_t t);

// Fine-tuning objective over [AE parameters | kernel bank vectors]: the
// autoencoder consumes the convolution-transformed matrix and is scored
// against the observed entries of the raw matrix. mu stays fixed.
class FinetuneObjective {
public:
    FinetuneObjective(const RatingMatrix& data, KernelNet net, PooledSummary mu, std::size_t t,
                      std::size_t conv_layers, AggregationMode agg, RegConfig reg);

    std::size_t dim() const { return ae_dim_ + bank_dim_ * conv_layers_; }
    std::size_t ae_dim() const { return ae_dim_; }
    std::size_t bank_dim() const { return bank_dim_; }
    std::size_t conv_layers() const { return conv_layers_; }

    double eval(std::span<const double> x, std::vector<double>& grad);

    void set_mu(PooledSummary mu) { mu_ = std::move(mu); }
    const PooledSummary& mu() const { return mu_; }

    // [flatten(ae) | bank_1 | ... | bank_L]
    std::vector<double> pack(const KernelNet& net, std::span<const GlobalKernelBank> banks) const;
    std::vector<GlobalKernelBank> unpack_banks(std::span<const double> x) const;

    // Forward pass only: transformed matrix chain + reconstruction.
    DenseMatrix reconstruct(std::span<const double> x);

private:
    const RatingMatrix* data_;
    KernelNet net_;
    PooledSummary mu_;
    std::size_t t_;
    std::size_t conv_layers_;
    AggregationMode agg_;
    RegConfig reg_;
    std::size_t ae_dim_ = 0;
    std::size_t bank_dim_ = 0;
};

void clip_matrix(DenseMatrix& m, double lo, double hi);

} // namespace glocalk
