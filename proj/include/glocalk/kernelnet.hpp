#pragma once

#include <span>
#include <string>
#include <vector>

#include "glocalk/data.hpp"
#include "glocalk/matrix.hpp"
#include "glocalk/rng.hpp"

namespace glocalk {

enum class Activation { Sigmoid, Identity };

// One autoencoder layer whose weight matrix is reparameterized by the
// finite-support RBF kernel of its position vectors: the effective weight is
// W .* K(U,V), so entries with kernel 0 are disconnected.
struct LocalKernelLayer {
    DenseMatrix W;         // out x in, free weights
    DenseMatrix U;         // in x d, input-side position vectors
    DenseMatrix V;         // out x d, output-side position vectors
    std::vector<double> b; // out
    Activation act = Activation::Sigmoid;
    bool kernelized = true;

    std::size_t in() const { return W.cols(); }
    std::size_t out() const { return W.rows(); }
    std::size_t d() const { return U.cols(); }
};

// Item-based autoencoder: consumes one length-n item vector per row and
// reconstructs it. Hidden layers are sigmoid, the output layer identity.
struct KernelNet {
    std::vector<LocalKernelLayer> layers;

    static KernelNet make(std::size_t n_users, std::size_t hidden, std::size_t num_hidden,
                          std::size_t d, bool kernelize_all = true);

    std::size_t input_dim() const { return layers.front().in(); }
    std::size_t output_dim() const { return layers.back().out(); }
};

// K[o][i] = max(0, 1 - ||u_i - v_o||^2). U is in x d, V is out x d.
DenseMatrix rbf_kernel_matrix(const DenseMatrix& U, const DenseMatrix& V);

DenseMatrix effective_weights(const LocalKernelLayer& layer);

// activation(W' x + b) applied to each column of x (in x batch).
DenseMatrix layer_forward(const LocalKernelLayer& layer, const DenseMatrix& x_cols);

// Applies the layer stack to every item row of r_in (m x n) and returns the
// reconstruction with the same shape.
DenseMatrix net_forward(const KernelNet& net, const DenseMatrix& r_in);

struct RegConfig {
    double lambda2 = 0.0;
    double lambda_s = 0.0;
    bool reg_kernel_on_uv = false; // penalize ||U||^2 + ||V||^2 instead of ||K(U,V)||^2
};

// Squared error over observed entries plus the L2 penalties on weight and
// kernel matrices.
double masked_loss(const DenseMatrix& recon, const DenseMatrix& target, const DenseMatrix& mask,
                   const KernelNet& net, double lambda2, double lambda_s,
                   bool reg_kernel_on_uv = false);

// --- flat parameter plumbing -------------------------------------------

// Flattening order, fixed and relied on by checkpoints: for each layer in
// order, W row-major, then (if kernelized) U row-major, V row-major, then b.
struct ParamLayout {
    struct Segment {
        std::uint32_t layer;
        std::string name; // "W", "U", "V", "b", "bank", "mu"
        std::size_t offset;
        std::size_t rows;
        std::size_t cols;
        std::size_t count() const { return rows * cols; }
    };
    std::vector<Segment> segments;
    std::size_t total = 0;

    static ParamLayout of(const KernelNet& net);
};

std::vector<double> flatten(const KernelNet& net);
void unflatten(std::span<const double> x, KernelNet& net);

// W ~ uniform(-a, a) with a = sqrt(6/(in+out)); U, V ~ normal(0, 1/sqrt(d));
// biases zero. Draw order matches the flattening order.
void init_params(KernelNet& net, SeededRng& rng);

// --- training objective --------------------------------------------------

// Pre-training objective: masked squared error of the reconstruction of the
// zero-imputed rating matrix, plus regularization. eval() returns the loss
// and writes the analytic gradient for every parameter.
class KernelNetObjective {
public:
    KernelNetObjective(const RatingMatrix& data, KernelNet net, RegConfig reg);

    std::size_t dim() const { return layout_.total; }
    const ParamLayout& layout() const { return layout_; }
    const KernelNet& net() const { return net_; }

    double eval(std::span<const double> x, std::vector<double>& grad);

    // Forward pass only (unflattens x first).
    DenseMatrix reconstruct(std::span<const double> x);

private:
    const RatingMatrix* data_;
    KernelNet net_;
    RegConfig reg_;
    ParamLayout layout_;
};

// Shared by both objectives: data-term gradient w.r.t. every AE parameter
// (written into gnet) given dL/dA_L; returns dL/dA_0. Regularization terms
// are added here as well; the returned value is the regularization loss.
struct AeCache {
    std::vector<DenseMatrix> acts;
    std::vector<DenseMatrix> weff;
    std::vector<DenseMatrix> kmat; // empty matrices for non-kernelized layers
};

AeCache ae_forward(const KernelNet& net, const DenseMatrix& input);
double ae_backward(const KernelNet& net, const AeCache& cache, const DenseMatrix& gout,
                   const RegConfig& reg, KernelNet& gnet, DenseMatrix* ginput);

double masked_data_loss(const DenseMatrix& recon, const DenseMatrix& target,
                        const DenseMatrix& mask);

} // namespace glocalk
