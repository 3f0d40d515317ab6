#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ugda/config.hpp"
#include "ugda/rng.hpp"
#include "ugda/tensor.hpp"

namespace ugda {

// Additive per-channel feature offsets keyed by intercept point.  Each entry
// has shape {N, channels(layer)} and is broadcast over spatial positions.
using PerturbMap = std::map<std::string, Tensor>;

// ============================================================================
// ForwardTrace: everything a forward pass exposes downstream.
//   h_by_layer — pre-activation feature maps at every intercept point, after
//                any offsets were added (shape {N, C, H, W} or {N, C});
//   z          — final fully-connected output before the softmax, {N, classes};
//   y_hat      — softmax probabilities, {N, classes}.
// ============================================================================
struct ForwardTrace {
    std::map<std::string, Tensor> h_by_layer;
    Tensor z;
    Tensor y_hat;
};

// Which gradients a backward pass should materialize.
struct BackwardRequest {
    bool params = true;
    bool input = false;
    bool intercepts = false;
};

struct BackboneGrads {
    VecX dparams;                        // flat, aligned with Backbone::params()
    Tensor dinput;                       // same shape as the input batch
    std::map<std::string, Tensor> dintercepts; // {N, channels} per intercept
};

// ============================================================================
// Backbone: a small sequential network with named intercept points where
// feature offsets can be injected.  Two registered architectures:
//
//   digits-convnet  conv5-pool2-conv5-pool2-fc-fc-softmax (valid padding,
//                   ReLU after each conv and fc), intercepts at both convs;
//   mlp-small       two ReLU hidden layers, intercept at the first.
//
// Forward/backward are hand-written (im2col + GEMM for convs) so gradients
// are available w.r.t. parameters, inputs and the injected offsets.
// ============================================================================
class Backbone {
public:
    struct Layer {
        enum class Kind { Conv, Pool, Dense };
        Kind kind = Kind::Dense;
        std::string name;
        bool relu = false;      // ReLU applied after the (possibly offset) output
        bool intercept = false; // offsets may be injected at the pre-activation output
        // Conv (valid padding, stride 1): W is {out_c, in_c*k*k}, b is {out_c}.
        int in_c = 0, out_c = 0, k = 0;
        // Dense: W is {out_dim, in_dim}, b is {out_dim}.
        int in_dim = 0, out_dim = 0;
        // Pool: 2x2 max, stride 2.
        Tensor W, b;
    };

    // Registry entry point; accepts "digits-convnet" and "mlp-small".
    static Backbone make(const RunConfig& cfg);
    static Backbone digits_convnet(int in_channels, int image_size, int c1, int c2, int kernel,
                                   int fc_width, int classes);
    static Backbone mlp_small(int input_dim, int hidden, int classes);
    // Arbitrary stack (used heavily by tests).
    static Backbone custom(std::vector<Layer> layers, std::vector<int> input_shape, int classes);

    // Scratch state of one forward pass, consumed by backward().
    struct Cache;

    ForwardTrace forward(const Tensor& x, const PerturbMap* offsets = nullptr) const;
    ForwardTrace forward(const Tensor& x, const PerturbMap* offsets, Cache& cache) const;

    // dlogits is dLoss/dz with shape {N, classes}.  Requires the cache of the
    // matching forward call.
    BackboneGrads backward(const Cache& cache, const Tensor& dlogits,
                           const BackwardRequest& req = {}) const;

    // --- introspection -------------------------------------------------------
    const std::vector<std::string>& intercept_points() const { return intercepts_; }
    int intercept_channels(const std::string& name) const;
    const std::vector<int>& input_shape() const { return input_shape_; } // per example
    int classes() const { return classes_; }
    const std::vector<Layer>& layers() const { return layers_; }

    // --- flat parameter access (optimizers, checkpoints, meta steps) ---------
    std::int64_t param_count() const;
    VecX params() const;
    void set_params(const VecX& flat);
    void init_params(RngStream& rng); // He-normal weights, zero biases

private:
    std::vector<Layer> layers_;
    std::vector<int> input_shape_;
    std::vector<std::string> intercepts_;
    int classes_ = 0;

    void validate() const;
};

struct Backbone::Cache {
    Tensor x;                       // input batch
    std::vector<Tensor> inputs;     // input to each layer
    std::vector<Tensor> pre_act;    // pre-activation output (offsets included)
    std::vector<Tensor> patches;    // im2col buffers for conv layers
    std::vector<std::vector<int>> pool_argmax;
    std::vector<std::vector<int>> in_dims;  // {C,H,W} entering each layer
    std::vector<std::vector<int>> out_dims; // {C,H,W} leaving each layer
    Tensor z;
    Tensor y_hat;
    int n = 0;
};

// --- loss & small helpers ----------------------------------------------------

// Row-wise stable softmax of {N, C} logits.
Tensor softmax_rows(const Tensor& z);

// Mean cross-entropy -sum_i y_i log(max(y_hat_i, 1e-12)) over the batch.
// Accepts soft labels; y and y_hat must both be {N, C}.
Scalar cross_entropy(const Tensor& y_hat, const Tensor& y);

// d(cross_entropy(softmax(z), y))/dz = (softmax(z) - y)/N, the composite
// gradient used everywhere a loss is backpropagated through the network.
Tensor cross_entropy_dlogits(const Tensor& y_hat, const Tensor& y);

// Mean prediction entropy -sum_i p_i log p_i and its gradient w.r.t. logits.
Scalar prediction_entropy(const Tensor& y_hat);
Tensor prediction_entropy_dlogits(const Tensor& y_hat);

Tensor one_hot(const std::vector<int>& labels, int classes);
std::vector<int> argmax_rows(const Tensor& probs);
Scalar accuracy(const Tensor& y_hat, const std::vector<int>& labels);

} // namespace ugda
