#pragma once

#include <string>

#include "ugda/rng.hpp"
#include "ugda/tensor.hpp"

namespace ugda {

// learnable — (a, b, tau) come from the head below;
// random    — fixed Beta(1,1) interpolation, smoothing always on (a=b=tau=1);
// off       — the interpolation stage is bypassed entirely (callers skip it,
//             so no RNG draws are consumed).
enum class MixupMode { Learnable, Random, Off };
MixupMode mixup_mode_from(const std::string& name);
std::string to_string(MixupMode mode);

struct MixupParams {
    Scalar a = 1.0, b = 1.0, tau = 1.0;
};

// ============================================================================
// MixupHead: maps the channel-means of the first perturbation head's (mu,
// sigma) through one affine layer to the interpolation parameters:
//   (o0,o1,o2) = W [mu_mean, sigma_mean]^T + bias
//   a = softplus(o0) + 0.01,  b = softplus(o1) + 0.01,  tau = sigmoid(o2)
// The 0.01 floor keeps the Beta parameters strictly positive.  Zero-init
// therefore gives a = b = log(2)+0.01 ≈ 0.7031 and tau = 0.5.
// ============================================================================
struct MixupHead {
    Tensor W;    // {3,2}
    Tensor bias; // {3}

    static MixupHead init();
};

struct MixupInference {
    MixupParams p;
    Scalar o0 = 0.0, o1 = 0.0, o2 = 0.0;         // pre-squash activations
    Scalar mu_mean = 0.0, sigma_mean = 0.0;      // inputs as seen
    bool learnable = false;                      // whether gradients flow
};

MixupInference infer_mixup_params(const MixupHead& head, Scalar mu_mean, Scalar sigma_mean,
                                  MixupMode mode);

// Chain (dL/da, dL/db, dL/dtau) back through the affine head.  dW has 6
// entries (row-major {3,2}), dbias 3; dmu_mean / dsigma_mean collect the
// gradient w.r.t. the statistics (which continue into the perturbation head).
void mixup_head_grads(const MixupHead& head, const MixupInference& inf, Scalar da, Scalar db,
                      Scalar dtau, Scalar* dW, Scalar* dbias, Scalar* dmu_mean,
                      Scalar* dsigma_mean);

// Label smoothing: keep rho on the true class, spread (1-rho)/(c-1) over the
// rest.  rho must lie in (1/c, 1) so the true class stays the argmax.
Tensor smoothed_labels(const Tensor& y, Scalar rho);
// Per-row Bernoulli(tau) gate: each row of y is replaced by its smoothed
// version with probability tau.  Draws exactly one uniform per row.
Tensor smooth_label(const Tensor& y, Scalar rho, Scalar tau, RngStream& rng);

// Convex interpolation of a feature/label pair with its perturbed partner.
struct MixedPair {
    Tensor h;
    Tensor y;
};
MixedPair mix(const Tensor& h, const Tensor& h_plus, const Tensor& y, const Tensor& y_tilde,
              Scalar lambda);

// lambda ~ Beta(a,b) drawn by inverse-CDF, so the draw is a pure function of
// (a, b) and the consumed uniform.
Scalar sample_lambda(Scalar a, Scalar b, RngStream& rng);

// Same draw plus d lambda/da and d lambda/db, obtained implicitly from
// F(lambda; a, b) = u:  d lambda/da = -(dF/da) / pdf(lambda), with dF/da by
// central differences of the regularized incomplete beta.
struct LambdaDraw {
    Scalar lambda = 0.0;
    Scalar dda = 0.0, ddb = 0.0;
};
LambdaDraw sample_lambda_grad(Scalar a, Scalar b, RngStream& rng);

} // namespace ugda
