#pragma once

#include <string>
#include <vector>

#include "ugda/rng.hpp"
#include "ugda/tensor.hpp"

namespace ugda {

// How the feature-offset distribution is formed from the learned head.
// The non-"full" settings are the ablation variants: each one freezes or
// randomizes part of the learned (mu, sigma) pair.
enum class PerturbMode { Full, Deterministic, RandomMu, RandomSigma, RandomGaussian };
PerturbMode perturb_mode_from(const std::string& name);
std::string to_string(PerturbMode mode);

// Learned per-channel Gaussian for one intercept point.  sigma is stored as
// log_sigma so the ascent can move it unconstrained; sigma = exp(log_sigma)
// is the standard deviation (not variance).
struct GaussianPerturbation {
    Tensor mu;
    Tensor log_sigma;

    Tensor sigma() const;
    int channels() const { return mu.shape.empty() ? 0 : mu.shape[0]; }
};

struct PerturbationHead {
    std::string layer; // intercept point this head feeds
    GaussianPerturbation dist;

    // mu = 0, log_sigma = init_log_sigma (default 0, i.e. sigma = 1).
    static PerturbationHead init(const std::string& layer, int channels,
                                 Scalar init_log_sigma = 0.0);
};

// The distribution actually sampled under a given mode, plus which head
// parameters receive gradient through it:
//   full          N(mu, sigma)        d mu, d sigma flow
//   deterministic point mass at mu    d mu flows
//   random_mu     N(0, sigma)         d sigma flows
//   random_sigma  N(mu, 1)            d mu flows
//   random_gaussian N(0, 1)           nothing flows
// The draw is input-independent by design; the head is the whole state.
struct EffectiveGaussian {
    Tensor mu;
    Tensor sigma;
    bool dmu_flows = false;
    bool dsigma_flows = false;
};
EffectiveGaussian infer_gaussian(const PerturbationHead& head, PerturbMode mode);

// One reparameterized draw e = mu + sigma*eps, eps ~ N(0,I).  eps is kept so
// gradients can be chained back through the draw.
struct PerturbSample {
    Tensor e;
    Tensor eps;
};
PerturbSample sample(const EffectiveGaussian& dist, RngStream& rng);

// Offsets are kept positive: h_plus = h + softplus(e).
Scalar softplus(Scalar x);
Scalar sigmoid(Scalar x);
Tensor apply(const Tensor& h, const Tensor& e);

// Chain dL/d(offset) back to the head, where offset = scale * softplus(e) and
// e = mu + sigma*eps.  Accumulates into dmu / dlog_sigma (channel pointers).
void accumulate_head_grads(const EffectiveGaussian& dist, const Scalar* e, const Scalar* eps,
                           std::int64_t channels, Scalar scale, const Scalar* doffset, Scalar* dmu,
                           Scalar* dlog_sigma);

// Mean sigma across every channel of every head (curriculum/metrics signal).
Scalar mean_sigma(const std::vector<PerturbationHead>& heads);

// KL( N(mu, sigma^2) || N(0, I) ) summed over channels, with gradients
// accumulated into the head parameterization (d/d mu, d/d log_sigma).
Scalar kl_standard_normal(const GaussianPerturbation& g, Scalar weight, Scalar* dmu,
                          Scalar* dlog_sigma);

} // namespace ugda
