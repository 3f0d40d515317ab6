#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ugda/backbone.hpp"
#include "ugda/mixup.hpp"
#include "ugda/perturbation.hpp"

namespace ugda {

// Every knob of the domain-synthesis stage in one place.
struct AdaConfig {
    std::string mode = "uncertainty"; // uncertainty | mada (raw-input pipeline)
    Scalar beta = 1.0;                // embedding-distance weight in the ascent objective
    int ascent_steps = 5;             // feature-space attack iterations
    Scalar ascent_lr = 0.05;
    int attack_every = 1;             // re-run the attack every N training iterations
    bool attack_mixup = true;         // attack adapts the interpolation head too
    Scalar alpha_const = 1.0;         // pixel mode: semantic-consistency weight
    Scalar beta_relax = 1e-8;         // pixel mode: reconstruction-distance weight
    Scalar gamma_ascent = 1.0;        // pixel mode: input ascent step size
    int mada_steps = 10;              // pixel mode: ascent iterations
    int pool_batches = 8;             // pixel mode: generated batches kept per domain

    static AdaConfig from(const RunConfig& cfg);
};

// ============================================================================
// AuxModel (psi): the learnable augmentation state — one Gaussian head per
// backbone intercept point plus the interpolation head.  Modes gate which
// parts are live; parameters are always stored in full so the flat layout
// (per head: mu then log_sigma; then mixup W, bias) never changes shape.
// ============================================================================
struct AuxModel {
    std::vector<PerturbationHead> heads;
    MixupHead mixup;
    PerturbMode perturb_mode = PerturbMode::Full;
    MixupMode mixup_mode = MixupMode::Learnable;
    Scalar rho = 0.9;

    static AuxModel init(const Backbone& model, const RunConfig& cfg);

    std::int64_t param_count() const;
    VecX params() const;
    void set_params(const VecX& flat);
};

// A generation recipe: the effective distributions and interpolation
// parameters a domain draws from.  A *live* view is rebuilt from the current
// psi every evaluation (gradients flow); a frozen snapshot is just a stored
// copy of this struct (no gradients).
struct DomainView {
    std::vector<std::string> layers;        // aligned with backbone intercepts
    std::vector<EffectiveGaussian> dists;
    MixupInference mix;
    bool mixup_on = false;
    Scalar rho = 0.9;
};
DomainView make_view(const AuxModel& aux);

// One generated batch together with the records needed to chain gradients
// back to psi.  Labels use the exact expectation over the smoothing gate
// (cross-entropy is linear in the label, so this is the exact expected loss
// and keeps d/d tau well defined).
struct AugmentedBatch {
    PerturbMap offsets;      // per intercept {N, channels}: (1-lambda)*softplus(e)
    Tensor y_plus;           // mixed + expected-smoothed labels {N, classes}
    Tensor y;                // labels fed in
    Tensor y_smoothed;       // fully smoothed labels (for the tau chain)
    struct HeadDraw {
        Tensor e, eps; // {N, channels}
    };
    std::vector<HeadDraw> draws;
    std::vector<LambdaDraw> lambdas; // per example; empty when interpolation is off
};

// base, if given, stacks a previously generated batch's offsets underneath
// the fresh ones (generation "from the union pool": the new domain grows out
// of an existing one).
AugmentedBatch generate_batch(const Backbone& model, const DomainView& view, const Tensor& y,
                              RngStream& rng, const PerturbMap* base = nullptr);

// One Monte-Carlo evaluation of the model on a generated batch.
struct GenEval {
    Scalar task_loss = 0.0;  // cross-entropy on the perturbed batch
    Scalar constraint = 0.0; // mean squared embedding distance ||z - z_plus||^2
    VecX dtheta;             // d(task_loss)/d theta, if requested
    VecX dpsi;               // d(task_loss - beta_in_psi_grad * constraint)/d psi, if requested
};
struct EvalRequest {
    bool dtheta = false;
    bool dpsi = false;
    Scalar beta_in_psi_grad = 0.0;
};
// aux must be the model the view was built from whenever dpsi is requested
// (live domain); frozen snapshots pass nullptr and may not ask for dpsi.
GenEval eval_generated(const Backbone& model, const DomainView& view, const Tensor& x,
                       const Tensor& y, RngStream& rng, const EvalRequest& req,
                       const AuxModel* aux = nullptr, const PerturbMap* base = nullptr,
                       bool mixup_grad = true);

// The feature-space adversarial objective  L_task(theta; S+) - beta ||z-z+||^2
// evaluated with the *current* psi (theta frozen).  Deterministic given the
// rng state.
struct AdaEval {
    Scalar value = 0.0;
    Scalar task_loss = 0.0;
    Scalar constraint = 0.0;
    VecX dpsi; // ascent direction, if requested
};
AdaEval ada_objective(const Backbone& model, const AuxModel& aux, const Tensor& x, const Tensor& y,
                      const AdaConfig& cfg, RngStream& rng, bool want_grads,
                      const PerturbMap* base = nullptr);

// Gradient-ascent attack on psi.  Uses common random numbers: the same draws
// are replayed at every step, so the objective is a smooth deterministic
// function of psi during the ascent.  Aborts with the step index and last
// value if the objective goes non-finite.  lr = 0 leaves psi untouched.
struct AscentReport {
    Scalar initial = 0.0, final = 0.0;
    int steps = 0;
};
AscentReport maximize_aux(const Backbone& model, AuxModel& aux, const Tensor& x, const Tensor& y,
                          const AdaConfig& cfg, RngStream& rng, const PerturbMap* base = nullptr);

// 0.5 ||z - z_plus||^2 + 1e9 * [argmax(y) != argmax(y_plus)], mean over rows.
// Symmetric in its pairs by construction.
Scalar const_loss(const Tensor& z, const Tensor& z_plus, const Tensor& y, const Tensor& y_plus);

// ============================================================================
// Reconstruction guard V for the pixel-space mode: a bottleneck autoencoder
// whose latent distribution is pulled toward N(0, I) with an unbiased
// kernel-MMD penalty.  Encoder/decoder reuse the backbone machinery (their
// linear outputs are the codes/reconstructions).
// ============================================================================
struct Wae {
    Backbone enc, dec;
    int in_dim = 0, hidden = 0, bottleneck = 0;

    static Wae init(int in_dim, int hidden, int bottleneck, RngStream& rng);
    Tensor encode(const Tensor& x) const;      // {N, bottleneck}
    Tensor reconstruct(const Tensor& x) const; // {N, in_dim}
};

Scalar median_bandwidth(const Tensor& a, const Tensor& b);
// Unbiased squared MMD with an RBF kernel exp(-||x-y||^2 / (2 bw^2)).
Scalar mmd_unbiased(const Tensor& a, const Tensor& b, Scalar bw);

struct WaeReport {
    Scalar recon = 0.0; // final-epoch mean ||x - V(x)||^2
    Scalar mmd = 0.0;   // final-epoch mean MMD^2 estimate
    int epochs = 0;
};
WaeReport wae_train(Wae& wae, const Tensor& X, Scalar lambda, int epochs, Scalar lr, int batch,
                    RngStream& rng);

// mean ||x - V(x)||^2 over the batch; optionally its input gradient.
Scalar relax_loss(const Wae& wae, const Tensor& x, Tensor* dinput = nullptr);

// Pixel-space ascent: maximize task loss - alpha*const + beta_relax*relax
// over the inputs, keeping labels fixed and pixels clamped to [0,1].
struct MadaBatch {
    Tensor x_plus;
    Tensor y;
    Tensor x_source; // the inputs the ascent started from (kept for monitoring)
};
MadaBatch mada_generate(const Backbone& model, const Wae& wae, const Tensor& x, const Tensor& y,
                        const AdaConfig& cfg);

} // namespace ugda
