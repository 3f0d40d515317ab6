#pragma once

#include <optional>

#include "ugda/augmentation.hpp"
#include "ugda/backbone.hpp"
#include "ugda/config.hpp"
#include "ugda/rng.hpp"
#include "ugda/tensor.hpp"

namespace ugda {

// ============================================================================
// Deployment-time domain uncertainty: how far the perturbation scales drift
// when the heads are briefly re-adapted to a probe batch from an unknown
// domain.  Validated against the classic stochastic-forward variance baseline
// (which costs many full passes; the score needs only a few small ones).
// ============================================================================

struct UncertaintyReport {
    Scalar score = 0.0;
    VecX sigma_source; // per-channel scales captured from the trained heads
    VecX sigma_target; // scales after adaptation to the probe
    std::optional<Scalar> baseline_variance;
    double wall_time_score = 0.0; // seconds
    std::optional<double> wall_time_baseline;
};

// mean over channels of |(sigma_T - sigma_S) / sigma_S|.  Shapes must match
// and sigma_S must be positive elementwise (normalization).
Scalar domain_uncertainty_score(const VecX& sigma_target, const VecX& sigma_source);

// Concatenated standard deviations of every head channel, in head order.
VecX sigma_vector(const AuxModel& aux);

// The sigma vector characterizing an unlabeled probe batch: a copy of the
// heads runs adapt_steps self-consistency updates (descend cross-entropy of
// the perturbed forward against the clean forward's argmax; theta stays
// frozen), then its scales are read off.  Where the model resists its own
// trained perturbations the objective is near zero and sigma stays put, so
// the travelled distance grades with domain shift.  Each step uses a
// rotating slice of at most slice_rows probe rows with the head gradient
// averaged over `draws` independent offset samples, which keeps the read-out
// far cheaper than repeated full forwards.  adapt_steps = 0 returns the
// source scales unchanged.
VecX infer_sigma_target(const Backbone& model, const AuxModel& aux, const Tensor& probe,
                        int adapt_steps, Scalar adapt_lr, int slice_rows, int draws,
                        RngStream& rng);

// Variance of the softmax outputs across n_samples stochastic forwards
// (offsets re-drawn from the heads each pass), averaged over batch and
// classes.  Requires n_samples >= 2.
Scalar bayesian_baseline(const Backbone& model, const AuxModel& aux, const Tensor& probe,
                         int n_samples, RngStream& rng);

// Timed end-to-end record; with_baseline adds the stochastic-forward
// reference (slow path).  Reads uncertainty.* configuration keys.
UncertaintyReport uncertainty_report(const Backbone& model, const AuxModel& aux,
                                     const Tensor& probe, const RunConfig& cfg, RngStream& rng,
                                     bool with_baseline);

} // namespace ugda
