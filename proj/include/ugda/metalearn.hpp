#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "ugda/augmentation.hpp"
#include "ugda/backbone.hpp"
#include "ugda/data.hpp"
#include "ugda/optimizer.hpp"

namespace ugda {

// A pure loss evaluation over a flat parameter vector; fills *grad when it is
// non-null.  The meta machinery below is written against this signature so
// the chain rule can be verified on closed-form scalar problems.
using LossFn = std::function<Scalar(const VecX& theta, VecX* grad)>;

struct MetaLossReport {
    Scalar loss_meta_train = 0.0;
    std::vector<Scalar> losses_meta_test; // one entry per synthesized domain
    Scalar loss_total = 0.0;              // loss_meta_train + sum(losses_meta_test)
    Scalar kl_surrogate = 0.0;            // mean ||z - z+||^2 across domain evals (monitoring)
};

// One virtual inner step: theta_hat = theta - eta * grad(train).  Does not
// touch the caller's parameters.
VecX meta_train_step(const LossFn& train, const VecX& theta, Scalar eta, Scalar* loss = nullptr,
                     VecX* grad = nullptr);

// Full gradient of  L_train(theta) + sum_k L_test_k(theta - eta grad L_train):
//   g_train + G - eta * H_train * G,   G = sum_k grad L_test_k(theta_hat),
// with the Hessian-vector product taken by central differences of the train
// gradient (exact on quadratics).  first_order drops the H term.  Each test
// function is invoked exactly once, at theta_hat.
VecX meta_total_gradient(const LossFn& train, const std::vector<LossFn>& tests, const VecX& theta,
                         Scalar eta, bool first_order, MetaLossReport* rep = nullptr);

// ============================================================================
// MetaState: everything a training run carries between iterations; the unit
// of checkpointing.
// ============================================================================
struct DomainSnapshot {
    bool live = false;  // reads the current aux parameters (gradients flow)
    bool pixel = false; // stored input-space batches instead of a recipe
    DomainView view;    // frozen generation recipe (stochastic domains)
    std::vector<MadaBatch> pool; // pixel-mode data
};

struct MetaState {
    RunConfig cfg;
    Backbone model;
    AuxModel aux;
    std::vector<DomainSnapshot> domains;
    std::int64_t iteration = 0;
    std::int64_t domains_introduced = 0; // survives eviction of old snapshots
    Scalar val_accuracy = 0.0;           // latest held-out measurement (metrics carry it)
    RngStream rng;
    Optimizer opt_theta, opt_psi;
    std::optional<Wae> wae; // pixel mode only
    BatchStream stream;
};

// Fresh state from a config (parameters initialized, iteration 0).  The batch
// stream is attached by run_training once the dataset size is known.
MetaState init_state(const RunConfig& cfg);

// Monte-Carlo negative log-likelihood of a domain at the given model
// parameters: K draws for stochastic domains, a stored batch for pixel
// domains.  aux must be passed for the live domain (psi gradients).
struct McEval {
    Scalar nll = 0.0;
    Scalar kl_surrogate = 0.0;
    VecX dtheta;
    VecX dpsi;
};
McEval mc_nll(const Backbone& model, const DomainSnapshot& dom, const AuxModel* aux,
              const Tensor& x, const Tensor& y, int k_mc, RngStream& rng, bool want_dtheta,
              bool want_dpsi);

struct MetaBatch {
    Tensor x, y;
};

// One outer iteration: virtual inner step on the train batch, domain
// evaluations at theta_hat, combined (second-order) update of theta, and —
// when meta.update_psi is on — a descent step on psi from the live domain.
MetaLossReport meta_update(MetaState& st, const MetaBatch& train,
                           const std::vector<MetaBatch>& test_batches);

// ============================================================================
// Training driver: the full schedule.  K domains are introduced at evenly
// spaced segment boundaries (each new one starts live; the previous live one
// is frozen).  Per iteration: optional adversarial refresh of psi, then one
// meta update; a metrics row goes to <output_dir>/metrics.csv.  Checkpoints
// land in <output_dir>/checkpoint.ckpt on the configured schedule and at the
// end; a non-finite loss aborts with a pointer to the last good checkpoint.
// ============================================================================
MetaState run_training(const RunConfig& cfg, const Dataset& train_ds, const Dataset& val_ds,
                       std::ostream* log = nullptr);

// Continuation used by --resume (state already holds progress).
void continue_training(MetaState& st, const Dataset& train_ds, const Dataset& val_ds,
                       std::ostream* log = nullptr);

// Plain accuracy of the model on a dataset, evaluated in minibatches.
Scalar evaluate_accuracy(const Backbone& model, const Dataset& ds, int batch = 256);

} // namespace ugda
