#include "ugda/uncertainty.hpp"

#include <chrono>
#include <cmath>

#include "ugda/errors.hpp"
#include "ugda/perturbation.hpp"

namespace ugda {

Scalar domain_uncertainty_score(const VecX& sigma_target, const VecX& sigma_source) {
    if (sigma_target.size() != sigma_source.size())
        throw ConfigError("uncertainty score: sigma vectors differ in length (" +
                          std::to_string(sigma_target.size()) + " vs " +
                          std::to_string(sigma_source.size()) + ")");
    if (sigma_source.size() == 0) return 0.0;
    Scalar sum = 0.0;
    for (Eigen::Index i = 0; i < sigma_source.size(); ++i) {
        if (sigma_source[i] <= 0.0)
            throw ConfigError("uncertainty score: sigma_source[" + std::to_string(i) +
                              "] = " + std::to_string(sigma_source[i]) +
                              " is not positive; cannot normalize");
        sum += std::abs((sigma_target[i] - sigma_source[i]) / sigma_source[i]);
    }
    return sum / static_cast<Scalar>(sigma_source.size());
}

VecX sigma_vector(const AuxModel& aux) {
    Eigen::Index total = 0;
    for (const auto& h : aux.heads) total += h.dist.channels();
    VecX out(total);
    Eigen::Index at = 0;
    for (const auto& h : aux.heads) {
        const Tensor s = h.dist.sigma();
        for (std::int64_t c = 0; c < s.numel(); ++c) out[at++] = s[c];
    }
    return out;
}

namespace {

// Rows [start, start+rows) of the batch, wrapping around the end.
Tensor probe_slice(const Tensor& probe, int start, int rows) {
    const int n = probe.shape[0];
    const std::int64_t per = probe.numel() / n;
    std::vector<int> shape = probe.shape;
    shape[0] = rows;
    Tensor out(shape);
    for (int r = 0; r < rows; ++r) {
        const int src = (start + r) % n;
        std::copy(probe.v.begin() + src * per, probe.v.begin() + (src + 1) * per,
                  out.v.begin() + static_cast<std::int64_t>(r) * per);
    }
    return out;
}

// One draw of per-head offsets, broadcast over the batch rows.
struct DrawnOffsets {
    PerturbMap offsets;
    std::vector<PerturbSample> samples;
    std::vector<EffectiveGaussian> dists;
};

DrawnOffsets draw_offsets(const AuxModel& aux, int n, RngStream& rng) {
    DrawnOffsets d;
    for (const auto& h : aux.heads) {
        EffectiveGaussian eg = infer_gaussian(h, aux.perturb_mode);
        PerturbSample s = sample(eg, rng);
        const std::int64_t c = s.e.numel();
        Tensor off({n, static_cast<int>(c)});
        for (int r = 0; r < n; ++r)
            for (std::int64_t j = 0; j < c; ++j) off[r * c + j] = softplus(s.e[j]);
        d.offsets[h.layer] = std::move(off);
        d.samples.push_back(std::move(s));
        d.dists.push_back(std::move(eg));
    }
    return d;
}

} // namespace

VecX infer_sigma_target(const Backbone& model, const AuxModel& aux, const Tensor& probe,
                        int adapt_steps, Scalar adapt_lr, int slice_rows, int draws,
                        RngStream& rng) {
    if (probe.shape.empty() || probe.shape[0] == 0)
        throw ConfigError("infer_sigma_target: empty probe batch");
    if (adapt_steps < 0) throw ConfigError("uncertainty.adapt_steps must be >= 0");
    if (adapt_steps == 0) return sigma_vector(aux);
    if (slice_rows < 1) throw ConfigError("uncertainty.adapt_batch must be >= 1");
    if (draws < 1) throw ConfigError("uncertainty.adapt_draws must be >= 1");

    AuxModel adapted = aux; // theta and the caller's psi stay untouched
    const int n = probe.shape[0];
    const int rows = std::min(slice_rows, n);
    const int classes = model.classes();

    // Self-consistency descent: pseudo-labels come from the clean forward,
    // and the heads *descend* CE(perturbed forward, pseudo-labels).  On the
    // source the model was trained to resist exactly these perturbations, so
    // the objective is already near zero and sigma barely moves; on a shifted
    // domain the trained noise still flips predictions, the gradient is
    // large, and sigma travels.  That displacement is the uncertainty signal,
    // and the dynamics are self-limiting (smaller sigma -> smaller gradient).
    for (int step = 0; step < adapt_steps; ++step) {
        const Tensor x = probe_slice(probe, (step * rows) % n, rows);
        const ForwardTrace clean = model.forward(x);
        const Tensor pseudo = one_hot(argmax_rows(clean.y_hat), classes);

        std::vector<std::vector<Scalar>> dmu(adapted.heads.size()), dls(adapted.heads.size());
        for (std::size_t hi = 0; hi < adapted.heads.size(); ++hi) {
            dmu[hi].assign(adapted.heads[hi].dist.channels(), 0.0);
            dls[hi].assign(adapted.heads[hi].dist.channels(), 0.0);
        }
        for (int dr = 0; dr < draws; ++dr) {
            DrawnOffsets d = draw_offsets(adapted, rows, rng);
            Backbone::Cache cache;
            const ForwardTrace tr = model.forward(x, &d.offsets, cache);
            const Scalar objective = cross_entropy(tr.y_hat, pseudo);
            if (!std::isfinite(objective))
                throw NumericError("uncertainty adaptation: objective became non-finite at step " +
                                   std::to_string(step + 1));

            Tensor dlogits = cross_entropy_dlogits(tr.y_hat, pseudo);
            BackwardRequest br;
            br.intercepts = true;
            const BackboneGrads grads = model.backward(cache, dlogits, br);

            for (std::size_t hi = 0; hi < adapted.heads.size(); ++hi) {
                const PerturbationHead& head = adapted.heads[hi];
                const Tensor& dint = grads.dintercepts.at(head.layer); // {rows, c}
                const std::int64_t c = head.dist.channels();
                std::vector<Scalar> dsum(c, 0.0);
                for (int r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < c; ++j) dsum[j] += dint[r * c + j];
                accumulate_head_grads(d.dists[hi], d.samples[hi].e.data(),
                                      d.samples[hi].eps.data(), c, 1.0 / draws, dsum.data(),
                                      dmu[hi].data(), dls[hi].data());
            }
        }
        for (std::size_t hi = 0; hi < adapted.heads.size(); ++hi) {
            PerturbationHead& head = adapted.heads[hi];
            const std::int64_t c = head.dist.channels();
            for (std::int64_t j = 0; j < c; ++j) {
                head.dist.mu[j] -= adapt_lr * dmu[hi][j];
                head.dist.log_sigma[j] -= adapt_lr * dls[hi][j];
            }
        }
    }
    return sigma_vector(adapted);
}

Scalar bayesian_baseline(const Backbone& model, const AuxModel& aux, const Tensor& probe,
                         int n_samples, RngStream& rng) {
    if (probe.shape.empty() || probe.shape[0] == 0)
        throw ConfigError("bayesian_baseline: empty probe batch");
    if (n_samples < 2)
        throw ConfigError("bayesian_baseline: need at least 2 stochastic forwards, got " +
                          std::to_string(n_samples));
    const int n = probe.shape[0];
    const int classes = model.classes();
    MatX sum = MatX::Zero(n, classes), sumsq = MatX::Zero(n, classes);
    for (int s = 0; s < n_samples; ++s) {
        DrawnOffsets d = draw_offsets(aux, n, rng);
        const ForwardTrace tr = model.forward(probe, &d.offsets);
        ConstMatMap p = tr.y_hat.mat(n, classes);
        sum += p;
        sumsq += p.cwiseProduct(p);
    }
    // Unbiased sample variance per (example, class), then the grand mean.
    const Scalar ns = static_cast<Scalar>(n_samples);
    const MatX var = (sumsq - sum.cwiseProduct(sum) / ns) / (ns - 1.0);
    return var.cwiseMax(0.0).mean();
}

UncertaintyReport uncertainty_report(const Backbone& model, const AuxModel& aux,
                                     const Tensor& probe, const RunConfig& cfg, RngStream& rng,
                                     bool with_baseline) {
    using clock = std::chrono::steady_clock;
    UncertaintyReport rep;
    rep.sigma_source = sigma_vector(aux);

    const auto t0 = clock::now();
    rep.sigma_target = infer_sigma_target(
        model, aux, probe, static_cast<int>(cfg.get_int("uncertainty.adapt_steps")),
        cfg.get_double("uncertainty.adapt_lr"),
        static_cast<int>(cfg.get_int("uncertainty.adapt_batch")),
        static_cast<int>(cfg.get_int("uncertainty.adapt_draws")), rng);
    rep.score = domain_uncertainty_score(rep.sigma_target, rep.sigma_source);
    rep.wall_time_score = std::chrono::duration<double>(clock::now() - t0).count();

    if (with_baseline) {
        const auto t1 = clock::now();
        rep.baseline_variance = bayesian_baseline(
            model, aux, probe, static_cast<int>(cfg.get_int("uncertainty.bayes_samples")), rng);
        rep.wall_time_baseline = std::chrono::duration<double>(clock::now() - t1).count();
    }
    return rep;
}

} // namespace ugda
