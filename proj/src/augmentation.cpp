#include "ugda/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ugda/optimizer.hpp"

namespace ugda {

namespace {
constexpr Scalar kLabelMismatchPenalty = 1e9;
constexpr Scalar kLogClamp = 1e-12;
} // namespace

AdaConfig AdaConfig::from(const RunConfig& cfg) {
    AdaConfig a;
    a.mode = cfg.get("augment.mode");
    if (a.mode != "uncertainty" && a.mode != "mada")
        throw ConfigError("unknown augment.mode '" + a.mode + "' (uncertainty | mada)");
    a.beta = cfg.get_double("ada.beta");
    a.ascent_steps = static_cast<int>(cfg.get_int("ada.ascent_steps"));
    a.ascent_lr = cfg.get_double("ada.ascent_lr");
    a.attack_every = static_cast<int>(cfg.get_int("ada.attack_every"));
    a.attack_mixup = cfg.get_bool("ada.attack_mixup");
    a.alpha_const = cfg.get_double("mada.alpha_const");
    a.beta_relax = cfg.get_double("mada.beta_relax");
    a.gamma_ascent = cfg.get_double("mada.gamma_ascent");
    a.mada_steps = static_cast<int>(cfg.get_int("mada.ascent_steps"));
    a.pool_batches = static_cast<int>(cfg.get_int("mada.pool_batches"));
    if (a.attack_every < 1) throw ConfigError("ada.attack_every must be >= 1");
    return a;
}

// ---------------------------------------------------------------------------
// AuxModel
// ---------------------------------------------------------------------------

AuxModel AuxModel::init(const Backbone& model, const RunConfig& cfg) {
    AuxModel aux;
    aux.perturb_mode = perturb_mode_from(cfg.get("perturb.mode"));
    aux.mixup_mode = mixup_mode_from(cfg.get("mixup.mode"));
    aux.rho = cfg.get_double("mixup.rho");
    const Scalar init_ls = cfg.get_double("perturb.init_log_sigma");
    for (const auto& layer : model.intercept_points())
        aux.heads.push_back(PerturbationHead::init(layer, model.intercept_channels(layer), init_ls));
    if (aux.heads.empty()) throw ConfigError("backbone has no intercept points to perturb");
    aux.mixup = MixupHead::init();
    if (aux.mixup_mode != MixupMode::Off) {
        const int c = model.classes();
        if (!(aux.rho > 1.0 / static_cast<Scalar>(c)) || !(aux.rho < 1.0))
            throw ConfigError("mixup.rho=" + std::to_string(aux.rho) + " outside (1/" +
                              std::to_string(c) + ", 1)");
    }
    return aux;
}

std::int64_t AuxModel::param_count() const {
    std::int64_t n = 0;
    for (const auto& h : heads) n += 2 * h.dist.channels();
    return n + mixup.W.numel() + mixup.bias.numel();
}

VecX AuxModel::params() const {
    VecX out(param_count());
    Eigen::Index at = 0;
    for (const auto& h : heads) {
        for (Scalar x : h.dist.mu.v) out[at++] = x;
        for (Scalar x : h.dist.log_sigma.v) out[at++] = x;
    }
    for (Scalar x : mixup.W.v) out[at++] = x;
    for (Scalar x : mixup.bias.v) out[at++] = x;
    return out;
}

void AuxModel::set_params(const VecX& flat) {
    if (flat.size() != param_count())
        throw ConfigError("aux model: parameter vector size mismatch");
    Eigen::Index at = 0;
    for (auto& h : heads) {
        for (Scalar& x : h.dist.mu.v) x = flat[at++];
        for (Scalar& x : h.dist.log_sigma.v) x = flat[at++];
    }
    for (Scalar& x : mixup.W.v) x = flat[at++];
    for (Scalar& x : mixup.bias.v) x = flat[at++];
}

DomainView make_view(const AuxModel& aux) {
    DomainView v;
    v.mixup_on = aux.mixup_mode != MixupMode::Off;
    v.rho = aux.rho;
    for (const auto& h : aux.heads) {
        v.layers.push_back(h.layer);
        v.dists.push_back(infer_gaussian(h, aux.perturb_mode));
    }
    if (v.mixup_on) {
        // Interpolation parameters read the first head's effective statistics.
        const EffectiveGaussian& eg = v.dists.front();
        const Scalar mu_mean = eg.mu.vec().mean();
        const Scalar sigma_mean = eg.sigma.vec().mean();
        v.mix = infer_mixup_params(aux.mixup, mu_mean, sigma_mean, aux.mixup_mode);
    }
    return v;
}

// ---------------------------------------------------------------------------
// generation
// ---------------------------------------------------------------------------

AugmentedBatch generate_batch(const Backbone& model, const DomainView& view, const Tensor& y,
                              RngStream& rng, const PerturbMap* base) {
    (void)model;
    if (y.shape.size() != 2) throw ConfigError("generate_batch: labels must be {N,C}");
    const int n = y.shape[0], classes = y.shape[1];

    AugmentedBatch gen;
    gen.y = y;
    gen.draws.resize(view.dists.size());
    for (std::size_t j = 0; j < view.dists.size(); ++j) {
        const int c = view.dists[j].mu.shape[0];
        gen.draws[j].e = Tensor({n, c});
        gen.draws[j].eps = Tensor({n, c});
        gen.offsets[view.layers[j]] = Tensor({n, c});
    }
    if (view.mixup_on) {
        gen.y_smoothed = smoothed_labels(y, view.rho);
        gen.lambdas.resize(static_cast<std::size_t>(n));
        gen.y_plus = Tensor({n, classes});
    } else {
        gen.y_plus = y;
    }

    for (int i = 0; i < n; ++i) {
        // Draw order per example: every head's channels, then lambda.
        for (std::size_t j = 0; j < view.dists.size(); ++j) {
            const EffectiveGaussian& eg = view.dists[j];
            const int c = eg.mu.shape[0];
            Scalar* e = gen.draws[j].e.data() + static_cast<std::int64_t>(i) * c;
            Scalar* eps = gen.draws[j].eps.data() + static_cast<std::int64_t>(i) * c;
            for (int k = 0; k < c; ++k) {
                eps[k] = rng.normal();
                e[k] = eg.mu[k] + eg.sigma[k] * eps[k];
            }
        }
        Scalar scale = 1.0;
        if (view.mixup_on) {
            gen.lambdas[static_cast<std::size_t>(i)] =
                sample_lambda_grad(view.mix.p.a, view.mix.p.b, rng);
            const Scalar lambda = gen.lambdas[static_cast<std::size_t>(i)].lambda;
            scale = 1.0 - lambda;
            // Expected label over the smoothing gate (exact: losses are linear
            // in the label):  y+ = lambda y + (1-lambda)((1-tau) y + tau sm).
            const Scalar tau = view.mix.p.tau;
            for (int k = 0; k < classes; ++k) {
                const Scalar yy = y[static_cast<std::int64_t>(i) * classes + k];
                const Scalar sm = gen.y_smoothed[static_cast<std::int64_t>(i) * classes + k];
                gen.y_plus[static_cast<std::int64_t>(i) * classes + k] =
                    lambda * yy + (1.0 - lambda) * ((1.0 - tau) * yy + tau * sm);
            }
        }
        for (std::size_t j = 0; j < view.dists.size(); ++j) {
            const int c = view.dists[j].mu.shape[0];
            const Scalar* e = gen.draws[j].e.data() + static_cast<std::int64_t>(i) * c;
            Scalar* off = gen.offsets[view.layers[j]].data() + static_cast<std::int64_t>(i) * c;
            for (int k = 0; k < c; ++k) off[k] = scale * softplus(e[k]);
        }
    }

    if (base != nullptr) {
        for (auto& [layer, off] : gen.offsets) {
            auto it = base->find(layer);
            if (it == base->end()) continue;
            if (!it->second.same_shape(off))
                throw ConfigError("base offsets for '" + layer + "' have shape " +
                                  it->second.shape_str() + ", expected " + off.shape_str());
            off.vec() += it->second.vec();
        }
    }
    return gen;
}

// ---------------------------------------------------------------------------
// evaluation with gradient assembly
// ---------------------------------------------------------------------------

namespace {

// Flat psi layout bookkeeping (must mirror AuxModel::params()).
struct PsiLayout {
    std::vector<Eigen::Index> mu_at, ls_at;
    Eigen::Index mw_at = 0, mb_at = 0, total = 0;

    explicit PsiLayout(const AuxModel& aux) {
        Eigen::Index at = 0;
        for (const auto& h : aux.heads) {
            mu_at.push_back(at);
            at += h.dist.channels();
            ls_at.push_back(at);
            at += h.dist.channels();
        }
        mw_at = at;
        at += aux.mixup.W.numel();
        mb_at = at;
        at += aux.mixup.bias.numel();
        total = at;
    }
};

Scalar embedding_distance(const Tensor& z, const Tensor& z_plus) {
    Scalar c = 0.0;
    for (std::int64_t i = 0; i < z.numel(); ++i) {
        const Scalar d = z[i] - z_plus[i];
        c += d * d;
    }
    return c / static_cast<Scalar>(z.shape[0]);
}

} // namespace

// The psi gradient needs the aux model itself (head layout + mixup weights),
// so the internal worker takes it alongside the view built from it.
static GenEval eval_generated_impl(const Backbone& model, const AuxModel* aux,
                                   const DomainView& view, const Tensor& x, const Tensor& y,
                                   RngStream& rng, const EvalRequest& req, bool mixup_grad,
                                   const PerturbMap* base) {
    AugmentedBatch gen = generate_batch(model, view, y, rng, base);
    const int n = y.shape[0], classes = y.shape[1];

    Backbone::Cache cache;
    ForwardTrace plus = model.forward(x, &gen.offsets, cache);
    Tensor z_clean = model.forward(x).z;

    GenEval ev;
    ev.task_loss = cross_entropy(plus.y_hat, gen.y_plus);
    ev.constraint = embedding_distance(z_clean, plus.z);
    if (!req.dtheta && !req.dpsi) return ev;

    Tensor dlogits_task = cross_entropy_dlogits(plus.y_hat, gen.y_plus);

    const Scalar beta = req.beta_in_psi_grad;
    BackboneGrads bg_psi;
    bool theta_done = false;
    if (req.dpsi) {
        Tensor dlogits_psi = dlogits_task;
        if (beta != 0.0) {
            const Scalar s = 2.0 * beta / static_cast<Scalar>(n);
            for (std::int64_t i = 0; i < dlogits_psi.numel(); ++i)
                dlogits_psi[i] -= s * (plus.z[i] - z_clean[i]);
        }
        BackwardRequest breq;
        breq.params = req.dtheta && beta == 0.0;
        breq.intercepts = true;
        bg_psi = model.backward(cache, dlogits_psi, breq);
        if (breq.params) {
            ev.dtheta = std::move(bg_psi.dparams);
            theta_done = true;
        }
    }
    if (req.dtheta && !theta_done) {
        BackwardRequest breq;
        breq.params = true;
        ev.dtheta = model.backward(cache, dlogits_task, breq).dparams;
    }
    if (!req.dpsi) return ev;

    // ---- assemble d/d psi ---------------------------------------------------
    if (aux == nullptr)
        throw ConfigError("psi gradient requested for a frozen domain snapshot");
    PsiLayout lay(*aux);
    ev.dpsi = VecX::Zero(lay.total);

    std::vector<Scalar> dlambda(static_cast<std::size_t>(n), 0.0);
    for (std::size_t j = 0; j < view.dists.size(); ++j) {
        const EffectiveGaussian& eg = view.dists[j];
        const int c = eg.mu.shape[0];
        const Tensor& dd = bg_psi.dintercepts.at(view.layers[j]);
        for (int i = 0; i < n; ++i) {
            const Scalar lambda =
                view.mixup_on ? gen.lambdas[static_cast<std::size_t>(i)].lambda : 0.0;
            const Scalar scale = view.mixup_on ? 1.0 - lambda : 1.0;
            const Scalar* e = gen.draws[j].e.data() + static_cast<std::int64_t>(i) * c;
            const Scalar* eps = gen.draws[j].eps.data() + static_cast<std::int64_t>(i) * c;
            const Scalar* ddr = dd.data() + static_cast<std::int64_t>(i) * c;
            accumulate_head_grads(eg, e, eps, c, scale, ddr, ev.dpsi.data() + lay.mu_at[j],
                                  ev.dpsi.data() + lay.ls_at[j]);
            if (view.mixup_on && mixup_grad)
                for (int k = 0; k < c; ++k) dlambda[static_cast<std::size_t>(i)] -= ddr[k] * softplus(e[k]);
        }
    }

    if (view.mixup_on && mixup_grad) {
        // Label-side chains: d task/d y+ = -log(max(y_hat, eps))/n.
        const Scalar tau = view.mix.p.tau;
        Scalar da = 0.0, db = 0.0, dtau = 0.0;
        for (int i = 0; i < n; ++i) {
            const Scalar lambda = gen.lambdas[static_cast<std::size_t>(i)].lambda;
            Scalar dlam_label = 0.0, dtau_i = 0.0;
            for (int k = 0; k < classes; ++k) {
                const std::int64_t at = static_cast<std::int64_t>(i) * classes + k;
                const Scalar dyp = -std::log(std::max(plus.y_hat[at], kLogClamp)) /
                                   static_cast<Scalar>(n);
                const Scalar yy = gen.y[at], sm = gen.y_smoothed[at];
                const Scalar y_tilde = (1.0 - tau) * yy + tau * sm;
                dlam_label += dyp * (yy - y_tilde);
                dtau_i += dyp * (sm - yy);
            }
            dlambda[static_cast<std::size_t>(i)] += dlam_label;
            dtau += (1.0 - lambda) * dtau_i;
            da += dlambda[static_cast<std::size_t>(i)] * gen.lambdas[static_cast<std::size_t>(i)].dda;
            db += dlambda[static_cast<std::size_t>(i)] * gen.lambdas[static_cast<std::size_t>(i)].ddb;
        }
        Scalar dmu_mean = 0.0, dsigma_mean = 0.0;
        mixup_head_grads(aux->mixup, view.mix, da, db, dtau, ev.dpsi.data() + lay.mw_at,
                         ev.dpsi.data() + lay.mb_at, &dmu_mean, &dsigma_mean);
        // The statistics the interpolation head reads are channel means of the
        // first head's effective distribution — continue the chain there.
        const EffectiveGaussian& eg0 = view.dists.front();
        const int c0 = eg0.mu.shape[0];
        if (eg0.dmu_flows)
            for (int k = 0; k < c0; ++k) ev.dpsi[lay.mu_at[0] + k] += dmu_mean / static_cast<Scalar>(c0);
        if (eg0.dsigma_flows)
            for (int k = 0; k < c0; ++k)
                ev.dpsi[lay.ls_at[0] + k] += dsigma_mean * eg0.sigma[k] / static_cast<Scalar>(c0);
    }
    return ev;
}

GenEval eval_generated(const Backbone& model, const DomainView& view, const Tensor& x,
                       const Tensor& y, RngStream& rng, const EvalRequest& req,
                       const AuxModel* aux, const PerturbMap* base, bool mixup_grad) {
    return eval_generated_impl(model, aux, view, x, y, rng, req, mixup_grad, base);
}

AdaEval ada_objective(const Backbone& model, const AuxModel& aux, const Tensor& x, const Tensor& y,
                      const AdaConfig& cfg, RngStream& rng, bool want_grads,
                      const PerturbMap* base) {
    DomainView view = make_view(aux);
    EvalRequest req;
    req.dpsi = want_grads;
    req.beta_in_psi_grad = cfg.beta;
    GenEval ev = eval_generated_impl(model, &aux, view, x, y, rng, req, cfg.attack_mixup, base);
    AdaEval out;
    out.task_loss = ev.task_loss;
    out.constraint = ev.constraint;
    out.value = ev.task_loss - cfg.beta * ev.constraint;
    if (want_grads) out.dpsi = std::move(ev.dpsi);
    return out;
}

AscentReport maximize_aux(const Backbone& model, AuxModel& aux, const Tensor& x, const Tensor& y,
                          const AdaConfig& cfg, RngStream& rng, const PerturbMap* base) {
    // Common random numbers: the same draws are replayed every step so the
    // sample-average objective is a smooth deterministic function of psi.
    const std::uint64_t crn = rng.fork_seed();
    AscentReport rep;
    Scalar last_finite = 0.0;
    for (int step = 0; step < cfg.ascent_steps; ++step) {
        RngStream r(crn);
        AdaEval ev = ada_objective(model, aux, x, y, cfg, r, true, base);
        if (!std::isfinite(ev.value) || !ev.dpsi.allFinite()) {
            std::ostringstream os;
            os << "adversarial ascent diverged at step " << step << " (last finite objective "
               << last_finite << ")";
            throw NumericError(os.str());
        }
        last_finite = ev.value;
        if (step == 0) rep.initial = ev.value;
        VecX psi = aux.params();
        psi.noalias() += cfg.ascent_lr * ev.dpsi;
        aux.set_params(psi);
        ++rep.steps;
    }
    RngStream r(crn);
    AdaEval ev = ada_objective(model, aux, x, y, cfg, r, false, base);
    if (!std::isfinite(ev.value))
        throw NumericError("adversarial ascent produced a non-finite final objective");
    rep.final = ev.value;
    if (cfg.ascent_steps == 0) rep.initial = ev.value;
    return rep;
}

Scalar const_loss(const Tensor& z, const Tensor& z_plus, const Tensor& y, const Tensor& y_plus) {
    if (!z.same_shape(z_plus))
        throw ConfigError("const_loss: embedding shapes differ: " + z.shape_str() + " vs " +
                          z_plus.shape_str());
    if (!y.same_shape(y_plus))
        throw ConfigError("const_loss: label shapes differ: " + y.shape_str() + " vs " +
                          y_plus.shape_str());
    const int n = z.shape[0], d = z.shape[1];
    const auto cls = argmax_rows(y);
    const auto cls_plus = argmax_rows(y_plus);
    Scalar total = 0.0;
    for (int i = 0; i < n; ++i) {
        Scalar sq = 0.0;
        for (int k = 0; k < d; ++k) {
            const Scalar diff = z[static_cast<std::int64_t>(i) * d + k] -
                                z_plus[static_cast<std::int64_t>(i) * d + k];
            sq += diff * diff;
        }
        total += 0.5 * sq;
        if (cls[static_cast<std::size_t>(i)] != cls_plus[static_cast<std::size_t>(i)])
            total += kLabelMismatchPenalty;
    }
    return total / static_cast<Scalar>(n);
}

// ---------------------------------------------------------------------------
// reconstruction guard (bottleneck autoencoder + MMD prior match)
// ---------------------------------------------------------------------------

Wae Wae::init(int in_dim, int hidden, int bottleneck, RngStream& rng) {
    Wae w;
    w.in_dim = in_dim;
    w.hidden = hidden;
    w.bottleneck = bottleneck;
    auto dense = [](const std::string& name, int in, int out, bool relu) {
        Backbone::Layer l;
        l.kind = Backbone::Layer::Kind::Dense;
        l.name = name;
        l.in_dim = in;
        l.out_dim = out;
        l.relu = relu;
        l.W = Tensor({out, in});
        l.b = Tensor({out});
        return l;
    };
    std::vector<Backbone::Layer> enc_layers{dense("enc1", in_dim, hidden, true),
                                            dense("code", hidden, bottleneck, false)};
    std::vector<Backbone::Layer> dec_layers{dense("dec1", bottleneck, hidden, true),
                                            dense("out", hidden, in_dim, false)};
    w.enc = Backbone::custom(std::move(enc_layers), {in_dim}, bottleneck);
    w.dec = Backbone::custom(std::move(dec_layers), {bottleneck}, in_dim);
    w.enc.init_params(rng);
    w.dec.init_params(rng);
    return w;
}

Tensor Wae::encode(const Tensor& x) const { return enc.forward(x).z; }

Tensor Wae::reconstruct(const Tensor& x) const { return dec.forward(enc.forward(x).z).z; }

Scalar median_bandwidth(const Tensor& a, const Tensor& b) {
    const int na = a.shape[0], nb = b.shape[0], d = a.shape[1];
    std::vector<Scalar> dists;
    auto row = [&](const Tensor& t, int i) { return t.data() + static_cast<std::int64_t>(i) * d; };
    auto push = [&](const Scalar* x, const Scalar* y) {
        Scalar sq = 0.0;
        for (int k = 0; k < d; ++k) {
            const Scalar diff = x[k] - y[k];
            sq += diff * diff;
        }
        dists.push_back(std::sqrt(sq));
    };
    for (int i = 0; i < na; ++i)
        for (int j = i + 1; j < na; ++j) push(row(a, i), row(a, j));
    for (int i = 0; i < nb; ++i)
        for (int j = i + 1; j < nb; ++j) push(row(b, i), row(b, j));
    for (int i = 0; i < na; ++i)
        for (int j = 0; j < nb; ++j) push(row(a, i), row(b, j));
    if (dists.empty()) return 1.0;
    std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
    const Scalar med = dists[dists.size() / 2];
    return med > 0.0 ? med : 1.0;
}

namespace {

// Unbiased MMD^2 between rows of a and b; optionally the gradient w.r.t. a's
// rows (bandwidth treated as a constant).
Scalar mmd_unbiased_impl(const Tensor& a, const Tensor& b, Scalar bw, Tensor* da) {
    const int n = a.shape[0], m = b.shape[0], d = a.shape[1];
    if (b.shape[1] != d) throw ConfigError("mmd: dimension mismatch");
    if (n < 2 || m < 2) throw ConfigError("mmd: need at least two samples on each side");
    const Scalar inv2bw2 = 1.0 / (2.0 * bw * bw);
    auto row = [](const Tensor& t, int i, int d_) { return t.data() + static_cast<std::int64_t>(i) * d_; };
    auto kern = [&](const Scalar* x, const Scalar* y) {
        Scalar sq = 0.0;
        for (int k = 0; k < d; ++k) {
            const Scalar diff = x[k] - y[k];
            sq += diff * diff;
        }
        return std::exp(-sq * inv2bw2);
    };
    if (da != nullptr) *da = Tensor(a.shape);

    Scalar taa = 0.0, tbb = 0.0, tab = 0.0;
    const Scalar caa = 1.0 / (static_cast<Scalar>(n) * (n - 1));
    const Scalar cbb = 1.0 / (static_cast<Scalar>(m) * (m - 1));
    const Scalar cab = 2.0 / (static_cast<Scalar>(n) * m);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const Scalar k = kern(row(a, i, d), row(a, j, d));
            taa += 2.0 * k;
            if (da != nullptr) {
                // d k / d a_i = -k (a_i - a_j)/bw^2; the (j,i) term doubles it.
                const Scalar coef = 2.0 * caa * k / (bw * bw);
                for (int t = 0; t < d; ++t) {
                    const Scalar diff = a[static_cast<std::int64_t>(i) * d + t] -
                                        a[static_cast<std::int64_t>(j) * d + t];
                    (*da)[static_cast<std::int64_t>(i) * d + t] -= coef * diff;
                    (*da)[static_cast<std::int64_t>(j) * d + t] += coef * diff;
                }
            }
        }
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) tbb += 2.0 * kern(row(b, i, d), row(b, j, d));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            const Scalar k = kern(row(a, i, d), row(b, j, d));
            tab += k;
            if (da != nullptr) {
                const Scalar coef = cab * k / (bw * bw);
                for (int t = 0; t < d; ++t) {
                    const Scalar diff = a[static_cast<std::int64_t>(i) * d + t] -
                                        b[static_cast<std::int64_t>(j) * d + t];
                    (*da)[static_cast<std::int64_t>(i) * d + t] += coef * diff;
                }
            }
        }
    return caa * taa + cbb * tbb - cab * tab;
}

} // namespace

Scalar mmd_unbiased(const Tensor& a, const Tensor& b, Scalar bw) {
    return mmd_unbiased_impl(a, b, bw, nullptr);
}

WaeReport wae_train(Wae& wae, const Tensor& X, Scalar lambda, int epochs, Scalar lr, int batch,
                    RngStream& rng) {
    if (X.shape.size() != 2 || X.shape[1] != wae.in_dim)
        throw ConfigError("wae_train: data must be {N," + std::to_string(wae.in_dim) + "}, got " +
                          X.shape_str());
    const int n = X.shape[0];
    if (n < 4) throw ConfigError("wae_train: need at least 4 examples");
    batch = std::min(batch, n);

    const Eigen::Index pe = wae.enc.param_count(), pd = wae.dec.param_count();
    Optimizer opt = Optimizer::make("adam", pe + pd, lr);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    WaeReport rep;
    rep.epochs = epochs;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        // Fisher-Yates with the run's stream keeps the whole schedule replayable.
        for (int i = n - 1; i > 0; --i)
            std::swap(order[static_cast<std::size_t>(i)],
                      order[rng.integer(static_cast<std::uint64_t>(i + 1))]);
        Scalar recon_sum = 0.0, mmd_sum = 0.0;
        int batches = 0;
        for (int start = 0; start + 1 < n; start += batch) {
            const int bn = std::min(batch, n - start);
            if (bn < 2) break;
            Tensor xb({bn, wae.in_dim});
            for (int i = 0; i < bn; ++i)
                for (int k = 0; k < wae.in_dim; ++k)
                    xb[static_cast<std::int64_t>(i) * wae.in_dim + k] =
                        X[static_cast<std::int64_t>(order[static_cast<std::size_t>(start + i)]) *
                              wae.in_dim + k];

            Backbone::Cache ec, dc;
            Tensor code = wae.enc.forward(xb, nullptr, ec).z;
            Tensor v = wae.dec.forward(code, nullptr, dc).z;

            Scalar recon = 0.0;
            Tensor dv({bn, wae.in_dim});
            for (std::int64_t i = 0; i < v.numel(); ++i) {
                const Scalar diff = v[i] - xb[i];
                recon += diff * diff;
                dv[i] = 2.0 * diff / static_cast<Scalar>(bn);
            }
            recon /= static_cast<Scalar>(bn);

            Tensor prior({bn, wae.bottleneck});
            for (std::int64_t i = 0; i < prior.numel(); ++i) prior[i] = rng.normal();
            const Scalar bw = median_bandwidth(code, prior);
            Tensor dcode_mmd;
            const Scalar mmd = mmd_unbiased_impl(code, prior, bw, &dcode_mmd);

            const Scalar loss = recon + lambda * mmd;
            if (!std::isfinite(loss))
                throw NumericError("reconstructor training diverged (epoch " +
                                   std::to_string(epoch) + ", loss non-finite)");
            recon_sum += recon;
            mmd_sum += mmd;
            ++batches;

            BackwardRequest breq;
            breq.params = true;
            breq.input = true;
            BackboneGrads gd = wae.dec.backward(dc, dv, breq);
            Tensor dcode = gd.dinput;
            for (std::int64_t i = 0; i < dcode.numel(); ++i) dcode[i] += lambda * dcode_mmd[i];
            BackwardRequest ereq;
            ereq.params = true;
            BackboneGrads ge = wae.enc.backward(ec, dcode, ereq);

            VecX params(pe + pd), grad(pe + pd);
            params << wae.enc.params(), wae.dec.params();
            grad << ge.dparams, gd.dparams;
            opt.step(params, grad);
            wae.enc.set_params(params.head(pe));
            wae.dec.set_params(params.tail(pd));
        }
        if (batches > 0) {
            rep.recon = recon_sum / batches;
            rep.mmd = mmd_sum / batches;
        }
    }
    return rep;
}

Scalar relax_loss(const Wae& wae, const Tensor& x, Tensor* dinput) {
    if (x.shape.size() != 2 || x.shape[1] != wae.in_dim)
        throw ConfigError("relax_loss: input must be {N," + std::to_string(wae.in_dim) + "}, got " +
                          x.shape_str());
    const int n = x.shape[0];
    Backbone::Cache ec, dc;
    Tensor code = wae.enc.forward(x, nullptr, ec).z;
    Tensor v = wae.dec.forward(code, nullptr, dc).z;
    Scalar loss = 0.0;
    for (std::int64_t i = 0; i < v.numel(); ++i) {
        const Scalar diff = x[i] - v[i];
        loss += diff * diff;
    }
    loss /= static_cast<Scalar>(n);
    if (dinput != nullptr) {
        // d/dx of mean||x - V(x)||^2: the direct term plus the path through V.
        Tensor dv({n, wae.in_dim});
        for (std::int64_t i = 0; i < v.numel(); ++i)
            dv[i] = -2.0 * (x[i] - v[i]) / static_cast<Scalar>(n);
        BackwardRequest breq;
        breq.input = true;
        breq.params = false;
        Tensor dcode = wae.dec.backward(dc, dv, breq).dinput;
        Tensor dx_via_v = wae.enc.backward(ec, dcode, breq).dinput;
        *dinput = Tensor(x.shape);
        for (std::int64_t i = 0; i < x.numel(); ++i)
            (*dinput)[i] = 2.0 * (x[i] - v[i]) / static_cast<Scalar>(n) + dx_via_v[i];
    }
    return loss;
}

MadaBatch mada_generate(const Backbone& model, const Wae& wae, const Tensor& x, const Tensor& y,
                        const AdaConfig& cfg) {
    MadaBatch out;
    out.x_plus = x;
    out.y = y;
    out.x_source = x;
    const int n = x.shape[0];
    const int flat = static_cast<int>(x.numel() / n);
    const Tensor z_anchor = model.forward(x).z;

    for (int step = 0; step < cfg.mada_steps; ++step) {
        Backbone::Cache cache;
        ForwardTrace tr = model.forward(out.x_plus, nullptr, cache);
        // Ascent objective: task loss - alpha*||z_anchor - z||^2/2 + relax.
        Tensor dlogits = cross_entropy_dlogits(tr.y_hat, y);
        const Scalar ca = cfg.alpha_const / static_cast<Scalar>(n);
        for (std::int64_t i = 0; i < dlogits.numel(); ++i)
            dlogits[i] += ca * (z_anchor[i] - tr.z[i]);
        BackwardRequest breq;
        breq.params = false;
        breq.input = true;
        Tensor dx = model.backward(cache, dlogits, breq).dinput;

        if (cfg.beta_relax != 0.0) {
            Tensor flat_x = out.x_plus;
            flat_x.shape = {n, flat};
            Tensor drelax;
            const Scalar r = relax_loss(wae, flat_x, &drelax);
            if (!std::isfinite(r))
                throw NumericError("input-space ascent: reconstruction term non-finite at step " +
                                   std::to_string(step));
            for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] += cfg.beta_relax * drelax[i];
        }
        if (!all_finite(dx))
            throw NumericError("input-space ascent diverged at step " + std::to_string(step));
        for (std::int64_t i = 0; i < out.x_plus.numel(); ++i) {
            out.x_plus[i] += cfg.gamma_ascent * dx[i];
            out.x_plus[i] = std::clamp(out.x_plus[i], 0.0, 1.0);
        }
    }
    return out;
}

} // namespace ugda
