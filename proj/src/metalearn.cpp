#include "ugda/metalearn.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ugda/checkpoint.hpp"
#include "ugda/errors.hpp"

namespace ugda {

// ============================================================================
// Meta-gradient core
// ============================================================================

VecX meta_train_step(const LossFn& train, const VecX& theta, Scalar eta, Scalar* loss,
                     VecX* grad) {
    VecX g(theta.size());
    const Scalar l = train(theta, &g);
    if (loss) *loss = l;
    if (grad) *grad = g;
    return theta - eta * g;
}

VecX meta_total_gradient(const LossFn& train, const std::vector<LossFn>& tests, const VecX& theta,
                         Scalar eta, bool first_order, MetaLossReport* rep) {
    MetaLossReport local;
    MetaLossReport& r = rep ? *rep : local;
    r = MetaLossReport{};

    VecX g_train(theta.size());
    r.loss_meta_train = train(theta, &g_train);
    r.loss_total = r.loss_meta_train;
    VecX total = g_train;
    if (tests.empty()) return total;

    const VecX theta_hat = theta - eta * g_train;
    VecX big_g = VecX::Zero(theta.size());
    VecX gk(theta.size());
    for (const auto& t : tests) {
        const Scalar lk = t(theta_hat, &gk);
        r.losses_meta_test.push_back(lk);
        r.loss_total += lk;
        big_g += gk;
    }
    total += big_g;

    // Second-order term -eta * H_train(theta) * G, by central differences of
    // the train gradient along G.  Exact on quadratics; the step is scaled by
    // 1/||G|| so the probe stays in the regime where the loss is smooth.
    if (!first_order && eta != 0.0) {
        const Scalar gnorm = big_g.norm();
        if (gnorm > 1e-12) {
            const Scalar h = 1e-3 / gnorm;
            VecX gp(theta.size()), gm(theta.size());
            train(theta + h * big_g, &gp);
            train(theta - h * big_g, &gm);
            total.noalias() -= eta * ((gp - gm) / (2.0 * h));
        }
    }
    return total;
}

// ============================================================================
// State construction
// ============================================================================

MetaState init_state(const RunConfig& cfg) {
    if (cfg.get_int("meta.k_mc") < 1) throw ConfigError("meta.k_mc must be >= 1");
    if (cfg.get_int("meta.k_domains") < 0) throw ConfigError("meta.k_domains must be >= 0");
    if (cfg.get_int("meta.k_max") < 1) throw ConfigError("meta.k_max must be >= 1");
    if (cfg.get_int("meta.batch") < 1) throw ConfigError("meta.batch must be >= 1");
    if (cfg.get_int("meta.iterations") < 0) throw ConfigError("meta.iterations must be >= 0");
    if (cfg.get_int("train.val_every") < 1) throw ConfigError("train.val_every must be >= 1");
    if (cfg.get_int("train.checkpoint_every") < 1)
        throw ConfigError("train.checkpoint_every must be >= 1");
    AdaConfig::from(cfg); // validates the augmentation block early

    MetaState st;
    st.cfg = cfg;
    st.rng = RngStream(static_cast<std::uint64_t>(cfg.get_int("seed")));
    st.model = Backbone::make(cfg);
    st.model.init_params(st.rng);
    st.aux = AuxModel::init(st.model, cfg);
    st.opt_theta =
        Optimizer::make(cfg.get("meta.optimizer"), st.model.param_count(), cfg.get_double("meta.eta"));
    st.opt_psi =
        Optimizer::make(cfg.get("meta.optimizer"), st.aux.param_count(), cfg.get_double("meta.psi_lr"));
    return st;
}

// ============================================================================
// Domain evaluation
// ============================================================================

McEval mc_nll(const Backbone& model, const DomainSnapshot& dom, const AuxModel* aux,
              const Tensor& x, const Tensor& y, int k_mc, RngStream& rng, bool want_dtheta,
              bool want_dpsi) {
    McEval out;

    if (dom.pixel) {
        if (dom.pool.empty()) throw ConfigError("pixel domain has an empty batch pool");
        const MadaBatch& mb = dom.pool[rng.integer(dom.pool.size())];
        Backbone::Cache cache;
        const ForwardTrace tp = model.forward(mb.x_plus, nullptr, cache);
        out.nll = cross_entropy(tp.y_hat, mb.y);
        const ForwardTrace ts = model.forward(mb.x_source);
        const int n = tp.z.shape[0];
        Scalar dist = 0.0;
        for (std::int64_t j = 0; j < tp.z.numel(); ++j) {
            const Scalar d = ts.z[j] - tp.z[j];
            dist += d * d;
        }
        out.kl_surrogate = dist / n;
        if (want_dtheta) {
            BackwardRequest br;
            br.params = true;
            out.dtheta = model.backward(cache, cross_entropy_dlogits(tp.y_hat, mb.y), br).dparams;
        }
        return out;
    }

    if (k_mc < 1) throw ConfigError("mc_nll: k_mc must be >= 1");
    DomainView live_view;
    const DomainView* view = &dom.view;
    if (dom.live) {
        if (!aux) throw ConfigError("mc_nll: live domain evaluation needs the aux model");
        live_view = make_view(*aux);
        view = &live_view;
    }

    EvalRequest req;
    req.dtheta = want_dtheta;
    req.dpsi = want_dpsi && dom.live;
    req.beta_in_psi_grad = 0.0; // psi minimizes the plain expected task loss

    for (int k = 0; k < k_mc; ++k) {
        const GenEval ev =
            eval_generated(model, *view, x, y, rng, req, dom.live ? aux : nullptr);
        out.nll += ev.task_loss;
        out.kl_surrogate += ev.constraint;
        if (req.dtheta) {
            if (out.dtheta.size() == 0) out.dtheta = VecX::Zero(ev.dtheta.size());
            out.dtheta += ev.dtheta;
        }
        if (req.dpsi) {
            if (out.dpsi.size() == 0) out.dpsi = VecX::Zero(ev.dpsi.size());
            out.dpsi += ev.dpsi;
        }
    }
    const Scalar inv = 1.0 / k_mc;
    out.nll *= inv;
    out.kl_surrogate *= inv;
    if (out.dtheta.size()) out.dtheta *= inv;
    if (out.dpsi.size()) out.dpsi *= inv;
    return out;
}

// ============================================================================
// One outer iteration
// ============================================================================

MetaLossReport meta_update(MetaState& st, const MetaBatch& train,
                           const std::vector<MetaBatch>& test_batches) {
    const RunConfig& cfg = st.cfg;
    // meta.joint collapses the inner step (theta_hat = theta): source and
    // synthesized domains are then trained together without meta-learning.
    const Scalar eta = cfg.get_bool("meta.joint") ? 0.0 : cfg.get_double("meta.eta");
    const int k_mc = static_cast<int>(cfg.get_int("meta.k_mc"));
    const bool first_order = cfg.get_bool("meta.first_order");
    const bool update_psi = cfg.get_bool("meta.update_psi");
    if (!test_batches.empty() && test_batches.size() != st.domains.size())
        throw ConfigError("meta_update: need one test batch per domain (" +
                          std::to_string(st.domains.size()) + "), got " +
                          std::to_string(test_batches.size()));

    Backbone scratch = st.model; // closures evaluate at arbitrary parameter points

    LossFn train_fn = [&](const VecX& th, VecX* g) -> Scalar {
        scratch.set_params(th);
        Backbone::Cache cache;
        const ForwardTrace tr = scratch.forward(train.x, nullptr, cache);
        const Scalar loss = cross_entropy(tr.y_hat, train.y);
        if (g) {
            BackwardRequest br;
            br.params = true;
            *g = scratch.backward(cache, cross_entropy_dlogits(tr.y_hat, train.y), br).dparams;
        }
        return loss;
    };

    // Per-domain seeds are forked up front so the draws do not depend on the
    // order the closures happen to be invoked in.
    std::vector<std::uint64_t> seeds(st.domains.size());
    for (auto& s : seeds) s = st.rng.fork_seed();

    VecX psi_grad = VecX::Zero(st.aux.param_count());
    bool psi_touched = false;
    Scalar surr_sum = 0.0;
    int surr_n = 0;

    std::vector<LossFn> test_fns;
    test_fns.reserve(st.domains.size());
    for (std::size_t d = 0; d < st.domains.size(); ++d) {
        test_fns.push_back([&, d](const VecX& th, VecX* g) -> Scalar {
            scratch.set_params(th);
            const DomainSnapshot& dom = st.domains[d];
            const MetaBatch& mb = test_batches.empty() ? train : test_batches[d];
            RngStream r(seeds[d]);
            const bool want_psi = update_psi && dom.live;
            const McEval me =
                mc_nll(scratch, dom, &st.aux, mb.x, mb.y, k_mc, r, g != nullptr, want_psi);
            if (g) *g = me.dtheta;
            if (want_psi && me.dpsi.size()) {
                psi_grad += me.dpsi;
                psi_touched = true;
            }
            surr_sum += me.kl_surrogate;
            ++surr_n;
            return me.nll;
        });
    }

    MetaLossReport rep;
    VecX theta = st.model.params();
    const VecX total = meta_total_gradient(train_fn, test_fns, theta, eta, first_order, &rep);
    rep.kl_surrogate = surr_n ? surr_sum / surr_n : 0.0;

    st.opt_theta.step(theta, total);
    st.model.set_params(theta);

    if (psi_touched) {
        if (cfg.get_bool("meta.explicit_kl")) {
            // Regularize the live heads toward the standard normal instead of
            // relying on the implicit pull of the task loss alone.
            const Scalar w = cfg.get_double("meta.kl_weight");
            Eigen::Index off = 0;
            for (const auto& h : st.aux.heads) {
                const Eigen::Index c = h.dist.channels();
                kl_standard_normal(h.dist, w, psi_grad.data() + off, psi_grad.data() + off + c);
                off += 2 * c;
            }
        }
        VecX psi = st.aux.params();
        st.opt_psi.step(psi, psi_grad);
        st.aux.set_params(psi);
    }
    return rep;
}

// ============================================================================
// Training driver
// ============================================================================

namespace {

Tensor flatten_rows(const Tensor& t) {
    Tensor out = t;
    const int n = t.shape.empty() ? 0 : t.shape[0];
    const std::int64_t flat = n ? t.numel() / n : 0;
    out.shape = {n, static_cast<int>(flat)};
    return out;
}

// Source inputs plus every pixel-domain pool, flattened and stacked row-wise
// (the reconstruction guard is retrained on the union).
Tensor stacked_wae_corpus(const Dataset& train_ds, const std::vector<DomainSnapshot>& domains) {
    std::vector<const Tensor*> parts{&train_ds.inputs};
    for (const auto& d : domains)
        for (const auto& b : d.pool) parts.push_back(&b.x_plus);
    const int n0 = train_ds.n();
    const std::int64_t flat = n0 ? train_ds.inputs.numel() / n0 : 0;
    std::int64_t rows = 0;
    for (const Tensor* p : parts) rows += p->shape.empty() ? 0 : p->shape[0];
    Tensor out({static_cast<int>(rows), static_cast<int>(flat)});
    std::int64_t at = 0;
    for (const Tensor* p : parts) {
        std::copy(p->v.begin(), p->v.end(), out.v.begin() + at);
        at += p->numel();
    }
    return out;
}

void introduce_stochastic_domain(MetaState& st, std::int64_t k_max) {
    if (!st.domains.empty() && st.domains.back().live) {
        st.domains.back().live = false;
        st.domains.back().view = make_view(st.aux); // freeze the recipe as of now
    }
    DomainSnapshot d;
    d.live = true;
    st.domains.push_back(std::move(d));
    ++st.domains_introduced;
    while (static_cast<std::int64_t>(st.domains.size()) > k_max)
        st.domains.erase(st.domains.begin());
}

void introduce_pixel_domain(MetaState& st, const Dataset& train_ds, const AdaConfig& ada,
                            std::int64_t k_max, std::ostream* log) {
    if (!st.wae) throw ConfigError("pixel-mode domain synthesis needs a trained reconstruction guard");
    DomainSnapshot dom;
    dom.pixel = true;
    for (int b = 0; b < ada.pool_batches; ++b) {
        // Donor: a fresh source batch, or a stored batch of an earlier domain
        // (so later domains can grow out of the accumulated pool).
        const std::uint64_t pick = st.rng.integer(st.domains.size() + 1);
        Tensor x, y;
        if (pick == 0) {
            const std::vector<int> idx = st.stream.next();
            x = gather_inputs(train_ds, idx);
            y = gather_labels(train_ds, idx);
        } else {
            const auto& pool = st.domains[pick - 1].pool;
            const MadaBatch& src = pool[st.rng.integer(pool.size())];
            x = src.x_plus;
            y = src.y;
        }
        dom.pool.push_back(mada_generate(st.model, *st.wae, x, y, ada));
    }
    st.domains.push_back(std::move(dom));
    ++st.domains_introduced;
    while (static_cast<std::int64_t>(st.domains.size()) > k_max)
        st.domains.erase(st.domains.begin());

    const Tensor corpus = stacked_wae_corpus(train_ds, st.domains);
    const WaeReport wr = wae_train(*st.wae, corpus, st.cfg.get_double("wae.lambda"),
                                   static_cast<int>(st.cfg.get_int("wae.retrain_epochs")),
                                   st.cfg.get_double("wae.lr"),
                                   static_cast<int>(st.cfg.get_int("wae.batch")), st.rng);
    if (log)
        *log << "[domain " << st.domains_introduced << "] guard retrained on " << corpus.shape[0]
             << " rows: recon " << wr.recon << ", mmd " << wr.mmd << "\n";
}

void train_loop(MetaState& st, const Dataset& train_ds, const Dataset& val_ds, std::ostream* log,
                bool fresh) {
    const RunConfig& cfg = st.cfg;
    const std::int64_t T = cfg.get_int("meta.iterations");
    const std::int64_t K = cfg.get_int("meta.k_domains");
    const std::int64_t k_max = cfg.get_int("meta.k_max");
    const int batch = static_cast<int>(cfg.get_int("meta.batch"));
    const std::int64_t print_every = cfg.get_int("train.print_every");
    const std::int64_t checkpoint_every = cfg.get_int("train.checkpoint_every");
    const std::int64_t val_every = cfg.get_int("train.val_every");
    const std::int64_t val_max = cfg.get_int("train.val_max");
    const AdaConfig ada = AdaConfig::from(cfg);
    const bool pixel = ada.mode == "mada"; // raw-input synthesis with stored pools

    if (train_ds.n() < 1) throw ConfigError("training dataset is empty");
    if (train_ds.classes != st.model.classes())
        throw ConfigError("dataset has " + std::to_string(train_ds.classes) +
                          " classes but the model head has " + std::to_string(st.model.classes()));

    if (fresh) st.stream = BatchStream(train_ds.n(), batch, st.rng.fork_seed());

    const std::string out_dir = cfg.get("output_dir");
    std::filesystem::create_directories(out_dir);
    const std::string ckpt_path = out_dir + "/checkpoint.ckpt";
    const std::string metrics_path = out_dir + "/metrics.csv";
    const bool need_header =
        !std::filesystem::exists(metrics_path) || std::filesystem::file_size(metrics_path) == 0;
    std::ofstream metrics(metrics_path, fresh ? std::ios::trunc : std::ios::app);
    if (!metrics) throw ConfigError("cannot open " + metrics_path + " for writing");
    metrics.precision(17);
    if (fresh || need_header)
        metrics << "iteration,loss_meta_train,loss_meta_test_mean,kl_surrogate,mean_sigma,"
                   "accuracy_source_val\n";

    // Validation subset used for the running accuracy column.
    Dataset val_cap;
    {
        const int take = static_cast<int>(std::min<std::int64_t>(val_ds.n(), val_max));
        std::vector<int> idx(take);
        std::iota(idx.begin(), idx.end(), 0);
        val_cap = val_ds.subset(idx);
    }

    // Pixel mode: pretrain the reconstruction guard once, before any domain
    // exists (resumed runs restore it from the checkpoint instead).
    if (pixel && !st.wae) {
        const int flat = static_cast<int>(train_ds.inputs.numel() / std::max(1, train_ds.n()));
        Wae w = Wae::init(flat, static_cast<int>(cfg.get_int("wae.hidden")),
                          static_cast<int>(cfg.get_int("wae.bottleneck")), st.rng);
        const WaeReport wr =
            wae_train(w, flatten_rows(train_ds.inputs), cfg.get_double("wae.lambda"),
                      static_cast<int>(cfg.get_int("wae.epochs")), cfg.get_double("wae.lr"),
                      static_cast<int>(cfg.get_int("wae.batch")), st.rng);
        st.wae = std::move(w);
        if (log) *log << "[guard] pretrained: recon " << wr.recon << ", mmd " << wr.mmd << "\n";
    }

    std::int64_t last_good = -1;
    try {
        while (st.iteration < T) {
            const std::int64_t i = st.iteration;

            // Domain schedule: domain s (1-based) arrives at the start of
            // segment s, i.e. at iteration floor((s-1) * T / K).
            if (K > 0) {
                const std::int64_t due = std::min<std::int64_t>(K, i * K / T + 1);
                while (st.domains_introduced < due) {
                    if (pixel)
                        introduce_pixel_domain(st, train_ds, ada, k_max, log);
                    else
                        introduce_stochastic_domain(st, k_max);
                }
            }

            // Adversarial refresh of the augmentation parameters.
            if (!pixel && !st.domains.empty() && ada.ascent_steps > 0 && ada.ascent_lr > 0 &&
                i % ada.attack_every == 0) {
                const std::vector<int> idx = st.stream.next();
                const Tensor x = gather_inputs(train_ds, idx);
                Tensor y = gather_labels(train_ds, idx);
                // Optionally seed the attack from a frozen domain's output so
                // the new domain grows out of the union of earlier ones.
                std::vector<std::size_t> frozen;
                for (std::size_t d = 0; d < st.domains.size(); ++d)
                    if (!st.domains[d].live) frozen.push_back(d);
                PerturbMap base;
                const PerturbMap* basep = nullptr;
                const std::uint64_t pick = st.rng.integer(frozen.size() + 1);
                if (pick > 0) {
                    AugmentedBatch gb =
                        generate_batch(st.model, st.domains[frozen[pick - 1]].view, y, st.rng);
                    base = std::move(gb.offsets);
                    y = std::move(gb.y_plus);
                    basep = &base;
                }
                maximize_aux(st.model, st.aux, x, y, ada, st.rng, basep);
            }

            // Meta step: one train batch, one fresh batch per domain.
            const std::vector<int> tr_idx = st.stream.next();
            MetaBatch tb{gather_inputs(train_ds, tr_idx), gather_labels(train_ds, tr_idx)};
            std::vector<MetaBatch> tests;
            tests.reserve(st.domains.size());
            for (std::size_t d = 0; d < st.domains.size(); ++d) {
                const std::vector<int> idx = st.stream.next();
                tests.push_back({gather_inputs(train_ds, idx), gather_labels(train_ds, idx)});
            }
            const MetaLossReport rep = meta_update(st, tb, tests);

            if (!std::isfinite(rep.loss_total))
                throw NumericError("training loss became non-finite at iteration " +
                                   std::to_string(i + 1));
            if (!st.model.params().allFinite())
                throw NumericError("model parameters became non-finite at iteration " +
                                   std::to_string(i + 1));

            ++st.iteration;
            if (i % val_every == 0) st.val_accuracy = evaluate_accuracy(st.model, val_cap);

            const Scalar test_mean =
                rep.losses_meta_test.empty()
                    ? 0.0
                    : std::accumulate(rep.losses_meta_test.begin(), rep.losses_meta_test.end(),
                                      0.0) /
                          static_cast<Scalar>(rep.losses_meta_test.size());
            metrics << st.iteration << ',' << rep.loss_meta_train << ',' << test_mean << ','
                    << rep.kl_surrogate << ',' << mean_sigma(st.aux.heads) << ','
                    << st.val_accuracy << '\n';
            metrics.flush();

            if (log && (st.iteration % print_every == 0 || st.iteration == T)) {
                log->precision(4);
                *log << "[iter " << st.iteration << "/" << T << "] train " << rep.loss_meta_train
                     << "  test " << test_mean << "  sigma " << mean_sigma(st.aux.heads)
                     << "  val " << st.val_accuracy << "\n";
            }

            if (st.iteration % checkpoint_every == 0 || st.iteration == T) {
                save_checkpoint(st, ckpt_path);
                last_good = st.iteration;
            }
        }
    } catch (const NumericError& e) {
        std::string msg = e.what();
        if (last_good >= 0)
            msg += "; last good checkpoint: " + ckpt_path + " (iteration " +
                   std::to_string(last_good) + ")";
        else
            msg += "; no checkpoint had been written yet";
        throw NumericError(msg);
    }
}

} // namespace

MetaState run_training(const RunConfig& cfg, const Dataset& train_ds, const Dataset& val_ds,
                       std::ostream* log) {
    MetaState st = init_state(cfg);
    train_loop(st, train_ds, val_ds, log, /*fresh=*/true);
    return st;
}

void continue_training(MetaState& st, const Dataset& train_ds, const Dataset& val_ds,
                       std::ostream* log) {
    train_loop(st, train_ds, val_ds, log, /*fresh=*/false);
}

Scalar evaluate_accuracy(const Backbone& model, const Dataset& ds, int batch) {
    if (ds.n() == 0) return 0.0;
    if (batch < 1) throw ConfigError("evaluate_accuracy: batch must be >= 1");
    std::int64_t correct = 0;
    for (int start = 0; start < ds.n(); start += batch) {
        const int stop = std::min(ds.n(), start + batch);
        std::vector<int> idx(stop - start);
        std::iota(idx.begin(), idx.end(), start);
        const ForwardTrace tr = model.forward(gather_inputs(ds, idx));
        const std::vector<int> pred = argmax_rows(tr.y_hat);
        for (int j = 0; j < stop - start; ++j)
            if (pred[j] == ds.labels[start + j]) ++correct;
    }
    return static_cast<Scalar>(correct) / ds.n();
}

} // namespace ugda
