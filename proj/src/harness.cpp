#include "ugda/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ugda/errors.hpp"
#include "ugda/uncertainty.hpp"

namespace ugda {

// ============================================================================
// Dataset assembly
// ============================================================================

namespace {

// Target draws must not move with the run seed, so paired multi-seed
// comparisons score against identical evaluation sets.
std::uint64_t magnitude_seed(std::uint64_t world_seed, Scalar magnitude) {
    return world_seed * 1000003ULL + static_cast<std::uint64_t>(std::llround(magnitude * 4096.0)) +
           17ULL;
}

std::uint64_t corruption_seed(const CorruptSpec& spec) {
    return 0x5EEDC0DEULL ^ (static_cast<std::uint64_t>(spec.kind) << 8) ^
           static_cast<std::uint64_t>(spec.severity);
}

std::string magnitude_name(const std::string& shift, Scalar m) {
    std::ostringstream os;
    os << shift << "@" << m;
    return os.str();
}

Dataset head_subset(const Dataset& ds, int take) {
    std::vector<int> idx(std::min(take, ds.n()));
    std::iota(idx.begin(), idx.end(), 0);
    return ds.subset(idx);
}

} // namespace

DataBundle load_data(const RunConfig& cfg, bool with_targets) {
    DataBundle out;
    const std::string source = cfg.get("data.source");
    RngStream run_rng(static_cast<std::uint64_t>(cfg.get_int("seed")) ^ 0x9E3779B97F4A7C15ULL);
    const std::uint64_t draw_seed = run_rng.fork_seed();
    const std::uint64_t split_seed = run_rng.fork_seed();

    if (source == "synthetic") {
        const SynthSpec spec = SynthSpec::from(cfg);
        const SynthWorld world = make_synth_world(spec);
        Dataset full = world.sample_source(spec.train_n, draw_seed);
        const std::int64_t limit = cfg.get_int("data.train_limit");
        if (limit > 0) full = head_subset(full, static_cast<int>(limit));
        std::tie(out.train, out.val) =
            split_train_val(full, cfg.get_double("train.val_fraction"), split_seed);
        if (with_targets) {
            std::vector<std::string> entries = cfg.get_list("data.targets");
            if (entries.empty()) entries = cfg.get_list("synth.magnitudes");
            for (const auto& e : entries) {
                Scalar m = 0.0;
                try {
                    std::size_t used = 0;
                    m = std::stod(e, &used);
                    if (used != e.size()) throw std::invalid_argument(e);
                } catch (const std::exception&) {
                    throw ConfigError("synthetic target magnitude '" + e + "' is not a number");
                }
                out.targets.emplace_back(
                    magnitude_name(spec.shift, m),
                    world.sample_target(m, spec.test_n, magnitude_seed(spec.world_seed, m)));
            }
        }
        return out;
    }

    if (source == "idx") {
        const std::string root = cfg.get("data.root");
        if (root.empty()) throw ConfigError("data.root must point at the IDX directory");
        IdxOptions opt;
        opt.target_size = static_cast<int>(cfg.get_int("backbone.image_size"));
        opt.channels = cfg.get_bool("data.duplicate_channels")
                           ? static_cast<int>(cfg.get_int("backbone.input_channels"))
                           : 1;
        Dataset full = load_idx(root + "/train-images-idx3-ubyte", root + "/train-labels-idx1-ubyte",
                                opt);
        const std::int64_t limit = cfg.get_int("data.train_limit");
        if (limit > 0) full = head_subset(full, static_cast<int>(limit));
        std::tie(out.train, out.val) =
            split_train_val(full, cfg.get_double("train.val_fraction"), split_seed);
        if (with_targets) {
            const Dataset test = load_idx(root + "/t10k-images-idx3-ubyte",
                                          root + "/t10k-labels-idx1-ubyte", opt);
            for (const auto& e : cfg.get_list("data.targets")) {
                const CorruptSpec spec = corrupt_spec_from(e);
                out.targets.emplace_back(e, corrupt(test, spec, corruption_seed(spec)));
            }
        }
        return out;
    }

    throw ConfigError("unknown data.source '" + source + "' (synthetic | idx)");
}

// ============================================================================
// Evaluation table
// ============================================================================

std::vector<EvalRow> evaluate_targets(
    const Backbone& model, const std::vector<std::pair<std::string, Dataset>>& targets) {
    std::vector<EvalRow> rows;
    rows.reserve(targets.size());
    for (const auto& [name, ds] : targets)
        rows.push_back({name, ds.n(), evaluate_accuracy(model, ds)});
    return rows;
}

std::string format_eval_table(const std::vector<EvalRow>& rows) {
    std::size_t w = std::string("domain").size();
    for (const auto& r : rows) w = std::max(w, r.domain.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(w) + 2) << "domain" << std::right
       << std::setw(7) << "n" << std::setw(11) << "accuracy" << "\n";
    os << std::string(w + 2 + 7 + 11, '-') << "\n";
    os << std::fixed << std::setprecision(4);
    for (const auto& r : rows)
        os << std::left << std::setw(static_cast<int>(w) + 2) << r.domain << std::right
           << std::setw(7) << r.n << std::setw(11) << r.accuracy << "\n";
    return os.str();
}

void write_eval_csv(const std::vector<EvalRow>& rows, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path);
    f << "domain,n,accuracy\n";
    f.precision(17);
    for (const auto& r : rows) f << r.domain << ',' << r.n << ',' << r.accuracy << '\n';
}

// ============================================================================
// Few-shot adaptation
// ============================================================================

FewShotResult few_shot_adapt(const Backbone& model, const Dataset& target_pool,
                             const Dataset& target_test, int shots, int steps, Scalar lr) {
    if (shots < 1) throw ConfigError("few-shot adaptation needs shots >= 1");
    if (steps < 0) throw ConfigError("few-shot adaptation needs steps >= 0");
    if (target_pool.classes != model.classes())
        throw ConfigError("few-shot pool has " + std::to_string(target_pool.classes) +
                          " classes but the model head has " + std::to_string(model.classes()));

    // First `shots` examples of every class, in pool order.
    std::vector<std::vector<int>> per_class(target_pool.classes);
    for (int i = 0; i < target_pool.n(); ++i) {
        const int c = target_pool.labels[i];
        if (static_cast<int>(per_class[c].size()) < shots) per_class[c].push_back(i);
    }
    std::string deficits;
    for (int c = 0; c < target_pool.classes; ++c)
        if (static_cast<int>(per_class[c].size()) < shots) {
            if (!deficits.empty()) deficits += "; ";
            deficits += "class " + std::to_string(c) + " has " +
                        std::to_string(per_class[c].size()) + " examples, need " +
                        std::to_string(shots);
        }
    if (!deficits.empty()) throw ConfigError("few-shot pool is short: " + deficits);

    std::vector<int> support;
    for (const auto& pc : per_class) support.insert(support.end(), pc.begin(), pc.end());
    const Tensor x = gather_inputs(target_pool, support);
    const Tensor y = gather_labels(target_pool, support);

    FewShotResult res;
    res.shots = shots;
    res.steps = steps;
    res.accuracy_before = evaluate_accuracy(model, target_test);
    res.model = model;

    Optimizer opt = Optimizer::make("adam", res.model.param_count(), lr);
    VecX theta = res.model.params();
    for (int s = 0; s < steps; ++s) {
        Backbone::Cache cache;
        const ForwardTrace tr = res.model.forward(x, nullptr, cache);
        const Scalar loss = cross_entropy(tr.y_hat, y);
        if (!std::isfinite(loss))
            throw NumericError("few-shot fine-tuning diverged at step " + std::to_string(s + 1));
        BackwardRequest br;
        br.params = true;
        const VecX g = res.model.backward(cache, cross_entropy_dlogits(tr.y_hat, y), br).dparams;
        opt.step(theta, g);
        res.model.set_params(theta);
    }
    res.accuracy_after = evaluate_accuracy(res.model, target_test);
    return res;
}

// ============================================================================
// Ablation grids
// ============================================================================

std::vector<std::string> ablation_variants(const std::string& suite) {
    if (suite == "perturbation")
        return {"full", "random_gaussian", "deterministic", "random_mu", "random_sigma"};
    if (suite == "mixup") return {"full", "wo_mixup", "random_mixup"};
    if (suite == "training")
        return {"full", "wo_adv_training", "wo_meta_learning", "wo_min_phi_p"};
    throw ConfigError("unknown ablation suite '" + suite +
                      "' (perturbation | mixup | training)");
}

RunConfig apply_ablation_variant(const RunConfig& base, const std::string& variant) {
    RunConfig cfg = base;
    if (variant == "full") return cfg;
    if (variant == "random_gaussian" || variant == "deterministic" || variant == "random_mu" ||
        variant == "random_sigma") {
        cfg.set("perturb.mode", variant);
        return cfg;
    }
    if (variant == "wo_mixup") {
        cfg.set("mixup.mode", "off");
        return cfg;
    }
    if (variant == "random_mixup") {
        cfg.set("mixup.mode", "random");
        return cfg;
    }
    if (variant == "wo_adv_training") {
        cfg.set("ada.ascent_steps", "0"); // domains stay at their initial recipe
        return cfg;
    }
    if (variant == "wo_meta_learning") {
        cfg.set("meta.joint", "true"); // source and domains trained together
        return cfg;
    }
    if (variant == "wo_min_phi_p") {
        cfg.set("meta.update_psi", "false"); // heads move only under attack
        return cfg;
    }
    throw ConfigError("unknown ablation variant '" + variant + "'");
}

SynthRun run_synth_once(const RunConfig& cfg, std::ostream* log) {
    if (cfg.get("data.source") != "synthetic")
        throw ConfigError("the ablation/synthetic runner requires data.source=synthetic");
    const DataBundle data = load_data(cfg, true);
    if (data.targets.empty())
        throw ConfigError("no target magnitudes configured (synth.magnitudes is empty)");
    const MetaState st = run_training(cfg, data.train, data.val, log);
    SynthRun r;
    r.source_accuracy = evaluate_accuracy(st.model, data.val);
    for (const auto& [name, ds] : data.targets) r.target_accuracy += evaluate_accuracy(st.model, ds);
    r.target_accuracy /= static_cast<Scalar>(data.targets.size());
    return r;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::string& suite,
                                      const std::vector<std::uint64_t>& seeds, std::ostream* log) {
    if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
    std::vector<AblationRow> rows;
    for (const auto& variant : ablation_variants(suite)) {
        AblationRow row;
        row.variant = variant;
        for (std::size_t si = 0; si < seeds.size(); ++si) {
            RunConfig cfg = apply_ablation_variant(base, variant);
            cfg.set("seed", std::to_string(seeds[si]));
            cfg.set("output_dir", base.get("output_dir") + "/ablate-" + suite + "/" + variant +
                                      "/seed" + std::to_string(seeds[si]));
            if (log)
                *log << "[ablate] " << suite << " / " << variant << " / seed " << seeds[si]
                     << "\n";
            row.per_seed.push_back(run_synth_once(cfg, nullptr).target_accuracy);
        }
        const Scalar n = static_cast<Scalar>(row.per_seed.size());
        row.mean = std::accumulate(row.per_seed.begin(), row.per_seed.end(), 0.0) / n;
        Scalar var = 0.0;
        for (const Scalar a : row.per_seed) var += (a - row.mean) * (a - row.mean);
        row.stddev = row.per_seed.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
    std::size_t w = std::string("variant").size();
    for (const auto& r : rows) w = std::max(w, r.variant.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(w) + 2) << "variant" << std::right
       << std::setw(10) << "mean" << std::setw(10) << "stddev" << "  per-seed\n";
    os << std::fixed << std::setprecision(4);
    for (const auto& r : rows) {
        os << std::left << std::setw(static_cast<int>(w) + 2) << r.variant << std::right
           << std::setw(10) << r.mean << std::setw(10) << r.stddev << "  [";
        for (std::size_t i = 0; i < r.per_seed.size(); ++i)
            os << (i ? " " : "") << r.per_seed[i];
        os << "]\n";
    }
    return os.str();
}

// ============================================================================
// Augmentation preview
// ============================================================================

namespace {

// Planar {C,H,W} slice in [0,1] -> binary PGM (1 channel) or PPM (3).
void write_pnm(const std::string& path, const Scalar* data, int channels, int h, int w) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path);
    f << (channels == 3 ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";
    const int out_c = channels == 3 ? 3 : 1;
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * out_c);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < out_c; ++ch) {
                const Scalar v = data[(static_cast<std::int64_t>(ch) * h + r) * w + c];
                const int byte = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
                row[static_cast<std::size_t>(c) * out_c + ch] = static_cast<unsigned char>(byte);
            }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

} // namespace

PreviewStats augment_preview(MetaState& st, const Dataset& ds, const std::string& out_dir,
                             int count) {
    if (ds.n() == 0) throw ConfigError("augmentation preview: dataset is empty");
    if (count < 1) throw ConfigError("augmentation preview: count must be >= 1");
    std::filesystem::create_directories(out_dir);

    const int take = std::min(count, ds.n());
    std::vector<int> idx(take);
    std::iota(idx.begin(), idx.end(), 0);
    const Tensor x = gather_inputs(ds, idx);
    const Tensor y = gather_labels(ds, idx);
    const AdaConfig ada = AdaConfig::from(st.cfg);

    Tensor x_plus = x;
    Tensor z = st.model.forward(x).z, z_plus;
    if (ada.mode == "mada") {
        if (!st.wae)
            throw ConfigError("the raw-input preview needs the trained reconstruction guard; "
                              "load a checkpoint of an augment.mode=mada run");
        const MadaBatch mb = mada_generate(st.model, *st.wae, x, y, ada);
        x_plus = mb.x_plus;
        z_plus = st.model.forward(x_plus).z;
    } else {
        const AugmentedBatch gen = generate_batch(st.model, make_view(st.aux), y, st.rng);
        z_plus = st.model.forward(x, &gen.offsets).z;
    }

    const int classes = st.model.classes();
    const std::int64_t per = x.numel() / take;
    PreviewStats stats;
    stats.pairs = take;
    std::ofstream csv(out_dir + "/preview_stats.csv");
    if (!csv) throw ConfigError("cannot write " + out_dir + "/preview_stats.csv");
    csv << "pair,pixel_rms,embed_dist\n";
    csv.precision(17);

    const bool image = ds.is_image();
    const int C = image ? ds.inputs.shape[1] : 0;
    const int H = image ? ds.inputs.shape[2] : 0;
    const int W = image ? ds.inputs.shape[3] : 0;
    for (int i = 0; i < take; ++i) {
        Scalar pix = 0.0;
        for (std::int64_t j = 0; j < per; ++j) {
            const Scalar d = x[i * per + j] - x_plus[i * per + j];
            pix += d * d;
        }
        pix = std::sqrt(pix / static_cast<Scalar>(per));
        Scalar emb = 0.0;
        for (int j = 0; j < classes; ++j) {
            const Scalar d = z[i * classes + j] - z_plus[i * classes + j];
            emb += d * d;
        }
        emb = std::sqrt(emb);
        stats.mean_pixel_rms += pix;
        stats.mean_embed_dist += emb;
        csv << i << ',' << pix << ',' << emb << '\n';

        if (image && (C == 1 || C == 3)) {
            std::ostringstream base;
            base << out_dir << "/pair" << std::setw(3) << std::setfill('0') << i;
            const char* ext = C == 3 ? ".ppm" : ".pgm";
            write_pnm(base.str() + "_x" + ext, x.data() + i * per, C, H, W);
            write_pnm(base.str() + "_xplus" + ext, x_plus.data() + i * per, C, H, W);
        }
    }
    stats.mean_pixel_rms /= take;
    stats.mean_embed_dist /= take;
    return stats;
}

// ============================================================================
// Summary record
// ============================================================================

void write_summary(const MetaState& st, const std::string& path) {
    nlohmann::json j;
    j["iteration"] = st.iteration;
    j["validation_accuracy"] = st.val_accuracy;
    j["mean_sigma"] = mean_sigma(st.aux.heads);
    j["domains_introduced"] = st.domains_introduced;
    j["domains_held"] = st.domains.size();
    j["model_parameters"] = st.model.param_count();
    j["head_parameters"] = st.aux.param_count();
    std::ostringstream hash;
    hash << std::hex << st.cfg.hash();
    j["config_hash"] = hash.str();
    j["config"] = st.cfg.values();
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path);
    f << j.dump(2) << "\n";
}

// ============================================================================
// CLI
// ============================================================================

namespace {

RunConfig build_config(const std::vector<std::string>& files,
                       const std::vector<std::string>& sets) {
    RunConfig cfg;
    for (const auto& f : files) cfg.load_file(f);
    cfg.apply_env();
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

struct CommonOpts {
    std::vector<std::string> configs, sets;
    std::string checkpoint;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_checkpoint) {
    cmd->add_option("--config", o.configs, "Configuration file (repeatable; later files win)");
    cmd->add_option("--set", o.sets, "Override key=value (repeatable; wins over files and env)");
    if (with_checkpoint) {
        cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
        cmd->add_flag("--force", o.force, "Proceed when the config hash disagrees with the checkpoint");
    }
}

} // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"Single-source domain generalization via uncertainty-guided adversarial domain "
                 "synthesis"};
    app.require_subcommand(1);

    CommonOpts train_o, eval_o, adapt_o, unc_o, prev_o, abl_o;
    int adapt_shots = -1, adapt_steps = -1;
    std::string adapt_target;
    bool unc_no_baseline = false;
    int prev_count = 8;
    std::string abl_suite;
    int abl_seeds = 3;

    CLI::App* c_train = app.add_subcommand("train", "Train (or resume with --checkpoint)");
    add_common(c_train, train_o, true);

    CLI::App* c_eval = app.add_subcommand("eval", "Per-domain accuracy table for a checkpoint");
    add_common(c_eval, eval_o, true);

    CLI::App* c_adapt = app.add_subcommand("adapt", "Few-shot fine-tuning on a target domain");
    add_common(c_adapt, adapt_o, true);
    c_adapt->add_option("--shots", adapt_shots, "Labeled examples per class (default fewshot.shots)");
    c_adapt->add_option("--steps", adapt_steps, "Fine-tuning steps (default fewshot.steps)");
    c_adapt->add_option("--target", adapt_target,
                        "Target domain: shift magnitude (synthetic) or corruption spec (idx)");

    CLI::App* c_unc = app.add_subcommand("uncertainty", "Domain uncertainty scores for a checkpoint");
    add_common(c_unc, unc_o, true);
    c_unc->add_flag("--no-baseline", unc_no_baseline, "Skip the stochastic-forward variance baseline");

    CLI::App* c_prev = app.add_subcommand("augment-preview", "Dump (x, x+) pairs and their statistics");
    add_common(c_prev, prev_o, true);
    c_prev->add_option("--count", prev_count, "Number of pairs to dump");

    CLI::App* c_abl = app.add_subcommand("ablate", "Run an ablation grid on the synthetic benchmark");
    add_common(c_abl, abl_o, false);
    c_abl->add_option("--suite", abl_suite, "perturbation | mixup | training")->required();
    c_abl->add_option("--seeds", abl_seeds, "Number of seeds per variant");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (c_train->parsed()) {
            const RunConfig cfg = build_config(train_o.configs, train_o.sets);
            const DataBundle data = load_data(cfg, false);
            MetaState st;
            if (train_o.checkpoint.empty()) {
                st = run_training(cfg, data.train, data.val, &std::cout);
            } else {
                st = load_checkpoint(cfg, train_o.checkpoint, train_o.force, &std::cerr);
                continue_training(st, data.train, data.val, &std::cout);
            }
            const std::string out = cfg.get("output_dir");
            write_summary(st, out + "/summary.json");
            std::cout << "done: " << st.iteration << " iterations, validation accuracy "
                      << st.val_accuracy << "\n";
            std::cout << "wrote " << out << "/summary.json, metrics.csv, checkpoint.ckpt\n";
        } else if (c_eval->parsed()) {
            if (eval_o.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
            const RunConfig cfg = build_config(eval_o.configs, eval_o.sets);
            const MetaState st = load_checkpoint(cfg, eval_o.checkpoint, eval_o.force, &std::cerr);
            const DataBundle data = load_data(cfg, true);
            std::vector<EvalRow> rows{
                {"source-val", data.val.n(), evaluate_accuracy(st.model, data.val)}};
            for (auto& r : evaluate_targets(st.model, data.targets)) rows.push_back(std::move(r));
            std::cout << format_eval_table(rows);
            Scalar mean = 0.0;
            for (std::size_t i = 1; i < rows.size(); ++i) mean += rows[i].accuracy;
            if (rows.size() > 1)
                std::cout << "mean target accuracy: " << std::fixed << std::setprecision(4)
                          << mean / static_cast<Scalar>(rows.size() - 1) << "\n";
            const std::string out = cfg.get("output_dir");
            std::filesystem::create_directories(out);
            write_eval_csv(rows, out + "/eval.csv");
        } else if (c_adapt->parsed()) {
            if (adapt_o.checkpoint.empty()) throw ConfigError("adapt needs --checkpoint");
            const RunConfig cfg = build_config(adapt_o.configs, adapt_o.sets);
            const MetaState st = load_checkpoint(cfg, adapt_o.checkpoint, adapt_o.force, &std::cerr);
            const int shots =
                adapt_shots > 0 ? adapt_shots : static_cast<int>(cfg.get_int("fewshot.shots"));
            const int steps =
                adapt_steps >= 0 ? adapt_steps : static_cast<int>(cfg.get_int("fewshot.steps"));
            Dataset pool, test;
            std::string name;
            if (cfg.get("data.source") == "synthetic") {
                const SynthSpec spec = SynthSpec::from(cfg);
                const SynthWorld world = make_synth_world(spec);
                const Scalar m = adapt_target.empty() ? cfg.get_double("synth.magnitude")
                                                      : std::stod(adapt_target);
                pool = world.sample_target(m, std::max(512, shots * spec.classes * 4),
                                           magnitude_seed(spec.world_seed, m) ^ 0xAD);
                test = world.sample_target(m, spec.test_n, magnitude_seed(spec.world_seed, m));
                name = magnitude_name(spec.shift, m);
            } else {
                std::string entry = adapt_target;
                if (entry.empty()) {
                    const auto list = cfg.get_list("data.targets");
                    if (list.empty())
                        throw ConfigError("adapt on idx data needs --target or data.targets");
                    entry = list.front();
                }
                const CorruptSpec spec = corrupt_spec_from(entry);
                const DataBundle data = load_data(cfg, true);
                pool = corrupt(data.train, spec, corruption_seed(spec) ^ 0xAD);
                bool found = false;
                for (const auto& [n2, ds] : data.targets)
                    if (n2 == entry) {
                        test = ds;
                        found = true;
                    }
                if (!found) {
                    IdxOptions opt;
                    opt.target_size = static_cast<int>(cfg.get_int("backbone.image_size"));
                    opt.channels = cfg.get_bool("data.duplicate_channels")
                                       ? static_cast<int>(cfg.get_int("backbone.input_channels"))
                                       : 1;
                    const std::string root = cfg.get("data.root");
                    test = corrupt(load_idx(root + "/t10k-images-idx3-ubyte",
                                            root + "/t10k-labels-idx1-ubyte", opt),
                                   spec, corruption_seed(spec));
                }
                name = entry;
            }
            const FewShotResult r =
                few_shot_adapt(st.model, pool, test, shots, steps, cfg.get_double("fewshot.lr"));
            std::cout << std::fixed << std::setprecision(4) << "target " << name << ": accuracy "
                      << r.accuracy_before << " -> " << r.accuracy_after << " (" << shots
                      << " shots/class, " << steps << " steps, "
                      << std::showpos << r.accuracy_after - r.accuracy_before << std::noshowpos
                      << ")\n";
        } else if (c_unc->parsed()) {
            if (unc_o.checkpoint.empty()) throw ConfigError("uncertainty needs --checkpoint");
            const RunConfig cfg = build_config(unc_o.configs, unc_o.sets);
            const MetaState st = load_checkpoint(cfg, unc_o.checkpoint, unc_o.force, &std::cerr);
            const DataBundle data = load_data(cfg, true);
            const int probe_max = static_cast<int>(cfg.get_int("uncertainty.probe_max"));
            RngStream rs(static_cast<std::uint64_t>(cfg.get_int("seed")) ^ 0x0DDC0FFEULL);
            std::vector<std::pair<std::string, Dataset>> probes{{"source-val", data.val}};
            for (const auto& t : data.targets) probes.push_back(t);

            const std::string out = cfg.get("output_dir");
            std::filesystem::create_directories(out);
            std::ofstream csv(out + "/uncertainty.csv");
            csv << "domain,n,score,baseline_variance,seconds_score,seconds_baseline\n";
            csv.precision(17);
            std::cout << std::left << std::setw(18) << "domain" << std::right << std::setw(7)
                      << "n" << std::setw(12) << "score" << std::setw(14) << "baseline"
                      << std::setw(12) << "t_score" << std::setw(12) << "t_base" << "\n";
            for (const auto& [name, ds] : probes) {
                const Dataset probe = head_subset(ds, probe_max);
                RngStream r(rs.fork_seed());
                const UncertaintyReport rep = uncertainty_report(
                    st.model, st.aux, probe.inputs, cfg, r, !unc_no_baseline);
                std::cout << std::left << std::setw(18) << name << std::right << std::setw(7)
                          << probe.n() << std::fixed << std::setprecision(4) << std::setw(12)
                          << rep.score;
                if (rep.baseline_variance)
                    std::cout << std::scientific << std::setprecision(3) << std::setw(14)
                              << *rep.baseline_variance;
                else
                    std::cout << std::setw(14) << "-";
                std::cout << std::fixed << std::setprecision(3) << std::setw(12)
                          << rep.wall_time_score << std::setw(12)
                          << (rep.wall_time_baseline ? *rep.wall_time_baseline : 0.0) << "\n";
                csv << name << ',' << probe.n() << ',' << rep.score << ','
                    << (rep.baseline_variance ? *rep.baseline_variance : -1.0) << ','
                    << rep.wall_time_score << ','
                    << (rep.wall_time_baseline ? *rep.wall_time_baseline : -1.0) << '\n';
            }
        } else if (c_prev->parsed()) {
            const RunConfig cfg = build_config(prev_o.configs, prev_o.sets);
            MetaState st;
            if (prev_o.checkpoint.empty()) {
                std::cerr << "note: no --checkpoint given; previewing the untrained heads\n";
                st = init_state(cfg);
            } else {
                st = load_checkpoint(cfg, prev_o.checkpoint, prev_o.force, &std::cerr);
            }
            const DataBundle data = load_data(cfg, false);
            const std::string out = cfg.get("output_dir") + "/preview";
            const PreviewStats stats = augment_preview(st, data.train, out, prev_count);
            std::cout << std::fixed << std::setprecision(5) << stats.pairs
                      << " pairs -> " << out << "\nmean per-pixel rms change: "
                      << stats.mean_pixel_rms << "\nmean embedding distance ||z - z+||: "
                      << stats.mean_embed_dist << "\n";
        } else if (c_abl->parsed()) {
            const RunConfig cfg = build_config(abl_o.configs, abl_o.sets);
            if (abl_seeds < 1) throw ConfigError("--seeds must be >= 1");
            std::vector<std::uint64_t> seeds(static_cast<std::size_t>(abl_seeds));
            const std::uint64_t base = static_cast<std::uint64_t>(cfg.get_int("seed"));
            for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = base + i;
            const auto rows = run_ablation(cfg, abl_suite, seeds, &std::cout);
            std::cout << format_ablation_table(rows);
            const std::string out = cfg.get("output_dir");
            std::filesystem::create_directories(out);
            std::ofstream csv(out + "/ablate_" + abl_suite + ".csv");
            csv << "variant,seed,target_accuracy\n";
            csv.precision(17);
            for (const auto& r : rows)
                for (std::size_t i = 0; i < r.per_seed.size(); ++i)
                    csv << r.variant << ',' << seeds[i] << ',' << r.per_seed[i] << '\n';
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return 3;
    }
}

} // namespace ugda
