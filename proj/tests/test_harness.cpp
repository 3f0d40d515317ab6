#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ugda/errors.hpp"
#include "ugda/harness.hpp"

using namespace ugda;

namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& tag) {
    const auto dir = fs::temp_directory_path() / ("ugda_harness_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int count_lines(const std::string& text) {
    int n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

// --- hand-written IDX fixtures (same byte layout the loader tests use) -------

void put_be32(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_images(const fs::path& path, const std::vector<std::vector<std::uint8_t>>& images,
                  int rows, int cols) {
    std::ofstream out(path, std::ios::binary);
    put_be32(out, 0x00000803u);
    put_be32(out, static_cast<std::uint32_t>(images.size()));
    put_be32(out, static_cast<std::uint32_t>(rows));
    put_be32(out, static_cast<std::uint32_t>(cols));
    for (const auto& img : images)
        out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
}

void write_labels(const fs::path& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream out(path, std::ios::binary);
    put_be32(out, 0x00000801u);
    put_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

// A complete MNIST-style directory: 10 training images, 4 test images, 2x2.
fs::path idx_root() {
    static const fs::path dir = [] {
        const fs::path d = fresh_dir("idx_root");
        std::vector<std::vector<std::uint8_t>> train, test;
        std::vector<std::uint8_t> train_y, test_y;
        for (int i = 0; i < 10; ++i) {
            const auto v = static_cast<std::uint8_t>(20 * i + 5);
            train.push_back({v, static_cast<std::uint8_t>(v + 3), static_cast<std::uint8_t>(v + 7),
                             static_cast<std::uint8_t>(255 - v)});
            train_y.push_back(static_cast<std::uint8_t>(i % 5));
        }
        for (int i = 0; i < 4; ++i) {
            const auto v = static_cast<std::uint8_t>(60 * i + 10);
            test.push_back({v, v, static_cast<std::uint8_t>(v / 2), static_cast<std::uint8_t>(v / 3)});
            test_y.push_back(static_cast<std::uint8_t>(i % 3));
        }
        write_images(d / "train-images-idx3-ubyte", train, 2, 2);
        write_labels(d / "train-labels-idx1-ubyte", train_y);
        write_images(d / "t10k-images-idx3-ubyte", test, 2, 2);
        write_labels(d / "t10k-labels-idx1-ubyte", test_y);
        return d;
    }();
    return dir;
}

// --- configs -----------------------------------------------------------------

RunConfig tiny_synth_config(const std::string& out_dir) {
    RunConfig cfg;
    cfg.set("data.source", "synthetic");
    cfg.set("synth.classes", "3");
    cfg.set("synth.dim", "5");
    cfg.set("synth.train_n", "200");
    cfg.set("synth.test_n", "40");
    cfg.set("synth.magnitudes", "0.25,0.5,1");
    cfg.set("backbone.name", "mlp-small");
    cfg.set("backbone.mlp_input_dim", "5");
    cfg.set("backbone.mlp_hidden", "8");
    cfg.set("backbone.classes", "3");
    cfg.set("output_dir", out_dir);
    return cfg;
}

RunConfig tiny_idx_config(const std::string& out_dir) {
    RunConfig cfg;
    cfg.set("data.source", "idx");
    cfg.set("data.root", idx_root().string());
    cfg.set("data.targets", "brightness:1,blur:2");
    cfg.set("backbone.image_size", "8");
    cfg.set("backbone.input_channels", "3");
    cfg.set("output_dir", out_dir);
    return cfg;
}

// --- in-process CLI ----------------------------------------------------------

struct CliResult {
    int rc = -1;
    std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
    args.insert(args.begin(), "ugda");
    std::vector<char*> argv;
    argv.reserve(args.size());
    for (auto& a : args) argv.push_back(a.data());
    std::ostringstream out, err;
    auto* old_out = std::cout.rdbuf(out.rdbuf());
    auto* old_err = std::cerr.rdbuf(err.rdbuf());
    CliResult res;
    try {
        res.rc = run_cli(static_cast<int>(argv.size()), argv.data());
    } catch (...) {
        std::cout.rdbuf(old_out);
        std::cerr.rdbuf(old_err);
        throw;
    }
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    res.out = out.str();
    res.err = err.str();
    return res;
}

// --set arguments for a training run small enough to finish in a second.
std::vector<std::string> micro_cli_sets(const std::string& out_dir) {
    const std::vector<std::pair<std::string, std::string>> kv = {
        {"data.source", "synthetic"},   {"synth.classes", "3"},
        {"synth.dim", "4"},             {"synth.train_n", "150"},
        {"synth.test_n", "40"},         {"synth.magnitudes", "0.5"},
        {"backbone.name", "mlp-small"}, {"backbone.mlp_input_dim", "4"},
        {"backbone.mlp_hidden", "8"},   {"backbone.classes", "3"},
        {"meta.iterations", "10"},      {"meta.batch", "16"},
        {"meta.k_domains", "1"},        {"meta.k_mc", "2"},
        {"meta.k_max", "2"},            {"meta.eta", "0.02"},
        {"meta.psi_lr", "0.005"},       {"ada.ascent_steps", "1"},
        {"train.val_every", "5"},       {"train.checkpoint_every", "100"},
        {"train.print_every", "100"},   {"output_dir", out_dir},
    };
    std::vector<std::string> args;
    for (const auto& [k, v] : kv) {
        args.push_back("--set");
        args.push_back(k + "=" + v);
    }
    return args;
}

// One trained run shared by the CLI test cases below.
struct CliFixture {
    fs::path dir;
    std::vector<std::string> sets;
    CliResult train;
};

const CliFixture& cli_fixture() {
    static const CliFixture f = [] {
        CliFixture fx;
        fx.dir = fresh_dir("cli_run");
        fx.sets = micro_cli_sets(fx.dir.string());
        std::vector<std::string> args = {"train"};
        args.insert(args.end(), fx.sets.begin(), fx.sets.end());
        fx.train = cli(args);
        return fx;
    }();
    return f;
}

bool same_vec(const std::vector<Scalar>& a, const std::vector<Scalar>& b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

} // namespace

TEST_SUITE_BEGIN("harness");

TEST_CASE("dataset assembly builds the synthetic split and a seed-stable magnitude grid") {
    const fs::path out = fresh_dir("load_synth");
    RunConfig cfg = tiny_synth_config(out.string());

    const DataBundle bundle = load_data(cfg, true);
    CHECK(bundle.train.n() == 180); // 10% of 200 held out
    CHECK(bundle.val.n() == 20);
    CHECK(bundle.train.classes == 3);
    CHECK(bundle.train.inputs.shape == std::vector<int>{180, 5});
    REQUIRE(bundle.targets.size() == 3);
    CHECK(bundle.targets[0].first == "rotation@0.25");
    CHECK(bundle.targets[1].first == "rotation@0.5");
    CHECK(bundle.targets[2].first == "rotation@1");
    for (const auto& [name, ds] : bundle.targets) {
        CHECK(ds.n() == 40);
        CHECK(ds.classes == 3);
    }

    SUBCASE("targets can be skipped") {
        const DataBundle lean = load_data(cfg, false);
        CHECK(lean.targets.empty());
        CHECK(lean.train.n() == 180);
    }

    SUBCASE("evaluation draws are pinned to the world, not the run seed") {
        RunConfig other = cfg;
        other.set("seed", "99");
        const DataBundle b2 = load_data(other, true);
        REQUIRE(b2.targets.size() == bundle.targets.size());
        for (std::size_t i = 0; i < bundle.targets.size(); ++i) {
            CHECK(same_vec(b2.targets[i].second.inputs.v, bundle.targets[i].second.inputs.v));
            CHECK(b2.targets[i].second.labels == bundle.targets[i].second.labels);
        }
        // ...while the training split itself is re-drawn per run seed.
        CHECK_FALSE(same_vec(b2.train.inputs.v, bundle.train.inputs.v));
    }

    SUBCASE("data.targets overrides the magnitude list") {
        RunConfig over = cfg;
        over.set("data.targets", "0.3,0.9");
        const DataBundle b2 = load_data(over, true);
        REQUIRE(b2.targets.size() == 2);
        CHECK(b2.targets[0].first == "rotation@0.3");
        CHECK(b2.targets[1].first == "rotation@0.9");
    }

    SUBCASE("train_limit caps the pool before the split") {
        RunConfig capped = cfg;
        capped.set("data.train_limit", "50");
        const DataBundle b2 = load_data(capped, true);
        CHECK(b2.train.n() == 45);
        CHECK(b2.val.n() == 5);
    }

    SUBCASE("a non-numeric magnitude is rejected") {
        RunConfig bad = cfg;
        bad.set("data.targets", "0.5,e");
        CHECK_THROWS_WITH_AS(load_data(bad, true),
                             doctest::Contains("is not a number"), ConfigError);
    }

    SUBCASE("unknown sources are rejected") {
        RunConfig bad = cfg;
        bad.set("data.source", "flickr");
        CHECK_THROWS_WITH_AS(load_data(bad, false),
                             doctest::Contains("(synthetic | idx)"), ConfigError);
    }
}

TEST_CASE("dataset assembly loads IDX directories and corrupts the named targets") {
    const fs::path out = fresh_dir("load_idx");
    RunConfig cfg = tiny_idx_config(out.string());

    const DataBundle bundle = load_data(cfg, true);
    CHECK(bundle.train.n() == 9); // lround(0.1 * 10) = 1 held out
    CHECK(bundle.val.n() == 1);
    CHECK(bundle.train.classes == 10);
    CHECK(bundle.train.inputs.shape == std::vector<int>{9, 3, 8, 8});
    REQUIRE(bundle.targets.size() == 2);
    CHECK(bundle.targets[0].first == "brightness:1");
    CHECK(bundle.targets[1].first == "blur:2");
    for (const auto& [name, ds] : bundle.targets) {
        CHECK(ds.n() == 4);
        CHECK(ds.inputs.shape == std::vector<int>{4, 3, 8, 8});
        const auto [lo, hi] = std::minmax_element(ds.inputs.v.begin(), ds.inputs.v.end());
        CHECK(*lo >= 0.0);
        CHECK(*hi <= 1.0);
    }

    SUBCASE("corrupted targets are bit-identical across loads") {
        const DataBundle again = load_data(cfg, true);
        for (std::size_t i = 0; i < bundle.targets.size(); ++i)
            CHECK(same_vec(again.targets[i].second.inputs.v, bundle.targets[i].second.inputs.v));
    }

    SUBCASE("channel duplication can be turned off") {
        RunConfig mono = cfg;
        mono.set("data.duplicate_channels", "false");
        const DataBundle b2 = load_data(mono, false);
        CHECK(b2.train.inputs.shape == std::vector<int>{9, 1, 8, 8});
    }

    SUBCASE("a missing root is reported up front") {
        RunConfig bad = cfg;
        bad.set("data.root", "");
        CHECK_THROWS_WITH_AS(load_data(bad, false),
                             doctest::Contains("data.root must point at the IDX directory"),
                             ConfigError);
    }
}

TEST_CASE("the evaluation table mirrors per-domain accuracy in text and CSV form") {
    const fs::path out = fresh_dir("eval_table");
    RunConfig cfg = tiny_synth_config(out.string());
    const DataBundle bundle = load_data(cfg, true);
    const MetaState st = init_state(cfg);

    const std::vector<EvalRow> rows = evaluate_targets(st.model, bundle.targets);
    REQUIRE(rows.size() == 3);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].domain == bundle.targets[i].first);
        CHECK(rows[i].n == 40);
        CHECK(rows[i].accuracy >= 0.0);
        CHECK(rows[i].accuracy <= 1.0);
        CHECK(rows[i].accuracy ==
              doctest::Approx(evaluate_accuracy(st.model, bundle.targets[i].second)).epsilon(1e-12));
    }

    const std::string table = format_eval_table(rows);
    CHECK(count_lines(table) == 5); // header + rule + three rows
    CHECK(table.find("domain") != std::string::npos);
    CHECK(table.find("accuracy") != std::string::npos);
    CHECK(table.find("rotation@0.25") != std::string::npos);
    CHECK(table.find("----") != std::string::npos);

    const fs::path csv = out / "eval.csv";
    write_eval_csv(rows, csv.string());
    const std::string text = slurp(csv);
    CHECK(text.rfind("domain,n,accuracy\n", 0) == 0);
    CHECK(count_lines(text) == 4);
    CHECK(text.find("rotation@0.5,40,") != std::string::npos);
}

TEST_CASE("few-shot adaptation fine-tunes a copy and leaves the original alone") {
    SynthSpec spec;
    spec.classes = 3;
    spec.dim = 6;
    spec.noise = 0.3;
    const SynthWorld world = make_synth_world(spec);
    const Dataset test = world.sample_target(1.0, 240, 999);

    RunConfig cfg = tiny_synth_config(fresh_dir("fewshot").string());
    cfg.set("synth.dim", "6");
    cfg.set("backbone.mlp_input_dim", "6");
    cfg.set("backbone.mlp_hidden", "16");

    SUBCASE("zero steps is a pure measurement") {
        const MetaState st = init_state(cfg);
        const VecX before = st.model.params();
        const Dataset pool = world.sample_target(1.0, 120, 100);
        const FewShotResult r = few_shot_adapt(st.model, pool, test, 5, 0, 0.01);
        CHECK(r.shots == 5);
        CHECK(r.steps == 0);
        CHECK(r.accuracy_before == r.accuracy_after);
        CHECK((r.model.params() - before).cwiseAbs().maxCoeff() == 0.0);
        CHECK((st.model.params() - before).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("a handful of shots lifts a fresh classifier on the shifted domain") {
        int improved = 0;
        Scalar best_after = 0.0;
        for (int s = 0; s < 5; ++s) {
            RunConfig run = cfg;
            run.set("seed", std::to_string(11 + s));
            const MetaState st = init_state(run);
            const VecX frozen = st.model.params();
            const Dataset pool = world.sample_target(1.0, 120, 100 + s);
            const FewShotResult r = few_shot_adapt(st.model, pool, test, 10, 150, 0.01);
            if (r.accuracy_after >= r.accuracy_before) ++improved;
            best_after = std::max(best_after, r.accuracy_after);
            CHECK((st.model.params() - frozen).cwiseAbs().maxCoeff() == 0.0);
        }
        CHECK(improved >= 4);
        CHECK(best_after >= 0.5);
    }

    SUBCASE("every short class is listed in the deficit error") {
        Dataset pool;
        pool.classes = 3;
        pool.inputs.shape = {18, 6};
        pool.inputs.v.assign(18 * 6, 0.1);
        pool.labels = {0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 1, 1, 1, 1, 1};
        const MetaState st = init_state(cfg);
        CHECK_THROWS_WITH_AS(few_shot_adapt(st.model, pool, test, 5, 10, 0.01),
                             doctest::Contains("class 0 has 2 examples, need 5"), ConfigError);
        try {
            few_shot_adapt(st.model, pool, test, 5, 10, 0.01);
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("few-shot pool is short") != std::string::npos);
            CHECK(msg.find("; class 2 has 3 examples, need 5") != std::string::npos);
        }
    }

    SUBCASE("argument validation") {
        const MetaState st = init_state(cfg);
        const Dataset pool = world.sample_target(1.0, 60, 100);
        CHECK_THROWS_WITH_AS(few_shot_adapt(st.model, pool, test, 0, 10, 0.01),
                             doctest::Contains("shots >= 1"), ConfigError);
        CHECK_THROWS_WITH_AS(few_shot_adapt(st.model, pool, test, 3, -1, 0.01),
                             doctest::Contains("steps >= 0"), ConfigError);
        Dataset wide = pool;
        wide.classes = 4;
        CHECK_THROWS_WITH_AS(few_shot_adapt(st.model, wide, test, 3, 10, 0.01),
                             doctest::Contains("4 classes but the model head has 3"), ConfigError);
    }
}

TEST_CASE("ablation grids enumerate the published variants and rewrite the config") {
    CHECK(ablation_variants("perturbation") ==
          std::vector<std::string>{"full", "random_gaussian", "deterministic", "random_mu",
                                   "random_sigma"});
    CHECK(ablation_variants("mixup") == std::vector<std::string>{"full", "wo_mixup", "random_mixup"});
    CHECK(ablation_variants("training") ==
          std::vector<std::string>{"full", "wo_adv_training", "wo_meta_learning", "wo_min_phi_p"});
    CHECK_THROWS_WITH_AS(ablation_variants("optimizer"),
                         doctest::Contains("(perturbation | mixup | training)"), ConfigError);

    RunConfig base = tiny_synth_config(fresh_dir("ablate_cfg").string());

    CHECK(apply_ablation_variant(base, "full").values() == base.values());
    CHECK(apply_ablation_variant(base, "random_gaussian").get("perturb.mode") == "random_gaussian");
    CHECK(apply_ablation_variant(base, "deterministic").get("perturb.mode") == "deterministic");
    CHECK(apply_ablation_variant(base, "random_mu").get("perturb.mode") == "random_mu");
    CHECK(apply_ablation_variant(base, "random_sigma").get("perturb.mode") == "random_sigma");
    CHECK(apply_ablation_variant(base, "wo_mixup").get("mixup.mode") == "off");
    CHECK(apply_ablation_variant(base, "random_mixup").get("mixup.mode") == "random");
    CHECK(apply_ablation_variant(base, "wo_adv_training").get_int("ada.ascent_steps") == 0);
    CHECK(apply_ablation_variant(base, "wo_meta_learning").get_bool("meta.joint") == true);
    CHECK(apply_ablation_variant(base, "wo_min_phi_p").get_bool("meta.update_psi") == false);
    CHECK_THROWS_AS((void)apply_ablation_variant(base, "wo_everything"), ConfigError);

    // Variants touch exactly one knob; everything else is inherited.
    const RunConfig tweaked = apply_ablation_variant(base, "wo_mixup");
    auto expect = base.values();
    expect["mixup.mode"] = "off";
    CHECK(tweaked.values() == expect);
}

TEST_CASE("a single synthetic run reports source and mean target accuracy") {
    const fs::path out = fresh_dir("synth_once");
    RunConfig cfg = tiny_synth_config(out.string());
    cfg.set("synth.dim", "4");
    cfg.set("backbone.mlp_input_dim", "4");
    cfg.set("synth.train_n", "150");
    cfg.set("synth.magnitudes", "0.5");
    cfg.set("meta.iterations", "40");
    cfg.set("meta.batch", "16");
    cfg.set("meta.k_domains", "1");
    cfg.set("meta.k_mc", "2");
    cfg.set("meta.k_max", "2");
    cfg.set("meta.eta", "0.02");
    cfg.set("meta.psi_lr", "0.005");
    cfg.set("ada.ascent_steps", "1");
    cfg.set("train.val_every", "10");
    cfg.set("train.checkpoint_every", "1000");
    cfg.set("train.print_every", "1000");

    const SynthRun run = run_synth_once(cfg);
    CHECK(run.source_accuracy >= 0.5); // 40 Adam steps separate three Gaussian blobs
    CHECK(run.target_accuracy >= 0.0);
    CHECK(run.target_accuracy <= 1.0);

    SUBCASE("only the synthetic benchmark qualifies") {
        RunConfig idx = tiny_idx_config(out.string());
        CHECK_THROWS_AS((void)run_synth_once(idx), ConfigError);
    }

    SUBCASE("an empty magnitude grid is caught before training") {
        RunConfig empty = cfg;
        empty.set("synth.magnitudes", "");
        CHECK_THROWS_WITH_AS((void)run_synth_once(empty),
                             doctest::Contains("no target magnitudes configured"), ConfigError);
    }
}

TEST_CASE("the augmentation preview writes pair statistics and, for images, PNM files") {
    SUBCASE("feature-space mode on vector data: pixels untouched, embeddings moved") {
        const fs::path out = fresh_dir("preview_vec");
        RunConfig cfg = tiny_synth_config(out.string());
        MetaState st = init_state(cfg);
        const DataBundle bundle = load_data(cfg, false);

        const fs::path dir = out / "preview";
        const PreviewStats stats = augment_preview(st, bundle.train, dir.string(), 6);
        CHECK(stats.pairs == 6);
        CHECK(stats.mean_pixel_rms == 0.0);
        CHECK(stats.mean_embed_dist > 0.0);

        const std::string csv = slurp(dir / "preview_stats.csv");
        CHECK(csv.rfind("pair,pixel_rms,embed_dist\n", 0) == 0);
        CHECK(count_lines(csv) == 7);
        for (const auto& entry : fs::directory_iterator(dir)) {
            const std::string ext = entry.path().extension().string();
            CHECK(ext != ".pgm");
            CHECK(ext != ".ppm");
        }
    }

    SUBCASE("grayscale image data comes out as P5 pair files") {
        const fs::path out = fresh_dir("preview_pgm");
        RunConfig cfg = tiny_idx_config(out.string());
        cfg.set("data.duplicate_channels", "false");
        cfg.set("backbone.name", "digits-convnet");
        cfg.set("backbone.image_size", "12");
        cfg.set("backbone.input_channels", "1");
        cfg.set("backbone.kernel", "3");
        cfg.set("backbone.conv1_channels", "2");
        cfg.set("backbone.conv2_channels", "3");
        cfg.set("backbone.fc_width", "8");
        cfg.set("backbone.classes", "10");
        MetaState st = init_state(cfg);
        const DataBundle bundle = load_data(cfg, false);

        const fs::path dir = out / "preview";
        const PreviewStats stats = augment_preview(st, bundle.train, dir.string(), 2);
        CHECK(stats.pairs == 2);
        CHECK(stats.mean_pixel_rms == 0.0); // feature-space synthesis leaves inputs alone
        for (const std::string stem : {"pair000", "pair001"}) {
            const std::string x = slurp(dir / (stem + "_x.pgm"));
            const std::string xp = slurp(dir / (stem + "_xplus.pgm"));
            REQUIRE_FALSE(x.empty());
            CHECK(x.rfind("P5", 0) == 0);
            CHECK(x == xp); // identical pixels by construction
        }
    }

    SUBCASE("three-channel image data comes out as P6 pair files") {
        const fs::path out = fresh_dir("preview_ppm");
        RunConfig cfg = tiny_idx_config(out.string());
        cfg.set("backbone.name", "digits-convnet");
        cfg.set("backbone.image_size", "12");
        cfg.set("backbone.input_channels", "3");
        cfg.set("backbone.kernel", "3");
        cfg.set("backbone.conv1_channels", "2");
        cfg.set("backbone.conv2_channels", "3");
        cfg.set("backbone.fc_width", "8");
        cfg.set("backbone.classes", "10");
        MetaState st = init_state(cfg);
        const DataBundle bundle = load_data(cfg, false);

        const fs::path dir = out / "preview";
        (void)augment_preview(st, bundle.train, dir.string(), 1);
        const std::string x = slurp(dir / "pair000_x.ppm");
        REQUIRE_FALSE(x.empty());
        CHECK(x.rfind("P6", 0) == 0);
    }

    SUBCASE("raw-input mode refuses to run without the trained reconstruction guard") {
        const fs::path out = fresh_dir("preview_mada");
        RunConfig cfg = tiny_synth_config(out.string());
        cfg.set("augment.mode", "mada");
        MetaState st = init_state(cfg);
        const DataBundle bundle = load_data(cfg, false);
        CHECK_THROWS_WITH_AS(augment_preview(st, bundle.train, (out / "p").string(), 2),
                             doctest::Contains("reconstruction guard"), ConfigError);
    }

    SUBCASE("argument validation") {
        const fs::path out = fresh_dir("preview_args");
        RunConfig cfg = tiny_synth_config(out.string());
        MetaState st = init_state(cfg);
        const DataBundle bundle = load_data(cfg, false);
        CHECK_THROWS_WITH_AS(augment_preview(st, bundle.train, (out / "p").string(), 0),
                             doctest::Contains("count must be >= 1"), ConfigError);
        Dataset empty;
        CHECK_THROWS_WITH_AS(augment_preview(st, empty, (out / "p").string(), 2),
                             doctest::Contains("dataset is empty"), ConfigError);
    }
}

TEST_CASE("the summary record is machine-readable JSON with the full config inline") {
    const fs::path out = fresh_dir("summary");
    RunConfig cfg = tiny_synth_config(out.string());
    const MetaState st = init_state(cfg);

    const fs::path path = out / "summary.json";
    write_summary(st, path.string());

    const nlohmann::json j = nlohmann::json::parse(slurp(path));
    CHECK(j.at("iteration").get<std::int64_t>() == 0);
    CHECK(j.at("validation_accuracy").is_number());
    CHECK(j.at("mean_sigma").get<double>() > 0.0);
    CHECK(j.at("domains_introduced").get<int>() == 0);
    CHECK(j.at("domains_held").get<int>() == 0);
    CHECK(j.at("model_parameters").get<std::int64_t>() == st.model.param_count());
    CHECK(j.at("head_parameters").get<std::int64_t>() == st.aux.param_count());
    CHECK_FALSE(j.at("config_hash").get<std::string>().empty());
    CHECK(j.at("config").at("data.source").get<std::string>() == "synthetic");
    CHECK(j.at("config").size() == cfg.values().size());
}

TEST_CASE("command line: a training run lands its artifacts and reports completion") {
    const CliFixture& fx = cli_fixture();
    REQUIRE(fx.train.rc == 0);
    CHECK(fx.train.out.find("done: 10 iterations") != std::string::npos);
    CHECK(fx.train.out.find("summary.json") != std::string::npos);
    CHECK(fs::exists(fx.dir / "checkpoint.ckpt"));
    CHECK(fs::exists(fx.dir / "metrics.csv"));

    const nlohmann::json j = nlohmann::json::parse(slurp(fx.dir / "summary.json"));
    CHECK(j.at("iteration").get<std::int64_t>() == 10);
    CHECK(j.at("domains_introduced").get<int>() == 1);

    const std::string metrics = slurp(fx.dir / "metrics.csv");
    CHECK(metrics.rfind("iteration,", 0) == 0);
    CHECK(count_lines(metrics) == 11);
}

TEST_CASE("command line: eval, adapt, and uncertainty consume the checkpoint") {
    const CliFixture& fx = cli_fixture();
    REQUIRE(fx.train.rc == 0);
    const std::string ck = (fx.dir / "checkpoint.ckpt").string();

    auto with_sets = [&](std::vector<std::string> head) {
        head.insert(head.end(), fx.sets.begin(), fx.sets.end());
        return head;
    };

    SUBCASE("eval writes the per-domain table") {
        const CliResult r = cli(with_sets({"eval", "--checkpoint", ck}));
        CHECK(r.rc == 0);
        CHECK(r.out.find("mean target accuracy:") != std::string::npos);
        CHECK(r.out.find("rotation@0.5") != std::string::npos);
        const std::string csv = slurp(fx.dir / "eval.csv");
        CHECK(csv.rfind("domain,n,accuracy\n", 0) == 0);
    }

    SUBCASE("adapt prints the before/after pair") {
        const CliResult r = cli(with_sets(
            {"adapt", "--checkpoint", ck, "--shots", "3", "--steps", "5", "--target", "0.5"}));
        CHECK(r.rc == 0);
        CHECK(r.out.find("target rotation@0.5: accuracy") != std::string::npos);
        CHECK(r.out.find("3 shots/class") != std::string::npos);
    }

    SUBCASE("uncertainty writes the score table without the baseline when asked") {
        const CliResult r = cli(with_sets({"uncertainty", "--checkpoint", ck, "--no-baseline"}));
        CHECK(r.rc == 0);
        const std::string csv = slurp(fx.dir / "uncertainty.csv");
        CHECK(csv.rfind("domain,n,score,baseline_variance,seconds_score,seconds_baseline\n", 0) == 0);
        CHECK(count_lines(csv) >= 3); // header + source holdout + one target
    }

    SUBCASE("checkpoint-bound subcommands refuse to run without one") {
        for (const std::string sub : {"eval", "adapt", "uncertainty"}) {
            const CliResult r = cli(with_sets({sub}));
            CHECK(r.rc == 2);
            CHECK(r.err.find(sub + " needs --checkpoint") != std::string::npos);
        }
    }

    SUBCASE("a mangled checkpoint maps to the numeric-abort exit code") {
        const fs::path bad = fx.dir / "mangled.ckpt";
        const std::string whole = slurp(fx.dir / "checkpoint.ckpt");
        std::ofstream(bad, std::ios::binary) << whole.substr(0, whole.size() / 2);
        const CliResult r = cli(with_sets({"eval", "--checkpoint", bad.string()}));
        CHECK(r.rc == 3);
        CHECK(r.err.find("numeric abort:") != std::string::npos);
    }

    SUBCASE("usage and configuration mistakes exit with code 2") {
        CHECK(cli({"train", "--set", "oops"}).rc == 2);
        const CliResult unknown = cli({"train", "--set", "nope=1"});
        CHECK(unknown.rc == 2);
        CHECK(unknown.err.find("config error:") != std::string::npos);
        CHECK(cli({}).rc == 2); // a subcommand is required
        const CliResult help = cli({"--help"});
        CHECK(help.rc == 0);
        CHECK(help.out.find("train") != std::string::npos);
    }
}

TEST_CASE("command line: the ablation grid and the preview complete the toolchain") {
    const CliFixture& fx = cli_fixture();
    REQUIRE(fx.train.rc == 0);

    SUBCASE("ablate sweeps every variant of the suite across the seeds") {
        const fs::path out = fresh_dir("cli_ablate");
        std::vector<std::string> args = {"ablate", "--suite", "mixup", "--seeds", "1"};
        args.insert(args.end(), fx.sets.begin(), fx.sets.end());
        args.push_back("--set");
        args.push_back("output_dir=" + out.string());
        const CliResult r = cli(args);
        CHECK(r.rc == 0);
        CHECK(r.out.find("full") != std::string::npos);
        const std::string csv = slurp(out / "ablate_mixup.csv");
        CHECK(csv.rfind("variant,seed,target_accuracy\n", 0) == 0);
        CHECK(count_lines(csv) == 4); // header + {full, wo_mixup, random_mixup} x 1 seed
        CHECK(csv.find("wo_mixup,") != std::string::npos);
        CHECK(fs::exists(out / "ablate-mixup" / "random_mixup" / "seed1" / "checkpoint.ckpt"));
    }

    SUBCASE("augment-preview falls back to untrained heads when no checkpoint is given") {
        const fs::path out = fresh_dir("cli_preview");
        std::vector<std::string> args = {"augment-preview", "--count", "3"};
        args.insert(args.end(), fx.sets.begin(), fx.sets.end());
        args.push_back("--set");
        args.push_back("output_dir=" + out.string());
        const CliResult r = cli(args);
        CHECK(r.rc == 0);
        CHECK(r.err.find("previewing the untrained heads") != std::string::npos);
        const std::string csv = slurp(out / "preview" / "preview_stats.csv");
        CHECK(csv.rfind("pair,pixel_rms,embed_dist\n", 0) == 0);
        CHECK(count_lines(csv) == 4);
    }
}

TEST_SUITE_END();
