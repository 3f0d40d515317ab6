#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ugda/data.hpp"
#include "ugda/errors.hpp"
#include "ugda/rng.hpp"

using namespace ugda;

namespace {

namespace fs = std::filesystem;

fs::path idx_dir() {
    const auto dir = fs::temp_directory_path() / "ugda_idx_fixtures";
    fs::create_directories(dir);
    return dir;
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::string write_images(const std::string& name, std::uint32_t count, std::uint32_t rows,
                         std::uint32_t cols, const std::vector<unsigned char>& pixels,
                         std::uint32_t magic = 0x00000803u) {
    const fs::path p = idx_dir() / name;
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    put_be32(out, magic);
    put_be32(out, count);
    put_be32(out, rows);
    put_be32(out, cols);
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    return p.string();
}

std::string write_labels(const std::string& name, std::uint32_t count,
                         const std::vector<unsigned char>& labels,
                         std::uint32_t magic = 0x00000801u) {
    const fs::path p = idx_dir() / name;
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    put_be32(out, magic);
    put_be32(out, count);
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
    return p.string();
}

// Four 2x2 images with distinct uniform gray levels.
struct Fixture {
    std::string images, labels;
    std::vector<unsigned char> levels{17, 0, 255, 200};
    std::vector<unsigned char> y{3, 1, 4, 1};
};
Fixture make_fixture() {
    Fixture f;
    std::vector<unsigned char> px;
    for (unsigned char lvl : f.levels)
        for (int i = 0; i < 4; ++i) px.push_back(lvl);
    f.images = write_images("four.images.idx", 4, 2, 2, px);
    f.labels = write_labels("four.labels.idx", 4, {f.y.begin(), f.y.end()});
    return f;
}

Dataset random_image_dataset(int n, int c, int s, std::uint64_t seed) {
    Dataset ds;
    ds.classes = 10;
    ds.name = "probe";
    ds.inputs = Tensor({n, c, s, s});
    RngStream rng(seed);
    for (auto& v : ds.inputs.v) v = rng.uniform();
    ds.labels.resize(static_cast<std::size_t>(n), 0);
    return ds;
}

Scalar mean_l2(const Dataset& a, const Dataset& b) {
    Scalar total = 0.0;
    for (std::int64_t i = 0; i < a.inputs.numel(); ++i) {
        const Scalar d = a.inputs[i] - b.inputs[i];
        total += d * d;
    }
    return std::sqrt(total / a.n());
}

} // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("IDX pairs load with scaling, channel replication and resizing") {
    const Fixture f = make_fixture();

    SUBCASE("default options yield 3x32x32 in [0,1]") {
        const Dataset ds = load_idx(f.images, f.labels);
        REQUIRE(ds.inputs.shape == std::vector<int>{4, 3, 32, 32});
        CHECK(ds.classes == 10);
        CHECK(ds.name == f.images);
        REQUIRE(ds.labels.size() == 4);
        for (int i = 0; i < 4; ++i) CHECK(ds.labels[static_cast<std::size_t>(i)] == f.y[static_cast<std::size_t>(i)]);
        // Uniform source planes stay uniform through the bilinear resize and
        // are replicated across all three channels.
        for (int i = 0; i < 4; ++i) {
            const Scalar expect = f.levels[static_cast<std::size_t>(i)] / 255.0;
            const std::int64_t per = 3 * 32 * 32;
            for (std::int64_t t = 0; t < per; ++t)
                CHECK(ds.inputs[i * per + t] == doctest::Approx(expect).epsilon(1e-12));
        }
    }

    SUBCASE("native size and a single channel keep the raw bytes") {
        IdxOptions opt;
        opt.target_size = 0;
        opt.channels = 1;
        const Dataset ds = load_idx(f.images, f.labels, opt);
        REQUIRE(ds.inputs.shape == std::vector<int>{4, 1, 2, 2});
        for (int i = 0; i < 4; ++i)
            for (int t = 0; t < 4; ++t)
                CHECK(ds.inputs[static_cast<std::int64_t>(i) * 4 + t] ==
                      doctest::Approx(f.levels[static_cast<std::size_t>(i)] / 255.0).epsilon(1e-12));
    }

    SUBCASE("upscaling follows the half-pixel bilinear rule") {
        // Rows of [0, 255]: a doubled output row must read [0, 1/4, 3/4, 1].
        const std::string imgs = write_images("grad.images.idx", 1, 2, 2, {0, 255, 0, 255});
        const std::string labs = write_labels("grad.labels.idx", 1, {7});
        IdxOptions opt;
        opt.target_size = 4;
        opt.channels = 1;
        const Dataset ds = load_idx(imgs, labs, opt);
        REQUIRE(ds.inputs.shape == std::vector<int>{1, 1, 4, 4});
        const Scalar expect[4] = {0.0, 0.25, 0.75, 1.0};
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                CHECK(ds.inputs[static_cast<std::int64_t>(i) * 4 + j] ==
                      doctest::Approx(expect[j]).epsilon(1e-12));
    }

    SUBCASE("an empty pair is a valid empty dataset") {
        const std::string imgs = write_images("none.images.idx", 0, 0, 0, {});
        const std::string labs = write_labels("none.labels.idx", 0, {});
        const Dataset ds = load_idx(imgs, labs);
        CHECK(ds.n() == 0);
        CHECK(ds.inputs.shape == std::vector<int>{0, 3, 32, 32});
    }
}

TEST_CASE("malformed IDX files fail with the file and byte offset named") {
    const Fixture f = make_fixture();

    SUBCASE("image magic") {
        const std::string bad = write_images("badmagic.images.idx", 4, 2, 2,
                                             std::vector<unsigned char>(16, 0), 0x00000801u);
        CHECK_THROWS_WITH_AS(
            (void)load_idx(bad, f.labels),
            doctest::Contains("bad magic at byte offset 0: expected 0x00000803, got 0x00000801"),
            ConfigError);
    }

    SUBCASE("label magic") {
        const std::string bad = write_labels("badmagic.labels.idx", 4, {0, 0, 0, 0}, 0x00000803u);
        CHECK_THROWS_WITH_AS((void)load_idx(f.images, bad),
                             doctest::Contains("expected 0x00000801, got 0x00000803"), ConfigError);
    }

    SUBCASE("truncated header") {
        const fs::path p = idx_dir() / "short.images.idx";
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        put_be32(out, 0x00000803u);
        put_be32(out, 4);
        out.close();
        CHECK_THROWS_WITH_AS((void)load_idx(p.string(), f.labels),
                             doctest::Contains("truncated at byte offset 8"), ConfigError);
    }

    SUBCASE("truncated image payload") {
        const std::string imgs =
            write_images("shortpx.images.idx", 4, 2, 2, std::vector<unsigned char>(9, 0));
        CHECK_THROWS_WITH_AS((void)load_idx(imgs, f.labels),
                             doctest::Contains("truncated image data at byte offset"), ConfigError);
    }

    SUBCASE("truncated label payload") {
        const std::string labs = write_labels("shortlb.labels.idx", 4, {1, 2});
        CHECK_THROWS_WITH_AS((void)load_idx(f.images, labs),
                             doctest::Contains("truncated label data"), ConfigError);
    }

    SUBCASE("count mismatch between the two files") {
        const std::string labs = write_labels("three.labels.idx", 3, {1, 2, 3});
        CHECK_THROWS_WITH_AS((void)load_idx(f.images, labs),
                             doctest::Contains("3 labels for 4 images"), ConfigError);
    }

    SUBCASE("missing files") {
        CHECK_THROWS_WITH_AS((void)load_idx("/nonexistent/a.idx", f.labels),
                             doctest::Contains("cannot open IDX image file"), ConfigError);
        CHECK_THROWS_WITH_AS((void)load_idx(f.images, "/nonexistent/b.idx"),
                             doctest::Contains("cannot open IDX label file"), ConfigError);
    }
}

TEST_CASE("corruptions are deterministic, bounded, named and graded") {
    // A smooth sinusoidal pattern: geometric corruptions (blur, rotation)
    // keep doing measurable extra damage at every severity on structured
    // images, where pure noise would decorrelate after the first hit.
    Dataset src = random_image_dataset(4, 1, 16, 51);
    for (int i = 0; i < 4; ++i)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                src.inputs[(static_cast<std::int64_t>(i) * 16 + y) * 16 + x] =
                    0.5 + 0.45 * std::sin(2.0 * 3.14159265358979323846 * y / 8.0) *
                              std::cos(2.0 * 3.14159265358979323846 * (x + i) / 8.0);

    const CorruptKind kinds[] = {CorruptKind::GaussianNoise, CorruptKind::ImpulseNoise,
                                 CorruptKind::Blur,          CorruptKind::Brightness,
                                 CorruptKind::Contrast,      CorruptKind::Rotation};
    for (CorruptKind k : kinds) {
        CAPTURE(to_string(k));
        const CorruptSpec spec{k, 3};
        const Dataset a = corrupt(src, spec, 99);
        const Dataset b = corrupt(src, spec, 99);
        CHECK(a.inputs.v == b.inputs.v); // bit-identical replay
        CHECK(a.name == src.name + "/" + to_string(k) + ":3");
        CHECK(a.labels == src.labels);
        for (Scalar v : a.inputs.v) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        // Severity grades the damage monotonically.
        Scalar prev = 0.0;
        for (int sev = 1; sev <= 5; ++sev) {
            const Scalar d = mean_l2(src, corrupt(src, {k, sev}, 99));
            CHECK(d > prev);
            prev = d;
        }
    }

    SUBCASE("brightness is an exact additive shift before clamping") {
        Dataset half = src;
        half.inputs.fill(0.5);
        const Dataset out = corrupt(half, {CorruptKind::Brightness, 1}, 1);
        for (Scalar v : out.inputs.v) CHECK(v == doctest::Approx(0.58).epsilon(1e-12));
    }

    SUBCASE("non-image data is rejected") {
        Dataset vec;
        vec.classes = 3;
        vec.name = "vectors";
        vec.inputs = Tensor({5, 4});
        vec.labels.assign(5, 0);
        CHECK_THROWS_WITH_AS((void)corrupt(vec, {CorruptKind::Blur, 1}, 1),
                             doctest::Contains("not image data"), ConfigError);
    }

    SUBCASE("severity bounds are enforced") {
        CHECK_THROWS_WITH_AS((void)corrupt(src, {CorruptKind::Blur, 0}, 1),
                             doctest::Contains("severity must be 1..5"), ConfigError);
        CHECK_THROWS_AS((void)corrupt(src, {CorruptKind::Blur, 6}, 1), ConfigError);
    }
}

TEST_CASE("corruption specs parse from kind:severity strings") {
    const CorruptSpec spec = corrupt_spec_from("impulse_noise:4");
    CHECK(spec.kind == CorruptKind::ImpulseNoise);
    CHECK(spec.severity == 4);

    for (const char* name :
         {"gaussian_noise", "impulse_noise", "blur", "brightness", "contrast", "rotation"})
        CHECK(to_string(corrupt_kind_from(name)) == name);

    CHECK_THROWS_WITH_AS((void)corrupt_spec_from("blur"),
                         doctest::Contains("must look like kind:severity"), ConfigError);
    CHECK_THROWS_WITH_AS((void)corrupt_spec_from("blur:x"),
                         doctest::Contains("severity is not an integer"), ConfigError);
    CHECK_THROWS_WITH_AS((void)corrupt_spec_from("blur:0"),
                         doctest::Contains("severity must be 1..5"), ConfigError);
    CHECK_THROWS_WITH_AS((void)corrupt_spec_from("melt:2"), doctest::Contains("unknown corruption"),
                         ConfigError);
}

TEST_CASE("the synthetic world produces coupled source and target samples") {
    SynthSpec spec; // 5 classes, dim 8, noise 0.35
    const SynthWorld world = make_synth_world(spec);

    SUBCASE("degenerate geometry is rejected") {
        SynthSpec bad;
        bad.classes = 5;
        bad.dim = 3;
        CHECK_THROWS_WITH_AS((void)make_synth_world(bad), doctest::Contains("must be >= classes"),
                             ConfigError);
    }

    SUBCASE("class means are an orthogonal frame of fixed radius") {
        const auto M = world.means.mat(spec.classes, spec.dim);
        for (int i = 0; i < spec.classes; ++i) {
            CHECK(M.row(i).norm() == doctest::Approx(1.6).epsilon(1e-9));
            for (int j = 0; j < i; ++j)
                CHECK(std::abs(M.row(i).dot(M.row(j))) < 1e-9);
        }
    }

    SUBCASE("magnitude zero is the source distribution itself") {
        const Dataset s = world.sample_source(40, 5);
        const Dataset t = world.sample_target(0.0, 40, 5);
        CHECK(s.inputs.v == t.inputs.v);
        CHECK(s.labels == t.labels);
    }

    SUBCASE("the rotation family rigidly rotates the shared draws") {
        const int n = 64;
        const Dataset s = world.sample_source(n, 9);
        const Dataset t = world.sample_target(0.8, n, 9);
        CHECK(s.labels == t.labels); // common random numbers couple the draws
        const auto u = world.plane_u.vec();
        const auto v = world.plane_v.vec();
        const Scalar angle = 0.8 * 3.14159265358979323846 / 4.0;
        for (int i = 0; i < n; ++i) {
            const auto xs = s.inputs.mat(n, spec.dim).row(i);
            const auto xt = t.inputs.mat(n, spec.dim).row(i);
            // Norm is preserved ...
            CHECK(xt.norm() == doctest::Approx(xs.norm()).epsilon(1e-9));
            // ... the out-of-plane component is untouched ...
            const VecX res_s = xs.transpose() - xs.dot(u) * u - xs.dot(v) * v;
            const VecX res_t = xt.transpose() - xt.dot(u) * u - xt.dot(v) * v;
            CHECK((res_s - res_t).cwiseAbs().maxCoeff() < 1e-9);
            // ... and the in-plane angle advances by exactly the family angle.
            const Scalar a0 = std::atan2(xs.dot(v), xs.dot(u));
            const Scalar a1 = std::atan2(xt.dot(v), xt.dot(u));
            Scalar delta = a1 - a0;
            while (delta < -3.14159265358979323846) delta += 2 * 3.14159265358979323846;
            while (delta > 3.14159265358979323846) delta -= 2 * 3.14159265358979323846;
            CHECK(delta == doctest::Approx(angle).epsilon(1e-6));
        }
    }

    SUBCASE("the covariance family scales residuals around the class mean") {
        SynthSpec cov = spec;
        cov.shift = "covariance";
        const SynthWorld w2 = make_synth_world(cov);
        const int n = 32;
        const Dataset s = w2.sample_source(n, 13);
        const Dataset t = w2.sample_target(0.5, n, 13);
        const Scalar scale = 1.0 + 2.0 * 0.5;
        for (int i = 0; i < n; ++i) {
            const int cls = s.labels[static_cast<std::size_t>(i)];
            for (int j = 0; j < cov.dim; ++j) {
                const Scalar m = w2.means[static_cast<std::int64_t>(cls) * cov.dim + j];
                const Scalar rs = s.inputs[static_cast<std::int64_t>(i) * cov.dim + j] - m;
                const Scalar rt = t.inputs[static_cast<std::int64_t>(i) * cov.dim + j] - m;
                CHECK(rt == doctest::Approx(scale * rs).epsilon(1e-9));
            }
        }
    }

    SUBCASE("the permutation family preserves each row as a multiset") {
        SynthSpec pm = spec;
        pm.shift = "permutation";
        const SynthWorld w2 = make_synth_world(pm);
        const int n = 32;
        const Dataset s = w2.sample_source(n, 17);
        const Dataset t = w2.sample_target(1.0, n, 17);
        for (int i = 0; i < n; ++i) {
            std::vector<Scalar> rs(s.inputs.v.begin() + i * pm.dim,
                                   s.inputs.v.begin() + (i + 1) * pm.dim);
            std::vector<Scalar> rt(t.inputs.v.begin() + i * pm.dim,
                                   t.inputs.v.begin() + (i + 1) * pm.dim);
            std::sort(rs.begin(), rs.end());
            std::sort(rt.begin(), rt.end());
            CHECK(rs == rt);
        }
        // magnitude 1 with dim 8 swaps 4 disjoint pairs: rows must differ.
        CHECK(mean_l2(s, t) > 0.0);
    }

    SUBCASE("the closed-form discriminant is strong at home and degrades under shift") {
        const Dataset s = world.sample_source(500, 21);
        const Scalar home = world.bayes_accuracy(s);
        CHECK(home >= 0.95);
        // A quarter-turn of the shift plane (magnitude 2) moves the in-plane
        // class structure completely; accuracy must drop well clear of home.
        CHECK(world.bayes_accuracy(world.sample_target(1.0, 500, 21)) < home);
        CHECK(world.bayes_accuracy(world.sample_target(2.0, 500, 21)) <= home - 0.02);
    }
}

TEST_CASE("the train/val split is a shuffled partition of the right size") {
    const Dataset ds = random_image_dataset(97, 1, 4, 61);
    Dataset labeled = ds;
    for (int i = 0; i < labeled.n(); ++i) labeled.labels[static_cast<std::size_t>(i)] = i % 10;

    auto [train, val] = split_train_val(labeled, 0.1, 71);
    CHECK(val.n() == 10); // lround(9.7)
    CHECK(train.n() == 87);

    // Partition: every original row appears exactly once across both parts.
    // Rows are identified by their (unique, random) first pixel.
    std::multiset<Scalar> seen;
    const std::int64_t per = labeled.inputs.numel() / labeled.n();
    for (const Dataset* part : {&train, &val})
        for (int i = 0; i < part->n(); ++i) seen.insert(part->inputs[i * per]);
    std::multiset<Scalar> expect;
    for (int i = 0; i < labeled.n(); ++i) expect.insert(labeled.inputs[i * per]);
    CHECK(seen == expect);

    SUBCASE("the same seed reproduces the split; a different seed moves it") {
        auto [t2, v2] = split_train_val(labeled, 0.1, 71);
        CHECK(t2.inputs.v == train.inputs.v);
        CHECK(v2.inputs.v == val.inputs.v);
        auto [t3, v3] = split_train_val(labeled, 0.1, 72);
        CHECK(v3.inputs.v != val.inputs.v);
    }

    SUBCASE("fractions outside [0,1) are rejected") {
        CHECK_THROWS_AS((void)split_train_val(labeled, 1.0, 1), ConfigError);
        CHECK_THROWS_AS((void)split_train_val(labeled, -0.1, 1), ConfigError);
    }
}

TEST_CASE("the batch stream cycles shuffled epochs and resumes mid-epoch") {
    SUBCASE("one epoch covers every index exactly once") {
        BatchStream bs(10, 5, 81);
        std::vector<int> epoch;
        for (int k = 0; k < 2; ++k)
            for (int v : bs.next()) epoch.push_back(v);
        std::sort(epoch.begin(), epoch.end());
        std::vector<int> expect(10);
        std::iota(expect.begin(), expect.end(), 0);
        CHECK(epoch == expect);
    }

    SUBCASE("a batch that straddles the epoch boundary reshuffles mid-batch") {
        BatchStream bs(10, 3, 82);
        std::vector<int> seen;
        for (int k = 0; k < 4; ++k)
            for (int v : bs.next()) seen.push_back(v);
        REQUIRE(seen.size() == 12);
        std::vector<int> first10(seen.begin(), seen.begin() + 10);
        std::sort(first10.begin(), first10.end());
        std::vector<int> expect(10);
        std::iota(expect.begin(), expect.end(), 0);
        CHECK(first10 == expect); // the first pass is complete before any repeat
        for (int v : seen) {
            CHECK(v >= 0);
            CHECK(v < 10);
        }
    }

    SUBCASE("save/load continues the exact index sequence") {
        BatchStream bs(23, 4, 83);
        (void)bs.next();
        (void)bs.next();
        std::stringstream state;
        bs.save(state);

        std::vector<std::vector<int>> expect;
        for (int k = 0; k < 8; ++k) expect.push_back(bs.next());

        BatchStream restored;
        restored.load(state);
        for (int k = 0; k < 8; ++k) CHECK(restored.next() == expect[static_cast<std::size_t>(k)]);
    }

    SUBCASE("degenerate construction is rejected and truncated state detected") {
        CHECK_THROWS_AS(BatchStream(0, 4, 1), ConfigError);
        CHECK_THROWS_AS(BatchStream(10, 0, 1), ConfigError);
        std::stringstream broken("5 2");
        BatchStream bs;
        CHECK_THROWS_AS(bs.load(broken), NumericError);
    }
}

TEST_CASE("index gathering copies rows and one-hot labels faithfully") {
    Dataset ds;
    ds.classes = 4;
    ds.inputs = Tensor({3, 2}, {1, 2, 3, 4, 5, 6});
    ds.labels = {2, 0, 3};

    const Tensor x = gather_inputs(ds, {2, 0});
    REQUIRE(x.shape == std::vector<int>{2, 2});
    CHECK(x[0] == 5);
    CHECK(x[1] == 6);
    CHECK(x[2] == 1);
    CHECK(x[3] == 2);

    const Tensor y = gather_labels(ds, {2, 0});
    REQUIRE(y.shape == std::vector<int>{2, 4});
    CHECK(y[3] == 1.0); // row 0 = dataset row 2 = class 3
    CHECK(y[6] == 1.0); // row 1 = dataset row 0 = class 2
    CHECK(y.vec().sum() == doctest::Approx(2.0));

    CHECK_THROWS_AS((void)gather_labels(ds, {3}), ConfigError);
    CHECK_THROWS_WITH_AS((void)ds.subset({-1}), doctest::Contains("index out of range"),
                         ConfigError);
}

TEST_SUITE_END();
