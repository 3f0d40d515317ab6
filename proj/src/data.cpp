#include "ugda/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "ugda/backbone.hpp" // one_hot
#include "ugda/errors.hpp"

namespace ugda {

namespace {
constexpr double kPi = 3.14159265358979323846;
} // namespace

Dataset Dataset::subset(const std::vector<int>& idx) const {
    Dataset out;
    out.classes = classes;
    out.name = name;
    const std::int64_t per = n() > 0 ? inputs.numel() / n() : 0;
    std::vector<int> shape = inputs.shape;
    shape[0] = static_cast<int>(idx.size());
    out.inputs = Tensor(shape);
    out.labels.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const int src = idx[i];
        if (src < 0 || src >= n()) throw ConfigError("dataset subset: index out of range");
        std::copy_n(inputs.data() + static_cast<std::int64_t>(src) * per, per,
                    out.inputs.data() + static_cast<std::int64_t>(i) * per);
        out.labels.push_back(labels[static_cast<std::size_t>(src)]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::string& path, std::int64_t& offset) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in)
        throw ConfigError(path + ": truncated at byte offset " + std::to_string(offset));
    offset += 4;
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

std::string hex32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%08x", v);
    return buf;
}

// Bilinear resize of one grayscale plane.
void resize_plane(const Scalar* src, int h, int w, Scalar* dst, int s) {
    const Scalar sy = static_cast<Scalar>(h) / s, sx = static_cast<Scalar>(w) / s;
    for (int i = 0; i < s; ++i) {
        const Scalar fy = std::clamp((i + 0.5) * sy - 0.5, 0.0, static_cast<Scalar>(h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, h - 1);
        const Scalar wy = fy - y0;
        for (int j = 0; j < s; ++j) {
            const Scalar fx = std::clamp((j + 0.5) * sx - 0.5, 0.0, static_cast<Scalar>(w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, w - 1);
            const Scalar wx = fx - x0;
            dst[static_cast<std::int64_t>(i) * s + j] =
                (1 - wy) * ((1 - wx) * src[y0 * w + x0] + wx * src[y0 * w + x1]) +
                wy * ((1 - wx) * src[y1 * w + x0] + wx * src[y1 * w + x1]);
        }
    }
}

} // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const IdxOptions& opt) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw ConfigError("cannot open IDX image file '" + images_path + "'");
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw ConfigError("cannot open IDX label file '" + labels_path + "'");

    std::int64_t ioff = 0;
    const std::uint32_t imagic = read_be32(img, images_path, ioff);
    if (imagic != 0x00000803u)
        throw ConfigError(images_path + ": bad magic at byte offset 0: expected 0x00000803, got " +
                          hex32(imagic));
    const std::uint32_t count = read_be32(img, images_path, ioff);
    const std::uint32_t rows = read_be32(img, images_path, ioff);
    const std::uint32_t cols = read_be32(img, images_path, ioff);

    std::int64_t loff = 0;
    const std::uint32_t lmagic = read_be32(lab, labels_path, loff);
    if (lmagic != 0x00000801u)
        throw ConfigError(labels_path + ": bad magic at byte offset 0: expected 0x00000801, got " +
                          hex32(lmagic));
    const std::uint32_t lcount = read_be32(lab, labels_path, loff);
    if (lcount != count)
        throw ConfigError(labels_path + ": " + std::to_string(lcount) + " labels for " +
                          std::to_string(count) + " images in " + images_path);

    Dataset ds;
    ds.name = images_path;
    ds.classes = 10;
    const int s = opt.target_size > 0 ? opt.target_size : static_cast<int>(rows);
    const int ch = std::max(1, opt.channels);
    if (count == 0) {
        ds.inputs = Tensor({0, ch, s, s});
        return ds;
    }
    if (rows == 0 || cols == 0)
        throw ConfigError(images_path + ": zero image dimensions in header");

    std::vector<unsigned char> raw(static_cast<std::size_t>(rows) * cols);
    std::vector<Scalar> gray(raw.size());
    Tensor plane({s, s});
    ds.inputs = Tensor({static_cast<int>(count), ch, s, s});
    ds.labels.resize(count);

    for (std::uint32_t i = 0; i < count; ++i) {
        img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (!img)
            throw ConfigError(images_path + ": truncated image data at byte offset " +
                              std::to_string(ioff) + " (image " + std::to_string(i) + " of " +
                              std::to_string(count) + ")");
        ioff += static_cast<std::int64_t>(raw.size());
        for (std::size_t p = 0; p < raw.size(); ++p) gray[p] = raw[p] / 255.0;

        const Scalar* src = gray.data();
        if (s != static_cast<int>(rows) || s != static_cast<int>(cols)) {
            resize_plane(gray.data(), static_cast<int>(rows), static_cast<int>(cols), plane.data(), s);
            src = plane.data();
        }
        for (int c = 0; c < ch; ++c)
            std::copy_n(src, static_cast<std::int64_t>(s) * s,
                        ds.inputs.data() + ((static_cast<std::int64_t>(i) * ch + c) * s * s));

        unsigned char lb = 0;
        lab.read(reinterpret_cast<char*>(&lb), 1);
        if (!lab)
            throw ConfigError(labels_path + ": truncated label data at byte offset " +
                              std::to_string(loff));
        ++loff;
        ds.labels[i] = lb;
    }
    return ds;
}

// ---------------------------------------------------------------------------
// corruptions
// ---------------------------------------------------------------------------

CorruptKind corrupt_kind_from(const std::string& name) {
    if (name == "gaussian_noise") return CorruptKind::GaussianNoise;
    if (name == "impulse_noise") return CorruptKind::ImpulseNoise;
    if (name == "blur") return CorruptKind::Blur;
    if (name == "brightness") return CorruptKind::Brightness;
    if (name == "contrast") return CorruptKind::Contrast;
    if (name == "rotation") return CorruptKind::Rotation;
    throw ConfigError("unknown corruption '" + name +
                      "' (gaussian_noise | impulse_noise | blur | brightness | contrast | rotation)");
}

std::string to_string(CorruptKind k) {
    switch (k) {
    case CorruptKind::GaussianNoise: return "gaussian_noise";
    case CorruptKind::ImpulseNoise: return "impulse_noise";
    case CorruptKind::Blur: return "blur";
    case CorruptKind::Brightness: return "brightness";
    case CorruptKind::Contrast: return "contrast";
    case CorruptKind::Rotation: return "rotation";
    }
    return "?";
}

CorruptSpec corrupt_spec_from(const std::string& entry) {
    const std::size_t colon = entry.find(':');
    if (colon == std::string::npos)
        throw ConfigError("corruption entry '" + entry + "' must look like kind:severity");
    CorruptSpec spec;
    spec.kind = corrupt_kind_from(entry.substr(0, colon));
    try {
        spec.severity = std::stoi(entry.substr(colon + 1));
    } catch (const std::exception&) {
        throw ConfigError("corruption entry '" + entry + "': severity is not an integer");
    }
    if (spec.severity < 1 || spec.severity > 5)
        throw ConfigError("corruption entry '" + entry + "': severity must be 1..5");
    return spec;
}

namespace {

void rotate_image(const Scalar* src, int c, int h, int w, Scalar deg, Scalar* dst) {
    const Scalar rad = deg * kPi / 180.0;
    const Scalar cs = std::cos(rad), sn = std::sin(rad);
    const Scalar cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    for (int ch = 0; ch < c; ++ch) {
        const Scalar* sp = src + static_cast<std::int64_t>(ch) * h * w;
        Scalar* dp = dst + static_cast<std::int64_t>(ch) * h * w;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                // Inverse map the output pixel into the source frame.
                const Scalar dy = i - cy, dx = j - cx;
                const Scalar sy = cs * dy + sn * dx + cy;
                const Scalar sx = -sn * dy + cs * dx + cx;
                Scalar v = 0.0;
                if (sy >= 0 && sy <= h - 1 && sx >= 0 && sx <= w - 1) {
                    const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
                    const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
                    const Scalar wy = sy - y0, wx = sx - x0;
                    v = (1 - wy) * ((1 - wx) * sp[y0 * w + x0] + wx * sp[y0 * w + x1]) +
                        wy * ((1 - wx) * sp[y1 * w + x0] + wx * sp[y1 * w + x1]);
                }
                dp[static_cast<std::int64_t>(i) * w + j] = v;
            }
    }
}

void box_blur(Scalar* img, int c, int h, int w, int repeats) {
    std::vector<Scalar> tmp(static_cast<std::size_t>(h) * w);
    for (int r = 0; r < repeats; ++r)
        for (int ch = 0; ch < c; ++ch) {
            Scalar* p = img + static_cast<std::int64_t>(ch) * h * w;
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    Scalar acc = 0.0;
                    int cnt = 0;
                    for (int di = -1; di <= 1; ++di)
                        for (int dj = -1; dj <= 1; ++dj) {
                            const int y = i + di, x = j + dj;
                            if (y < 0 || y >= h || x < 0 || x >= w) continue;
                            acc += p[y * w + x];
                            ++cnt;
                        }
                    tmp[static_cast<std::size_t>(i) * w + j] = acc / cnt;
                }
            std::copy(tmp.begin(), tmp.end(), p);
        }
}

} // namespace

Dataset corrupt(const Dataset& src, const CorruptSpec& spec, std::uint64_t seed) {
    if (!src.is_image())
        throw ConfigError("corrupt: dataset '" + src.name + "' is not image data");
    if (spec.severity < 1 || spec.severity > 5)
        throw ConfigError("corrupt: severity must be 1..5, got " + std::to_string(spec.severity));

    Dataset out = src;
    out.name = src.name + "/" + to_string(spec.kind) + ":" + std::to_string(spec.severity);
    const int n = src.n(), c = src.inputs.shape[1], h = src.inputs.shape[2], w = src.inputs.shape[3];
    const std::int64_t per = static_cast<std::int64_t>(c) * h * w;
    RngStream rng(seed);
    const int sev = spec.severity;

    for (int i = 0; i < n; ++i) {
        Scalar* p = out.inputs.data() + static_cast<std::int64_t>(i) * per;
        switch (spec.kind) {
        case CorruptKind::GaussianNoise: {
            const Scalar sd = 0.04 * sev;
            for (std::int64_t t = 0; t < per; ++t)
                p[t] = std::clamp(p[t] + sd * rng.normal(), 0.0, 1.0);
            break;
        }
        case CorruptKind::ImpulseNoise: {
            const Scalar prob = 0.02 * sev;
            for (std::int64_t t = 0; t < per; ++t)
                if (rng.bernoulli(prob)) p[t] = rng.bernoulli(0.5) ? 1.0 : 0.0;
            break;
        }
        case CorruptKind::Blur:
            box_blur(p, c, h, w, sev);
            break;
        case CorruptKind::Brightness: {
            const Scalar delta = 0.08 * sev;
            for (std::int64_t t = 0; t < per; ++t) p[t] = std::clamp(p[t] + delta, 0.0, 1.0);
            break;
        }
        case CorruptKind::Contrast: {
            const Scalar factor = 1.0 - 0.12 * sev;
            for (std::int64_t t = 0; t < per; ++t)
                p[t] = std::clamp((p[t] - 0.5) * factor + 0.5, 0.0, 1.0);
            break;
        }
        case CorruptKind::Rotation: {
            std::vector<Scalar> copy(p, p + per);
            rotate_image(copy.data(), c, h, w, 6.0 * sev, p);
            break;
        }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// synthetic benchmark
// ---------------------------------------------------------------------------

SynthSpec SynthSpec::from(const RunConfig& cfg) {
    SynthSpec s;
    s.classes = static_cast<int>(cfg.get_int("synth.classes"));
    s.dim = static_cast<int>(cfg.get_int("synth.dim"));
    s.train_n = static_cast<int>(cfg.get_int("synth.train_n"));
    s.test_n = static_cast<int>(cfg.get_int("synth.test_n"));
    s.noise = cfg.get_double("synth.noise");
    s.shift = cfg.get("synth.shift");
    s.world_seed = static_cast<std::uint64_t>(cfg.get_int("synth.seed"));
    if (s.shift != "rotation" && s.shift != "covariance" && s.shift != "permutation")
        throw ConfigError("unknown synth.shift '" + s.shift +
                          "' (rotation | covariance | permutation)");
    return s;
}

SynthWorld make_synth_world(const SynthSpec& spec) {
    if (spec.dim < spec.classes)
        throw ConfigError("synthetic benchmark: dim (" + std::to_string(spec.dim) +
                          ") must be >= classes (" + std::to_string(spec.classes) + ")");
    SynthWorld w;
    w.spec = spec;
    RngStream rng(spec.world_seed);

    // Orthonormal class directions (Gram-Schmidt over Gaussian draws) scaled
    // so pairwise mean distance is far beyond the noise level: the nearest-
    // mean rule then has per-pair error ~Phi(-r*sqrt(2)/(2*noise)).
    const Scalar radius = 1.6;
    MatX dirs(spec.classes, spec.dim);
    for (int i = 0; i < spec.classes; ++i) {
        VecX v(spec.dim);
        for (int j = 0; j < spec.dim; ++j) v[j] = rng.normal();
        for (int k = 0; k < i; ++k) v -= dirs.row(k).dot(v) * dirs.row(k).transpose();
        const Scalar norm = v.norm();
        if (norm < 1e-8) throw NumericError("synthetic benchmark: degenerate class directions");
        dirs.row(i) = v.transpose() / norm;
    }
    w.means = Tensor({spec.classes, spec.dim});
    w.means.mat(spec.classes, spec.dim) = radius * dirs;

    // A fixed random 2D plane for the rotation shift.
    VecX u(spec.dim), v(spec.dim);
    for (int j = 0; j < spec.dim; ++j) u[j] = rng.normal();
    u.normalize();
    for (int j = 0; j < spec.dim; ++j) v[j] = rng.normal();
    v -= u.dot(v) * u;
    v.normalize();
    w.plane_u = Tensor({spec.dim});
    w.plane_v = Tensor({spec.dim});
    w.plane_u.vec() = u;
    w.plane_v.vec() = v;

    // Fixed derangement-ish coordinate map for the permutation shift.
    w.perm.resize(static_cast<std::size_t>(spec.dim));
    std::iota(w.perm.begin(), w.perm.end(), 0);
    for (int i = spec.dim - 1; i > 0; --i)
        std::swap(w.perm[static_cast<std::size_t>(i)],
                  w.perm[rng.integer(static_cast<std::uint64_t>(i + 1))]);
    return w;
}

Dataset SynthWorld::sample_source(int n, std::uint64_t seed) const {
    return sample_target(0.0, n, seed);
}

Dataset SynthWorld::sample_target(Scalar magnitude, int n, std::uint64_t seed) const {
    Dataset ds;
    ds.classes = spec.classes;
    ds.name = "synthetic/" + spec.shift + ":" + std::to_string(magnitude);
    ds.inputs = Tensor({n, spec.dim});
    ds.labels.resize(static_cast<std::size_t>(n));
    RngStream rng(seed);

    const Scalar angle = magnitude * kPi / 4.0; // rotation family
    const Scalar cs = std::cos(angle), sn = std::sin(angle);
    const Scalar scale = 1.0 + 2.0 * magnitude; // covariance family
    const int swaps = static_cast<int>(magnitude * spec.dim / 2.0); // permutation family

    VecX x(spec.dim);
    for (int i = 0; i < n; ++i) {
        const int cls = static_cast<int>(rng.integer(static_cast<std::uint64_t>(spec.classes)));
        ds.labels[static_cast<std::size_t>(i)] = cls;
        const Scalar sd = spec.shift == "covariance" ? spec.noise * scale : spec.noise;
        for (int j = 0; j < spec.dim; ++j)
            x[j] = means[static_cast<std::int64_t>(cls) * spec.dim + j] + sd * rng.normal();

        if (spec.shift == "rotation" && magnitude != 0.0) {
            const Scalar a = plane_u.vec().dot(x), b = plane_v.vec().dot(x);
            x += ((cs - 1.0) * a - sn * b) * plane_u.vec() + (sn * a + (cs - 1.0) * b) * plane_v.vec();
        } else if (spec.shift == "permutation" && swaps > 0) {
            VecX orig = x;
            for (int s = 0; s < swaps && 2 * s + 1 < spec.dim; ++s) {
                const int a = perm[static_cast<std::size_t>(2 * s)];
                const int b = perm[static_cast<std::size_t>(2 * s + 1)];
                x[a] = orig[b];
                x[b] = orig[a];
            }
        }
        for (int j = 0; j < spec.dim; ++j)
            ds.inputs[static_cast<std::int64_t>(i) * spec.dim + j] = x[j];
    }
    return ds;
}

Scalar SynthWorld::bayes_accuracy(const Dataset& ds) const {
    if (ds.n() == 0) return 0.0;
    int hit = 0;
    for (int i = 0; i < ds.n(); ++i) {
        const Scalar* x = ds.inputs.data() + static_cast<std::int64_t>(i) * spec.dim;
        int best = 0;
        Scalar best_d = std::numeric_limits<Scalar>::max();
        for (int c = 0; c < spec.classes; ++c) {
            Scalar d = 0.0;
            for (int j = 0; j < spec.dim; ++j) {
                const Scalar diff = x[j] - means[static_cast<std::int64_t>(c) * spec.dim + j];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        if (best == ds.labels[static_cast<std::size_t>(i)]) ++hit;
    }
    return static_cast<Scalar>(hit) / ds.n();
}

// ---------------------------------------------------------------------------
// splits & batching
// ---------------------------------------------------------------------------

std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, Scalar val_fraction,
                                            std::uint64_t seed) {
    if (val_fraction < 0.0 || val_fraction >= 1.0)
        throw ConfigError("train.val_fraction must be in [0,1)");
    std::vector<int> idx(static_cast<std::size_t>(ds.n()));
    std::iota(idx.begin(), idx.end(), 0);
    RngStream rng(seed);
    for (int i = ds.n() - 1; i > 0; --i)
        std::swap(idx[static_cast<std::size_t>(i)], idx[rng.integer(static_cast<std::uint64_t>(i + 1))]);
    const int n_val = static_cast<int>(std::lround(val_fraction * ds.n()));
    std::vector<int> val_idx(idx.begin(), idx.begin() + n_val);
    std::vector<int> train_idx(idx.begin() + n_val, idx.end());
    return {ds.subset(train_idx), ds.subset(val_idx)};
}

BatchStream::BatchStream(int n, int batch, std::uint64_t seed) : batch_(batch), rng_(seed) {
    if (n <= 0) throw ConfigError("batch stream: empty dataset");
    if (batch <= 0) throw ConfigError("batch stream: batch size must be positive");
    order_.resize(static_cast<std::size_t>(n));
    std::iota(order_.begin(), order_.end(), 0);
    shuffle();
}

void BatchStream::shuffle() {
    for (int i = static_cast<int>(order_.size()) - 1; i > 0; --i)
        std::swap(order_[static_cast<std::size_t>(i)],
                  order_[rng_.integer(static_cast<std::uint64_t>(i + 1))]);
    cursor_ = 0;
}

std::vector<int> BatchStream::next() {
    if (cursor_ >= order_.size()) shuffle(); // exhausted: new pass over the data
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(batch_));
    while (static_cast<int>(out.size()) < batch_) {
        if (cursor_ >= order_.size()) shuffle();
        out.push_back(order_[cursor_++]);
    }
    return out;
}

void BatchStream::save(std::ostream& os) const {
    os << order_.size() << " " << batch_ << " " << cursor_ << "\n";
    for (int v : order_) os << v << " ";
    os << "\n";
    rng_.save(os);
    os << "\n";
}

void BatchStream::load(std::istream& is) {
    std::size_t n = 0;
    is >> n >> batch_ >> cursor_;
    order_.resize(n);
    for (auto& v : order_) is >> v;
    rng_.load(is);
    if (!is) throw NumericError("batch stream state truncated");
}

Tensor gather_inputs(const Dataset& ds, const std::vector<int>& idx) {
    Dataset sub = ds.subset(idx);
    return sub.inputs;
}

Tensor gather_labels(const Dataset& ds, const std::vector<int>& idx) {
    std::vector<int> labels;
    labels.reserve(idx.size());
    for (int i : idx) {
        if (i < 0 || i >= ds.n()) throw ConfigError("gather_labels: index out of range");
        labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
    }
    return one_hot(labels, ds.classes);
}

} // namespace ugda
