#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ugda/config.hpp"
#include "ugda/rng.hpp"
#include "ugda/tensor.hpp"

namespace ugda {

// ============================================================================
// Dataset: a labeled batch-of-everything.  Images are {N, C, H, W} in [0,1];
// vector data is {N, D}.
// ============================================================================
struct Dataset {
    Tensor inputs;
    std::vector<int> labels;
    int classes = 0;
    std::string name;

    int n() const { return inputs.shape.empty() ? 0 : inputs.shape[0]; }
    bool is_image() const { return inputs.shape.size() == 4; }
    Dataset subset(const std::vector<int>& idx) const;
};

// --- IDX loading -------------------------------------------------------------

struct IdxOptions {
    int target_size = 32; // resize images to SxS (0 = keep native size)
    int channels = 3;     // replicate grayscale to this many channels (1 = keep)
};

// Reads the classic big-endian IDX pair (magic 0x00000803 for images,
// 0x00000801 for labels), scales pixels to [0,1], resizes bilinearly and
// duplicates channels per the options.  Malformed files raise errors that
// name the file and byte offset.  A zero-item pair yields an empty Dataset.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const IdxOptions& opt = {});

// --- corruptions -------------------------------------------------------------

enum class CorruptKind { GaussianNoise, ImpulseNoise, Blur, Brightness, Contrast, Rotation };
CorruptKind corrupt_kind_from(const std::string& name);
std::string to_string(CorruptKind k);

struct CorruptSpec {
    CorruptKind kind = CorruptKind::GaussianNoise;
    int severity = 1; // 1..5; intensity grows monotonically with severity
};

// Deterministic given (src, spec, seed); pixel range stays [0,1].
Dataset corrupt(const Dataset& src, const CorruptSpec& spec, std::uint64_t seed);

// Parse "gaussian_noise:3" style entries from data.targets.
CorruptSpec corrupt_spec_from(const std::string& entry);

// --- synthetic benchmark -----------------------------------------------------

struct SynthSpec {
    int classes = 5, dim = 8, train_n = 2000, test_n = 500;
    Scalar noise = 0.35;
    std::string shift = "rotation"; // rotation | covariance | permutation
    std::uint64_t world_seed = 7;

    static SynthSpec from(const RunConfig& cfg);
};

// A fixed class geometry (isotropic Gaussian classes around orthogonal means)
// plus a family of label-preserving domain shifts indexed by magnitude >= 0;
// magnitude 0 is the source distribution itself.
struct SynthWorld {
    SynthSpec spec;
    Tensor means; // {classes, dim}
    Tensor plane_u, plane_v; // rotation plane (orthonormal pair)
    std::vector<int> perm;   // permutation-shift coordinate map

    Dataset sample_source(int n, std::uint64_t seed) const;
    Dataset sample_target(Scalar magnitude, int n, std::uint64_t seed) const;
    // Accuracy of the closed-form nearest-mean discriminant (the Bayes rule
    // for equal-prior isotropic Gaussians) on a dataset.
    Scalar bayes_accuracy(const Dataset& ds) const;
};
SynthWorld make_synth_world(const SynthSpec& spec);

// --- splits & batching -------------------------------------------------------

// Disjoint shuffled split; second part receives round(n * val_fraction).
std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, Scalar val_fraction,
                                            std::uint64_t seed);

// Cycles shuffled minibatch indices; reshuffles on exhaustion.  Serializable
// so training resumes mid-epoch without replaying data.
class BatchStream {
public:
    BatchStream() = default;
    BatchStream(int n, int batch, std::uint64_t seed);
    std::vector<int> next();
    void save(std::ostream& os) const;
    void load(std::istream& is);

private:
    std::vector<int> order_;
    int batch_ = 0;
    std::size_t cursor_ = 0;
    RngStream rng_;
    void shuffle();
};

Tensor gather_inputs(const Dataset& ds, const std::vector<int>& idx);
Tensor gather_labels(const Dataset& ds, const std::vector<int>& idx); // one-hot {B, classes}

} // namespace ugda
