#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ugda/checkpoint.hpp"
#include "ugda/data.hpp"
#include "ugda/metalearn.hpp"

namespace ugda {

// ============================================================================
// Operational shell: dataset assembly from config, evaluation tables,
// few-shot adaptation, ablation grids, augmentation previews, and the CLI.
// ============================================================================

// --- dataset assembly --------------------------------------------------------

struct DataBundle {
    Dataset train, val;
    std::vector<std::pair<std::string, Dataset>> targets; // name -> evaluation set
};

// Builds the source train/val pair (and, when asked, the named target
// domains) from the data.* block.  "synthetic" uses the Gaussian-class world
// with the magnitudes in synth.magnitudes (or data.targets) as targets; "idx"
// loads MNIST-format files from data.root and corrupts the test pair per
// data.targets entries ("gaussian_noise:3").  Target draws are fixed across
// run seeds so multi-seed comparisons share the same evaluation sets.
DataBundle load_data(const RunConfig& cfg, bool with_targets);

// --- evaluation table --------------------------------------------------------

struct EvalRow {
    std::string domain;
    int n = 0;
    Scalar accuracy = 0.0;
};
std::vector<EvalRow> evaluate_targets(const Backbone& model,
                                      const std::vector<std::pair<std::string, Dataset>>& targets);
std::string format_eval_table(const std::vector<EvalRow>& rows);
void write_eval_csv(const std::vector<EvalRow>& rows, const std::string& path);

// --- few-shot adaptation -----------------------------------------------------

struct FewShotResult {
    Backbone model; // adapted copy; the input model is untouched
    Scalar accuracy_before = 0.0, accuracy_after = 0.0;
    int shots = 0, steps = 0;
};

// Takes the first `shots` examples of every class from target_pool and
// fine-tunes a copy of the classifier on them (full-batch, Adam) for `steps`
// iterations; the augmentation heads are not involved.  Accuracies are
// measured on target_test before and after; steps = 0 leaves the parameters
// bit-identical.  If any class has fewer than `shots` examples the error
// lists every deficit.
FewShotResult few_shot_adapt(const Backbone& model, const Dataset& target_pool,
                             const Dataset& target_test, int shots, int steps, Scalar lr);

// --- ablation grids ----------------------------------------------------------

// Suites: "perturbation" (full, random_gaussian, deterministic, random_mu,
// random_sigma), "mixup" (full, wo_mixup, random_mixup), "training" (full,
// wo_adv_training, wo_meta_learning, wo_min_phi_p).
std::vector<std::string> ablation_variants(const std::string& suite);
RunConfig apply_ablation_variant(const RunConfig& base, const std::string& variant);

struct SynthRun {
    Scalar target_accuracy = 0.0; // mean over the magnitude grid
    Scalar source_accuracy = 0.0; // held-out source accuracy
};
// One end-to-end run on the synthetic benchmark: train per cfg, evaluate on
// every target magnitude.
SynthRun run_synth_once(const RunConfig& cfg, std::ostream* log = nullptr);

struct AblationRow {
    std::string variant;
    std::vector<Scalar> per_seed; // mean target accuracy per seed
    Scalar mean = 0.0, stddev = 0.0;
};
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::string& suite,
                                      const std::vector<std::uint64_t>& seeds,
                                      std::ostream* log = nullptr);
std::string format_ablation_table(const std::vector<AblationRow>& rows);

// --- augmentation preview ----------------------------------------------------

struct PreviewStats {
    int pairs = 0;
    Scalar mean_pixel_rms = 0.0;  // per-pixel RMS change (0 in feature-space mode)
    Scalar mean_embed_dist = 0.0; // mean ||z - z+|| over the pairs
};
// Writes (x, x+) image pairs (PGM/PPM; skipped for vector data) and a
// per-pair stats CSV into out_dir.  Feature-space synthesis leaves pixels
// unchanged, so there the pair shows identical images and the embedding
// column carries the signal.
PreviewStats augment_preview(MetaState& st, const Dataset& ds, const std::string& out_dir,
                             int count);

// --- summary record ----------------------------------------------------------

// Machine-readable end-of-run record (JSON): iteration, validation accuracy,
// head scales, parameter counts, full config.
void write_summary(const MetaState& st, const std::string& path);

// --- CLI ---------------------------------------------------------------------

// Subcommands: train, eval, adapt, uncertainty, augment-preview, ablate.
// Exit codes: 0 success, 2 configuration/usage error, 3 numeric abort.
int run_cli(int argc, char** argv);

} // namespace ugda
