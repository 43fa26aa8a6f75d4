// Workflow orchestration: one JSON run configuration drives composable
// stages (phantom -> resample -> augment -> train -> predict -> postprocess
// -> reconstruct -> evaluate) plus a leave-one-out cross-validation runner.
//
// Artifact layout (under data_dir for shared inputs, out_dir for the rest):
//   <data>/phantoms/<subject>/{image,mask}/     volume bundles
//   <data>/resampled/<subject>/{image,mask}/    volume bundles
//   <out>/augmented/{manifest.json,images.raw,labels.raw}
//   <out>/train/{checkpoint.bin,loss.csv,train.json}
//   <out>/predict/<subject>/{probs.raw,meta.json}
//   <out>/postprocess/<subject>/{mask/,stats.json}
//   <out>/reconstruct/<subject>/{mesh.stl,mesh.obj,mesh.json}
//   <out>/metrics.json, <out>/timings.json, <out>/config.resolved.json
//
// Every stage rerun with identical inputs and seed reproduces identical
// bytes; wall-clock timings live in timings.json only, so metrics.json is
// reproducible byte-for-byte.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vseg/augment.hpp"
#include "vseg/common.hpp"
#include "vseg/gradcheck.hpp"
#include "vseg/optim.hpp"
#include "vseg/unet.hpp"
#include "vseg/volume.hpp"

namespace vseg {

/// Network size selection. Presets: "desk" (depth 3, 8 features — the
/// default small-volume configuration), "u34"/"u28" (depth 5/4, 64
/// features; 34 and 28 counted layers), or "custom" (use depth and
/// base_features as given).
struct ModelConfig {
    std::string preset = "desk";
    int depth = 3;
    int base_features = 8;

    bool operator==(const ModelConfig&) const = default;

    /// Resolve the preset to a concrete architecture.
    UNetSpec spec() const;
};

struct SgdConfig {
    double lr = 0.1;
    double momentum = 0.9;
    double min_lr = 1e-5;
    int plateau_window = 1000;
    int plateau_patience = 3;
    double plateau_rel_threshold = 1e-4;

    bool operator==(const SgdConfig&) const = default;
};

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    bool operator==(const AdamConfig&) const = default;
};

/// Which optimizer drives training, with both hyperparameter sets kept so
/// either choice has unambiguous defaults.
struct OptimizerConfig {
    std::string kind = "sgd";  // "sgd" | "adam"
    SgdConfig sgd;
    AdamConfig adam;

    bool operator==(const OptimizerConfig&) const = default;
};

/// Augmentation policy: "gray_translate" (gray-value remaps x sliding
/// windows) or "rotate_mirror" (the 8 dihedral variants).
struct AugmentConfig {
    std::string policy = "gray_translate";
    int gray_variants = 8;
    double a_min = 0.8;
    double a_max = 1.2;
    double b_min = -100.0;
    double b_max = 100.0;
    int window = 512;
    int stride = 64;

    bool operator==(const AugmentConfig&) const = default;

    AugPolicy resolve(std::uint64_t seed) const;
};

struct TrainConfig {
    std::int64_t max_iterations = 110000;
    int batch_size = 1;
    std::int64_t loss_log_interval = 1;
    std::int64_t checkpoint_interval = 0;  // 0 = final checkpoint only

    bool operator==(const TrainConfig&) const = default;
};

struct ResampleConfig {
    double target_spacing_mm = 0.645;

    bool operator==(const ResampleConfig&) const = default;
};

/// Intensity window mapped to [0, 1] when tensors are built (augmentation
/// itself operates on raw intensities).
struct NormalizeConfig {
    double lo = -100.0;
    double hi = 500.0;

    bool operator==(const NormalizeConfig&) const = default;
};

struct PostprocessConfig {
    std::int64_t min_component_size = 64;

    bool operator==(const PostprocessConfig&) const = default;
};

struct EvaluateConfig {
    int c2m_bins = 20;
    int icp_max_iterations = 50;
    double icp_tolerance = 1e-6;

    bool operator==(const EvaluateConfig&) const = default;
};

/// One input volume: either a generated phantom (spec given inline) or a
/// pair of existing bundles on disk. `excluded_from_test` keeps a subject
/// out of the test slot of generated cross-validation folds while still
/// contributing training data.
struct SubjectConfig {
    std::string name;
    std::optional<PhantomSpec> phantom;
    std::filesystem::path image;
    std::filesystem::path mask;
    bool excluded_from_test = false;
};

/// One cross-validation fold. Empty policy/preset inherit the run defaults.
struct FoldConfig {
    std::vector<std::string> train;
    std::string test;
    std::string policy;
    std::string preset;
};

/// The whole run configuration. Parsed strictly: unknown keys are
/// configuration errors. Defaults are the published operating point
/// (lr 0.1 / 0.001, momentum 0.9, window 512, stride 64, spacing 0.645,
/// intensity window [-100, 500], 110000 iterations, batch size 1).
struct RunConfig {
    std::filesystem::path out_dir = "out";
    std::filesystem::path data_dir;  // empty = same as out_dir
    std::uint64_t seed = 0;

    ModelConfig model;
    OptimizerConfig optimizer;
    AugmentConfig augment;
    TrainConfig train;
    ResampleConfig resample;
    NormalizeConfig normalize;
    PostprocessConfig postprocess;
    EvaluateConfig evaluate;

    std::vector<SubjectConfig> subjects;
    std::vector<std::string> train_subjects;
    std::string test_subject;
    std::vector<FoldConfig> folds;  // explicit cross-validation plan

    /// Shared input artifacts (phantom + resampled bundles) live here.
    std::filesystem::path effective_data_dir() const {
        return data_dir.empty() ? out_dir : data_dir;
    }

    const SubjectConfig& subject(const std::string& name) const;

    /// Structural checks: known enum values, positive sizes, subject
    /// references resolve, external bundle paths exist. Throws ConfigError.
    void validate() const;

    /// The semantic configuration (everything except output locations),
    /// with defaults filled in. Key order is sorted, so dumps are stable.
    nlohmann::json resolved() const;

    /// FNV-1a over the dump of resolved(); embedded in metrics manifests.
    std::uint64_t config_hash() const;
};

RunConfig run_config_from_json_text(const std::string& text);
RunConfig run_config_from_json_file(const std::filesystem::path& path);

/// Cross-validation plan: explicit folds from the config, or leave-one-out
/// over all subjects with excluded_from_test subjects never in the test
/// slot. Validation rejects folds whose test subject is in its own train
/// set, empty train sets, and unknown subject names.
struct ExperimentPlan {
    std::vector<FoldConfig> folds;

    void validate(const RunConfig& cfg) const;
};

ExperimentPlan make_plan(const RunConfig& cfg);

// --- Stage commands --------------------------------------------------------
// Each command validates its prerequisites and throws PrereqError naming the
// stage that should have produced the missing artifact.

/// Generate every phantom subject under <data>/phantoms/<name>.
void cmd_phantom(const RunConfig& cfg);

/// Resample every subject in-plane to the target spacing (bilinear for
/// images, nearest for masks) under <data>/resampled/<name>.
void cmd_resample(const RunConfig& cfg);

/// Expand the training subjects' slices per the augmentation policy into
/// <out>/augmented (raw intensities; normalization happens at training).
void cmd_augment(const RunConfig& cfg);

/// Train the configured network on the augmented samples; writes the final
/// checkpoint, the per-iteration loss trace, and a short summary.
void cmd_train(const RunConfig& cfg);

/// Run the checkpoint over the test subject's resampled image, slice by
/// slice; writes the two-channel probability stack.
void cmd_predict(const RunConfig& cfg);

/// Threshold the probabilities and keep the largest 26-connected component.
void cmd_postprocess(const RunConfig& cfg);

/// Extract the triangle surface of the cleaned mask (STL + OBJ).
void cmd_reconstruct(const RunConfig& cfg);

/// Volume overlap (DSC against the resampled ground-truth mask) plus
/// surface accuracy (ICP-aligned cloud-to-mesh distances between the
/// reconstructed surface and the ground-truth surface). Returns the
/// metrics manifest that was written to <out>/metrics.json.
nlohmann::json cmd_evaluate(const RunConfig& cfg);

/// Run every fold of the plan end-to-end (augment..evaluate, sharing the
/// phantom/resample artifacts) and write a summary table with per-fold
/// DSC avg +/- std plus both pooled groupings. Returns the manifest
/// written to <out>/metrics.json.
nlohmann::json cmd_crossval(const RunConfig& cfg);

/// Run the finite-difference suites; optionally writes a JSON report.
GradCheckReport cmd_gradcheck(const std::filesystem::path& report_path = {});

}  // namespace vseg
