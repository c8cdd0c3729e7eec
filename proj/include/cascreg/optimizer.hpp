#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "cascreg/adam.hpp"
#include "cascreg/cascade.hpp"
#include "cascreg/losses.hpp"

namespace cascreg {

struct OptimizerConfig {
    Mode mode = Mode::generative;
    int blocks = 2;

    bool affine_stage = true;
    int affine_iterations = 200;
    double affine_learning_rate = 2e-3;  // per normalized parameter
    double affine_fd_step = 1e-3;
    int affine_stride = 3;            // voxel subsampling of the affine objective
    double affine_smoothing = 1.0;    // Gaussian sigma applied to M and F first

    int dense_iterations = 100;  // per block
    double field_learning_rate = 3e-2;  // voxels of velocity
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    double smoothing_sigma = 2.0;
    int integration_steps = 8;
    float initial_log_var = -10.0f;

    LossWeights weights{1.0, 1.0, 20.0, 0.1, 1.0, 1.0};
    MIConfig mi{};
    KlConfig kl{};
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument naming the first bad field.
    void validate() const;
};

/// Applies `key = value` entries on top of `base`; unknown keys are errors.
OptimizerConfig parse_optimizer_config(const std::string& text, OptimizerConfig base = {});
OptimizerConfig read_optimizer_config(const std::filesystem::path& path, OptimizerConfig base = {});
/// Inverse of parse_optimizer_config: every field, one per line.
std::string format_optimizer_config(const OptimizerConfig& cfg);

struct TraceRow {
    std::string stage;  // "affine", "block1", ...
    int iteration = 0;
    double loss = 0.0;          // stage objective
    double recon = 0.0;         // weighted -MI
    double segmentation = 0.0;  // weighted
    double regularizer = 0.0;   // weighted kl / smooth / mmd
};

struct LabelMetric {
    std::string name;
    double dice = std::numeric_limits<double>::quiet_NaN();  // NaN without patient labels
    std::size_t voxels_gt = 0;
    std::size_t voxels_pred = 0;
    bool has_ground_truth = false;
};

struct Metrics {
    std::vector<LabelMetric> labels;
    double mean_dice = std::numeric_limits<double>::quiet_NaN();
    double folding_fraction = 0.0;
    double runtime_seconds = 0.0;
};

struct RegistrationResult {
    CascadeState cascade;
    DisplacementField composed;
    std::vector<TraceRow> trace;
    ObjectiveBreakdown final_objective;
    Metrics metrics;
};

/// Failure inside a stage. The stages finished before it are kept.
class OptimizationError : public std::runtime_error {
public:
    OptimizationError(const std::string& what, std::shared_ptr<const RegistrationResult> partial)
        : std::runtime_error(what), partial_(std::move(partial)) {}
    const RegistrationResult* partial() const { return partial_.get(); }

private:
    std::shared_ptr<const RegistrationResult> partial_;
};

/// Affine objective on a subsampled grid. Parameters live in normalized
/// coordinates q = (p - c) / s, c the grid center and s its half extent:
/// theta = (B - I row-major 3x3, tau), q' = B q + tau.
class AffineObjective {
public:
    AffineObjective(const Volume3& moving, const Volume3& fixed, const OptimizerConfig& cfg);

    using Theta = std::array<double, 12>;
    AffineParams to_params(const Theta& theta) const;
    /// w_recon_affine * -MI(M o affine, F) on the subsampled grid.
    double value(const Theta& theta) const;
    /// Central differences with the given step in every parameter.
    Theta gradient(const Theta& theta, double step) const;

private:
    Volume3 moving_;
    std::vector<float> fixed_;
    std::vector<Vec3> points_;
    Vec3 center_, half_;
    double weight_;
    MIConfig mi_;
};

struct AffineResult {
    AffineParams params;
    std::vector<TraceRow> trace;
};

AffineResult optimize_affine(const Volume3& moving, const Volume3& fixed, const OptimizerConfig& cfg);

struct BlockResult {
    BlockParams block;
    std::vector<TraceRow> trace;
};

/// Optimizes one dense block against F given the cascade so far (`previous`,
/// displacement of M o affine o earlier blocks). Labels are optional; the
/// segmentation force is used only when both are given.
BlockResult optimize_dense_block(const Volume3& moving, const Volume3& fixed, const DisplacementField& previous,
                                 const LabelVolume* atlas_labels, const LabelVolume* fixed_labels,
                                 const OptimizerConfig& cfg, int block_index);

/// Affine stage, then cfg.blocks dense blocks in sequence. Without patient
/// labels the segmentation weight is forced to 0.
RegistrationResult optimize_cascade(const Volume3& moving, const Volume3& fixed, const LabelVolume* atlas_labels,
                                    const LabelVolume* fixed_labels, const OptimizerConfig& cfg);

/// Smallest value of the trace rows of one stage; +inf when absent.
double stage_minimum(const std::vector<TraceRow>& trace, const std::string& stage);
/// True when loss[i + window] <= loss[i] for every i within each stage.
bool monotone_over_window(const std::vector<TraceRow>& trace, const std::string& stage, int window);

}  // namespace cascreg
