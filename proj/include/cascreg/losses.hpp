#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cascreg/cascade.hpp"
#include "cascreg/transform.hpp"
#include "cascreg/volume.hpp"

namespace cascreg {

/// Parzen-window mutual information on [0, 1] intensities. Bin centers are
/// evenly spaced with the first at 0 and the last at 1.
struct MIConfig {
    int bins = 32;
    /// Kernel standard deviation; <= 0 selects half the bin spacing.
    double parzen_sigma = 0.0;

    double bin_width() const { return 1.0 / (bins - 1); }
    double sigma() const { return parzen_sigma > 0.0 ? parzen_sigma : 0.5 * bin_width(); }
};

/// KL prior with the precision operator lambda * D, D the 6-neighbour lattice
/// graph Laplacian.
struct KlConfig {
    double lambda = 10.0;
};

/// Loss weights. KL and smoothness sums are divided by the voxel count before
/// weighting, matching the reconstruction and segmentation terms, which are
/// already voxel averages.
struct LossWeights {
    double recon_diff = 1.0;
    double recon_affine = 1.0;
    double segmentation = 1.0;
    double kl = 1.0;
    double smooth = 0.0;
    double mmd = 0.0;
};

double mutual_information(std::span<const float> x, std::span<const float> y, const MIConfig& cfg = {});
double mutual_information(const Volume3& x, const Volume3& y, const MIConfig& cfg = {});

/// Mutual information together with dMI/dx for every element of x.
/// Values are clamped into [0, 1]; the derivative is zero where clamping bites.
double mutual_information_gradient(std::span<const float> x, std::span<const float> y, const MIConfig& cfg,
                                   std::span<double> grad_x);

/// Negated MI of each cumulative dense stage against F:
/// -sum_k MI(M o affine o block_1 ... o block_k, F).
double recon_diff_loss(const Volume3& moving, const Volume3& fixed, const AffineParams& affine,
                       std::span<const DisplacementField> blocks, const MIConfig& cfg = {});
double recon_affine_loss(const Volume3& moving, const Volume3& fixed, const AffineParams& affine,
                         const MIConfig& cfg = {});

/// sum over channels and voxels of (S_F - S_A')^2, divided by twice the voxel
/// count.
double segmentation_sim_loss(const LabelVolume& fixed_labels, const LabelVolume& warped_labels);

/// Lattice KL for one scalar component:
/// 0.5 * [lambda sum_g deg(g) s2(g) - sum_g log s2(g) + lambda sum_edges (mu(g) - mu(g'))^2].
double kl_lattice_term(const Dims& dims, std::span<const float> mu, std::span<const float> log_var, double lambda);
/// Sum of kl_lattice_term over the three velocity components.
double kl_velocity_loss(const VelocityDistribution& dist, const KlConfig& cfg);

struct KlGradient {
    VelocityField d_mu;
    VelocityField d_log_var;
};
KlGradient kl_velocity_gradient(const VelocityDistribution& dist, const KlConfig& cfg);

/// sum over voxels of ||u(g + e_i) - u(g)||^2 over the three forward pairs.
double smoothness_loss(const DisplacementField& disp);
/// Gradient of smoothness_loss with respect to each displacement component.
DisplacementField smoothness_gradient(const DisplacementField& disp);

using Sample = std::vector<double>;

/// Median pairwise distance of the pooled samples.
double median_heuristic_bandwidth(std::span<const Sample> q, std::span<const Sample> p);

/// Gaussian-kernel MMD, k(a, b) = exp(-|a - b|^2 / (2 h^2)). Within-set
/// expectations skip self pairs; a set of one sample uses k(z, z) = 1.
/// bandwidth <= 0 selects the median heuristic. Throws on empty sets or
/// mismatched dimensions.
double mmd_loss(std::span<const Sample> q, std::span<const Sample> p, double bandwidth = 0.0);
/// Same estimator, also returning d MMD / d q_i.
double mmd_loss_gradient(std::span<const Sample> q, std::span<const Sample> p, double bandwidth,
                         std::vector<Sample>& grad_q);

struct ObjectiveTerm {
    std::string name;
    double value = 0.0;     // unweighted
    double weighted = 0.0;  // contribution to the total
};

struct ObjectiveBreakdown {
    double total = 0.0;
    std::vector<ObjectiveTerm> terms;

    double term(const std::string& name) const;
};

struct ObjectiveInputs {
    const Volume3& moving;
    const Volume3& fixed;
    const LabelVolume* atlas_labels = nullptr;  // S_A
    const LabelVolume* fixed_labels = nullptr;  // S_F; absent in unsupervised mode
};

/// Weighted objective of a cascade evaluated at its mean velocities.
/// Terms: recon_affine, recon_diff, segmentation (when both label sets are
/// given and carry the same channels), then kl_k, smooth_k or mmd_k per block
/// depending on the mode. The MMD prior draws use `seed`.
ObjectiveBreakdown total_objective(const ObjectiveInputs& in, const CascadeState& state, const LossWeights& weights,
                                   const MIConfig& mi = {}, const KlConfig& kl = {}, std::uint64_t seed = 0);

/// Channels of `labels` whose names appear in `reference`, in reference order.
LabelVolume select_channels(const LabelVolume& labels, const LabelVolume& reference);

}  // namespace cascreg
