#pragma once

#include <string>
#include <variant>
#include <vector>

#include "cascreg/transform.hpp"

namespace cascreg {

enum class Mode {
    generative,      // mean/log-variance per voxel, KL prior term
    non_generative,  // velocity optimized directly, smoothness penalty
    info_vae,        // mean/log-variance per voxel, MMD instead of KL
};

std::string to_string(Mode m);
/// Accepts "generative", "non-generative" and "info-vae".
Mode parse_mode(const std::string& s);

using BlockParams = std::variant<VelocityDistribution, VelocityField>;

/// Velocity the block integrates when evaluated deterministically: the mean
/// for distributions, the field itself otherwise.
const VelocityField& mean_velocity(const BlockParams& p);

/// Affine stage followed by dense blocks. The overall map is
/// affine o block_1 o ... o block_n, so block_n displaces first.
struct CascadeState {
    Mode mode = Mode::generative;
    AffineParams affine;
    std::vector<BlockParams> blocks;
    double smoothing_sigma = 2.0;
    int integration_steps = 8;

    /// integrate_ss(gaussian_smooth(mean velocity of block k)).
    DisplacementField block_displacement(std::size_t k) const;
    /// Affine composed with the first `block_count` dense blocks.
    DisplacementField composed(std::size_t block_count) const;
    DisplacementField composed() const { return composed(blocks.size()); }
    Dims dims() const;

    static CascadeState identity(Dims dims, Mode mode, std::size_t block_count, float initial_log_var = -10.0f);
};

}  // namespace cascreg
