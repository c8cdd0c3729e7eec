#include "cascreg/cascade.hpp"

#include <stdexcept>

namespace cascreg {

std::string to_string(Mode m) {
    switch (m) {
        case Mode::generative: return "generative";
        case Mode::non_generative: return "non-generative";
        case Mode::info_vae: return "info-vae";
    }
    return "unknown";
}

Mode parse_mode(const std::string& s) {
    if (s == "generative") return Mode::generative;
    if (s == "non-generative" || s == "non_generative") return Mode::non_generative;
    if (s == "info-vae" || s == "info_vae") return Mode::info_vae;
    throw std::invalid_argument("unknown mode '" + s + "' (expected generative, non-generative or info-vae)");
}

const VelocityField& mean_velocity(const BlockParams& p) {
    if (const auto* d = std::get_if<VelocityDistribution>(&p)) return d->mu;
    return std::get<VelocityField>(p);
}

Dims CascadeState::dims() const {
    if (blocks.empty()) throw std::logic_error("CascadeState: no dense blocks");
    return mean_velocity(blocks.front()).dims();
}

DisplacementField CascadeState::block_displacement(std::size_t k) const {
    return integrate_ss(gaussian_smooth(mean_velocity(blocks.at(k)), smoothing_sigma), integration_steps);
}

DisplacementField CascadeState::composed(std::size_t block_count) const {
    DisplacementField total = affine_to_displacement(affine, dims());
    for (std::size_t k = 0; k < block_count; ++k) total = compose(total, block_displacement(k));
    return total;
}

CascadeState CascadeState::identity(Dims dims, Mode mode, std::size_t block_count, float initial_log_var) {
    CascadeState s;
    s.mode = mode;
    for (std::size_t k = 0; k < block_count; ++k) {
        if (mode == Mode::non_generative) s.blocks.emplace_back(VelocityField(dims));
        else s.blocks.emplace_back(VelocityDistribution(dims, initial_log_var));
    }
    return s;
}

}  // namespace cascreg
