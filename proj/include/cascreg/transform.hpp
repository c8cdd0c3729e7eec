#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "cascreg/volume.hpp"

namespace cascreg {

/// Twelve affine parameters [A | t] acting on homogeneous voxel coordinates,
/// p' = A p + t, stored row-major as a 3x4 matrix.
struct AffineParams {
    std::array<double, 12> a{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};

    static AffineParams identity() { return {}; }
    static AffineParams translation(const Vec3& t);

    double matrix(int row, int col) const { return a[row * 4 + col]; }
    double& matrix(int row, int col) { return a[row * 4 + col]; }
    Vec3 offset() const { return {a[3], a[7], a[11]}; }
    Vec3 apply(const Vec3& p) const;
    double determinant() const;
    bool operator==(const AffineParams&) const = default;
};

/// Three-component vector field on a regular grid, stored as one Volume3 per
/// component. The tag keeps velocities and displacements from mixing.
template <class Tag>
class Field3 {
public:
    Field3() = default;
    explicit Field3(Dims dims, Spacing spacing = {})
        : comp_{Volume3(dims, 0.0f, spacing), Volume3(dims, 0.0f, spacing), Volume3(dims, 0.0f, spacing)} {}
    Field3(Volume3 x, Volume3 y, Volume3 z) : comp_{std::move(x), std::move(y), std::move(z)} {
        if (comp_[1].dims() != comp_[0].dims() || comp_[2].dims() != comp_[0].dims())
            throw std::invalid_argument("Field3: component dims differ");
    }

    const Dims& dims() const { return comp_[0].dims(); }
    const Volume3& operator[](int c) const { return comp_[c]; }
    Volume3& operator[](int c) { return comp_[c]; }

    Vec3 at(std::size_t i) const { return {comp_[0][i], comp_[1][i], comp_[2][i]}; }
    void set(std::size_t i, const Vec3& v) {
        comp_[0][i] = static_cast<float>(v.x);
        comp_[1][i] = static_cast<float>(v.y);
        comp_[2][i] = static_cast<float>(v.z);
    }
    /// Largest per-voxel vector norm.
    double max_norm() const {
        double m = 0.0;
        for (std::size_t i = 0; i < comp_[0].size(); ++i) m = std::max(m, at(i).norm());
        return m;
    }

private:
    std::array<Volume3, 3> comp_;
};

struct VelocityTag;
struct DisplacementTag;
/// Stationary velocity, voxels per unit flow time.
using VelocityField = Field3<VelocityTag>;
/// Voxel displacement u with phi(g) = g + u(g).
using DisplacementField = Field3<DisplacementTag>;

/// Per-voxel diagonal Gaussian over velocities.
struct VelocityDistribution {
    VelocityField mu;
    VelocityField log_var;

    VelocityDistribution() = default;
    explicit VelocityDistribution(Dims dims, float initial_log_var = -10.0f);
    const Dims& dims() const { return mu.dims(); }
};

class DimensionMismatch : public std::invalid_argument {
public:
    DimensionMismatch(const std::string& what, const Dims& a, const Dims& b)
        : std::invalid_argument(what + ": dims " + to_string(a) + " vs " + to_string(b)) {}
};

DisplacementField affine_to_displacement(const AffineParams& aff, Dims dims);

/// Scaling and squaring: u0 = v / 2^steps, then `steps` self-compositions.
/// Off-grid lookups clamp to the boundary.
DisplacementField integrate_ss(const VelocityField& v, int steps = 8);

/// (outer o inner)(g) = g + u_inner(g) + u_outer(g + u_inner(g)).
DisplacementField compose(const DisplacementField& outer, const DisplacementField& inner);

/// Spatial transformer: out(g) = vol(g + u(g)) with trilinear interpolation.
Volume3 warp(const Volume3& vol, const DisplacementField& disp);

/// Per-voxel det(I + grad u); central differences inside, one-sided on faces.
/// Requires at least 3 voxels per axis.
Volume3 jacobian_det(const DisplacementField& disp);

/// Fraction of voxels at least `margin` voxels from every face whose Jacobian
/// determinant is <= 0.
double folding_fraction(const Volume3& jacobian, int margin = 1);
double folding_fraction(const DisplacementField& disp, int margin = 1);

/// Reparameterized draw z = mu + eps * exp(log_var / 2), eps ~ N(0, I) from a
/// std::mt19937_64 seeded with `seed`, consumed component-major (x, y, z) in
/// voxel order.
VelocityField sample_velocity(const VelocityDistribution& dist, std::uint64_t seed);

/// Component-wise Gaussian smoothing of a vector field.
template <class Tag>
Field3<Tag> gaussian_smooth(const Field3<Tag>& f, double sigma) {
    return Field3<Tag>(gaussian_smooth(f[0], sigma), gaussian_smooth(f[1], sigma), gaussian_smooth(f[2], sigma));
}

}  // namespace cascreg
