#include "cascreg/transform.hpp"

#include <cmath>
#include <random>

#include "stencil.hpp"

namespace cascreg {

AffineParams AffineParams::translation(const Vec3& t) {
    AffineParams p;
    p.a[3] = t.x;
    p.a[7] = t.y;
    p.a[11] = t.z;
    return p;
}

Vec3 AffineParams::apply(const Vec3& p) const {
    return {a[0] * p.x + a[1] * p.y + a[2] * p.z + a[3], a[4] * p.x + a[5] * p.y + a[6] * p.z + a[7],
            a[8] * p.x + a[9] * p.y + a[10] * p.z + a[11]};
}

double AffineParams::determinant() const {
    return a[0] * (a[5] * a[10] - a[6] * a[9]) - a[1] * (a[4] * a[10] - a[6] * a[8]) +
           a[2] * (a[4] * a[9] - a[5] * a[8]);
}

VelocityDistribution::VelocityDistribution(Dims dims, float initial_log_var) : mu(dims), log_var(dims) {
    for (int c = 0; c < 3; ++c)
        for (float& v : log_var[c].data()) v = initial_log_var;
}

DisplacementField affine_to_displacement(const AffineParams& aff, Dims dims) {
    DisplacementField u(dims);
#pragma omp parallel for schedule(static)
    for (int z = 0; z < dims.nz; ++z)
        for (int y = 0; y < dims.ny; ++y)
            for (int x = 0; x < dims.nx; ++x) {
                const Vec3 g{double(x), double(y), double(z)};
                u.set(u[0].index(x, y, z), aff.apply(g) - g);
            }
    return u;
}

DisplacementField compose(const DisplacementField& outer, const DisplacementField& inner) {
    if (outer.dims() != inner.dims()) throw DimensionMismatch("compose", outer.dims(), inner.dims());
    const Dims d = inner.dims();
    DisplacementField out(d);
    const float* ox = outer[0].data().data();
    const float* oy = outer[1].data().data();
    const float* oz = outer[2].data().data();
#pragma omp parallel for schedule(static)
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t i = inner[0].index(x, y, z);
                const double ux = inner[0][i], uy = inner[1][i], uz = inner[2][i];
                const detail::Stencil s(d, x + ux, y + uy, z + uz);
                out[0][i] = static_cast<float>(ux + s.eval(ox));
                out[1][i] = static_cast<float>(uy + s.eval(oy));
                out[2][i] = static_cast<float>(uz + s.eval(oz));
            }
    return out;
}

DisplacementField integrate_ss(const VelocityField& v, int steps) {
    if (steps < 1) throw std::invalid_argument("integrate_ss: steps must be >= 1");
    const double scale = std::ldexp(1.0, -steps);
    DisplacementField u(v.dims());
    for (int c = 0; c < 3; ++c) {
        auto src = v[c].data();
        auto dst = u[c].data();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i] * scale);
    }
    for (int k = 0; k < steps; ++k) u = compose(u, u);
    return u;
}

Volume3 warp(const Volume3& vol, const DisplacementField& disp) {
    if (vol.dims() != disp.dims()) throw DimensionMismatch("warp", vol.dims(), disp.dims());
    const Dims d = vol.dims();
    Volume3 out(d, 0.0f, vol.spacing());
    const float* src = vol.data().data();
#pragma omp parallel for schedule(static)
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t i = vol.index(x, y, z);
                const detail::Stencil s(d, x + disp[0][i], y + disp[1][i], z + disp[2][i]);
                out[i] = static_cast<float>(s.eval(src));
            }
    return out;
}

Volume3 jacobian_det(const DisplacementField& disp) {
    const Dims d = disp.dims();
    if (d.nx < 3 || d.ny < 3 || d.nz < 3)
        throw std::invalid_argument("jacobian_det: need at least 3 voxels per axis, got " + to_string(d));
    Volume3 out(d);
    const std::ptrdiff_t stride[3] = {1, d.nx, static_cast<std::ptrdiff_t>(d.nx) * d.ny};
#pragma omp parallel for schedule(static)
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const int pos[3] = {x, y, z};
                const std::size_t i = out.index(x, y, z);
                double j[3][3];  // j[c][axis] = d phi_c / d axis
                for (int axis = 0; axis < 3; ++axis) {
                    std::ptrdiff_t lo = 0, hi = 0;
                    double h = 2.0;
                    if (pos[axis] == 0) {
                        hi = stride[axis];
                        h = 1.0;
                    } else if (pos[axis] == d[axis] - 1) {
                        lo = -stride[axis];
                        h = 1.0;
                    } else {
                        lo = -stride[axis];
                        hi = stride[axis];
                    }
                    for (int c = 0; c < 3; ++c) {
                        const float* u = disp[c].data().data() + i;
                        j[c][axis] = (u[hi] - u[lo]) / h + (c == axis ? 1.0 : 0.0);
                    }
                }
                out[i] = static_cast<float>(j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
                                            j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
                                            j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]));
            }
    return out;
}

double folding_fraction(const Volume3& jacobian, int margin) {
    const Dims d = jacobian.dims();
    std::size_t folded = 0, total = 0;
    for (int z = margin; z < d.nz - margin; ++z)
        for (int y = margin; y < d.ny - margin; ++y)
            for (int x = margin; x < d.nx - margin; ++x) {
                ++total;
                if (!(jacobian.at(x, y, z) > 0.0f)) ++folded;
            }
    return total == 0 ? 0.0 : static_cast<double>(folded) / static_cast<double>(total);
}

double folding_fraction(const DisplacementField& disp, int margin) {
    return folding_fraction(jacobian_det(disp), margin);
}

VelocityField sample_velocity(const VelocityDistribution& dist, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    VelocityField z(dist.dims());
    for (int c = 0; c < 3; ++c) {
        auto mu = dist.mu[c].data();
        auto lv = dist.log_var[c].data();
        auto out = z[c].data();
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double eps = normal(rng);
            out[i] = static_cast<float>(mu[i] + eps * std::exp(0.5 * lv[i]));
        }
    }
    return z;
}

}  // namespace cascreg
