#pragma once

// Brute-force reference computations used by the tests. Nothing here calls
// the library's integration, composition or sampling kernels.

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "cascreg/transform.hpp"

namespace oracle {

using cascreg::Dims;
using cascreg::Vec3;

// Plain trilinear lookup with border clamping on a float buffer.
inline double trilinear(const cascreg::Volume3& v, double x, double y, double z) {
    const Dims d = v.dims();
    auto clampc = [](double c, int n) { return std::clamp(c, 0.0, double(n - 1)); };
    x = clampc(x, d.nx);
    y = clampc(y, d.ny);
    z = clampc(z, d.nz);
    const int x0 = std::min(int(std::floor(x)), std::max(d.nx - 2, 0));
    const int y0 = std::min(int(std::floor(y)), std::max(d.ny - 2, 0));
    const int z0 = std::min(int(std::floor(z)), std::max(d.nz - 2, 0));
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                const int xi = std::min(x0 + dx, d.nx - 1), yi = std::min(y0 + dy, d.ny - 1),
                          zi = std::min(z0 + dz, d.nz - 1);
                const double w = (dx ? x - x0 : 1.0 - (x - x0)) * (dy ? y - y0 : 1.0 - (y - y0)) *
                                 (dz ? z - z0 : 1.0 - (z - z0));
                if (w != 0.0) acc += w * v.at(xi, yi, zi);
            }
    return acc;
}

inline Vec3 velocity_at(const cascreg::VelocityField& v, const Vec3& p) {
    return {trilinear(v[0], p.x, p.y, p.z), trilinear(v[1], p.x, p.y, p.z), trilinear(v[2], p.x, p.y, p.z)};
}

// Forward Euler flow of a stationary field over unit time from voxel g.
inline Vec3 euler_flow(const cascreg::VelocityField& v, const Vec3& g, int steps) {
    const double h = 1.0 / steps;
    Vec3 p = g;
    for (int s = 0; s < steps; ++s) p = p + velocity_at(v, p) * h;
    return p - g;
}

// Same flow as euler_flow, with the three components stored per node so one
// trilinear stencil serves all of them. For whole-grid sweeps.
class EulerFlow {
public:
    explicit EulerFlow(const cascreg::VelocityField& v) : d_(v.dims()), node_(3 * v.dims().count()) {
        for (std::size_t i = 0; i < d_.count(); ++i)
            for (int c = 0; c < 3; ++c) node_[3 * i + c] = v[c][i];
    }

    Vec3 operator()(const Vec3& g, int steps) const {
        const double h = 1.0 / steps;
        double p[3] = {g.x, g.y, g.z};
        const int n[3] = {d_.nx, d_.ny, d_.nz};
        for (int s = 0; s < steps; ++s) {
            int i0[3];
            double f[3];
            for (int a = 0; a < 3; ++a) {
                const double c = std::clamp(p[a], 0.0, double(n[a] - 1));
                i0[a] = std::min(int(c), std::max(n[a] - 2, 0));
                f[a] = c - i0[a];
            }
            double acc[3] = {0, 0, 0};
            for (int dz = 0; dz < 2; ++dz)
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const double w = (dx ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) * (dz ? f[2] : 1 - f[2]);
                        const std::size_t idx =
                            3 * (std::size_t(std::min(i0[0] + dx, n[0] - 1)) +
                                 std::size_t(n[0]) * (std::size_t(std::min(i0[1] + dy, n[1] - 1)) +
                                                      std::size_t(n[1]) * std::size_t(std::min(i0[2] + dz, n[2] - 1))));
                        for (int c = 0; c < 3; ++c) acc[c] += w * node_[idx + c];
                    }
            for (int c = 0; c < 3; ++c) p[c] += h * acc[c];
        }
        return Vec3{p[0], p[1], p[2]} - g;
    }

private:
    Dims d_;
    std::vector<double> node_;
};

// Smooth random velocity: i.i.d. normals, Gaussian smoothing, rescaled so the
// largest voxel norm equals max_norm.
inline cascreg::VelocityField smooth_random_field(Dims d, unsigned seed, double sigma, double max_norm) {
    std::mt19937 rng(seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    cascreg::VelocityField v(d);
    for (int c = 0; c < 3; ++c)
        for (float& x : v[c].data()) x = n(rng);
    v = cascreg::gaussian_smooth(v, sigma);
    const double scale = max_norm / v.max_norm();
    for (int c = 0; c < 3; ++c)
        for (float& x : v[c].data()) x = static_cast<float>(x * scale);
    return v;
}

inline bool interior(const Dims& d, int x, int y, int z, int margin) {
    return x >= margin && y >= margin && z >= margin && x < d.nx - margin && y < d.ny - margin && z < d.nz - margin;
}

// Parzen MI over every bin pair with no window truncation.
inline double parzen_mi(std::span<const float> x, std::span<const float> y, int bins, double sigma) {
    const double width = 1.0 / (bins - 1);
    std::vector<double> joint(bins * bins, 0.0), wx(bins), wy(bins);
    auto weights = [&](double v, std::vector<double>& w) {
        double s = 0.0;
        for (int k = 0; k < bins; ++k) {
            const double d = v - k * width;
            w[k] = std::exp(-d * d / (2 * sigma * sigma));
            s += w[k];
        }
        for (double& e : w) e /= s;
    };
    for (std::size_t i = 0; i < x.size(); ++i) {
        weights(x[i], wx);
        weights(y[i], wy);
        for (int a = 0; a < bins; ++a)
            for (int b = 0; b < bins; ++b) joint[a * bins + b] += wx[a] * wy[b] / double(x.size());
    }
    std::vector<double> px(bins, 0.0), py(bins, 0.0);
    for (int a = 0; a < bins; ++a)
        for (int b = 0; b < bins; ++b) {
            px[a] += joint[a * bins + b];
            py[b] += joint[a * bins + b];
        }
    double mi = 0.0;
    for (int a = 0; a < bins; ++a)
        for (int b = 0; b < bins; ++b) {
            const double p = joint[a * bins + b];
            if (p > 1e-300) mi += p * std::log(p / (px[a] * py[b]));
        }
    return mi;
}

}  // namespace oracle
