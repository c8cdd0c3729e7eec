#pragma once

// Internal trilinear stencil shared by the volume and transform kernels.

#include <cmath>
#include <cstddef>

#include "cascreg/volume.hpp"

namespace cascreg::detail {

struct AxisWeight {
    std::ptrdiff_t offset = 0;  // element offset of the lower node
    std::ptrdiff_t step = 0;    // stride to the upper node, 0 on a 1-voxel axis
    double frac = 0.0;
    bool clamped = false;
};

inline AxisWeight axis_weight(double c, int n, std::ptrdiff_t stride) {
    AxisWeight w;
    if (n <= 1) {
        w.clamped = true;
        return w;
    }
    const double hi = static_cast<double>(n - 1);
    if (!(c > 0.0)) {  // also catches NaN
        w.clamped = c < 0.0 || c != c;
        c = 0.0;
    } else if (c > hi) {
        w.clamped = true;
        c = hi;
    }
    int i0 = static_cast<int>(c);
    if (i0 >= n - 1) i0 = n - 2;
    w.frac = c - i0;
    w.offset = static_cast<std::ptrdiff_t>(i0) * stride;
    w.step = stride;
    return w;
}

struct Stencil {
    AxisWeight ax, ay, az;
    std::ptrdiff_t base = 0;

    Stencil(const Dims& d, double x, double y, double z)
        : ax(axis_weight(x, d.nx, 1)),
          ay(axis_weight(y, d.ny, d.nx)),
          az(axis_weight(z, d.nz, static_cast<std::ptrdiff_t>(d.nx) * d.ny)) {
        base = ax.offset + ay.offset + az.offset;
    }

    template <class T>
    double eval(const T* p) const {
        const T* q = p + base;
        const double fx = ax.frac, fy = ay.frac, fz = az.frac;
        const double v000 = q[0], v100 = q[ax.step];
        const double v010 = q[ay.step], v110 = q[ay.step + ax.step];
        const double v001 = q[az.step], v101 = q[az.step + ax.step];
        const double v011 = q[az.step + ay.step], v111 = q[az.step + ay.step + ax.step];
        const double c00 = v000 + fx * (v100 - v000);
        const double c10 = v010 + fx * (v110 - v010);
        const double c01 = v001 + fx * (v101 - v001);
        const double c11 = v011 + fx * (v111 - v011);
        const double c0 = c00 + fy * (c10 - c00);
        const double c1 = c01 + fy * (c11 - c01);
        return c0 + fz * (c1 - c0);
    }

    template <class T>
    double eval_with_gradient(const T* p, double& gx, double& gy, double& gz) const {
        const T* q = p + base;
        const double fx = ax.frac, fy = ay.frac, fz = az.frac;
        const double v000 = q[0], v100 = q[ax.step];
        const double v010 = q[ay.step], v110 = q[ay.step + ax.step];
        const double v001 = q[az.step], v101 = q[az.step + ax.step];
        const double v011 = q[az.step + ay.step], v111 = q[az.step + ay.step + ax.step];

        const double c00 = v000 + fx * (v100 - v000);
        const double c10 = v010 + fx * (v110 - v010);
        const double c01 = v001 + fx * (v101 - v001);
        const double c11 = v011 + fx * (v111 - v011);
        const double c0 = c00 + fy * (c10 - c00);
        const double c1 = c01 + fy * (c11 - c01);

        if (ax.clamped || ax.step == 0) {
            gx = 0.0;
        } else {
            const double d0 = (v100 - v000) + fy * ((v110 - v010) - (v100 - v000));
            const double d1 = (v101 - v001) + fy * ((v111 - v011) - (v101 - v001));
            gx = d0 + fz * (d1 - d0);
        }
        if (ay.clamped || ay.step == 0) {
            gy = 0.0;
        } else {
            const double e0 = c10 - c00;
            const double e1 = c11 - c01;
            gy = e0 + fz * (e1 - e0);
        }
        gz = (az.clamped || az.step == 0) ? 0.0 : (c1 - c0);
        return c0 + fz * (c1 - c0);
    }
};

}  // namespace cascreg::detail
