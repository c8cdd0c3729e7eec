#include "cascreg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "stencil.hpp"

namespace cascreg {

std::string to_string(const Dims& d) {
    return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

Volume3::Volume3(Dims dims, float fill, Spacing spacing)
    : dims_(dims), spacing_(spacing) {
    if (!dims.positive()) throw std::invalid_argument("Volume3: non-positive dims " + to_string(dims));
    data_.assign(dims.count(), fill);
}

Volume3::Volume3(Dims dims, std::vector<float> data, Spacing spacing)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
    if (!dims.positive()) throw std::invalid_argument("Volume3: non-positive dims " + to_string(dims));
    if (data_.size() != dims.count()) {
        throw std::invalid_argument("Volume3: data length " + std::to_string(data_.size()) +
                                    " does not match dims " + to_string(dims));
    }
}

double Volume3::mean() const {
    if (data_.empty()) return 0.0;
    double s = 0.0;
    for (float v : data_) s += v;
    return s / static_cast<double>(data_.size());
}

float Volume3::min() const { return data_.empty() ? 0.0f : *std::min_element(data_.begin(), data_.end()); }
float Volume3::max() const { return data_.empty() ? 0.0f : *std::max_element(data_.begin(), data_.end()); }

LabelVolume::LabelVolume(Dims dims, Spacing spacing) : dims_(dims), spacing_(spacing) {}

LabelVolume::LabelVolume(std::vector<Volume3> channels, std::vector<std::string> names) {
    if (channels.size() != names.size()) throw std::invalid_argument("LabelVolume: channel/name count mismatch");
    if (!channels.empty()) {
        dims_ = channels.front().dims();
        spacing_ = channels.front().spacing();
    }
    for (std::size_t k = 0; k < channels.size(); ++k) add_channel(std::move(channels[k]), std::move(names[k]));
}

void LabelVolume::add_channel(Volume3 channel, std::string name) {
    if (channels_.empty() && !dims_.positive()) {
        dims_ = channel.dims();
        spacing_ = channel.spacing();
    }
    if (channel.dims() != dims_) {
        throw std::invalid_argument("LabelVolume: channel '" + name + "' has dims " + to_string(channel.dims()) +
                                    ", expected " + to_string(dims_));
    }
    channels_.push_back(std::move(channel));
    names_.push_back(std::move(name));
}

std::size_t LabelVolume::find(const std::string& name) const {
    for (std::size_t k = 0; k < names_.size(); ++k)
        if (names_[k] == name) return k;
    std::string known;
    for (const auto& n : names_) known += (known.empty() ? "" : ", ") + n;
    throw std::out_of_range("unknown label '" + name + "'; available: " + known);
}

double sample_trilinear(const Volume3& vol, const Vec3& p) {
    const detail::Stencil s(vol.dims(), p.x, p.y, p.z);
    return s.eval(vol.data().data());
}

double sample_trilinear_with_gradient(const Volume3& vol, const Vec3& p, Vec3& grad) {
    const detail::Stencil s(vol.dims(), p.x, p.y, p.z);
    return s.eval_with_gradient(vol.data().data(), grad.x, grad.y, grad.z);
}

std::vector<double> gaussian_kernel(double sigma) {
    if (sigma <= 0.0) return {1.0};
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * r + 1);
    for (int i = -r; i <= r; ++i) k[i + r] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    const double sum = std::accumulate(k.begin(), k.end(), 0.0);
    for (double& w : k) w /= sum;
    return k;
}

namespace {

// One separable pass along `axis` with replicated borders.
void convolve_axis(std::span<const float> in, std::span<float> out, const Dims& d, int axis,
                   const std::vector<double>& kernel) {
    const int r = static_cast<int>(kernel.size() / 2);
    const int n = d[axis];
    const std::ptrdiff_t stride = axis == 0 ? 1 : (axis == 1 ? d.nx : static_cast<std::ptrdiff_t>(d.nx) * d.ny);
    const int outer_a = axis == 0 ? d.ny : d.nx;
    const int outer_b = axis == 2 ? d.ny : d.nz;
    std::vector<double> line(static_cast<std::size_t>(n + 2 * r));

#pragma omp parallel for firstprivate(line) schedule(static)
    for (int b = 0; b < outer_b; ++b) {
        for (int a = 0; a < outer_a; ++a) {
            std::ptrdiff_t start = 0;
            if (axis == 0) start = static_cast<std::ptrdiff_t>(d.nx) * (a + static_cast<std::ptrdiff_t>(d.ny) * b);
            else if (axis == 1) start = a + static_cast<std::ptrdiff_t>(d.nx) * d.ny * b;
            else start = a + static_cast<std::ptrdiff_t>(d.nx) * b;

            for (int i = -r; i < n + r; ++i) {
                const int c = std::clamp(i, 0, n - 1);
                line[i + r] = in[start + c * stride];
            }
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                const double* src = &line[i];
                for (std::size_t t = 0; t < kernel.size(); ++t) acc += kernel[t] * src[t];
                out[start + i * stride] = static_cast<float>(acc);
            }
        }
    }
}

}  // namespace

Volume3 gaussian_smooth(const Volume3& vol, double sigma) {
    if (sigma < 0.0) throw std::invalid_argument("gaussian_smooth: negative sigma");
    if (sigma == 0.0) return vol;
    const auto kernel = gaussian_kernel(sigma);
    Volume3 a(vol.dims(), 0.0f, vol.spacing());
    Volume3 b(vol.dims(), 0.0f, vol.spacing());
    convolve_axis(vol.data(), a.data(), vol.dims(), 0, kernel);
    convolve_axis(a.data(), b.data(), vol.dims(), 1, kernel);
    convolve_axis(b.data(), a.data(), vol.dims(), 2, kernel);
    return a;
}

Volume3 preprocess(const Volume3& vol, double lo, double hi) {
    if (!(lo < hi)) {
        throw std::invalid_argument("invalid intensity window [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    Volume3 out(vol.dims(), 0.0f, vol.spacing());
    const double scale = 1.0 / (hi - lo);
    auto src = vol.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double v = std::clamp(static_cast<double>(src[i]), lo, hi);
        dst[i] = static_cast<float>(std::clamp((v - lo) * scale, 0.0, 1.0));
    }
    return out;
}

Volume3 resample(const Volume3& vol, Dims new_dims) {
    if (!new_dims.positive()) throw std::invalid_argument("resample: non-positive dims " + to_string(new_dims));
    const Dims& od = vol.dims();
    auto ratio = [](int n_old, int n_new) {
        return n_new > 1 ? static_cast<double>(n_old - 1) / (n_new - 1) : 0.0;
    };
    auto offset = [](int n_old, int n_new) { return n_new > 1 ? 0.0 : 0.5 * (n_old - 1); };
    const double rx = ratio(od.nx, new_dims.nx), ry = ratio(od.ny, new_dims.ny), rz = ratio(od.nz, new_dims.nz);
    const double ox = offset(od.nx, new_dims.nx), oy = offset(od.ny, new_dims.ny), oz = offset(od.nz, new_dims.nz);

    const Spacing& os = vol.spacing();
    Spacing ns{new_dims.nx > 1 ? os.x * rx : os.x * od.nx, new_dims.ny > 1 ? os.y * ry : os.y * od.ny,
               new_dims.nz > 1 ? os.z * rz : os.z * od.nz};
    Volume3 out(new_dims, 0.0f, ns);
    const float* src = vol.data().data();
#pragma omp parallel for schedule(static)
    for (int z = 0; z < new_dims.nz; ++z)
        for (int y = 0; y < new_dims.ny; ++y)
            for (int x = 0; x < new_dims.nx; ++x) {
                const detail::Stencil s(od, ox + x * rx, oy + y * ry, oz + z * rz);
                out.at(x, y, z) = static_cast<float>(s.eval(src));
            }
    return out;
}

}  // namespace cascreg
