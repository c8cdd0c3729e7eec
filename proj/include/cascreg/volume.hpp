#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cascreg {

struct Dims {
    int nx = 0;
    int ny = 0;
    int nz = 0;

    std::size_t count() const {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
    }
    bool positive() const { return nx > 0 && ny > 0 && nz > 0; }
    int operator[](int axis) const { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
    bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& d);

struct Spacing {
    double x = 1.0;
    double y = 1.0;
    double z = 1.0;
    bool operator==(const Spacing&) const = default;
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
    double& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const;
};

/// Dense scalar field on a regular grid. Storage is x-fastest:
/// index = x + nx * (y + ny * z). The grid shape is fixed at construction.
class Volume3 {
public:
    Volume3() = default;
    explicit Volume3(Dims dims, float fill = 0.0f, Spacing spacing = {});
    /// Throws std::invalid_argument if data.size() != dims.count().
    Volume3(Dims dims, std::vector<float> data, Spacing spacing = {});

    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    std::size_t size() const { return data_.size(); }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims_.nx) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims_.ny) * static_cast<std::size_t>(z));
    }
    float at(int x, int y, int z) const { return data_[index(x, y, z)]; }
    float& at(int x, int y, int z) { return data_[index(x, y, z)]; }
    float operator[](std::size_t i) const { return data_[i]; }
    float& operator[](std::size_t i) { return data_[i]; }

    double mean() const;
    float min() const;
    float max() const;

private:
    Dims dims_{};
    Spacing spacing_{};
    std::vector<float> data_;
};

/// K soft mask channels on a common grid, each with values in [0, 1].
class LabelVolume {
public:
    LabelVolume() = default;
    explicit LabelVolume(Dims dims, Spacing spacing = {});
    /// All channels must share dims; names.size() must equal channels.size().
    LabelVolume(std::vector<Volume3> channels, std::vector<std::string> names);

    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    std::size_t channel_count() const { return channels_.size(); }
    const Volume3& channel(std::size_t k) const { return channels_.at(k); }
    Volume3& channel(std::size_t k) { return channels_.at(k); }
    const std::vector<Volume3>& channels() const { return channels_; }
    const std::vector<std::string>& names() const { return names_; }

    void add_channel(Volume3 channel, std::string name);
    /// Index of the named channel; throws std::out_of_range listing the known names.
    std::size_t find(const std::string& name) const;

private:
    Dims dims_{};
    Spacing spacing_{};
    std::vector<Volume3> channels_;
    std::vector<std::string> names_;
};

/// Trilinear value at a continuous voxel coordinate. Coordinates outside the
/// grid are clamped onto the boundary face.
double sample_trilinear(const Volume3& vol, const Vec3& p);

/// Trilinear value plus its gradient with respect to p. Along an axis where p
/// was clamped the gradient component is zero.
double sample_trilinear_with_gradient(const Volume3& vol, const Vec3& p, Vec3& grad);

/// Normalized 1D Gaussian taps for offsets -r..r, r = ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian smoothing (replicated borders). sigma == 0 returns a copy.
Volume3 gaussian_smooth(const Volume3& vol, double sigma);

inline constexpr double kSoftTissueLowHU = -170.0;
inline constexpr double kSoftTissueHighHU = 230.0;

/// Clamp to [lo, hi] and map linearly onto [0, 1]. Throws std::invalid_argument
/// when lo >= hi.
Volume3 preprocess(const Volume3& vol, double lo = kSoftTissueLowHU, double hi = kSoftTissueHighHU);

/// Trilinear resampling with corner nodes of the old grid mapped onto corner
/// nodes of the new one.
Volume3 resample(const Volume3& vol, Dims new_dims);

}  // namespace cascreg
