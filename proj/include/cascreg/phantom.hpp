#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cascreg/transform.hpp"
#include "cascreg/volume.hpp"

namespace cascreg {

enum class PrimitiveKind { sphere, ellipsoid, box, tube };

/// One solid object. `size` holds the sphere radius in x, the ellipsoid
/// semi-axes, the box half-extents, or (radius, half-length) for a tube
/// running along `axis` through `center`. An empty label leaves the object
/// unlabeled (e.g. a body outline).
struct Primitive {
    PrimitiveKind kind = PrimitiveKind::sphere;
    Vec3 center;
    Vec3 size{1, 1, 1};
    Vec3 axis{1, 0, 0};
    double intensity = 1.0;
    std::string label;
};

// Deformations move atlas geometry forward onto the patient.
struct Translation {
    Vec3 t;
};
struct Rotation {
    Vec3 axis{0, 0, 1};
    double degrees = 0.0;
    bool grid_center = true;  // otherwise `center`
    Vec3 center;
};
struct UniformScale {
    double factor = 1.0;
    bool grid_center = true;
    Vec3 center;
};
/// Radial profile r -> r + A (r/R) exp((1 - (r/R)^2) / 2): a sphere of radius
/// R about `center` becomes one of radius R + A, far points stay put.
struct RadialSwell {
    Vec3 center;
    double radius = 1.0;
    double amplitude = 0.0;
};
/// p -> p + sum_k a_k exp(-|p - c_k|^2 / (2 sigma^2)) with seeded centers and
/// directions, rescaled so the largest displacement on the grid is max_amp.
struct SmoothRandom {
    std::uint64_t seed = 0;
    double sigma = 10.0;
    double max_amp = 2.0;
    int bumps = 4;
};

using Deformation = std::variant<Translation, Rotation, UniformScale, RadialSwell, SmoothRandom>;

struct PhantomSpec {
    Dims dims{64, 64, 64};
    double background = 0.05;
    std::vector<Primitive> scene;
    /// Applied in order; empty means identity.
    std::vector<Deformation> deformations;
};

struct PhantomPair {
    Volume3 moving;             // M, atlas image
    Volume3 fixed;              // F, patient image
    LabelVolume atlas_labels;   // S_A
    LabelVolume fixed_labels;   // S_F
    DisplacementField ground_truth;  // F(x) ~ M(x + u(x))
};

/// Thrown for specs whose geometry or deformation is unusable.
class PhantomError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

PhantomPair generate(const PhantomSpec& spec);

/// Dice of each binarized S_A channel against its S_F channel, scene order.
std::vector<std::pair<std::string, double>> initial_dice(const PhantomSpec& spec);

/// Pull-back map x -> atlas position of the patient point x.
Vec3 pull_back(const PhantomSpec& spec, const Vec3& x);

/// Text format, one entry per line:
///   dims = 64 64 64
///   background = 0.05
///   sphere = center=32,32,32 radius=10 intensity=0.8 label=liver
///   ellipsoid = center=... radii=a,b,c intensity=... [label=...]
///   box = center=... half=a,b,c intensity=... [label=...]
///   tube = center=... axis=1,0,0 radius=r half_length=h intensity=... [label=...]
///   deform = translation t=5,3,-2
///   deform = rotation axis=0,0,1 degrees=10 [center=x,y,z]
///   deform = scale factor=1.1 [center=x,y,z]
///   deform = swell center=... radius=10 amplitude=2
///   deform = smooth-random seed=1 sigma=10 max_amp=3 [bumps=4]
PhantomSpec parse_phantom_spec(const std::string& text);
PhantomSpec read_phantom_spec(const std::filesystem::path& path);

/// Built-in scenes: identity, translation, rotation, swell, bending,
/// translate-swell.
PhantomSpec phantom_preset(const std::string& name, Dims dims = {64, 64, 64});
std::vector<std::string> phantom_preset_names();

}  // namespace cascreg
