#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cascreg/config.hpp"
#include "cascreg/losses.hpp"
#include "cascreg/phantom.hpp"
#include "cascreg/pipeline.hpp"

using namespace cascreg;

namespace {

Vec3 centroid(const Volume3& w) {
    const Dims d = w.dims();
    double s = 0, x = 0, y = 0, z = 0;
    for (int k = 0; k < d.nz; ++k)
        for (int j = 0; j < d.ny; ++j)
            for (int i = 0; i < d.nx; ++i) {
                const double v = w.at(i, j, k);
                s += v;
                x += v * i;
                y += v * j;
                z += v * k;
            }
    return {x / s, y / s, z / s};
}

PhantomSpec lone_sphere(double r, Vec3 shift) {
    PhantomSpec s;
    s.dims = {64, 40, 40};
    s.scene = {{PrimitiveKind::sphere, {20, 19.5, 19.5}, {r, r, r}, {1, 0, 0}, 0.8, "ball"}};
    s.deformations = {Translation{shift}};
    return s;
}

}  // namespace

TEST_CASE("identity phantom reproduces the atlas bit for bit") {
    const auto p = generate(phantom_preset("identity"));
    CHECK(std::equal(p.moving.data().begin(), p.moving.data().end(), p.fixed.data().begin()));
    REQUIRE(p.atlas_labels.channel_count() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
        const auto a = p.atlas_labels.channel(k).data(), b = p.fixed_labels.channel(k).data();
        CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
    CHECK(p.ground_truth.max_norm() == 0.0);
    for (const auto& [name, d] : initial_dice(phantom_preset("identity"))) CHECK(d == 1.0);
}

TEST_CASE("translation moves every labeled centroid by the translation") {
    const auto p = generate(phantom_preset("translation"));
    for (std::size_t k = 0; k < p.atlas_labels.channel_count(); ++k) {
        const Vec3 shift = centroid(p.fixed_labels.channel(k)) - centroid(p.atlas_labels.channel(k));
        CHECK(shift.x == doctest::Approx(5).epsilon(1e-4));
        CHECK(shift.y == doctest::Approx(3).epsilon(1e-4));
        CHECK(shift.z == doctest::Approx(-2).epsilon(1e-4));
    }
    // pull-back displacement is the negated translation everywhere
    for (std::size_t i = 0; i < p.ground_truth.dims().count(); i += 997) {
        const Vec3 u = p.ground_truth.at(i);
        CHECK(u.x == -5.0);
        CHECK(u.y == -3.0);
        CHECK(u.z == 2.0);
    }
}

TEST_CASE("rotation pull-back is the inverse rotation about the grid center") {
    const auto spec = phantom_preset("rotation");
    const Vec3 c{31.5, 31.5, 31.5};
    const double th = -10.0 * std::numbers::pi / 180.0;
    for (const Vec3 x : {Vec3{10, 50, 3}, Vec3{31.5, 31.5, 31.5}, Vec3{60, 2, 40}}) {
        const Vec3 d = x - c;
        const Vec3 want = c + Vec3{std::cos(th) * d.x - std::sin(th) * d.y, std::sin(th) * d.x + std::cos(th) * d.y, d.z};
        const Vec3 got = pull_back(spec, x);
        CHECK((got - want).norm() < 1e-12);
    }
}

TEST_CASE("radial swell maps radius R + A back to R and keeps far points fixed") {
    const auto spec = phantom_preset("swell");
    const Vec3 c{31.5, 31.5, 31.5};
    const Vec3 dir = Vec3{1, 2, -2} * (1.0 / 3.0);
    CHECK((pull_back(spec, c + dir * 12.0) - (c + dir * 10.0)).norm() < 1e-9);
    CHECK((pull_back(spec, c) - c).norm() == 0.0);
    CHECK((pull_back(spec, c + dir * 60.0) - (c + dir * 60.0)).norm() < 1e-3);
}

TEST_CASE("swollen sphere volume matches the closed-form ratio") {
    const auto spec = phantom_preset("swell");
    const auto p = generate(spec);
    const Volume3 jac = jacobian_det(p.ground_truth);
    CHECK(jac.min() > 0.0f);
    const double before = double(mask_voxels(binarize(p.atlas_labels.channel(0))));
    const double after = double(mask_voxels(binarize(p.fixed_labels.channel(0))));
    const double analytic = std::pow(1.2, 3);
    CHECK(std::abs(after / before - analytic) / analytic < 0.03);
    // concentric spheres of radius r and 1.2 r
    const double expected_dice = 2.0 / (1.0 + analytic);
    CHECK(initial_dice(spec)[0].second == doctest::Approx(expected_dice).epsilon(0.02));
}

TEST_CASE("sphere overlap follows the lens volume formula") {
    const double r = 10.0;
    auto lens_dice = [&](double d) {
        const double v = std::numbers::pi * (4 * r + d) * (2 * r - d) * (2 * r - d) / 12.0;
        return 2.0 * v / (2.0 * 4.0 / 3.0 * std::numbers::pi * r * r * r);
    };
    CHECK(lens_dice(r) == doctest::Approx(5.0 / 16.0));
    CHECK(initial_dice(lone_sphere(r, {r, 0, 0}))[0].second == doctest::Approx(lens_dice(r)).epsilon(0.02));
    CHECK(initial_dice(lone_sphere(r, {0, 6, 0}))[0].second == doctest::Approx(lens_dice(6)).epsilon(0.02));
    CHECK(initial_dice(lone_sphere(r, {2 * r, 0, 0}))[0].second == 0.0);
}

TEST_CASE("ground truth warp reproduces the patient image") {
    for (const auto& name : phantom_preset_names()) {
        CAPTURE(name);
        const auto p = generate(phantom_preset(name));
        const double h = mutual_information(p.fixed, p.fixed);
        CHECK(mutual_information(warp(p.moving, p.ground_truth), p.fixed) >= 0.95 * h);
    }
}

TEST_CASE("bending phantom is deterministic and folding free") {
    const auto a = generate(phantom_preset("bending"));
    const auto b = generate(phantom_preset("bending"));
    CHECK(std::equal(a.fixed.data().begin(), a.fixed.data().end(), b.fixed.data().begin()));
    CHECK(a.ground_truth.max_norm() == doctest::Approx(3.0).epsilon(0.05));
    CHECK(jacobian_det(a.ground_truth).min() > 0.0f);
    CHECK(initial_dice(phantom_preset("bending"))[0].second < 0.9);
}

TEST_CASE("invalid phantoms are rejected") {
    auto spec = phantom_preset("swell");
    spec.deformations = {RadialSwell{{31.5, 31.5, 31.5}, 10.0, 14.0}};
    CHECK_THROWS_AS(generate(spec), PhantomError);
    spec.deformations = {SmoothRandom{1, 4.0, 20.0, 6}};
    CHECK_THROWS_AS(generate(spec), PhantomError);
    spec.deformations = {};
    spec.scene[1].center = {3, 31.5, 31.5};
    CHECK_THROWS_WITH_AS(generate(spec), doctest::Contains("outside"), PhantomError);
    CHECK_THROWS_AS(phantom_preset("nope"), PhantomError);
}

TEST_CASE("phantom spec text format") {
    const auto spec = parse_phantom_spec(R"(# two objects
dims = 32 24 16
background = 0.1
sphere = center=10,12,8 radius=4 intensity=0.7 label=a
tube = center=20,12,8 axis=0,1,0 radius=2 half_length=6 intensity=0.9
deform = translation t=1,0,-1
deform = swell center=10,12,8 radius=4 amplitude=0.5
deform = smooth-random seed=3 sigma=8 max_amp=1 bumps=2
)");
    CHECK(spec.dims == Dims{32, 24, 16});
    CHECK(spec.background == 0.1);
    REQUIRE(spec.scene.size() == 2);
    CHECK(spec.scene[0].label == "a");
    CHECK(spec.scene[1].kind == PrimitiveKind::tube);
    CHECK(spec.scene[1].size.y == 6.0);
    REQUIRE(spec.deformations.size() == 3);
    CHECK(std::get<SmoothRandom>(spec.deformations[2]).bumps == 2);
    const auto p = generate(spec);
    CHECK(p.atlas_labels.names() == std::vector<std::string>{"a"});

    CHECK_THROWS_WITH_AS(parse_phantom_spec("dims = 8 8 8\ncone = x=1\n"), doctest::Contains("line 2"), ConfigError);
    CHECK_THROWS_AS(parse_phantom_spec("sphere = center=1,1,1 intensity=1\n"), ConfigError);
    CHECK_THROWS_AS(parse_phantom_spec("deform = twist a=1\n"), ConfigError);
}

TEST_CASE("dice arithmetic") {
    Volume3 a({10, 10, 2}), b({10, 10, 2});
    for (int i = 0; i < 100; ++i) a[i] = 1.0f;
    for (int i = 50; i < 150; ++i) b[i] = 1.0f;
    CHECK(dice(a, b) == 0.5);
    CHECK(dice(a, a) == 1.0);
    CHECK(dice(Volume3({3, 3, 3}), Volume3({3, 3, 3})) == 1.0);
    Volume3 c({10, 10, 2});
    for (int i = 100; i < 200; ++i) c[i] = 1.0f;
    CHECK(dice(a, c) == 0.0);
    CHECK(dice(b, a) == dice(a, b));
    CHECK_THROWS_AS(dice(a, Volume3({2, 2, 2})), DimensionMismatch);
}

TEST_CASE("preset box faces fall between voxel centers at any grid size") {
    for (int n : {24, 32, 48, 64}) {
        for (const char* name : {"translation", "bending"}) {
            const auto spec = phantom_preset(name, {n, n, n});
            for (const auto& pr : spec.scene) {
                if (pr.kind != PrimitiveKind::box) continue;
                for (int a = 0; a < 3; ++a) {
                    const double lo = pr.center[a] - pr.size[a], hi = pr.center[a] + pr.size[a];
                    CHECK(lo - std::floor(lo) == 0.5);
                    CHECK(hi - std::floor(hi) == 0.5);
                }
            }
            const auto p = generate(spec);
            const Volume3& box = p.atlas_labels.channel(p.atlas_labels.find("box"));
            CHECK(std::count(box.data().begin(), box.data().end(), 0.5f) == 0);
        }
    }
}
