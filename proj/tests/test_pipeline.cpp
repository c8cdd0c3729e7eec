#include "doctest.h"

#include <cmath>
#include <sstream>

#include "cascreg/phantom.hpp"
#include "cascreg/pipeline.hpp"
#include "oracles.hpp"

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

DisplacementField constant_shift(Dims d, Vec3 t) {
    DisplacementField u(d);
    for (int c = 0; c < 3; ++c)
        for (auto& v : u[c].data()) v = float(t[c]);
    return u;
}

Volume3 ball(Dims d, Vec3 c, double r) {
    Volume3 v(d);
    for (int k = 0; k < d.nz; ++k)
        for (int j = 0; j < d.ny; ++j)
            for (int i = 0; i < d.nx; ++i)
                if ((Vec3{double(i), double(j), double(k)} - c).norm() <= r) v.at(i, j, k) = 1.0f;
    return v;
}

}  // namespace

TEST_CASE("dice arithmetic on hand-built masks") {
    Volume3 a(Dims{4, 1, 1}), b(Dims{4, 1, 1});
    a[0] = a[1] = 1;
    b[1] = b[2] = b[3] = 1;
    CHECK(dice(a, b) == doctest::Approx(2.0 / 5.0));
    CHECK(dice(a, a) == 1.0);
    CHECK(dice(Volume3(Dims{4, 1, 1}), Volume3(Dims{4, 1, 1})) == 1.0);
    CHECK_THROWS_AS(dice(a, Volume3(Dims{5, 1, 1})), DimensionMismatch);
    CHECK(mask_voxels(binarize(b)) == 3);
}

TEST_CASE("identity propagation reproduces the atlas masks") {
    const auto p = generate(phantom_preset("identity", {32, 32, 32}));
    const auto prop = propagate_labels(p.atlas_labels, DisplacementField(p.atlas_labels.dims()));
    for (std::size_t k = 0; k < p.atlas_labels.channel_count(); ++k)
        CHECK(dice(prop.masks.channel(k), binarize(p.atlas_labels.channel(k))) == 1.0);
}

TEST_CASE("integer shift moves label centroids by minus the displacement") {
    const Dims d{40, 36, 32};
    LabelVolume atlas(d);
    atlas.add_channel(ball(d, {20, 18, 16}, 6), "a");
    const Vec3 t{3, -2, 1};
    const auto prop = propagate_labels(atlas, constant_shift(d, t));
    // warped(x) = atlas(x + t), so content moves by -t
    const Vec3 shift = centroid(prop.masks.channel(0)) - centroid(atlas.channel(0));
    CHECK(shift.x == doctest::Approx(-3).epsilon(1e-9));
    CHECK(shift.y == doctest::Approx(2).epsilon(1e-9));
    CHECK(shift.z == doctest::Approx(-1).epsilon(1e-9));
}

TEST_CASE("argmax resolution keeps masks disjoint and ties go to the first channel") {
    const Dims d{3, 1, 1};
    LabelVolume soft(d);
    Volume3 a(d), b(d);
    a[0] = 0.9f, b[0] = 0.6f;   // a wins
    a[1] = 0.7f, b[1] = 0.7f;   // tie
    a[2] = 0.4f, b[2] = 0.45f;  // nobody above 0.5
    soft.add_channel(a, "a");
    soft.add_channel(b, "b");
    const LabelVolume m = resolve_masks(soft);
    CHECK(m.channel(0)[0] == 1.0f);
    CHECK(m.channel(1)[0] == 0.0f);
    CHECK(m.channel(0)[1] == 1.0f);
    CHECK(m.channel(1)[1] == 0.0f);
    CHECK(m.channel(0)[2] == 0.0f);
    CHECK(m.channel(1)[2] == 0.0f);

    const auto p = generate(phantom_preset("rotation", {32, 32, 32}));
    const auto prop = propagate_labels(p.atlas_labels, p.ground_truth);
    for (std::size_t i = 0; i < p.atlas_labels.dims().count(); ++i) {
        float sum = 0.0f;
        for (std::size_t k = 0; k < prop.masks.channel_count(); ++k) sum += prop.masks.channel(k)[i];
        REQUIRE(sum <= 1.0f);
    }
}

TEST_CASE("one warp through the composed field agrees with warping twice") {
    const auto p = generate(phantom_preset("swell", {48, 48, 48}));
    const Dims d = p.moving.dims();
    VelocityField v(d);
    std::mt19937 rng(9);
    std::normal_distribution<float> n(0.0f, 3.0f);
    for (int c = 0; c < 3; ++c)
        for (auto& x : v[c].data()) x = n(rng);
    const DisplacementField inner = integrate_ss(gaussian_smooth(v, 4.0), 8);
    const DisplacementField outer = constant_shift(d, {1.5, -0.5, 0.25});
    const Volume3& label = p.atlas_labels.channel(0);
    const Volume3 once = warp(label, compose(outer, inner));
    const Volume3 twice = warp(warp(label, outer), inner);
    const double d1 = dice(binarize(once), binarize(twice));
    CHECK(d1 > 0.98);
}

TEST_CASE("evaluate reports per-label dice, NA without patient labels, and rejects unknown names") {
    const auto p = generate(phantom_preset("translation", {32, 32, 32}));
    RegistrationResult r;
    r.composed = p.ground_truth;
    const auto prop = propagate_labels(p.atlas_labels, r);
    const Metrics m = evaluate(r, prop.masks, &p.fixed_labels);
    REQUIRE(m.labels.size() == 3);
    for (const auto& l : m.labels) CHECK(l.dice > 0.9);
    CHECK(m.folding_fraction == 0.0);
    CHECK(m.mean_dice == doctest::Approx((m.labels[0].dice + m.labels[1].dice + m.labels[2].dice) / 3));

    const Metrics sub = evaluate(r, prop.masks, &p.fixed_labels, {"box"});
    REQUIRE(sub.labels.size() == 1);
    CHECK(sub.labels[0].name == "box");
    CHECK_THROWS_AS(evaluate(r, prop.masks, &p.fixed_labels, {"liver"}), std::out_of_range);

    const Metrics none = evaluate(r, prop.masks, nullptr);
    std::ostringstream csv;
    write_metrics_csv(csv, none);
    const std::string text = csv.str();
    CHECK(text.rfind("label,dice,voxels_gt,voxels_pred\n", 0) == 0);
    CHECK(text.find("sphere,NA,NA,") != std::string::npos);
    CHECK(text.find("(mean),NA,NA,NA\n") != std::string::npos);
}

TEST_CASE("trace CSV and stage summary") {
    const std::vector<TraceRow> t{{"affine", 0, 1.0, 1.0, 0, 0},
                                  {"affine", 1, 0.5, 0.5, 0, 0},
                                  {"block1", 0, 2.0, 1.5, 0.25, 0.25},
                                  {"block1", 1, 2.5, 2.0, 0.25, 0.25}};
    std::ostringstream out;
    write_trace_csv(out, t);
    CHECK(out.str() ==
          "stage,iteration,loss,recon,segmentation,regularizer\n"
          "affine,0,1,1,0,0\naffine,1,0.5,0.5,0,0\nblock1,0,2,1.5,0.25,0.25\nblock1,1,2.5,2,0.25,0.25\n");
    const auto s = summarize_stages(t);
    REQUIRE(s.size() == 2);
    CHECK(s[1].stage == "block1");
    CHECK(s[1].best == 2.0);
    CHECK(s[1].last == 2.5);
    CHECK(stage_minimum(t, "affine") == 0.5);
    CHECK(std::isinf(stage_minimum(t, "block2")));
    CHECK(monotone_over_window(t, "affine", 1));
    CHECK_FALSE(monotone_over_window(t, "block1", 1));
}
