#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "doctest.h"

#include "cascreg/volume.hpp"

using namespace cascreg;

namespace {

Volume3 make_volume(Dims d, auto fn) {
    Volume3 v(d);
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) v.at(x, y, z) = static_cast<float>(fn(x, y, z));
    return v;
}

}  // namespace

TEST_CASE("Volume3 construction checks the data length") {
    CHECK_THROWS_AS(Volume3(Dims{2, 2, 2}, std::vector<float>(7)), std::invalid_argument);
    CHECK_THROWS_AS(Volume3(Dims{0, 2, 2}), std::invalid_argument);
    Volume3 v(Dims{3, 4, 5}, 2.0f);
    CHECK(v.size() == 60);
    CHECK(v.index(1, 2, 3) == 1 + 3 * (2 + 4 * 3));
}

TEST_CASE("LabelVolume rejects mismatched channels and reports unknown names") {
    LabelVolume labels(Dims{4, 4, 4});
    labels.add_channel(Volume3(Dims{4, 4, 4}), "parotid_l");
    CHECK_THROWS_AS(labels.add_channel(Volume3(Dims{4, 4, 5}), "bad"), std::invalid_argument);
    CHECK(labels.find("parotid_l") == 0);
    try {
        (void)labels.find("cochlea");
        FAIL("expected throw");
    } catch (const std::out_of_range& e) {
        CHECK(std::string(e.what()).find("parotid_l") != std::string::npos);
    }
}

TEST_CASE("sample_trilinear") {
    SUBCASE("grid nodes return stored values") {
        const auto v = make_volume(Dims{3, 4, 5}, [](int x, int y, int z) { return x * 7 + y * 3 - z * z; });
        for (int z = 0; z < 5; ++z)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 3; ++x) CHECK(sample_trilinear(v, {double(x), double(y), double(z)}) == v.at(x, y, z));
    }
    SUBCASE("edge midpoint between 0 and 1") {
        const auto v = make_volume(Dims{2, 1, 1}, [](int x, int, int) { return x; });
        CHECK(sample_trilinear(v, {0.5, 0.0, 0.0}) == doctest::Approx(0.5));
    }
    SUBCASE("x+y+z on a 2x2x2 grid at (0.25, 0.5, 0.75)") {
        const auto v = make_volume(Dims{2, 2, 2}, [](int x, int y, int z) { return x + y + z; });
        // direct expansion over the eight corner weights
        double expected = 0.0;
        const double f[3] = {0.25, 0.5, 0.75};
        for (int k = 0; k < 8; ++k) {
            const int c[3] = {k & 1, (k >> 1) & 1, (k >> 2) & 1};
            double w = 1.0;
            for (int a = 0; a < 3; ++a) w *= c[a] ? f[a] : 1.0 - f[a];
            expected += w * (c[0] + c[1] + c[2]);
        }
        CHECK(expected == doctest::Approx(1.5));
        CHECK(sample_trilinear(v, {0.25, 0.5, 0.75}) == doctest::Approx(1.5).epsilon(1e-12));
    }
    SUBCASE("out-of-bounds coordinates clamp to the boundary face") {
        const auto v = make_volume(Dims{4, 4, 4}, [](int x, int y, int z) { return x + 10 * y + 100 * z; });
        CHECK(sample_trilinear(v, {-5.0, 1.0, 1.0}) == doctest::Approx(110.0));
        CHECK(sample_trilinear(v, {9.0, 1.0, 1.0}) == doctest::Approx(113.0));
        CHECK(sample_trilinear(v, {1.5, 1.0, 40.0}) == doctest::Approx(311.5));
    }
}

TEST_CASE("sample_trilinear reproduces multilinear polynomials at random interior points") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> coef(-2.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        double c[8];
        for (double& v : c) v = coef(rng);
        auto poly = [&](double x, double y, double z) {
            return c[0] + c[1] * x + c[2] * y + c[3] * z + c[4] * x * y + c[5] * y * z + c[6] * x * z + c[7] * x * y * z;
        };
        const auto vol = make_volume(Dims{5, 6, 7}, poly);
        std::uniform_real_distribution<double> px(0.0, 4.0), py(0.0, 5.0), pz(0.0, 6.0);
        for (int k = 0; k < 50; ++k) {
            const Vec3 p{px(rng), py(rng), pz(rng)};
            // float storage limits agreement to single-precision rounding
            CHECK(sample_trilinear(vol, p) == doctest::Approx(poly(p.x, p.y, p.z)).epsilon(1e-5).scale(10.0));
        }
    }
}

TEST_CASE("sample_trilinear_with_gradient matches finite differences") {
    const auto v = make_volume(Dims{6, 6, 6}, [](int x, int y, int z) { return std::sin(0.7 * x) + y * z * 0.1; });
    const Vec3 p{2.3, 3.6, 1.2};
    Vec3 g;
    const double val = sample_trilinear_with_gradient(v, p, g);
    CHECK(val == doctest::Approx(sample_trilinear(v, p)));
    const double h = 1e-4;
    for (int a = 0; a < 3; ++a) {
        Vec3 lo = p, hi = p;
        lo[a] -= h;
        hi[a] += h;
        CHECK(g[a] == doctest::Approx((sample_trilinear(v, hi) - sample_trilinear(v, lo)) / (2 * h)).epsilon(1e-4));
    }
    Vec3 gout;
    sample_trilinear_with_gradient(v, {-1.0, 2.5, 2.5}, gout);
    CHECK(gout.x == 0.0);
}

TEST_CASE("gaussian_smooth") {
    SUBCASE("constant volume stays constant") {
        Volume3 v(Dims{9, 8, 7}, 3.25f);
        for (double sigma : {0.5, 1.0, 2.0, 3.5}) {
            const auto s = gaussian_smooth(v, sigma);
            for (float x : s.data()) CHECK(x == doctest::Approx(3.25f).epsilon(1e-6));
        }
    }
    SUBCASE("sigma 0 is bitwise identity") {
        std::mt19937 rng(3);
        std::uniform_real_distribution<float> u(0.0f, 1.0f);
        Volume3 v(Dims{5, 5, 5});
        for (float& x : v.data()) x = u(rng);
        const auto s = gaussian_smooth(v, 0.0);
        CHECK(std::equal(s.data().begin(), s.data().end(), v.data().begin()));
    }
    SUBCASE("impulse response at the centre is the cubed centre tap") {
        // brute-force 1D kernel: exp(-i^2/2) for |i| <= 3, normalized
        double sum = 0.0;
        for (int i = -3; i <= 3; ++i) sum += std::exp(-0.5 * i * i);
        const double centre = 1.0 / sum;
        Volume3 v(Dims{15, 15, 15});
        v.at(7, 7, 7) = 1.0f;
        const auto s = gaussian_smooth(v, 1.0);
        CHECK(s.at(7, 7, 7) == doctest::Approx(centre * centre * centre).epsilon(1e-6));
        CHECK(s.mean() == doctest::Approx(v.mean()).epsilon(1e-6));
    }
    SUBCASE("negative sigma is rejected") { CHECK_THROWS(gaussian_smooth(Volume3(Dims{3, 3, 3}), -1.0)); }
}

TEST_CASE("preprocess windows soft tissue") {
    Volume3 v(Dims{5, 1, 1}, std::vector<float>{-170.0f, 230.0f, 30.0f, -1000.0f, 3000.0f});
    const auto p = preprocess(v);
    CHECK(p[0] == 0.0f);
    CHECK(p[1] == 1.0f);
    CHECK(p[2] == doctest::Approx(0.5));
    CHECK(p[3] == 0.0f);
    CHECK(p[4] == 1.0f);
    CHECK_THROWS_AS(preprocess(v, 10.0, 10.0), std::invalid_argument);
    CHECK_THROWS_AS(preprocess(v, 20.0, 10.0), std::invalid_argument);
}

TEST_CASE("preprocess is monotone and re-applying the unit window is the identity") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<float> hu(-1200.0f, 1500.0f);
    Volume3 v(Dims{1000, 1, 1});
    for (float& x : v.data()) x = hu(rng);
    const auto p = preprocess(v);
    for (std::size_t i = 0; i < v.size(); ++i)
        for (std::size_t j = 0; j < 20; ++j)
            if (v[i] <= v[j]) CHECK(p[i] <= p[j]);
    const auto q = preprocess(p, 0.0, 1.0);
    CHECK(std::equal(p.data().begin(), p.data().end(), q.data().begin()));
}

TEST_CASE("resample") {
    SUBCASE("same dims preserves nodes") {
        const auto v = make_volume(Dims{4, 5, 6}, [](int x, int y, int z) { return x * y - z; });
        const auto r = resample(v, v.dims());
        CHECK(std::equal(r.data().begin(), r.data().end(), v.data().begin()));
    }
    SUBCASE("constant stays constant") {
        Volume3 v(Dims{7, 7, 7}, 0.4f);
        const auto r = resample(v, Dims{3, 11, 5});
        for (float x : r.data()) CHECK(x == doctest::Approx(0.4f));
    }
    SUBCASE("4^3 ramp to 2^3 maps corner nodes onto corner nodes") {
        const auto v = make_volume(Dims{4, 4, 4}, [](int x, int, int) { return x; });
        const auto r = resample(v, Dims{2, 2, 2});
        // new node i sits at old coordinate i * (4 - 1) / (2 - 1)
        for (int z = 0; z < 2; ++z)
            for (int y = 0; y < 2; ++y) {
                CHECK(r.at(0, y, z) == doctest::Approx(0.0));
                CHECK(r.at(1, y, z) == doctest::Approx(3.0));
            }
        const auto up = resample(v, Dims{7, 4, 4});
        CHECK(up.at(1, 0, 0) == doctest::Approx(0.5));
        CHECK(up.spacing().x == doctest::Approx(0.5));
    }
}
