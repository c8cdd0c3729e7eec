#include "cascreg/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "cascreg/config.hpp"
#include "cascreg/pipeline.hpp"

namespace cascreg {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Vec3 mul_transposed(const Mat3& m, const Vec3& v) {
    return {m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z, m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z};
}

Vec3 unit(const Vec3& v, const char* what) {
    const double n = v.norm();
    if (!(n > 0.0)) throw PhantomError(std::string(what) + ": zero-length axis");
    return v * (1.0 / n);
}

Mat3 rotation_matrix(const Vec3& axis, double degrees) {
    const Vec3 k = unit(axis, "rotation");
    const double th = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th), t = 1.0 - c;
    return {{{t * k.x * k.x + c, t * k.x * k.y - s * k.z, t * k.x * k.z + s * k.y},
             {t * k.x * k.y + s * k.z, t * k.y * k.y + c, t * k.y * k.z - s * k.x},
             {t * k.x * k.z - s * k.y, t * k.y * k.z + s * k.x, t * k.z * k.z + c}}};
}

Vec3 grid_center(const Dims& d) { return {(d.nx - 1) / 2.0, (d.ny - 1) / 2.0, (d.nz - 1) / 2.0}; }

// Largest |A|/R magnitudes keeping the radial and tangential stretches
// positive: tangential 1 + a*s*e^((1-s^2)/2)/s, radial 1 + a*(1-s^2)e^((1-s^2)/2).
constexpr double kSwellGrowLimit = 1.3591409142295225;    // e / 2
constexpr double kSwellShrinkLimit = 0.6065306597126334;  // e^-1/2

double swell_profile(const RadialSwell& s, double r) {
    const double q = r / s.radius;
    return r + s.amplitude * q * std::exp(0.5 * (1.0 - q * q));
}

// Step of the chain with an exact or contracting inverse.
struct Step {
    enum Kind { translate, linear, swell, bumps } kind = translate;
    Vec3 t;
    Mat3 m{};
    Vec3 c;
    double factor = 1.0;  // linear: isotropic scale applied after m
    RadialSwell sw;
    std::vector<Vec3> centers, amps;
    double sigma = 1.0;

    Vec3 bump_displacement(const Vec3& p) const {
        Vec3 u;
        const double inv = 1.0 / (2.0 * sigma * sigma);
        for (std::size_t k = 0; k < centers.size(); ++k) {
            const Vec3 d = p - centers[k];
            u = u + amps[k] * std::exp(-d.dot(d) * inv);
        }
        return u;
    }

    Vec3 inverse(const Vec3& x) const {
        switch (kind) {
            case translate: return x - t;
            case linear: return c + mul_transposed(m, (x - c) * (1.0 / factor));
            case swell: {
                const Vec3 d = x - sw.center;
                const double target = d.norm();
                if (target == 0.0) return x;
                // profile(r) - r lies between 0 and the amplitude.
                double lo = std::max(0.0, std::min(target, target - sw.amplitude));
                double hi = std::max(target, target - sw.amplitude);
                for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + hi); ++it) {
                    const double mid = 0.5 * (lo + hi);
                    (swell_profile(sw, mid) < target ? lo : hi) = mid;
                }
                const double r = 0.5 * (lo + hi);
                return sw.center + d * (r / target);
            }
            case bumps: {
                Vec3 p = x;
                for (int it = 0; it < 500; ++it) {
                    const Vec3 next = x - bump_displacement(p);
                    const double change = (next - p).norm();
                    p = next;
                    if (change < 1e-12) break;
                }
                return p;
            }
        }
        return x;
    }
};

Step make_step(const Deformation& def, const Dims& dims) {
    Step st;
    if (const auto* tr = std::get_if<Translation>(&def)) {
        st.kind = Step::translate;
        st.t = tr->t;
    } else if (const auto* ro = std::get_if<Rotation>(&def)) {
        st.kind = Step::linear;
        st.m = rotation_matrix(ro->axis, ro->degrees);
        st.c = ro->grid_center ? grid_center(dims) : ro->center;
    } else if (const auto* sc = std::get_if<UniformScale>(&def)) {
        if (!(sc->factor > 0.0)) throw PhantomError("scale: factor must be positive");
        st.kind = Step::linear;
        st.m = rotation_matrix({0, 0, 1}, 0.0);
        st.factor = sc->factor;
        st.c = sc->grid_center ? grid_center(dims) : sc->center;
    } else if (const auto* sw = std::get_if<RadialSwell>(&def)) {
        if (!(sw->radius > 0.0)) throw PhantomError("swell: radius must be positive");
        const double ratio = sw->amplitude / sw->radius;
        if (!(ratio < kSwellGrowLimit && ratio > -kSwellShrinkLimit))
            throw PhantomError("swell: amplitude/radius " + std::to_string(ratio) +
                               " violates the invertibility bound (" + std::to_string(-kSwellShrinkLimit) + ", " +
                               std::to_string(kSwellGrowLimit) + ")");
        st.kind = Step::swell;
        st.sw = *sw;
    } else {
        const auto& sr = std::get<SmoothRandom>(def);
        if (!(sr.sigma > 0.0) || sr.bumps < 1 || sr.max_amp < 0.0)
            throw PhantomError("smooth-random: need sigma > 0, bumps >= 1, max_amp >= 0");
        st.kind = Step::bumps;
        st.sigma = sr.sigma;
        std::mt19937_64 rng(sr.seed);
        std::uniform_real_distribution<double> ux(0.0, dims.nx - 1.0), uy(0.0, dims.ny - 1.0),
            uz(0.0, dims.nz - 1.0);
        std::normal_distribution<double> n01(0.0, 1.0);
        for (int k = 0; k < sr.bumps; ++k) {
            const double cx = ux(rng), cy = uy(rng), cz = uz(rng);
            st.centers.push_back({cx, cy, cz});
            const double ax = n01(rng), ay = n01(rng), az = n01(rng);
            st.amps.push_back({ax, ay, az});
        }
        double peak = 0.0;
        for (int z = 0; z < dims.nz; ++z)
            for (int y = 0; y < dims.ny; ++y)
                for (int x = 0; x < dims.nx; ++x)
                    peak = std::max(peak, st.bump_displacement({double(x), double(y), double(z)}).norm());
        const double scale = peak > 0.0 ? sr.max_amp / peak : 0.0;
        double lipschitz = 0.0;
        for (Vec3& a : st.amps) {
            a = a * scale;
            lipschitz += a.norm();
        }
        // sup |grad exp(-r^2 / 2 s^2)| = e^-1/2 / s
        lipschitz *= std::exp(-0.5) / sr.sigma;
        if (!(lipschitz < 1.0))
            throw PhantomError("smooth-random: Lipschitz bound " + std::to_string(lipschitz) +
                               " >= 1 violates the invertibility bound; lower max_amp or raise sigma");
    }
    return st;
}

std::vector<Step> make_chain(const PhantomSpec& spec) {
    std::vector<Step> chain;
    for (const auto& d : spec.deformations) chain.push_back(make_step(d, spec.dims));
    return chain;
}

Vec3 chain_inverse(const std::vector<Step>& chain, const Vec3& x) {
    Vec3 p = x;
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) p = it->inverse(p);
    return p;
}

double signed_distance(const Primitive& pr, const Vec3& p) {
    const Vec3 d = p - pr.center;
    switch (pr.kind) {
        case PrimitiveKind::sphere: return d.norm() - pr.size.x;
        case PrimitiveKind::ellipsoid: {
            const Vec3 q{d.x / pr.size.x, d.y / pr.size.y, d.z / pr.size.z};
            const Vec3 q2{q.x / pr.size.x, q.y / pr.size.y, q.z / pr.size.z};
            const double k0 = q.norm(), k1 = q2.norm();
            if (k1 == 0.0) return -std::min({pr.size.x, pr.size.y, pr.size.z});
            return k0 * (k0 - 1.0) / k1;
        }
        case PrimitiveKind::box: {
            const Vec3 q{std::abs(d.x) - pr.size.x, std::abs(d.y) - pr.size.y, std::abs(d.z) - pr.size.z};
            const Vec3 outside{std::max(q.x, 0.0), std::max(q.y, 0.0), std::max(q.z, 0.0)};
            return outside.norm() + std::min(std::max({q.x, q.y, q.z}), 0.0);
        }
        case PrimitiveKind::tube: {
            const Vec3 a = unit(pr.axis, "tube");
            const double h = d.dot(a);
            const double radial = (d - a * h).norm();
            const double qa = radial - pr.size.x, qb = std::abs(h) - pr.size.y;
            const double ox = std::max(qa, 0.0), oy = std::max(qb, 0.0);
            return std::min(std::max(qa, qb), 0.0) + std::sqrt(ox * ox + oy * oy);
        }
    }
    return 0.0;
}

// 1-voxel smoothstep across the surface; exactly 0.5 on it.
double occupancy(double sd) {
    const double t = std::clamp(0.5 - sd, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

Vec3 half_extent(const Primitive& pr) {
    switch (pr.kind) {
        case PrimitiveKind::sphere: return {pr.size.x, pr.size.x, pr.size.x};
        case PrimitiveKind::ellipsoid:
        case PrimitiveKind::box: return pr.size;
        case PrimitiveKind::tube: {
            const Vec3 a = unit(pr.axis, "tube");
            auto ext = [&](double ai) { return pr.size.y * std::abs(ai) + pr.size.x * std::sqrt(std::max(0.0, 1 - ai * ai)); };
            return {ext(a.x), ext(a.y), ext(a.z)};
        }
    }
    return {};
}

void validate(const PhantomSpec& spec) {
    if (!spec.dims.positive()) throw PhantomError("phantom dims must be positive");
    if (spec.scene.empty()) throw PhantomError("phantom scene is empty");
    for (std::size_t i = 0; i < spec.scene.size(); ++i) {
        const auto& pr = spec.scene[i];
        if (!(pr.size.x > 0.0 && pr.size.y > 0.0 && pr.size.z > 0.0))
            throw PhantomError("primitive " + std::to_string(i) + ": sizes must be positive");
        const Vec3 e = half_extent(pr);
        for (int ax = 0; ax < 3; ++ax)
            if (pr.center[ax] - e[ax] < 0.0 || pr.center[ax] + e[ax] > spec.dims[ax] - 1.0)
                throw PhantomError("primitive " + std::to_string(i) + (pr.label.empty() ? "" : " (" + pr.label + ")") +
                                   " extends outside the " + to_string(spec.dims) + " grid");
    }
}

struct LabelMap {
    std::vector<std::string> names;
    std::vector<int> channel_of;  // per primitive, -1 when unlabeled
};

LabelMap label_map(const PhantomSpec& spec) {
    LabelMap lm;
    for (const auto& pr : spec.scene) {
        if (pr.label.empty()) {
            lm.channel_of.push_back(-1);
            continue;
        }
        auto it = std::find(lm.names.begin(), lm.names.end(), pr.label);
        if (it == lm.names.end()) {
            lm.names.push_back(pr.label);
            lm.channel_of.push_back(int(lm.names.size()) - 1);
        } else {
            lm.channel_of.push_back(int(it - lm.names.begin()));
        }
    }
    return lm;
}

// Painter's order: later primitives cover earlier ones, both in intensity
// and, among labeled objects, in label ownership.
void render_at(const PhantomSpec& spec, const LabelMap& lm, const Vec3& p, std::vector<double>& occ,
               float& value, std::vector<float>& labels) {
    const std::size_t n = spec.scene.size();
    double v = spec.background;
    for (std::size_t k = 0; k < n; ++k) {
        occ[k] = occupancy(signed_distance(spec.scene[k], p));
        v = v * (1.0 - occ[k]) + spec.scene[k].intensity * occ[k];
    }
    value = static_cast<float>(v);
    std::fill(labels.begin(), labels.end(), 0.0f);
    double uncovered = 1.0;
    for (std::size_t k = n; k-- > 0;) {
        const int ch = lm.channel_of[k];
        if (ch < 0) continue;
        const double own = occ[k] * uncovered;
        labels[ch] = std::max(labels[ch], static_cast<float>(own));
        uncovered *= 1.0 - occ[k];
    }
}

void render(const PhantomSpec& spec, const LabelMap& lm, const std::vector<Step>* chain, Volume3& image,
            LabelVolume& labels, DisplacementField* gt) {
    const Dims d = spec.dims;
    std::vector<Volume3> chans(lm.names.size(), Volume3(d));
#pragma omp parallel for schedule(static)
    for (int z = 0; z < d.nz; ++z) {
        std::vector<double> occ(spec.scene.size());
        std::vector<float> lab(lm.names.size());
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const Vec3 g{double(x), double(y), double(z)};
                const Vec3 p = chain ? chain_inverse(*chain, g) : g;
                const std::size_t i = image.index(x, y, z);
                render_at(spec, lm, p, occ, image[i], lab);
                for (std::size_t c = 0; c < lab.size(); ++c) chans[c][i] = lab[c];
                if (gt) gt->set(i, p - g);
            }
    }
    labels = LabelVolume(std::move(chans), lm.names);
}

Primitive parse_primitive(const std::string& kind, const std::string& value, int line) {
    const Directive dir = parse_directive("x " + value, line);
    Primitive pr;
    if (kind == "sphere") {
        pr.kind = PrimitiveKind::sphere;
        const double r = parse_double(dir.get("radius", line), line);
        pr.size = {r, r, r};
    } else if (kind == "ellipsoid") {
        pr.kind = PrimitiveKind::ellipsoid;
        pr.size = parse_vec3(dir.get("radii", line), line);
    } else if (kind == "box") {
        pr.kind = PrimitiveKind::box;
        pr.size = parse_vec3(dir.get("half", line), line);
    } else {
        pr.kind = PrimitiveKind::tube;
        const double r = parse_double(dir.get("radius", line), line);
        pr.size = {r, parse_double(dir.get("half_length", line), line), r};
        pr.axis = parse_vec3(dir.get("axis", line), line);
    }
    pr.center = parse_vec3(dir.get("center", line), line);
    pr.intensity = parse_double(dir.get("intensity", line), line);
    if (dir.has("label")) pr.label = dir.get("label", line);
    for (const auto& [k, v] : dir.attrs) {
        static const std::vector<std::string> known{"radius", "radii", "half", "half_length", "axis",
                                                    "center", "intensity", "label"};
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw ConfigError(kind + ": unknown attribute '" + k + "'", line);
    }
    return pr;
}

Deformation parse_deformation(const std::string& value, int line) {
    const Directive dir = parse_directive(value, line);
    auto center_of = [&](bool& grid, Vec3& c) {
        grid = !dir.has("center");
        if (!grid) c = parse_vec3(dir.get("center", line), line);
    };
    if (dir.kind == "translation") return Translation{parse_vec3(dir.get("t", line), line)};
    if (dir.kind == "rotation") {
        Rotation r;
        r.axis = parse_vec3(dir.get("axis", line), line);
        r.degrees = parse_double(dir.get("degrees", line), line);
        center_of(r.grid_center, r.center);
        return r;
    }
    if (dir.kind == "scale") {
        UniformScale s;
        s.factor = parse_double(dir.get("factor", line), line);
        center_of(s.grid_center, s.center);
        return s;
    }
    if (dir.kind == "swell")
        return RadialSwell{parse_vec3(dir.get("center", line), line), parse_double(dir.get("radius", line), line),
                           parse_double(dir.get("amplitude", line), line)};
    if (dir.kind == "smooth-random") {
        SmoothRandom s;
        s.seed = static_cast<std::uint64_t>(parse_int(dir.get("seed", line), line));
        s.sigma = parse_double(dir.get("sigma", line), line);
        s.max_amp = parse_double(dir.get("max_amp", line), line);
        if (dir.has("bumps")) s.bumps = int(parse_int(dir.get("bumps", line), line));
        return s;
    }
    throw ConfigError("unknown deformation '" + dir.kind +
                          "' (expected translation, rotation, scale, swell, smooth-random)",
                      line);
}

}  // namespace

Vec3 pull_back(const PhantomSpec& spec, const Vec3& x) { return chain_inverse(make_chain(spec), x); }

PhantomPair generate(const PhantomSpec& spec) {
    validate(spec);
    const auto chain = make_chain(spec);
    const LabelMap lm = label_map(spec);
    PhantomPair out;
    out.moving = Volume3(spec.dims);
    out.fixed = Volume3(spec.dims);
    out.ground_truth = DisplacementField(spec.dims);
    render(spec, lm, nullptr, out.moving, out.atlas_labels, nullptr);
    render(spec, lm, &chain, out.fixed, out.fixed_labels, &out.ground_truth);
    return out;
}

std::vector<std::pair<std::string, double>> initial_dice(const PhantomSpec& spec) {
    const PhantomPair pair = generate(spec);
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t k = 0; k < pair.atlas_labels.channel_count(); ++k)
        out.emplace_back(pair.atlas_labels.names()[k],
                         dice(binarize(pair.atlas_labels.channel(k)), binarize(pair.fixed_labels.channel(k))));
    return out;
}

PhantomSpec parse_phantom_spec(const std::string& text) {
    PhantomSpec spec;
    for (const auto& e : parse_key_values(text)) {
        if (e.key == "dims")
            spec.dims = parse_dims(e.value, e.line);
        else if (e.key == "background")
            spec.background = parse_double(e.value, e.line);
        else if (e.key == "sphere" || e.key == "ellipsoid" || e.key == "box" || e.key == "tube")
            spec.scene.push_back(parse_primitive(e.key, e.value, e.line));
        else if (e.key == "deform")
            spec.deformations.push_back(parse_deformation(e.value, e.line));
        else
            throw ConfigError("unknown phantom key '" + e.key + "'", e.line);
    }
    return spec;
}

PhantomSpec read_phantom_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string(), 0);
    std::ostringstream text;
    text << in.rdbuf();
    return parse_phantom_spec(text.str());
}

std::vector<std::string> phantom_preset_names() {
    return {"identity", "translation", "rotation", "swell", "bending", "translate-swell"};
}

namespace {

// Moves flat faces of boxes (and the ends of axis-aligned tubes) onto
// half-integer coordinates so no voxel center lies exactly on a surface,
// where occupancy would be 0.5 and binarization ill-conditioned.
void snap_faces(Primitive& pr) {
    auto snap = [](double& center, double& half) {
        const double lo = std::floor(center - half) + 0.5;
        const double hi = std::max(std::floor(center + half) + 0.5, lo + 1.0);
        center = 0.5 * (lo + hi);
        half = 0.5 * (hi - lo);
    };
    if (pr.kind == PrimitiveKind::box) {
        for (int a = 0; a < 3; ++a) snap(pr.center[a], pr.size[a]);
    } else if (pr.kind == PrimitiveKind::tube) {
        for (int a = 0; a < 3; ++a)
            if (std::abs(pr.axis[a]) == 1.0 && pr.axis[(a + 1) % 3] == 0.0 && pr.axis[(a + 2) % 3] == 0.0)
                snap(pr.center[a], pr.size.y);
    }
}

}  // namespace

PhantomSpec phantom_preset(const std::string& name, Dims dims) {
    PhantomSpec spec;
    spec.dims = dims;
    const Vec3 c = grid_center(dims);
    const double L = std::min({dims.nx, dims.ny, dims.nz}) / 64.0;
    auto at = [&](double x, double y, double z) { return c + Vec3{x, y, z} * L; };
    const Primitive body{PrimitiveKind::ellipsoid, c, Vec3{25, 23, 21} * L, {1, 0, 0}, 0.3, ""};

    if (name == "identity" || name == "translation" || name == "rotation") {
        spec.scene = {body,
                      {PrimitiveKind::sphere, at(-8, -5, 1), Vec3{8, 8, 8} * L, {1, 0, 0}, 0.8, "sphere"},
                      {PrimitiveKind::box, at(9, 6, -3), Vec3{5, 4, 6} * L, {1, 0, 0}, 0.6, "box"},
                      {PrimitiveKind::tube, at(3, -9, 6), Vec3{3, 9, 3} * L, {1, 1, 0}, 1.0, "tube"}};
        if (name == "translation") spec.deformations = {Translation{{5, 3, -2}}};
        if (name == "rotation") spec.deformations = {Rotation{{0, 0, 1}, 10.0, true, {}}};
    } else if (name == "swell" || name == "translate-swell") {
        const double r = 10 * L;
        spec.scene = {body, {PrimitiveKind::sphere, c, {r, r, r}, {1, 0, 0}, 0.8, "sphere"}};
        spec.deformations = {RadialSwell{c, r, 0.2 * r}};
        if (name == "translate-swell") spec.deformations.push_back(Translation{{3, -2, 2}});
    } else if (name == "bending") {
        spec.scene = {body,
                      {PrimitiveKind::tube, c, Vec3{4, 20, 4} * L, {1, 0, 0}, 0.9, "tube"},
                      {PrimitiveKind::box, at(0, 10, 0), Vec3{6, 3, 5} * L, {1, 0, 0}, 0.6, "box"}};
        spec.deformations = {SmoothRandom{7, 12 * L, 3 * L, 4}};
    } else {
        std::string known;
        for (const auto& n : phantom_preset_names()) known += (known.empty() ? "" : ", ") + n;
        throw PhantomError("unknown phantom preset '" + name + "' (known: " + known + ")");
    }
    for (auto& pr : spec.scene) snap_faces(pr);
    return spec;
}

}  // namespace cascreg
