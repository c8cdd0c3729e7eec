#include "cascreg/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "cascreg/config.hpp"

namespace cascreg {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over a running combination
    std::uint64_t z = seed;
    for (const std::uint64_t v : {a, b}) {
        z += 0x9e3779b97f4a7c15ULL + v;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        z ^= z >> 31;
    }
    return z;
}

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("optimizer config: " + what);
}

template <class Tag>
bool all_finite(const Field3<Tag>& f) {
    for (int c = 0; c < 3; ++c)
        for (float v : f[c].data())
            if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

void OptimizerConfig::validate() const {
    require(blocks >= 1, "blocks must be >= 1");
    require(!affine_stage || affine_iterations >= 1, "affine_iterations must be >= 1");
    require(dense_iterations >= 1, "dense_iterations must be >= 1");
    require(affine_learning_rate > 0.0, "affine_learning_rate must be positive");
    require(field_learning_rate > 0.0, "field_learning_rate must be positive");
    require(affine_fd_step > 0.0, "affine_fd_step must be positive");
    require(affine_stride >= 1, "affine_stride must be >= 1");
    require(affine_smoothing >= 0.0, "affine_smoothing must be >= 0");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must lie in [0, 1)");
    require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must lie in [0, 1)");
    require(adam_eps > 0.0, "adam_eps must be positive");
    require(smoothing_sigma >= 0.0, "smoothing_sigma must be >= 0");
    require(integration_steps >= 1, "integration_steps must be >= 1");
    require(mi.bins >= 2, "mi_bins must be >= 2");
    require(kl.lambda > 0.0, "kl_lambda must be positive");
    for (double w : {weights.recon_affine, weights.recon_diff, weights.segmentation, weights.kl, weights.smooth,
                     weights.mmd})
        require(w >= 0.0 && std::isfinite(w), "loss weights must be finite and >= 0");
}

OptimizerConfig parse_optimizer_config(const std::string& text, OptimizerConfig c) {
    for (const auto& e : parse_key_values(text)) {
        const auto& k = e.key;
        const auto& v = e.value;
        const int l = e.line;
        auto num = [&] { return parse_double(v, l); };
        auto integer = [&] { return int(parse_int(v, l)); };
        if (k == "mode") {
            try {
                c.mode = parse_mode(v);
            } catch (const std::exception& ex) {
                throw ConfigError(ex.what(), l);
            }
        } else if (k == "blocks") c.blocks = integer();
        else if (k == "affine_stage") c.affine_stage = parse_bool(v, l);
        else if (k == "affine_iterations") c.affine_iterations = integer();
        else if (k == "affine_learning_rate") c.affine_learning_rate = num();
        else if (k == "affine_fd_step") c.affine_fd_step = num();
        else if (k == "affine_stride") c.affine_stride = integer();
        else if (k == "affine_smoothing") c.affine_smoothing = num();
        else if (k == "dense_iterations") c.dense_iterations = integer();
        else if (k == "field_learning_rate") c.field_learning_rate = num();
        else if (k == "adam_beta1") c.adam_beta1 = num();
        else if (k == "adam_beta2") c.adam_beta2 = num();
        else if (k == "adam_eps") c.adam_eps = num();
        else if (k == "smoothing_sigma") c.smoothing_sigma = num();
        else if (k == "integration_steps") c.integration_steps = integer();
        else if (k == "initial_log_var") c.initial_log_var = static_cast<float>(num());
        else if (k == "w_recon_affine") c.weights.recon_affine = num();
        else if (k == "w_recon_diff") c.weights.recon_diff = num();
        else if (k == "w_segmentation") c.weights.segmentation = num();
        else if (k == "w_kl") c.weights.kl = num();
        else if (k == "w_smooth") c.weights.smooth = num();
        else if (k == "w_mmd") c.weights.mmd = num();
        else if (k == "mi_bins") c.mi.bins = integer();
        else if (k == "mi_sigma") c.mi.parzen_sigma = num();
        else if (k == "kl_lambda") c.kl.lambda = num();
        else if (k == "seed") c.seed = static_cast<std::uint64_t>(parse_int(v, l));
        else throw ConfigError("unknown optimizer key '" + k + "'", l);
    }
    try {
        c.validate();
    } catch (const std::invalid_argument& ex) {
        throw ConfigError(ex.what(), 0);
    }
    return c;
}

OptimizerConfig read_optimizer_config(const std::filesystem::path& path, OptimizerConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string(), 0);
    std::ostringstream text;
    text << in.rdbuf();
    return parse_optimizer_config(text.str(), base);
}

std::string format_optimizer_config(const OptimizerConfig& c) {
    std::ostringstream o;
    o.precision(17);
    o << "mode = " << to_string(c.mode) << "\n"
      << "blocks = " << c.blocks << "\n"
      << "affine_stage = " << (c.affine_stage ? "true" : "false") << "\n"
      << "affine_iterations = " << c.affine_iterations << "\n"
      << "affine_learning_rate = " << c.affine_learning_rate << "\n"
      << "affine_fd_step = " << c.affine_fd_step << "\n"
      << "affine_stride = " << c.affine_stride << "\n"
      << "affine_smoothing = " << c.affine_smoothing << "\n"
      << "dense_iterations = " << c.dense_iterations << "\n"
      << "field_learning_rate = " << c.field_learning_rate << "\n"
      << "adam_beta1 = " << c.adam_beta1 << "\n"
      << "adam_beta2 = " << c.adam_beta2 << "\n"
      << "adam_eps = " << c.adam_eps << "\n"
      << "smoothing_sigma = " << c.smoothing_sigma << "\n"
      << "integration_steps = " << c.integration_steps << "\n"
      << "initial_log_var = " << c.initial_log_var << "\n"
      << "w_recon_affine = " << c.weights.recon_affine << "\n"
      << "w_recon_diff = " << c.weights.recon_diff << "\n"
      << "w_segmentation = " << c.weights.segmentation << "\n"
      << "w_kl = " << c.weights.kl << "\n"
      << "w_smooth = " << c.weights.smooth << "\n"
      << "w_mmd = " << c.weights.mmd << "\n"
      << "mi_bins = " << c.mi.bins << "\n"
      << "mi_sigma = " << c.mi.parzen_sigma << "\n"
      << "kl_lambda = " << c.kl.lambda << "\n"
      << "seed = " << c.seed << "\n";
    return o.str();
}

AffineObjective::AffineObjective(const Volume3& moving, const Volume3& fixed, const OptimizerConfig& cfg)
    : moving_(gaussian_smooth(moving, cfg.affine_smoothing)), weight_(cfg.weights.recon_affine), mi_(cfg.mi) {
    if (moving.dims() != fixed.dims()) throw DimensionMismatch("optimize_affine", moving.dims(), fixed.dims());
    const Dims d = fixed.dims();
    const Volume3 fs = gaussian_smooth(fixed, cfg.affine_smoothing);
    for (int z = 0; z < d.nz; z += cfg.affine_stride)
        for (int y = 0; y < d.ny; y += cfg.affine_stride)
            for (int x = 0; x < d.nx; x += cfg.affine_stride) {
                points_.push_back({double(x), double(y), double(z)});
                fixed_.push_back(fs.at(x, y, z));
            }
    center_ = {(d.nx - 1) / 2.0, (d.ny - 1) / 2.0, (d.nz - 1) / 2.0};
    half_ = {std::max(center_.x, 1.0), std::max(center_.y, 1.0), std::max(center_.z, 1.0)};
}

AffineParams AffineObjective::to_params(const Theta& th) const {
    // A = S B S^-1, t = c - A c + S tau
    AffineParams p;
    for (int r = 0; r < 3; ++r)
        for (int col = 0; col < 3; ++col)
            p.matrix(r, col) = ((r == col ? 1.0 : 0.0) + th[r * 3 + col]) * half_[r] / half_[col];
    for (int r = 0; r < 3; ++r) {
        double ac = 0.0;
        for (int col = 0; col < 3; ++col) ac += p.matrix(r, col) * center_[col];
        p.matrix(r, 3) = center_[r] - ac + half_[r] * th[9 + r];
    }
    return p;
}

double AffineObjective::value(const Theta& theta) const {
    const AffineParams p = to_params(theta);
    std::vector<float> warped(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i)
        warped[i] = static_cast<float>(sample_trilinear(moving_, p.apply(points_[i])));
    return -weight_ * mutual_information(warped, fixed_, mi_);
}

AffineObjective::Theta AffineObjective::gradient(const Theta& theta, double step) const {
    Theta g{};
    for (int i = 0; i < 12; ++i) {
        Theta a = theta, b = theta;
        a[i] += step;
        b[i] -= step;
        g[i] = (value(a) - value(b)) / (2.0 * step);
    }
    return g;
}

AffineResult optimize_affine(const Volume3& moving, const Volume3& fixed, const OptimizerConfig& cfg) {
    const AffineObjective obj(moving, fixed, cfg);
    Adam adam({cfg.affine_learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
    AffineObjective::Theta theta{}, best_theta{};
    double best = std::numeric_limits<double>::infinity();
    AffineResult out;
    for (int it = 0; it <= cfg.affine_iterations; ++it) {
        const double f = obj.value(theta);
        if (!std::isfinite(f)) throw std::runtime_error("affine: non-finite loss at iteration " + std::to_string(it));
        out.trace.push_back({"affine", it, f, f, 0.0, 0.0});
        if (f < best) {
            best = f;
            best_theta = theta;
        }
        if (it == cfg.affine_iterations) break;
        const auto g = obj.gradient(theta, cfg.affine_fd_step);
        for (double v : g)
            if (!std::isfinite(v))
                throw std::runtime_error("affine: non-finite gradient at iteration " + std::to_string(it));
        adam.step(std::span<double>(theta), std::span<const double>(g));
    }
    out.params = obj.to_params(best_theta);
    return out;
}

BlockResult optimize_dense_block(const Volume3& moving, const Volume3& fixed, const DisplacementField& previous,
                                 const LabelVolume* atlas_labels, const LabelVolume* fixed_labels,
                                 const OptimizerConfig& cfg, int block_index) {
    const Dims d = fixed.dims();
    if (moving.dims() != d) throw DimensionMismatch("optimize_dense_block", moving.dims(), d);
    if (previous.dims() != d) throw DimensionMismatch("optimize_dense_block", previous.dims(), d);
    const std::size_t n = d.count();
    const double inv_n = 1.0 / double(n);
    const LossWeights& w = cfg.weights;
    const std::string stage = "block" + std::to_string(block_index + 1);

    const Volume3 m_current = warp(moving, previous);
    const bool use_seg = atlas_labels && fixed_labels && fixed_labels->channel_count() > 0 && w.segmentation > 0.0;
    LabelVolume atlas_sel;
    std::vector<Volume3> atlas_current;
    if (use_seg) {
        if (atlas_labels->dims() != d) throw DimensionMismatch("atlas labels", atlas_labels->dims(), d);
        if (fixed_labels->dims() != d) throw DimensionMismatch("patient labels", fixed_labels->dims(), d);
        atlas_sel = select_channels(*atlas_labels, *fixed_labels);
        for (const auto& ch : atlas_sel.channels()) atlas_current.push_back(warp(ch, previous));
    }

    const bool stochastic = cfg.mode != Mode::non_generative;
    VelocityDistribution dist;
    VelocityField direct;
    if (stochastic)
        dist = VelocityDistribution(d, cfg.initial_log_var);
    else
        direct = VelocityField(d);
    const AdamSettings as{cfg.field_learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
    std::array<Adam, 3> adam_mu{Adam(as), Adam(as), Adam(as)};
    std::array<Adam, 3> adam_lv{Adam(as), Adam(as), Adam(as)};

    BlockResult out;
    double best = std::numeric_limits<double>::infinity();
    BlockParams best_params = stochastic ? BlockParams(dist) : BlockParams(direct);

    std::vector<double> mi_grad(n);
    std::vector<std::vector<float>> residual(atlas_current.size(), std::vector<float>(n));
    constexpr std::size_t kMmdSamples = 256;

    for (int it = 0; it <= cfg.dense_iterations; ++it) {
        const std::uint64_t iter_seed = mix_seed(cfg.seed, std::uint64_t(block_index), std::uint64_t(it));
        const VelocityField z = stochastic ? sample_velocity(dist, iter_seed) : direct;
        const DisplacementField u = integrate_ss(gaussian_smooth(z, cfg.smoothing_sigma), cfg.integration_steps);
        const DisplacementField total = compose(previous, u);

        const Volume3 warped = warp(moving, total);
        const double mi = mutual_information_gradient(warped.data(), fixed.data(), cfg.mi, mi_grad);
        const double recon = -w.recon_diff * mi;

        double seg = 0.0;
        for (std::size_t c = 0; c < atlas_current.size(); ++c) {
            const Volume3 wc = warp(atlas_sel.channel(c), total);
            const Volume3& fc = fixed_labels->channel(fixed_labels->find(atlas_sel.names()[c]));
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double r = double(wc[i]) - double(fc[i]);
                acc += r * r;
                residual[c][i] = static_cast<float>(r * inv_n);
            }
            seg += acc;
        }
        seg = use_seg ? w.segmentation * seg * 0.5 * inv_n : 0.0;

        double reg = 0.0;
        std::vector<std::size_t> mmd_voxels;
        std::vector<Sample> mmd_grad;
        switch (cfg.mode) {
            case Mode::generative: reg = w.kl * kl_velocity_loss(dist, cfg.kl) * inv_n; break;
            case Mode::non_generative: reg = w.smooth * smoothness_loss(u) * inv_n; break;
            case Mode::info_vae: {
                std::mt19937_64 rng(iter_seed ^ 0x5bd1e995ULL);
                std::uniform_int_distribution<std::size_t> pick(0, n - 1);
                std::normal_distribution<double> normal;
                std::vector<Sample> q, p;
                for (std::size_t s = 0; s < kMmdSamples; ++s) {
                    mmd_voxels.push_back(pick(rng));
                    const Vec3 v = z.at(mmd_voxels.back());
                    q.push_back({v.x, v.y, v.z});
                }
                for (std::size_t s = 0; s < kMmdSamples; ++s) p.push_back({normal(rng), normal(rng), normal(rng)});
                reg = w.mmd * mmd_loss_gradient(q, p, 0.0, mmd_grad);
                break;
            }
        }

        const double loss = recon + seg + reg;
        for (const auto& [name, v] : {std::pair{"recon_diff", recon}, {"segmentation", seg}, {"regularizer", reg}})
            if (!std::isfinite(v))
                throw std::runtime_error(stage + ": non-finite " + name + " term at iteration " + std::to_string(it));
        out.trace.push_back({stage, it, loss, recon, seg, reg});
        if (loss < best) {
            best = loss;
            best_params = stochastic ? BlockParams(dist) : BlockParams(direct);
        }
        if (it == cfg.dense_iterations) break;

        // dL/du: image and label forces at the displaced points
        DisplacementField force(d);
        const auto fill_force = [&](std::size_t i, const Vec3& p) {
            Vec3 g;
            sample_trilinear_with_gradient(m_current, p, g);
            Vec3 f = g * (-w.recon_diff * mi_grad[i]);
            for (std::size_t c = 0; c < atlas_current.size(); ++c) {
                Vec3 gc;
                sample_trilinear_with_gradient(atlas_current[c], p, gc);
                f = f + gc * (w.segmentation * residual[c][i]);
            }
            force.set(i, f);
        };
#pragma omp parallel for schedule(static)
        for (int zz = 0; zz < d.nz; ++zz)
            for (int yy = 0; yy < d.ny; ++yy)
                for (int xx = 0; xx < d.nx; ++xx) {
                    const std::size_t i = moving.index(xx, yy, zz);
                    fill_force(i, Vec3{double(xx), double(yy), double(zz)} + u.at(i));
                }
        if (cfg.mode == Mode::non_generative && w.smooth > 0.0) {
            const DisplacementField sg = smoothness_gradient(u);
            for (int c = 0; c < 3; ++c)
                for (std::size_t i = 0; i < n; ++i) force[c][i] += static_cast<float>(w.smooth * inv_n * sg[c][i]);
        }
        if (!all_finite(force)) throw std::runtime_error(stage + ": non-finite force at iteration " + std::to_string(it));

        // Leading-order transport: dL/dv ~ dL/du, smoothing is its own adjoint.
        DisplacementField gz = gaussian_smooth(force, cfg.smoothing_sigma);
        for (std::size_t s = 0; s < mmd_voxels.size(); ++s)
            for (int c = 0; c < 3; ++c) gz[c][mmd_voxels[s]] += static_cast<float>(w.mmd * mmd_grad[s][c]);

        if (!stochastic) {
            for (int c = 0; c < 3; ++c) adam_mu[c].step(direct[c].data(), std::span<const float>(gz[c].data()));
            continue;
        }
        std::array<std::vector<float>, 3> g_lv;
        if (cfg.mode == Mode::generative) {
            const KlGradient kg = kl_velocity_gradient(dist, cfg.kl);
            for (int c = 0; c < 3; ++c) {
                g_lv[c].resize(n);
                for (std::size_t i = 0; i < n; ++i) {
                    const double dz = gz[c][i];
                    g_lv[c][i] = static_cast<float>(0.5 * dz * (double(z[c][i]) - double(dist.mu[c][i])) +
                                                    w.kl * inv_n * kg.d_log_var[c][i]);
                    gz[c][i] = static_cast<float>(dz + w.kl * inv_n * kg.d_mu[c][i]);
                }
            }
        } else {
            for (int c = 0; c < 3; ++c) {
                g_lv[c].resize(n);
                for (std::size_t i = 0; i < n; ++i)
                    g_lv[c][i] = static_cast<float>(0.5 * double(gz[c][i]) * (double(z[c][i]) - double(dist.mu[c][i])));
            }
        }
        for (int c = 0; c < 3; ++c) {
            adam_mu[c].step(dist.mu[c].data(), std::span<const float>(gz[c].data()));
            adam_lv[c].step(dist.log_var[c].data(), std::span<const float>(g_lv[c]));
        }
    }
    out.block = std::move(best_params);
    return out;
}

RegistrationResult optimize_cascade(const Volume3& moving, const Volume3& fixed, const LabelVolume* atlas_labels,
                                    const LabelVolume* fixed_labels, const OptimizerConfig& cfg_in) {
    cfg_in.validate();
    const auto start = std::chrono::steady_clock::now();
    OptimizerConfig cfg = cfg_in;
    const bool supervised = fixed_labels && fixed_labels->channel_count() > 0 && atlas_labels;
    if (!supervised) cfg.weights.segmentation = 0.0;

    auto result = std::make_shared<RegistrationResult>();
    RegistrationResult& r = *result;
    r.cascade.mode = cfg.mode;
    r.cascade.smoothing_sigma = cfg.smoothing_sigma;
    r.cascade.integration_steps = cfg.integration_steps;
    const Dims d = fixed.dims();
    auto fail = [&](const std::string& stage, const std::exception& ex) {
        r.composed = r.cascade.composed();
        throw OptimizationError(stage + " stage failed: " + ex.what(), result);
    };

    if (cfg.affine_stage) {
        try {
            AffineResult a = optimize_affine(moving, fixed, cfg);
            r.cascade.affine = a.params;
            r.trace.insert(r.trace.end(), a.trace.begin(), a.trace.end());
        } catch (const std::exception& ex) {
            r.composed = affine_to_displacement(r.cascade.affine, d);
            throw OptimizationError(std::string("affine stage failed: ") + ex.what(), result);
        }
    }
    DisplacementField previous = affine_to_displacement(r.cascade.affine, d);
    for (int k = 0; k < cfg.blocks; ++k) {
        try {
            BlockResult b = optimize_dense_block(moving, fixed, previous, atlas_labels, fixed_labels, cfg, k);
            r.cascade.blocks.push_back(std::move(b.block));
            r.trace.insert(r.trace.end(), b.trace.begin(), b.trace.end());
            previous = compose(previous, r.cascade.block_displacement(std::size_t(k)));
        } catch (const std::exception& ex) {
            fail("block" + std::to_string(k + 1), ex);
        }
    }
    r.composed = std::move(previous);
    r.final_objective = total_objective({moving, fixed, atlas_labels, supervised ? fixed_labels : nullptr}, r.cascade,
                                        cfg.weights, cfg.mi, cfg.kl, cfg.seed);
    r.metrics.folding_fraction = folding_fraction(r.composed);
    r.metrics.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return std::move(r);
}

double stage_minimum(const std::vector<TraceRow>& trace, const std::string& stage) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& row : trace)
        if (row.stage == stage) m = std::min(m, row.loss);
    return m;
}

bool monotone_over_window(const std::vector<TraceRow>& trace, const std::string& stage, int window) {
    std::vector<double> v;
    for (const auto& row : trace)
        if (row.stage == stage) v.push_back(row.loss);
    for (std::size_t i = 0; i + window < v.size(); ++i)
        if (v[i + window] > v[i]) return false;
    return true;
}

}  // namespace cascreg
