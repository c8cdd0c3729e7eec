#include "cascreg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace cascreg {

namespace {

// Kernel weights of one intensity over a window of consecutive bins,
// normalized over the window. The window reaches 8 sigma beyond the value so
// the omitted tail is below 1e-14 of the mass.
class ParzenWindow {
public:
    explicit ParzenWindow(const MIConfig& cfg)
        : bins_(cfg.bins), width_(cfg.bin_width()), inv_var_(1.0 / (cfg.sigma() * cfg.sigma())) {
        if (cfg.bins < 2) throw std::invalid_argument("MIConfig: bins must be >= 2");
        if (!(cfg.sigma() > 0.0)) throw std::invalid_argument("MIConfig: parzen_sigma must be > 0");
        radius_ = static_cast<int>(std::ceil(8.0 * cfg.sigma() / width_));
        ratio_decay_ = std::exp(-width_ * width_ * inv_var_);
        span_ = 2 * radius_ + 2;
    }

    int span() const { return span_; }

    // Fills w[0..count) for bins first..first+count-1; returns count.
    int weights(double v, int& first, double* w) const {
        v = std::clamp(v, 0.0, 1.0);
        const int nearest = static_cast<int>(v / width_);
        first = std::max(0, nearest - radius_);
        const int last = std::min(bins_ - 1, nearest + radius_ + 1);
        // Consecutive taps differ by a ratio that itself shrinks by a fixed
        // factor, so two exponentials cover the whole window.
        const double d0 = v - first * width_;
        double wk = std::exp(-0.5 * d0 * d0 * inv_var_);
        double ratio = std::exp((d0 * width_ - 0.5 * width_ * width_) * inv_var_);
        const int count = last - first + 1;
        double sum = 0.0;
        for (int k = 0; k < count; ++k) {
            w[k] = wk;
            sum += wk;
            wk *= ratio;
            ratio *= ratio_decay_;
        }
        for (int k = 0; k < count; ++k) w[k] /= sum;
        return count;
    }

    // Weights plus dw/dv. Zero derivative outside [0, 1] where v is clamped.
    int weights_with_derivative(double v, int& first, double* w, double* dw) const {
        const bool clamped = v < 0.0 || v > 1.0;
        v = std::clamp(v, 0.0, 1.0);
        const int count = weights(v, first, w);
        if (clamped) {
            std::fill(dw, dw + count, 0.0);
            return count;
        }
        double mean_a = 0.0;
        for (int k = 0; k < count; ++k) {
            dw[k] = -(v - (first + k) * width_) * inv_var_;
            mean_a += w[k] * dw[k];
        }
        for (int k = 0; k < count; ++k) dw[k] = w[k] * (dw[k] - mean_a);
        return count;
    }

private:
    int bins_;
    double width_;
    double inv_var_;
    double ratio_decay_ = 1.0;
    int radius_ = 0;
    int span_ = 0;
};

constexpr std::size_t kChunk = 4096;

// Joint Parzen histogram. Partial histograms over fixed-size chunks are
// summed in chunk order so the result does not depend on thread count.
std::vector<double> joint_histogram(std::span<const float> x, std::span<const float> y, const MIConfig& cfg) {
    const ParzenWindow win(cfg);
    const int nb = cfg.bins;
    const std::size_t n = x.size();
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    std::vector<double> partial(chunks * nb * nb, 0.0);

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(chunks); ++c) {
        std::vector<double> wx(win.span()), wy(win.span());
        double* h = &partial[c * nb * nb];
        const std::size_t end = std::min(n, (c + 1) * kChunk);
        for (std::size_t i = c * kChunk; i < end; ++i) {
            int fx = 0, fy = 0;
            const int cx = win.weights(x[i], fx, wx.data());
            const int cy = win.weights(y[i], fy, wy.data());
            for (int a = 0; a < cx; ++a) {
                double* row = h + (fx + a) * nb + fy;
                const double wa = wx[a];
                for (int b = 0; b < cy; ++b) row[b] += wa * wy[b];
            }
        }
    }
    std::vector<double> joint(nb * nb, 0.0);
    for (std::size_t c = 0; c < chunks; ++c)
        for (int k = 0; k < nb * nb; ++k) joint[k] += partial[c * nb * nb + k];
    const double inv_n = 1.0 / static_cast<double>(n);
    for (double& p : joint) p *= inv_n;
    return joint;
}

struct MiTables {
    double mi = 0.0;
    std::vector<double> log_ratio;  // log(p_ab / (p_a p_b)), 0 where p_ab == 0
};

MiTables mi_from_joint(const std::vector<double>& joint, int nb) {
    std::vector<double> px(nb, 0.0), py(nb, 0.0);
    for (int a = 0; a < nb; ++a)
        for (int b = 0; b < nb; ++b) {
            px[a] += joint[a * nb + b];
            py[b] += joint[a * nb + b];
        }
    MiTables t;
    t.log_ratio.assign(nb * nb, 0.0);
    for (int a = 0; a < nb; ++a)
        for (int b = 0; b < nb; ++b) {
            const double p = joint[a * nb + b];
            if (p > 0.0) {
                const double lr = std::log(p / (px[a] * py[b]));
                t.log_ratio[a * nb + b] = lr;
                t.mi += p * lr;
            }
        }
    return t;
}

void check_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string(what) + ": size mismatch " + std::to_string(a) + " vs " +
                                            std::to_string(b));
}

}  // namespace

double mutual_information(std::span<const float> x, std::span<const float> y, const MIConfig& cfg) {
    check_same_size(x.size(), y.size(), "mutual_information");
    if (x.empty()) return 0.0;
    return mi_from_joint(joint_histogram(x, y, cfg), cfg.bins).mi;
}

double mutual_information(const Volume3& x, const Volume3& y, const MIConfig& cfg) {
    if (x.dims() != y.dims()) throw DimensionMismatch("mutual_information", x.dims(), y.dims());
    return mutual_information(x.data(), y.data(), cfg);
}

double mutual_information_gradient(std::span<const float> x, std::span<const float> y, const MIConfig& cfg,
                                   std::span<double> grad_x) {
    check_same_size(x.size(), y.size(), "mutual_information_gradient");
    check_same_size(x.size(), grad_x.size(), "mutual_information_gradient");
    if (x.empty()) return 0.0;
    const int nb = cfg.bins;
    const MiTables t = mi_from_joint(joint_histogram(x, y, cfg), nb);
    const ParzenWindow win(cfg);
    const double inv_n = 1.0 / static_cast<double>(x.size());

    // dMI/dp_ab = log_ratio_ab - 1; the constant drops because each voxel's
    // weights sum to one.
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>((x.size() + kChunk - 1) / kChunk); ++c) {
        std::vector<double> wx(win.span()), dwx(win.span()), wy(win.span());
        const std::size_t end = std::min(x.size(), (c + 1) * kChunk);
        for (std::size_t i = c * kChunk; i < end; ++i) {
            int fx = 0, fy = 0;
            const int cx = win.weights_with_derivative(x[i], fx, wx.data(), dwx.data());
            const int cy = win.weights(y[i], fy, wy.data());
            double g = 0.0;
            for (int a = 0; a < cx; ++a) {
                if (dwx[a] == 0.0) continue;
                const double* row = &t.log_ratio[(fx + a) * nb + fy];
                double s = 0.0;
                for (int b = 0; b < cy; ++b) s += row[b] * wy[b];
                g += dwx[a] * s;
            }
            grad_x[i] = g * inv_n;
        }
    }
    return t.mi;
}

double recon_affine_loss(const Volume3& moving, const Volume3& fixed, const AffineParams& affine,
                         const MIConfig& cfg) {
    return -mutual_information(warp(moving, affine_to_displacement(affine, fixed.dims())), fixed, cfg);
}

double recon_diff_loss(const Volume3& moving, const Volume3& fixed, const AffineParams& affine,
                       std::span<const DisplacementField> blocks, const MIConfig& cfg) {
    DisplacementField total = affine_to_displacement(affine, fixed.dims());
    double loss = 0.0;
    for (const auto& b : blocks) {
        total = compose(total, b);
        loss -= mutual_information(warp(moving, total), fixed, cfg);
    }
    return loss;
}

double segmentation_sim_loss(const LabelVolume& fixed_labels, const LabelVolume& warped_labels) {
    if (fixed_labels.channel_count() != warped_labels.channel_count()) {
        throw std::invalid_argument("segmentation_sim_loss: channel count " +
                                    std::to_string(fixed_labels.channel_count()) + " vs " +
                                    std::to_string(warped_labels.channel_count()));
    }
    if (fixed_labels.channel_count() == 0) return 0.0;
    if (fixed_labels.dims() != warped_labels.dims())
        throw DimensionMismatch("segmentation_sim_loss", fixed_labels.dims(), warped_labels.dims());
    double sum = 0.0;
    for (std::size_t k = 0; k < fixed_labels.channel_count(); ++k) {
        auto a = fixed_labels.channel(k).data();
        auto b = warped_labels.channel(k).data();
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = static_cast<double>(a[i]) - b[i];
            sum += d * d;
        }
    }
    return sum / (2.0 * static_cast<double>(fixed_labels.dims().count()));
}

double kl_lattice_term(const Dims& d, std::span<const float> mu, std::span<const float> log_var, double lambda) {
    if (!(lambda > 0.0)) throw std::invalid_argument("KlConfig: lambda must be > 0");
    check_same_size(mu.size(), d.count(), "kl_lattice_term");
    check_same_size(log_var.size(), d.count(), "kl_lattice_term");
    double trace = 0.0, log_det = 0.0, edges = 0.0;
    std::size_t i = 0;
    const std::size_t sy = d.nx, sz = static_cast<std::size_t>(d.nx) * d.ny;
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x, ++i) {
                const int deg = (x > 0) + (x < d.nx - 1) + (y > 0) + (y < d.ny - 1) + (z > 0) + (z < d.nz - 1);
                trace += deg * std::exp(static_cast<double>(log_var[i]));
                log_det += log_var[i];
                const double m = mu[i];
                if (x + 1 < d.nx) edges += (m - mu[i + 1]) * (m - mu[i + 1]);
                if (y + 1 < d.ny) edges += (m - mu[i + sy]) * (m - mu[i + sy]);
                if (z + 1 < d.nz) edges += (m - mu[i + sz]) * (m - mu[i + sz]);
            }
    return 0.5 * (lambda * trace - log_det + lambda * edges);
}

double kl_velocity_loss(const VelocityDistribution& dist, const KlConfig& cfg) {
    double total = 0.0;
    for (int c = 0; c < 3; ++c)
        total += kl_lattice_term(dist.dims(), dist.mu[c].data(), dist.log_var[c].data(), cfg.lambda);
    return total;
}

KlGradient kl_velocity_gradient(const VelocityDistribution& dist, const KlConfig& cfg) {
    const Dims d = dist.dims();
    KlGradient g{VelocityField(d), VelocityField(d)};
    const std::size_t sy = d.nx, sz = static_cast<std::size_t>(d.nx) * d.ny;
    for (int c = 0; c < 3; ++c) {
        auto mu = dist.mu[c].data();
        auto lv = dist.log_var[c].data();
        auto gm = g.d_mu[c].data();
        auto gl = g.d_log_var[c].data();
#pragma omp parallel for schedule(static)
        for (int z = 0; z < d.nz; ++z) {
            std::size_t i = sz * z;
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x, ++i) {
                    const double m = mu[i];
                    double lap = 0.0;
                    int deg = 0;
                    if (x > 0) lap += m - mu[i - 1], ++deg;
                    if (x < d.nx - 1) lap += m - mu[i + 1], ++deg;
                    if (y > 0) lap += m - mu[i - sy], ++deg;
                    if (y < d.ny - 1) lap += m - mu[i + sy], ++deg;
                    if (z > 0) lap += m - mu[i - sz], ++deg;
                    if (z < d.nz - 1) lap += m - mu[i + sz], ++deg;
                    gm[i] = static_cast<float>(cfg.lambda * lap);
                    gl[i] = static_cast<float>(0.5 * (cfg.lambda * deg * std::exp(static_cast<double>(lv[i])) - 1.0));
                }
        }
    }
    return g;
}

double smoothness_loss(const DisplacementField& disp) {
    const Dims d = disp.dims();
    const std::size_t sy = d.nx, sz = static_cast<std::size_t>(d.nx) * d.ny;
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        auto u = disp[c].data();
        std::size_t i = 0;
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x, ++i) {
                    const double v = u[i];
                    if (x + 1 < d.nx) total += (u[i + 1] - v) * (u[i + 1] - v);
                    if (y + 1 < d.ny) total += (u[i + sy] - v) * (u[i + sy] - v);
                    if (z + 1 < d.nz) total += (u[i + sz] - v) * (u[i + sz] - v);
                }
    }
    return total;
}

DisplacementField smoothness_gradient(const DisplacementField& disp) {
    const Dims d = disp.dims();
    DisplacementField g(d);
    const std::size_t sy = d.nx, sz = static_cast<std::size_t>(d.nx) * d.ny;
    for (int c = 0; c < 3; ++c) {
        auto u = disp[c].data();
        auto out = g[c].data();
        std::size_t i = 0;
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x, ++i) {
                    const double v = u[i];
                    double s = 0.0;
                    if (x > 0) s += v - u[i - 1];
                    if (x < d.nx - 1) s += v - u[i + 1];
                    if (y > 0) s += v - u[i - sy];
                    if (y < d.ny - 1) s += v - u[i + sy];
                    if (z > 0) s += v - u[i - sz];
                    if (z < d.nz - 1) s += v - u[i + sz];
                    out[i] = static_cast<float>(2.0 * s);
                }
    }
    return g;
}

namespace {

double squared_distance(const Sample& a, const Sample& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return s;
}

void check_samples(std::span<const Sample> q, std::span<const Sample> p) {
    if (q.empty() || p.empty()) throw std::invalid_argument("mmd_loss: empty sample set");
    const std::size_t dim = q.front().size();
    for (const auto& s : q)
        if (s.size() != dim) throw std::invalid_argument("mmd_loss: inconsistent sample dimension");
    for (const auto& s : p)
        if (s.size() != dim) throw std::invalid_argument("mmd_loss: inconsistent sample dimension");
}

// Mean of k over distinct pairs, or k(z, z) = 1 for a single sample.
double within_set_mean(std::span<const Sample> s, double inv_two_h2) {
    if (s.size() == 1) return 1.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = i + 1; j < s.size(); ++j) sum += 2.0 * std::exp(-squared_distance(s[i], s[j]) * inv_two_h2);
    return sum / (static_cast<double>(s.size()) * static_cast<double>(s.size() - 1));
}

}  // namespace

double median_heuristic_bandwidth(std::span<const Sample> q, std::span<const Sample> p) {
    std::vector<const Sample*> all;
    for (const auto& s : q) all.push_back(&s);
    for (const auto& s : p) all.push_back(&s);
    std::vector<double> dist;
    dist.reserve(all.size() * (all.size() - 1) / 2);
    for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = i + 1; j < all.size(); ++j) dist.push_back(std::sqrt(squared_distance(*all[i], *all[j])));
    if (dist.empty()) return 1.0;
    auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
    std::nth_element(dist.begin(), mid, dist.end());
    return *mid > 0.0 ? *mid : 1.0;
}

double mmd_loss(std::span<const Sample> q, std::span<const Sample> p, double bandwidth) {
    check_samples(q, p);
    if (!(bandwidth > 0.0)) bandwidth = median_heuristic_bandwidth(q, p);
    const double inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    double cross = 0.0;
    for (const auto& a : q)
        for (const auto& b : p) cross += std::exp(-squared_distance(a, b) * inv_two_h2);
    cross /= static_cast<double>(q.size()) * static_cast<double>(p.size());
    return within_set_mean(q, inv_two_h2) + within_set_mean(p, inv_two_h2) - 2.0 * cross;
}

double mmd_loss_gradient(std::span<const Sample> q, std::span<const Sample> p, double bandwidth,
                         std::vector<Sample>& grad_q) {
    const double value = mmd_loss(q, p, bandwidth);
    if (!(bandwidth > 0.0)) bandwidth = median_heuristic_bandwidth(q, p);
    const double inv_h2 = 1.0 / (bandwidth * bandwidth);
    const double inv_two_h2 = 0.5 * inv_h2;
    const std::size_t dim = q.front().size();
    grad_q.assign(q.size(), Sample(dim, 0.0));
    const double wq = q.size() > 1 ? 2.0 / (static_cast<double>(q.size()) * static_cast<double>(q.size() - 1)) : 0.0;
    const double wc = 2.0 / (static_cast<double>(q.size()) * static_cast<double>(p.size()));
    for (std::size_t i = 0; i < q.size(); ++i) {
        for (std::size_t j = 0; j < q.size(); ++j) {
            if (i == j) continue;
            const double k = std::exp(-squared_distance(q[i], q[j]) * inv_two_h2);
            for (std::size_t d = 0; d < dim; ++d) grad_q[i][d] -= wq * k * (q[i][d] - q[j][d]) * inv_h2;
        }
        for (const auto& b : p) {
            const double k = std::exp(-squared_distance(q[i], b) * inv_two_h2);
            for (std::size_t d = 0; d < dim; ++d) grad_q[i][d] += wc * k * (q[i][d] - b[d]) * inv_h2;
        }
    }
    return value;
}

double ObjectiveBreakdown::term(const std::string& name) const {
    for (const auto& t : terms)
        if (t.name == name) return t.weighted;
    throw std::out_of_range("no objective term '" + name + "'");
}

LabelVolume select_channels(const LabelVolume& labels, const LabelVolume& reference) {
    LabelVolume out(labels.dims(), labels.spacing());
    for (const auto& name : reference.names()) out.add_channel(labels.channel(labels.find(name)), name);
    return out;
}

namespace {

LabelVolume warp_labels(const LabelVolume& labels, const DisplacementField& disp) {
    LabelVolume out(labels.dims(), labels.spacing());
    for (std::size_t k = 0; k < labels.channel_count(); ++k) out.add_channel(warp(labels.channel(k), disp), labels.names()[k]);
    return out;
}

// Voxel 3-vectors of z at a seeded subset of voxels versus standard normal draws.
double block_mmd(const VelocityField& z, std::uint64_t seed, std::size_t count) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, z.dims().count() - 1);
    std::normal_distribution<double> normal;
    std::vector<Sample> q, p;
    for (std::size_t s = 0; s < count; ++s) {
        const Vec3 v = z.at(pick(rng));
        q.push_back({v.x, v.y, v.z});
    }
    for (std::size_t s = 0; s < count; ++s) p.push_back({normal(rng), normal(rng), normal(rng)});
    return mmd_loss(q, p, 0.0);
}

}  // namespace

ObjectiveBreakdown total_objective(const ObjectiveInputs& in, const CascadeState& state, const LossWeights& w,
                                   const MIConfig& mi, const KlConfig& kl, std::uint64_t seed) {
    if (in.moving.dims() != in.fixed.dims()) throw DimensionMismatch("total_objective", in.moving.dims(), in.fixed.dims());
    ObjectiveBreakdown out;
    auto add = [&](std::string name, double value, double weight) {
        out.terms.push_back({std::move(name), value, value * weight});
    };
    const Dims d = in.fixed.dims();
    const double voxels = static_cast<double>(d.count());

    DisplacementField total = affine_to_displacement(state.affine, d);
    add("recon_affine", -mutual_information(warp(in.moving, total), in.fixed, mi), w.recon_affine);

    double recon_diff = 0.0;
    std::vector<DisplacementField> block_disp;
    for (std::size_t k = 0; k < state.blocks.size(); ++k) {
        block_disp.push_back(state.block_displacement(k));
        total = compose(total, block_disp.back());
        recon_diff -= mutual_information(warp(in.moving, total), in.fixed, mi);
    }
    add("recon_diff", recon_diff, w.recon_diff);

    if (in.atlas_labels != nullptr && in.fixed_labels != nullptr && in.fixed_labels->channel_count() > 0) {
        const LabelVolume warped = warp_labels(select_channels(*in.atlas_labels, *in.fixed_labels), total);
        add("segmentation", segmentation_sim_loss(*in.fixed_labels, warped), w.segmentation);
    }

    for (std::size_t k = 0; k < state.blocks.size(); ++k) {
        const std::string suffix = "_" + std::to_string(k + 1);
        switch (state.mode) {
            case Mode::generative:
                add("kl" + suffix, kl_velocity_loss(std::get<VelocityDistribution>(state.blocks[k]), kl) / voxels, w.kl);
                break;
            case Mode::non_generative:
                add("smooth" + suffix, smoothness_loss(block_disp[k]) / voxels, w.smooth);
                break;
            case Mode::info_vae:
                add("mmd" + suffix, block_mmd(mean_velocity(state.blocks[k]), seed + k, 256), w.mmd);
                break;
        }
    }
    for (const auto& t : out.terms) out.total += t.weighted;
    return out;
}

}  // namespace cascreg
