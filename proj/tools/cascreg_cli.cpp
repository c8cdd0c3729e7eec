// Command-line front end: register, warp-labels, evaluate, phantom.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "cascreg/config.hpp"
#include "cascreg/io.hpp"
#include "cascreg/optimizer.hpp"
#include "cascreg/phantom.hpp"
#include "cascreg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cascreg;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');)
        if (!item.empty()) out.push_back(item);
    return out;
}

void require_file(const std::string& path, const char* flag) {
    if (!fs::is_regular_file(path)) throw UsageError(std::string(flag) + ": no such file '" + path + "'");
}

Volume3 load_intensities(const std::string& path, const std::optional<std::pair<double, double>>& window) {
    Volume3 v = read_image(path);
    if (window) return preprocess(v, window->first, window->second);
    if (v.min() < 0.0f || v.max() > 1.0f)
        throw std::runtime_error(path + ": intensities span [" + std::to_string(v.min()) + ", " +
                                 std::to_string(v.max()) + "], outside [0, 1]; pass --window LO,HI to rescale");
    return v;
}

std::optional<std::pair<double, double>> parse_window(const std::string& s) {
    if (s.empty()) return std::nullopt;
    const auto parts = split_list(s);
    if (parts.size() != 2) throw UsageError("--window expects LO,HI");
    return std::pair{parse_double(parts[0]), parse_double(parts[1])};
}

void check_grid(const char* what, const Dims& a, const Dims& b) {
    if (a != b) throw UsageError(DimensionMismatch(what, a, b).what());
}

void write_text(const fs::path& path, const std::string& text) { write_text_atomic(path, text); }

struct RegisterArgs {
    std::string atlas, patient, atlas_labels, patient_labels, out, config, window, labels;
};

int run_register(const RegisterArgs& a, std::optional<std::uint64_t> seed) {
    require_file(a.atlas, "--atlas");
    require_file(a.patient, "--patient");
    if (!a.atlas_labels.empty()) require_file(a.atlas_labels, "--atlas-labels");
    if (!a.patient_labels.empty()) require_file(a.patient_labels, "--patient-labels");
    if (!a.config.empty()) require_file(a.config, "--config");
    if (!a.patient_labels.empty() && a.atlas_labels.empty())
        throw UsageError("--patient-labels needs --atlas-labels");

    OptimizerConfig cfg = a.config.empty() ? OptimizerConfig{} : read_optimizer_config(a.config);
    if (seed) cfg.seed = *seed;
    const auto window = parse_window(a.window);
    const Volume3 moving = load_intensities(a.atlas, window);
    const Volume3 fixed = load_intensities(a.patient, window);
    check_grid("atlas vs patient grid", moving.dims(), fixed.dims());
    std::optional<LabelVolume> sa, sf;
    if (!a.atlas_labels.empty()) {
        sa = read_labels(a.atlas_labels);
        check_grid("atlas labels vs patient grid", sa->dims(), fixed.dims());
    }
    if (!a.patient_labels.empty()) {
        sf = read_labels(a.patient_labels);
        check_grid("patient labels vs patient grid", sf->dims(), fixed.dims());
        for (const auto& n : sf->names()) sa->find(n);
    }

    const fs::path out = a.out;
    fs::create_directories(out);
    RegistrationResult result;
    try {
        result = optimize_cascade(moving, fixed, sa ? &*sa : nullptr, sf ? &*sf : nullptr, cfg);
    } catch (const OptimizationError& e) {
        if (const auto* p = e.partial()) {
            if (p->composed.dims().positive()) write_displacement(out / "partial_displacement.vvol", p->composed);
            std::ostringstream trace;
            write_trace_csv(trace, p->trace);
            write_text(out / "partial_loss_trace.csv", trace.str());
        }
        throw;
    }

    write_displacement(out / "displacement.vvol", result.composed);
    write_volume(out / "warped.vvol", warp(moving, result.composed));
    Metrics metrics;
    if (sa) {
        const PropagatedLabels prop = propagate_labels(*sa, result);
        write_volume(out / "warped_labels.vvol", prop.masks);
        metrics = evaluate(result, prop.masks, sf ? &*sf : nullptr, split_list(a.labels));
    } else {
        metrics.folding_fraction = folding_fraction(result.composed);
    }
    metrics.runtime_seconds = result.metrics.runtime_seconds;

    std::ostringstream csv, trace, summary;
    write_metrics_csv(csv, metrics);
    write_trace_csv(trace, result.trace);
    write_summary(summary, result, metrics);
    write_text(out / "metrics.csv", csv.str());
    write_text(out / "loss_trace.csv", trace.str());
    write_text(out / "summary.txt", summary.str());
    write_text(out / "config_used.txt", format_optimizer_config(cfg));
    std::cout << summary.str();
    return 0;
}

int run_warp_labels(const std::string& labels, const std::string& disp, const std::string& out, bool soft) {
    require_file(labels, "--labels");
    require_file(disp, "--displacement");
    const LabelVolume sa = read_labels(labels);
    const DisplacementField u = read_displacement(disp);
    const PropagatedLabels p = propagate_labels(sa, u);
    write_volume(out, soft ? p.soft : p.masks);
    return 0;
}

int run_evaluate(const std::string& warped, const std::string& patient, const std::string& disp,
                 const std::string& labels, const std::string& out) {
    require_file(warped, "--warped-labels");
    if (!patient.empty()) require_file(patient, "--patient-labels");
    if (!disp.empty()) require_file(disp, "--displacement");
    const LabelVolume masks = read_labels(warped);
    std::optional<LabelVolume> sf;
    if (!patient.empty()) sf = read_labels(patient);
    RegistrationResult r;
    r.composed = disp.empty() ? DisplacementField(masks.dims()) : read_displacement(disp);
    check_grid("displacement vs labels", r.composed.dims(), masks.dims());
    const Metrics m = evaluate(r, masks, sf ? &*sf : nullptr, split_list(labels));
    std::ostringstream csv;
    write_metrics_csv(csv, m);
    if (out.empty())
        std::cout << csv.str();
    else
        write_text(out, csv.str());
    if (!disp.empty()) std::cerr << "folding fraction: " << m.folding_fraction << "\n";
    return 0;
}

int run_phantom(const std::string& preset, const std::string& spec_path, const std::string& dims_text,
                const std::string& out, std::optional<std::uint64_t> seed) {
    if (preset.empty() == spec_path.empty()) throw UsageError("phantom: give exactly one of --preset or --spec");
    PhantomSpec spec;
    if (!spec_path.empty()) {
        require_file(spec_path, "--spec");
        spec = read_phantom_spec(spec_path);
    } else {
        spec = phantom_preset(preset, dims_text.empty() ? Dims{64, 64, 64} : parse_dims(dims_text));
    }
    if (seed)
        for (auto& d : spec.deformations)
            if (auto* sr = std::get_if<SmoothRandom>(&d)) sr->seed = *seed;
    const PhantomPair p = generate(spec);
    const fs::path dir = out;
    fs::create_directories(dir);
    write_volume(dir / "atlas.vvol", p.moving);
    write_volume(dir / "patient.vvol", p.fixed);
    write_volume(dir / "atlas_labels.vvol", p.atlas_labels);
    write_volume(dir / "patient_labels.vvol", p.fixed_labels);
    write_displacement(dir / "ground_truth.vvol", p.ground_truth);
    std::ostringstream csv;
    csv << "label,initial_dice\n";
    for (std::size_t k = 0; k < p.atlas_labels.channel_count(); ++k) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f",
                      dice(binarize(p.atlas_labels.channel(k)), binarize(p.fixed_labels.channel(k))));
        csv << p.atlas_labels.names()[k] << ',' << buf << '\n';
    }
    write_text(dir / "initial_dice.csv", csv.str());
    std::cout << csv.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cascaded diffeomorphic atlas registration and label propagation"};
    app.require_subcommand(1);
    std::optional<std::uint64_t> seed;
    app.add_option("--seed", seed, "Random seed (overrides the config file)");

    RegisterArgs ra;
    auto* reg = app.add_subcommand("register", "Register an atlas onto a patient volume");
    reg->add_option("--atlas", ra.atlas, "Atlas image (VVOL1)")->required();
    reg->add_option("--patient", ra.patient, "Patient image (VVOL1)")->required();
    reg->add_option("--atlas-labels", ra.atlas_labels, "Atlas label channels");
    reg->add_option("--patient-labels", ra.patient_labels, "Patient label channels (semi-supervised)");
    reg->add_option("--out", ra.out, "Output directory")->required();
    reg->add_option("--config", ra.config, "Optimizer config file");
    reg->add_option("--window", ra.window, "Intensity window LO,HI mapped to [0, 1]");
    reg->add_option("--labels", ra.labels, "Comma-separated labels to evaluate");

    std::string wl_labels, wl_disp, wl_out;
    bool wl_soft = false;
    auto* wl = app.add_subcommand("warp-labels", "Warp atlas labels through a saved displacement");
    wl->add_option("--labels", wl_labels, "Atlas label channels")->required();
    wl->add_option("--displacement", wl_disp, "Composed displacement (VVOL1)")->required();
    wl->add_option("--out", wl_out, "Output label file")->required();
    wl->add_flag("--soft", wl_soft, "Write interpolated channels instead of masks");

    std::string ev_warped, ev_patient, ev_disp, ev_labels, ev_out;
    auto* ev = app.add_subcommand("evaluate", "Recompute metrics from saved artifacts");
    ev->add_option("--warped-labels", ev_warped, "Warped atlas masks")->required();
    ev->add_option("--patient-labels", ev_patient, "Patient label channels");
    ev->add_option("--displacement", ev_disp, "Composed displacement, for the folding fraction");
    ev->add_option("--labels", ev_labels, "Comma-separated labels to evaluate");
    ev->add_option("--out", ev_out, "Metrics CSV path (stdout when omitted)");

    std::string ph_preset, ph_spec, ph_dims, ph_out;
    auto* ph = app.add_subcommand("phantom", "Generate a synthetic atlas/patient pair");
    ph->add_option("--preset", ph_preset, "Built-in scene");
    ph->add_option("--spec", ph_spec, "Phantom spec file");
    ph->add_option("--dims", ph_dims, "Grid size NX,NY,NZ for presets");
    ph->add_option("--out", ph_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n" << app.help();
        return kExitUsage;
    }

    try {
        if (*reg) return run_register(ra, seed);
        if (*wl) return run_warp_labels(wl_labels, wl_disp, wl_out, wl_soft);
        if (*ev) return run_evaluate(ev_warped, ev_patient, ev_disp, ev_labels, ev_out);
        if (*ph) return run_phantom(ph_preset, ph_spec, ph_dims, ph_out, seed);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n" << app.help();
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
