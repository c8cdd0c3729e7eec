#include "cascreg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cascreg/transform.hpp"

namespace cascreg {

namespace {

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

}  // namespace

Volume3 binarize(const Volume3& vol, double threshold) {
    Volume3 out(vol.dims(), 0.0f, vol.spacing());
    for (std::size_t i = 0; i < vol.size(); ++i) out[i] = vol[i] > threshold ? 1.0f : 0.0f;
    return out;
}

std::size_t mask_voxels(const Volume3& mask) {
    const auto d = mask.data();
    return static_cast<std::size_t>(std::count_if(d.begin(), d.end(), [](float v) { return v > 0.5f; }));
}

double dice(const Volume3& a, const Volume3& b) {
    if (a.dims() != b.dims()) throw DimensionMismatch("dice", a.dims(), b.dims());
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool ia = a[i] > 0.5f, ib = b[i] > 0.5f;
        na += ia;
        nb += ib;
        both += ia && ib;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * double(both) / double(na + nb);
}

LabelVolume resolve_masks(const LabelVolume& soft) {
    std::vector<Volume3> masks(soft.channel_count(), Volume3(soft.dims(), 0.0f, soft.spacing()));
    const std::size_t n = soft.dims().count();
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        float top = -1.0f;
        for (std::size_t k = 0; k < soft.channel_count(); ++k)
            if (soft.channel(k)[i] > top) {
                top = soft.channel(k)[i];
                best = k;
            }
        if (top > 0.5f) masks[best][i] = 1.0f;
    }
    if (masks.empty()) return LabelVolume(soft.dims(), soft.spacing());
    return LabelVolume(std::move(masks), soft.names());
}

PropagatedLabels propagate_labels(const LabelVolume& atlas, const DisplacementField& composed) {
    if (atlas.dims() != composed.dims()) throw DimensionMismatch("propagate_labels", atlas.dims(), composed.dims());
    PropagatedLabels out{LabelVolume(atlas.dims(), atlas.spacing()), {}};
    for (std::size_t k = 0; k < atlas.channel_count(); ++k) out.soft.add_channel(warp(atlas.channel(k), composed), atlas.names()[k]);
    out.masks = resolve_masks(out.soft);
    return out;
}

PropagatedLabels propagate_labels(const LabelVolume& atlas, const RegistrationResult& result) {
    return propagate_labels(atlas, result.composed);
}

std::vector<StageSummary> summarize_stages(const std::vector<TraceRow>& trace) {
    std::vector<StageSummary> out;
    for (const auto& row : trace) {
        if (out.empty() || out.back().stage != row.stage) out.push_back({row.stage, 0, row.loss, row.loss, row.loss});
        auto& s = out.back();
        s.iterations = row.iteration;
        s.best = std::min(s.best, row.loss);
        s.last = row.loss;
    }
    return out;
}

Metrics evaluate(const RegistrationResult& result, const LabelVolume& warped_masks, const LabelVolume* patient_labels,
                 const std::vector<std::string>& subset) {
    Metrics m;
    m.folding_fraction = folding_fraction(result.composed);
    m.runtime_seconds = result.metrics.runtime_seconds;
    if (patient_labels && patient_labels->dims() != warped_masks.dims())
        throw DimensionMismatch("evaluate", warped_masks.dims(), patient_labels->dims());

    std::vector<std::string> names = subset;
    if (names.empty()) names = patient_labels ? patient_labels->names() : warped_masks.names();
    double sum = 0.0;
    for (const auto& name : names) {
        LabelMetric lm;
        lm.name = name;
        const Volume3& pred = warped_masks.channel(warped_masks.find(name));
        lm.voxels_pred = mask_voxels(pred);
        if (patient_labels) {
            const Volume3& gt = patient_labels->channel(patient_labels->find(name));
            lm.voxels_gt = mask_voxels(gt);
            lm.dice = dice(pred, gt);
            lm.has_ground_truth = true;
            sum += lm.dice;
        }
        m.labels.push_back(std::move(lm));
    }
    if (patient_labels && !m.labels.empty()) m.mean_dice = sum / double(m.labels.size());
    return m;
}

void write_metrics_csv(std::ostream& out, const Metrics& m) {
    out << "label,dice,voxels_gt,voxels_pred\n";
    for (const auto& l : m.labels) {
        out << l.name << ',' << (l.has_ground_truth ? fmt("%.6f", l.dice) : "NA") << ','
            << (l.has_ground_truth ? std::to_string(l.voxels_gt) : "NA") << ',' << l.voxels_pred << '\n';
    }
    out << "(mean)," << (std::isnan(m.mean_dice) ? "NA" : fmt("%.6f", m.mean_dice)) << ",NA,NA\n";
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
    out << "stage,iteration,loss,recon,segmentation,regularizer\n";
    for (const auto& r : trace)
        out << r.stage << ',' << r.iteration << ',' << fmt("%.9g", r.loss) << ',' << fmt("%.9g", r.recon) << ','
            << fmt("%.9g", r.segmentation) << ',' << fmt("%.9g", r.regularizer) << '\n';
}

void write_summary(std::ostream& out, const RegistrationResult& r, const Metrics& m) {
    out << "mode: " << to_string(r.cascade.mode) << "\n";
    out << "dense blocks: " << r.cascade.blocks.size() << "\n";
    out << "affine:";
    for (double a : r.cascade.affine.a) out << ' ' << fmt("%.6f", a);
    out << "\n";
    for (const auto& s : summarize_stages(r.trace))
        out << "stage " << s.stage << ": " << s.iterations << " iterations, loss " << fmt("%.6f", s.first) << " -> "
            << fmt("%.6f", s.last) << " (best " << fmt("%.6f", s.best) << ")\n";
    out << "final objective: " << fmt("%.6f", r.final_objective.total) << "\n";
    for (const auto& t : r.final_objective.terms) out << "  " << t.name << ": " << fmt("%.6f", t.weighted) << "\n";
    out << "folding fraction: " << fmt("%.6f", m.folding_fraction) << "\n";
    if (std::isnan(m.mean_dice))
        out << "mean dice: NA (no patient labels)\n";
    else
        out << "mean dice: " << fmt("%.6f", m.mean_dice) << "\n";
    out << "runtime seconds: " << fmt("%.2f", m.runtime_seconds) << "\n";
}

}  // namespace cascreg
