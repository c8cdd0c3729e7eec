#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "cascreg/optimizer.hpp"
#include "cascreg/volume.hpp"

namespace cascreg {

/// 1 where vol > threshold, else 0.
Volume3 binarize(const Volume3& vol, double threshold = 0.5);
std::size_t mask_voxels(const Volume3& mask);

/// 2|A n B| / (|A| + |B|) over voxels > 0.5. Two empty masks score 1.
double dice(const Volume3& a, const Volume3& b);

struct PropagatedLabels {
    LabelVolume soft;   // trilinear-warped channels
    LabelVolume masks;  // argmax-resolved, then thresholded at 0.5
};

/// Per voxel only the channel with the largest soft value may be set, and
/// only when that value exceeds 0.5. Ties go to the earlier channel.
LabelVolume resolve_masks(const LabelVolume& soft);

/// Warps every atlas channel once through the composed displacement.
PropagatedLabels propagate_labels(const LabelVolume& atlas, const DisplacementField& composed);
PropagatedLabels propagate_labels(const LabelVolume& atlas, const RegistrationResult& result);

struct StageSummary {
    std::string stage;
    int iterations = 0;
    double first = 0.0;
    double best = 0.0;
    double last = 0.0;
};
std::vector<StageSummary> summarize_stages(const std::vector<TraceRow>& trace);

/// Per-label dice of warped masks against patient masks over `subset` (all
/// patient labels when empty), plus mean dice and the folding fraction of the
/// composed field. Without patient labels only predicted voxel counts are
/// filled. Unknown names throw std::out_of_range listing what exists.
Metrics evaluate(const RegistrationResult& result, const LabelVolume& warped_masks, const LabelVolume* patient_labels,
                 const std::vector<std::string>& subset = {});

/// label,dice,voxels_gt,voxels_pred then a "(mean)" row; NA marks values
/// that need patient labels.
void write_metrics_csv(std::ostream& out, const Metrics& m);
/// stage,iteration,loss,recon,segmentation,regularizer
void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);
void write_summary(std::ostream& out, const RegistrationResult& result, const Metrics& m);

}  // namespace cascreg
