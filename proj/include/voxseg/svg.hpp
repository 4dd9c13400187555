#pragma once

#include <string>
#include <vector>

#include "voxseg/metrics.hpp"
#include "voxseg/trainer.hpp"

namespace voxseg {

// Train and validation curves against epoch, with the best validation
// epoch circled.
std::string loss_curve_svg(const std::vector<EpochRecord>& history);

// Lesion volume scatter (ground truth on x, prediction on y) with the
// identity line, the fitted line and an "r = .., slope = .." annotation.
std::string volume_scatter_svg(const std::vector<VolumePair>& pairs, const Agreement& fit);

}  // namespace voxseg
