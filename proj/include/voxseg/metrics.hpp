#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "voxseg/volume.hpp"

namespace voxseg {

struct ComponentLabeling {
  Dims dims{};
  std::vector<std::int32_t> labels;  // 0 = background, components 1..n in scan order
  std::int32_t n_components = 0;
  std::vector<Index> sizes;          // sizes[k] is the voxel count of component k + 1
};

/// Components under 18-connectivity: face or edge neighbours, not corners.
ComponentLabeling connected_components_18(const LabelVolume& mask);

/// 2|A n R| / (|A| + |R|); 1 when both masks are empty.
double dsc(const LabelVolume& pred, const LabelVolume& gt);
/// Fraction of ground-truth components touched by the prediction; 1 when
/// there are none.
double ltpr(const LabelVolume& pred, const LabelVolume& gt);
/// Fraction of predicted components not touching the ground truth; 0 when
/// there are none.
double lfpr(const LabelVolume& pred, const LabelVolume& gt);

enum class AvdDenominator { prediction, reference };

/// |(|pred| - |gt|)| / |pred| (or / |gt|). Throws UndefinedMetric when the
/// denominator mask is empty.
double avd(const LabelVolume& pred, const LabelVolume& gt, AvdDenominator denom = AvdDenominator::prediction);

struct VolumePair {
  double gt_volume = 0;    // mm^3
  double pred_volume = 0;  // mm^3
};

// One pair per ground-truth component that overlaps the prediction: its own
// volume against the union of every predicted component it touches.
std::vector<VolumePair> lesion_volume_pairs(const LabelVolume& pred, const LabelVolume& gt);

struct Agreement {
  double pearson_r = 0;
  double slope = 0;  // least squares of pred on gt, intercept fitted
  double intercept = 0;
  Index n = 0;
};

/// Throws UndefinedMetric for fewer than 2 pairs or zero variance.
Agreement volume_agreement(const std::vector<VolumePair>& pairs);

struct EvalReport {
  std::string subject;
  double dsc = 0;
  double ltpr = 0;
  double lfpr = 0;
  double avd = 0;  // NaN when undefined (empty prediction)
  Index n_gt_lesions = 0;
  Index n_pred_lesions = 0;
  std::vector<VolumePair> pairs;
};

EvalReport evaluate(const LabelVolume& pred, const LabelVolume& gt, const std::string& subject = "",
                    AvdDenominator denom = AvdDenominator::prediction);

// `subject,dsc,ltpr,lfpr,avd,n_gt,n_pred` with a final "mean" row averaging
// the defined values of each column.
void write_eval_csv(const std::vector<EvalReport>& reports, const std::filesystem::path& path);
// `subject,gt_volume,pred_volume`.
void write_pairs_csv(const std::vector<EvalReport>& reports, const std::filesystem::path& path);
std::vector<VolumePair> read_pairs_csv(const std::filesystem::path& path);

}  // namespace voxseg
