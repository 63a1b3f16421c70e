#pragma once
#include <cstdint>
#include <vector>

#include "ssc/geometry.hpp"

namespace ssc {

// (C+1) x (C+1) counts, rows = ground truth, cols = prediction, class 0 is
// empty. Accumulation is associative, so per-scene matrices can be merged.
struct ConfusionMatrix {
  int num_classes_with_empty = 0;
  std::vector<int64_t> counts;

  explicit ConfusionMatrix(int num_classes_with_empty = 1)
      : num_classes_with_empty(num_classes_with_empty),
        counts(size_t(num_classes_with_empty) * num_classes_with_empty, 0) {}

  int64_t& at(int gt, int pred) {
    return counts[size_t(gt) * num_classes_with_empty + pred];
  }
  int64_t at(int gt, int pred) const {
    return counts[size_t(gt) * num_classes_with_empty + pred];
  }
  int64_t total() const;
  void merge(const ConfusionMatrix& other);
};

// How classes absent from both ground truth and prediction enter the mean:
// counted as IoU 0 (benchmark convention) or dropped from the mean.
enum class MeanMode { kAllClasses, kPresentOnly };

struct EvalResult {
  double iou = 0.0;   // completion IoU on occupancy (label > 0)
  double miou = 0.0;  // mean over semantic classes 1..C
  double precision = 0.0;
  double recall = 0.0;
  std::vector<double> per_class_iou;  // size C, classes 1..C
};

// Accumulates prediction vs ground truth over valid (non-invalid) voxels.
ConfusionMatrix accumulate_confusion(const LabelGrid& pred, const LabelGrid& gt,
                                     int num_classes);

EvalResult evaluate(const ConfusionMatrix& cm, MeanMode mode);
EvalResult evaluate(const LabelGrid& pred, const LabelGrid& gt, int num_classes,
                    MeanMode mode);

}  // namespace ssc
