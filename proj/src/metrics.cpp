#include "ssc/metrics.hpp"

#include <stdexcept>

namespace ssc {

int64_t ConfusionMatrix::total() const {
  int64_t n = 0;
  for (int64_t v : counts) n += v;
  return n;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes_with_empty != num_classes_with_empty)
    throw std::invalid_argument("confusion merge: class count mismatch");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

ConfusionMatrix accumulate_confusion(const LabelGrid& pred, const LabelGrid& gt,
                                     int num_classes) {
  if (pred.dims != gt.dims)
    throw std::invalid_argument("evaluate: prediction/ground-truth shape mismatch");
  ConfusionMatrix cm(num_classes + 1);
  for (int64_t i = 0; i < gt.num_voxels(); ++i) {
    if (gt.invalid[size_t(i)]) continue;
    const int g = gt.labels[size_t(i)];
    const int p = pred.labels[size_t(i)];
    if (g > num_classes || p > num_classes)
      throw std::invalid_argument("evaluate: label out of class range");
    cm.at(g, p) += 1;
  }
  return cm;
}

EvalResult evaluate(const ConfusionMatrix& cm, MeanMode mode) {
  const int k = cm.num_classes_with_empty;
  EvalResult r;

  // completion: any occupied class vs empty
  int64_t tp = 0, fp = 0, fn = 0;
  for (int g = 0; g < k; ++g)
    for (int p = 0; p < k; ++p) {
      const int64_t n = cm.at(g, p);
      if (g > 0 && p > 0) tp += n;
      else if (g == 0 && p > 0) fp += n;
      else if (g > 0 && p == 0) fn += n;
    }
  r.iou = (tp + fp + fn) > 0 ? double(tp) / double(tp + fp + fn) : 0.0;
  r.precision = (tp + fp) > 0 ? double(tp) / double(tp + fp) : 0.0;
  r.recall = (tp + fn) > 0 ? double(tp) / double(tp + fn) : 0.0;

  r.per_class_iou.assign(size_t(k) - 1, 0.0);
  double sum = 0.0;
  int64_t counted = 0;
  for (int c = 1; c < k; ++c) {
    int64_t tpc = cm.at(c, c), fpc = 0, fnc = 0;
    for (int g = 0; g < k; ++g)
      if (g != c) fpc += cm.at(g, c);
    for (int p = 0; p < k; ++p)
      if (p != c) fnc += cm.at(c, p);
    const int64_t denom = tpc + fpc + fnc;
    const double iou_c = denom > 0 ? double(tpc) / double(denom) : 0.0;
    r.per_class_iou[size_t(c) - 1] = iou_c;
    if (mode == MeanMode::kAllClasses || denom > 0) {
      sum += iou_c;
      ++counted;
    }
  }
  r.miou = counted > 0 ? sum / double(counted) : 0.0;
  return r;
}

EvalResult evaluate(const LabelGrid& pred, const LabelGrid& gt, int num_classes,
                    MeanMode mode) {
  return evaluate(accumulate_confusion(pred, gt, num_classes), mode);
}

}  // namespace ssc
