#pragma once
#include "ssc/geometry.hpp"
#include "ssc/losses.hpp"
#include "ssc/network.hpp"

namespace ssc {

// Ground truth of one scene at the four scales the network is supervised on
// (full resolution and 1/2, 1/4, 1/8). Semantic labels downsample by
// majority vote, completion occupancy by logical OR; both start from the
// scene-completion labels, not from the observed input.
struct SceneTargets {
  std::array<LabelGrid, 4> labels;
  std::array<BoolGrid, 4> occupancy;
};

inline SceneTargets build_scene_targets(const LabelGrid& gt) {
  SceneTargets t;
  t.labels[0] = gt;
  t.occupancy[0] = BoolGrid::zeros(gt.dims);
  for (int64_t i = 0; i < gt.num_voxels(); ++i)
    t.occupancy[0].values[size_t(i)] = gt.labels[size_t(i)] != 0;
  for (int s = 1; s < 4; ++s) {
    t.labels[size_t(s)] = downsample_labels(t.labels[size_t(s) - 1], 2);
    t.occupancy[size_t(s)] = downsample_occupancy(t.occupancy[size_t(s) - 1], 2);
  }
  return t;
}

template <typename T>
struct BatchLoss {
  Tensor<T> bev, sem, com, total;
  LossReport report;
};

// Final-prediction loss over all valid voxels, classes 0..C_n.
template <typename T>
Tensor<T> bev_loss(Tape<T>* tape, const Tensor<T>& ssc_logits,
                   const std::vector<const LabelGrid*>& gts) {
  const int64_t b = ssc_logits.dim(0);
  const int h = ssc_logits.dim(2), l = ssc_logits.dim(3), w = ssc_logits.dim(4);
  if (int64_t(gts.size()) != b) throw std::invalid_argument("bev_loss: batch mismatch");
  Tensor<T> rows = ops::channels_to_rows(tape, ssc_logits);
  std::vector<int32_t> targets(size_t(rows.dim(0)), 0);
  std::vector<uint8_t> ignore(size_t(rows.dim(0)), 0);
  for (int64_t bi = 0; bi < b; ++bi) {
    const LabelGrid& gt = *gts[size_t(bi)];
    if (gt.dims != std::array<int, 3>{l, w, h})
      throw std::invalid_argument("bev_loss: label grid shape mismatch");
    for (int z = 0; z < h; ++z)
      for (int x = 0; x < l; ++x)
        for (int y = 0; y < w; ++y) {
          const int64_t row = ((bi * h + z) * l + x) * w + y;
          const int64_t cell = gt.index(x, y, z);
          targets[size_t(row)] = gt.labels[size_t(cell)];
          ignore[size_t(row)] = gt.invalid[size_t(cell)];
        }
  }
  return ops::lovasz_ce(tape, rows, targets, ignore);
}

// Per-stage semantic supervision on the occupied, valid voxels of each
// scale; targets are the 1..C_n labels shifted to 0-based class columns.
template <typename T>
Tensor<T> semantic_stage_loss(Tape<T>* tape, const SparseVoxelTensor<T>& aux,
                              const std::vector<const LabelGrid*>& stage_labels) {
  const int64_t m = aux.num_active();
  std::vector<int32_t> targets(size_t(m), 0);
  std::vector<uint8_t> ignore(size_t(m), 0);
  for (int64_t i = 0; i < m; ++i) {
    const auto& c = aux.coords[size_t(i)];
    const LabelGrid& gt = *stage_labels[size_t(c[0])];
    const int64_t cell = gt.index(c[1], c[2], c[3]);
    const uint16_t label = gt.labels[size_t(cell)];
    if (label == 0 || gt.invalid[size_t(cell)]) {
      ignore[size_t(i)] = 1;
    } else {
      targets[size_t(i)] = label - 1;
    }
  }
  return ops::lovasz_ce(tape, aux.features, targets, ignore);
}

// Per-stage binary completion supervision against the OR-downsampled ground
// truth occupancy.
template <typename T>
Tensor<T> completion_stage_loss(Tape<T>* tape, const Tensor<T>& aux_logits,
                                const std::vector<const BoolGrid*>& stage_occ,
                                const std::vector<const LabelGrid*>& stage_labels) {
  const int64_t b = aux_logits.dim(0);
  const int h = aux_logits.dim(2), l = aux_logits.dim(3), w = aux_logits.dim(4);
  std::vector<uint8_t> targets(size_t(aux_logits.numel()), 0);
  std::vector<uint8_t> ignore(size_t(aux_logits.numel()), 0);
  for (int64_t bi = 0; bi < b; ++bi) {
    const BoolGrid& occ = *stage_occ[size_t(bi)];
    const LabelGrid& lab = *stage_labels[size_t(bi)];
    for (int z = 0; z < h; ++z)
      for (int x = 0; x < l; ++x)
        for (int y = 0; y < w; ++y) {
          const int64_t row = ((bi * h + z) * l + x) * w + y;
          targets[size_t(row)] = occ.values[size_t(occ.index(x, y, z))];
          ignore[size_t(row)] = lab.invalid[size_t(lab.index(x, y, z))];
        }
  }
  return ops::lovasz_bce(tape, aux_logits, targets, ignore);
}

// Assembles Eq.-style multi-task losses for one forward pass. Stages missing
// from the output (inference mode, disabled branch or supervision) simply
// contribute zero.
template <typename T>
BatchLoss<T> compute_losses(Tape<T>* tape, const ForwardOutput<T>& out,
                            const std::vector<const SceneTargets*>& targets,
                            T weight_bev) {
  BatchLoss<T> loss;
  std::vector<const LabelGrid*> full;
  for (const SceneTargets* t : targets) full.push_back(&t->labels[0]);
  loss.bev = bev_loss(tape, out.ssc_logits, full);

  loss.sem = Tensor<T>::zeros({1});
  loss.com = Tensor<T>::zeros({1});
  if (out.has_aux) {
    for (int s = 0; s < 3; ++s) {
      std::vector<const LabelGrid*> stage_labels;
      std::vector<const BoolGrid*> stage_occ;
      for (const SceneTargets* t : targets) {
        stage_labels.push_back(&t->labels[size_t(s) + 1]);
        stage_occ.push_back(&t->occupancy[size_t(s) + 1]);
      }
      if (out.has_sem) {
        Tensor<T> term = semantic_stage_loss(tape, out.sem_aux[size_t(s)], stage_labels);
        loss.report.sem_stages[size_t(s)] = double(term.scalar());
        loss.sem = ops::add(tape, loss.sem, term);
      }
      Tensor<T> term =
          completion_stage_loss(tape, out.com_aux[size_t(s)], stage_occ, stage_labels);
      loss.report.com_stages[size_t(s)] = double(term.scalar());
      loss.com = ops::add(tape, loss.com, term);
    }
  }
  loss.total = ops::total_loss(tape, loss.bev, loss.sem, loss.com, weight_bev);
  loss.report.bev = double(loss.bev.scalar());
  loss.report.sem = double(loss.sem.scalar());
  loss.report.com = double(loss.com.scalar());
  loss.report.total = double(weight_bev) * loss.report.bev + loss.report.sem +
                      loss.report.com;
  return loss;
}

}  // namespace ssc
