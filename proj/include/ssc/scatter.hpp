#pragma once
#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ssc {

enum class Reduce { kMax, kMean, kSum };

// Grouping of M rows by integer key: unique keys ascending, a dense group id
// per row, and per-group row lists ordered by input row index. Every scatter
// kernel reduces serially inside a group, so results do not depend on thread
// count.
struct KeyGroups {
  std::vector<int64_t> unique_keys;
  std::vector<int32_t> group_of_row;   // M entries, values in [0, G)
  std::vector<int64_t> group_offsets;  // G+1 entries into rows_by_group
  std::vector<int32_t> rows_by_group;  // M row indices, ascending within group
  int64_t num_groups() const { return int64_t(unique_keys.size()); }
};

inline KeyGroups group_by_keys(const std::vector<int64_t>& keys) {
  const int64_t m = int64_t(keys.size());
  KeyGroups g;
  std::vector<int32_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
    if (keys[a] != keys[b]) return keys[a] < keys[b];
    return a < b;
  });
  g.group_of_row.assign(m, 0);
  g.rows_by_group.resize(m);
  g.group_offsets.push_back(0);
  for (int64_t i = 0; i < m; ++i) {
    const int32_t row = order[i];
    if (g.unique_keys.empty() || g.unique_keys.back() != keys[row]) {
      if (!g.unique_keys.empty()) g.group_offsets.push_back(i);
      g.unique_keys.push_back(keys[row]);
    }
    g.rows_by_group[i] = row;
    g.group_of_row[row] = int32_t(g.unique_keys.size()) - 1;
  }
  g.group_offsets.push_back(m);
  if (m == 0) g.group_offsets.assign(1, 0);
  return g;
}

template <typename T>
struct ScatterResult {
  std::vector<int64_t> unique_keys;
  std::vector<T> reduced;              // G x C row-major
  std::vector<int32_t> argmax;         // G x C, only filled for kMax
};

// One output row per distinct key, ordered by ascending key; reduction over
// all rows sharing the key. Mean/sum accumulate in input row order; max
// records the first-winning row per channel (for gradient routing).
template <typename T>
ScatterResult<T> scatter_reduce(const T* features, int64_t m, int64_t c,
                                const std::vector<int64_t>& keys, Reduce reduce) {
  if (int64_t(keys.size()) != m) throw std::invalid_argument("scatter_reduce: keys size mismatch");
  for (int64_t k : keys)
    if (k < 0) throw std::invalid_argument("scatter_reduce: keys must be non-negative");

  const KeyGroups groups = group_by_keys(keys);
  const int64_t g = groups.num_groups();
  ScatterResult<T> out;
  out.unique_keys = groups.unique_keys;
  out.reduced.assign(size_t(g * c), T(0));
  if (reduce == Reduce::kMax) out.argmax.assign(size_t(g * c), -1);

#pragma omp parallel for schedule(static) if (g * c > 4096)
  for (int64_t gi = 0; gi < g; ++gi) {
    T* dst = out.reduced.data() + gi * c;
    const int64_t begin = groups.group_offsets[gi];
    const int64_t end = groups.group_offsets[gi + 1];
    if (reduce == Reduce::kMax) {
      int32_t* arg = out.argmax.data() + gi * c;
      for (int64_t j = 0; j < c; ++j) dst[j] = -std::numeric_limits<T>::infinity();
      for (int64_t p = begin; p < end; ++p) {
        const int32_t row = groups.rows_by_group[p];
        const T* src = features + int64_t(row) * c;
        for (int64_t j = 0; j < c; ++j) {
          if (src[j] > dst[j]) {  // strict: first occurrence wins ties
            dst[j] = src[j];
            arg[j] = row;
          }
        }
      }
    } else {
      for (int64_t p = begin; p < end; ++p) {
        const int32_t row = groups.rows_by_group[p];
        const T* src = features + int64_t(row) * c;
        for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
      }
      if (reduce == Reduce::kMean) {
        const T count = T(end - begin);
        for (int64_t j = 0; j < c; ++j) dst[j] /= count;
      }
    }
  }
  return out;
}

template <typename T>
ScatterResult<T> scatter_reduce(const std::vector<T>& features, int64_t c,
                                const std::vector<int64_t>& keys, Reduce reduce) {
  const int64_t m = keys.empty() ? 0 : int64_t(keys.size());
  if (m * c != int64_t(features.size()))
    throw std::invalid_argument("scatter_reduce: features size mismatch");
  return scatter_reduce(features.data(), m, c, keys, reduce);
}

}  // namespace ssc
