#pragma once

// Shared test utilities and independent oracles. Everything here recomputes
// results from first principles and stays off the library's internal paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "plfp/geometry.hpp"
#include "plfp/model.hpp"
#include "plfp/rng.hpp"
#include "plfp/tensor.hpp"

namespace testutil {

// Direct six-nested-loop convolution, stride 1, zero padding K/2.
inline plfp::Tensor conv_reference(const plfp::Tensor& in, const plfp::Tensor& w) {
  const int n = in.dim(0), ci = in.dim(1), h = in.dim(2), ww = in.dim(3);
  const int co = w.dim(0), k = w.dim(2), pad = k / 2;
  plfp::Tensor out({n, co, h, ww});
  for (int b = 0; b < n; ++b)
    for (int oc = 0; oc < co; ++oc)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < ww; ++j) {
          double acc = 0.0;
          for (int c = 0; c < ci; ++c)
            for (int u = 0; u < k; ++u)
              for (int v = 0; v < k; ++v) {
                const int ii = i + u - pad, jj = j + v - pad;
                if (ii < 0 || ii >= h || jj < 0 || jj >= ww) continue;
                acc += w.at({oc, c, u, v}) * in.at({b, c, ii, jj});
              }
          out.at({b, oc, i, j}) = acc;
        }
  return out;
}

// Literal step-wise re-computation oracle for the greedy selection: at every
// step all pairwise distances and local powers are recomputed from the raw
// rows over the currently live set; no incremental structures.
struct OracleSelection {
  std::vector<int> pruned;
  std::vector<double> scores;
};

inline OracleSelection greedy_selection_oracle(int rows, int cols,
                                               const std::vector<double>& values, int m, int k) {
  auto dist = [&](int a, int b) {
    double s = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double d = values[static_cast<std::size_t>(a) * cols + c] -
                       values[static_cast<std::size_t>(b) * cols + c];
      s += d * d;
    }
    return std::sqrt(s);
  };
  std::vector<int> live(static_cast<std::size_t>(rows));
  std::iota(live.begin(), live.end(), 0);
  OracleSelection result;
  for (int step = 0; step < m; ++step) {
    const int n = static_cast<int>(live.size());
    std::vector<double> power(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      std::vector<double> ds;
      for (int j = 0; j < n; ++j)
        if (j != i) ds.push_back(dist(live[static_cast<std::size_t>(i)], live[static_cast<std::size_t>(j)]));
      std::sort(ds.begin(), ds.end());
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += ds[static_cast<std::size_t>(t)];
      power[static_cast<std::size_t>(i)] = s / k;
    }
    double min_power = power[0];
    for (double p : power) min_power = std::min(min_power, p);
    int best = -1;
    double best_global = 0.0;
    for (int i = 0; i < n; ++i) {
      if (power[static_cast<std::size_t>(i)] != min_power) continue;
      double global = 0.0;
      for (int j = 0; j < n; ++j)
        global += dist(live[static_cast<std::size_t>(i)], live[static_cast<std::size_t>(j)]);
      if (best < 0 || global < best_global) {
        best = i;
        best_global = global;
      }
    }
    result.pruned.push_back(live[static_cast<std::size_t>(best)]);
    result.scores.push_back(power[static_cast<std::size_t>(best)]);
    live.erase(live.begin() + best);
  }
  return result;
}

inline plfp::FilterBank random_bank(int rows, int cols, std::uint64_t seed, double lo = -1.0,
                                    double hi = 1.0) {
  plfp::Rng rng(seed);
  std::vector<double> values(static_cast<std::size_t>(rows) * cols);
  for (double& v : values) v = rng.uniform(lo, hi);
  return plfp::make_bank(0, rows, cols, std::move(values));
}

inline plfp::Tensor random_image(int c, int h, int w, std::uint64_t seed) {
  plfp::Rng rng(seed);
  plfp::Tensor t({c, h, w});
  for (double& v : t.data) v = rng.normal();
  return t;
}

// Central finite differences of the batch loss w.r.t. every parameter.
// Returns the worst mixed relative/absolute error against the analytic
// gradients: |a - f| / max(|a|, |f|, floor).
inline double gradcheck_worst_error(const plfp::ToyModel& model, const plfp::Batch& batch,
                                    const plfp::LossSpec& loss, double h = 1e-5) {
  std::vector<plfp::Tensor> grads;
  plfp::batch_gradients(model, batch, loss, grads);
  double worst = 0.0;
  for (std::size_t li = 0; li < model.params.size(); ++li) {
    if (model.params[li].empty()) continue;
    for (std::size_t t = 0; t < model.params[li].numel(); ++t) {
      plfp::ToyModel pert = model;
      pert.params[li].data[t] += h;
      std::vector<plfp::Tensor> scratch;
      const double up = plfp::batch_gradients(pert, batch, loss, scratch);
      pert.params[li].data[t] -= 2.0 * h;
      const double down = plfp::batch_gradients(pert, batch, loss, scratch);
      const double fd = (up - down) / (2.0 * h);
      const double a = grads[li].data[t];
      const double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-2});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace testutil
