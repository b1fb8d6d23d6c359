// Independent reference implementations used only by tests. Nothing here
// calls the library routine it is used to check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <vector>

#include "thinner/thinner.hpp"

namespace oracle {

using thinner::Tensor;

inline Tensor random_tensor(thinner::Shape shape, thinner::Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor triple_loop_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a(i, p) * b(p, j);
      out(i, j) = s;
    }
  return out;
}

/// Direct definition of zero-padded cross-correlation.
inline Tensor nested_loop_conv(const Tensor& x, const Tensor& f, std::size_t stride,
                               std::size_t pad) {
  const std::size_t c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t c_out = f.dim(0), kh = f.dim(2), kw = f.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (w + 2 * pad - kw) / stride + 1;
  Tensor out({c_out, oh, ow});
  for (std::size_t o = 0; o < c_out; ++o)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double s = 0.0;
        for (std::size_t c = 0; c < c_in; ++c)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              const long y = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
              const long xx = static_cast<long>(ox * stride + j) - static_cast<long>(pad);
              if (y < 0 || xx < 0 || y >= static_cast<long>(h) || xx >= static_cast<long>(w))
                continue;
              s += x(c, y, xx) * f(o, c, i, j);
            }
        out(o, oy, ox) = s;
      }
  return out;
}

/// Central finite-difference gradient of f with respect to every entry of t.
inline Tensor central_difference(Tensor& t, const std::function<double()>& f,
                                 double eps = 1e-5) {
  Tensor g(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double saved = t[i];
    t[i] = saved + eps;
    const double up = f();
    t[i] = saved - eps;
    const double down = f();
    t[i] = saved;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

/// Largest |a - n| / max(|a|, |n|, floor) over all entries.
inline double max_relative_error(const Tensor& analytic, const Tensor& numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

struct TwoPass {
  std::vector<double> mean, variance;
};

/// Mean and population variance over stored per-sample rows.
inline TwoPass two_pass_stats(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size(), w = rows.front().size();
  TwoPass out{std::vector<double>(w, 0.0), std::vector<double>(w, 0.0)};
  for (const auto& r : rows)
    for (std::size_t i = 0; i < w; ++i) out.mean[i] += r[i];
  for (double& m : out.mean) m /= static_cast<double>(n);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < w; ++i) {
      const double d = r[i] - out.mean[i];
      out.variance[i] += d * d;
    }
  for (double& v : out.variance) v /= static_cast<double>(n);
  return out;
}

/// Exhaustive search over all k-subsets respecting per-layer floors;
/// returns the subset with the minimal sum of modified scores.
inline std::vector<thinner::NeuronId> brute_force_select(const thinner::ScoreTable& table,
                                                         std::size_t k, std::size_t floor) {
  const auto& e = table.entries;
  const std::size_t n = e.size();
  std::map<std::size_t, std::size_t> width;
  for (const auto& entry : e) ++width[entry.id.layer];
  double best = std::numeric_limits<double>::infinity();
  std::vector<thinner::NeuronId> best_set;
  for (unsigned long mask = 0; mask < (1ul << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcountl(mask)) != k) continue;
    std::map<std::size_t, std::size_t> removed;
    double sum = 0.0;
    std::vector<thinner::NeuronId> set;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(mask >> i & 1ul)) continue;
      ++removed[e[i].id.layer];
      sum += e[i].modified;
      set.push_back(e[i].id);
    }
    bool ok = true;
    for (const auto& [layer, r] : removed) ok = ok && width[layer] - r >= floor;
    if (ok && sum < best) {
      best = sum;
      std::sort(set.begin(), set.end());
      best_set = set;
    }
  }
  return best_set;
}

}  // namespace oracle
