#pragma once

#include "das/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace das::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline std::vector<int> random_labels(std::size_t n, int classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, classes - 1);
  std::vector<int> out(n);
  for (int& y : out) y = u(rng);
  return out;
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

struct GradCheckResult {
  double worst = 0.0;
  std::string where;
};

/// Central differences (h = 1e-4) of the mean cross-entropy w.r.t. every
/// parameter entry and every input entry, against backward().
inline GradCheckResult grad_check(Network& net, const Tensor& batch, const std::vector<int>& labels,
                                  double h = 1e-4) {
  GradCheckResult r;
  Tensor logits = forward(net, batch);
  Gradients g = backward(net, logits, labels, true);
  auto loss_at = [&](const Tensor& x) { return cross_entropy(forward(net, x), labels); };
  auto params = net.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p].tensor;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + h;
      const double up = loss_at(batch);
      t[i] = saved - h;
      const double down = loss_at(batch);
      t[i] = saved;
      const double fd = (up - down) / (2 * h);
      const double e = relative_error(g.params[p][i], fd);
      if (e > r.worst) {
        r.worst = e;
        r.where = "param of node " + std::to_string(params[p].node_id) + " entry " + std::to_string(i);
      }
    }
  }
  Tensor x = batch;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss_at(x);
    x[i] = saved - h;
    const double down = loss_at(x);
    x[i] = saved;
    const double e = relative_error(g.input[i], (up - down) / (2 * h));
    if (e > r.worst) {
      r.worst = e;
      r.where = "input entry " + std::to_string(i);
    }
  }
  return r;
}

/// Index-by-index direct convolution, NCHW, zero padding.
inline Tensor direct_conv(const Conv2D& c, const Tensor& x) {
  const std::size_t n = x.extent(0), h = x.extent(2), w = x.extent(3);
  const std::size_t ho = (h + 2 * c.padding - c.kernel) / c.stride + 1;
  const std::size_t wo = (w + 2 * c.padding - c.kernel) / c.stride + 1;
  Tensor y({n, static_cast<std::size_t>(c.cout), ho, wo});
  auto at = [&](std::size_t s, int ch, long i, long j) -> double {
    if (i < 0 || j < 0 || i >= static_cast<long>(h) || j >= static_cast<long>(w)) return 0.0;
    return x[((s * c.cin + ch) * h + i) * w + j];
  };
  for (std::size_t s = 0; s < n; ++s)
    for (int o = 0; o < c.cout; ++o)
      for (std::size_t oi = 0; oi < ho; ++oi)
        for (std::size_t oj = 0; oj < wo; ++oj) {
          double acc = c.bias[o];
          for (int ch = 0; ch < c.cin; ++ch)
            for (int ki = 0; ki < c.kernel; ++ki)
              for (int kj = 0; kj < c.kernel; ++kj)
                acc += c.weight[((o * c.cin + ch) * c.kernel + ki) * c.kernel + kj] *
                       at(s, ch, static_cast<long>(oi * c.stride) - c.padding + ki,
                          static_cast<long>(oj * c.stride) - c.padding + kj);
          y[((s * c.cout + o) * ho + oi) * wo + oj] = acc;
        }
  return y;
}

}  // namespace das::testing
