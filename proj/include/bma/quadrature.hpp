#pragma once

// Globally adaptive Gauss-Kronrod (7/15) quadrature and its tensor nesting
// over the unit cube.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace bma {

struct QuadResult {
  double value = 0.0;
  double error = 0.0;
  long evaluations = 0;
};

namespace detail {

inline constexpr std::array<double, 8> kKronrodX = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kKronrodW = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
// Gauss weights for the odd Kronrod nodes (x[1], x[3], x[5], x[7]).
inline constexpr std::array<double, 4> kGaussW = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Interval {
  double a, b, value, error;
  bool operator<(const Interval& o) const { return error < o.error; }
};

}  // namespace detail

/// Single 15-point Kronrod rule on [a, b]; the error is |K15 - G7|.
template <class F>
QuadResult gk15(F&& f, double a, double b) {
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  const double fc = f(c);
  double kron = fc * detail::kKronrodW[7];
  double gauss = fc * detail::kGaussW[3];
  for (int j = 0; j < 7; ++j) {
    const double dx = h * detail::kKronrodX[static_cast<std::size_t>(j)];
    const double s = f(c - dx) + f(c + dx);
    kron += detail::kKronrodW[static_cast<std::size_t>(j)] * s;
    if (j % 2 == 1) gauss += detail::kGaussW[static_cast<std::size_t>(j / 2)] * s;
  }
  return {kron * h, std::abs((kron - gauss) * h), 15};
}

/// Bisects the interval with the largest error estimate until the total
/// error is below max(abs_tol, rel_tol * |I|) or max_intervals is reached.
/// Starting from `initial` equal pieces guards against peaks that fall
/// between the nodes of a single rule.
template <class F>
QuadResult integrate_adaptive(F&& f, double a, double b, double rel_tol, double abs_tol = 0.0,
                              int max_intervals = 400, int initial = 1) {
  std::vector<detail::Interval> heap;
  QuadResult total;
  for (int i = 0; i < initial; ++i) {
    const double lo = a + (b - a) * i / initial;
    const double hi = i + 1 == initial ? b : a + (b - a) * (i + 1) / initial;
    const auto r = gk15(f, lo, hi);
    heap.push_back({lo, hi, r.value, r.error});
    total.value += r.value;
    total.error += r.error;
    total.evaluations += 15;
  }
  std::make_heap(heap.begin(), heap.end());
  while (static_cast<int>(heap.size()) < max_intervals &&
         total.error > std::max(abs_tol, rel_tol * std::abs(total.value))) {
    std::pop_heap(heap.begin(), heap.end());
    const auto worst = heap.back();
    heap.pop_back();
    const double mid = 0.5 * (worst.a + worst.b);
    if (mid <= worst.a || mid >= worst.b) {  // no longer divisible
      heap.push_back(worst);
      break;
    }
    const auto left = gk15(f, worst.a, mid);
    const auto right = gk15(f, mid, worst.b);
    heap.push_back({worst.a, mid, left.value, left.error});
    std::push_heap(heap.begin(), heap.end());
    heap.push_back({mid, worst.b, right.value, right.error});
    std::push_heap(heap.begin(), heap.end());
    total.evaluations += 30;
    // Re-sum rather than update incrementally so cancellation does not accumulate.
    total.value = 0.0;
    total.error = 0.0;
    for (const auto& iv : heap) {
      total.value += iv.value;
      total.error += iv.error;
    }
  }
  return total;
}

/// Nested adaptive integration of f over [0,1]^dim. f receives the point as
/// a span; dim == 0 returns f at the empty point. Every level stops at
/// max(abs_tol, rel_tol * |I|), so inner integrals over negligible regions
/// terminate early when abs_tol is set relative to the full integral.
template <class F>
QuadResult integrate_cube(F&& f, int dim, double rel_tol, double abs_tol = 0.0, int initial = 4) {
  std::vector<double> x(static_cast<std::size_t>(dim), 0.5);
  long evals = 0;
  std::function<QuadResult(int)> level = [&](int k) -> QuadResult {
    if (k == dim) {
      ++evals;
      return {f(std::span<const double>(x)), 0.0, 1};
    }
    double inner_err = 0.0;
    auto g = [&](double t) {
      x[static_cast<std::size_t>(k)] = t;
      const auto r = level(k + 1);
      inner_err = std::max(inner_err, r.error);
      return r.value;
    };
    auto r = integrate_adaptive(g, 0.0, 1.0, rel_tol, abs_tol, 400, initial);
    r.error += inner_err;
    return r;
  };
  auto r = level(0);
  r.evaluations = evals;
  return r;
}

}  // namespace bma
