#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace semstab {

struct LbfgsParams {
  std::size_t memory = 10;
  std::size_t max_iterations = 1000;
  double gradient_tolerance = 1e-6;  // on the Euclidean norm of the gradient
  std::size_t max_line_search = 40;
  double c1 = 1e-4;  // sufficient decrease
  double c2 = 0.9;   // curvature
};

struct LbfgsResult {
  std::vector<double> x;
  double value = 0.0;
  double gradient_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::string status;
};

// Objective: returns f(x) and writes the gradient into `grad`.
using Objective = std::function<double(const std::vector<double>& x, std::vector<double>& grad)>;

namespace detail {

inline double dotv(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb), safeguarded
// into the interior of [a, b].
inline double interpolate(double a, double fa, double ga, double b, double fb, double gb) {
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - ga * gb;
  double t = 0.5 * (a + b);
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    const double denom = gb - ga + 2.0 * d2;
    if (denom != 0.0) t = b - (b - a) * (gb + d2 - d1) / denom;
  }
  const double lo = std::min(a, b), hi = std::max(a, b), width = hi - lo;
  if (!std::isfinite(t) || t < lo + 0.1 * width || t > hi - 0.1 * width) t = 0.5 * (a + b);
  return t;
}

}  // namespace detail

// Limited-memory BFGS with a strong-Wolfe line search (bracketing and zoom
// with cubic interpolation).
inline LbfgsResult minimize_lbfgs(const Objective& f, std::vector<double> x, const LbfgsParams& p = {}) {
  const std::size_t n = x.size();
  std::vector<double> g(n), d(n), x_new(n), g_new(n);
  double fx = f(x, g);
  std::deque<std::vector<double>> S, Y;
  std::deque<double> rho;

  LbfgsResult res;
  auto finish = [&](bool ok, const char* why) {
    res.x = x;
    res.value = fx;
    res.gradient_norm = std::sqrt(detail::dotv(g, g));
    res.converged = ok;
    res.status = why;
    return res;
  };
  if (!std::isfinite(fx)) return finish(false, "non-finite objective");

  for (std::size_t it = 0; it < p.max_iterations; ++it) {
    res.iterations = it;
    const double gnorm = std::sqrt(detail::dotv(g, g));
    if (gnorm <= p.gradient_tolerance) return finish(true, "gradient tolerance reached");

    // Two-loop recursion for d = -H g.
    d = g;
    std::vector<double> alpha(S.size());
    for (std::size_t i = S.size(); i-- > 0;) {
      alpha[i] = rho[i] * detail::dotv(S[i], d);
      for (std::size_t j = 0; j < n; ++j) d[j] -= alpha[i] * Y[i][j];
    }
    double gamma = 1.0;
    if (!S.empty()) gamma = detail::dotv(S.back(), Y.back()) / detail::dotv(Y.back(), Y.back());
    else gamma = 1.0 / std::max(1.0, gnorm);
    for (auto& v : d) v *= gamma;
    for (std::size_t i = 0; i < S.size(); ++i) {
      const double beta = rho[i] * detail::dotv(Y[i], d);
      for (std::size_t j = 0; j < n; ++j) d[j] += (alpha[i] - beta) * S[i][j];
    }
    for (auto& v : d) v = -v;
    double dg0 = detail::dotv(d, g);
    if (!(dg0 < 0.0)) {
      // Not a descent direction; restart from steepest descent.
      S.clear();
      Y.clear();
      rho.clear();
      for (std::size_t j = 0; j < n; ++j) d[j] = -g[j] / std::max(1.0, gnorm);
      dg0 = detail::dotv(d, g);
    }

    // Strong Wolfe line search.
    auto eval = [&](double t, double& ft, double& dgt) {
      for (std::size_t j = 0; j < n; ++j) x_new[j] = x[j] + t * d[j];
      ft = f(x_new, g_new);
      dgt = detail::dotv(g_new, d);
    };
    double t_prev = 0.0, f_prev = fx, dg_prev = dg0;
    double t = 1.0, ft = 0.0, dgt = 0.0;
    bool found = false;
    double lo = 0, flo = fx, dglo = dg0, hi = 0, fhi = 0, dghi = 0;
    bool zoom = false;
    for (std::size_t ls = 0; ls < p.max_line_search; ++ls) {
      eval(t, ft, dgt);
      if (!std::isfinite(ft) || ft > fx + p.c1 * t * dg0 || (ls > 0 && ft >= f_prev)) {
        lo = t_prev, flo = f_prev, dglo = dg_prev;
        hi = t, fhi = ft, dghi = dgt;
        zoom = true;
        break;
      }
      if (std::abs(dgt) <= -p.c2 * dg0) {
        found = true;
        break;
      }
      if (dgt >= 0.0) {
        lo = t, flo = ft, dglo = dgt;
        hi = t_prev, fhi = f_prev, dghi = dg_prev;
        zoom = true;
        break;
      }
      t_prev = t, f_prev = ft, dg_prev = dgt;
      t *= 2.0;
    }
    if (zoom) {
      for (std::size_t ls = 0; ls < p.max_line_search; ++ls) {
        t = std::isfinite(fhi) ? detail::interpolate(lo, flo, dglo, hi, fhi, dghi) : 0.5 * (lo + hi);
        eval(t, ft, dgt);
        if (!std::isfinite(ft) || ft > fx + p.c1 * t * dg0 || ft >= flo) {
          hi = t, fhi = ft, dghi = dgt;
        } else {
          if (std::abs(dgt) <= -p.c2 * dg0) {
            found = true;
            break;
          }
          if (dgt * (hi - lo) >= 0.0) hi = lo, fhi = flo, dghi = dglo;
          lo = t, flo = ft, dglo = dgt;
        }
        if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) break;
      }
      // Accept the best sufficient-decrease point even without curvature.
      if (!found && lo > 0.0 && flo < fx) {
        t = lo;
        eval(t, ft, dgt);
        found = true;
      }
    }
    if (!found) return finish(false, "line search failed");

    std::vector<double> s(n), y(n);
    for (std::size_t j = 0; j < n; ++j) {
      s[j] = x_new[j] - x[j];
      y[j] = g_new[j] - g[j];
    }
    const double sy = detail::dotv(s, y);
    x.swap(x_new);
    g.swap(g_new);
    const double f_old = fx;
    fx = ft;
    if (sy > 1e-12 * std::sqrt(detail::dotv(s, s) * detail::dotv(y, y))) {
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / sy);
      if (S.size() > p.memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    // No representable progress left.
    if (fx >= f_old) return finish(std::sqrt(detail::dotv(g, g)) <= p.gradient_tolerance, "no further progress");
  }
  res.iterations = p.max_iterations;
  return finish(std::sqrt(detail::dotv(g, g)) <= p.gradient_tolerance, "iteration limit");
}

}  // namespace semstab
