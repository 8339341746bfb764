#include "gpt/gpd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "gpt/rng.hpp"

namespace gpt {

namespace {

void check_params(const GPParams& p) {
  if (!(p.sigma > 0.0)) throw std::domain_error("gp: sigma must be > 0");
  if (!(p.gamma > 0.0)) throw std::domain_error("gp: gamma must be > 0");
}

void check_excess(double z) {
  if (!(z >= 0.0)) throw std::domain_error("gp: excess must be >= 0");
}

// Objective for the optimizer: F = -(mean log-likelihood) over the span,
// with gradient in (log sigma, gamma) coordinates. One log1p per point;
// the gradient shares it with the value.
struct Eval {
  double f = 0.0;
  double g_logsigma = 0.0;
  double g_gamma = 0.0;
};

Eval eval_objective(std::span<const double> z, double log_sigma,
                    double gamma) {
  const double inv_sigma = std::exp(-log_sigma);
  const double a = 1.0 + 1.0 / gamma;
  const double inv_g2 = 1.0 / (gamma * gamma);
  double sum_f = 0.0, sum_gs = 0.0, sum_gg = 0.0;
  for (double v : z) {
    const double r = v * inv_sigma;
    const double u = gamma * r;
    const double L = std::log1p(u);
    const double w = u / (1.0 + u);
    sum_f += a * L;
    sum_gs += a * w;
    sum_gg += -L * inv_g2 + a * r / (1.0 + u);
  }
  const double inv_n = 1.0 / static_cast<double>(z.size());
  Eval e;
  e.f = log_sigma + sum_f * inv_n;
  e.g_logsigma = 1.0 - sum_gs * inv_n;
  e.g_gamma = sum_gg * inv_n;
  return e;
}

struct Box2 {
  double lo0, hi0;  // log sigma
  double lo1, hi1;  // gamma
};

struct OptResult {
  double x0 = 0.0, x1 = 0.0;
  double f = 0.0;
  bool converged = false;
  int iterations = 0;
};

double clampd(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

// Projected gradient descent on F with backtracking line search; the trial
// step is the safeguarded Barzilai-Borwein length from the previous pair.
// Stops when the unit-step projected gradient sup-norm falls below tol.
OptResult minimize_box(std::span<const double> z, const Box2& box, double x0,
                       double x1, double tol, int max_iter) {
  OptResult res;
  double cx0 = clampd(x0, box.lo0, box.hi0);
  double cx1 = clampd(x1, box.lo1, box.hi1);
  Eval e = eval_objective(z, cx0, cx1);
  double alpha = 1.0 / std::max(1.0, std::max(std::fabs(e.g_logsigma),
                                              std::fabs(e.g_gamma)));
  int it = 0;
  for (; it < max_iter; ++it) {
    const double pg0 = cx0 - clampd(cx0 - e.g_logsigma, box.lo0, box.hi0);
    const double pg1 = cx1 - clampd(cx1 - e.g_gamma, box.lo1, box.hi1);
    // tolerance relative to the likelihood scale: the mean log-likelihood
    // carries O(|f| eps) float noise, which bounds the attainable gradient
    const double tol_eff = tol * std::max(1.0, std::fabs(e.f));
    if (std::max(std::fabs(pg0), std::fabs(pg1)) <= tol_eff) {
      res.converged = true;
      break;
    }
    double a = alpha;
    bool accepted = false;
    Eval et;
    double t0 = cx0, t1 = cx1;
    for (int ls = 0; ls < 60; ++ls) {
      t0 = clampd(cx0 - a * e.g_logsigma, box.lo0, box.hi0);
      t1 = clampd(cx1 - a * e.g_gamma, box.lo1, box.hi1);
      if (t0 == cx0 && t1 == cx1) break;  // pinned on the boundary
      et = eval_objective(z, t0, t1);
      const double decrease =
          e.g_logsigma * (t0 - cx0) + e.g_gamma * (t1 - cx1);
      if (std::isfinite(et.f) && et.f <= e.f + 1e-4 * decrease) {
        accepted = true;
        break;
      }
      a *= 0.5;
    }
    if (!accepted) break;  // at numerical resolution along this direction
    const double s0 = t0 - cx0, s1 = t1 - cx1;
    const double y0 = et.g_logsigma - e.g_logsigma;
    const double y1 = et.g_gamma - e.g_gamma;
    const double sy = s0 * y0 + s1 * y1;
    alpha = sy > 1e-300 ? clampd((s0 * s0 + s1 * s1) / sy, 1e-10, 1e10)
                        : a * 2.0;
    cx0 = t0;
    cx1 = t1;
    e = et;
  }
  res.x0 = cx0;
  res.x1 = cx1;
  res.f = e.f;
  res.iterations = it;
  return res;
}

void validate_config(const FitConfig& cfg) {
  if (!(cfg.gamma_min > 0.0) || !(cfg.gamma_max > cfg.gamma_min))
    throw std::invalid_argument("gp_fit: invalid gamma box");
  if (cfg.sigma_min > 0.0 && !(cfg.sigma_max > cfg.sigma_min))
    throw std::invalid_argument("gp_fit: invalid sigma box");
  if (cfg.max_iter < 1 || cfg.n_starts < 1)
    throw std::invalid_argument("gp_fit: max_iter and n_starts must be >= 1");
}

}  // namespace

double gp_loglik(double z, const GPParams& p) {
  check_excess(z);
  check_params(p);
  return -std::log(p.sigma) -
         (1.0 / p.gamma + 1.0) * std::log1p(p.gamma * z / p.sigma);
}

GPGradient gp_gradient(double z, const GPParams& p) {
  check_excess(z);
  check_params(p);
  const double r = z / p.sigma;
  const double u = p.gamma * r;
  const double a = 1.0 + 1.0 / p.gamma;
  GPGradient g;
  g.d_sigma = (-1.0 + a * u / (1.0 + u)) / p.sigma;
  // d/dgamma of -(1/gamma + 1) log(1 + gamma z / sigma): the score has
  // mean zero under the model (E log(1+Z/sigma*gamma) = gamma at theta).
  g.d_gamma = std::log1p(u) / (p.gamma * p.gamma) - a * r / (1.0 + u);
  return g;
}

double gp_survival(double z, const GPParams& p) {
  check_excess(z);
  check_params(p);
  return std::exp(-std::log1p(p.gamma * z / p.sigma) / p.gamma);
}

double gp_quantile(double q, const GPParams& p) {
  check_params(p);
  if (!(q > 0.0) || !(q < 1.0))
    throw std::domain_error("gp_quantile: q must lie in (0,1)");
  return p.sigma * std::expm1(-p.gamma * std::log1p(-q)) / p.gamma;
}

std::optional<double> gp_theoretical_mean(const GPParams& p) {
  check_params(p);
  if (p.gamma >= 1.0) return std::nullopt;
  return p.sigma / (1.0 - p.gamma);
}

double gp_theoretical_median(const GPParams& p) { return gp_quantile(0.5, p); }

ExcessSample gp_sample(std::size_t n, const GPParams& p, std::uint64_t seed) {
  check_params(p);
  if (n < 1) throw std::invalid_argument("gp_sample: n must be >= 1");
  CounterRng rng(seed);
  ExcessSample s;
  s.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    // U is the survival probability of the draw.
    const double u = rng.next_unit();
    s.values[i] = p.sigma * std::expm1(-p.gamma * std::log(u)) / p.gamma;
  }
  return s;
}

FitResult gp_fit(const ExcessSample& s, const FitConfig& cfg) {
  validate_config(cfg);
  if (s.values.empty())
    throw InsufficientDataError("gp_fit: empty excess sample");
  double max_z = 0.0;
  for (double v : s.values) {
    check_excess(v);
    max_z = std::max(max_z, v);
  }
  if (max_z == 0.0)
    throw DegenerateSampleError("gp_fit: all excesses are zero");

  // Standardize by the positive median: the optimizer then sees identical
  // floats when the data are rescaled by a power of two, which makes the
  // fitted sigma exactly scale-equivariant.
  const double scale = detail::sample_scale(s.values);
  std::vector<double> w(s.values);
  for (double& v : w) v /= scale;

  double wlo, whi;
  if (cfg.sigma_min > 0.0) {
    wlo = cfg.sigma_min / scale;
    whi = cfg.sigma_max / scale;
  } else {
    wlo = 1e-8;
    whi = 1e8;
  }
  const Box2 box{std::log(wlo), std::log(whi), cfg.gamma_min, cfg.gamma_max};

  // Moment-style start plus fixed grid starts around the unit data scale.
  double mean = 0.0;
  for (double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  double var = 0.0;
  for (double v : w) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size());
  double g0 = var > 0.0 ? 0.5 * (1.0 - mean * mean / var) : cfg.gamma_min;
  g0 = clampd(g0, cfg.gamma_min, cfg.gamma_max);
  const double s0 = clampd(mean * std::max(1.0 - g0, 0.1), wlo, whi);

  const double starts[5][2] = {{s0, g0},
                               {clampd(0.5, wlo, whi), clampd(0.5, cfg.gamma_min, cfg.gamma_max)},
                               {clampd(2.0, wlo, whi), clampd(0.5, cfg.gamma_min, cfg.gamma_max)},
                               {clampd(0.5, wlo, whi), clampd(1.5, cfg.gamma_min, cfg.gamma_max)},
                               {clampd(2.0, wlo, whi), clampd(1.5, cfg.gamma_min, cfg.gamma_max)}};
  const int n_starts = std::min(cfg.n_starts, 5);

  OptResult best;
  best.f = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n_starts; ++i) {
    OptResult r = minimize_box(w, box, std::log(starts[i][0]), starts[i][1],
                               cfg.grad_tol, cfg.max_iter);
    if (r.f < best.f) best = r;
  }

  FitResult out;
  const double slo = cfg.sigma_min > 0.0 ? cfg.sigma_min : wlo * scale;
  const double shi = cfg.sigma_min > 0.0 ? cfg.sigma_max : whi * scale;
  out.params.sigma = clampd(std::exp(best.x0) * scale, slo, shi);
  out.params.gamma = best.x1;
  out.converged = best.converged;
  out.iterations = best.iterations;
  // Report the likelihood in original units, summed directly over the
  // sample so that callers comparing against independent refits see
  // bit-identical values.
  out.loglik = detail::sum_loglik(s.values, out.params);
  return out;
}

namespace detail {

double sum_loglik(std::span<const double> z, const GPParams& p) {
  const double log_sigma = std::log(p.sigma);
  const double a = 1.0 / p.gamma + 1.0;
  double acc = 0.0;
  for (double v : z) acc += -log_sigma - a * std::log1p(p.gamma * v / p.sigma);
  return acc;
}

double sample_scale(std::span<const double> z) {
  std::vector<double> pos;
  pos.reserve(z.size());
  for (double v : z)
    if (v > 0.0) pos.push_back(v);
  if (pos.empty()) return 1.0;
  const std::size_t n = pos.size();
  const std::size_t mid = n / 2;
  std::nth_element(pos.begin(), pos.begin() + mid, pos.end());
  double med = pos[mid];
  if (n % 2 == 0) {
    std::nth_element(pos.begin(), pos.begin() + (mid - 1), pos.begin() + mid);
    med = 0.5 * (med + pos[mid - 1]);
  }
  return med;
}

void sigma_box(std::span<const double> z, const FitConfig& cfg, double* lo,
               double* hi) {
  if (cfg.sigma_min > 0.0) {
    *lo = cfg.sigma_min;
    *hi = cfg.sigma_max;
  } else {
    const double s = sample_scale(z);
    *lo = 1e-8 * s;
    *hi = 1e8 * s;
  }
}

bool gp_fit_scan(std::span<const double> z, const FitConfig& cfg,
                 const GPParams& start, double sigma_lo, double sigma_hi,
                 FitResult* out) {
  double max_z = 0.0;
  for (double v : z) max_z = std::max(max_z, v);
  if (max_z == 0.0) return false;
  const Box2 box{std::log(sigma_lo), std::log(sigma_hi), cfg.gamma_min,
                 cfg.gamma_max};
  OptResult r = minimize_box(z, box, std::log(start.sigma), start.gamma,
                             1e-5, 40);
  out->params.sigma = std::exp(r.x0);
  out->params.gamma = r.x1;
  out->loglik = -r.f * static_cast<double>(z.size());
  out->converged = r.converged;
  out->iterations = r.iterations;
  return true;
}

}  // namespace detail

}  // namespace gpt
