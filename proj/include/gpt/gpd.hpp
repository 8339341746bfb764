#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "gpt/errors.hpp"

namespace gpt {

/// Generalized Pareto parameters. Only the heavy-tailed branch of the
/// family is modelled: sigma > 0 and gamma > 0.
struct GPParams {
  double sigma = 1.0;
  double gamma = 1.0;
};

/// Box constraints and stopping rules for the likelihood optimizer.
///
/// A non-positive sigma bound means "derive from the sample scale":
/// [1e-8 * s, 1e8 * s] with s the median of the positive excesses (or 1
/// when there is none). gamma_min must stay strictly positive; gamma = 0
/// is outside the modelled family.
struct FitConfig {
  double sigma_min = 0.0;
  double sigma_max = 0.0;
  double gamma_min = 0.05;
  double gamma_max = 5.0;
  double grad_tol = 1e-8;  // projected-gradient sup-norm, relative to the
                           // mean log-likelihood scale
  int max_iter = 500;
  int n_starts = 5;
};

/// Excesses z_i = y_i - u of the observations above the threshold u.
struct ExcessSample {
  std::vector<double> values;
  double threshold_u = 0.0;
};

struct FitResult {
  GPParams params;
  double loglik = 0.0;  // sum of gp_loglik over the sample at params
  bool converged = true;
  int iterations = 0;
};

struct GPGradient {
  double d_sigma = 0.0;
  double d_gamma = 0.0;
};

/// GP log-density of an excess: -log(sigma) - (1/gamma + 1) log(1 + gamma z / sigma).
/// Throws std::domain_error for z < 0 or parameters outside the family.
double gp_loglik(double z, const GPParams& p);

/// Analytic gradient of gp_loglik with respect to (sigma, gamma).
GPGradient gp_gradient(double z, const GPParams& p);

/// Survival function (1 + gamma z / sigma)^(-1/gamma), in (0, 1].
double gp_survival(double z, const GPParams& p);

/// Inverse of 1 - gp_survival on q in (0,1). gp_quantile(0.5, p) is the
/// theoretical median sigma (2^gamma - 1) / gamma.
double gp_quantile(double q, const GPParams& p);

/// Theoretical mean sigma / (1 - gamma) for gamma < 1; an empty optional
/// marks the infinite-mean regime gamma >= 1.
std::optional<double> gp_theoretical_mean(const GPParams& p);

double gp_theoretical_median(const GPParams& p);

/// Inverse-transform sampling, deterministic per seed.
ExcessSample gp_sample(std::size_t n, const GPParams& p, std::uint64_t seed);

/// Constrained maximum-likelihood fit by multistart projected gradient
/// ascent on the box. Throws DegenerateSampleError when every excess is
/// zero; reports non-convergence through FitResult::converged instead of
/// failing.
FitResult gp_fit(const ExcessSample& s, const FitConfig& cfg);

namespace detail {

/// Sum of gp_loglik over a span, left to right.
double sum_loglik(std::span<const double> z, const GPParams& p);

/// Median of the positive values; 1 when there is none.
double sample_scale(std::span<const double> z);

/// Effective sigma box for a sample under cfg (resolves the auto scale).
void sigma_box(std::span<const double> z, const FitConfig& cfg, double* lo,
               double* hi);

/// Cheap single-start fit used by the split scan to rank candidate cuts.
/// Runs the same projected-gradient ascent from `start` with a loose
/// tolerance; values are for ranking only, canonical refits come from
/// gp_fit. Returns false (and leaves out untouched) for an all-zero span.
bool gp_fit_scan(std::span<const double> z, const FitConfig& cfg,
                 const GPParams& start, double sigma_lo, double sigma_hi,
                 FitResult* out);

}  // namespace detail

}  // namespace gpt
