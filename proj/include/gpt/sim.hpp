#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gpt/dataset.hpp"
#include "gpt/prune.hpp"
#include "gpt/tree.hpp"

namespace gpt {

enum class Gamma0Design : std::uint8_t { stepwise, smooth };

/// Tail-index function gamma_0 of the step-wise design: 0.5 on [0, 0.25),
/// 1 on [0.25, 0.75), 1.5 on [0.75, 1].
double gamma0_stepwise(double x);

/// Smooth design 1 + tanh(10(x - 1/4))/4 + tanh(10(x - 3/4))/4.
double gamma0_smooth(double x);

struct SimDesign {
  Gamma0Design gamma0 = Gamma0Design::stepwise;
  double sigma_burr = 1.0;
  std::size_t n = 1000;
  double quantile_q = 0.90;
  std::size_t n_replications = 200;
  std::uint64_t base_seed = 0;

  double gamma0_at(double x) const;
  std::string id() const;  // "step" or "smooth"
};

/// Burr sample with X ~ Uniform[0,1] and Y | X = x drawn by the inverse
/// transform y = sigma (1/U - 1)^{gamma_0(x)}. Deterministic per seed;
/// covariate column is named "x".
Dataset burr_sample(std::size_t n, const SimDesign& design,
                    std::uint64_t seed);

/// Midpoint-rule approximation of the integral over [0,1] of
/// (gamma_hat(x) - gamma_0(x))^2, with gamma_hat read off the tree.
double integrated_mse(const Tree& tree,
                      const std::function<double(double)>& gamma0,
                      std::size_t grid_size = 10000);

struct ReplicationRecord {
  std::size_t replication = 0;
  std::size_t k_n = 0;
  double mse = 0.0;
  std::size_t n_leaves = 0;
  double lambda = 0.0;
  bool failed = false;
  std::string error;
};

struct MseReport {
  std::string design_id;
  std::size_t n = 0;
  std::size_t k_n = 0;  // expected exceedance count n (1 - q)
  std::vector<ReplicationRecord> replications;
  double mean_mse = 0.0;
  double sd_mse = 0.0;
  std::size_t n_failed = 0;
};

/// One full pipeline run per replication: simulate, threshold at the
/// replication's empirical quantile, grow, prune at the CV-selected
/// penalty, and integrate the squared tail-index error. Replications run
/// on independent substreams; failures are recorded with a count, never
/// dropped silently. Aggregation is Kahan-compensated in replication
/// order, so results are identical for any thread count.
MseReport run_experiment(const SimDesign& design, const GrowConfig& grow_cfg,
                         const PenaltyGrid& grid);
MseReport run_experiment_serial(const SimDesign& design,
                                const GrowConfig& grow_cfg,
                                const PenaltyGrid& grid);

}  // namespace gpt
