#include "gpt/sim.hpp"

#include <cmath>
#include <stdexcept>

#include "gpt/gpd.hpp"
#include "gpt/rng.hpp"

namespace gpt {

namespace {

void check_unit_interval(double x) {
  if (!(x >= 0.0) || !(x <= 1.0))
    throw std::domain_error("gamma0: x must lie in [0,1]");
}

MseReport run_impl(const SimDesign& design, const GrowConfig& grow_cfg,
                   const PenaltyGrid& grid, bool parallel) {
  if (design.n < 1 || design.n_replications < 1)
    throw std::invalid_argument("run_experiment: empty design");
  MseReport report;
  report.design_id = design.id();
  report.n = design.n;
  report.k_n = static_cast<std::size_t>(
      std::lround(static_cast<double>(design.n) * (1.0 - design.quantile_q)));
  if (report.k_n < 1)
    throw std::invalid_argument("run_experiment: expected k_n below 1");
  report.replications.resize(design.n_replications);

  const auto gamma0 = [&](double x) { return design.gamma0_at(x); };

  const auto run_one = [&](std::size_t r) {
    ReplicationRecord& rec = report.replications[r];
    rec.replication = r;
    try {
      const std::uint64_t seed_r = design.base_seed + r;
      const Dataset data = burr_sample(design.n, design, seed_r);
      PenaltyGrid rep_grid = grid;
      // Resampling substream of this replication; independent of the
      // simulation stream by construction.
      if (std::holds_alternative<KFoldSel>(rep_grid.selection))
        std::get<KFoldSel>(rep_grid.selection).seed = seed_r;
      else
        std::get<TestSampleSel>(rep_grid.selection).seed = seed_r;
      LambdaChoice choice =
          select_lambda(data, grow_cfg, rep_grid, design.quantile_q);
      rec.k_n = choice.tree.k_n;
      rec.mse = integrated_mse(choice.tree, gamma0);
      rec.n_leaves = choice.tree.n_leaves();
      rec.lambda = choice.lambda;
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.error = e.what();
    }
  };

  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t r = 0;
         r < static_cast<std::ptrdiff_t>(design.n_replications); ++r)
      run_one(static_cast<std::size_t>(r));
  } else {
    for (std::size_t r = 0; r < design.n_replications; ++r) run_one(r);
  }

  // Kahan-compensated mean in replication order.
  double sum = 0.0, comp = 0.0;
  std::size_t ok = 0;
  for (const ReplicationRecord& rec : report.replications) {
    if (rec.failed) {
      ++report.n_failed;
      continue;
    }
    ++ok;
    const double y = rec.mse - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  report.mean_mse = ok > 0 ? sum / static_cast<double>(ok) : 0.0;
  double ss = 0.0;
  for (const ReplicationRecord& rec : report.replications)
    if (!rec.failed)
      ss += (rec.mse - report.mean_mse) * (rec.mse - report.mean_mse);
  report.sd_mse = ok > 1 ? std::sqrt(ss / static_cast<double>(ok - 1)) : 0.0;
  return report;
}

}  // namespace

double gamma0_stepwise(double x) {
  check_unit_interval(x);
  if (x < 0.25) return 0.5;
  if (x < 0.75) return 1.0;
  return 1.5;
}

double gamma0_smooth(double x) {
  check_unit_interval(x);
  return 1.0 + std::tanh(10.0 * (x - 0.25)) / 4.0 +
         std::tanh(10.0 * (x - 0.75)) / 4.0;
}

double SimDesign::gamma0_at(double x) const {
  return gamma0 == Gamma0Design::stepwise ? gamma0_stepwise(x)
                                          : gamma0_smooth(x);
}

std::string SimDesign::id() const {
  return gamma0 == Gamma0Design::stepwise ? "step" : "smooth";
}

Dataset burr_sample(std::size_t n, const SimDesign& design,
                    std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("burr_sample: n must be >= 1");
  CounterRng rng(seed, /*stream=*/0);  // stream 0: simulation draws
  Dataset d;
  d.response.resize(n);
  NumericColumn x;
  x.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = rng.next_unit();
    const double u = rng.next_unit();
    x.values[i] = xi;
    d.response[i] =
        design.sigma_burr * std::pow(1.0 / u - 1.0, design.gamma0_at(xi));
  }
  Column col;
  col.name = "x";
  col.data = std::move(x);
  d.columns.push_back(std::move(col));
  return d;
}

double integrated_mse(const Tree& tree,
                      const std::function<double(double)>& gamma0,
                      std::size_t grid_size) {
  if (grid_size < 100)
    throw std::invalid_argument("integrated_mse: grid_size must be >= 100");
  const double h = 1.0 / static_cast<double>(grid_size);
  double acc = 0.0;
  for (std::size_t i = 0; i < grid_size; ++i) {
    const double x = (static_cast<double>(i) + 0.5) * h;
    const double diff = predict_1d(tree, x).gamma - gamma0(x);
    acc += diff * diff;
  }
  return acc * h;
}

MseReport run_experiment(const SimDesign& design, const GrowConfig& grow_cfg,
                         const PenaltyGrid& grid) {
  return run_impl(design, grow_cfg, grid, true);
}

MseReport run_experiment_serial(const SimDesign& design,
                                const GrowConfig& grow_cfg,
                                const PenaltyGrid& grid) {
  return run_impl(design, grow_cfg, grid, false);
}

}  // namespace gpt
