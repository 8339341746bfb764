// Timings of the OpenMP kernels against their serial references: the
// candidate-split scan inside one node, a full grow, and a small
// replication batch of the simulation study.
#include <chrono>
#include <cstdio>
#include <numeric>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "gpt/gpd.hpp"
#include "gpt/rng.hpp"
#include "gpt/sim.hpp"
#include "gpt/tree.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

gpt::Dataset make_burr(std::size_t n, std::uint64_t seed) {
  gpt::SimDesign design;
  design.gamma0 = gpt::Gamma0Design::stepwise;
  return gpt::burr_sample(n, design, seed);
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("openmp: max_threads=%d\n", omp_get_max_threads());
#else
  std::printf("openmp: disabled\n");
#endif

  {
    const std::size_t n = 20000;
    const gpt::Dataset data = make_burr(n, 3);
    gpt::GrowConfig cfg;
    cfg.threshold_u = gpt::quantile_threshold(data, 0.90);
    const gpt::Dataset exc = gpt::pot_filter(data, cfg.threshold_u);
    std::vector<std::uint32_t> rows(exc.n_rows());
    std::iota(rows.begin(), rows.end(), 0u);
    gpt::ExcessSample s;
    s.values = exc.response;
    const gpt::FitResult parent = gpt::gp_fit(s, cfg.fit);

    auto t0 = Clock::now();
    const auto serial = gpt::best_split_serial(exc, rows, cfg, parent);
    const double ts = seconds_since(t0);
    t0 = Clock::now();
    const auto parallel = gpt::best_split(exc, rows, cfg, parent);
    const double tp = seconds_since(t0);
    const bool same = serial && parallel &&
                      serial->rule.threshold == parallel->rule.threshold &&
                      serial->gain == parallel->gain;
    std::printf("best_split  k_n=%zu  serial %.3fs  parallel %.3fs  speedup %.2fx  identical=%s\n",
                rows.size(), ts, tp, ts / tp, same ? "yes" : "NO");
  }

  {
    const std::size_t n = 10000;
    const gpt::Dataset data = make_burr(n, 4);
    gpt::GrowConfig cfg;
    cfg.threshold_u = gpt::quantile_threshold(data, 0.90);
    auto t0 = Clock::now();
    const gpt::Tree a = gpt::grow_serial(data, cfg);
    const double ts = seconds_since(t0);
    t0 = Clock::now();
    const gpt::Tree b = gpt::grow(data, cfg);
    const double tp = seconds_since(t0);
    std::printf("grow        k_n=%zu  serial %.3fs  parallel %.3fs  speedup %.2fx  leaves=%zu/%zu\n",
                a.k_n, ts, tp, ts / tp, a.n_leaves(), b.n_leaves());
  }

  {
    gpt::SimDesign design;
    design.n = 2500;
    design.n_replications = 8;
    design.base_seed = 1;
    gpt::GrowConfig cfg;
    gpt::PenaltyGrid grid;
    auto t0 = Clock::now();
    const gpt::MseReport a = gpt::run_experiment_serial(design, cfg, grid);
    const double ts = seconds_since(t0);
    t0 = Clock::now();
    const gpt::MseReport b = gpt::run_experiment(design, cfg, grid);
    const double tp = seconds_since(t0);
    std::printf("experiment  n=%zu x%zu reps  serial %.3fs  parallel %.3fs  speedup %.2fx  identical=%s\n",
                design.n, design.n_replications, ts, tp, ts / tp,
                a.mean_mse == b.mean_mse ? "yes" : "NO");
  }
  return 0;
}
