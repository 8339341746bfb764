#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "gpt/tree.hpp"

namespace gpt {

/// Pruned-subtree sequence: subtrees[K-1] has exactly K leaves and
/// maximizes total log-likelihood among ALL rooted subtrees of that size
/// (exact, matches brute-force enumeration). collapse_order[j] is the id
/// of the internal node collapsed when moving from K_max - j leaves to
/// K_max - j - 1; a -1 entry marks a step where the size-(K-1) optimum is
/// not a single collapse of the size-K optimum, which happens exactly when
/// jumping structure is strictly better than any one collapse.
struct PruningPath {
  std::vector<Tree> subtrees;
  std::vector<double> logliks;  // total log-likelihood divided by k_n
  std::vector<std::int32_t> collapse_order;

  std::size_t k_max() const { return subtrees.size(); }
};

PruningPath prune_path(const Tree& t, std::size_t k_n);

/// Subtree maximizing logliks[K] - lambda * K; ties go to the smaller K.
const Tree& select_subtree_ref(const PruningPath& path, double lambda);
Tree select_subtree(const PruningPath& path, double lambda);

struct TestSampleSel {
  double fraction = 0.5;  // share of rows used for growing
  std::uint64_t seed = 0;
};

struct KFoldSel {
  std::size_t k = 5;
  std::uint64_t seed = 0;
};

struct PenaltyGrid {
  std::vector<double> lambdas;  // empty = critical values of the full path
                                // plus geometric midpoints
  std::variant<TestSampleSel, KFoldSel> selection = KFoldSel{};
};

struct LambdaChoice {
  double lambda = 0.0;
  Tree tree;  // grown on all data, pruned at lambda
  std::vector<double> grid;
  std::vector<double> scores;  // held-out normalized log-likelihood per grid entry
};

/// Penalty selection by held-out GP log-likelihood. When
/// threshold_quantile is set the threshold is recomputed on each training
/// part (and on the full data for the returned tree); otherwise
/// cfg.threshold_u is fixed and only exceedances enter the folds.
LambdaChoice select_lambda(const Dataset& d, const GrowConfig& cfg,
                           const PenaltyGrid& grid,
                           std::optional<double> threshold_quantile = {});

/// Critical penalty values of a path: upper-hull slopes of (K, loglik),
/// padded with geometric midpoints and endpoint guards.
std::vector<double> default_lambda_grid(const PruningPath& path);

}  // namespace gpt
