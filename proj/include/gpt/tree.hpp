#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "gpt/dataset.hpp"
#include "gpt/gpd.hpp"

namespace gpt {

enum class SplitKind : std::uint8_t { numeric, categorical };

/// Binary decision at an internal node. Numeric rules send x <= threshold
/// left; categorical rules send codes in left_levels left. Query codes not
/// present in the training levels are routed to the side that received
/// more training rows (majority_left).
struct SplitRule {
  std::int32_t column = -1;
  SplitKind kind = SplitKind::numeric;
  double threshold = 0.0;
  std::vector<std::int32_t> left_levels;  // sorted
  bool majority_left = true;
};

enum class FitStatus : std::uint8_t { ok, max_iter, degenerate };

struct TreeNode {
  std::unique_ptr<TreeNode> left;
  std::unique_ptr<TreeNode> right;
  SplitRule rule;  // meaningful only on internal nodes

  // Pooled fit on this node's rows; kept on internal nodes too so pruning
  // can collapse them without refitting.
  GPParams params;
  double loglik = 0.0;  // sum of gp_loglik over the node's rows
  std::uint32_t n_obs = 0;
  std::int32_t id = -1;
  FitStatus status = FitStatus::ok;

  bool is_leaf() const { return left == nullptr; }
};

struct GrowConfig {
  std::size_t min_leaf_size = 20;  // >= 4 (twice the GP parameter count)
  std::size_t max_leaves = 0;      // 0 = uncapped
  FitConfig fit;
  double threshold_u = 0.0;
};

struct Tree {
  std::unique_ptr<TreeNode> root;
  double threshold_u = 0.0;
  std::size_t k_n = 0;  // excesses the tree was fitted on
  std::vector<ColumnSchema> schema;
  GrowConfig config;

  std::size_t n_leaves() const;
  Tree clone() const;
};

struct BestSplit {
  SplitRule rule;
  double gain = 0.0;  // canonical child likelihoods minus parent likelihood
  FitResult left_fit;
  FitResult right_fit;
};

/// Candidate-split evaluation: canonical gp_fit log-likelihood of the left
/// child plus the right child under `rule`. Empty when either child falls
/// below min_leaf_size or fits degenerately (all-zero excesses).
std::optional<double> evaluate_split(const Dataset& d,
                                     const std::vector<std::uint32_t>& rows,
                                     const SplitRule& rule,
                                     const GrowConfig& cfg);

/// Best rule over every covariate and candidate cut, by the sum of child
/// log-likelihoods; empty when no feasible candidate exists. parent is the
/// node's own pooled fit (scan warm start and gain baseline).
std::optional<BestSplit> best_split(const Dataset& d,
                                    const std::vector<std::uint32_t>& rows,
                                    const GrowConfig& cfg,
                                    const FitResult& parent);

/// Serial reference of best_split; bit-identical results.
std::optional<BestSplit> best_split_serial(
    const Dataset& d, const std::vector<std::uint32_t>& rows,
    const GrowConfig& cfg, const FitResult& parent);

/// Recursive growing of the maximal tree over the excesses of d above
/// cfg.threshold_u. Breadth-first; stops on min_leaf_size, max_leaves, or
/// nodes whose rows share identical covariates.
Tree grow(const Dataset& d, const GrowConfig& cfg);
Tree grow_serial(const Dataset& d, const GrowConfig& cfg);

/// Row view into a dataset with the tree's training schema.
GPParams predict(const Tree& t, const Dataset& d, std::size_t row);
const TreeNode& predict_leaf(const Tree& t, const Dataset& d, std::size_t row);

/// Fast path for a single numeric covariate (simulation study).
GPParams predict_1d(const Tree& t, double x);

void collect_leaves(const TreeNode& n, std::vector<const TreeNode*>* out);

}  // namespace gpt
