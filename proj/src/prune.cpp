#include "gpt/prune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "gpt/rng.hpp"

namespace gpt {

namespace {

// Bottom-up size-constrained optimum: best[v][j-1] is the maximal total
// log-likelihood of a rooted subtree of v with exactly j leaves, using the
// pooled node fits stored at growing time. Exact by construction, so the
// path matches brute-force enumeration on any input.
struct DpNode {
  const TreeNode* node = nullptr;
  std::size_t n_leaves = 0;
  std::vector<double> best;
  std::vector<std::size_t> left_alloc;  // winning left-child budget per j
  DpNode* left = nullptr;
  DpNode* right = nullptr;
};

DpNode* build_dp(const TreeNode& n, std::vector<std::unique_ptr<DpNode>>* pool) {
  pool->push_back(std::make_unique<DpNode>());
  DpNode* d = pool->back().get();
  d->node = &n;
  if (n.is_leaf()) {
    d->n_leaves = 1;
    d->best = {n.loglik};
    return d;
  }
  d->left = build_dp(*n.left, pool);
  d->right = build_dp(*n.right, pool);
  d->n_leaves = d->left->n_leaves + d->right->n_leaves;
  d->best.assign(d->n_leaves, -std::numeric_limits<double>::infinity());
  d->left_alloc.assign(d->n_leaves, 0);
  d->best[0] = n.loglik;  // collapse to a leaf with the pooled fit
  for (std::size_t j = 2; j <= d->n_leaves; ++j) {
    const std::size_t lo = j > d->right->n_leaves ? j - d->right->n_leaves : 1;
    const std::size_t hi = std::min(d->left->n_leaves, j - 1);
    for (std::size_t j1 = lo; j1 <= hi; ++j1) {
      const double v = d->left->best[j1 - 1] + d->right->best[j - j1 - 1];
      if (v > d->best[j - 1]) {
        d->best[j - 1] = v;
        d->left_alloc[j - 1] = j1;
      }
    }
  }
  return d;
}

std::unique_ptr<TreeNode> materialize(const DpNode& d, std::size_t j) {
  auto out = std::make_unique<TreeNode>();
  const TreeNode& n = *d.node;
  out->params = n.params;
  out->loglik = n.loglik;
  out->n_obs = n.n_obs;
  out->id = n.id;
  out->status = n.status;
  if (j == 1) return out;  // collapsed: pooled fit becomes the leaf
  out->rule = n.rule;
  const std::size_t j1 = d.left_alloc[j - 1];
  out->left = materialize(*d.left, j1);
  out->right = materialize(*d.right, j - j1);
  return out;
}

void collect_internal(const TreeNode& n,
                      std::map<std::int32_t, const TreeNode*>* out) {
  if (n.is_leaf()) return;
  (*out)[n.id] = &n;
  collect_internal(*n.left, out);
  collect_internal(*n.right, out);
}

std::set<std::int32_t> leaf_ids(const TreeNode& root) {
  std::vector<const TreeNode*> leaves;
  collect_leaves(root, &leaves);
  std::set<std::int32_t> ids;
  for (const TreeNode* l : leaves) ids.insert(l->id);
  return ids;
}

// Identifies the single internal node collapsed between consecutive path
// entries; -1 when the two trees do not differ by exactly one collapse.
std::int32_t collapsed_between(const Tree& larger, const Tree& smaller) {
  const std::set<std::int32_t> big = leaf_ids(*larger.root);
  const std::set<std::int32_t> small = leaf_ids(*smaller.root);
  std::vector<std::int32_t> gained;  // leaves of small not leaves of big
  for (std::int32_t id : small)
    if (!big.count(id)) gained.push_back(id);
  if (gained.size() != 1) return -1;
  std::map<std::int32_t, const TreeNode*> internals;
  collect_internal(*larger.root, &internals);
  auto it = internals.find(gained.front());
  if (it == internals.end()) return -1;
  const TreeNode* w = it->second;
  if (!w->left->is_leaf() || !w->right->is_leaf()) return -1;
  // every other leaf must carry over
  for (std::int32_t id : big)
    if (id != w->left->id && id != w->right->id && !small.count(id)) return -1;
  return w->id;
}

Dataset subset_rows(const Dataset& d, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.response.reserve(rows.size());
  for (std::size_t r : rows) out.response.push_back(d.response[r]);
  for (const Column& c : d.columns) {
    Column nc;
    nc.name = c.name;
    if (c.is_numeric()) {
      NumericColumn num;
      num.values.reserve(rows.size());
      for (std::size_t r : rows) num.values.push_back(c.numeric().values[r]);
      nc.data = std::move(num);
    } else {
      CategoricalColumn cat;
      cat.levels = c.categorical().levels;
      cat.codes.reserve(rows.size());
      for (std::size_t r : rows) cat.codes.push_back(c.categorical().codes[r]);
      nc.data = std::move(cat);
    }
    out.columns.push_back(std::move(nc));
  }
  return out;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  CounterRng rng(seed, /*stream=*/1);  // stream 1: resampling draws
  for (std::size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[rng.next_below(i)]);
  return idx;
}

// Held-out total log-likelihood of the exceedances of `test` above u under
// the pruned tree's leaf parameters, rows routed by predict.
double heldout_loglik(const Tree& tree, const Dataset& test, double u,
                      std::size_t* n_excess) {
  double acc = 0.0;
  for (std::size_t r = 0; r < test.n_rows(); ++r) {
    if (!(test.response[r] > u)) continue;
    const GPParams p = predict(tree, test, r);
    acc += gp_loglik(test.response[r] - u, p);
    ++*n_excess;
  }
  return acc;
}

}  // namespace

PruningPath prune_path(const Tree& t, std::size_t k_n) {
  if (!t.root) throw std::invalid_argument("prune_path: empty tree");
  if (k_n == 0) throw std::invalid_argument("prune_path: k_n must be >= 1");
  std::vector<std::unique_ptr<DpNode>> pool;
  DpNode* root = build_dp(*t.root, &pool);

  PruningPath path;
  path.subtrees.reserve(root->n_leaves);
  path.logliks.reserve(root->n_leaves);
  for (std::size_t K = 1; K <= root->n_leaves; ++K) {
    Tree sub;
    sub.root = materialize(*root, K);
    sub.threshold_u = t.threshold_u;
    sub.k_n = t.k_n;
    sub.schema = t.schema;
    sub.config = t.config;
    path.logliks.push_back(root->best[K - 1] / static_cast<double>(k_n));
    path.subtrees.push_back(std::move(sub));
  }
  for (std::size_t K = root->n_leaves; K >= 2; --K)
    path.collapse_order.push_back(
        collapsed_between(path.subtrees[K - 1], path.subtrees[K - 2]));
  return path;
}

const Tree& select_subtree_ref(const PruningPath& path, double lambda) {
  if (path.subtrees.empty())
    throw std::invalid_argument("select_subtree: empty path");
  std::size_t best_k = 1;
  double best = path.logliks[0] - lambda;
  for (std::size_t K = 2; K <= path.subtrees.size(); ++K) {
    const double v = path.logliks[K - 1] - lambda * static_cast<double>(K);
    if (v > best) {  // ties keep the smaller K
      best = v;
      best_k = K;
    }
  }
  return path.subtrees[best_k - 1];
}

Tree select_subtree(const PruningPath& path, double lambda) {
  return select_subtree_ref(path, lambda).clone();
}

std::vector<double> default_lambda_grid(const PruningPath& path) {
  const std::size_t n = path.subtrees.size();
  // Upper concave hull of (K, loglik); its slopes are the penalty values
  // where the selected K changes.
  std::vector<std::pair<double, double>> hull;  // (K, loglik)
  for (std::size_t K = 1; K <= n; ++K) {
    const std::pair<double, double> p{static_cast<double>(K),
                                      path.logliks[K - 1]};
    while (hull.size() >= 2) {
      const auto& a = hull[hull.size() - 2];
      const auto& b = hull[hull.size() - 1];
      if ((b.second - a.second) * (p.first - a.first) <=
          (p.second - a.second) * (b.first - a.first))
        hull.pop_back();
      else
        break;
    }
    hull.push_back(p);
  }
  std::vector<double> slopes;
  for (std::size_t i = 1; i < hull.size(); ++i) {
    const double s = (hull[i].second - hull[i - 1].second) /
                     (hull[i].first - hull[i - 1].first);
    if (s > 0.0) slopes.push_back(s);
  }
  if (slopes.empty()) return {1.0};
  std::sort(slopes.begin(), slopes.end());
  slopes.erase(std::unique(slopes.begin(), slopes.end()), slopes.end());

  std::vector<double> grid;
  grid.push_back(0.5 * slopes.front());
  for (std::size_t i = 0; i < slopes.size(); ++i) {
    grid.push_back(slopes[i]);
    if (i + 1 < slopes.size())
      grid.push_back(std::sqrt(slopes[i] * slopes[i + 1]));
  }
  grid.push_back(2.0 * slopes.back());
  return grid;
}

LambdaChoice select_lambda(const Dataset& d, const GrowConfig& cfg,
                           const PenaltyGrid& grid,
                           std::optional<double> threshold_quantile) {
  d.validate();
  if (!grid.lambdas.empty() &&
      !std::is_sorted(grid.lambdas.begin(), grid.lambdas.end()))
    throw std::invalid_argument("select_lambda: lambdas must be ascending");

  GrowConfig full_cfg = cfg;
  if (threshold_quantile)
    full_cfg.threshold_u = quantile_threshold(d, *threshold_quantile);
  Tree full = grow(d, full_cfg);
  PruningPath full_path = prune_path(full, full.k_n);
  const std::vector<double> lambdas =
      grid.lambdas.empty() ? default_lambda_grid(full_path) : grid.lambdas;

  std::vector<double> score_sum(lambdas.size(), 0.0);
  std::size_t n_parts = 0;

  // One training/held-out evaluation; adds each lambda's held-out
  // normalized log-likelihood so the caller can average across folds.
  const auto score_split = [&](const std::vector<std::size_t>& train_rows,
                               const std::vector<std::size_t>& test_rows) {
    const Dataset train = subset_rows(d, train_rows);
    const Dataset test = subset_rows(d, test_rows);
    GrowConfig part_cfg = cfg;
    part_cfg.threshold_u = threshold_quantile
                               ? quantile_threshold(train, *threshold_quantile)
                               : cfg.threshold_u;
    const Tree part = grow(train, part_cfg);
    const PruningPath part_path = prune_path(part, part.k_n);
    std::size_t n_excess = 0;
    std::vector<double> part_scores(lambdas.size());
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
      const Tree& sub = select_subtree_ref(part_path, lambdas[i]);
      std::size_t cnt = 0;
      part_scores[i] = heldout_loglik(sub, test, part_cfg.threshold_u, &cnt);
      n_excess = cnt;
    }
    if (n_excess == 0)
      throw InsufficientDataError("select_lambda: a fold has no held-out excesses");
    for (std::size_t i = 0; i < lambdas.size(); ++i)
      score_sum[i] += part_scores[i] / static_cast<double>(n_excess);
    ++n_parts;
  };

  if (std::holds_alternative<TestSampleSel>(grid.selection)) {
    const auto& ts = std::get<TestSampleSel>(grid.selection);
    if (!(ts.fraction > 0.0) || !(ts.fraction < 1.0))
      throw std::invalid_argument("select_lambda: fraction must lie in (0,1)");
    std::vector<std::size_t> idx;
    if (threshold_quantile) {
      idx = shuffled_indices(d.n_rows(), ts.seed);
    } else {
      // Fixed threshold: only exceedances are split between the parts.
      std::vector<std::size_t> exceed;
      for (std::size_t r = 0; r < d.n_rows(); ++r)
        if (d.response[r] > cfg.threshold_u) exceed.push_back(r);
      if (exceed.size() < 2)
        throw InsufficientDataError("select_lambda: too few exceedances");
      const std::vector<std::size_t> perm =
          shuffled_indices(exceed.size(), ts.seed);
      idx.reserve(exceed.size());
      for (std::size_t p : perm) idx.push_back(exceed[p]);
    }
    std::size_t n_train = static_cast<std::size_t>(
        std::lround(ts.fraction * static_cast<double>(idx.size())));
    n_train = std::min(std::max<std::size_t>(n_train, 1), idx.size() - 1);
    std::vector<std::size_t> train(idx.begin(), idx.begin() + n_train);
    std::vector<std::size_t> test(idx.begin() + n_train, idx.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    score_split(train, test);
  } else {
    const auto& kf = std::get<KFoldSel>(grid.selection);
    if (kf.k < 2) throw std::invalid_argument("select_lambda: k must be >= 2");
    std::vector<std::size_t> pool;
    if (threshold_quantile) {
      pool.resize(d.n_rows());
      std::iota(pool.begin(), pool.end(), std::size_t{0});
    } else {
      for (std::size_t r = 0; r < d.n_rows(); ++r)
        if (d.response[r] > cfg.threshold_u) pool.push_back(r);
    }
    if (pool.size() < kf.k)
      throw InsufficientDataError("select_lambda: fewer rows than folds");
    const std::vector<std::size_t> perm = shuffled_indices(pool.size(), kf.seed);
    for (std::size_t f = 0; f < kf.k; ++f) {
      const std::size_t lo = f * pool.size() / kf.k;
      const std::size_t hi = (f + 1) * pool.size() / kf.k;
      std::vector<std::size_t> train, test;
      for (std::size_t i = 0; i < pool.size(); ++i)
        (i >= lo && i < hi ? test : train).push_back(pool[perm[i]]);
      std::sort(train.begin(), train.end());
      std::sort(test.begin(), test.end());
      score_split(train, test);
    }
  }

  LambdaChoice out;
  out.grid = lambdas;
  out.scores.resize(lambdas.size());
  const double inv = 1.0 / static_cast<double>(n_parts);
  for (std::size_t i = 0; i < lambdas.size(); ++i)
    out.scores[i] = score_sum[i] * inv;
  // Ties prefer the larger penalty (smaller tree).
  std::size_t best = 0;
  for (std::size_t i = 1; i < lambdas.size(); ++i)
    if (out.scores[i] >= out.scores[best]) best = i;
  out.lambda = lambdas[best];
  out.tree = select_subtree(full_path, out.lambda);
  return out;
}

}  // namespace gpt
