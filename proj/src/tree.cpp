#include "gpt/tree.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace gpt {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> gather_response(const Dataset& d,
                                    const std::vector<std::uint32_t>& rows) {
  std::vector<double> z;
  z.reserve(rows.size());
  for (std::uint32_t r : rows) z.push_back(d.response[r]);
  return z;
}

double median_of(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double med = v[mid];
  if (v.size() % 2 == 0) {
    std::nth_element(v.begin(), v.begin() + (mid - 1), v.begin() + mid);
    med = 0.5 * (med + v[mid - 1]);
  }
  return med;
}

// Per-column scan state: node responses reordered by the column, and the
// feasible prefix sizes that act as candidate cuts.
struct ColumnScan {
  std::int32_t column = -1;
  bool numeric = true;
  std::vector<double> z_sorted;
  std::vector<double> values_sorted;          // numeric only
  std::vector<std::int32_t> ordered_levels;   // categorical only
  std::vector<std::size_t> level_bounds;      // cumulative counts per level
};

struct Candidate {
  std::int32_t scan = -1;
  std::size_t prefix = 0;
  double scan_value = kNegInf;
  bool feasible = false;
};

ColumnScan make_numeric_scan(const Dataset& d,
                             const std::vector<std::uint32_t>& rows,
                             std::int32_t col) {
  const auto& vals = d.columns[col].numeric().values;
  std::vector<std::uint32_t> order(rows);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) {
                     if (vals[a] != vals[b]) return vals[a] < vals[b];
                     return a < b;
                   });
  ColumnScan s;
  s.column = col;
  s.numeric = true;
  s.z_sorted.reserve(order.size());
  s.values_sorted.reserve(order.size());
  for (std::uint32_t r : order) {
    s.z_sorted.push_back(d.response[r]);
    s.values_sorted.push_back(vals[r]);
  }
  return s;
}

ColumnScan make_categorical_scan(const Dataset& d,
                                 const std::vector<std::uint32_t>& rows,
                                 std::int32_t col) {
  const auto& cat = d.columns[col].categorical();
  const std::size_t n_levels = cat.levels.size();
  std::vector<std::vector<double>> per_level_z(n_levels);
  for (std::uint32_t r : rows)
    per_level_z[cat.codes[r]].push_back(d.response[r]);

  // Levels present in the node, ordered by median response (ties by code).
  std::vector<std::pair<double, std::int32_t>> keyed;
  for (std::size_t l = 0; l < n_levels; ++l)
    if (!per_level_z[l].empty())
      keyed.emplace_back(median_of(per_level_z[l]),
                         static_cast<std::int32_t>(l));
  std::sort(keyed.begin(), keyed.end());

  ColumnScan s;
  s.column = col;
  s.numeric = false;
  s.z_sorted.reserve(rows.size());
  for (const auto& [med, code] : keyed) {
    s.ordered_levels.push_back(code);
    for (std::uint32_t r : rows)
      if (cat.codes[r] == code) s.z_sorted.push_back(d.response[r]);
    s.level_bounds.push_back(s.z_sorted.size());
  }
  return s;
}

SplitRule rule_from_candidate(const ColumnScan& s, std::size_t prefix,
                              std::size_t m) {
  SplitRule rule;
  rule.column = s.column;
  rule.majority_left = prefix >= m - prefix;
  if (s.numeric) {
    rule.kind = SplitKind::numeric;
    const double a = s.values_sorted[prefix - 1];
    const double b = s.values_sorted[prefix];
    double t = 0.5 * (a + b);
    if (!(t < b)) t = a;  // adjacent doubles: keep {x <= t} == prefix
    rule.threshold = t;
  } else {
    rule.kind = SplitKind::categorical;
    std::size_t j = 0;
    while (s.level_bounds[j] != prefix) ++j;
    rule.left_levels.assign(s.ordered_levels.begin(),
                            s.ordered_levels.begin() + j + 1);
    std::sort(rule.left_levels.begin(), rule.left_levels.end());
  }
  return rule;
}

bool goes_left(const SplitRule& rule, const Dataset& d, std::size_t row) {
  const Column& c = d.columns[rule.column];
  if (rule.kind == SplitKind::numeric)
    return c.numeric().values[row] <= rule.threshold;
  const std::int32_t code = c.categorical().codes[row];
  if (code < 0 ||
      static_cast<std::size_t>(code) >= c.categorical().levels.size())
    return rule.majority_left;  // unseen level
  return std::binary_search(rule.left_levels.begin(), rule.left_levels.end(),
                            code);
}

struct SplitEval {
  double value = kNegInf;
  FitResult left;
  FitResult right;
  bool ok = false;
};

// Canonical evaluation: children partitioned in row order, each refit with
// the full multistart gp_fit, so the value is exactly what independent
// refits would produce.
SplitEval evaluate_split_full(const Dataset& d,
                              const std::vector<std::uint32_t>& rows,
                              const SplitRule& rule, const GrowConfig& cfg) {
  SplitEval out;
  ExcessSample left, right;
  for (std::uint32_t r : rows) {
    if (goes_left(rule, d, r))
      left.values.push_back(d.response[r]);
    else
      right.values.push_back(d.response[r]);
  }
  if (left.values.size() < cfg.min_leaf_size ||
      right.values.size() < cfg.min_leaf_size)
    return out;
  try {
    out.left = gp_fit(left, cfg.fit);
    out.right = gp_fit(right, cfg.fit);
  } catch (const DegenerateSampleError&) {
    return out;
  }
  out.value = out.left.loglik + out.right.loglik;
  out.ok = true;
  return out;
}

// Keeps the scan candidates that survive into canonical re-evaluation.
constexpr std::size_t kRescanTop = 16;

struct CandOrder {
  const std::vector<Candidate>* c;
  bool operator()(std::size_t a, std::size_t b) const {
    const Candidate& ca = (*c)[a];
    const Candidate& cb = (*c)[b];
    if (ca.scan_value != cb.scan_value) return ca.scan_value > cb.scan_value;
    if (ca.scan != cb.scan) return ca.scan < cb.scan;
    return ca.prefix < cb.prefix;
  }
};

std::optional<BestSplit> best_split_impl(const Dataset& d,
                                         const std::vector<std::uint32_t>& rows,
                                         const GrowConfig& cfg,
                                         const FitResult& parent,
                                         bool parallel) {
  const std::size_t m = rows.size();
  if (m < 2 * cfg.min_leaf_size) return std::nullopt;

  std::vector<ColumnScan> scans;
  std::vector<Candidate> cands;
  for (std::size_t col = 0; col < d.columns.size(); ++col) {
    ColumnScan s = d.columns[col].is_numeric()
                       ? make_numeric_scan(d, rows, static_cast<std::int32_t>(col))
                       : make_categorical_scan(d, rows, static_cast<std::int32_t>(col));
    const std::int32_t si = static_cast<std::int32_t>(scans.size());
    bool any = false;
    if (s.numeric) {
      for (std::size_t i = cfg.min_leaf_size; i + cfg.min_leaf_size <= m; ++i)
        if (s.values_sorted[i - 1] < s.values_sorted[i]) {
          cands.push_back({si, i, kNegInf, false});
          any = true;
        }
    } else {
      for (std::size_t j = 0; j + 1 < s.level_bounds.size(); ++j) {
        const std::size_t p = s.level_bounds[j];
        if (p >= cfg.min_leaf_size && p + cfg.min_leaf_size <= m) {
          cands.push_back({si, p, kNegInf, false});
          any = true;
        }
      }
    }
    if (any) scans.push_back(std::move(s));
  }
  if (cands.empty()) return std::nullopt;

  std::vector<double> z_node = gather_response(d, rows);
  double slo, shi;
  detail::sigma_box(z_node, cfg.fit, &slo, &shi);
  const GPParams start = parent.params;

  // Cheap ranking pass; each candidate is independent of the others, so
  // any schedule produces the same floats.
  const auto eval_candidate = [&](Candidate& c) {
    const ColumnScan& s = scans[c.scan];
    std::span<const double> zs(s.z_sorted);
    FitResult fl, fr;
    if (detail::gp_fit_scan(zs.subspan(0, c.prefix), cfg.fit, start, slo, shi,
                            &fl) &&
        detail::gp_fit_scan(zs.subspan(c.prefix), cfg.fit, start, slo, shi,
                            &fr)) {
      c.scan_value = fl.loglik + fr.loglik;
      c.feasible = true;
    }
  };
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(cands.size());
         ++i)
      eval_candidate(cands[i]);
  } else {
    for (Candidate& c : cands) eval_candidate(c);
  }

  std::vector<std::size_t> order(cands.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), CandOrder{&cands});

  // Canonical re-evaluation of the leading candidates; the final choice is
  // by canonical value with the lowest-column, smallest-cut tie-break.
  std::optional<BestSplit> best;
  double best_value = kNegInf;
  std::int32_t best_col = 0;
  std::size_t best_prefix = 0;
  std::size_t considered = 0;
  for (std::size_t idx : order) {
    const Candidate& c = cands[idx];
    if (!c.feasible || considered >= kRescanTop) break;
    ++considered;
    const ColumnScan& s = scans[c.scan];
    SplitRule rule = rule_from_candidate(s, c.prefix, m);
    SplitEval ev = evaluate_split_full(d, rows, rule, cfg);
    if (!ev.ok) continue;
    const bool better =
        !best || ev.value > best_value ||
        (ev.value == best_value &&
         (s.column < best_col ||
          (s.column == best_col && c.prefix < best_prefix)));
    if (better) {
      best_value = ev.value;
      best_col = s.column;
      best_prefix = c.prefix;
      best = BestSplit{std::move(rule), ev.value - parent.loglik, ev.left,
                       ev.right};
    }
  }
  return best;
}

struct GrowItem {
  TreeNode* node;
  std::vector<std::uint32_t> rows;
  FitResult fit;
  bool has_fit = false;
};

Tree grow_impl(const Dataset& d, const GrowConfig& cfg, bool parallel) {
  if (cfg.min_leaf_size < 4)
    throw std::invalid_argument("grow: min_leaf_size must be >= 4");
  d.validate();
  const Dataset excesses = pot_filter(d, cfg.threshold_u);

  Tree tree;
  tree.threshold_u = cfg.threshold_u;
  tree.k_n = excesses.n_rows();
  tree.schema = schema_of(d);
  tree.config = cfg;
  tree.root = std::make_unique<TreeNode>();

  const std::size_t max_leaves =
      cfg.max_leaves == 0 ? std::numeric_limits<std::size_t>::max()
                          : cfg.max_leaves;

  std::int32_t next_id = 0;
  std::size_t leaves = 1;
  std::deque<GrowItem> queue;
  std::vector<std::uint32_t> all(excesses.n_rows());
  std::iota(all.begin(), all.end(), 0u);
  queue.push_back({tree.root.get(), std::move(all), FitResult{}, false});

  while (!queue.empty()) {
    GrowItem item = std::move(queue.front());
    queue.pop_front();
    TreeNode* node = item.node;
    node->id = next_id++;
    node->n_obs = static_cast<std::uint32_t>(item.rows.size());

    if (item.has_fit) {
      node->params = item.fit.params;
      node->loglik = item.fit.loglik;
      node->status = item.fit.converged ? FitStatus::ok : FitStatus::max_iter;
    } else {
      ExcessSample s;
      s.values = gather_response(excesses, item.rows);
      s.threshold_u = cfg.threshold_u;
      try {
        FitResult fr = gp_fit(s, cfg.fit);
        node->params = fr.params;
        node->loglik = fr.loglik;
        node->status = fr.converged ? FitStatus::ok : FitStatus::max_iter;
      } catch (const DegenerateSampleError&) {
        // All-zero excesses: keep an unsplit leaf flagged degenerate.
        node->params = GPParams{detail::sample_scale(s.values),
                                cfg.fit.gamma_min};
        node->loglik = 0.0;
        node->status = FitStatus::degenerate;
        continue;
      }
    }

    if (leaves >= max_leaves) continue;
    if (item.rows.size() < 2 * cfg.min_leaf_size) continue;

    FitResult parent_fit{node->params, node->loglik, true, 0};
    std::optional<BestSplit> best =
        best_split_impl(excesses, item.rows, cfg, parent_fit, parallel);
    if (!best || best->gain < 0.0) continue;

    std::vector<std::uint32_t> left_rows, right_rows;
    for (std::uint32_t r : item.rows) {
      if (goes_left(best->rule, excesses, r))
        left_rows.push_back(r);
      else
        right_rows.push_back(r);
    }
    node->rule = std::move(best->rule);
    node->left = std::make_unique<TreeNode>();
    node->right = std::make_unique<TreeNode>();
    ++leaves;
    queue.push_back({node->left.get(), std::move(left_rows), best->left_fit,
                     true});
    queue.push_back({node->right.get(), std::move(right_rows),
                     best->right_fit, true});
  }
  return tree;
}

std::unique_ptr<TreeNode> clone_node(const TreeNode& n) {
  auto c = std::make_unique<TreeNode>();
  c->rule = n.rule;
  c->params = n.params;
  c->loglik = n.loglik;
  c->n_obs = n.n_obs;
  c->id = n.id;
  c->status = n.status;
  if (!n.is_leaf()) {
    c->left = clone_node(*n.left);
    c->right = clone_node(*n.right);
  }
  return c;
}

}  // namespace

std::size_t Tree::n_leaves() const {
  std::vector<const TreeNode*> leaves;
  collect_leaves(*root, &leaves);
  return leaves.size();
}

Tree Tree::clone() const {
  Tree t;
  t.root = clone_node(*root);
  t.threshold_u = threshold_u;
  t.k_n = k_n;
  t.schema = schema;
  t.config = config;
  return t;
}

std::optional<double> evaluate_split(const Dataset& d,
                                     const std::vector<std::uint32_t>& rows,
                                     const SplitRule& rule,
                                     const GrowConfig& cfg) {
  if (rule.column < 0 ||
      static_cast<std::size_t>(rule.column) >= d.columns.size())
    throw std::invalid_argument("evaluate_split: rule column out of range");
  SplitEval ev = evaluate_split_full(d, rows, rule, cfg);
  if (!ev.ok) return std::nullopt;
  return ev.value;
}

std::optional<BestSplit> best_split(const Dataset& d,
                                    const std::vector<std::uint32_t>& rows,
                                    const GrowConfig& cfg,
                                    const FitResult& parent) {
  return best_split_impl(d, rows, cfg, parent, true);
}

std::optional<BestSplit> best_split_serial(
    const Dataset& d, const std::vector<std::uint32_t>& rows,
    const GrowConfig& cfg, const FitResult& parent) {
  return best_split_impl(d, rows, cfg, parent, false);
}

Tree grow(const Dataset& d, const GrowConfig& cfg) {
  return grow_impl(d, cfg, true);
}

Tree grow_serial(const Dataset& d, const GrowConfig& cfg) {
  return grow_impl(d, cfg, false);
}

const TreeNode& predict_leaf(const Tree& t, const Dataset& d,
                             std::size_t row) {
  if (d.columns.size() != t.schema.size())
    throw SchemaMismatchError("predict: column count differs from training schema");
  const TreeNode* n = t.root.get();
  while (!n->is_leaf()) {
    const ColumnSchema& cs = t.schema[n->rule.column];
    if (d.columns[n->rule.column].is_numeric() != cs.numeric)
      throw SchemaMismatchError("predict: column '" + cs.name +
                                "' type differs from training schema");
    n = goes_left(n->rule, d, row) ? n->left.get() : n->right.get();
  }
  return *n;
}

GPParams predict(const Tree& t, const Dataset& d, std::size_t row) {
  return predict_leaf(t, d, row).params;
}

GPParams predict_1d(const Tree& t, double x) {
  const TreeNode* n = t.root.get();
  while (!n->is_leaf())
    n = x <= n->rule.threshold ? n->left.get() : n->right.get();
  return n->params;
}

void collect_leaves(const TreeNode& n, std::vector<const TreeNode*>* out) {
  if (n.is_leaf()) {
    out->push_back(&n);
    return;
  }
  collect_leaves(*n.left, out);
  collect_leaves(*n.right, out);
}

}  // namespace gpt
