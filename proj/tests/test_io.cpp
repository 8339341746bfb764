#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "flood_synth.hpp"
#include "gpt/io.hpp"
#include "gpt/prune.hpp"
#include "gpt/rng.hpp"
#include "gpt/sim.hpp"

using namespace gpt;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/gpt_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
  void write(const std::string& text) const {
    std::ofstream out(path, std::ios::binary);
    out << text;
  }
};

bool nodes_equal(const TreeNode& a, const TreeNode& b) {
  if (a.id != b.id || a.n_obs != b.n_obs || a.status != b.status) return false;
  if (a.params.sigma != b.params.sigma || a.params.gamma != b.params.gamma)
    return false;
  if (a.loglik != b.loglik) return false;
  if (a.is_leaf() != b.is_leaf()) return false;
  if (a.is_leaf()) return true;
  if (a.rule.column != b.rule.column || a.rule.kind != b.rule.kind)
    return false;
  if (a.rule.kind == SplitKind::numeric) {
    if (a.rule.threshold != b.rule.threshold) return false;
  } else {
    if (a.rule.left_levels != b.rule.left_levels ||
        a.rule.majority_left != b.rule.majority_left)
      return false;
  }
  return nodes_equal(*a.left, *b.left) && nodes_equal(*a.right, *b.right);
}

// Minimal structural DOT checker: digraph keyword, balanced braces, every
// statement either `id [attrs];` or `id -> id;`, quotes well formed.
bool dot_well_formed(const std::string& text, std::size_t* nodes,
                     std::size_t* edges) {
  std::istringstream in(text);
  std::string line;
  *nodes = 0;
  *edges = 0;
  if (!std::getline(in, line) || line.rfind("digraph", 0) != 0 ||
      line.find('{') == std::string::npos)
    return false;
  bool closed = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line == "}") {
      closed = true;
      continue;
    }
    if (closed) return false;
    const std::size_t arrow = line.find("->");
    if (arrow != std::string::npos) {
      if (line.find(';') == std::string::npos) return false;
      *edges += 1;
      // second edge on the same line
      if (line.find("->", arrow + 2) != std::string::npos) *edges += 1;
      continue;
    }
    if (line.find('[') == std::string::npos ||
        line.find("];") == std::string::npos)
      return false;
    std::size_t quotes = 0;
    for (std::size_t i = 0; i < line.size(); ++i)
      if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) ++quotes;
    if (quotes % 2 != 0) return false;
    *nodes += 1;
  }
  return closed;
}

Dataset burr_data(std::size_t n, std::uint64_t seed) {
  SimDesign design;
  return burr_sample(n, design, seed);
}

}  // namespace

TEST_CASE("load_csv types columns and counts rows") {
  TempFile f("basic.csv");
  f.write("y,x\n1.5,0.1\n2.5,0.2\n3.5,0.3\n");
  const Dataset d = load_csv(f.path, "y");
  CHECK(d.n_rows() == 3);
  CHECK(d.columns.size() == 1);
  CHECK(d.columns[0].is_numeric());
  CHECK(d.response == std::vector<double>{1.5, 2.5, 3.5});
}

TEST_CASE("load_csv reports the offending cell for declared-numeric columns") {
  TempFile f("bad.csv");
  f.write("y,x\n1.5,0.1\n2.5,oops\n3.5,0.3\n");
  CHECK_THROWS_WITH_AS(load_csv(f.path, "y", {}, {"x"}),
                       doctest::Contains("row 3"), ParseError);
  // without the declaration the column falls back to categorical
  const Dataset d = load_csv(f.path, "y");
  CHECK_FALSE(d.columns[0].is_numeric());
  CHECK(d.columns[0].categorical().levels.size() == 3);
}

TEST_CASE("load_csv handles quoting, missing responses, empty files") {
  TempFile f("quoted.csv");
  f.write("y,name\r\n1.0,\"a,b\"\r\n,skipped\r\n2.0,\"say \"\"hi\"\"\"\r\n");
  const Dataset d = load_csv(f.path, "y");
  CHECK(d.n_rows() == 2);  // the missing-response row is rejected
  CHECK(d.columns[0].categorical().levels ==
        std::vector<std::string>{"a,b", "say \"hi\""});

  TempFile e("empty.csv");
  e.write("");
  CHECK_THROWS_AS(load_csv(e.path, "y"), ParseError);
  TempFile g("noresp.csv");
  g.write("a,b\n1,2\n");
  CHECK_THROWS_AS(load_csv(g.path, "y"), ParseError);
}

TEST_CASE("synthetic flood file matches the expected schema") {
  TempFile f("floods.csv");
  gpt_test::write_flood_csv(f.path, 400, 11);
  const Dataset d = load_csv(f.path, "cost");
  CHECK(d.columns.size() == 5);
  std::size_t n_cat = 0, n_num = 0;
  for (const Column& c : d.columns) (c.is_numeric() ? n_num : n_cat) += 1;
  CHECK(n_cat == 2);
  CHECK(n_num == 3);
  CHECK(d.columns[0].name == "region");
  CHECK(d.columns[0].categorical().levels.size() == 8);
  CHECK(d.columns[1].categorical().levels.size() == 4);
  for (double y : d.response) CHECK(y >= 100000.0);
}

TEST_CASE("tree documents round-trip exactly") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset d = burr_data(1200, seed);
    GrowConfig cfg;
    cfg.threshold_u = quantile_threshold(d, 0.90);
    cfg.max_leaves = 6;
    const Tree t = grow(d, cfg);
    const std::string text = tree_to_json(t);
    const Tree back = tree_from_json(text);
    CHECK(nodes_equal(*t.root, *back.root));
    CHECK(back.threshold_u == t.threshold_u);
    CHECK(back.k_n == t.k_n);
    CHECK(back.schema.size() == t.schema.size());
    CHECK(tree_to_json(back) == text);  // serialization is a fixed point
  }
}

TEST_CASE("tree documents with categorical rules round-trip") {
  TempFile f("floods2.csv");
  gpt_test::write_flood_csv(f.path, 700, 21);
  const Dataset d = load_csv(f.path, "cost");
  GrowConfig cfg;
  cfg.threshold_u = 100000.0;
  cfg.min_leaf_size = 30;
  cfg.max_leaves = 8;
  const Tree t = grow(d, cfg);
  const Tree back = tree_from_json(tree_to_json(t));
  CHECK(nodes_equal(*t.root, *back.root));
  for (std::size_t i = 0; i < t.schema.size(); ++i) {
    CHECK(back.schema[i].name == t.schema[i].name);
    CHECK(back.schema[i].levels == t.schema[i].levels);
  }
}

TEST_CASE("export_dot structure") {
  const Dataset d = burr_data(2000, 3);
  GrowConfig cfg;
  cfg.threshold_u = quantile_threshold(d, 0.90);
  cfg.max_leaves = 3;
  const Tree t = grow(d, cfg);
  REQUIRE(t.n_leaves() == 3);
  std::size_t nodes = 0, edges = 0;
  const std::string dot = export_dot(t);
  CHECK(dot_well_formed(dot, &nodes, &edges));
  CHECK(nodes == 5);
  CHECK(edges == 4);

  // single leaf: one node, no edges
  std::vector<double> y(50, 1.0), x(50, 0.5);
  CounterRng rng(1);
  for (double& v : y) v = 1.0 / rng.next_unit();
  Dataset single;
  single.response = y;
  Column c;
  c.name = "x";
  c.data = NumericColumn{x};
  single.columns.push_back(c);
  GrowConfig cfg1;
  cfg1.threshold_u = 0.0;
  const Tree t1 = grow(single, cfg1);
  REQUIRE(t1.n_leaves() == 1);
  const std::string dot1 = export_dot(t1);
  CHECK(dot_well_formed(dot1, &nodes, &edges));
  CHECK(nodes == 1);
  CHECK(edges == 0);

  // sigma display scaling only affects labels
  const std::string scaled = export_dot(t, 1e-5);
  CHECK(scaled != dot);
}

TEST_CASE("leaf summary shares sum to one and mark infinite means") {
  const Dataset d = burr_data(4000, 5);
  GrowConfig cfg;
  cfg.threshold_u = quantile_threshold(d, 0.90);
  const Tree t = grow(d, cfg);
  const auto rows = leaf_summary(t, d);
  CHECK(rows.size() == t.n_leaves());
  double share = 0.0;
  std::size_t n_obs = 0;
  bool any_infinite = false;
  for (const auto& r : rows) {
    share += r.share;
    n_obs += r.n_obs;
    if (!r.theoretical_mean) any_infinite = true;
    CHECK(r.theoretical_median ==
          doctest::Approx(gp_quantile(0.5, {r.sigma, r.gamma})));
  }
  CHECK(std::fabs(share - 1.0) <= 1e-12);
  CHECK(n_obs == t.k_n);
  // the upper region has gamma ~ 1.5, so an infinite-mean leaf must exist
  CHECK(any_infinite);

  TempFile out("summary.csv");
  write_leaf_summary_csv(rows, out.path);
  std::ifstream in(out.path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  CHECK(text.find("inf") != std::string::npos);
}

TEST_CASE("format_double survives a parse round trip") {
  for (double v : {1.0 / 3.0, 6245812.0, 1e-300, 3.333333333333333e8}) {
    const std::string s = format_double(v);
    CHECK(std::stod(s) == v);
  }
}
