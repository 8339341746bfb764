#include "gpt/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "gpt/gpd.hpp"

namespace gpt {

using nlohmann::json;

namespace {

std::string cell_name(std::size_t row, std::size_t col) {
  return "row " + std::to_string(row + 1) + ", column " + std::to_string(col + 1);
}

bool parse_number(const std::string& s, double* out) {
  if (s.empty()) return false;
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end != begin + s.size()) return false;
  if (!std::isfinite(v)) return false;  // reject nan/inf tokens
  *out = v;
  return true;
}

json node_to_json(const TreeNode& n) {
  json j;
  j["id"] = n.id;
  j["sigma"] = n.params.sigma;
  j["gamma"] = n.params.gamma;
  j["loglik"] = n.loglik;
  j["n_obs"] = n.n_obs;
  j["status"] = n.status == FitStatus::ok
                    ? "ok"
                    : (n.status == FitStatus::max_iter ? "max_iter"
                                                       : "degenerate");
  if (!n.is_leaf()) {
    json r;
    r["column"] = n.rule.column;
    if (n.rule.kind == SplitKind::numeric) {
      r["kind"] = "numeric";
      r["threshold"] = n.rule.threshold;
    } else {
      r["kind"] = "categorical";
      r["left_levels"] = n.rule.left_levels;
      r["majority_left"] = n.rule.majority_left;
    }
    j["split"] = std::move(r);
    j["left"] = node_to_json(*n.left);
    j["right"] = node_to_json(*n.right);
  }
  return j;
}

std::unique_ptr<TreeNode> node_from_json(const json& j) {
  auto n = std::make_unique<TreeNode>();
  n->id = j.at("id").get<std::int32_t>();
  n->params.sigma = j.at("sigma").get<double>();
  n->params.gamma = j.at("gamma").get<double>();
  n->loglik = j.at("loglik").get<double>();
  n->n_obs = j.at("n_obs").get<std::uint32_t>();
  const std::string st = j.at("status").get<std::string>();
  n->status = st == "ok" ? FitStatus::ok
                         : (st == "max_iter" ? FitStatus::max_iter
                                             : FitStatus::degenerate);
  if (j.contains("split")) {
    const json& r = j.at("split");
    n->rule.column = r.at("column").get<std::int32_t>();
    if (r.at("kind").get<std::string>() == "numeric") {
      n->rule.kind = SplitKind::numeric;
      n->rule.threshold = r.at("threshold").get<double>();
    } else {
      n->rule.kind = SplitKind::categorical;
      n->rule.left_levels = r.at("left_levels").get<std::vector<std::int32_t>>();
      n->rule.majority_left = r.at("majority_left").get<bool>();
    }
    n->left = node_from_json(j.at("left"));
    n->right = node_from_json(j.at("right"));
  }
  return n;
}

std::string dot_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

void dot_node(const TreeNode& n, double sigma_scale, std::size_t k_n,
              std::vector<ColumnSchema> const& schema, std::string* out) {
  char buf[256];
  if (n.is_leaf()) {
    const double share =
        k_n > 0 ? 100.0 * static_cast<double>(n.n_obs) / static_cast<double>(k_n)
                : 0.0;
    std::snprintf(buf, sizeof buf,
                  "  n%d [shape=box, label=\"gamma = %.3g\\nsigma = %.6g\\n%.1f%% of obs\"];\n",
                  n.id, n.params.gamma, n.params.sigma * sigma_scale, share);
    out->append(buf);
    return;
  }
  std::string label;
  const ColumnSchema& cs = schema[n.rule.column];
  if (n.rule.kind == SplitKind::numeric) {
    std::snprintf(buf, sizeof buf, " <= %.6g", n.rule.threshold);
    label = dot_escape(cs.name) + buf;
  } else {
    label = dot_escape(cs.name) + " in {";
    for (std::size_t i = 0; i < n.rule.left_levels.size(); ++i) {
      if (i) label += ", ";
      label += dot_escape(cs.levels[n.rule.left_levels[i]]);
    }
    label += "}";
  }
  std::snprintf(buf, sizeof buf, "  n%d [shape=ellipse, label=\"", n.id);
  out->append(buf);
  out->append(label);
  out->append("\"];\n");
  dot_node(*n.left, sigma_scale, k_n, schema, out);
  dot_node(*n.right, sigma_scale, k_n, schema, out);
  std::snprintf(buf, sizeof buf, "  n%d -> n%d;\n  n%d -> n%d;\n", n.id,
                n.left->id, n.id, n.right->id);
  out->append(buf);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_line(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(',');
    const std::string& f = fields[i];
    if (f.find_first_of(",\"\r\n") != std::string::npos) {
      out.push_back('"');
      for (char c : f) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
      }
      out.push_back('"');
    } else {
      out += f;
    }
  }
  out.push_back('\n');
  return out;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path,
                                               std::vector<std::string>* header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (text.empty()) throw ParseError("'" + path + "' is empty");

  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  std::size_t line = 1;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
        if (c == '\n') ++line;
      }
    } else if (c == '"') {
      if (!field.empty())
        throw ParseError("stray quote at line " + std::to_string(line));
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      ++line;
    } else {
      field.push_back(c);
    }
  }
  if (quoted) throw ParseError("unterminated quote at end of file");
  if (!field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("'" + path + "' has no header row");
  *header = rows.front();
  rows.erase(rows.begin());
  for (std::size_t r = 0; r < rows.size(); ++r)
    if (rows[r].size() != header->size())
      throw ParseError("row " + std::to_string(r + 2) + " has " +
                       std::to_string(rows[r].size()) + " fields, expected " +
                       std::to_string(header->size()));
  return rows;
}

Dataset load_csv(const std::string& path, const std::string& response_column,
                 const std::set<std::string>& force_categorical,
                 const std::set<std::string>& force_numeric) {
  std::vector<std::string> header;
  auto rows = read_csv(path, &header);
  std::size_t resp_col = header.size();
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == response_column) resp_col = c;
  if (resp_col == header.size())
    throw ParseError("response column '" + response_column + "' not found");

  // Drop rows with a missing response.
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < rows.size(); ++r)
    if (!rows[r][resp_col].empty()) keep.push_back(r);
  if (keep.empty())
    throw InsufficientDataError("'" + path + "' has no usable rows");

  Dataset d;
  d.response.reserve(keep.size());
  for (std::size_t r : keep) {
    double v;
    if (!parse_number(rows[r][resp_col], &v))
      throw ParseError("cannot parse response at " + cell_name(r + 1, resp_col) +
                       ": '" + rows[r][resp_col] + "'");
    d.response.push_back(v);
  }

  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == resp_col) continue;
    const bool declared_numeric = force_numeric.count(header[c]) > 0;
    bool numeric = force_categorical.count(header[c]) == 0;
    std::vector<double> nums(keep.size());
    if (numeric) {
      for (std::size_t i = 0; i < keep.size(); ++i)
        if (!parse_number(rows[keep[i]][c], &nums[i])) {
          if (declared_numeric)
            throw ParseError("cannot parse '" + rows[keep[i]][c] +
                             "' as a number at " + cell_name(keep[i] + 1, c));
          numeric = false;
          break;
        }
    }
    Column col;
    col.name = header[c];
    if (numeric) {
      col.data = NumericColumn{std::move(nums)};
    } else {
      // Missing covariate cells are errors; surrogate handling is out of scope.
      CategoricalColumn cat;
      std::vector<std::string> raw(keep.size());
      for (std::size_t i = 0; i < keep.size(); ++i) {
        raw[i] = rows[keep[i]][c];
        if (raw[i].empty())
          throw ParseError("missing value at " + cell_name(keep[i] + 1, c));
      }
      cat.levels = raw;
      std::sort(cat.levels.begin(), cat.levels.end());
      cat.levels.erase(std::unique(cat.levels.begin(), cat.levels.end()),
                       cat.levels.end());
      cat.codes.resize(keep.size());
      for (std::size_t i = 0; i < keep.size(); ++i)
        cat.codes[i] = static_cast<std::int32_t>(
            std::lower_bound(cat.levels.begin(), cat.levels.end(), raw[i]) -
            cat.levels.begin());
      col.data = std::move(cat);
    }
    d.columns.push_back(std::move(col));
  }
  d.validate();
  return d;
}

std::string tree_to_json(const Tree& t) {
  json j;
  j["schema_version"] = 1;
  j["threshold_u"] = t.threshold_u;
  j["k_n"] = t.k_n;
  json cfg;
  cfg["min_leaf_size"] = t.config.min_leaf_size;
  cfg["max_leaves"] = t.config.max_leaves;
  json fit;
  fit["sigma_min"] = t.config.fit.sigma_min;
  fit["sigma_max"] = t.config.fit.sigma_max;
  fit["gamma_min"] = t.config.fit.gamma_min;
  fit["gamma_max"] = t.config.fit.gamma_max;
  fit["grad_tol"] = t.config.fit.grad_tol;
  fit["max_iter"] = t.config.fit.max_iter;
  fit["n_starts"] = t.config.fit.n_starts;
  cfg["fit"] = std::move(fit);
  j["config"] = std::move(cfg);
  json cols = json::array();
  for (const ColumnSchema& c : t.schema) {
    json jc;
    jc["name"] = c.name;
    jc["type"] = c.numeric ? "numeric" : "categorical";
    if (!c.numeric) jc["levels"] = c.levels;
    cols.push_back(std::move(jc));
  }
  j["columns"] = std::move(cols);
  j["root"] = node_to_json(*t.root);
  return j.dump(2);
}

Tree tree_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("tree document: ") + e.what());
  }
  try {
    if (j.at("schema_version").get<int>() != 1)
      throw ParseError("tree document: unsupported schema_version");
    Tree t;
    t.threshold_u = j.at("threshold_u").get<double>();
    t.k_n = j.at("k_n").get<std::size_t>();
    const json& cfg = j.at("config");
    t.config.min_leaf_size = cfg.at("min_leaf_size").get<std::size_t>();
    t.config.max_leaves = cfg.at("max_leaves").get<std::size_t>();
    const json& fit = cfg.at("fit");
    t.config.fit.sigma_min = fit.at("sigma_min").get<double>();
    t.config.fit.sigma_max = fit.at("sigma_max").get<double>();
    t.config.fit.gamma_min = fit.at("gamma_min").get<double>();
    t.config.fit.gamma_max = fit.at("gamma_max").get<double>();
    t.config.fit.grad_tol = fit.at("grad_tol").get<double>();
    t.config.fit.max_iter = fit.at("max_iter").get<int>();
    t.config.fit.n_starts = fit.at("n_starts").get<int>();
    t.config.threshold_u = t.threshold_u;
    for (const json& jc : j.at("columns")) {
      ColumnSchema c;
      c.name = jc.at("name").get<std::string>();
      c.numeric = jc.at("type").get<std::string>() == "numeric";
      if (!c.numeric) c.levels = jc.at("levels").get<std::vector<std::string>>();
      t.schema.push_back(std::move(c));
    }
    t.root = node_from_json(j.at("root"));
    return t;
  } catch (const json::exception& e) {
    throw ParseError(std::string("tree document: ") + e.what());
  }
}

void save_tree(const Tree& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << tree_to_json(t) << "\n";
}

Tree load_tree(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return tree_from_json(text);
}

std::string export_dot(const Tree& t, double sigma_scale) {
  std::string out = "digraph gp_tree {\n";
  dot_node(*t.root, sigma_scale, t.k_n, t.schema, &out);
  out += "}\n";
  return out;
}

std::vector<LeafSummaryRow> leaf_summary(const Tree& t, const Dataset& d) {
  const Dataset excesses = pot_filter(d, t.threshold_u);
  std::vector<const TreeNode*> leaves;
  collect_leaves(*t.root, &leaves);
  std::map<std::int32_t, std::vector<double>> leaf_values;
  for (std::size_t r = 0; r < excesses.n_rows(); ++r) {
    const TreeNode& leaf = predict_leaf(t, excesses, r);
    leaf_values[leaf.id].push_back(excesses.response[r]);
  }
  std::vector<LeafSummaryRow> rows;
  rows.reserve(leaves.size());
  for (const TreeNode* leaf : leaves) {
    LeafSummaryRow row;
    row.leaf_id = leaf->id;
    row.gamma = leaf->params.gamma;
    row.sigma = leaf->params.sigma;
    row.status = leaf->status;
    std::vector<double>& vals = leaf_values[leaf->id];
    row.n_obs = vals.size();
    row.share = static_cast<double>(vals.size()) /
                static_cast<double>(excesses.n_rows());
    if (!vals.empty()) {
      std::sort(vals.begin(), vals.end());
      const std::size_t m = vals.size();
      row.empirical_median =
          m % 2 ? vals[m / 2] : 0.5 * (vals[m / 2 - 1] + vals[m / 2]);
      double acc = 0.0;
      for (double v : vals) acc += v;
      row.empirical_mean = acc / static_cast<double>(m);
    }
    row.theoretical_median = gp_theoretical_median(leaf->params);
    row.theoretical_mean = gp_theoretical_mean(leaf->params);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_leaf_summary_csv(const std::vector<LeafSummaryRow>& rows,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << csv_line({"leaf_id", "gamma", "sigma", "share", "n_obs",
                   "empirical_median", "empirical_mean", "theoretical_median",
                   "theoretical_mean", "status"});
  for (const LeafSummaryRow& r : rows) {
    out << csv_line(
        {std::to_string(r.leaf_id), format_double(r.gamma),
         format_double(r.sigma), format_double(r.share),
         std::to_string(r.n_obs), format_double(r.empirical_median),
         format_double(r.empirical_mean), format_double(r.theoretical_median),
         r.theoretical_mean ? format_double(*r.theoretical_mean) : "inf",
         r.status == FitStatus::ok
             ? "ok"
             : (r.status == FitStatus::max_iter ? "max_iter" : "degenerate")});
  }
}

void write_qq_csv(const Tree& t, const Dataset& d, const std::string& path) {
  const Dataset excesses = pot_filter(d, t.threshold_u);
  std::map<std::int32_t, std::vector<double>> leaf_values;
  std::map<std::int32_t, GPParams> leaf_params;
  for (std::size_t r = 0; r < excesses.n_rows(); ++r) {
    const TreeNode& leaf = predict_leaf(t, excesses, r);
    leaf_values[leaf.id].push_back(excesses.response[r]);
    leaf_params[leaf.id] = leaf.params;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << csv_line({"leaf_id", "i", "empirical", "theoretical"});
  for (auto& [id, vals] : leaf_values) {
    std::sort(vals.begin(), vals.end());
    const double n = static_cast<double>(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double p = (static_cast<double>(i) + 0.5) / n;
      out << csv_line({std::to_string(id), std::to_string(i + 1),
                       format_double(vals[i]),
                       format_double(gp_quantile(p, leaf_params[id]))});
    }
  }
}

}  // namespace gpt
