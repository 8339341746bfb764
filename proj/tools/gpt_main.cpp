#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "gpt/io.hpp"
#include "gpt/prune.hpp"
#include "gpt/sim.hpp"
#include "gpt/tree.hpp"

namespace {

constexpr int kExitParse = 2;
constexpr int kExitInsufficientData = 3;
constexpr int kExitNonConvergence = 4;

void apply_thread_cap() {
#ifdef _OPENMP
  if (const char* env = std::getenv("GPT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
#endif
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

std::set<std::string> to_set(const std::vector<std::string>& v) {
  return {v.begin(), v.end()};
}

// Query CSV mapped onto a training schema: columns matched by name,
// category strings mapped through the training levels (unseen -> -1, the
// majority-routing marker). The response column is not required.
gpt::Dataset load_query(const std::string& path,
                        const std::vector<gpt::ColumnSchema>& schema) {
  std::vector<std::string> header;
  auto rows = gpt::read_csv(path, &header);
  gpt::Dataset d;
  std::vector<std::string> missing;
  for (const gpt::ColumnSchema& cs : schema) {
    std::size_t idx = header.size();
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == cs.name) idx = c;
    if (idx == header.size()) {
      missing.push_back(cs.name);
      continue;
    }
    gpt::Column col;
    col.name = cs.name;
    if (cs.numeric) {
      gpt::NumericColumn num;
      num.values.reserve(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        char* end = nullptr;
        const std::string& cell = rows[r][idx];
        const double v = std::strtod(cell.c_str(), &end);
        if (cell.empty() || end != cell.c_str() + cell.size())
          throw gpt::ParseError("cannot parse '" + cell + "' in column '" +
                                cs.name + "', row " + std::to_string(r + 2));
        num.values.push_back(v);
      }
      col.data = std::move(num);
    } else {
      gpt::CategoricalColumn cat;
      cat.levels = cs.levels;
      cat.codes.reserve(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto it = std::lower_bound(cs.levels.begin(), cs.levels.end(),
                                         rows[r][idx]);
        cat.codes.push_back(it != cs.levels.end() && *it == rows[r][idx]
                                ? static_cast<std::int32_t>(it - cs.levels.begin())
                                : -1);
      }
      col.data = std::move(cat);
    }
    d.columns.push_back(std::move(col));
  }
  if (!missing.empty()) {
    std::string msg = "query is missing training columns:";
    for (const std::string& m : missing) msg += " " + m;
    throw gpt::SchemaMismatchError(msg);
  }
  d.response.assign(rows.size(), 0.0);
  return d;
}

struct FitOptions {
  std::string data, response, out, dot, summary, qq;
  std::vector<std::string> categorical;
  std::vector<std::string> numeric;
  double threshold_u = 0.0, threshold_q = 0.0;
  bool has_u = false, has_q = false;
  std::size_t min_leaf = 20, max_leaves = 0, cv_folds = 5;
  std::uint64_t cv_seed = 0;
  double test_fraction = 0.0;
  double fixed_lambda = -1.0;
  double sigma_scale = 1.0;
  int max_iter = 500;
};

int run_fit(const FitOptions& opt) {
  const gpt::Dataset d = gpt::load_csv(opt.data, opt.response,
                                       to_set(opt.categorical),
                                       to_set(opt.numeric));
  gpt::GrowConfig cfg;
  cfg.min_leaf_size = opt.min_leaf;
  cfg.max_leaves = opt.max_leaves;
  cfg.fit.max_iter = opt.max_iter;
  std::optional<double> tq;
  if (opt.has_q) {
    tq = opt.threshold_q;
    cfg.threshold_u = gpt::quantile_threshold(d, opt.threshold_q);
  } else {
    cfg.threshold_u = opt.threshold_u;
  }

  gpt::Tree tree;
  double lambda = opt.fixed_lambda;
  if (opt.fixed_lambda >= 0.0) {
    gpt::Tree maximal = gpt::grow(d, cfg);
    tree = gpt::select_subtree(gpt::prune_path(maximal, maximal.k_n),
                               opt.fixed_lambda);
  } else {
    gpt::PenaltyGrid grid;
    if (opt.test_fraction > 0.0)
      grid.selection = gpt::TestSampleSel{opt.test_fraction, opt.cv_seed};
    else
      grid.selection = gpt::KFoldSel{opt.cv_folds, opt.cv_seed};
    gpt::LambdaChoice choice = gpt::select_lambda(d, cfg, grid, tq);
    tree = std::move(choice.tree);
    lambda = choice.lambda;
  }

  gpt::save_tree(tree, opt.out);
  if (!opt.dot.empty())
    write_file(opt.dot, gpt::export_dot(tree, opt.sigma_scale));
  if (!opt.summary.empty())
    gpt::write_leaf_summary_csv(gpt::leaf_summary(tree, d), opt.summary);
  if (!opt.qq.empty()) gpt::write_qq_csv(tree, d, opt.qq);

  std::cout << "leaves=" << tree.n_leaves() << " k_n=" << tree.k_n
            << " lambda=" << gpt::format_double(lambda)
            << " threshold_u=" << gpt::format_double(tree.threshold_u) << "\n";

  std::vector<const gpt::TreeNode*> leaves;
  gpt::collect_leaves(*tree.root, &leaves);
  const bool all_flagged =
      std::all_of(leaves.begin(), leaves.end(), [](const gpt::TreeNode* l) {
        return l->status != gpt::FitStatus::ok;
      });
  if (all_flagged) {
    std::cerr << "gpt fit: no leaf fit converged\n";
    return kExitNonConvergence;
  }
  return 0;
}

int run_predict(const std::string& tree_path, const std::string& data_path,
                const std::string& out_path) {
  const gpt::Tree tree = gpt::load_tree(tree_path);
  const gpt::Dataset q = load_query(data_path, tree.schema);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + out_path + "'");
  out << gpt::csv_line({"sigma", "gamma", "leaf_id", "theoretical_median"});
  for (std::size_t r = 0; r < q.n_rows(); ++r) {
    const gpt::TreeNode& leaf = gpt::predict_leaf(tree, q, r);
    out << gpt::csv_line({gpt::format_double(leaf.params.sigma),
                          gpt::format_double(leaf.params.gamma),
                          std::to_string(leaf.id),
                          gpt::format_double(
                              gpt::gp_theoretical_median(leaf.params))});
  }
  return 0;
}

struct SimulateOptions {
  std::string design = "step";
  std::vector<std::size_t> n_list;
  std::size_t reps = 200;
  std::uint64_t seed = 0;
  double quantile = 0.90;
  std::size_t min_leaf = 20, cv_folds = 5;
  std::string out_dir = ".";
};

int run_simulate(const SimulateOptions& opt) {
  gpt::SimDesign design;
  design.gamma0 = opt.design == "smooth" ? gpt::Gamma0Design::smooth
                                         : gpt::Gamma0Design::stepwise;
  design.quantile_q = opt.quantile;
  design.n_replications = opt.reps;
  design.base_seed = opt.seed;
  gpt::GrowConfig cfg;
  cfg.min_leaf_size = opt.min_leaf;
  gpt::PenaltyGrid grid;
  grid.selection = gpt::KFoldSel{opt.cv_folds, opt.seed};

  const std::string summary_path =
      opt.out_dir + "/summary_" + design.id() + ".csv";
  std::ofstream summary(summary_path, std::ios::binary);
  if (!summary) throw std::runtime_error("cannot write '" + summary_path + "'");
  summary << gpt::csv_line({"design", "n", "k_n", "replications", "n_failed",
                            "mean_mse", "sd_mse", "cv_folds", "min_leaf_size",
                            "quantile"});
  std::vector<std::string> table_header{"design"}, table_row{design.id()};
  for (std::size_t n : opt.n_list) {
    design.n = n;
    const gpt::MseReport rep = gpt::run_experiment(design, cfg, grid);
    const std::string rep_path = opt.out_dir + "/sim_" + design.id() + "_n" +
                                 std::to_string(n) + ".csv";
    std::ofstream out(rep_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + rep_path + "'");
    out << gpt::csv_line(
        {"design", "n", "k_n", "replication", "mse", "n_leaves", "lambda"});
    for (const gpt::ReplicationRecord& r : rep.replications) {
      out << gpt::csv_line({rep.design_id, std::to_string(n),
                            std::to_string(r.k_n), std::to_string(r.replication),
                            r.failed ? "nan" : gpt::format_double(r.mse),
                            std::to_string(r.n_leaves),
                            gpt::format_double(r.lambda)});
    }
    summary << gpt::csv_line(
        {rep.design_id, std::to_string(n), std::to_string(rep.k_n),
         std::to_string(opt.reps), std::to_string(rep.n_failed),
         gpt::format_double(rep.mean_mse), gpt::format_double(rep.sd_mse),
         std::to_string(opt.cv_folds), std::to_string(opt.min_leaf),
         gpt::format_double(opt.quantile)});
    table_header.push_back("k_n=" + std::to_string(rep.k_n));
    table_row.push_back(gpt::format_double(rep.mean_mse));
    std::cout << "design=" << rep.design_id << " n=" << n << " k_n=" << rep.k_n
              << " mean_mse=" << gpt::format_double(rep.mean_mse)
              << " sd=" << gpt::format_double(rep.sd_mse)
              << " failed=" << rep.n_failed << "\n";
  }
  // one row per design with k_n columns, the table layout of the study
  const std::string table_path = opt.out_dir + "/table_" + design.id() + ".csv";
  std::ofstream table(table_path, std::ios::binary);
  if (!table) throw std::runtime_error("cannot write '" + table_path + "'");
  table << gpt::csv_line(table_header) << gpt::csv_line(table_row);
  return 0;
}

struct SweepOptions {
  std::string data, response, out;
  std::vector<std::string> categorical;
  std::vector<std::string> numeric;
  std::vector<double> quantiles;
  std::vector<double> thresholds;
  std::size_t min_leaf = 20, max_leaves = 0, cv_folds = 5;
  std::uint64_t cv_seed = 0;
};

int run_sweep(const SweepOptions& opt) {
  const gpt::Dataset d = gpt::load_csv(opt.data, opt.response,
                                       to_set(opt.categorical),
                                       to_set(opt.numeric));
  std::ofstream out(opt.out, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + opt.out + "'");
  out << gpt::csv_line({"kind", "grid_value", "threshold_u", "k_n", "n_leaves",
                        "lambda", "gamma_root", "gamma_min_leaf",
                        "gamma_max_leaf", "status"});
  struct Entry {
    bool quantile;
    double value;
  };
  std::vector<Entry> entries;
  for (double q : opt.quantiles) entries.push_back({true, q});
  for (double u : opt.thresholds) entries.push_back({false, u});
  for (const Entry& e : entries) {
    gpt::GrowConfig cfg;
    cfg.min_leaf_size = opt.min_leaf;
    cfg.max_leaves = opt.max_leaves;
    gpt::PenaltyGrid grid;
    grid.selection = gpt::KFoldSel{opt.cv_folds, opt.cv_seed};
    std::vector<std::string> row{e.quantile ? "quantile" : "absolute",
                                 gpt::format_double(e.value)};
    try {
      std::optional<double> tq;
      if (e.quantile) {
        tq = e.value;
        cfg.threshold_u = gpt::quantile_threshold(d, e.value);
      } else {
        cfg.threshold_u = e.value;
      }
      const gpt::LambdaChoice choice = gpt::select_lambda(d, cfg, grid, tq);
      std::vector<const gpt::TreeNode*> leaves;
      gpt::collect_leaves(*choice.tree.root, &leaves);
      double gmin = leaves.front()->params.gamma, gmax = gmin;
      for (const gpt::TreeNode* l : leaves) {
        gmin = std::min(gmin, l->params.gamma);
        gmax = std::max(gmax, l->params.gamma);
      }
      row.insert(row.end(),
                 {gpt::format_double(choice.tree.threshold_u),
                  std::to_string(choice.tree.k_n),
                  std::to_string(choice.tree.n_leaves()),
                  gpt::format_double(choice.lambda),
                  gpt::format_double(choice.tree.root->params.gamma),
                  gpt::format_double(gmin), gpt::format_double(gmax), "ok"});
    } catch (const std::exception& ex) {
      // Per-threshold failures stay in the report instead of aborting the sweep.
      row.insert(row.end(), {"", "", "", "", "", "", "", ex.what()});
    }
    out << gpt::csv_line(row);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap();
  CLI::App app{"Generalized Pareto regression trees for threshold excesses"};
  app.require_subcommand(1);

  FitOptions fit;
  CLI::App* cmd_fit = app.add_subcommand(
      "fit", "Fit and prune a GP regression tree from a CSV file");
  cmd_fit->add_option("--data", fit.data, "training CSV")->required();
  cmd_fit->add_option("--response", fit.response, "response column name")
      ->required();
  cmd_fit->add_option("--categorical", fit.categorical,
                      "columns to force categorical");
  cmd_fit->add_option("--numeric", fit.numeric,
                      "columns that must parse as numeric");
  CLI::Option* ou = cmd_fit->add_option("--threshold-u", fit.threshold_u,
                                        "absolute threshold u");
  CLI::Option* oq = cmd_fit->add_option(
      "--threshold-q", fit.threshold_q,
      "empirical quantile of the response used as threshold");
  ou->excludes(oq);
  cmd_fit->add_option("--min-leaf", fit.min_leaf, "minimal excesses per leaf");
  cmd_fit->add_option("--max-leaves", fit.max_leaves,
                      "cap on the number of leaves (0 = uncapped)");
  cmd_fit->add_option("--max-iter", fit.max_iter,
                      "optimizer iteration cap per leaf fit");
  cmd_fit->add_option("--cv-folds", fit.cv_folds, "cross-validation folds");
  cmd_fit->add_option("--cv-seed", fit.cv_seed, "resampling seed");
  cmd_fit->add_option("--test-fraction", fit.test_fraction,
                      "use a held-out test sample of this training fraction "
                      "instead of k-fold CV");
  cmd_fit->add_option("--lambda", fit.fixed_lambda,
                      "skip penalty selection and prune at this lambda");
  cmd_fit->add_option("--out", fit.out, "tree JSON output")->required();
  cmd_fit->add_option("--dot", fit.dot, "DOT output");
  cmd_fit->add_option("--summary", fit.summary, "leaf summary CSV output");
  cmd_fit->add_option("--qq", fit.qq, "per-leaf QQ coordinates CSV output");
  cmd_fit->add_option("--sigma-scale", fit.sigma_scale,
                      "display scale applied to sigma in the DOT labels");

  std::string pred_tree, pred_data, pred_out;
  CLI::App* cmd_predict =
      app.add_subcommand("predict", "Predict GP parameters for query rows");
  cmd_predict->add_option("--tree", pred_tree, "tree JSON")->required();
  cmd_predict->add_option("--data", pred_data, "query CSV")->required();
  cmd_predict->add_option("--out", pred_out, "output CSV")->required();

  SimulateOptions sim;
  CLI::App* cmd_simulate = app.add_subcommand(
      "simulate", "Replicate the Burr simulation study and report MSE tables");
  cmd_simulate->add_option("--design", sim.design, "step or smooth")
      ->check(CLI::IsMember({"step", "smooth"}));
  cmd_simulate->add_option("--n", sim.n_list, "sample sizes")->required();
  cmd_simulate->add_option("--reps", sim.reps, "replications per size");
  cmd_simulate->add_option("--seed", sim.seed, "base seed");
  cmd_simulate->add_option("--quantile", sim.quantile, "threshold quantile");
  cmd_simulate->add_option("--min-leaf", sim.min_leaf, "minimal leaf size");
  cmd_simulate->add_option("--cv-folds", sim.cv_folds, "CV folds");
  cmd_simulate->add_option("--out-dir", sim.out_dir, "output directory");

  SweepOptions sweep;
  CLI::App* cmd_sweep = app.add_subcommand(
      "sweep", "Refit across a threshold grid and report stability diagnostics");
  cmd_sweep->add_option("--data", sweep.data, "training CSV")->required();
  cmd_sweep->add_option("--response", sweep.response, "response column")
      ->required();
  cmd_sweep->add_option("--categorical", sweep.categorical,
                        "columns to force categorical");
  cmd_sweep->add_option("--numeric", sweep.numeric,
                        "columns that must parse as numeric");
  cmd_sweep->add_option("--quantiles", sweep.quantiles, "quantile grid");
  cmd_sweep->add_option("--thresholds", sweep.thresholds,
                        "absolute threshold grid");
  cmd_sweep->add_option("--min-leaf", sweep.min_leaf, "minimal leaf size");
  cmd_sweep->add_option("--max-leaves", sweep.max_leaves,
                        "cap on the number of leaves (0 = uncapped)");
  cmd_sweep->add_option("--cv-folds", sweep.cv_folds, "CV folds");
  cmd_sweep->add_option("--cv-seed", sweep.cv_seed, "resampling seed");
  cmd_sweep->add_option("--out", sweep.out, "output CSV")->required();

  std::string exp_tree, exp_out;
  double exp_scale = 1.0;
  CLI::App* cmd_export =
      app.add_subcommand("export", "Render a fitted tree as a DOT digraph");
  cmd_export->add_option("--tree", exp_tree, "tree JSON")->required();
  cmd_export->add_option("--out", exp_out, "DOT output")->required();
  cmd_export->add_option("--sigma-scale", exp_scale,
                         "display scale applied to sigma");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(cmd_fit)) {
      fit.has_u = ou->count() > 0;
      fit.has_q = oq->count() > 0;
      if (!fit.has_u && !fit.has_q)
        throw CLI::ValidationError("fit",
                                   "one of --threshold-u/--threshold-q is required");
      return run_fit(fit);
    }
    if (app.got_subcommand(cmd_predict))
      return run_predict(pred_tree, pred_data, pred_out);
    if (app.got_subcommand(cmd_simulate)) return run_simulate(sim);
    if (app.got_subcommand(cmd_sweep)) return run_sweep(sweep);
    if (app.got_subcommand(cmd_export)) {
      write_file(exp_out, gpt::export_dot(gpt::load_tree(exp_tree), exp_scale));
      return 0;
    }
  } catch (const gpt::ParseError& e) {
    std::cerr << "gpt: parse error: " << e.what() << "\n";
    return kExitParse;
  } catch (const gpt::SchemaMismatchError& e) {
    std::cerr << "gpt: schema mismatch: " << e.what() << "\n";
    return kExitParse;
  } catch (const gpt::InsufficientDataError& e) {
    std::cerr << "gpt: insufficient data: " << e.what() << "\n";
    return kExitInsufficientData;
  } catch (const CLI::Error& e) {
    std::cerr << "gpt: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "gpt: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
