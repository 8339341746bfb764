#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gpt/dataset.hpp"
#include "gpt/tree.hpp"

namespace gpt {

/// RFC 4180 CSV: comma-separated, double-quote escaping, UTF-8, CRLF or
/// LF. Returned rows exclude the header, which is written to *header.
std::vector<std::vector<std::string>> read_csv(const std::string& path,
                                               std::vector<std::string>* header);

/// Loads a dataset: the response column is selected by name, remaining
/// columns are typed numeric when every value parses as a finite number.
/// force_categorical and force_numeric override the inference; a
/// non-numeric token in a declared-numeric column is a parse error naming
/// the cell. Rows with a missing response are rejected (skipped); missing
/// covariate cells are parse errors.
Dataset load_csv(const std::string& path, const std::string& response_column,
                 const std::set<std::string>& force_categorical = {},
                 const std::set<std::string>& force_numeric = {});

/// Tree document, schema_version 1. parse(serialize(t)) reproduces t
/// exactly; doubles survive the round trip bit for bit.
std::string tree_to_json(const Tree& t);
Tree tree_from_json(const std::string& text);
void save_tree(const Tree& t, const std::string& path);
Tree load_tree(const std::string& path);

/// DOT digraph; leaf labels carry gamma, sigma (optionally rescaled for
/// display), and the share of observations.
std::string export_dot(const Tree& t, double sigma_scale = 1.0);

struct LeafSummaryRow {
  std::int32_t leaf_id = -1;
  double gamma = 0.0;
  double sigma = 0.0;
  double share = 0.0;  // of the k_n excesses
  std::size_t n_obs = 0;
  double empirical_median = 0.0;
  double empirical_mean = 0.0;
  double theoretical_median = 0.0;
  std::optional<double> theoretical_mean;  // empty = infinite
  FitStatus status = FitStatus::ok;
};

/// Per-leaf summary over the excesses the tree was fitted on (d must be
/// the unfiltered training data; it is re-filtered at the tree threshold).
std::vector<LeafSummaryRow> leaf_summary(const Tree& t, const Dataset& d);

void write_leaf_summary_csv(const std::vector<LeafSummaryRow>& rows,
                            const std::string& path);

/// Per-leaf QQ coordinates: empirical quantiles of the leaf excesses
/// against the fitted GP quantiles at the same plotting positions.
void write_qq_csv(const Tree& t, const Dataset& d, const std::string& path);

/// 17-significant-digit decimal, locale-independent.
std::string format_double(double v);

/// One CSV record, quoting per RFC 4180.
std::string csv_line(const std::vector<std::string>& fields);

}  // namespace gpt
