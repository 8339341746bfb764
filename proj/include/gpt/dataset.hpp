#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "gpt/errors.hpp"

namespace gpt {

struct NumericColumn {
  std::vector<double> values;
};

struct CategoricalColumn {
  std::vector<std::int32_t> codes;   // indices into levels
  std::vector<std::string> levels;   // sorted, unique
};

struct Column {
  std::string name;
  std::variant<NumericColumn, CategoricalColumn> data;

  bool is_numeric() const {
    return std::holds_alternative<NumericColumn>(data);
  }
  const NumericColumn& numeric() const { return std::get<NumericColumn>(data); }
  const CategoricalColumn& categorical() const {
    return std::get<CategoricalColumn>(data);
  }
  std::size_t size() const;
};

/// Column-oriented table of a response and mixed covariates. All columns
/// have response.size() rows; categorical codes index their level table.
struct Dataset {
  std::vector<double> response;
  std::vector<Column> columns;

  std::size_t n_rows() const { return response.size(); }
  void validate() const;
};

/// Training-schema record carried by fitted trees so predictions can map
/// query columns back onto training columns.
struct ColumnSchema {
  std::string name;
  bool numeric = true;
  std::vector<std::string> levels;  // empty for numeric columns
};

std::vector<ColumnSchema> schema_of(const Dataset& d);

/// Rows with response strictly above u, response replaced by the excess
/// response - u; row order preserved. Throws InsufficientDataError when
/// nothing exceeds u.
Dataset pot_filter(const Dataset& d, double u);

/// Empirical q-quantile of the response, type-7 linear interpolation.
double quantile_threshold(const Dataset& d, double q);

}  // namespace gpt
