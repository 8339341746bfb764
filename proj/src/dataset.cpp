#include "gpt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gpt {

std::size_t Column::size() const {
  if (is_numeric()) return numeric().values.size();
  return categorical().codes.size();
}

void Dataset::validate() const {
  for (const Column& c : columns) {
    if (c.size() != n_rows())
      throw std::invalid_argument("dataset: column '" + c.name +
                                  "' length mismatch");
    if (!c.is_numeric()) {
      const auto& cat = c.categorical();
      for (std::int32_t code : cat.codes)
        if (code < 0 || static_cast<std::size_t>(code) >= cat.levels.size())
          throw std::invalid_argument("dataset: column '" + c.name +
                                      "' has a code outside its level table");
    }
  }
}

std::vector<ColumnSchema> schema_of(const Dataset& d) {
  std::vector<ColumnSchema> out;
  out.reserve(d.columns.size());
  for (const Column& c : d.columns) {
    ColumnSchema s;
    s.name = c.name;
    s.numeric = c.is_numeric();
    if (!s.numeric) s.levels = c.categorical().levels;
    out.push_back(std::move(s));
  }
  return out;
}

Dataset pot_filter(const Dataset& d, double u) {
  if (!std::isfinite(u)) throw std::invalid_argument("pot_filter: u not finite");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < d.n_rows(); ++i)
    if (d.response[i] > u) keep.push_back(i);
  if (keep.empty())
    throw InsufficientDataError("pot_filter: no observation exceeds the threshold");
  Dataset out;
  out.response.reserve(keep.size());
  for (std::size_t i : keep) out.response.push_back(d.response[i] - u);
  out.columns.reserve(d.columns.size());
  for (const Column& c : d.columns) {
    Column nc;
    nc.name = c.name;
    if (c.is_numeric()) {
      NumericColumn num;
      num.values.reserve(keep.size());
      for (std::size_t i : keep) num.values.push_back(c.numeric().values[i]);
      nc.data = std::move(num);
    } else {
      CategoricalColumn cat;
      cat.levels = c.categorical().levels;
      cat.codes.reserve(keep.size());
      for (std::size_t i : keep) cat.codes.push_back(c.categorical().codes[i]);
      nc.data = std::move(cat);
    }
    out.columns.push_back(std::move(nc));
  }
  return out;
}

double quantile_threshold(const Dataset& d, double q) {
  if (!(q > 0.0) || !(q < 1.0))
    throw std::domain_error("quantile_threshold: q must lie in (0,1)");
  if (d.n_rows() == 0)
    throw InsufficientDataError("quantile_threshold: empty dataset");
  std::vector<double> s(d.response);
  std::sort(s.begin(), s.end());
  const double h = static_cast<double>(s.size() - 1) * q;
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= s.size()) return s.back();
  return s[lo] + (h - static_cast<double>(lo)) * (s[lo + 1] - s[lo]);
}

}  // namespace gpt
