#include "dmden/report.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>

#include "dmden/error.hpp"
#include "dmden/textio.hpp"

namespace dmden {

ExperimentReport::ExperimentReport(std::vector<std::string> columns) : columns_(std::move(columns)) {
  if (columns_.empty()) throw ParameterError("report: no columns");
}

std::vector<std::string> ExperimentReport::estimator_columns() {
  static const char* estimators[] = {"ls", "cme", "dm_det", "dm_resamp", "dm_mismatch"};
  std::vector<std::string> cols{"x"};
  for (const char* e : estimators) cols.push_back(std::string("nmse_") + e);
  for (const char* e : estimators) cols.push_back(std::string("se_") + e);
  for (const char* e : estimators) cols.push_back(std::string("time_ms_") + e);
  return cols;
}

void ExperimentReport::add_metadata(std::string key, std::string value) {
  metadata_.emplace_back(std::move(key), std::move(value));
}

std::size_t ExperimentReport::column_index(const std::string& column) const {
  const auto it = std::find(columns_.begin(), columns_.end(), column);
  if (it == columns_.end()) throw ParameterError("report: unknown column '" + column + "'");
  return static_cast<std::size_t>(it - columns_.begin());
}

void ExperimentReport::add_row(const std::map<std::string, double>& cells) {
  std::vector<std::optional<double>> row(columns_.size());
  for (const auto& [name, value] : cells) row[column_index(name)] = value;
  rows_.push_back(std::move(row));
}

std::optional<double> ExperimentReport::cell(std::size_t row, const std::string& column) const {
  return rows_.at(row)[column_index(column)];
}

void ExperimentReport::write_csv(std::ostream& out) const {
  for (const auto& [key, value] : metadata_) out << "# " << key << " = " << value << '\n';
  for (std::size_t i = 0; i < columns_.size(); ++i) out << (i ? "," : "") << columns_[i];
  out << '\n';
  for (const auto& row : rows_) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      if (row[i]) out << textio::format_double(*row[i]);
    }
    out << '\n';
  }
}

void ExperimentReport::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_csv(out);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace dmden
