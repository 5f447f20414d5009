#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dmden {

/// Tabular experiment output. Metadata lines are written as `# key = value`
/// before the header row; missing cells are written as empty fields.
class ExperimentReport {
 public:
  explicit ExperimentReport(std::vector<std::string> columns);

  /// Columns of the estimator tables: x, nmse_*, se_*, time_ms_*.
  static std::vector<std::string> estimator_columns();

  void add_metadata(std::string key, std::string value);
  /// Unknown column names throw ParameterError.
  void add_row(const std::map<std::string, double>& cells);

  const std::vector<std::string>& columns() const noexcept { return columns_; }
  const std::vector<std::pair<std::string, std::string>>& metadata() const noexcept { return metadata_; }
  std::size_t row_count() const noexcept { return rows_.size(); }
  std::optional<double> cell(std::size_t row, const std::string& column) const;

  /// UTF-8, `,` separated, LF line endings, shortest round-trip numbers.
  void write_csv(std::ostream& out) const;
  void save_csv(const std::filesystem::path& path) const;

 private:
  std::size_t column_index(const std::string& column) const;

  std::vector<std::string> columns_;
  std::vector<std::pair<std::string, std::string>> metadata_;
  std::vector<std::vector<std::optional<double>>> rows_;
};

}  // namespace dmden
