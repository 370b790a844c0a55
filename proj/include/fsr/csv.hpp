#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace fsr {

enum class ColumnType { kReal, kCategorical };

struct ColumnSpec {
  std::string name;
  ColumnType type = ColumnType::kReal;
  /// Allowed labels for categorical columns; empty accepts anything.
  std::vector<std::string> categories;
  bool allow_missing = false;
  bool required = true;
};

enum class HeaderMode {
  kRequired,
  kAbsent,  // column names come from the schema, in order
  kAuto,    // absent if the first field of the first line parses as a number
};

struct Schema {
  std::vector<ColumnSpec> columns;
  HeaderMode header = HeaderMode::kRequired;
  /// Columns not named in the schema are kept, typed as real.
  bool allow_extra_columns = false;
  bool extra_allow_missing = true;
  std::vector<std::string> missing_tokens{"", "?", "NA"};
};

/// A parsed column. Real columns fill `reals` (NaN marks a missing value);
/// categorical columns fill `labels`.
struct Column {
  std::string name;
  ColumnType type = ColumnType::kReal;
  std::vector<double> reals;
  std::vector<std::string> labels;
};

class RawTable {
 public:
  RawTable() = default;
  RawTable(std::vector<Column> columns, std::size_t rows);

  std::size_t rows() const { return rows_; }
  const std::vector<Column>& columns() const { return columns_; }
  bool has_column(const std::string& name) const;
  /// Throws DataError if absent.
  const Column& column(const std::string& name) const;

 private:
  std::vector<Column> columns_;
  std::size_t rows_ = 0;
};

/// Parses comma-separated values with optional double-quoted fields. Number
/// parsing is locale independent (dot decimal separator).
RawTable parse_csv(std::istream& in, const Schema& schema, const std::string& source = "<stream>");
RawTable load_csv(const std::filesystem::path& path, const Schema& schema);

/// Writes a header line and all rows; reals use the shortest representation
/// that parses back to the same double.
void write_csv(const RawTable& table, std::ostream& out);
void write_csv(const RawTable& table, const std::filesystem::path& path);

std::string format_double(double value);

}  // namespace fsr
