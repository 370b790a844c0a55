#include "fsr/csv.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>

#include "fsr/errors.hpp"

namespace fsr {
namespace {

std::vector<std::string> split_line(const std::string& line, const std::string& source,
                                    std::size_t line_no) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted) {
    throw DataError(source + ":" + std::to_string(line_no) + ": unterminated quoted field");
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::optional<double> parse_number(const std::string& text) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || first == last) return std::nullopt;
  return value;
}

}  // namespace

RawTable::RawTable(std::vector<Column> columns, std::size_t rows)
    : columns_(std::move(columns)), rows_(rows) {}

bool RawTable::has_column(const std::string& name) const {
  return std::any_of(columns_.begin(), columns_.end(),
                     [&](const Column& c) { return c.name == name; });
}

const Column& RawTable::column(const std::string& name) const {
  for (const Column& c : columns_) {
    if (c.name == name) return c;
  }
  throw DataError("missing column '" + name + "'");
}

RawTable parse_csv(std::istream& in, const Schema& schema, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> pending;  // first data line when the header is absent
  std::vector<std::string> names;

  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!trim(line).empty()) return true;
    }
    return false;
  };

  bool have_first = next_line();
  HeaderMode mode = schema.header;
  if (mode == HeaderMode::kAuto) {
    mode = HeaderMode::kRequired;
    if (have_first) {
      const auto fields = split_line(line, source, line_no);
      if (!fields.empty() && parse_number(trim(fields[0]))) mode = HeaderMode::kAbsent;
    }
  }

  if (mode == HeaderMode::kRequired) {
    if (!have_first) throw DataError(source + ": empty file, expected a header line");
    for (auto& f : split_line(line, source, line_no)) names.push_back(trim(f));
    have_first = false;
  } else {
    for (const ColumnSpec& c : schema.columns) names.push_back(c.name);
  }

  // Resolve each file column against the schema.
  std::vector<Column> columns;
  std::vector<const ColumnSpec*> specs;
  ColumnSpec extra_spec;
  extra_spec.allow_missing = schema.extra_allow_missing;
  for (const std::string& name : names) {
    const auto it = std::find_if(schema.columns.begin(), schema.columns.end(),
                                 [&](const ColumnSpec& c) { return c.name == name; });
    if (it == schema.columns.end()) {
      if (!schema.allow_extra_columns) {
        throw DataError(source + ": unexpected column '" + name + "'");
      }
      specs.push_back(&extra_spec);
    } else {
      specs.push_back(&*it);
    }
    columns.push_back(Column{name, specs.back()->type, {}, {}});
  }
  for (const ColumnSpec& c : schema.columns) {
    if (c.required && std::find(names.begin(), names.end(), c.name) == names.end()) {
      throw DataError(source + ": schema column '" + c.name + "' not found in header");
    }
  }

  const auto is_missing = [&](const std::string& v) {
    return std::find(schema.missing_tokens.begin(), schema.missing_tokens.end(), v) !=
           schema.missing_tokens.end();
  };

  std::size_t rows = 0;
  while (have_first || next_line()) {
    have_first = false;
    auto fields = split_line(line, source, line_no);
    if (fields.size() != names.size()) {
      throw DataError(source + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(names.size()) + " fields, found " +
                      std::to_string(fields.size()));
    }
    for (std::size_t j = 0; j < fields.size(); ++j) {
      const std::string value = trim(fields[j]);
      const ColumnSpec& spec = *specs[j];
      Column& col = columns[j];
      const auto where = [&] {
        return source + ":" + std::to_string(line_no) + " (row " + std::to_string(rows + 1) +
               "), column '" + col.name + "'";
      };
      if (spec.type == ColumnType::kReal) {
        if (is_missing(value)) {
          if (!spec.allow_missing) throw DataError(where() + ": missing value");
          col.reals.push_back(std::numeric_limits<double>::quiet_NaN());
        } else if (const auto number = parse_number(value)) {
          col.reals.push_back(*number);
        } else {
          throw DataError(where() + ": cannot parse '" + value + "' as a number");
        }
      } else {
        if (is_missing(value) && !spec.allow_missing) {
          throw DataError(where() + ": missing value");
        }
        if (!spec.categories.empty() &&
            std::find(spec.categories.begin(), spec.categories.end(), value) ==
                spec.categories.end()) {
          throw DataError(where() + ": unknown category '" + value + "'");
        }
        col.labels.push_back(value);
      }
    }
    ++rows;
  }
  return RawTable(std::move(columns), rows);
}

RawTable load_csv(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_csv(in, schema, path.string());
}

std::string format_double(double value) {
  if (std::isnan(value)) return "";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

void write_csv(const RawTable& table, std::ostream& out) {
  const auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  const auto& cols = table.columns();
  for (std::size_t j = 0; j < cols.size(); ++j) out << (j ? "," : "") << quote(cols[j].name);
  out << '\n';
  for (std::size_t i = 0; i < table.rows(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (j) out << ',';
      if (cols[j].type == ColumnType::kReal) {
        out << format_double(cols[j].reals[i]);
      } else {
        out << quote(cols[j].labels[i]);
      }
    }
    out << '\n';
  }
}

void write_csv(const RawTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_csv(table, out);
}

}  // namespace fsr
