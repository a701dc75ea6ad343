#include "nimaenh/csv.hpp"

#include "nimaenh/error.hpp"

namespace nimaenh::csv {

std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string format_row(const Row& row) {
  std::string out;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out += ',';
    out += escape(row[i]);
  }
  out += "\r\n";
  return out;
}

std::vector<Row> parse(std::string_view text) {
  std::vector<Row> rows;
  Row row;
  std::string field;
  bool quoted = false;
  bool row_open = false;
  std::size_t quote_start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c != '"') {
        field += c;
      } else if (i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else {
        quoted = false;
      }
      continue;
    }
    row_open = true;
    if (c == '"') {
      quoted = true;
      quote_start = i;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      row_open = false;
    } else {
      field += c;
    }
  }
  if (quoted) throw ParseError("unterminated quoted CSV field", quote_start);
  if (row_open) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

void Table::add(Row row) {
  if (row.size() != header_.size()) {
    throw InvalidArgument("CSV row has " + std::to_string(row.size()) + " fields, header has " +
                          std::to_string(header_.size()));
  }
  rows_.push_back(std::move(row));
}

std::string Table::str() const {
  std::string out = format_row(header_);
  for (const auto& row : rows_) out += format_row(row);
  return out;
}

}  // namespace nimaenh::csv
