#pragma once

// RFC 4180 CSV: comma separated, CRLF line ends, fields quoted when they
// hold a comma, quote, CR or LF, with embedded quotes doubled.

#include <string>
#include <string_view>
#include <vector>

namespace nimaenh::csv {

using Row = std::vector<std::string>;

std::string escape(std::string_view field);
std::string format_row(const Row& row);

// Accepts LF or CRLF line ends. Throws ParseError on an unterminated quote.
std::vector<Row> parse(std::string_view text);

class Table {
 public:
  explicit Table(Row header) : header_(std::move(header)) {}
  void add(Row row);
  std::string str() const;
  std::size_t rows() const { return rows_.size(); }

 private:
  Row header_;
  std::vector<Row> rows_;
};

}  // namespace nimaenh::csv
