#pragma once

#include <cstdio>
#include <string>
#include <vector>

namespace funcspace {

// Formats a double with enough digits to round-trip exactly.
inline std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string csv_num(long v) { return std::to_string(v); }
inline std::string csv_num(int v) { return std::to_string(v); }

// Accumulates RFC-4180 rows (CRLF line endings, quoting only when needed)
// into a string for atomic emission.
class CsvBuilder {
 public:
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ += ',';
      append_cell(cells[i]);
    }
    out_ += "\r\n";
  }

  const std::string& str() const { return out_; }

 private:
  void append_cell(const std::string& cell) {
    const bool needs_quote = cell.find_first_of(",\"\r\n") != std::string::npos;
    if (!needs_quote) {
      out_ += cell;
      return;
    }
    out_ += '"';
    for (char c : cell) {
      if (c == '"') out_ += '"';
      out_ += c;
    }
    out_ += '"';
  }

  std::string out_;
};

}  // namespace funcspace
