#include "tlode/csv.hpp"

#include <cstdio>

#include "tlode/error.hpp"

namespace tlode {

CsvWriter::CsvWriter(const std::string& path, std::vector<std::string> header)
    : out_(path), path_(path), columns_(header.size()) {
  if (!out_) throw IoError("cannot open '" + path + "' for writing");
  if (columns_ == 0) throw ShapeError("csv: header must not be empty");
  row(header);
}

CsvWriter::~CsvWriter() {
  if (!closed_) out_.flush();
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  if (closed_) throw IoError("csv: writer for '" + path_ + "' is closed");
  if (fields.size() != columns_) {
    throw ShapeError("csv: row with " + std::to_string(fields.size()) + " fields in a " +
                     std::to_string(columns_) + "-column file");
  }
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out_ << ',';
    out_ << quote(fields[i]);
  }
  out_ << "\r\n";
}

void CsvWriter::close() {
  if (closed_) return;
  closed_ = true;
  if (!out_.flush()) throw IoError("write to '" + path_ + "' failed");
  out_.close();
}

std::string CsvWriter::num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string CsvWriter::num(std::uint64_t v) { return std::to_string(v); }

std::string CsvWriter::num(int v) { return std::to_string(v); }

std::string CsvWriter::quote(const std::string& field) {
  bool needs = false;
  for (char c : field) {
    if (c == ',' || c == '"' || c == '\n' || c == '\r') {
      needs = true;
      break;
    }
  }
  if (!needs) return field;
  std::string q = "\"";
  for (char c : field) {
    if (c == '"') q += "\"\"";
    else q += c;
  }
  q += '"';
  return q;
}

}  // namespace tlode
