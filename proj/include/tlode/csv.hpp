#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace tlode {

// Minimal RFC-4180 writer with a fixed header and checked column counts.
// Doubles format via %.17g so equal values always serialize identically.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, std::vector<std::string> header);
  ~CsvWriter();

  void row(const std::vector<std::string>& fields);
  void close();

  static std::string num(double v);
  static std::string num(std::uint64_t v);
  static std::string num(int v);
  static std::string quote(const std::string& field);

 private:
  std::ofstream out_;
  std::string path_;
  std::size_t columns_ = 0;
  bool closed_ = false;
};

}  // namespace tlode
