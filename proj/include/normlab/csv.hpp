#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include "normlab/version.hpp"

namespace normlab {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// CSV emitter. The first row is a comment carrying the artifact version and
/// the config hash; the second is the column header.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& columns,
            std::uint64_t config_hash)
      : f_(path, std::ios::trunc) {
    if (!f_) throw std::runtime_error("cannot open output file: " + path);
    f_ << "# normlab " << kVersion << " config=" << hash_hex(config_hash) << "\n";
    write_row(columns);
  }

  void write_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) f_ << ",";
      f_ << cells[i];
    }
    f_ << "\n";
    if (!f_) throw std::runtime_error("failed writing CSV row");
  }

 private:
  std::ofstream f_;
};

/// Refuses to clobber existing outputs unless forced.
inline void guard_outputs(const std::vector<std::string>& paths, bool force) {
  if (force) return;
  for (const auto& p : paths) {
    if (std::filesystem::exists(p)) {
      throw std::runtime_error("output file exists (use --force to overwrite): " + p);
    }
  }
}

}  // namespace normlab
