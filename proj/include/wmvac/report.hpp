#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "wmvac/hash.hpp"

namespace wmvac {

// Locale-independent shortest-roundtrip formatting; reports must be
// byte-identical across runs.
inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string fmt_int(std::int64_t v) { return std::to_string(v); }

// Running sums for mean and sample standard deviation.
struct Stat {
  double sum = 0.0;
  double sumsq = 0.0;
  std::int64_t n = 0;

  void add(double v) {
    sum += v;
    sumsq += v * v;
    ++n;
  }
  double mean() const { return n > 0 ? sum / static_cast<double>(n) : 0.0; }
  double stddev() const {
    if (n < 2) return 0.0;
    const double m = mean();
    const double var = (sumsq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1);
    return var > 0.0 ? std::sqrt(var) : 0.0;
  }
};

struct CsvTable {
  std::string name;  // file stem
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row) {
    if (row.size() != columns.size())
      throw std::logic_error("CsvTable " + name + ": row width " + std::to_string(row.size()) +
                             " != " + std::to_string(columns.size()));
    rows.push_back(std::move(row));
  }
};

// One experiment's output: provenance JSON plus CSV tables.
struct Report {
  std::string name;
  nlohmann::json provenance;
  std::vector<CsvTable> tables;

  // Writes <name>.json and one <table>.csv per table into dir.
  void write_to(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    {
      std::ofstream os(dir / (name + ".json"), std::ios::binary);
      if (!os) throw std::runtime_error("report: cannot write " + (dir / (name + ".json")).string());
      os << provenance.dump(2) << "\n";
    }
    for (const auto& t : tables) {
      std::ofstream os(dir / (t.name + ".csv"), std::ios::binary);
      if (!os) throw std::runtime_error("report: cannot write " + (dir / (t.name + ".csv")).string());
      for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << t.columns[i];
      os << "\n";
      for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
        os << "\n";
      }
    }
  }
};

}  // namespace wmvac
