#pragma once

// CSV and JSON artifacts. Numbers are written with 17 significant digits.

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "dbridge/errors.hpp"
#include "dbridge/inference.hpp"
#include "dbridge/path.hpp"

namespace dbridge {

using Json = nlohmann::json;

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline std::ofstream open_output(const std::filesystem::path& file) {
  if (file.has_parent_path()) ensure_directory(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  return out;
}

inline void finish(std::ofstream& out, const std::filesystem::path& file) {
  out.flush();
  if (!out) throw IoError("write to " + file.string() + " failed");
}

/// Header "t,x", one row per grid point.
inline void write_path_csv(const std::filesystem::path& file, const GridPath& p) {
  auto out = open_output(file);
  out << "t,x\n";
  for (std::size_t i = 0; i < p.values.size(); ++i)
    out << format_double(p.time(i)) << ',' << format_double(p.values[i]) << '\n';
  finish(out, file);
}

/// Long format with header "sample_id,t,x".
inline void write_paths_long_csv(const std::filesystem::path& file, std::span<const GridPath> paths) {
  auto out = open_output(file);
  out << "sample_id,t,x\n";
  for (std::size_t j = 0; j < paths.size(); ++j)
    for (std::size_t i = 0; i < paths[j].values.size(); ++i)
      out << j << ',' << format_double(paths[j].time(i)) << ',' << format_double(paths[j].values[i]) << '\n';
  finish(out, file);
}

inline constexpr std::size_t kMaxSeparatePathFiles = 1000;

/// One file per path up to kMaxSeparatePathFiles paths, otherwise one long CSV.
/// Returns the written file names relative to `dir`.
inline std::vector<std::string> write_paths(const std::filesystem::path& dir, const std::string& stem,
                                            std::span<const GridPath> paths) {
  ensure_directory(dir);
  std::vector<std::string> names;
  if (paths.size() > kMaxSeparatePathFiles) {
    names.push_back(stem + "_all.csv");
    write_paths_long_csv(dir / names.back(), paths);
    return names;
  }
  for (std::size_t j = 0; j < paths.size(); ++j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "_%05zu.csv", j);
    names.push_back(stem + buf);
    write_path_csv(dir / names.back(), paths[j]);
  }
  return names;
}

inline void write_values_csv(const std::filesystem::path& file, const std::string& header,
                             std::span<const double> values) {
  auto out = open_output(file);
  out << header << '\n';
  for (double v : values) out << format_double(v) << '\n';
  finish(out, file);
}

inline void write_json(const std::filesystem::path& file, const Json& j) {
  auto out = open_output(file);
  out << j.dump(2) << '\n';
  finish(out, file);
}

inline Json read_json(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw UsageError("malformed JSON in " + file.string() + ": " + e.what());
  }
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;

  const std::vector<double>& column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return columns[i];
    throw UsageError("CSV has no column '" + name + "'");
  }
};

/// Numeric CSV with a header row.
inline CsvTable read_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw UsageError(file.string() + " is empty");
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
      cells.push_back(cell);
    }
    return cells;
  };
  t.header = split(line);
  t.columns.resize(t.header.size());
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    if (cells.size() != t.header.size())
      throw UsageError(file.string() + ":" + std::to_string(row) + ": wrong number of fields");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[i], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cells[i].size() || cells[i].empty())
        throw UsageError(file.string() + ":" + std::to_string(row) + ": not a number: '" + cells[i] + "'");
      t.columns[i].push_back(v);
    }
  }
  return t;
}

/// Observation data with columns t and x.
inline DiscreteSample read_data_csv(const std::filesystem::path& file) {
  const CsvTable t = read_csv(file);
  return DiscreteSample(t.column("t"), t.column("x"));
}

inline void write_data_csv(const std::filesystem::path& file, const DiscreteSample& data) {
  auto out = open_output(file);
  out << "t,x\n";
  for (std::size_t i = 0; i < data.size(); ++i)
    out << format_double(data.times[i]) << ',' << format_double(data.values[i]) << '\n';
  finish(out, file);
}

/// Sample values: the named column, or the last column when `column` is empty.
inline std::vector<double> read_sample_csv(const std::filesystem::path& file, const std::string& column = {}) {
  CsvTable t = read_csv(file);
  if (t.header.empty()) throw UsageError(file.string() + " has no columns");
  std::vector<double> v = column.empty() ? t.columns.back() : t.column(column);
  if (v.empty()) throw UsageError(file.string() + " has no rows");
  return v;
}

}  // namespace dbridge
