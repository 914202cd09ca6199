#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mogernn/common.hpp"
#include "mogernn/graph.hpp"
#include "mogernn/tensor.hpp"

// Dataset ingestion. Interchange is deliberately plain: a speed CSV
// (`timestamp,<id1>,<id2>,…`, ISO-8601 first column, constant frequency), a
// distance CSV (`from_id,to_id,distance_meters`, missing pairs unconnected)
// and a JSON metadata sidecar. Values round-trip bitwise through
// to_chars/from_chars shortest form.

namespace mogernn {

// ----- numeric formatting (lossless round trip) -----

inline std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const char* what) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError(std::string("could not parse ") + what + ": '" + s + "'");
  return v;
}

// ----- civil time (UTC, no leap seconds) -----

namespace detail {

inline std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (static_cast<unsigned>(m) + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = static_cast<int>(yy + (m <= 2));
}

}  // namespace detail

// "YYYY-MM-DD HH:MM:SS" (or with 'T') to seconds since the Unix epoch.
inline std::int64_t parse_timestamp(const std::string& s) {
  int y, mo, d, h = 0, mi = 0, se = 0;
  char sep;
  std::istringstream is(s);
  if (!(is >> y >> sep >> mo >> sep >> d)) throw DataError("bad timestamp: '" + s + "'");
  if (is.peek() == ' ' || is.peek() == 'T') {
    is.get();
    if (!(is >> h >> sep >> mi)) throw DataError("bad timestamp: '" + s + "'");
    if (is.peek() == ':') {
      is.get();
      if (!(is >> se)) throw DataError("bad timestamp: '" + s + "'");
    }
  }
  return detail::days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + se;
}

inline std::string format_timestamp(std::int64_t epoch_s) {
  std::int64_t days = epoch_s / 86400;
  std::int64_t rem = epoch_s % 86400;
  if (rem < 0) {
    rem += 86400;
    days -= 1;
  }
  int y, m, d;
  detail::civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d %02d:%02d:%02d", y, m, d,
                static_cast<int>(rem / 3600), static_cast<int>(rem / 60 % 60),
                static_cast<int>(rem % 60));
  return buf;
}

// ----- datasets -----

struct DatasetMetadata {
  double frequency_min = 5.0;
  std::string units = "mph";
  bool zero_is_missing = false;
};

inline DatasetMetadata load_metadata_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open metadata file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed metadata " + path + ": " + e.what());
  }
  DatasetMetadata m;
  m.frequency_min = j.at("frequency_min").get<double>();
  m.units = j.at("units").get<std::string>();
  m.zero_is_missing = j.at("zero_is_missing").get<bool>();
  return m;
}

inline void save_metadata_json(const std::string& path, const DatasetMetadata& m,
                               const nlohmann::json& extra = nlohmann::json()) {
  nlohmann::json j;
  j["frequency_min"] = m.frequency_min;
  j["units"] = m.units;
  j["zero_is_missing"] = m.zero_is_missing;
  if (!extra.is_null()) j["generator"] = extra;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write metadata file: " + path);
  out << j.dump(2) << '\n';
}

struct SpeedDataset {
  std::vector<std::string> sensor_ids;  // N labels
  Tensor series;                        // N×L, invalid entries stored as 0
  std::vector<std::uint8_t> valid;      // N·L row-major
  double frequency_min = 5.0;
  std::string units = "mph";
  bool zero_is_missing = false;
  std::int64_t start_epoch_s = 0;

  std::size_t n_sensors() const { return sensor_ids.size(); }
  std::size_t length() const { return series.rank() == 2 ? series.cols() : 0; }

  bool is_valid(std::size_t node, std::size_t t) const { return valid[node * length() + t] != 0; }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline SpeedDataset load_speed_matrix(const std::string& path,
                                      const DatasetMetadata& meta = DatasetMetadata{}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open speed file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty speed file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "timestamp")
    throw DataError("speed file header must start with 'timestamp': " + path);

  SpeedDataset ds;
  ds.sensor_ids.assign(header.begin() + 1, header.end());
  ds.frequency_min = meta.frequency_min;
  ds.units = meta.units;
  ds.zero_is_missing = meta.zero_is_missing;

  const std::size_t n = ds.sensor_ids.size();
  std::vector<double> values;      // column-major rows appended; transposed later
  std::vector<std::uint8_t> flags;
  std::vector<std::int64_t> stamps;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != n + 1)
      throw DataError("ragged row " + std::to_string(row_no) + " in " + path + ": expected " +
                      std::to_string(n + 1) + " fields, got " + std::to_string(fields.size()));
    stamps.push_back(parse_timestamp(fields[0]));
    for (std::size_t j = 0; j < n; ++j) {
      const std::string& f = fields[j + 1];
      bool invalid = f.empty() || f == "nan" || f == "NaN";
      double v = invalid ? 0.0 : parse_double(f, "speed value");
      if (!invalid && !std::isfinite(v)) invalid = true;
      if (ds.zero_is_missing && v == 0.0) invalid = true;
      values.push_back(invalid ? 0.0 : v);
      flags.push_back(invalid ? 0 : 1);
    }
  }
  const std::size_t l = stamps.size();
  if (l == 0) throw DataError("speed file has no data rows: " + path);
  for (std::size_t t = 1; t < l; ++t)
    if (stamps[t] <= stamps[t - 1])
      throw DataError("non-monotone timestamps at row " + std::to_string(t + 2) + " in " + path);
  if (l >= 2) {
    const std::int64_t step = stamps[1] - stamps[0];
    for (std::size_t t = 1; t < l; ++t)
      if (stamps[t] - stamps[t - 1] != step)
        throw DataError("sampling frequency drift at row " + std::to_string(t + 2) + " in " + path);
    ds.frequency_min = static_cast<double>(step) / 60.0;
  }
  ds.start_epoch_s = stamps[0];

  ds.series = Tensor::zeros({n, l});
  ds.valid.assign(n * l, 0);
  for (std::size_t t = 0; t < l; ++t)
    for (std::size_t j = 0; j < n; ++j) {
      ds.series.set(j, t, values[t * n + j]);
      ds.valid[j * l + t] = flags[t * n + j];
    }
  return ds;
}

inline void save_speed_matrix(const std::string& path, const SpeedDataset& ds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write speed file: " + path);
  out << "timestamp";
  for (const auto& id : ds.sensor_ids) out << ',' << id;
  out << '\n';
  const std::size_t n = ds.n_sensors(), l = ds.length();
  const std::int64_t step = static_cast<std::int64_t>(ds.frequency_min * 60.0);
  for (std::size_t t = 0; t < l; ++t) {
    out << format_timestamp(ds.start_epoch_s + static_cast<std::int64_t>(t) * step);
    for (std::size_t j = 0; j < n; ++j) {
      out << ',';
      if (ds.valid[j * l + t])
        out << format_double(ds.series.at(j, t));
      else if (ds.zero_is_missing)
        out << "0";
      // invalid with zero_is_missing=false: empty field
    }
    out << '\n';
  }
}

// Distance CSV over a known sensor order. Missing pairs are unconnected (∞);
// the diagonal defaults to zero travel distance.
inline Tensor load_distance_matrix(const std::string& path,
                                   const std::vector<std::string>& sensor_ids) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open distance file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty distance file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (split_csv_line(line) != std::vector<std::string>{"from_id", "to_id", "distance_meters"})
    throw DataError("distance file header must be 'from_id,to_id,distance_meters': " + path);

  const std::size_t n = sensor_ids.size();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) index[sensor_ids[i]] = i;

  Tensor d = Tensor::full({n, n}, kInf);
  for (std::size_t i = 0; i < n; ++i) d.set(i, i, 0.0);
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 3)
      throw DataError("ragged row " + std::to_string(row_no) + " in " + path);
    auto a = index.find(f[0]);
    auto b = index.find(f[1]);
    if (a == index.end() || b == index.end()) continue;  // pairs outside the node set are ignored
    d.set(a->second, b->second, parse_double(f[2], "distance"));
  }
  return d;
}

inline void save_distance_matrix(const std::string& path, const Tensor& distances,
                                 const std::vector<std::string>& sensor_ids) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write distance file: " + path);
  out << "from_id,to_id,distance_meters\n";
  const std::size_t n = sensor_ids.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double v = distances.at(i, j);
      if (std::isfinite(v)) out << sensor_ids[i] << ',' << sensor_ids[j] << ',' << format_double(v) << '\n';
    }
}

// Chronological split at ⌊ratio·L⌋; no shuffling across the boundary.
inline std::pair<SpeedDataset, SpeedDataset> split_train_test(const SpeedDataset& ds, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValueError("split_train_test: ratio must be in (0,1)");
  const std::size_t n = ds.n_sensors(), l = ds.length();
  const std::size_t l1 = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(l)));
  auto cut = [&](std::size_t begin, std::size_t count) {
    SpeedDataset part;
    part.sensor_ids = ds.sensor_ids;
    part.frequency_min = ds.frequency_min;
    part.units = ds.units;
    part.zero_is_missing = ds.zero_is_missing;
    part.start_epoch_s =
        ds.start_epoch_s + static_cast<std::int64_t>(begin * ds.frequency_min * 60.0);
    part.series = Tensor::zeros({n, count});
    part.valid.assign(n * count, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < count; ++t) {
        part.series.set(i, t, ds.series.at(i, begin + t));
        part.valid[i * count + t] = ds.valid[i * l + begin + t];
      }
    return part;
  };
  return {cut(0, l1), cut(l1, l - l1)};
}

// Restrict to a node subset, order preserved.
inline SpeedDataset select_sensors(const SpeedDataset& ds, const std::vector<std::size_t>& keep) {
  SpeedDataset out;
  out.frequency_min = ds.frequency_min;
  out.units = ds.units;
  out.zero_is_missing = ds.zero_is_missing;
  out.start_epoch_s = ds.start_epoch_s;
  const std::size_t l = ds.length();
  out.series = Tensor::zeros({keep.size(), l});
  out.valid.assign(keep.size() * l, 0);
  for (std::size_t a = 0; a < keep.size(); ++a) {
    out.sensor_ids.push_back(ds.sensor_ids.at(keep[a]));
    for (std::size_t t = 0; t < l; ++t) {
      out.series.set(a, t, ds.series.at(keep[a], t));
      out.valid[a * l + t] = ds.valid[keep[a] * l + t];
    }
  }
  return out;
}

// Z-score over valid entries; zero-filling happens after normalization so
// the mask sentinel sits at the mean.
struct Normalization {
  double mean = 0.0;
  double std_dev = 1.0;

  static Normalization fit(const Tensor& series, const std::vector<std::uint8_t>& valid) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < series.size(); ++i)
      if (valid[i]) {
        sum += series.data()[i];
        ++count;
      }
    if (count == 0) throw DataError("Normalization::fit: no valid entries");
    Normalization n;
    n.mean = sum / static_cast<double>(count);
    double var = 0.0;
    for (std::size_t i = 0; i < series.size(); ++i)
      if (valid[i]) var += (series.data()[i] - n.mean) * (series.data()[i] - n.mean);
    n.std_dev = std::sqrt(var / static_cast<double>(count));
    if (n.std_dev == 0.0) n.std_dev = 1.0;
    return n;
  }

  double apply(double v) const { return (v - mean) / std_dev; }
  double invert(double z) const { return z * std_dev + mean; }
};

}  // namespace mogernn
