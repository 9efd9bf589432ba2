#pragma once

#include "beamilc/error.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace beamilc {

/// Uniformly sampled multichannel time series. Row i is the sample at
/// start_time + i * dt.
struct Trajectory {
  double dt = 1.0;
  double start_time = 0.0;
  Eigen::MatrixXd samples;
  std::vector<std::string> labels;

  Trajectory() = default;
  Trajectory(double dt_, Eigen::MatrixXd samples_, std::vector<std::string> labels_,
             double start_time_ = 0.0)
      : dt(dt_), start_time(start_time_), samples(std::move(samples_)), labels(std::move(labels_)) {
    validate();
  }

  /// Zero-filled trajectory with labels prefix0, prefix1, ...
  static Trajectory zeros(double dt, long rows, long channels, const std::string& prefix) {
    std::vector<std::string> labels;
    for (long c = 0; c < channels; ++c) {
      labels.push_back(channels == 1 ? prefix : prefix + std::to_string(c));
    }
    return Trajectory(dt, Eigen::MatrixXd::Zero(rows, channels), std::move(labels));
  }

  long rows() const { return samples.rows(); }
  long channels() const { return samples.cols(); }
  double time(long i) const { return start_time + static_cast<double>(i) * dt; }
  double duration() const { return static_cast<double>(rows()) * dt; }

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidArgument("trajectory: sample period must be positive");
    if (samples.rows() < 1) throw InvalidArgument("trajectory: needs at least one sample");
    if (static_cast<long>(labels.size()) != samples.cols()) {
      throw DimensionError("trajectory: " + std::to_string(labels.size()) + " labels for " +
                           std::to_string(samples.cols()) + " channels");
    }
  }

  long channel_index(const std::string& label) const {
    for (std::size_t c = 0; c < labels.size(); ++c) {
      if (labels[c] == label) return static_cast<long>(c);
    }
    throw InvalidArgument("trajectory: no channel named '" + label + "'");
  }

  Eigen::VectorXd column(const std::string& label) const { return samples.col(channel_index(label)); }
};

/// Formats a double with 9 significant digits.
inline std::string format_sig9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

/// CSV: header "time,<labels...>", one row per sample, LF line endings.
inline void write_csv(std::ostream& os, const Trajectory& traj) {
  traj.validate();
  os << "time";
  for (const auto& l : traj.labels) os << ',' << l;
  os << '\n';
  for (long i = 0; i < traj.rows(); ++i) {
    os << format_sig9(traj.time(i));
    for (long c = 0; c < traj.channels(); ++c) os << ',' << format_sig9(traj.samples(i, c));
    os << '\n';
  }
}

inline void write_csv(const std::string& path, const Trajectory& traj) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_csv(os, traj);
}

/// Parses a CSV written by write_csv. The sample period is the mean spacing
/// of the time column (1 s if there is a single row).
inline Trajectory read_csv(std::istream& is, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(is, line)) throw Error(source + ":1: empty CSV");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.empty() || header.front() != "time") throw Error(source + ":1: first column must be 'time'");
  std::vector<std::string> labels(header.begin() + 1, header.end());

  std::vector<double> times;
  std::vector<std::vector<double>> rows;
  long line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw Error(source + ":" + std::to_string(line_no) + ": not a number: '" + cell + "'");
      }
    }
    if (values.size() != header.size()) {
      throw Error(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                  " fields, got " + std::to_string(values.size()));
    }
    times.push_back(values.front());
    rows.emplace_back(values.begin() + 1, values.end());
  }
  if (rows.empty()) throw Error(source + ": CSV has no data rows");
  Eigen::MatrixXd samples(static_cast<long>(rows.size()), static_cast<long>(labels.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < labels.size(); ++c) samples(static_cast<long>(i), static_cast<long>(c)) = rows[i][c];
  }
  const double dt =
      times.size() > 1 ? (times.back() - times.front()) / static_cast<double>(times.size() - 1) : 1.0;
  return Trajectory(dt, std::move(samples), std::move(labels), times.front());
}

inline Trajectory read_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "'");
  return read_csv(is, path);
}

}  // namespace beamilc
