#pragma once

#include "beamilc/config.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace beamilc {

inline constexpr const char* kVersion = "0.1.0";

/// 64-bit FNV-1a, stable across platforms (std::hash is not).
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw Error("write failed for '" + path.string() + "'");
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json params_json(const BeamParams& p) {
  json j = json::object();
  for (int i = 0; i < BeamParams::kSize; ++i) j[BeamParams::kNames[static_cast<std::size_t>(i)]] = p[i];
  return j;
}

inline json plan_json(const KinematicChain& chain, const PlannedMotion& plan, double dt) {
  return {{"status", to_string(plan.status)},
          {"fallback", plan.fallback},
          {"iterations", plan.iterations},
          {"message", plan.message},
          {"terminal_position_error", plan.terminal_position_error},
          {"terminal_orientation_error", plan.terminal_orientation_error},
          {"terminal_velocity", plan.terminal_velocity},
          {"vibration_cost", plan.vibration_cost},
          {"theta_f", plan.theta_f},
          {"tau_f", plan.tau_f},
          {"limit_usage", limit_usage(chain, plan, dt)}};
}

inline json record_json(const IlcRecord& r) {
  return {{"iteration", r.iteration},
          {"vibration", r.vibration},
          {"predicted_vibration", r.predicted_vibration},
          {"prediction_error", r.prediction_error},
          {"fit_error", r.fit_error},
          {"fit_error_without_d", r.fit_error_without_d},
          {"p", params_json(r.p)},
          {"theta0", r.init.theta0},
          {"tau_hat0", r.init.tau_hat0},
          {"parameter_status", to_string(r.parameter_status)},
          {"disturbance_status", to_string(r.disturbance_status)},
          {"ocp_status", to_string(r.ocp_status)},
          {"parameter_iterations", r.parameter_iterations},
          {"disturbance_iterations", r.disturbance_iterations},
          {"ocp_iterations", r.ocp_iterations},
          {"fallback", r.fallback},
          {"message", r.message}};
}

inline std::string iteration_dir(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "iter_%02d", i);
  return buf;
}

/// One ILC variant: records.json, summary.csv and per-iteration traces.
inline void write_ilc_run(const std::filesystem::path& dir, const KinematicChain& chain, const IlcConfig& cfg,
                          const IlcRun& run) {
  std::filesystem::create_directories(dir);
  json records = json::array();
  std::ostringstream summary;
  summary << "iteration,vibration,predicted_vibration,prediction_error,fit_error,fit_error_without_d";
  for (const char* name : BeamParams::kNames) summary << ',' << name;
  summary << ",fallback\n";
  for (const IlcRecord& r : run.records) {
    records.push_back(record_json(r));
    summary << r.iteration << ',' << format_sig9(r.vibration) << ',' << format_sig9(r.predicted_vibration) << ','
            << format_sig9(r.prediction_error) << ',' << format_sig9(r.fit_error) << ','
            << format_sig9(r.fit_error_without_d);
    for (int i = 0; i < BeamParams::kSize; ++i) summary << ',' << format_sig9(r.p[i]);
    summary << ',' << (r.fallback ? 1 : 0) << '\n';
    const std::filesystem::path it = dir / iteration_dir(r.iteration);
    std::filesystem::create_directories(it);
    write_csv((it / "u.csv").string(), r.u);
    write_csv((it / "measured.csv").string(), r.measured);
    write_csv((it / "predicted.csv").string(), r.predicted);
    write_csv((it / "disturbance.csv").string(), r.d);
  }
  write_json(dir / "records.json",
             {{"learn_disturbance", cfg.learn_disturbance},
              {"motion_end", cfg.motion_end()},
              {"window", cfg.window()},
              {"initial_plan", plan_json(chain, run.initial_plan, cfg.task.dt)},
              {"final_plan", plan_json(chain, run.final_plan, cfg.task.dt)},
              {"records", records}});
  write_text(dir / "summary.csv", summary.str());
  write_csv((dir / "final_u.csv").string(), run.final_plan.u);
}

inline json run_manifest(const RunConfig& cfg, const std::vector<std::string>& variants) {
  return {{"version", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"config_hash", hex64(fnv1a64(cfg.document.dump()))},
          {"seed", cfg.seed},
          {"chain", cfg.chain_file},
          {"prior", params_json(cfg.prior)},
          {"variants", variants}};
}

// ---------------------------------------------------------------- plots

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::string color;
  bool markers = false;
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace detail

/// One chart panel placed at (x0, y0) with size w x h inside an SVG.
inline std::string svg_panel(double x0, double y0, double w, double h, const std::string& title,
                             const std::string& xlabel, const std::string& ylabel, const std::vector<Series>& series,
                             bool log_y = false, bool integer_x = false) {
  using detail::fmt;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  auto ty = [&](double v) { return log_y ? std::log10(std::max(v, 1e-300)) : v; };
  for (const Series& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, ty(s.y[i]));
      ymax = std::max(ymax, ty(s.y[i]));
    }
  }
  if (xmin > xmax) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax - xmin < 1e-12) xmin -= 0.5, xmax += 0.5;
  if (ymax - ymin < 1e-12) ymin -= 0.5, ymax += 0.5;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  const double left = x0 + 70, right = x0 + w - 20, top = y0 + 30, bottom = y0 + h - 45;
  auto px = [&](double v) { return left + (v - xmin) / (xmax - xmin) * (right - left); };
  auto py = [&](double v) { return bottom - (ty(v) - ymin) / (ymax - ymin) * (bottom - top); };

  std::ostringstream os;
  os << "<text x=\"" << fmt(x0 + w / 2) << "\" y=\"" << fmt(y0 + 18) << "\" text-anchor=\"middle\" font-size=\"14\">"
     << detail::escape_xml(title) << "</text>\n";
  os << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(top) << "\" width=\"" << fmt(right - left) << "\" height=\""
     << fmt(bottom - top) << "\" fill=\"none\" stroke=\"#444\"/>\n";
  const bool int_ticks = integer_x && xmax - xmin <= 20;
  if (int_ticks) {
    for (double fx = std::ceil(xmin); fx <= xmax; fx += 1.0) {
      os << "<text x=\"" << fmt(px(fx)) << "\" y=\"" << fmt(bottom + 16) << "\" text-anchor=\"middle\" font-size=\"11\">"
         << detail::tick_label(fx) << "</text>\n";
    }
  }
  for (int t = 0; t <= 4; ++t) {
    const double fx = xmin + (xmax - xmin) * t / 4.0, fy = ymin + (ymax - ymin) * t / 4.0;
    const double gx = left + (right - left) * t / 4.0, gy = bottom - (bottom - top) * t / 4.0;
    if (!int_ticks) {
      os << "<text x=\"" << fmt(gx) << "\" y=\"" << fmt(bottom + 16) << "\" text-anchor=\"middle\" font-size=\"11\">"
         << detail::tick_label(fx) << "</text>\n";
    }
    os << "<text x=\"" << fmt(left - 6) << "\" y=\"" << fmt(gy + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
       << detail::tick_label(log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
    os << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(gy) << "\" x2=\"" << fmt(right) << "\" y2=\"" << fmt(gy)
       << "\" stroke=\"#ddd\"/>\n";
  }
  os << "<text x=\"" << fmt((left + right) / 2) << "\" y=\"" << fmt(bottom + 34)
     << "\" text-anchor=\"middle\" font-size=\"12\">" << detail::escape_xml(xlabel) << "</text>\n";
  os << "<text x=\"" << fmt(x0 + 14) << "\" y=\"" << fmt((top + bottom) / 2) << "\" text-anchor=\"middle\" font-size=\"12\" "
     << "transform=\"rotate(-90 " << fmt(x0 + 14) << ' ' << fmt((top + bottom) / 2) << ")\">"
     << detail::escape_xml(ylabel) << "</text>\n";
  double legend_y = top + 14;
  for (const Series& s : series) {
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) os << (i ? " " : "") << fmt(px(s.x[i])) << ',' << fmt(py(s.y[i]));
    os << "\"/>\n";
    if (s.markers) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        os << "<circle cx=\"" << fmt(px(s.x[i])) << "\" cy=\"" << fmt(py(s.y[i])) << "\" r=\"3\" fill=\"" << s.color
           << "\"/>\n";
      }
    }
    os << "<text x=\"" << fmt(right - 8) << "\" y=\"" << fmt(legend_y) << "\" text-anchor=\"end\" font-size=\"11\" fill=\""
       << s.color << "\">" << detail::escape_xml(s.name) << "</text>\n";
    legend_y += 14;
  }
  return os.str();
}

inline std::string svg_document(double w, double h, const std::string& body) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::fmt(w) << "\" height=\"" << detail::fmt(h)
     << "\" viewBox=\"0 0 " << detail::fmt(w) << ' ' << detail::fmt(h) << "\" font-family=\"sans-serif\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << body << "</svg>\n";
  return os.str();
}

namespace detail {

struct VariantData {
  std::string name;
  std::vector<double> iteration, error, vibration;
  Trajectory first_measured, last_measured, last_predicted;
  long motion_end = 0;
};

inline VariantData load_variant(const std::filesystem::path& dir, const std::string& name) {
  const std::filesystem::path rec = dir / "records.json";
  if (!std::filesystem::exists(rec)) throw Error("missing records: '" + rec.string() + "'");
  const json j = read_json_file(rec.string());
  VariantData v;
  v.name = name;
  v.motion_end = j.value("motion_end", 0L);
  if (!j.contains("records") || j.at("records").empty()) throw Error(rec.string() + ": no records");
  for (const json& r : j.at("records")) {
    v.iteration.push_back(r.at("iteration").get<double>());
    v.error.push_back(r.at("prediction_error").get<double>());
    v.vibration.push_back(r.at("vibration").get<double>());
  }
  const int first = static_cast<int>(v.iteration.front()), last = static_cast<int>(v.iteration.back());
  v.first_measured = read_csv((dir / iteration_dir(first) / "measured.csv").string());
  v.last_measured = read_csv((dir / iteration_dir(last) / "measured.csv").string());
  v.last_predicted = read_csv((dir / iteration_dir(last) / "predicted.csv").string());
  return v;
}

inline Series trace_series(const Trajectory& t, const std::string& name, const std::string& color) {
  Series s{name, {}, {}, color, false};
  for (long i = 0; i < t.rows(); ++i) {
    s.x.push_back(t.time(i));
    s.y.push_back(t.samples(i, 0));
  }
  return s;
}

}  // namespace detail

/// Figures of a run directory: prediction_error.svg (error norm per
/// iteration; measured vs predicted output at the last iteration) and
/// vibration.svg (metric per iteration; output of the first and last
/// iteration). Returns the files written.
inline std::vector<std::string> plot_run(const std::filesystem::path& run_dir) {
  std::vector<detail::VariantData> variants;
  for (const char* name : {"ilc", "ilc-p"}) {
    if (std::filesystem::exists(run_dir / name / "records.json")) variants.push_back(detail::load_variant(run_dir / name, name));
  }
  if (variants.empty()) throw Error("missing records: no ilc/records.json or ilc-p/records.json in '" + run_dir.string() + "'");
  const char* colors[2][2] = {{"#1f77b4", "#9ecae1"}, {"#d62728", "#fcae91"}};

  std::vector<Series> err, vib, fit, traces;
  for (std::size_t k = 0; k < variants.size(); ++k) {
    const auto& v = variants[k];
    err.push_back({v.name, v.iteration, v.error, colors[k][0], true});
    vib.push_back({v.name, v.iteration, v.vibration, colors[k][0], true});
  }
  // traces of the first variant only; the two nearly coincide
  const auto& v0 = variants.front();
  fit.push_back(detail::trace_series(v0.last_measured, v0.name + " measured", colors[0][1]));
  fit.push_back(detail::trace_series(v0.last_predicted, v0.name + " predicted", colors[1][0]));
  traces.push_back(detail::trace_series(v0.first_measured, v0.name + " first iteration", colors[1][1]));
  traces.push_back(detail::trace_series(v0.last_measured, v0.name + " last iteration", colors[0][0]));
  const double w = 800, h = 320;
  std::vector<std::string> written;
  const std::filesystem::path pe = run_dir / "prediction_error.svg";
  write_text(pe, svg_document(w, 2 * h,
                              svg_panel(0, 0, w, h, "Prediction error along the iterations", "iteration",
                                        "||y - y_hat|| (N*m)", err, true, true) +
                                  svg_panel(0, h, w, h, "Measured and predicted output, last iteration", "time (s)",
                                            "tau_hat (N*m)", fit)));
  written.push_back(pe.string());
  const std::filesystem::path vb = run_dir / "vibration.svg";
  write_text(vb, svg_document(w, 2 * h,
                              svg_panel(0, 0, w, h, "Residual vibration metric along the iterations", "iteration",
                                        "V (N*m)", vib, true, true) +
                                  svg_panel(0, h, w, h, "Measured output, first and last iteration", "time (s)",
                                            "tau_hat (N*m)", traces)));
  written.push_back(vb.string());
  return written;
}

}  // namespace beamilc
