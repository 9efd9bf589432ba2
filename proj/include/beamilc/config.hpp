#pragma once

#include "beamilc/ilc.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>

namespace beamilc {

using json = nlohmann::json;

namespace detail {

inline std::string key_path(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError((path.empty() ? "config" : path) + ": expected an object");
}

inline void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  expect_object(j, path);
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key_path(path, key) + "'");
  }
}

inline double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path + ": expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(path + ": must be finite");
  return v;
}

inline void read(const json& j, const std::string& path, const char* key, double& out) {
  if (j.contains(key)) out = number(j.at(key), key_path(path, key));
}

inline void read(const json& j, const std::string& path, const char* key, int& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_integer()) throw ConfigError(key_path(path, key) + ": expected an integer");
  out = v.get<int>();
}

inline void read(const json& j, const std::string& path, const char* key, bool& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_boolean()) throw ConfigError(key_path(path, key) + ": expected true or false");
  out = j.at(key).get<bool>();
}

inline VectorXd vector(const json& j, const std::string& path, long size = -1) {
  if (!j.is_array()) throw ConfigError(path + ": expected an array of numbers");
  VectorXd v(static_cast<long>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<long>(i)] = number(j[i], path + "[" + std::to_string(i) + "]");
  if (size >= 0 && v.size() != size) {
    throw ConfigError(path + ": expected " + std::to_string(size) + " entries, got " + std::to_string(v.size()));
  }
  return v;
}

inline Matrix3d matrix3(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(path + ": expected 3 rows");
  Matrix3d m;
  for (int r = 0; r < 3; ++r) m.row(r) = vector(j[static_cast<std::size_t>(r)], path + "[" + std::to_string(r) + "]", 3);
  return m;
}

/// Re-throws library validation errors as configuration errors with the
/// section name attached.
template <class F>
void validated(const std::string& section, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

}  // namespace detail

/// Kinematic chain from JSON: modified DH rows {a, d, alpha}, optional tool
/// transform of {b} relative to the last joint frame, and joint limits.
inline KinematicChain chain_from_json(const json& j, const std::string& source = "chain") {
  detail::check_keys(j, "", {"name", "joints", "tool", "limits"});
  if (!j.contains("joints") || !j.at("joints").is_array() || j.at("joints").empty()) {
    throw ConfigError(source + ": 'joints' must be a non-empty array");
  }
  std::vector<Joint> joints;
  for (std::size_t i = 0; i < j.at("joints").size(); ++i) {
    const std::string path = "joints[" + std::to_string(i) + "]";
    const json& row = j.at("joints")[i];
    detail::check_keys(row, path, {"a", "d", "alpha"});
    double a = 0.0, d = 0.0, alpha = 0.0;
    detail::read(row, path, "a", a);
    detail::read(row, path, "d", d);
    detail::read(row, path, "alpha", alpha);
    Joint joint;
    joint.rotation = rot_x(alpha);
    joint.translation = Vector3d(a, 0.0, 0.0) + joint.rotation * Vector3d(0.0, 0.0, d);
    joints.push_back(joint);
  }
  const long n = static_cast<long>(joints.size());
  Vector3d tool_t = Vector3d::Zero();
  Matrix3d tool_r = Matrix3d::Identity();
  if (j.contains("tool")) {
    const json& t = j.at("tool");
    detail::check_keys(t, "tool", {"translation", "rotation"});
    if (t.contains("translation")) tool_t = detail::vector(t.at("translation"), "tool.translation", 3);
    if (t.contains("rotation")) tool_r = detail::matrix3(t.at("rotation"), "tool.rotation");
  }
  if (!j.contains("limits")) throw ConfigError(source + ": missing 'limits'");
  const json& l = j.at("limits");
  detail::check_keys(l, "limits", {"q_min", "q_max", "qd_max", "qdd_max", "jerk_max"});
  JointLimits lim;
  auto limit = [&](const char* key) {
    if (!l.contains(key)) throw ConfigError(source + ": missing 'limits." + key + "'");
    return detail::vector(l.at(key), std::string("limits.") + key, n);
  };
  lim.q_min = limit("q_min");
  lim.q_max = limit("q_max");
  lim.qd_max = limit("qd_max");
  lim.qdd_max = limit("qdd_max");
  lim.jerk_max = limit("jerk_max");
  KinematicChain chain;
  detail::validated(source, [&] { chain = KinematicChain(std::move(joints), tool_t, tool_r, lim); });
  return chain;
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline KinematicChain load_chain(const std::string& path) { return chain_from_json(read_json_file(path), path); }

/// Everything a run needs, parsed and validated before any computation.
struct RunConfig {
  std::string chain_file;
  KinematicChain chain;
  BeamGeometry beam;
  AnalyticInitOptions analytic;
  bool analytic_prior = true;
  BeamParams prior;
  IlcConfig ilc;
  bool ablation = false;  // also run the parameters-only variant
  std::uint64_t seed = 1;
  std::string output = "run";
  json document;  // the parsed input, for the run manifest

  void set_seed(std::uint64_t s) {
    seed = s;
    ilc.plant.seed = s;
  }
};

namespace detail {

inline BeamParams params_from_json(const json& j, const std::string& path) {
  check_keys(j, path, {"k", "c", "m", "l", "a", "b", "tau_e0"});
  BeamParams p;
  for (int i = 0; i < BeamParams::kSize; ++i) {
    if (!j.contains(BeamParams::kNames[static_cast<std::size_t>(i)])) {
      throw ConfigError(path + ": missing '" + BeamParams::kNames[static_cast<std::size_t>(i)] + "'");
    }
  }
  read(j, path, "k", p.k);
  read(j, path, "c", p.c);
  read(j, path, "m", p.m);
  read(j, path, "l", p.l);
  read(j, path, "a", p.a);
  read(j, path, "b", p.b);
  read(j, path, "tau_e0", p.tau_e0);
  validated(path, [&] { p.validate(); });
  return p;
}

inline SegmentParams segment_from_json(const json& j, const std::string& path) {
  check_keys(j, path, {"mass", "length", "stiffness", "damping"});
  SegmentParams s;
  read(j, path, "mass", s.mass);
  read(j, path, "length", s.length);
  read(j, path, "stiffness", s.stiffness);
  read(j, path, "damping", s.damping);
  return s;
}

}  // namespace detail

/// Parses a run configuration; relative file names resolve against
/// `base_dir`.
inline RunConfig parse_run_config(const json& j, const std::filesystem::path& base_dir = ".") {
  using namespace detail;
  check_keys(j, "", {"chain", "beam", "prior", "analytic", "task", "estimation", "ocp", "ilc", "plant", "seed",
                     "output"});
  RunConfig cfg;
  cfg.document = j;

  if (!j.contains("chain") || !j.at("chain").is_string()) throw ConfigError("chain: expected a file name");
  std::filesystem::path chain_path = j.at("chain").get<std::string>();
  if (chain_path.is_relative()) chain_path = base_dir / chain_path;
  cfg.chain_file = chain_path.lexically_normal().string();
  cfg.chain = load_chain(cfg.chain_file);
  const int n = cfg.chain.dof();

  if (j.contains("beam")) {
    const json& b = j.at("beam");
    check_keys(b, "beam", {"length", "width", "thickness", "density", "bending_stiffness"});
    read(b, "beam", "length", cfg.beam.length);
    read(b, "beam", "width", cfg.beam.width);
    read(b, "beam", "thickness", cfg.beam.thickness);
    read(b, "beam", "density", cfg.beam.density);
    read(b, "beam", "bending_stiffness", cfg.beam.bending_stiffness);
  }
  validated("beam", [&] { cfg.beam.validate(); });
  if (j.contains("analytic")) {
    const json& a = j.at("analytic");
    check_keys(a, "analytic", {"damping_ratio", "a", "b", "tau_e0"});
    read(a, "analytic", "damping_ratio", cfg.analytic.damping_ratio);
    read(a, "analytic", "a", cfg.analytic.a);
    read(a, "analytic", "b", cfg.analytic.b);
    read(a, "analytic", "tau_e0", cfg.analytic.tau_e0);
    if (!(cfg.analytic.damping_ratio >= 0 && cfg.analytic.a > 0 && cfg.analytic.b > 0)) {
      throw ConfigError("analytic: damping_ratio must be non-negative, a and b positive");
    }
  }
  if (!j.contains("prior") || (j.at("prior").is_string() && j.at("prior").get<std::string>() == "analytic")) {
    cfg.prior = analytic_init_params(cfg.beam, cfg.analytic);
  } else if (j.at("prior").is_object()) {
    cfg.analytic_prior = false;
    cfg.prior = params_from_json(j.at("prior"), "prior");
  } else {
    throw ConfigError("prior: expected \"analytic\" or an object with k, c, m, l, a, b, tau_e0");
  }
  const BeamParams& p0 = cfg.prior;

  // task
  TaskDefinition& task = cfg.ilc.task;
  {
    if (!j.contains("task")) throw ConfigError("task: missing section");
    const json& t = j.at("task");
    check_keys(t, "task", {"q0", "displacement", "goal_joints", "control_horizon", "prediction_horizon", "dt"});
    if (!t.contains("q0")) throw ConfigError("task: missing 'q0'");
    const VectorXd q0 = vector(t.at("q0"), "task.q0", n);
    if (t.contains("displacement") == t.contains("goal_joints")) {
      throw ConfigError("task: give exactly one of 'displacement' and 'goal_joints'");
    }
    if (t.contains("displacement")) {
      task = TaskDefinition::from_displacement(cfg.chain, q0, Vector3d(vector(t.at("displacement"), "task.displacement", 3)));
    } else {
      task.q0 = q0;
      task.goal_joints = vector(t.at("goal_joints"), "task.goal_joints", n);
    }
    read(t, "task", "control_horizon", task.control_horizon);
    read(t, "task", "prediction_horizon", task.prediction_horizon);
    read(t, "task", "dt", task.dt);
    validated("task", [&] { task.validate(cfg.chain); });
  }

  // estimation
  EstimationConfig& est = cfg.ilc.estimation;
  est = EstimationConfig::defaults(p0);
  if (j.contains("estimation")) {
    const json& e = j.at("estimation");
    check_keys(e, "estimation", {"samples", "dt", "v1", "v2", "w1", "w2", "w3", "max_iterations"});
    int samples = static_cast<int>(est.samples);
    read(e, "estimation", "samples", samples);
    est.samples = samples;
    read(e, "estimation", "dt", est.dt);
    const VectorXd inv_s2 = EstimationConfig::parameter_scale(p0).cwiseAbs2().cwiseInverse();
    double v1 = 1e-6, v2 = 1e-2;
    read(e, "estimation", "v1", v1);
    read(e, "estimation", "v2", v2);
    est.v1 = v1 * inv_s2;
    est.v2 = v2 * inv_s2;
    read(e, "estimation", "w1", est.w1);
    read(e, "estimation", "w2", est.w2);
    read(e, "estimation", "w3", est.w3);
    read(e, "estimation", "max_iterations", est.solver.max_iterations);
  }
  validated("estimation", [&] { est.validate(); });

  // ocp
  OcpOptions& ocp = cfg.ilc.ocp;
  if (j.contains("ocp")) {
    const json& o = j.at("ocp");
    check_keys(o, "ocp", {"q", "r1", "r2", "r0", "rho1", "rho2", "rho3", "gamma", "theta_limit", "max_iterations"});
    read(o, "ocp", "q", ocp.weights.q);
    read(o, "ocp", "r1", ocp.weights.r1);
    read(o, "ocp", "r2", ocp.weights.r2);
    read(o, "ocp", "r0", ocp.weights.r0);
    read(o, "ocp", "rho1", ocp.weights.rho1);
    read(o, "ocp", "rho2", ocp.weights.rho2);
    read(o, "ocp", "rho3", ocp.weights.rho3);
    read(o, "ocp", "gamma", ocp.weights.gamma);
    read(o, "ocp", "theta_limit", ocp.theta_limit);
    read(o, "ocp", "max_iterations", ocp.solver.max_iterations);
  }
  validated("ocp", [&] { ocp.weights.validate(); });
  if (!(ocp.theta_limit > 0)) throw ConfigError("ocp: theta_limit must be positive");
  if (ocp.solver.max_iterations < 0) throw ConfigError("ocp: max_iterations must be non-negative");

  // ilc
  if (j.contains("ilc")) {
    const json& i = j.at("ilc");
    check_keys(i, "ilc", {"iterations", "metric_window", "learn_disturbance", "ablation"});
    read(i, "ilc", "iterations", cfg.ilc.iterations);
    read(i, "ilc", "metric_window", cfg.ilc.metric_window);
    read(i, "ilc", "learn_disturbance", cfg.ilc.learn_disturbance);
    read(i, "ilc", "ablation", cfg.ablation);
  }

  // plant
  PlantConfig& plant = cfg.ilc.plant;
  plant = default_plant_config(p0);
  if (j.contains("plant")) {
    const json& pl = j.at("plant");
    check_keys(pl, "plant", {"kind", "segments", "first_mode_ratio", "second_mode_ratio", "damping_ratio",
                             "k_factor", "c_factor", "m_factor", "l_factor", "a_true", "b_true", "tau_e0_true",
                             "noise_std", "rate_hz"});
    if (pl.contains("kind")) {
      const std::string kind = pl.at("kind").is_string() ? pl.at("kind").get<std::string>() : "";
      if (kind == to_string(TruthKind::two_segment_pendulum)) {
        plant.kind = TruthKind::two_segment_pendulum;
      } else if (kind == to_string(TruthKind::perturbed_single_pendulum)) {
        plant.kind = TruthKind::perturbed_single_pendulum;
      } else {
        throw ConfigError("plant.kind: expected \"two-segment-pendulum\" or \"perturbed-single-pendulum\"");
      }
    }
    double r1 = 0.9, r2 = 3.0, zeta = 0.005;
    read(pl, "plant", "first_mode_ratio", r1);
    read(pl, "plant", "second_mode_ratio", r2);
    read(pl, "plant", "damping_ratio", zeta);
    if (pl.contains("segments")) {
      if (pl.contains("first_mode_ratio") || pl.contains("second_mode_ratio") || pl.contains("damping_ratio")) {
        throw ConfigError("plant: give either 'segments' or the mode ratios, not both");
      }
      const json& segs = pl.at("segments");
      if (!segs.is_array()) throw ConfigError("plant.segments: expected an array");
      plant.segments.clear();
      for (std::size_t s = 0; s < segs.size(); ++s) {
        plant.segments.push_back(segment_from_json(segs[s], "plant.segments[" + std::to_string(s) + "]"));
      }
    } else {
      validated("plant", [&] { plant.segments = default_two_segment(p0, r1, r2, zeta); });
    }
    read(pl, "plant", "k_factor", plant.k_factor);
    read(pl, "plant", "c_factor", plant.c_factor);
    read(pl, "plant", "m_factor", plant.m_factor);
    read(pl, "plant", "l_factor", plant.l_factor);
    read(pl, "plant", "a_true", plant.a_true);
    read(pl, "plant", "b_true", plant.b_true);
    read(pl, "plant", "tau_e0_true", plant.tau_e0_true);
    read(pl, "plant", "noise_std", plant.noise_std);
    read(pl, "plant", "rate_hz", plant.rate_hz);
  }
  validated("plant", [&] { plant.validate(); });

  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw ConfigError("seed: expected a non-negative integer");
    cfg.set_seed(j.at("seed").get<std::uint64_t>());
  } else {
    cfg.set_seed(cfg.seed);
  }
  if (j.contains("output")) {
    if (!j.at("output").is_string()) throw ConfigError("output: expected a directory name");
    cfg.output = j.at("output").get<std::string>();
  }
  validated("ilc", [&] { cfg.ilc.validate(cfg.chain); });
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  const std::filesystem::path p(path);
  return parse_run_config(read_json_file(path), p.parent_path().empty() ? "." : p.parent_path());
}

}  // namespace beamilc
