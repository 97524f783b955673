#pragma once

// JSON reports. Every report carries the envelope
//   {schema_version, tool, tool_version, command, seed, config, ...}
// and command-specific sections; validate_report() checks both.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "eots/eot_analysis.hpp"
#include "eots/error.hpp"
#include "eots/ito.hpp"
#include "eots/spectrum.hpp"

namespace eots::report {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolName = "eots";
inline constexpr const char* kToolVersion = "0.1.0";

using nlohmann::json;

/// Non-finite doubles have no JSON representation; they are written as strings.
inline json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline double parse_number(const json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::numeric_limits<double>::quiet_NaN();
}

inline json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(number(v[i]));
  return a;
}

inline json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) rows.push_back(vector_json(m.row(i).transpose()));
  return rows;
}

inline json envelope(const std::string& command, std::uint64_t seed, json config) {
  return {{"schema_version", kSchemaVersion}, {"tool", kToolName},   {"tool_version", kToolVersion},
          {"command", command},               {"seed", seed},        {"config", std::move(config)}};
}

inline json rule_json(const SpectrumRule& r) {
  json j{{"mode", rule_name(r)}};
  std::visit(
      [&j](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, rule::SoftWeight>) j["gamma"] = number(v.gamma);
        else if constexpr (std::is_same_v<T, rule::Strengthen>) {
          j["alpha"] = v.alpha;
          j["beta"] = v.beta;
        } else if constexpr (std::is_same_v<T, rule::ZeroTop> || std::is_same_v<T, rule::ZeroBottom>) {
          j["k"] = v.k;
        } else if constexpr (std::is_same_v<T, rule::Wnnm>) {
          if (v.weights.size() > 0) j["weights"] = vector_json(v.weights);
          j["lambda"] = v.lambda;
          j["eps"] = v.eps;
        } else if constexpr (std::is_same_v<T, rule::Attenuate>) {
          j["factor"] = v.factor;
        }
      },
      r);
  return j;
}

inline json suppression_json(const SuppressionDetail& d) {
  return {{"chi_cols", d.chi_cols},
          {"n0_used", d.n0_used},
          {"n0_eot_only", d.n0_eot_only},
          {"sigma_before", vector_json(d.sigma_before)},
          {"sigma_after", vector_json(d.sigma_after)}};
}

inline json rank_curve_json(const RankCurve& c) {
  json pts = json::array();
  for (const auto& p : c.points)
    pts.push_back({{"k", p.k}, {"rel_error", number(p.rel_error)}, {"energy_fraction", number(p.energy_fraction)}});
  return {{"sigma", vector_json(c.sigma)}, {"points", pts}};
}

inline json summary_json(const SuppressionSummary& s) {
  json j{{"final_active_step", s.final_active_step},
         {"ne_mass_baseline", number(s.ne_mass_baseline)},
         {"ne_mass_final", number(s.ne_mass_final)},
         {"ne_mass_reduction", number(s.ne_mass_reduction)},
         {"pe_deviation_final", number(s.pe_deviation_final)},
         {"eta_halvings", s.eta_halvings}};
  json loss = json::array(), ne = json::array(), pe = json::array();
  for (double v : s.loss_curve) loss.push_back(number(v));
  for (double v : s.ne_mass_curve) ne.push_back(number(v));
  for (double v : s.pe_dev_curve) pe.push_back(number(v));
  j["loss_curve"] = loss;
  j["ne_mass_curve"] = ne;
  j["pe_deviation_curve"] = pe;
  return j;
}

inline json ito_config_json(const ItoConfig& c, Index timesteps) {
  return {{"T", timesteps},
          {"active_steps", c.active_steps},
          {"inner_iters", c.inner_iters},
          {"eta", c.eta},
          {"lambda_pl", c.weights.preserve},
          {"lambda_nl", c.weights.suppress},
          {"loss", std::string(loss_kind_name(c.loss))},
          {"update_cols", std::string(update_columns_name(c.update))},
          {"anchor", std::string(anchor_source_name(c.anchor))},
          {"halve_on_increase", c.halve_on_increase}};
}

/// Required sections per command, on top of the envelope.
inline std::vector<std::string> required_sections(const std::string& command) {
  if (command == "suppress") return {"rule", "spectrum"};
  if (command == "analyze") return {"eot_spectrum", "rank_curve", "distance_metric", "distance_summary"};
  if (command == "optimize") return {"rule", "spectrum", "summary", "maps"};
  if (command == "gradcheck") return {"cases", "max_rel_error", "tolerance", "passed"};
  return {};
}

/// Throws kInvalidArgument describing the first violation.
inline void validate_report(const json& j) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, "report schema: " + what); };
  if (!j.is_object()) fail("not an object");
  for (const char* key : {"schema_version", "tool", "tool_version", "command", "seed", "config"})
    if (!j.contains(key)) fail(std::string("missing '") + key + "'");
  if (!j["schema_version"].is_number_integer() || j["schema_version"].get<int>() != kSchemaVersion)
    fail("unsupported schema_version");
  if (j["tool"] != kToolName) fail("tool is not eots");
  if (!j["command"].is_string()) fail("command is not a string");
  if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer()) fail("seed is not an integer");
  if (!j["config"].is_object()) fail("config is not an object");
  const auto cmd = j["command"].get<std::string>();
  const auto sections = required_sections(cmd);
  if (sections.empty()) fail("unknown command '" + cmd + "'");
  for (const auto& s : sections)
    if (!j.contains(s)) fail("command '" + cmd + "' requires '" + s + "'");
}

}  // namespace eots::report
