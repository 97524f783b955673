#pragma once

// Inference-time text-embedding optimization on the toy denoiser.
//
// The embeddings are regularized once, then for every timestep t = T..1:
// a working copy is reset to the regularized embeddings; while inside the
// active window it takes `inner_iters` gradient steps on the
// preservation/suppression loss against anchors computed from the original
// embeddings at the current latent; the latent is then stepped with the
// working copy.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "eots/attention_maps.hpp"
#include "eots/embedding.hpp"
#include "eots/error.hpp"
#include "eots/metrics.hpp"
#include "eots/spectrum.hpp"
#include "eots/toy_attention.hpp"

namespace eots {

enum class UpdateColumns { kAll, kNegativeAndEot };
enum class AnchorSource { kOriginal, kRegularized };

inline std::string_view update_columns_name(UpdateColumns u) { return u == UpdateColumns::kAll ? "all" : "ne-eot"; }
inline std::string_view anchor_source_name(AnchorSource a) {
  return a == AnchorSource::kOriginal ? "original" : "regularized";
}

struct ItoConfig {
  Index active_steps = 20;  // optimize while the step index from the start is below this
  Index inner_iters = 10;
  double eta = 0.1;
  LossWeights weights;
  LossKind loss = LossKind::kAttention;
  UpdateColumns update = UpdateColumns::kAll;
  AnchorSource anchor = AnchorSource::kOriginal;
  bool halve_on_increase = true;  // halve eta for the rest of a timestep when the loss goes up

  void validate(Index timesteps) const {
    detail::require(inner_iters >= 1, ErrorCode::kInvalidArgument, "inner_iters must be >= 1");
    detail::require(eta >= 0.0 && std::isfinite(eta), ErrorCode::kInvalidArgument, "eta must be finite and >= 0");
    detail::require(active_steps >= 0 && active_steps <= timesteps, ErrorCode::kInvalidArgument,
                    "active window " + std::to_string(active_steps) + " exceeds T=" + std::to_string(timesteps));
  }
};

struct TraceRecord {
  Index step = 0;  // 0-based index from the start of sampling
  Index t = 0;     // diffusion timestep, T..1
  Index iter = 0;
  LossValue loss;  // evaluated before this iteration's update
  double grad_norm = 0.0;
  double ne_mass = 0.0;       // attention mass on NE columns at the working embeddings
  double pe_deviation = 0.0;  // ||hat A_PE - A_PE||_F
  double eta = 0.0;           // step size used for this update
  bool eta_halved = false;
};

/// One active timestep, measured before and after its inner loop.
struct TimestepSummary {
  Index step = 0;
  Index t = 0;
  double ne_mass_anchor = 0.0;  // original embeddings at this latent
  double ne_mass_before = 0.0;
  double ne_mass_after = 0.0;
  double pe_dev_before = 0.0;
  double pe_dev_after = 0.0;
};

struct TimestepResult {
  Eigen::MatrixXd c_out;
  std::vector<TraceRecord> records;
  TimestepSummary summary;
};

namespace detail {

inline void mask_update_columns(Eigen::MatrixXd& grad, const TokenPartition& part, UpdateColumns update) {
  if (update == UpdateColumns::kAll) return;
  Eigen::MatrixXd masked = Eigen::MatrixXd::Zero(grad.rows(), grad.cols());
  for (Index j : part.ne_and_eot()) masked.col(j) = grad.col(j);
  grad = std::move(masked);
}

}  // namespace detail

/// Runs the inner loop at a single timestep. `c_anchor` provides the reference maps.
inline TimestepResult optimize_at_timestep(const ToyDenoiser& model, const Eigen::MatrixXd& z, Index t,
                                           const Eigen::MatrixXd& c_anchor, const Eigen::MatrixXd& c_in,
                                           const TokenPartition& part, const ItoConfig& cfg, Index step = 0) {
  cfg.validate(model.config().timesteps);
  TimestepResult out;
  out.c_out = c_in;
  out.summary.step = step;
  out.summary.t = t;

  // The anchors depend only on (z, t, c_anchor), all fixed inside the loop,
  // so one evaluation serves every iteration.
  const Anchors anchors = make_anchors(model, z, t, c_anchor, part, cfg.loss);
  const AttentionMaps anchor_maps = attention(model, z, t, c_anchor);
  const Eigen::MatrixXd anchor_pe = anchor_maps.columns(part.pe);
  out.summary.ne_mass_anchor = attention_mass(anchor_maps, part.ne);

  double eta = cfg.eta;
  double prev_loss = 0.0;
  for (Index it = 0; it < cfg.inner_iters; ++it) {
    LossGradient g = grad_loss_wrt_embeddings(model, z, t, anchors, out.c_out, part, cfg.weights);
    detail::mask_update_columns(g.grad, part, cfg.update);

    TraceRecord rec;
    rec.step = step;
    rec.t = t;
    rec.iter = it;
    rec.loss = g.loss;
    rec.grad_norm = g.grad.norm();
    rec.ne_mass = attention_mass(g.maps, part.ne);
    rec.pe_deviation = (g.maps.columns(part.pe) - anchor_pe).norm();
    if (it == 0) {
      out.summary.ne_mass_before = rec.ne_mass;
      out.summary.pe_dev_before = rec.pe_deviation;
    } else if (cfg.halve_on_increase && g.loss.total > prev_loss) {
      eta *= 0.5;
      rec.eta_halved = true;
    }
    rec.eta = eta;
    prev_loss = g.loss.total;
    out.records.push_back(rec);

    out.c_out -= eta * g.grad;
    if (!out.c_out.allFinite())
      throw Error(ErrorCode::kNonFinite, "embedding update diverged at t=" + std::to_string(t));
  }

  const AttentionMaps final_maps = attention(model, z, t, out.c_out);
  out.summary.ne_mass_after = attention_mass(final_maps, part.ne);
  out.summary.pe_dev_after = (final_maps.columns(part.pe) - anchor_pe).norm();
  return out;
}

struct ItoResult {
  Eigen::MatrixXd z0;
  TextEmbeddings regularized;     // output of the spectrum rule, reused at every timestep
  TextEmbeddings last_optimized;  // working embeddings of the final active timestep
  Eigen::MatrixXd z_last_active;  // latent the final active timestep was optimized at
  std::vector<TraceRecord> trace;
  std::vector<TimestepSummary> steps;
  SuppressionDetail regularization;
};

/// Thrown when the loop hits a non-finite value; carries the trace up to the failure.
class ItoAborted : public Error {
 public:
  ItoAborted(const Error& cause, std::vector<TraceRecord> partial)
      : Error(cause.code(), std::string("optimization aborted: ") + cause.what()), trace(std::move(partial)) {}

  std::vector<TraceRecord> trace;
};

inline ItoResult run(const TextEmbeddings& emb, const TokenPartition& part, const SpectrumRule& rule,
                     const ToyDenoiser& model, const Eigen::MatrixXd& z_T, const ItoConfig& cfg) {
  const Index T = model.config().timesteps;
  cfg.validate(T);
  part.check_compatible(emb);

  SuppressionDetail reg = suppress_detailed(emb, part, rule);
  const Eigen::MatrixXd& c = emb.data();
  const Eigen::MatrixXd c_hat = reg.output.data();
  const Eigen::MatrixXd& c_anchor = cfg.anchor == AnchorSource::kOriginal ? c : c_hat;

  ItoResult out{z_T, reg.output, reg.output, z_T, {}, {}, std::move(reg)};
  Eigen::MatrixXd& z = out.z0;
  Eigen::MatrixXd last = c_hat;
  for (Index step = 0; step < T; ++step) {
    const Index t = T - step;
    if (step < cfg.active_steps) {
      try {
        TimestepResult ts = optimize_at_timestep(model, z, t, c_anchor, c_hat, part, cfg, step);
        out.trace.insert(out.trace.end(), ts.records.begin(), ts.records.end());
        out.steps.push_back(ts.summary);
        last = std::move(ts.c_out);
        out.z_last_active = z;
      } catch (const Error& e) {
        if (!is_numerical(e.code())) throw;
        throw ItoAborted(e, std::move(out.trace));
      }
      z = step_latent(model, z, t, last);
    } else {
      z = step_latent(model, z, t, c_hat);
    }
    if (!z.allFinite()) {
      throw ItoAborted(Error(ErrorCode::kNonFinite, "latent diverged at t=" + std::to_string(t)),
                       std::move(out.trace));
    }
  }
  out.last_optimized = emb.with_data(std::move(last));
  return out;
}

/// Sampling with fixed embeddings and no optimization; keeps the maps of every step.
struct Rollout {
  Eigen::MatrixXd z0;
  std::vector<AttentionMaps> maps;  // maps[step] at t = T - step
};

inline Rollout plain_rollout(const ToyDenoiser& model, const Eigen::MatrixXd& z_T, const Eigen::MatrixXd& c) {
  const Index T = model.config().timesteps;
  Rollout out{z_T, {}};
  out.maps.reserve(static_cast<std::size_t>(T));
  for (Index step = 0; step < T; ++step) {
    const Index t = T - step;
    ForwardResult f = forward(model, out.z0, t, c);
    out.z0 -= f.residual / static_cast<double>(T);
    out.maps.push_back(std::move(f.maps));
  }
  return out;
}

struct SuppressionSummary {
  Index final_active_step = -1;
  double ne_mass_baseline = 0.0;   // unsuppressed rollout at the final active step
  double ne_mass_final = 0.0;      // optimized embeddings at the final active step
  double ne_mass_reduction = 0.0;  // 1 - final / baseline
  double pe_deviation_final = 0.0;
  Index eta_halvings = 0;
  std::vector<double> loss_curve;       // per trace row
  std::vector<double> ne_mass_curve;    // per active timestep, after optimization
  std::vector<double> pe_dev_curve;     // per active timestep, after optimization
};

/// Summarizes a run against the unsuppressed rollout `baseline`.
inline SuppressionSummary suppression_report(const ItoResult& result, const Rollout& baseline,
                                             const TokenPartition& part) {
  SuppressionSummary s;
  for (const auto& r : result.trace) {
    s.loss_curve.push_back(r.loss.total);
    if (r.eta_halved) ++s.eta_halvings;
  }
  for (const auto& st : result.steps) {
    s.ne_mass_curve.push_back(st.ne_mass_after);
    s.pe_dev_curve.push_back(st.pe_dev_after);
  }
  if (result.steps.empty()) return s;
  const TimestepSummary& last = result.steps.back();
  s.final_active_step = last.step;
  s.ne_mass_final = last.ne_mass_after;
  s.pe_deviation_final = last.pe_dev_after;
  s.ne_mass_baseline = attention_mass(baseline.maps.at(static_cast<std::size_t>(last.step)), part.ne);
  s.ne_mass_reduction = s.ne_mass_baseline == 0.0 ? 0.0 : 1.0 - s.ne_mass_final / s.ne_mass_baseline;
  return s;
}

}  // namespace eots
