// Baseline experiments on the seeded suppression fixture.
//
// Each variant edits the embeddings (or, for attn-zero, the maps) and is
// scored at the last step of the active window: NE attention mass, PE map
// deviation from the unedited rollout, and PSNR/SSIM of the first PE map.
// Prints a table; --json writes the same rows.

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "eots/eots.hpp"

namespace {

using namespace eots;
using nlohmann::json;

struct Row {
  std::string name;
  double ne_mass = 0.0;
  double pe_dev = 0.0;
  double psnr_pe = 0.0;
  double ssim_pe = 0.0;
};

struct Context {
  fixtures::SuppressionFixture fx;
  Rollout baseline;
  Index eval_step = 19;  // last active step of the default window
};

Row score(const std::string& name, const Context& ctx, const AttentionMaps& maps) {
  const auto& fx = ctx.fx;
  const auto& ref = ctx.baseline.maps.at(static_cast<std::size_t>(ctx.eval_step));
  const auto& cfg = fx.model.config();
  Row r;
  r.name = name;
  r.ne_mass = attention_mass(maps, fx.part.ne);
  r.pe_dev = (maps.columns(fx.part.pe) - ref.columns(fx.part.pe)).norm();
  const Index tok = fx.part.pe.front();
  const auto a = attention_field(maps, tok, cfg.grid_h, cfg.grid_w);
  const auto b = attention_field(ref, tok, cfg.grid_h, cfg.grid_w);
  r.psnr_pe = psnr(a, b);
  r.ssim_pe = ssim(a, b);
  return r;
}

// Rollout with fixed embeddings up to the evaluation step; maps there.
AttentionMaps maps_at_eval(const Context& ctx, const Eigen::MatrixXd& c) {
  const Index T = ctx.fx.model.config().timesteps;
  Eigen::MatrixXd z = ctx.fx.z_T;
  for (Index step = 0; step < ctx.eval_step; ++step) z = step_latent(ctx.fx.model, z, T - step, c);
  return attention(ctx.fx.model, z, T - ctx.eval_step, c);
}

Row embedding_variant(const std::string& name, const Context& ctx, const TextEmbeddings& edited) {
  return score(name, ctx, maps_at_eval(ctx, edited.data()));
}

// Zeroes the NE map column at every step (rows are not renormalized).
Row attention_to_zero(const Context& ctx) {
  const auto& fx = ctx.fx;
  const Index T = fx.model.config().timesteps;
  const Eigen::MatrixXd& c = fx.emb.data();
  Eigen::MatrixXd z = fx.z_T;
  AttentionMaps maps;
  for (Index step = 0; step <= ctx.eval_step; ++step) {
    maps = attention(fx.model, z, T - step, c);
    for (Index j : fx.part.ne) maps.A.col(j).setZero();
    if (step < ctx.eval_step) z -= residual_from_maps(fx.model, maps, c) / static_cast<double>(T);
  }
  return score("attn2zero", ctx, maps);
}

Row ito_variant(const std::string& name, const Context& ctx, const SpectrumRule& rule, const ItoConfig& cfg) {
  const auto& fx = ctx.fx;
  const auto r = run(fx.emb, fx.part, rule, fx.model, fx.z_T, cfg);
  const Index t = fx.model.config().timesteps - ctx.eval_step;
  return score(name, ctx, attention(fx.model, r.z_last_active, t, r.last_optimized.data()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Baseline experiments on the seeded suppression fixture"};
  std::uint64_t seed = fixtures::kSuppressionSeed;
  std::optional<std::string> json_out;
  bool skip_ito = false;
  app.add_option("--seed", seed)->capture_default_str();
  app.add_option("--json", json_out, "Write rows as JSON");
  app.add_flag("--skip-ito", skip_ito, "Only run the embedding-level baselines");
  CLI11_PARSE(app, argc, argv);

  try {
    Context ctx{fixtures::suppression_fixture(seed), {}, 19};
    ctx.baseline = plain_rollout(ctx.fx.model, ctx.fx.z_T, ctx.fx.emb.data());
    const auto& fx = ctx.fx;
    const auto& part = fx.part;

    std::vector<Row> rows;
    rows.push_back(score("original", ctx, ctx.baseline.maps.at(19)));
    rows.push_back(embedding_variant("zero NE", ctx, zero_out_tokens(fx.emb, part.ne)));
    rows.push_back(embedding_variant("zero EOT", ctx, zero_out_tokens(fx.emb, part.eot())));
    rows.push_back(embedding_variant("zero NE+EOT", ctx, zero_out_tokens(fx.emb, part.ne_and_eot())));
    for (double gamma : {0.5, 1.0, 2.0, 1e6}) {
      std::ostringstream name;
      name << "soft gamma=" << gamma;
      rows.push_back(embedding_variant(name.str(), ctx, suppress(fx.emb, part, rule::SoftWeight{gamma})));
    }
    rows.push_back(embedding_variant("zero top-2", ctx, suppress(fx.emb, part, rule::ZeroTop{2})));
    rows.push_back(embedding_variant("zero bottom-60", ctx, suppress(fx.emb, part, rule::ZeroBottom{60})));
    rows.push_back(embedding_variant("attenuate 0.1", ctx, suppress(fx.emb, part, rule::Attenuate{0.1})));
    rows.push_back(embedding_variant("strengthen", ctx, suppress(fx.emb, part, rule::Strengthen{})));
    rows.push_back(embedding_variant("mean EOT removed", ctx, remove_mean_eot(fx.emb)));
    rows.push_back(embedding_variant("mean EOT removed + zero NE", ctx, zero_out_tokens(remove_mean_eot(fx.emb), part.ne)));
    rows.push_back(attention_to_zero(ctx));

    if (!skip_ito) {
      rows.push_back(ito_variant("soft gamma=1 + ITO (attention loss)", ctx, rule::SoftWeight{1.0}, {}));
      ItoConfig value_cfg;
      value_cfg.loss = LossKind::kValue;
      rows.push_back(ito_variant("soft gamma=1 + ITO (value loss)", ctx, rule::SoftWeight{1.0}, value_cfg));
      ItoConfig no_pl;
      no_pl.weights.preserve = 0.0;
      rows.push_back(ito_variant("soft gamma=1 + ITO (lambda_pl=0)", ctx, rule::SoftWeight{1.0}, no_pl));
      ItoConfig ne_only;
      ne_only.update = UpdateColumns::kNegativeAndEot;
      rows.push_back(ito_variant("soft gamma=1 + ITO (NE+EOT columns)", ctx, rule::SoftWeight{1.0}, ne_only));
    }

    std::cout << std::left << std::setw(38) << "variant" << std::right << std::setw(12) << "NE mass" << std::setw(12)
              << "PE dev" << std::setw(12) << "PSNR(PE)" << std::setw(10) << "SSIM(PE)" << "\n";
    json arr = json::array();
    for (const auto& r : rows) {
      std::cout << std::left << std::setw(38) << r.name << std::right << std::fixed << std::setprecision(5)
                << std::setw(12) << r.ne_mass << std::setw(12) << r.pe_dev << std::setprecision(2) << std::setw(12)
                << r.psnr_pe << std::setprecision(4) << std::setw(10) << r.ssim_pe << "\n";
      arr.push_back({{"variant", r.name},
                     {"ne_mass", report::number(r.ne_mass)},
                     {"pe_deviation", report::number(r.pe_dev)},
                     {"psnr_pe", report::number(r.psnr_pe)},
                     {"ssim_pe", report::number(r.ssim_pe)}});
    }
    if (json_out) {
      std::ofstream out(*json_out);
      out << json{{"seed", seed}, {"eval_step", ctx.eval_step}, {"rows", arr}}.dump(2) << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_numerical(e.code()) ? 1 : 2;
  }
  return 0;
}
