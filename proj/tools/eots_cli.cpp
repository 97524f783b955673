// eots: command-line front end.
//
//   eots suppress     regularize the NE/EOT spectrum of an EMB1 file
//   eots analyze      EOT distances, spectra and rank curves
//   eots optimize     full regularize-then-optimize run on the toy denoiser
//   eots gradcheck    finite-difference check of the embedding gradients
//   eots dump-fixture write the seeded fixture (weights, latent, embeddings, maps)
//
// Exit codes: 0 ok, 1 numerical failure, 2 usage or validation error.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "eots/eots.hpp"

namespace fs = std::filesystem;
using eots::Index;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNumerical = 1;
constexpr int kExitUsage = 2;

struct RuleOptions {
  std::string mode = "soft";
  double gamma = 1.0;
  Index k = 2;
  double alpha = 0.001;
  double beta = 1.2;
  double lambda = 1.0;
  double eps = 1e-6;
  double factor = 0.1;

  void add_to(CLI::App& app) {
    app.add_option("--mode", mode, "Spectrum rule")
        ->check(CLI::IsMember({"soft", "topk", "bottomk", "strengthen", "wnnm", "attenuate", "identity"}))
        ->capture_default_str();
    app.add_option("--gamma", gamma, "Suppression level for soft mode")->capture_default_str();
    app.add_option("--k", k, "K for topk/bottomk")->capture_default_str();
    app.add_option("--alpha", alpha, "Exponent for strengthen mode")->capture_default_str();
    app.add_option("--beta", beta, "Scale for strengthen mode")->capture_default_str();
    app.add_option("--lambda", lambda, "Weight scale for wnnm mode, w_i = lambda/(sigma_i+eps)")->capture_default_str();
    app.add_option("--eps", eps, "Epsilon for wnnm weights")->capture_default_str();
    app.add_option("--factor", factor, "Attenuation factor")->capture_default_str();
  }

  eots::SpectrumRule rule() const {
    using namespace eots::rule;
    if (mode == "soft") return SoftWeight{gamma};
    if (mode == "topk") return ZeroTop{k};
    if (mode == "bottomk") return ZeroBottom{k};
    if (mode == "strengthen") return Strengthen{alpha, beta};
    if (mode == "wnnm") return Wnnm{{}, lambda, eps};
    if (mode == "attenuate") return Attenuate{factor};
    return Identity{};
  }
};

std::uint64_t effective_seed(std::uint64_t flag) {
  if (const char* env = std::getenv("EOTS_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw eots::Error(eots::ErrorCode::kInvalidArgument, "EOTS_SEED is not an unsigned integer");
    }
  }
  return flag;
}

void write_json(const std::optional<std::string>& path, const json& j) {
  eots::report::validate_report(j);
  if (path) eots::io::write_text(*path, j.dump(2) + "\n");
}

std::vector<Index> resolve_ne(const std::vector<Index>& flag, const eots::io::Manifest& m) {
  if (!flag.empty()) return flag;
  return m.ne_positions;
}

json distance_summary(const eots::TextEmbeddings& emb, eots::DistanceMetric metric) {
  const Eigen::MatrixXd d = eots::eot_distance_matrix(emb, metric);
  const Index n = d.rows();
  double intra = 0.0, max_intra = 0.0;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) {
      intra += d(i, j);
      max_intra = std::max(max_intra, d(i, j));
    }
  intra /= static_cast<double>(n * (n - 1) / 2);
  double cross = 0.0;
  Index count = 0;
  for (Index e = emb.eot_begin(); e < emb.token_count(); ++e)
    for (Index p = 1; p <= emb.prompt_len(); ++p, ++count)
      cross += eots::column_distance(emb.column(e), emb.column(p), metric);
  return {{"mean_intra_eot", intra},
          {"max_intra_eot", max_intra},
          {"mean_eot_to_prompt", count ? cross / static_cast<double>(count) : 0.0}};
}

// ---------------------------------------------------------------------------

struct SuppressArgs {
  std::string emb;
  std::vector<Index> ne;
  RuleOptions rule;
  std::string out;
  std::optional<std::string> report;
};

int cmd_suppress(const SuppressArgs& a) {
  const auto file = eots::io::read_emb(a.emb);
  const auto part = eots::partition(file.emb.prompt_len(), resolve_ne(a.ne, file.manifest), file.emb.token_count());
  const auto rule = a.rule.rule();
  const auto detail = eots::suppress_detailed(file.emb, part, rule);
  eots::io::write_emb(a.out, detail.output, file.manifest);

  json j = eots::report::envelope("suppress", 0, {{"emb", a.emb}, {"out", a.out}, {"ne", part.ne}});
  j["rule"] = eots::report::rule_json(rule);
  j["spectrum"] = eots::report::suppression_json(detail);
  j["rel_change"] = eots::relative_frobenius_error(detail.output.data(), file.emb.data());
  write_json(a.report, j);
  std::cout << "wrote " << a.out << " (chi " << detail.chi_cols << " cols, rel change "
            << j["rel_change"].get<double>() << ")\n";
  return kExitOk;
}

struct AnalyzeArgs {
  std::string emb;
  std::vector<Index> ne;
  std::string metric = "euclidean";
  std::optional<std::string> json_out;
  std::optional<std::string> csv_prefix;
};

int cmd_analyze(const AnalyzeArgs& a) {
  const auto metric = eots::parse_metric(a.metric);
  const auto file = eots::io::read_emb(a.emb);
  const auto& emb = file.emb;
  const auto psi = eots::eot_matrix(emb);
  const auto curve = eots::rank_curve(psi);
  const Eigen::MatrixXd dist = eots::eot_distance_matrix(emb, metric);

  json j = eots::report::envelope("analyze", 0, {{"emb", a.emb}});
  j["eot_spectrum"] = eots::report::vector_json(curve.sigma);
  j["rank_curve"] = eots::report::rank_curve_json(curve);
  j["distance_metric"] = std::string(eots::metric_name(metric));
  j["distance_summary"] = distance_summary(emb, metric);
  j["distance_matrix"] = eots::report::matrix_json(dist);
  j["mean_eot_norm"] = eots::mean_eot_embedding(emb).norm();
  const auto ne = resolve_ne(a.ne, file.manifest);
  if (!ne.empty()) {
    const auto part = eots::partition(emb.prompt_len(), ne, emb.token_count());
    const auto dec = eots::svd(eots::build_chi(emb, part).chi);
    j["chi_spectrum"] = eots::report::vector_json(dec.sigma);
    j["chi_n0"] = {{"used", dec.sigma.size()}, {"eot_only", std::min(emb.embed_dim(), part.eot_count())}};
  }
  write_json(a.json_out, j);

  if (a.csv_prefix) {
    std::ostringstream rc;
    rc << "k,rel_error,energy_fraction\n";
    rc.precision(17);
    for (const auto& p : curve.points) rc << p.k << ',' << p.rel_error << ',' << p.energy_fraction << '\n';
    eots::io::write_text(*a.csv_prefix + "rank_curve.csv", rc.str());
    std::ostringstream dc;
    dc.precision(17);
    for (Index i = 0; i < dist.rows(); ++i) {
      for (Index k = 0; k < dist.cols(); ++k) dc << (k ? "," : "") << dist(i, k);
      dc << '\n';
    }
    eots::io::write_text(*a.csv_prefix + "distances.csv", dc.str());
  }
  if (!a.json_out) std::cout << j.dump(2) << "\n";
  return kExitOk;
}

struct OptimizeArgs {
  std::optional<std::string> emb;
  std::vector<Index> ne;
  std::optional<std::string> z_T;
  std::uint64_t seed = eots::fixtures::kSuppressionSeed;
  Index T = 50;
  Index cutoff = 20;
  Index iters = 10;
  double eta = 0.1;
  double lambda_pl = 1.0;
  double lambda_nl = 0.5;
  std::string loss = "attention";
  std::string update_cols = "all";
  std::string anchor = "original";
  bool no_halving = false;
  Index grid_h = 8, grid_w = 8, d_latent = 16, d_attn = 32;
  RuleOptions rule;
  std::optional<std::string> trace;
  std::optional<std::string> report;
  std::optional<std::string> maps_dir;
  std::optional<std::string> out;
};

std::string trace_csv(const std::vector<eots::TraceRecord>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "step,t,iter,loss,loss_pl,loss_nl,grad_norm,ne_mass,pe_deviation,eta,eta_halved\n";
  for (const auto& r : trace) {
    os << r.step << ',' << r.t << ',' << r.iter << ',' << r.loss.total << ',' << r.loss.preserve << ','
       << r.loss.suppress << ',' << r.grad_norm << ',' << r.ne_mass << ',' << r.pe_deviation << ',' << r.eta << ','
       << (r.eta_halved ? 1 : 0) << '\n';
  }
  return os.str();
}

int cmd_optimize(const OptimizeArgs& a) {
  const std::uint64_t seed = effective_seed(a.seed);
  eots::ToyDenoiserConfig mcfg;
  mcfg.grid_h = a.grid_h;
  mcfg.grid_w = a.grid_w;
  mcfg.d_latent = a.d_latent;
  mcfg.d_attn = a.d_attn;
  mcfg.timesteps = a.T;
  mcfg.seed = seed;

  std::optional<eots::fixtures::SuppressionFixture> fx;
  std::optional<eots::TextEmbeddings> emb;
  std::optional<eots::TokenPartition> part;
  std::optional<eots::ToyDenoiser> model;
  Eigen::MatrixXd z_T;
  if (a.emb) {
    auto file = eots::io::read_emb(*a.emb);
    mcfg.embed_dim = file.emb.embed_dim();
    part = eots::partition(file.emb.prompt_len(), resolve_ne(a.ne, file.manifest), file.emb.token_count());
    emb = std::move(file.emb);
    model.emplace(mcfg);
    eots::SplitMix64 rng(seed ^ 0x5EEDULL);
    z_T = eots::normal_matrix(mcfg.positions(), mcfg.d_latent, rng, 4.0);
  } else {
    fx = eots::fixtures::suppression_fixture(seed, mcfg);
    emb = fx->emb;
    part = a.ne.empty() ? fx->part : eots::partition(fx->emb.prompt_len(), a.ne, fx->emb.token_count());
    model = fx->model;
    z_T = fx->z_T;
  }
  if (a.z_T) z_T = eots::io::read_matrix(*a.z_T);

  eots::ItoConfig cfg;
  cfg.active_steps = a.cutoff;
  cfg.inner_iters = a.iters;
  cfg.eta = a.eta;
  cfg.weights = {a.lambda_pl, a.lambda_nl};
  cfg.loss = a.loss == "value" ? eots::LossKind::kValue : eots::LossKind::kAttention;
  cfg.update = a.update_cols == "ne-eot" ? eots::UpdateColumns::kNegativeAndEot : eots::UpdateColumns::kAll;
  cfg.anchor = a.anchor == "regularized" ? eots::AnchorSource::kRegularized : eots::AnchorSource::kOriginal;
  cfg.halve_on_increase = !a.no_halving;

  const auto rule = a.rule.rule();
  const eots::Rollout baseline = eots::plain_rollout(*model, z_T, emb->data());
  eots::ItoResult result = [&] {
    try {
      return eots::run(*emb, *part, rule, *model, z_T, cfg);
    } catch (const eots::ItoAborted& e) {
      if (a.trace) eots::io::write_text(*a.trace, trace_csv(e.trace));
      throw;
    }
  }();
  const auto summary = eots::suppression_report(result, baseline, *part);

  if (a.trace) eots::io::write_text(*a.trace, trace_csv(result.trace));
  if (a.out) {
    eots::io::Manifest m;
    m.prompt_text = "optimized embeddings";
    m.prompt_len = result.last_optimized.prompt_len();
    m.ne_positions = part->ne;
    m.source.encoder_name = "eots optimize";
    eots::io::write_emb(*a.out, result.last_optimized, m);
  }

  json maps = json::object();
  if (a.maps_dir && !result.steps.empty()) {
    fs::create_directories(*a.maps_dir);
    const Index step = result.steps.back().step;
    const Index t = result.steps.back().t;
    const auto optimized = eots::attention(*model, result.z_last_active, t, result.last_optimized.data());
    const auto& base_maps = baseline.maps.at(static_cast<std::size_t>(step));
    for (Index j = 1; j <= emb->prompt_len(); ++j) {
      const auto name_opt = "optimized_tok" + std::to_string(j) + ".pgm";
      const auto name_base = "baseline_tok" + std::to_string(j) + ".pgm";
      const auto so = eots::io::write_pgm16(fs::path(*a.maps_dir) / name_opt,
                                            eots::attention_field(optimized, j, mcfg.grid_h, mcfg.grid_w));
      const auto sb = eots::io::write_pgm16(fs::path(*a.maps_dir) / name_base,
                                            eots::attention_field(base_maps, j, mcfg.grid_h, mcfg.grid_w));
      maps[name_opt] = {{"min", so.min}, {"max", so.max}};
      maps[name_base] = {{"min", sb.min}, {"max", sb.max}};
    }
  }

  json config = eots::report::ito_config_json(cfg, a.T);
  config["emb"] = a.emb ? json(*a.emb) : json("synthetic-fixture");
  config["ne"] = part->ne;
  config["grid"] = {a.grid_h, a.grid_w};
  config["d_latent"] = a.d_latent;
  config["d_attn"] = a.d_attn;
  json j = eots::report::envelope("optimize", seed, config);
  j["rule"] = eots::report::rule_json(rule);
  j["spectrum"] = eots::report::suppression_json(result.regularization);
  j["summary"] = eots::report::summary_json(summary);
  j["trace_rows"] = result.trace.size();
  j["maps"] = maps;
  write_json(a.report, j);

  std::cout << "trace rows " << result.trace.size() << ", NE mass " << summary.ne_mass_baseline << " -> "
            << summary.ne_mass_final << " (reduction " << summary.ne_mass_reduction * 100.0 << "%), PE deviation "
            << summary.pe_deviation_final << "\n";
  return kExitOk;
}

struct GradcheckArgs {
  Index instances = 20;
  double h = 1e-5;
  double tol = 1e-6;
  std::uint64_t seed = 1;
  std::optional<std::string> report;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const std::uint64_t seed = effective_seed(a.seed);
  const auto cases = eots::run_gradcheck_suite(a.instances, a.h, seed);
  double worst = 0.0;
  json arr = json::array();
  for (const auto& c : cases) {
    worst = std::max(worst, c.max_rel_error);
    arr.push_back({{"seed", c.seed},
                   {"loss", std::string(eots::loss_kind_name(c.kind))},
                   {"lambda_pl", c.weights.preserve},
                   {"lambda_nl", c.weights.suppress},
                   {"max_rel_error", c.max_rel_error},
                   {"grad_scale", c.grad_scale}});
  }
  const bool passed = worst < a.tol;
  json j = eots::report::envelope("gradcheck", seed, {{"instances", a.instances}, {"h", a.h}});
  j["cases"] = arr;
  j["max_rel_error"] = worst;
  j["tolerance"] = a.tol;
  j["passed"] = passed;
  write_json(a.report, j);
  std::cout << cases.size() << " cases, max relative error " << worst << " (tolerance " << a.tol << "): "
            << (passed ? "PASS" : "FAIL") << "\n";
  return passed ? kExitOk : kExitNumerical;
}

struct DumpArgs {
  std::uint64_t seed = eots::fixtures::kSuppressionSeed;
  std::string out_dir;
};

int cmd_dump_fixture(const DumpArgs& a) {
  const auto fx = eots::fixtures::suppression_fixture(effective_seed(a.seed));
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  const auto& w = fx.model.weights();
  eots::io::write_matrix(dir / "W_Q.emb1", w.W_Q);
  eots::io::write_matrix(dir / "W_K.emb1", w.W_K);
  eots::io::write_matrix(dir / "W_V.emb1", w.W_V);
  eots::io::write_matrix(dir / "W_O.emb1", w.W_O);
  eots::io::write_matrix(dir / "time_embed.emb1", w.time_embed);
  eots::io::write_matrix(dir / "z_T.emb1", fx.z_T);
  eots::io::Manifest m;
  m.prompt_text = "a man without glasses";
  m.tokens = {"a", "man", "without", "glasses"};
  m.prompt_len = fx.emb.prompt_len();
  m.ne_positions = fx.part.ne;
  m.source.encoder_name = "eots synthetic fixture";
  eots::io::write_emb(dir / "embeddings.emb1", fx.emb, m);
  const auto maps = eots::attention(fx.model, fx.z_T, fx.model.config().timesteps, fx.emb.data());
  eots::io::write_matrix(dir / "golden_attention_tT.emb1", maps.A);
  const auto& c = fx.model.config();
  json cfg{{"grid_h", c.grid_h}, {"grid_w", c.grid_w}, {"d_latent", c.d_latent}, {"d_attn", c.d_attn},
           {"timesteps", c.timesteps}, {"embed_dim", c.embed_dim}, {"seed", c.seed}};
  eots::io::write_text(dir / "model.json", cfg.dump(2) + "\n");
  std::cout << "wrote fixture to " << dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic suppression for text-embedding matrices"};
  app.require_subcommand(1);

  SuppressArgs sa;
  auto* sup = app.add_subcommand("suppress", "Regularize the NE+EOT spectrum of an embedding file");
  sup->add_option("--emb", sa.emb, "Input EMB1 file")->required();
  sup->add_option("--ne", sa.ne, "Negative-target positions (default: from manifest)")->delimiter(',');
  sa.rule.add_to(*sup);
  sup->add_option("--out", sa.out, "Output EMB1 file")->required();
  sup->add_option("--report", sa.report, "Report JSON path");

  AnalyzeArgs aa;
  auto* ana = app.add_subcommand("analyze", "EOT distance matrix, spectra and rank curve");
  ana->add_option("--emb", aa.emb, "Input EMB1 file")->required();
  ana->add_option("--ne", aa.ne, "Negative-target positions (default: from manifest)")->delimiter(',');
  ana->add_option("--metric", aa.metric)->check(CLI::IsMember({"euclidean", "cosine"}))->capture_default_str();
  ana->add_option("--json", aa.json_out, "Report JSON path (stdout if omitted)");
  ana->add_option("--csv", aa.csv_prefix, "Prefix for rank_curve.csv and distances.csv");

  OptimizeArgs oa;
  auto* opt = app.add_subcommand("optimize", "Regularize then optimize embeddings on the toy denoiser");
  opt->add_option("--emb", oa.emb, "Input EMB1 file (default: seeded synthetic fixture)");
  opt->add_option("--ne", oa.ne, "Negative-target positions")->delimiter(',');
  opt->add_option("--zT", oa.z_T, "Initial latent as a 2-D EMB1 tensor");
  opt->add_option("--seed", oa.seed, "Seed (EOTS_SEED overrides)")->capture_default_str();
  opt->add_option("--T", oa.T, "Timesteps")->capture_default_str();
  opt->add_option("--cutoff", oa.cutoff, "Optimize during the first N steps")->capture_default_str();
  opt->add_option("--iters", oa.iters, "Inner iterations per step")->capture_default_str();
  opt->add_option("--eta", oa.eta, "Gradient step size")->capture_default_str();
  opt->add_option("--lambda-pl", oa.lambda_pl)->capture_default_str();
  opt->add_option("--lambda-nl", oa.lambda_nl)->capture_default_str();
  opt->add_option("--loss", oa.loss)->check(CLI::IsMember({"attention", "value"}))->capture_default_str();
  opt->add_option("--update-cols", oa.update_cols)->check(CLI::IsMember({"all", "ne-eot"}))->capture_default_str();
  opt->add_option("--anchor", oa.anchor)->check(CLI::IsMember({"original", "regularized"}))->capture_default_str();
  opt->add_flag("--no-halving", oa.no_halving, "Disable the halve-on-increase step-size guard");
  opt->add_option("--grid-h", oa.grid_h)->capture_default_str();
  opt->add_option("--grid-w", oa.grid_w)->capture_default_str();
  opt->add_option("--d-latent", oa.d_latent)->capture_default_str();
  opt->add_option("--d-attn", oa.d_attn)->capture_default_str();
  oa.rule.add_to(*opt);
  opt->add_option("--trace", oa.trace, "Trace CSV path");
  opt->add_option("--report", oa.report, "Report JSON path");
  opt->add_option("--maps-dir", oa.maps_dir, "Directory for per-token PGM attention maps");
  opt->add_option("--out", oa.out, "Write the final optimized embeddings as EMB1");

  GradcheckArgs ga;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradients");
  grad->add_option("--instances", ga.instances)->capture_default_str();
  grad->add_option("--fd-step", ga.h, "Central-difference step")->capture_default_str();
  grad->add_option("--tol", ga.tol)->capture_default_str();
  grad->add_option("--seed", ga.seed, "First instance seed (EOTS_SEED overrides)")->capture_default_str();
  grad->add_option("--report", ga.report, "Report JSON path");

  DumpArgs da;
  auto* dump = app.add_subcommand("dump-fixture", "Write the seeded fixture as EMB1 tensors");
  dump->add_option("--seed", da.seed)->capture_default_str();
  dump->add_option("--out-dir", da.out_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sup) return cmd_suppress(sa);
    if (*ana) return cmd_analyze(aa);
    if (*opt) return cmd_optimize(oa);
    if (*grad) return cmd_gradcheck(ga);
    if (*dump) return cmd_dump_fixture(da);
  } catch (const eots::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return eots::is_numerical(e.code()) ? kExitNumerical : kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
