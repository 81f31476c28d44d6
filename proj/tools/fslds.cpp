#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fslds/analysis.hpp"
#include "fslds/data_io.hpp"
#include "fslds/inference.hpp"
#include "fslds/model.hpp"
#include "fslds/synthetic.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
namespace an = fslds::analysis;
namespace io = fslds::io;
namespace md = fslds::model;
namespace infer = fslds::infer;
namespace synth = fslds::synth;
using fslds::ad::Tensor;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path))
    throw std::invalid_argument(what + " not found: " + path);
}

// real-valued matrix with one labeled column per channel
void write_matrix_csv(const std::string& path, const Tensor& m,
                      const std::vector<std::string>& labels) {
  std::ostringstream out;
  for (int c = 0; c < m.cols(); ++c) {
    if (c) out << ',';
    out << labels[static_cast<size_t>(c)];
  }
  out << '\n';
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << fmt(m(r, c));
    }
    out << '\n';
  }
  write_file(path, out.str());
}

void write_trajectory_csv(const std::string& path,
                          const md::LatentTrajectory& traj) {
  const int K = traj.h.cols();
  std::ostringstream out;
  for (int k = 0; k < K; ++k) out << 'h' << k << ',';
  for (int k = 0; k <= K; ++k) {
    if (k) out << ',';
    out << 'z' << k;
  }
  out << '\n';
  for (int t = 0; t < traj.h.rows(); ++t) {
    for (int k = 0; k < K; ++k) out << fmt(traj.h(t, k)) << ',';
    for (int k = 0; k <= K; ++k) {
      if (k) out << ',';
      out << fmt(traj.z(t, k));
    }
    out << '\n';
  }
  write_file(path, out.str());
}

Tensor transpose(const Tensor& m) {
  Tensor out = Tensor::zeros({m.cols(), m.rows()});
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  return out;
}

bool env_seed(std::uint64_t* out) {
  const char* s = std::getenv("FSLDS_SEED");
  if (!s || !*s) return false;
  char* end = nullptr;
  unsigned long long v = std::strtoull(s, &end, 10);
  if (!end || *end != '\0')
    throw std::invalid_argument(std::string("FSLDS_SEED is not a number: ") +
                                s);
  *out = static_cast<std::uint64_t>(v);
  return true;
}

struct SimulateArgs {
  std::string scenario;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int cmd_simulate(const SimulateArgs& args) {
  synth::Scenario s;
  if (args.scenario == "demo") {
    s = synth::demo_scenario();
  } else {
    require_file(args.scenario, "scenario");
    s = synth::load_scenario(args.scenario);
  }
  std::uint64_t seed = 0;
  if (env_seed(&seed)) s.seed = seed;
  if (args.seed_given) s.seed = args.seed;

  synth::GroundTruth g = synth::generate(s);
  fs::create_directories(args.out);
  io::save_counts_csv(args.out + "/counts.csv", g.counts);
  write_matrix_csv(args.out + "/rates.csv", g.rates,
                   g.counts.channel_labels);
  write_trajectory_csv(args.out + "/trajectory.csv", g.traj);
  synth::save_scenario(args.out + "/scenario.json", s);  // snapshot

  an::Truncated tr = an::truncated_heatmap_data(g.counts.counts);
  an::save_heatmap_svg(args.out + "/counts_heatmap.svg",
                       transpose(tr.clipped), tr.clip,
                       "spike counts, clipped at " + fmt(tr.clip));
  an::save_heatmap_svg(args.out + "/gates_heatmap.svg", transpose(g.traj.h),
                       1.0, "planted gate schedule");
  std::cerr << "simulate: wrote " << s.T << "x" << s.M << " counts to "
            << args.out << "\n";
  return 0;
}

struct FitArgs {
  std::string counts;
  std::string config;
  std::string out;
  int jobs = 1;
  infer::FitConfig flags;  // values for explicitly-passed flags
  // which flags were passed:
  bool has_K = false, has_lambda = false, has_phi_start = false,
       has_phi_end = false, has_phi_rate = false, has_epochs = false,
       has_lr_main = false, has_lr_theta = false, has_switch = false,
       has_restarts = false, has_seed = false, has_hidden = false,
       has_clip = false;
};

int cmd_fit(const FitArgs& args) {
  require_file(args.counts, "counts file");
  md::SpikeCountMatrix y = io::load_counts_csv(args.counts);

  infer::FitConfig cfg;
  if (!args.config.empty()) {
    require_file(args.config, "config file");
    cfg = io::fit_config_from_json(read_file(args.config));
  }
  std::uint64_t seed = 0;
  if (env_seed(&seed)) cfg.seed = seed;
  if (args.has_K) cfg.K = args.flags.K;
  if (args.has_lambda) cfg.lambda_l1 = args.flags.lambda_l1;
  if (args.has_phi_start) cfg.phi_start = args.flags.phi_start;
  if (args.has_phi_end) cfg.phi_end = args.flags.phi_end;
  if (args.has_phi_rate) cfg.phi_rate = args.flags.phi_rate;
  if (args.has_epochs) cfg.epochs = args.flags.epochs;
  if (args.has_lr_main) cfg.lr_main = args.flags.lr_main;
  if (args.has_lr_theta) cfg.lr_theta_initial = args.flags.lr_theta_initial;
  if (args.has_switch)
    cfg.lr_theta_switch_epoch = args.flags.lr_theta_switch_epoch;
  if (args.has_restarts) cfg.n_restarts = args.flags.n_restarts;
  if (args.has_seed) cfg.seed = args.flags.seed;
  if (args.has_hidden) cfg.hidden = args.flags.hidden;
  if (args.has_clip) cfg.grad_clip = args.flags.grad_clip;
  cfg.validate();

  std::vector<std::pair<std::uint64_t, double>> table;
  infer::FitResult best = infer::fit_multi(y, cfg, args.jobs, &table);

  io::save_fit(args.out, best);
  io::save_counts_csv(args.out + "/counts.csv", y);
  std::ostringstream restarts;
  restarts << "seed,final_elbo\n";
  for (auto& [s, e] : table) restarts << s << ',' << fmt(e) << '\n';
  write_file(args.out + "/restarts.csv", restarts.str());

  std::cerr << "fit: kept seed " << best.seed << " with elbo "
            << fmt(best.final_elbo()) << " out of " << table.size()
            << " restarts\n";
  return 0;
}

nlohmann::json options_to_json(const an::AnalyzeOptions& o) {
  return {{"gate_threshold", o.gate_threshold},
          {"min_occupancy", o.min_occupancy},
          {"heatmap_percentile", o.heatmap_percentile},
          {"cosine_on_hard_gates", o.cosine_on_hard_gates}};
}

an::AnalyzeOptions options_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("options json: parse error: ") +
                                e.what());
  }
  an::AnalyzeOptions o;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "gate_threshold")
      o.gate_threshold = it.value().get<double>();
    else if (it.key() == "min_occupancy")
      o.min_occupancy = it.value().get<double>();
    else if (it.key() == "heatmap_percentile")
      o.heatmap_percentile = it.value().get<double>();
    else if (it.key() == "cosine_on_hard_gates")
      o.cosine_on_hard_gates = it.value().get<bool>();
    else
      throw std::invalid_argument("options json: unknown key \"" + it.key() +
                                  "\"");
  }
  return o;
}

struct AnalyzeArgs {
  std::string fit;
  std::string out;
  std::string segments;
  std::string counts;
  std::string layout;
  std::string options;
  an::AnalyzeOptions flags;
  bool has_threshold = false, has_min_occ = false, has_percentile = false;
  bool hard_cosine = false;
};

int cmd_analyze(const AnalyzeArgs& args) {
  require_file(args.fit + "/params.json", "fit directory sidecar");
  infer::FitResult fit;
  try {
    fit = io::load_fit(args.fit);
  } catch (const std::exception& e) {
    throw std::invalid_argument(e.what());  // unreadable fit is input error
  }

  std::string counts_path =
      args.counts.empty() ? args.fit + "/counts.csv" : args.counts;
  require_file(counts_path, "counts file");
  md::SpikeCountMatrix y = io::load_counts_csv(counts_path);

  io::RecordingMeta meta;
  if (!args.segments.empty()) {
    require_file(args.segments, "segments file");
    meta = io::load_meta(args.segments);
  }

  an::AnalyzeOptions opt;
  if (!args.options.empty()) {
    require_file(args.options, "options file");
    opt = options_from_json(read_file(args.options));
  }
  if (args.has_threshold) opt.gate_threshold = args.flags.gate_threshold;
  if (args.has_min_occ) opt.min_occupancy = args.flags.min_occupancy;
  if (args.has_percentile)
    opt.heatmap_percentile = args.flags.heatmap_percentile;
  if (args.hard_cosine) opt.cosine_on_hard_gates = true;

  an::GridLayout layout;
  bool have_layout = false;
  if (!args.layout.empty()) {
    require_file(args.layout, "layout file");
    layout = an::load_grid_layout(args.layout, y.M());
    have_layout = true;
  }

  an::AnalysisResult a = an::analyze(fit, meta, opt);
  fs::create_directories(args.out);
  an::ExportInfo info =
      an::export_figures(fit, a, y, meta, args.out,
                         have_layout ? &layout : nullptr,
                         opt.heatmap_percentile);
  write_file(args.out + "/analyze_options.json",
             options_to_json(opt).dump(2) + "\n");  // snapshot

  std::cerr << "analyze: " << a.retained.size()
            << " retained components, counts clipped at "
            << fmt(info.counts_clip) << ", " << info.files.size()
            << " files in " << args.out << "\n";
  return 0;
}

struct ConcatArgs {
  std::vector<std::string> counts;
  std::string out;
  std::string meta;
  std::string label;
};

int cmd_concat(const ConcatArgs& args) {
  std::vector<md::SpikeCountMatrix> parts;
  for (const std::string& path : args.counts) {
    require_file(path, "counts file");
    parts.push_back(io::load_counts_csv(path));
  }
  auto [combined, meta] = io::concat_recordings(parts);
  meta.label = args.label;
  io::save_counts_csv(args.out, combined);
  io::save_meta(args.meta, meta);

  nlohmann::json snapshot;  // provenance: exactly what was joined
  snapshot["inputs"] = args.counts;
  snapshot["out"] = args.out;
  snapshot["meta"] = args.meta;
  snapshot["label"] = args.label;
  write_file(args.out + ".snapshot.json", snapshot.dump(2) + "\n");

  std::cerr << "concat: " << parts.size() << " recordings -> "
            << combined.T() << " bins\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gated additive Poisson subnetwork model"};
  app.require_subcommand(1);

  SimulateArgs sim;
  CLI::App* simulate =
      app.add_subcommand("simulate", "generate a synthetic recording");
  simulate->add_option("--scenario", sim.scenario,
                       "scenario json path, or \"demo\" for the built-in")
      ->required();
  simulate->add_option("--out", sim.out, "output directory")->required();
  CLI::Option* sim_seed =
      simulate->add_option("--seed", sim.seed, "override the scenario seed");

  FitArgs fit;
  CLI::App* fit_cmd = app.add_subcommand("fit", "fit the model to counts");
  fit_cmd->add_option("--counts", fit.counts, "counts csv")->required();
  fit_cmd->add_option("--config", fit.config, "fit config json");
  fit_cmd->add_option("--out", fit.out, "output fit directory")->required();
  fit_cmd->add_option("--jobs", fit.jobs, "parallel restart workers");
  CLI::Option* f_K = fit_cmd->add_option("--K", fit.flags.K, "gated features");
  CLI::Option* f_lambda =
      fit_cmd->add_option("--lambda-l1", fit.flags.lambda_l1, "gate penalty");
  CLI::Option* f_ps =
      fit_cmd->add_option("--phi-start", fit.flags.phi_start);
  CLI::Option* f_pe = fit_cmd->add_option("--phi-end", fit.flags.phi_end);
  CLI::Option* f_pr = fit_cmd->add_option("--phi-rate", fit.flags.phi_rate);
  CLI::Option* f_ep = fit_cmd->add_option("--epochs", fit.flags.epochs);
  CLI::Option* f_lm = fit_cmd->add_option("--lr-main", fit.flags.lr_main);
  CLI::Option* f_lt =
      fit_cmd->add_option("--lr-theta-initial", fit.flags.lr_theta_initial);
  CLI::Option* f_sw = fit_cmd->add_option("--lr-theta-switch-epoch",
                                          fit.flags.lr_theta_switch_epoch);
  CLI::Option* f_re =
      fit_cmd->add_option("--restarts", fit.flags.n_restarts, "restarts");
  CLI::Option* f_se = fit_cmd->add_option("--seed", fit.flags.seed);
  CLI::Option* f_hi = fit_cmd->add_option("--hidden", fit.flags.hidden);
  CLI::Option* f_gc =
      fit_cmd->add_option("--grad-clip", fit.flags.grad_clip);

  AnalyzeArgs ana;
  CLI::App* analyze = app.add_subcommand("analyze", "post-fit analytics");
  analyze->add_option("--fit", ana.fit, "fit directory")->required();
  analyze->add_option("--out", ana.out, "output directory")->required();
  analyze->add_option("--segments", ana.segments, "recording meta json");
  analyze->add_option("--counts", ana.counts,
                      "counts csv (default: fit directory copy)");
  analyze->add_option("--layout", ana.layout, "channel,x,y layout csv");
  analyze->add_option("--options", ana.options, "analyze options json");
  CLI::Option* a_th =
      analyze->add_option("--threshold", ana.flags.gate_threshold);
  CLI::Option* a_mo =
      analyze->add_option("--min-occupancy", ana.flags.min_occupancy);
  CLI::Option* a_pc =
      analyze->add_option("--percentile", ana.flags.heatmap_percentile);
  analyze->add_flag("--hard-cosine", ana.hard_cosine,
                    "segment cosine on hardened gates");

  ConcatArgs cat;
  CLI::App* concat = app.add_subcommand("concat", "join recordings in time");
  concat->add_option("--counts", cat.counts, "counts csvs in order")
      ->required()
      ->expected(-1);
  concat->add_option("--out", cat.out, "combined counts csv")->required();
  concat->add_option("--meta", cat.meta, "output meta json")->required();
  concat->add_option("--label", cat.label, "recording label");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  sim.seed_given = sim_seed->count() > 0;
  fit.has_K = f_K->count() > 0;
  fit.has_lambda = f_lambda->count() > 0;
  fit.has_phi_start = f_ps->count() > 0;
  fit.has_phi_end = f_pe->count() > 0;
  fit.has_phi_rate = f_pr->count() > 0;
  fit.has_epochs = f_ep->count() > 0;
  fit.has_lr_main = f_lm->count() > 0;
  fit.has_lr_theta = f_lt->count() > 0;
  fit.has_switch = f_sw->count() > 0;
  fit.has_restarts = f_re->count() > 0;
  fit.has_seed = f_se->count() > 0;
  fit.has_hidden = f_hi->count() > 0;
  fit.has_clip = f_gc->count() > 0;
  ana.has_threshold = a_th->count() > 0;
  ana.has_min_occ = a_mo->count() > 0;
  ana.has_percentile = a_pc->count() > 0;

  try {
    if (simulate->parsed()) return cmd_simulate(sim);
    if (fit_cmd->parsed()) return cmd_fit(fit);
    if (analyze->parsed()) return cmd_analyze(ana);
    if (concat->parsed()) return cmd_concat(cat);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
