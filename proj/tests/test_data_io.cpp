#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "fslds/data_io.hpp"
#include "fslds/distributions.hpp"
#include "fslds/inference.hpp"
#include "fslds/model.hpp"
#include "fslds/rng.hpp"
#include "json.hpp"

using fslds::Rng;
using fslds::ad::Tensor;
namespace fs = std::filesystem;
namespace io = fslds::io;
namespace md = fslds::model;
namespace infer = fslds::infer;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("fslds_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("binning honors half-open bins and keeps the partial tail") {
  io::SpikeEventList e;
  e.M = 2;
  e.duration_seconds = 2.0;
  e.events = {{0.1, 0}, {0.5, 0}, {1.2, 0}};
  md::SpikeCountMatrix y = io::bin_events(e, 1.0);
  CHECK(y.T() == 2);
  CHECK(y.M() == 2);
  CHECK(y.counts(0, 0) == 2.0);
  CHECK(y.counts(1, 0) == 1.0);
  CHECK(y.counts(0, 1) == 0.0);
  CHECK(y.counts(1, 1) == 0.0);
  CHECK(y.bin_width_seconds == 1.0);

  // An event at exactly one bin width belongs to the second bin.
  io::SpikeEventList b;
  b.M = 1;
  b.duration_seconds = 1.0;
  b.events = {{0.5, 0}};
  md::SpikeCountMatrix yb = io::bin_events(b, 0.5);
  CHECK(yb.T() == 2);
  CHECK(yb.counts(0, 0) == 0.0);
  CHECK(yb.counts(1, 0) == 1.0);

  // Empty list: all zeros; fractional duration rounds the bin count up.
  io::SpikeEventList z;
  z.M = 3;
  z.duration_seconds = 3.0;
  CHECK(io::bin_events(z, 1.0).counts.data == Tensor::zeros({3, 3}).data);
  z.duration_seconds = 2.5;
  CHECK(io::bin_events(z, 1.0).T() == 3);

  io::SpikeEventList bad = e;
  bad.events.push_back({2.0, 0});  // at duration -> outside [0, duration)
  CHECK_THROWS_AS(io::bin_events(bad, 1.0), std::invalid_argument);
  bad = e;
  bad.events.push_back({0.3, 2});  // channel out of range
  CHECK_THROWS_AS(io::bin_events(bad, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(io::bin_events(e, 0.0), std::invalid_argument);
  io::SpikeEventList one_bin;
  one_bin.M = 1;
  one_bin.duration_seconds = 0.7;
  CHECK_THROWS_AS(io::bin_events(one_bin, 1.0), std::invalid_argument);
}

TEST_CASE("binning conserves event mass for any width") {
  Rng rng(321);
  io::SpikeEventList e;
  e.M = 5;
  e.duration_seconds = 97.3;
  const int n = 2000;
  for (int i = 0; i < n; ++i)
    e.events.push_back({rng.uniform(0.0, e.duration_seconds),
                        static_cast<int>(rng.uniform(0.0, 5.0))});
  for (double w : {1.0, 0.37, 2.5, 13.9}) {
    md::SpikeCountMatrix y = io::bin_events(e, w);
    CHECK(y.T() == static_cast<int>(std::ceil(e.duration_seconds / w)));
    double mass = 0.0;
    for (double c : y.counts.data) mass += c;
    CHECK(mass == static_cast<double>(n));
  }
}

TEST_CASE("counts csv round-trips and reports bad cells by row") {
  fs::path dir = fresh_dir("counts_csv");
  write_text(dir / "tiny.csv", "e1,e2\n0,3\n1,2\n");
  md::SpikeCountMatrix y = io::load_counts_csv((dir / "tiny.csv").string());
  CHECK(y.T() == 2);
  CHECK(y.M() == 2);
  CHECK(y.channel_labels == std::vector<std::string>{"e1", "e2"});
  CHECK(y.counts.data == std::vector<double>{0.0, 3.0, 1.0, 2.0});

  Rng rng(4);
  md::SpikeCountMatrix r;
  r.counts = Tensor::zeros({7, 3});
  for (double& v : r.counts.data)
    v = std::floor(rng.uniform(0.0, 40.0));
  r.channel_labels = md::SpikeCountMatrix::default_labels(3);
  io::save_counts_csv((dir / "rt.csv").string(), r);
  md::SpikeCountMatrix r2 = io::load_counts_csv((dir / "rt.csv").string());
  CHECK(r2.counts.data == r.counts.data);
  CHECK(r2.channel_labels == r.channel_labels);

  write_text(dir / "neg.csv", "a,b\n-1,0\n2,2\n");
  CHECK_THROWS_WITH_AS(io::load_counts_csv((dir / "neg.csv").string()),
                       doctest::Contains("row 1"), std::invalid_argument);
  write_text(dir / "frac.csv", "a,b\n1,0\n2,2.5\n");
  CHECK_THROWS_WITH_AS(io::load_counts_csv((dir / "frac.csv").string()),
                       doctest::Contains("row 2"), std::invalid_argument);
  write_text(dir / "ragged.csv", "a,b\n1,0\n2\n");
  CHECK_THROWS_WITH_AS(io::load_counts_csv((dir / "ragged.csv").string()),
                       doctest::Contains("row 2"), std::invalid_argument);
  write_text(dir / "words.csv", "a,b\n1,0\nx,2\n");
  CHECK_THROWS_AS(io::load_counts_csv((dir / "words.csv").string()),
                  std::invalid_argument);
  write_text(dir / "short.csv", "a,b\n1,0\n");
  CHECK_THROWS_AS(io::load_counts_csv((dir / "short.csv").string()),
                  std::invalid_argument);
  CHECK_THROWS_AS(io::load_counts_csv((dir / "absent.csv").string()),
                  std::runtime_error);
}

TEST_CASE("event csv plus json header load and bin") {
  fs::path dir = fresh_dir("events_csv");
  write_text(dir / "ev.csv",
             "time_seconds,channel\n0.25,0\n0.75,1\n1.5,0\n1.9,1\n");
  write_text(dir / "hdr.json",
             "{\"duration_seconds\": 2.0, \"channels\": 2}\n");
  io::SpikeEventList e = io::load_events_csv((dir / "ev.csv").string(),
                                             (dir / "hdr.json").string());
  CHECK(e.events.size() == 4);
  CHECK(e.M == 2);
  md::SpikeCountMatrix y = io::bin_events(e, 1.0);
  CHECK(y.counts.data == std::vector<double>{1.0, 1.0, 1.0, 1.0});

  write_text(dir / "hdr_bad.json",
             "{\"duration_seconds\": 2.0, \"channels\": 2, \"rig\": 5}\n");
  CHECK_THROWS_WITH_AS(io::load_events_csv((dir / "ev.csv").string(),
                                           (dir / "hdr_bad.json").string()),
                       doctest::Contains("rig"), std::invalid_argument);
  write_text(dir / "ev_bad.csv", "time,ch\n0.25,0\n");
  CHECK_THROWS_AS(io::load_events_csv((dir / "ev_bad.csv").string(),
                                      (dir / "hdr.json").string()),
                  std::invalid_argument);
  write_text(dir / "ev_out.csv", "time_seconds,channel\n2.5,0\n");
  CHECK_THROWS_AS(io::load_events_csv((dir / "ev_out.csv").string(),
                                      (dir / "hdr.json").string()),
                  std::invalid_argument);
}

TEST_CASE("concatenation stacks rows and records the joins") {
  md::SpikeCountMatrix a;
  a.counts = Tensor::matrix(4, 2, {1, 2, 3, 4, 5, 6, 7, 8});
  a.channel_labels = {"e1", "e2"};

  auto [dup, meta] = io::concat_recordings({a, a});
  CHECK(dup.T() == 8);
  CHECK(dup.M() == 2);
  CHECK(meta.segment_boundaries == std::vector<int>{4});
  CHECK(meta.segments() == 2);
  for (int t = 0; t < 4; ++t)
    for (int m = 0; m < 2; ++m) {
      CHECK(dup.counts(t, m) == a.counts(t, m));
      CHECK(dup.counts(t + 4, m) == a.counts(t, m));
    }

  md::SpikeCountMatrix b = a;
  for (double& v : b.counts.data) v += 1.0;
  auto [three, meta3] = io::concat_recordings({a, b, a});
  CHECK(three.T() == 12);
  CHECK(meta3.segment_boundaries == std::vector<int>{4, 8});
  // Column totals add.
  for (int m = 0; m < 2; ++m) {
    double cat = 0.0, parts = 0.0;
    for (int t = 0; t < 12; ++t) cat += three.counts(t, m);
    for (int t = 0; t < 4; ++t)
      parts += 2.0 * a.counts(t, m) + b.counts(t, m);
    CHECK(cat == parts);
  }

  auto [single, meta1] = io::concat_recordings({a});
  CHECK(single.counts.data == a.counts.data);
  CHECK(meta1.segment_boundaries.empty());

  md::SpikeCountMatrix c = a;
  c.channel_labels = {"e1", "eX"};
  CHECK_THROWS_AS(io::concat_recordings({a, c}), std::invalid_argument);
  md::SpikeCountMatrix d;
  d.counts = Tensor::matrix(2, 3, {0, 0, 0, 0, 0, 0});
  d.channel_labels = {"x", "y", "z"};
  CHECK_THROWS_AS(io::concat_recordings({a, d}), std::invalid_argument);
  md::SpikeCountMatrix w = a;
  w.bin_width_seconds = 0.5;
  CHECK_THROWS_AS(io::concat_recordings({a, w}), std::invalid_argument);
}

TEST_CASE("meta json round-trips and validates boundaries") {
  io::RecordingMeta m;
  m.label = "culture_a";
  m.segment_boundaries = {600, 1200, 1800};
  io::RecordingMeta r = io::meta_from_json(io::meta_to_json(m));
  CHECK(r.label == m.label);
  CHECK(r.segment_boundaries == m.segment_boundaries);
  CHECK(r.segments() == 4);

  CHECK_THROWS_AS(io::meta_from_json("{\"label\":\"x\",\"extra\":1}"),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      io::meta_from_json("{\"segment_boundaries\":[100,100]}"),
      std::invalid_argument);
  CHECK_THROWS_AS(io::meta_from_json("{\"segment_boundaries\":[0]}"),
                  std::invalid_argument);
}

TEST_CASE("fit config json keeps defaults and rejects unknown keys") {
  infer::FitConfig cfg;
  cfg.K = 6;
  cfg.epochs = 123;
  cfg.seed = 42;
  infer::FitConfig back = io::fit_config_from_json(io::fit_config_to_json(cfg));
  CHECK(io::fit_config_to_json(back) == io::fit_config_to_json(cfg));

  infer::FitConfig partial = io::fit_config_from_json("{\"K\": 3}");
  CHECK(partial.K == 3);
  CHECK(partial.lambda_l1 == 0.2);
  CHECK(partial.n_restarts == 75);

  CHECK_THROWS_WITH_AS(io::fit_config_from_json("{\"kay\": 3}"),
                       doctest::Contains("kay"), std::invalid_argument);
  CHECK_THROWS_AS(io::fit_config_from_json("{\"epochs\": -5}"),
                  std::invalid_argument);
  CHECK_THROWS_AS(io::fit_config_from_json("nope"), std::invalid_argument);
}

TEST_CASE("fit directories round-trip bit-exactly") {
  // Small real fit so every artifact is nontrivial.
  Rng rng(12);
  md::SpikeCountMatrix y;
  y.counts = Tensor::zeros({8, 2});
  for (double& v : y.counts.data)
    v = static_cast<double>(fslds::dist::poisson_sample(rng, 3.0));
  infer::FitConfig cfg;
  cfg.K = 1;
  cfg.hidden = 6;
  cfg.epochs = 3;
  cfg.n_restarts = 1;
  infer::FitResult fit = infer::fit_once(y, cfg, 9);
  REQUIRE(!fit.failed);

  fs::path dir = fresh_dir("fit_dir");
  io::save_fit((dir / "fit").string(), fit);
  for (const char* f : {"params.bin", "params.json", "posterior.csv",
                        "elbo_trace.csv", "config.json"})
    CHECK(fs::exists(dir / "fit" / f));

  infer::FitResult back = io::load_fit((dir / "fit").string());
  CHECK(back.params.rho.data == fit.params.rho.data);
  CHECK(back.params.nets.gru_q.W_z.data == fit.params.nets.gru_q.W_z.data);
  CHECK(back.params.nets.a_diag.data == fit.params.nets.a_diag.data);
  CHECK(back.posterior.h.data == fit.posterior.h.data);
  CHECK(back.posterior.z.data == fit.posterior.z.data);
  REQUIRE(back.elbo_trace.size() == fit.elbo_trace.size());
  for (size_t i = 0; i < fit.elbo_trace.size(); ++i) {
    CHECK(back.elbo_trace[i].total == fit.elbo_trace[i].total);
    CHECK(back.elbo_trace[i].recon == fit.elbo_trace[i].recon);
  }
  CHECK(back.seed == fit.seed);
  CHECK(io::fit_config_to_json(back.config) ==
        io::fit_config_to_json(fit.config));

  // Rates reconstructed from the loaded parameters match the originals.
  Tensor theta_a = fit.params.theta();
  Tensor theta_b = back.params.theta();
  for (int t = 0; t < 8; ++t) {
    Tensor h{{1}, {fit.posterior.h(t, 0)}};
    Tensor z{{2}, {fit.posterior.z(t, 0), fit.posterior.z(t, 1)}};
    Tensor ra = md::rate(theta_a, h, z);
    Tensor rb = md::rate(theta_b, h, z);
    for (int m = 0; m < 2; ++m)
      CHECK(std::abs(ra(m) - rb(m)) <= 1e-12 * std::abs(ra(m)));
  }

  // Version bump and missing sidecar are both fatal.
  nlohmann::json sidecar = nlohmann::json::parse(
      std::ifstream((dir / "fit" / "params.json").string()));
  sidecar["format_version"] = 2;
  write_text(dir / "fit" / "params.json", sidecar.dump(2));
  CHECK_THROWS_WITH_AS(io::load_fit((dir / "fit").string()),
                       doctest::Contains("format_version"),
                       std::runtime_error);
  fs::remove(dir / "fit" / "params.json");
  CHECK_THROWS_WITH_AS(io::load_fit((dir / "fit").string()),
                       doctest::Contains("sidecar"), std::runtime_error);
}
