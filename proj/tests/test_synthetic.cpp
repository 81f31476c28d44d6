#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "fslds/model.hpp"
#include "fslds/synthetic.hpp"
#include "json.hpp"

using fslds::ad::Tensor;
namespace md = fslds::model;
namespace synth = fslds::synth;

namespace {

synth::Scenario small_scenario() {
  synth::Scenario s;
  s.T = 3;
  s.M = 2;
  s.seed = 11;
  s.background.theta = Tensor::vec({2.0, 3.0});
  s.background.amplitude = synth::AmplitudeSpec::constant(std::log(2.0));
  s.features.resize(1);
  s.features[0].theta = Tensor::vec({16.0, 0.0});
  s.features[0].amplitude = synth::AmplitudeSpec::constant(0.0);
  s.gate_schedule = Tensor::matrix(3, 1, {0.0, 1.0, 1.0});
  return s;
}

}  // namespace

TEST_CASE("amplitude trajectories follow their closed forms") {
  synth::AmplitudeSpec l = synth::AmplitudeSpec::line(-0.5, 1.5);
  CHECK(l.value(0, 11) == -0.5);
  CHECK(l.value(10, 11) == 1.5);
  CHECK(l.value(5, 11) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(l.value(0, 1) == -0.5);  // single-step sequence degenerates to a

  synth::AmplitudeSpec c = synth::AmplitudeSpec::constant(0.7);
  CHECK(c.value(0, 100) == 0.7);
  CHECK(c.value(99, 100) == 0.7);

  // Full-period sinusoid peaks at exactly one: t = T/4.
  synth::AmplitudeSpec s = synth::AmplitudeSpec::sinusoid(1.0, 1000.0, 0.0, 0.0);
  double max_abs = 0.0;
  for (int t = 0; t < 1000; ++t)
    max_abs = std::max(max_abs, std::abs(s.value(t, 1000)));
  CHECK(max_abs == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(max_abs <= 1.0);
  CHECK(s.value(0, 1000) == 0.0);

  synth::AmplitudeSpec s2 = synth::AmplitudeSpec::sinusoid(0.4, 333.0, 1.0, 0.1);
  CHECK(s2.value(7, 1000) ==
        doctest::Approx(0.1 + 0.4 * std::sin(2.0 * M_PI * 7.0 / 333.0 + 1.0))
            .epsilon(1e-15));
}

TEST_CASE("all gates off with unit background gives unit rates") {
  synth::Scenario s;
  s.T = 5;
  s.M = 3;
  s.seed = 1;
  s.background.theta = Tensor::full({3}, 1.0);
  s.background.amplitude = synth::AmplitudeSpec::constant(0.0);
  s.features.resize(2);
  for (auto& f : s.features) {
    f.theta = Tensor::full({3}, 9.0);
    f.amplitude = synth::AmplitudeSpec::line(-1.0, 1.0);
  }
  s.gate_schedule = Tensor::zeros({5, 2});

  synth::GroundTruth g = synth::generate(s);
  for (double r : g.rates.data) CHECK(r == 1.0);
  for (double h : g.traj.h.data) CHECK(h == 0.0);
}

TEST_CASE("generation is reproducible and rates recompute from the truth") {
  synth::Scenario s = small_scenario();
  synth::GroundTruth a = synth::generate(s);
  synth::GroundTruth b = synth::generate(s);
  CHECK(a.counts.counts.data == b.counts.counts.data);
  CHECK(a.rates.data == b.rates.data);
  CHECK(a.traj.z.data == b.traj.z.data);

  s.seed = 12;
  synth::GroundTruth c = synth::generate(s);
  CHECK(a.counts.counts.data != c.counts.counts.data);
  CHECK(a.rates.data == c.rates.data);  // seed only affects sampling

  // Stored rates equal model::rate applied to the stored trajectory.
  Tensor theta = s.theta_matrix();
  for (int t = 0; t < s.T; ++t) {
    Tensor h_t = Tensor::zeros({s.K()});
    for (int k = 0; k < s.K(); ++k) h_t(k) = a.traj.h(t, k);
    Tensor z_t = Tensor::zeros({s.K() + 1});
    for (int k = 0; k <= s.K(); ++k) z_t(k) = a.traj.z(t, k);
    Tensor r = md::rate(theta, h_t, z_t);
    for (int m = 0; m < s.M; ++m) CHECK(r(m) == a.rates(t, m));
  }

  // Counts are integers with plausible magnitudes.
  for (double y : a.counts.counts.data) {
    CHECK(y >= 0.0);
    CHECK(y == std::floor(y));
  }
  CHECK(a.counts.channel_labels.size() == 2);
  CHECK(a.rates(0, 0) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(a.rates(1, 0) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(a.rates(1, 1) == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("count means over reseeds track the planted rate") {
  synth::Scenario s = small_scenario();
  double acc = 0.0;
  const int n = 100;
  for (int i = 0; i < n; ++i) {
    s.seed = 1000 + static_cast<std::uint64_t>(i);
    synth::GroundTruth g = synth::generate(s);
    acc += g.counts.counts(1, 0);
  }
  double mean = acc / n;
  double rate = synth::generate(s).rates(1, 0);  // ~20
  CHECK(std::abs(mean - rate) / rate < 0.05);
}

TEST_CASE("built-in demo scenario has the advertised structure") {
  synth::Scenario s = synth::demo_scenario();
  CHECK(s.T == 1000);
  CHECK(s.M == 16);
  CHECK(s.K() == 4);
  CHECK_NOTHROW(s.validate());

  // 13 distinct gate combinations.
  std::set<int> combos;
  for (int t = 0; t < s.T; ++t) {
    int code = 0;
    for (int k = 0; k < 4; ++k)
      code |= static_cast<int>(s.gate_schedule(t, k)) << k;
    combos.insert(code);
  }
  CHECK(combos.size() == 13);

  // Every on-run is at least 2 bins, and every feature is used but not
  // always-on (so occupancy filters have something to decide).
  for (int k = 0; k < 4; ++k) {
    int run = 0, min_run = s.T, total = 0;
    for (int t = 0; t < s.T; ++t) {
      if (s.gate_schedule(t, k) == 1.0) {
        ++run;
        ++total;
      } else if (run > 0) {
        min_run = std::min(min_run, run);
        run = 0;
      }
    }
    if (run > 0) min_run = std::min(min_run, run);
    CHECK(min_run >= 2);
    CHECK(total >= 50);       // comfortably above the 5% occupancy filter
    CHECK(total <= s.T - 50);
  }

  // Block structure: each feature occupies its stated channels only.
  auto support = [&](int k) {
    std::vector<int> on;
    for (int m = 0; m < 16; ++m)
      if (s.features[static_cast<size_t>(k)].theta(m) > 0.0) on.push_back(m);
    return on;
  };
  CHECK(support(0) == std::vector<int>{0, 1, 2, 3});
  CHECK(support(1) == std::vector<int>{4, 5, 6, 7});
  CHECK(support(2) == std::vector<int>{8, 9, 10, 11});
  CHECK(support(3) == std::vector<int>{11, 12, 13, 14, 15});

  synth::GroundTruth g = synth::generate(s);
  CHECK(g.counts.counts.rows() == 1000);
  CHECK(g.counts.counts.cols() == 16);
  CHECK(g.rates.rows() == 1000);
  // Rates are bounded below by the constant background contribution.
  for (double r : g.rates.data) CHECK(r >= 0.6 - 1e-12);
}

TEST_CASE("scenario json round-trips and rejects malformed input") {
  synth::Scenario s = synth::demo_scenario();
  std::string text = synth::scenario_to_json(s);
  synth::Scenario r = synth::scenario_from_json(text);
  CHECK(r.T == s.T);
  CHECK(r.M == s.M);
  CHECK(r.seed == s.seed);
  CHECK(r.gate_schedule.data == s.gate_schedule.data);
  synth::GroundTruth a = synth::generate(s);
  synth::GroundTruth b = synth::generate(r);
  CHECK(a.counts.counts.data == b.counts.counts.data);
  CHECK(a.rates.data == b.rates.data);

  nlohmann::json j = nlohmann::json::parse(text);
  nlohmann::json bad = j;
  bad["surprise"] = 1;
  CHECK_THROWS_WITH_AS(synth::scenario_from_json(bad.dump()),
                       doctest::Contains("surprise"), std::invalid_argument);

  bad = j;
  bad["background"]["amplitude"]["kind"] = "triangle";
  CHECK_THROWS_AS(synth::scenario_from_json(bad.dump()),
                  std::invalid_argument);

  bad = j;
  bad["features"][0]["amplitude"]["frequency"] = 2.0;
  CHECK_THROWS_AS(synth::scenario_from_json(bad.dump()),
                  std::invalid_argument);

  bad = j;
  bad["gate_schedule"][3][1] = 2;
  CHECK_THROWS_AS(synth::scenario_from_json(bad.dump()),
                  std::invalid_argument);

  CHECK_THROWS_AS(synth::scenario_from_json("{not json"),
                  std::invalid_argument);
}

TEST_CASE("scenario validation rejects inconsistent inputs") {
  synth::Scenario s = small_scenario();
  s.features[0].theta(1) = -0.5;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);

  s = small_scenario();
  s.gate_schedule(2, 0) = 0.5;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);

  s = small_scenario();
  s.gate_schedule = Tensor::zeros({4, 1});  // wrong T
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);

  s = small_scenario();
  s.features[0].amplitude = synth::AmplitudeSpec::sinusoid(1.0, 0.0, 0.0, 0.0);
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);

  s = small_scenario();
  s.background.theta = Tensor::vec({1.0});  // wrong M
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}
