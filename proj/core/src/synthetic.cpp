#include "fslds/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fslds/distributions.hpp"
#include "fslds/rng.hpp"
#include "json.hpp"

namespace fslds::synth {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

AmplitudeSpec AmplitudeSpec::constant(double c) {
  AmplitudeSpec s;
  s.kind = Kind::Constant;
  s.c = c;
  return s;
}

AmplitudeSpec AmplitudeSpec::line(double a, double b) {
  AmplitudeSpec s;
  s.kind = Kind::Line;
  s.a = a;
  s.b = b;
  return s;
}

AmplitudeSpec AmplitudeSpec::sinusoid(double amp, double period, double phase,
                                      double offset) {
  AmplitudeSpec s;
  s.kind = Kind::Sinusoid;
  s.amp = amp;
  s.period = period;
  s.phase = phase;
  s.offset = offset;
  return s;
}

double AmplitudeSpec::value(int t, int T) const {
  switch (kind) {
    case Kind::Constant:
      return c;
    case Kind::Line:
      return T > 1 ? a + (b - a) * (static_cast<double>(t) / (T - 1)) : a;
    case Kind::Sinusoid:
      return offset + amp * std::sin(kTwoPi * t / period + phase);
  }
  throw std::logic_error("AmplitudeSpec: bad kind");
}

void AmplitudeSpec::validate() const {
  switch (kind) {
    case Kind::Constant:
      require(std::isfinite(c), "amplitude: constant must be finite");
      return;
    case Kind::Line:
      require(std::isfinite(a) && std::isfinite(b),
              "amplitude: line endpoints must be finite");
      return;
    case Kind::Sinusoid:
      require(std::isfinite(amp) && std::isfinite(phase) &&
                  std::isfinite(offset),
              "amplitude: sinusoid parameters must be finite");
      require(std::isfinite(period) && period > 0.0,
              "amplitude: sinusoid period must be > 0");
      return;
  }
  throw std::logic_error("AmplitudeSpec: bad kind");
}

void Scenario::validate() const {
  require(T >= 1, "scenario: T must be >= 1");
  require(M >= 1, "scenario: M must be >= 1");
  auto check_feature = [&](const FeatureSpec& f, const std::string& who) {
    require(f.theta.rank() == 1 && f.theta.numel() == M,
            "scenario: " + who + " theta must be a length-M vector");
    for (double v : f.theta.data)
      require(std::isfinite(v) && v >= 0.0,
              "scenario: " + who + " theta entries must be >= 0");
    f.amplitude.validate();
  };
  check_feature(background, "background");
  for (size_t k = 0; k < features.size(); ++k)
    check_feature(features[k], "feature " + std::to_string(k));
  require(gate_schedule.rank() == 2 && gate_schedule.rows() == T &&
              gate_schedule.cols() == K(),
          "scenario: gate_schedule must be T x K");
  for (double v : gate_schedule.data)
    require(v == 0.0 || v == 1.0, "scenario: gate entries must be 0 or 1");
}

ad::Tensor Scenario::theta_matrix() const {
  ad::Tensor th = ad::Tensor::zeros({K() + 1, M});
  for (int m = 0; m < M; ++m) th(0, m) = background.theta(m);
  for (int k = 0; k < K(); ++k)
    for (int m = 0; m < M; ++m) th(k + 1, m) = features[static_cast<size_t>(k)].theta(m);
  return th;
}

GroundTruth generate(const Scenario& s) {
  s.validate();
  const int T = s.T, M = s.M, K = s.K();

  GroundTruth g;
  g.traj.h = s.gate_schedule;
  g.traj.z = ad::Tensor::zeros({T, K + 1});
  for (int t = 0; t < T; ++t) {
    g.traj.z(t, 0) = s.background.amplitude.value(t, T);
    for (int k = 0; k < K; ++k)
      g.traj.z(t, k + 1) =
          s.features[static_cast<size_t>(k)].amplitude.value(t, T);
  }

  ad::Tensor theta = s.theta_matrix();
  g.rates = ad::Tensor::zeros({T, M});
  g.counts.counts = ad::Tensor::zeros({T, M});
  g.counts.bin_width_seconds = 1.0;
  g.counts.channel_labels = model::SpikeCountMatrix::default_labels(M);

  Rng rng(s.seed);
  for (int t = 0; t < T; ++t) {
    ad::Tensor h_t = ad::Tensor::zeros({K});
    for (int k = 0; k < K; ++k) h_t(k) = g.traj.h(t, k);
    ad::Tensor z_t = ad::Tensor::zeros({K + 1});
    for (int k = 0; k <= K; ++k) z_t(k) = g.traj.z(t, k);
    ad::Tensor r = model::rate(theta, h_t, z_t);
    for (int m = 0; m < M; ++m) {
      g.rates(t, m) = r(m);
      g.counts.counts(t, m) =
          static_cast<double>(dist::poisson_sample(rng, r(m)));
    }
  }
  return g;
}

Scenario demo_scenario() {
  Scenario s;
  s.T = 1000;
  s.M = 16;
  s.seed = 7;

  // A dim baseline makes the features' on/off contrast steep in log space:
  // a drifting background amplitude would need ~2 nat swings to imitate a
  // gated feature, so the cheap explanation is a dedicated gate.
  s.background.theta = ad::Tensor::full({16}, 0.6);
  s.background.amplitude = AmplitudeSpec::constant(0.0);

  auto block = [&](int lo, int hi, const std::vector<double>& w) {
    ad::Tensor th = ad::Tensor::zeros({16});
    for (int m = lo; m <= hi; ++m) th(m) = w[static_cast<size_t>(m - lo)];
    return th;
  };
  s.features.resize(4);
  s.features[0].theta = block(0, 3, {4.0, 5.0, 5.0, 4.0});
  s.features[0].amplitude = AmplitudeSpec::sinusoid(0.5, 160.0, 2.0, 0.0);
  s.features[1].theta = block(4, 7, {5.0, 4.0, 4.0, 5.0});
  s.features[1].amplitude = AmplitudeSpec::sinusoid(0.5, 250.0, 0.0, 0.0);
  s.features[2].theta = block(8, 11, {4.0, 6.0, 4.0, 5.0});
  s.features[2].amplitude = AmplitudeSpec::sinusoid(0.45, 210.0, 4.0, 0.1);
  s.features[3].theta = block(11, 15, {3.0, 5.0, 5.0, 4.0, 4.0});
  s.features[3].amplitude = AmplitudeSpec::sinusoid(0.4, 333.0, 1.0, 0.1);

  // Piecewise-constant schedule visiting 13 distinct combinations across
  // 20 equal 50-bin segments. Every feature switches on in 5-6 separated
  // runs: a feature with only one or two long on-blocks can be explained
  // away by a drifting background amplitude, whereas rapid re-entry makes
  // a dedicated gate the cheaper explanation.
  struct Seg {
    int lo, hi;
    int g[4];
  };
  const Seg segs[] = {
      {0, 50, {0, 0, 0, 0}},      {50, 100, {1, 0, 0, 0}},
      {100, 150, {0, 0, 0, 0}},   {150, 200, {0, 1, 1, 0}},
      {200, 250, {0, 0, 1, 1}},   {250, 300, {1, 0, 0, 1}},
      {300, 350, {0, 1, 0, 0}},   {350, 400, {0, 1, 1, 0}},
      {400, 450, {1, 0, 1, 0}},   {450, 500, {1, 1, 1, 0}},
      {500, 550, {0, 1, 0, 1}},   {550, 600, {0, 0, 0, 1}},
      {600, 650, {1, 0, 1, 0}},   {650, 700, {1, 1, 0, 1}},
      {700, 750, {0, 1, 0, 0}},   {750, 800, {0, 0, 0, 0}},
      {800, 850, {1, 0, 1, 1}},   {850, 900, {0, 1, 0, 1}},
      {900, 950, {0, 0, 1, 0}},   {950, 1000, {1, 0, 0, 1}},
  };
  s.gate_schedule = ad::Tensor::zeros({1000, 4});
  for (const Seg& seg : segs)
    for (int t = seg.lo; t < seg.hi; ++t)
      for (int k = 0; k < 4; ++k)
        s.gate_schedule(t, k) = static_cast<double>(seg.g[k]);
  return s;
}

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok)
      throw std::invalid_argument("scenario json: unknown key \"" + it.key() +
                                  "\" in " + where);
  }
}

json amplitude_to_json(const AmplitudeSpec& a) {
  switch (a.kind) {
    case AmplitudeSpec::Kind::Constant:
      return {{"kind", "constant"}, {"c", a.c}};
    case AmplitudeSpec::Kind::Line:
      return {{"kind", "line"}, {"a", a.a}, {"b", a.b}};
    case AmplitudeSpec::Kind::Sinusoid:
      return {{"kind", "sinusoid"},
              {"amp", a.amp},
              {"period", a.period},
              {"phase", a.phase},
              {"offset", a.offset}};
  }
  throw std::logic_error("AmplitudeSpec: bad kind");
}

AmplitudeSpec amplitude_from_json(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("kind"))
    throw std::invalid_argument("scenario json: " + where +
                                " amplitude needs a \"kind\"");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "constant") {
    check_keys(j, {"kind", "c"}, where + " amplitude");
    return AmplitudeSpec::constant(j.at("c").get<double>());
  }
  if (kind == "line") {
    check_keys(j, {"kind", "a", "b"}, where + " amplitude");
    return AmplitudeSpec::line(j.at("a").get<double>(),
                               j.at("b").get<double>());
  }
  if (kind == "sinusoid") {
    check_keys(j, {"kind", "amp", "period", "phase", "offset"},
               where + " amplitude");
    return AmplitudeSpec::sinusoid(
        j.at("amp").get<double>(), j.at("period").get<double>(),
        j.at("phase").get<double>(), j.at("offset").get<double>());
  }
  throw std::invalid_argument("scenario json: " + where +
                              " amplitude kind \"" + kind +
                              "\" is not constant/line/sinusoid");
}

json feature_to_json(const FeatureSpec& f) {
  return {{"theta", f.theta.data},
          {"amplitude", amplitude_to_json(f.amplitude)}};
}

FeatureSpec feature_from_json(const json& j, const std::string& where) {
  check_keys(j, {"theta", "amplitude"}, where);
  FeatureSpec f;
  f.theta = ad::Tensor::vec(j.at("theta").get<std::vector<double>>());
  f.amplitude = amplitude_from_json(j.at("amplitude"), where);
  return f;
}

}  // namespace

std::string scenario_to_json(const Scenario& s) {
  json j;
  j["T"] = s.T;
  j["M"] = s.M;
  j["seed"] = s.seed;
  j["background"] = feature_to_json(s.background);
  json feats = json::array();
  for (const FeatureSpec& f : s.features) feats.push_back(feature_to_json(f));
  j["features"] = std::move(feats);
  json sched = json::array();
  for (int t = 0; t < s.T; ++t) {
    json row = json::array();
    for (int k = 0; k < s.K(); ++k)
      row.push_back(static_cast<int>(s.gate_schedule(t, k)));
    sched.push_back(std::move(row));
  }
  j["gate_schedule"] = std::move(sched);
  return j.dump(2) + "\n";
}

Scenario scenario_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("scenario json: parse error: ") +
                                e.what());
  }
  try {
    check_keys(j, {"T", "M", "seed", "background", "features",
                   "gate_schedule"},
               "scenario");
    Scenario s;
    s.T = j.at("T").get<int>();
    s.M = j.at("M").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.background = feature_from_json(j.at("background"), "background");
    const json& feats = j.at("features");
    for (size_t k = 0; k < feats.size(); ++k)
      s.features.push_back(feature_from_json(
          feats[k], "feature " + std::to_string(k)));
    const json& sched = j.at("gate_schedule");
    s.gate_schedule = ad::Tensor::zeros({s.T, s.K()});
    if (static_cast<int>(sched.size()) != s.T)
      throw std::invalid_argument("scenario json: gate_schedule needs " +
                                  std::to_string(s.T) + " rows");
    for (int t = 0; t < s.T; ++t) {
      const json& row = sched[static_cast<size_t>(t)];
      if (static_cast<int>(row.size()) != s.K())
        throw std::invalid_argument("scenario json: gate_schedule row " +
                                    std::to_string(t) + " needs " +
                                    std::to_string(s.K()) + " entries");
      for (int k = 0; k < s.K(); ++k)
        s.gate_schedule(t, k) = row[static_cast<size_t>(k)].get<double>();
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("scenario json: ") + e.what());
  }
}

void save_scenario(const std::string& path, const Scenario& s) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << scenario_to_json(s);
  if (!out) throw std::runtime_error("failed writing " + path);
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return scenario_from_json(buf.str());
}

}  // namespace fslds::synth
