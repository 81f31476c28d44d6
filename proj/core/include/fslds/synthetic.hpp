#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fslds/model.hpp"
#include "fslds/tensor.hpp"

namespace fslds::synth {

// Scripted trajectory for one latent log-amplitude channel z^(k).
struct AmplitudeSpec {
  enum class Kind { Constant, Line, Sinusoid };
  Kind kind = Kind::Constant;
  double c = 0.0;                  // Constant: z_t = c
  double a = 0.0, b = 0.0;         // Line: a at t=0 to b at t=T-1
  double amp = 0.0, period = 1.0;  // Sinusoid:
  double phase = 0.0, offset = 0.0;  //  offset + amp*sin(2*pi*t/period + phase)

  static AmplitudeSpec constant(double c);
  static AmplitudeSpec line(double a, double b);
  static AmplitudeSpec sinusoid(double amp, double period, double phase,
                                double offset);

  double value(int t, int T) const;
  void validate() const;
};

struct FeatureSpec {
  ad::Tensor theta;  // per-channel weights, length M, entries >= 0
  AmplitudeSpec amplitude;
};

struct Scenario {
  int T = 0;
  int M = 0;
  std::uint64_t seed = 0;
  FeatureSpec background;              // always-on component
  std::vector<FeatureSpec> features;   // K gated components
  ad::Tensor gate_schedule;            // T x K, entries in {0,1}

  int K() const { return static_cast<int>(features.size()); }
  void validate() const;

  // Full weight matrix: row 0 background, rows 1..K the gated features.
  ad::Tensor theta_matrix() const;
};

struct GroundTruth {
  model::LatentTrajectory traj;  // exact binary gates and scripted z
  ad::Tensor rates;              // T x M
  model::SpikeCountMatrix counts;
};

// Scripted amplitudes + scheduled gates -> rates -> Poisson counts, drawn
// row-major (t, m) from Rng(s.seed).
GroundTruth generate(const Scenario& s);

// Built-in benchmark: T=1000, 16 channels, 4 block-structured features
// (channels 0-3, 4-7, 8-11, 11-15) with line and sinusoid amplitudes and a
// schedule visiting 13 distinct gate combinations, each on-run >= 2 bins.
Scenario demo_scenario();

// JSON round-trip; unknown keys are rejected.
std::string scenario_to_json(const Scenario& s);
Scenario scenario_from_json(const std::string& text);
void save_scenario(const std::string& path, const Scenario& s);
Scenario load_scenario(const std::string& path);

}  // namespace fslds::synth
