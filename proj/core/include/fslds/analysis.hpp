#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fslds/data_io.hpp"
#include "fslds/inference.hpp"
#include "fslds/model.hpp"
#include "fslds/tensor.hpp"

namespace fslds::analysis {

// Rescales each weight row to unit maximum and compensates in the log
// amplitudes so every reconstructed rate is unchanged. All-zero rows cannot
// be rescaled; they are left alone and reported.
struct RescaleResult {
  ad::Tensor theta;  // (K+1) x M, row max 1 for scalable rows
  ad::Tensor z;      // T x (K+1), shifted by log(row max)
  std::vector<int> unscaled_rows;
};
RescaleResult rescale(const ad::Tensor& theta, const ad::Tensor& z);

// 1 iff h > threshold (strict, so an exact tie rounds down).
ad::Tensor harden_gates(const ad::Tensor& h, double threshold = 0.5);

// Fraction of time each gate column is on.
std::vector<double> occupancy(const ad::Tensor& hard_gates);

// Component indices to keep: 0 (the always-on background) plus k for every
// gate column k-1 whose occupancy is >= min_frac (inclusive).
std::vector<int> occupancy_filter(const ad::Tensor& hard_gates,
                                  double min_frac = 0.05);

// Per segment, the number of gate columns with within-segment occupancy
// >= min_frac. Segments are the meta boundaries applied to [0, T).
std::vector<int> active_per_segment(const ad::Tensor& hard_gates,
                                    const io::RecordingMeta& meta,
                                    double min_frac = 0.05);

// Cosine similarity between per-segment mean gate vectors; an all-zero
// profile has similarity 0 against everything (including itself).
ad::Tensor segment_cosine(const ad::Tensor& h, const io::RecordingMeta& meta);

// Nearest-rank percentile clip over all entries.
struct Truncated {
  ad::Tensor clipped;
  double clip = 0.0;
};
Truncated truncated_heatmap_data(const ad::Tensor& m,
                                 double percentile = 95.0);

// Optimal one-to-one row assignment maximizing summed cosine, found
// exhaustively (row counts up to 9). assignment[i] is the learned row
// matched to true row i, or -1 when there are fewer learned rows.
struct MatchResult {
  std::vector<int> assignment;
  double mean_cosine = 0.0;  // over the matched pairs
};
MatchResult match_features(const ad::Tensor& theta_true,
                           const ad::Tensor& theta_learned);

struct AnalyzeOptions {
  double gate_threshold = 0.5;
  double min_occupancy = 0.05;
  double heatmap_percentile = 95.0;
  bool cosine_on_hard_gates = false;  // default: soft posterior means
};

struct AnalysisResult {
  ad::Tensor theta_rescaled;     // (K+1) x M
  ad::Tensor z_adjusted;         // T x (K+1)
  std::vector<int> unscaled_rows;
  ad::Tensor hard_gates;         // T x K
  std::vector<double> occupancy_frac;  // per gate column
  std::vector<int> retained;     // component indices, 0 always present
  std::vector<int> active_count; // per segment
  ad::Tensor cosine;             // S x S
};

AnalysisResult analyze(const infer::FitResult& fit,
                       const io::RecordingMeta& meta,
                       const AnalyzeOptions& opt = {});

// Electrode positions for the per-feature maps; defaults to a near-square
// grid (8x8 for 64 channels, 4x4 for 16).
struct GridLayout {
  std::vector<std::pair<double, double>> pos;  // (x, y) per channel
};
GridLayout infer_grid(int M);
GridLayout load_grid_layout(const std::string& path, int M);  // channel,x,y

// Writes, into out_dir:
//   counts_heatmap.svg    percentile-truncated counts
//   gates_heatmap.svg     hardened gates
//   activity_heatmap.svg  background e^z0 and retained h_k e^zk rows
//   feature_<k>.svg       per-channel weight map, retained components only
//   occupancy.csv         feature,occupancy (one row per gate column)
//   segments.csv          segment,label,n_active
//   cosine.csv            S x S matrix with header
// One unit square per cell, shaded by value/vmax, white background.
void save_heatmap_svg(const std::string& path, const ad::Tensor& m,
                      double vmax, const std::string& title);

struct ExportInfo {
  double counts_clip = 0.0;  // the clip value rendered at full intensity
  std::vector<std::string> files;
};
ExportInfo export_figures(const infer::FitResult& fit,
                          const AnalysisResult& a,
                          const model::SpikeCountMatrix& y,
                          const io::RecordingMeta& meta,
                          const std::string& out_dir,
                          const GridLayout* layout = nullptr,
                          double heatmap_percentile = 95.0);

}  // namespace fslds::analysis
