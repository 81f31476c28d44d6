#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fslds/inference.hpp"
#include "fslds/model.hpp"

namespace fslds::io {

struct SpikeEvent {
  double time_seconds = 0.0;
  int channel = 0;
};

struct SpikeEventList {
  std::vector<SpikeEvent> events;
  double duration_seconds = 0.0;
  int M = 0;

  // times in [0, duration), channels in [0, M)
  void validate() const;
};

struct RecordingMeta {
  std::string label;
  // Bin indices where one source recording ends and the next begins,
  // strictly increasing, exclusive of 0 and T.
  std::vector<int> segment_boundaries;

  // Segment count implied by the boundaries.
  int segments() const {
    return static_cast<int>(segment_boundaries.size()) + 1;
  }
};

// counts[t][m] = #events with t*w <= time < (t+1)*w; T = ceil(duration/w),
// so a final partial bin is kept. Requires at least 2 bins.
model::SpikeCountMatrix bin_events(const SpikeEventList& e,
                                   double bin_width_seconds);

// Counts CSV: one header row of channel labels, then integer rows.
void save_counts_csv(const std::string& path,
                     const model::SpikeCountMatrix& y);
model::SpikeCountMatrix load_counts_csv(const std::string& path);

// Events arrive as a two-column CSV (time_seconds,channel) plus a JSON
// header {"duration_seconds": ..., "channels": ...}.
SpikeEventList load_events_csv(const std::string& events_path,
                               const std::string& header_path);

// Row-wise concatenation; all parts must share M, labels, and bin width.
// The meta records the join indices.
std::pair<model::SpikeCountMatrix, RecordingMeta> concat_recordings(
    const std::vector<model::SpikeCountMatrix>& parts);

std::string meta_to_json(const RecordingMeta& m);
RecordingMeta meta_from_json(const std::string& text);
void save_meta(const std::string& path, const RecordingMeta& m);
RecordingMeta load_meta(const std::string& path);

// FitConfig as JSON; absent keys keep their defaults, unknown keys are
// rejected.
std::string fit_config_to_json(const infer::FitConfig& cfg);
infer::FitConfig fit_config_from_json(const std::string& text);

// Fit directory layout:
//   params.bin    raw little-endian float64, rho first then net tensors
//   params.json   sidecar: format_version, dims, tensor names/shapes, seed
//   posterior.csv noise-free posterior means (h then z columns)
//   elbo_trace.csv one row per epoch
//   config.json   the FitConfig used
// load_fit rejects a missing sidecar or a format_version mismatch.
inline constexpr int kFitFormatVersion = 1;
void save_fit(const std::string& dir, const infer::FitResult& fit);
infer::FitResult load_fit(const std::string& dir);

}  // namespace fslds::io
