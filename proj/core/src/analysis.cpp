#include "fslds/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fslds::analysis {

namespace fs = std::filesystem;

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  if (a == b) return 1.0;  // keep the diagonal exact
  return dot / std::sqrt(na * nb);
}

std::vector<double> row_vec(const ad::Tensor& m, int r) {
  std::vector<double> v(static_cast<size_t>(m.cols()));
  for (int c = 0; c < m.cols(); ++c) v[static_cast<size_t>(c)] = m(r, c);
  return v;
}

// Half-open [lo, hi) row ranges implied by the boundaries.
std::vector<std::pair<int, int>> segment_ranges(const io::RecordingMeta& meta,
                                                int T) {
  std::vector<std::pair<int, int>> out;
  int lo = 0;
  for (size_t i = 0; i < meta.segment_boundaries.size(); ++i) {
    int b = meta.segment_boundaries[i];
    require(b > lo && b < T,
            "segments: boundary " + std::to_string(b) +
                " out of order or outside (0, " + std::to_string(T) + ")");
    out.emplace_back(lo, b);
    lo = b;
  }
  out.emplace_back(lo, T);
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

RescaleResult rescale(const ad::Tensor& theta, const ad::Tensor& z) {
  require(theta.rank() == 2, "rescale: theta must be a matrix");
  require(z.rank() == 2 && z.cols() == theta.rows(),
          "rescale: z must be T x (theta rows)");
  for (double v : theta.data)
    require(std::isfinite(v) && v >= 0.0,
            "rescale: theta entries must be >= 0");

  RescaleResult r;
  r.theta = theta;
  r.z = z;
  for (int k = 0; k < theta.rows(); ++k) {
    double c = 0.0;
    for (int m = 0; m < theta.cols(); ++m) c = std::max(c, theta(k, m));
    if (c == 0.0) {
      r.unscaled_rows.push_back(k);
      continue;
    }
    for (int m = 0; m < theta.cols(); ++m) r.theta(k, m) = theta(k, m) / c;
    const double shift = std::log(c);
    for (int t = 0; t < z.rows(); ++t) r.z(t, k) = z(t, k) + shift;
  }
  return r;
}

ad::Tensor harden_gates(const ad::Tensor& h, double threshold) {
  ad::Tensor out = h;
  for (double& v : out.data) v = v > threshold ? 1.0 : 0.0;
  return out;
}

std::vector<double> occupancy(const ad::Tensor& hard_gates) {
  require(hard_gates.rank() == 2, "occupancy: gates must be T x K");
  const int T = hard_gates.rows(), K = hard_gates.cols();
  require(T >= 1, "occupancy: empty gate matrix");
  std::vector<double> occ(static_cast<size_t>(K), 0.0);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < K; ++k) occ[static_cast<size_t>(k)] += hard_gates(t, k);
  for (double& o : occ) o /= T;
  return occ;
}

std::vector<int> occupancy_filter(const ad::Tensor& hard_gates,
                                  double min_frac) {
  std::vector<double> occ = occupancy(hard_gates);
  std::vector<int> keep{0};
  for (size_t k = 0; k < occ.size(); ++k)
    if (occ[k] >= min_frac) keep.push_back(static_cast<int>(k) + 1);
  return keep;
}

std::vector<int> active_per_segment(const ad::Tensor& hard_gates,
                                    const io::RecordingMeta& meta,
                                    double min_frac) {
  require(hard_gates.rank() == 2, "active_per_segment: gates must be T x K");
  const int K = hard_gates.cols();
  std::vector<int> counts;
  for (auto [lo, hi] : segment_ranges(meta, hard_gates.rows())) {
    int active = 0;
    for (int k = 0; k < K; ++k) {
      double on = 0.0;
      for (int t = lo; t < hi; ++t) on += hard_gates(t, k);
      if (on / (hi - lo) >= min_frac) ++active;
    }
    counts.push_back(active);
  }
  return counts;
}

ad::Tensor segment_cosine(const ad::Tensor& h, const io::RecordingMeta& meta) {
  require(h.rank() == 2, "segment_cosine: gates must be T x K");
  auto ranges = segment_ranges(meta, h.rows());
  const int S = static_cast<int>(ranges.size());
  const int K = h.cols();

  std::vector<std::vector<double>> profile;
  for (auto [lo, hi] : ranges) {
    std::vector<double> v(static_cast<size_t>(K), 0.0);
    for (int t = lo; t < hi; ++t)
      for (int k = 0; k < K; ++k) v[static_cast<size_t>(k)] += h(t, k);
    for (double& x : v) x /= (hi - lo);
    profile.push_back(std::move(v));
  }

  ad::Tensor out = ad::Tensor::zeros({S, S});
  for (int i = 0; i < S; ++i)
    for (int j = 0; j < S; ++j)
      out(i, j) = cosine(profile[static_cast<size_t>(i)],
                         profile[static_cast<size_t>(j)]);
  return out;
}

Truncated truncated_heatmap_data(const ad::Tensor& m, double percentile) {
  require(m.numel() > 0, "truncate: empty matrix");
  require(percentile > 0.0 && percentile <= 100.0,
          "truncate: percentile must be in (0, 100]");
  std::vector<double> sorted = m.data;
  std::sort(sorted.begin(), sorted.end());
  const int n = static_cast<int>(sorted.size());
  int rank = static_cast<int>(std::ceil(percentile / 100.0 * n));
  rank = std::clamp(rank, 1, n);
  Truncated out;
  out.clip = sorted[static_cast<size_t>(rank - 1)];
  out.clipped = m;
  for (double& v : out.clipped.data) v = std::min(v, out.clip);
  return out;
}

MatchResult match_features(const ad::Tensor& theta_true,
                           const ad::Tensor& theta_learned) {
  require(theta_true.rank() == 2 && theta_learned.rank() == 2,
          "match: inputs must be matrices");
  require(theta_true.rows() >= 1 && theta_learned.rows() >= 1,
          "match: both row sets must be nonempty");
  require(theta_true.cols() == theta_learned.cols(),
          "match: column counts differ");
  const int Kt = theta_true.rows(), Kl = theta_learned.rows();
  require(std::max(Kt, Kl) <= 9, "match: too many rows for exhaustive search");

  std::vector<std::vector<double>> C(
      static_cast<size_t>(Kt), std::vector<double>(static_cast<size_t>(Kl)));
  for (int i = 0; i < Kt; ++i)
    for (int j = 0; j < Kl; ++j)
      C[static_cast<size_t>(i)][static_cast<size_t>(j)] =
          cosine(row_vec(theta_true, i), row_vec(theta_learned, j));

  // Permute the larger side; the first min(Kt,Kl) slots pair off in order
  // against the smaller side. This enumerates every injective assignment.
  const int small = std::min(Kt, Kl), big = std::max(Kt, Kl);
  std::vector<int> perm(static_cast<size_t>(big));
  std::iota(perm.begin(), perm.end(), 0);
  double best = -std::numeric_limits<double>::infinity();
  std::vector<int> best_perm;
  do {
    double s = 0.0;
    for (int i = 0; i < small; ++i)
      s += Kt <= Kl ? C[static_cast<size_t>(i)][static_cast<size_t>(perm[static_cast<size_t>(i)])]
                    : C[static_cast<size_t>(perm[static_cast<size_t>(i)])][static_cast<size_t>(i)];
    if (s > best) {
      best = s;
      best_perm.assign(perm.begin(), perm.begin() + small);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  MatchResult r;
  r.assignment.assign(static_cast<size_t>(Kt), -1);
  for (int i = 0; i < small; ++i) {
    if (Kt <= Kl)
      r.assignment[static_cast<size_t>(i)] = best_perm[static_cast<size_t>(i)];
    else
      r.assignment[static_cast<size_t>(best_perm[static_cast<size_t>(i)])] = i;
  }
  r.mean_cosine = best / small;
  return r;
}

AnalysisResult analyze(const infer::FitResult& fit,
                       const io::RecordingMeta& meta,
                       const AnalyzeOptions& opt) {
  AnalysisResult a;
  RescaleResult rs = rescale(fit.params.theta(), fit.posterior.z);
  a.theta_rescaled = std::move(rs.theta);
  a.z_adjusted = std::move(rs.z);
  a.unscaled_rows = std::move(rs.unscaled_rows);
  a.hard_gates = harden_gates(fit.posterior.h, opt.gate_threshold);
  a.occupancy_frac = occupancy(a.hard_gates);
  a.retained = occupancy_filter(a.hard_gates, opt.min_occupancy);
  a.active_count = active_per_segment(a.hard_gates, meta, opt.min_occupancy);
  a.cosine = segment_cosine(
      opt.cosine_on_hard_gates ? a.hard_gates : fit.posterior.h, meta);
  return a;
}

GridLayout infer_grid(int M) {
  require(M >= 1, "grid: M must be >= 1");
  int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(M))));
  GridLayout g;
  for (int m = 0; m < M; ++m)
    g.pos.emplace_back(static_cast<double>(m % side),
                       static_cast<double>(m / side));
  return g;
}

GridLayout load_grid_layout(const std::string& path, int M) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument(path + ": empty layout file");
  GridLayout g;
  g.pos.assign(static_cast<size_t>(M), {-1.0, -1.0});
  std::vector<bool> seen(static_cast<size_t>(M), false);
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    std::istringstream cells(line);
    std::string c, x, y;
    if (!std::getline(cells, c, ',') || !std::getline(cells, x, ',') ||
        !std::getline(cells, y))
      throw std::invalid_argument(path + ": row " + std::to_string(row) +
                                  ": expected channel,x,y");
    int ch = std::stoi(c);
    if (ch < 0 || ch >= M)
      throw std::invalid_argument(path + ": row " + std::to_string(row) +
                                  ": channel out of range");
    g.pos[static_cast<size_t>(ch)] = {std::stod(x), std::stod(y)};
    seen[static_cast<size_t>(ch)] = true;
  }
  for (int m = 0; m < M; ++m)
    if (!seen[static_cast<size_t>(m)])
      throw std::invalid_argument(path + ": channel " + std::to_string(m) +
                                  " has no layout entry");
  return g;
}

namespace {

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path);
}

// intensity in [0,1] -> white (0) to dark blue (1)
std::string shade(double intensity) {
  double i = std::clamp(intensity, 0.0, 1.0);
  int r = static_cast<int>(std::lround(255.0 * (1.0 - 0.85 * i)));
  int g = static_cast<int>(std::lround(255.0 * (1.0 - 0.70 * i)));
  int b = static_cast<int>(std::lround(255.0 * (1.0 - 0.25 * i)));
  char buf[24];
  std::snprintf(buf, sizeof(buf), "rgb(%d,%d,%d)", r, g, b);
  return buf;
}

// rows x cols heatmap with one unit square per cell; values scaled by vmax.
std::string heatmap_svg(const ad::Tensor& m, double vmax,
                        const std::string& title) {
  const int R = m.rows(), C = m.cols();
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << C
      << ' ' << R << "\" shape-rendering=\"crispEdges\">\n";
  out << "<title>" << title << "</title>\n";
  out << "<!-- vmax=" << fmt(vmax) << " -->\n";
  out << "<rect width=\"" << C << "\" height=\"" << R
      << "\" fill=\"white\"/>\n";
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      double v = m(r, c);
      if (v <= 0.0) continue;
      out << "<rect x=\"" << c << "\" y=\"" << r
          << "\" width=\"1\" height=\"1\" fill=\""
          << shade(vmax > 0.0 ? v / vmax : 0.0) << "\"/>\n";
    }
  out << "</svg>\n";
  return out.str();
}

// channels as shaded circles at their layout positions
std::string feature_map_svg(const std::vector<double>& w,
                            const GridLayout& layout,
                            const std::string& title) {
  double max_w = 0.0, max_x = 0.0, max_y = 0.0;
  for (double v : w) max_w = std::max(max_w, v);
  for (auto [x, y] : layout.pos) {
    max_x = std::max(max_x, x);
    max_y = std::max(max_y, y);
  }
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"-0.6 -0.6 "
      << fmt(max_x + 1.2) << ' ' << fmt(max_y + 1.2) << "\">\n";
  out << "<title>" << title << "</title>\n";
  for (size_t m = 0; m < w.size(); ++m) {
    auto [x, y] = layout.pos[m];
    out << "<circle cx=\"" << fmt(x) << "\" cy=\"" << fmt(y)
        << "\" r=\"0.42\" stroke=\"gray\" stroke-width=\"0.04\" fill=\""
        << shade(max_w > 0.0 ? w[m] / max_w : 0.0) << "\"/>\n";
  }
  out << "</svg>\n";
  return out.str();
}

// transpose to channels-as-rows for time heatmaps
ad::Tensor transpose(const ad::Tensor& m) {
  ad::Tensor out = ad::Tensor::zeros({m.cols(), m.rows()});
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  return out;
}

}  // namespace

void save_heatmap_svg(const std::string& path, const ad::Tensor& m,
                      double vmax, const std::string& title) {
  write_file(path, heatmap_svg(m, vmax, title));
}

ExportInfo export_figures(const infer::FitResult& fit,
                          const AnalysisResult& a,
                          const model::SpikeCountMatrix& y,
                          const io::RecordingMeta& meta,
                          const std::string& out_dir,
                          const GridLayout* layout,
                          double heatmap_percentile) {
  const int T = y.T(), M = y.M();
  require(fit.posterior.h.rows() == T,
          "export: fit and counts disagree on T");
  GridLayout grid = layout ? *layout : infer_grid(M);
  require(static_cast<int>(grid.pos.size()) == M,
          "export: layout size must equal channel count");
  fs::create_directories(out_dir);

  ExportInfo info;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_file(out_dir + "/" + name, text);
    info.files.push_back(name);
  };

  Truncated tr = truncated_heatmap_data(y.counts, heatmap_percentile);
  info.counts_clip = tr.clip;
  emit("counts_heatmap.svg",
       heatmap_svg(transpose(tr.clipped), tr.clip,
                   "spike counts, clipped at " + fmt(tr.clip)));

  emit("gates_heatmap.svg",
       heatmap_svg(transpose(a.hard_gates), 1.0, "hardened gates"));

  // Activity rows: background amplitude, then h_k e^{z_k} for retained k.
  {
    std::vector<int> rows = a.retained;
    ad::Tensor act =
        ad::Tensor::zeros({static_cast<int>(rows.size()), T});
    double vmax = 0.0;
    for (size_t r = 0; r < rows.size(); ++r) {
      int k = rows[r];
      for (int t = 0; t < T; ++t) {
        double amp = std::exp(a.z_adjusted(t, k));
        if (k > 0) amp *= fit.posterior.h(t, k - 1);
        act(static_cast<int>(r), t) = amp;
        vmax = std::max(vmax, amp);
      }
    }
    emit("activity_heatmap.svg",
         heatmap_svg(act, vmax, "component activity h*exp(z)"));
  }

  for (int k : a.retained) {
    std::vector<double> w(static_cast<size_t>(M));
    for (int m = 0; m < M; ++m) w[static_cast<size_t>(m)] =
        a.theta_rescaled(k, m);
    char name[32];
    std::snprintf(name, sizeof(name), "feature_%02d.svg", k);
    emit(name, feature_map_svg(
                   w, grid,
                   k == 0 ? "background weights"
                          : "feature " + std::to_string(k) + " weights"));
  }

  {
    std::ostringstream csv;
    csv << "feature,occupancy\n";
    for (size_t k = 0; k < a.occupancy_frac.size(); ++k)
      csv << (k + 1) << ',' << fmt(a.occupancy_frac[k]) << '\n';
    emit("occupancy.csv", csv.str());
  }
  {
    std::ostringstream csv;
    csv << "segment,label,n_active\n";
    for (size_t s = 0; s < a.active_count.size(); ++s)
      csv << s << ',' << meta.label << ',' << a.active_count[s] << '\n';
    emit("segments.csv", csv.str());
  }
  {
    const int S = a.cosine.rows();
    std::ostringstream csv;
    for (int s = 0; s < S; ++s) {
      if (s) csv << ',';
      csv << "seg" << s;
    }
    csv << '\n';
    for (int i = 0; i < S; ++i) {
      for (int j = 0; j < S; ++j) {
        if (j) csv << ',';
        csv << fmt(a.cosine(i, j));
      }
      csv << '\n';
    }
    emit("cosine.csv", csv.str());
  }
  return info;
}

}  // namespace fslds::analysis
