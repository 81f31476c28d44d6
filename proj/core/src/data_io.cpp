#include "fslds/data_io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fslds/nnet.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "parameter blobs are little-endian");

namespace fslds::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::vector<std::string> split_csv_line(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

double parse_number(const std::string& cell, const std::string& where) {
  if (cell.empty()) throw std::invalid_argument(where + ": empty cell");
  size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument(where + ": cannot parse \"" + cell + "\"");
  }
  if (used != cell.size())
    throw std::invalid_argument(where + ": cannot parse \"" + cell + "\"");
  if (!std::isfinite(v))
    throw std::invalid_argument(where + ": non-finite value");
  return v;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path);
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok)
      throw std::invalid_argument(where + ": unknown key \"" + it.key() +
                                  "\"");
  }
}

}  // namespace

void SpikeEventList::validate() const {
  require(M >= 1, "events: channel count must be >= 1");
  require(std::isfinite(duration_seconds) && duration_seconds > 0.0,
          "events: duration must be > 0");
  for (size_t i = 0; i < events.size(); ++i) {
    const SpikeEvent& e = events[i];
    if (!(std::isfinite(e.time_seconds) && e.time_seconds >= 0.0 &&
          e.time_seconds < duration_seconds))
      throw std::invalid_argument(
          "events: event " + std::to_string(i) + " at t=" +
          std::to_string(e.time_seconds) + "s lies outside [0, " +
          std::to_string(duration_seconds) + ")");
    if (e.channel < 0 || e.channel >= M)
      throw std::invalid_argument("events: event " + std::to_string(i) +
                                  " channel " + std::to_string(e.channel) +
                                  " out of range");
  }
}

model::SpikeCountMatrix bin_events(const SpikeEventList& e,
                                   double bin_width_seconds) {
  require(std::isfinite(bin_width_seconds) && bin_width_seconds > 0.0,
          "bin_events: bin width must be > 0");
  e.validate();
  const int T =
      static_cast<int>(std::ceil(e.duration_seconds / bin_width_seconds));
  require(T >= 2, "bin_events: recording spans fewer than 2 bins");

  model::SpikeCountMatrix y;
  y.counts = ad::Tensor::zeros({T, e.M});
  y.bin_width_seconds = bin_width_seconds;
  y.channel_labels = model::SpikeCountMatrix::default_labels(e.M);
  for (const SpikeEvent& ev : e.events) {
    int t = static_cast<int>(std::floor(ev.time_seconds / bin_width_seconds));
    if (t >= T) t = T - 1;  // guard fp rounding at the top edge
    y.counts(t, ev.channel) += 1.0;
  }
  return y;
}

void save_counts_csv(const std::string& path,
                     const model::SpikeCountMatrix& y) {
  y.validate();
  std::vector<std::string> labels =
      y.channel_labels.empty()
          ? model::SpikeCountMatrix::default_labels(y.M())
          : y.channel_labels;
  std::ostringstream out;
  for (int m = 0; m < y.M(); ++m) {
    if (m) out << ',';
    out << labels[static_cast<size_t>(m)];
  }
  out << '\n';
  for (int t = 0; t < y.T(); ++t) {
    for (int m = 0; m < y.M(); ++m) {
      if (m) out << ',';
      out << static_cast<long long>(y.counts(t, m));
    }
    out << '\n';
  }
  write_file(path, out.str());
}

model::SpikeCountMatrix load_counts_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument(path + ": empty counts file");
  std::vector<std::string> labels = split_csv_line(line);
  const int M = static_cast<int>(labels.size());
  for (const std::string& l : labels)
    require(!l.empty(), path + ": empty channel label in header");

  std::vector<double> data;
  int T = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++T;
    const std::string where = path + ": row " + std::to_string(T);
    std::vector<std::string> cells = split_csv_line(line);
    if (static_cast<int>(cells.size()) != M)
      throw std::invalid_argument(where + ": expected " + std::to_string(M) +
                                  " cells, got " +
                                  std::to_string(cells.size()));
    for (const std::string& cell : cells) {
      double v = parse_number(cell, where);
      if (v < 0.0) throw std::invalid_argument(where + ": negative count");
      if (v != std::floor(v))
        throw std::invalid_argument(where + ": non-integer count");
      data.push_back(v);
    }
  }
  require(T >= 2, path + ": recording spans fewer than 2 bins");

  model::SpikeCountMatrix y;
  y.counts = ad::Tensor({T, M}, std::move(data));
  y.channel_labels = std::move(labels);
  return y;
}

SpikeEventList load_events_csv(const std::string& events_path,
                               const std::string& header_path) {
  json hdr;
  try {
    hdr = json::parse(read_file(header_path));
  } catch (const json::exception& e) {
    throw std::invalid_argument(header_path + ": parse error: " + e.what());
  }
  check_keys(hdr, {"duration_seconds", "channels"}, header_path);
  SpikeEventList out;
  try {
    out.duration_seconds = hdr.at("duration_seconds").get<double>();
    out.M = hdr.at("channels").get<int>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(header_path + ": " + e.what());
  }

  std::istringstream in(read_file(events_path));
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument(events_path + ": empty events file");
  std::vector<std::string> header = split_csv_line(line);
  if (header.size() != 2 || header[0] != "time_seconds" ||
      header[1] != "channel")
    throw std::invalid_argument(events_path +
                                ": header must be time_seconds,channel");
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    const std::string where = events_path + ": row " + std::to_string(row);
    std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != 2)
      throw std::invalid_argument(where + ": expected 2 cells");
    SpikeEvent ev;
    ev.time_seconds = parse_number(cells[0], where);
    double ch = parse_number(cells[1], where);
    if (ch != std::floor(ch))
      throw std::invalid_argument(where + ": non-integer channel");
    ev.channel = static_cast<int>(ch);
    out.events.push_back(ev);
  }
  out.validate();
  return out;
}

std::pair<model::SpikeCountMatrix, RecordingMeta> concat_recordings(
    const std::vector<model::SpikeCountMatrix>& parts) {
  require(!parts.empty(), "concat: no recordings given");
  const model::SpikeCountMatrix& first = parts[0];
  first.validate();
  int total_T = first.T();
  for (size_t i = 1; i < parts.size(); ++i) {
    const model::SpikeCountMatrix& p = parts[i];
    p.validate();
    if (p.M() != first.M())
      throw std::invalid_argument(
          "concat: recording " + std::to_string(i) + " has " +
          std::to_string(p.M()) + " channels, expected " +
          std::to_string(first.M()));
    if (p.channel_labels != first.channel_labels)
      throw std::invalid_argument("concat: recording " + std::to_string(i) +
                                  " channel labels differ");
    if (p.bin_width_seconds != first.bin_width_seconds)
      throw std::invalid_argument("concat: recording " + std::to_string(i) +
                                  " bin width differs");
    total_T += p.T();
  }

  model::SpikeCountMatrix out;
  out.counts = ad::Tensor::zeros({total_T, first.M()});
  out.bin_width_seconds = first.bin_width_seconds;
  out.channel_labels = first.channel_labels;
  RecordingMeta meta;
  int row = 0;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) meta.segment_boundaries.push_back(row);
    const model::SpikeCountMatrix& p = parts[i];
    for (int t = 0; t < p.T(); ++t, ++row)
      for (int m = 0; m < p.M(); ++m) out.counts(row, m) = p.counts(t, m);
  }
  return {std::move(out), std::move(meta)};
}

std::string meta_to_json(const RecordingMeta& m) {
  json j;
  j["label"] = m.label;
  j["segment_boundaries"] = m.segment_boundaries;
  return j.dump(2) + "\n";
}

RecordingMeta meta_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("meta json: parse error: ") +
                                e.what());
  }
  check_keys(j, {"label", "segment_boundaries"}, "meta json");
  RecordingMeta m;
  try {
    if (j.contains("label")) m.label = j.at("label").get<std::string>();
    if (j.contains("segment_boundaries"))
      m.segment_boundaries =
          j.at("segment_boundaries").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("meta json: ") + e.what());
  }
  for (size_t i = 0; i < m.segment_boundaries.size(); ++i) {
    int b = m.segment_boundaries[i];
    require(b > 0, "meta json: boundaries must be positive");
    if (i) require(b > m.segment_boundaries[i - 1],
                   "meta json: boundaries must be strictly increasing");
  }
  return m;
}

void save_meta(const std::string& path, const RecordingMeta& m) {
  write_file(path, meta_to_json(m));
}

RecordingMeta load_meta(const std::string& path) {
  return meta_from_json(read_file(path));
}

std::string fit_config_to_json(const infer::FitConfig& cfg) {
  json j;
  j["K"] = cfg.K;
  j["lambda_l1"] = cfg.lambda_l1;
  j["phi_start"] = cfg.phi_start;
  j["phi_end"] = cfg.phi_end;
  j["phi_rate"] = cfg.phi_rate;
  j["epochs"] = cfg.epochs;
  j["lr_main"] = cfg.lr_main;
  j["lr_theta_initial"] = cfg.lr_theta_initial;
  j["lr_theta_switch_epoch"] = cfg.lr_theta_switch_epoch;
  j["n_restarts"] = cfg.n_restarts;
  j["seed"] = cfg.seed;
  j["hidden"] = cfg.hidden;
  j["grad_clip"] = cfg.grad_clip;
  return j.dump(2) + "\n";
}

infer::FitConfig fit_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config json: parse error: ") +
                                e.what());
  }
  check_keys(j,
             {"K", "lambda_l1", "phi_start", "phi_end", "phi_rate", "epochs",
              "lr_main", "lr_theta_initial", "lr_theta_switch_epoch",
              "n_restarts", "seed", "hidden", "grad_clip"},
             "config json");
  infer::FitConfig cfg;
  try {
    if (j.contains("K")) cfg.K = j.at("K").get<int>();
    if (j.contains("lambda_l1"))
      cfg.lambda_l1 = j.at("lambda_l1").get<double>();
    if (j.contains("phi_start"))
      cfg.phi_start = j.at("phi_start").get<double>();
    if (j.contains("phi_end")) cfg.phi_end = j.at("phi_end").get<double>();
    if (j.contains("phi_rate")) cfg.phi_rate = j.at("phi_rate").get<double>();
    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
    if (j.contains("lr_main")) cfg.lr_main = j.at("lr_main").get<double>();
    if (j.contains("lr_theta_initial"))
      cfg.lr_theta_initial = j.at("lr_theta_initial").get<double>();
    if (j.contains("lr_theta_switch_epoch"))
      cfg.lr_theta_switch_epoch = j.at("lr_theta_switch_epoch").get<int>();
    if (j.contains("n_restarts"))
      cfg.n_restarts = j.at("n_restarts").get<int>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("hidden")) cfg.hidden = j.at("hidden").get<int>();
    if (j.contains("grad_clip"))
      cfg.grad_clip = j.at("grad_clip").get<double>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config json: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace {

json tensor_manifest(const infer::FitResult& fit) {
  json tensors = json::array();
  tensors.push_back({{"name", "rho"}, {"shape", fit.params.rho.shape}});
  nn::visit_tensors(fit.params.nets,
                    [&](const std::string& name, const ad::Tensor& t) {
                      tensors.push_back({{"name", name}, {"shape", t.shape}});
                    });
  return tensors;
}

std::string posterior_csv(const infer::FitResult& fit) {
  const int T = fit.posterior.h.rows();
  const int K = fit.posterior.h.cols();
  std::ostringstream out;
  for (int k = 0; k < K; ++k) out << "h" << k << ',';
  for (int k = 0; k <= K; ++k) {
    if (k) out << ',';
    out << 'z' << k;
  }
  out << '\n';
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < K; ++k) out << fmt(fit.posterior.h(t, k)) << ',';
    for (int k = 0; k <= K; ++k) {
      if (k) out << ',';
      out << fmt(fit.posterior.z(t, k));
    }
    out << '\n';
  }
  return out.str();
}

std::string trace_csv(const infer::FitResult& fit) {
  std::ostringstream out;
  out << "epoch,total,recon,kl_h,kl_z,l1\n";
  for (size_t i = 0; i < fit.elbo_trace.size(); ++i) {
    const infer::ElboEstimate& e = fit.elbo_trace[i];
    out << i << ',' << fmt(e.total) << ',' << fmt(e.recon) << ','
        << fmt(e.kl_h) << ',' << fmt(e.kl_z) << ',' << fmt(e.l1_penalty)
        << '\n';
  }
  return out.str();
}

}  // namespace

void save_fit(const std::string& dir, const infer::FitResult& fit) {
  fs::create_directories(dir);

  std::string blob;
  auto append = [&](const ad::Tensor& t) {
    blob.append(reinterpret_cast<const char*>(t.data.data()),
                t.data.size() * sizeof(double));
  };
  append(fit.params.rho);
  nn::visit_tensors(fit.params.nets,
                    [&](const std::string&, const ad::Tensor& t) {
                      append(t);
                    });
  write_file(dir + "/params.bin", blob);

  json sidecar;
  sidecar["format_version"] = kFitFormatVersion;
  sidecar["dims"] = {{"K", fit.params.K()},
                     {"M", fit.params.M()},
                     {"hidden", fit.params.nets.dims.hidden}};
  sidecar["seed"] = fit.seed;
  sidecar["failed"] = fit.failed;
  sidecar["failure"] = fit.failure;
  sidecar["tensors"] = tensor_manifest(fit);
  write_file(dir + "/params.json", sidecar.dump(2) + "\n");

  write_file(dir + "/posterior.csv", posterior_csv(fit));
  write_file(dir + "/elbo_trace.csv", trace_csv(fit));
  write_file(dir + "/config.json", fit_config_to_json(fit.config));
}

infer::FitResult load_fit(const std::string& dir) {
  const std::string sidecar_path = dir + "/params.json";
  if (!fs::exists(sidecar_path))
    throw std::runtime_error(sidecar_path +
                             ": missing fit sidecar; not a fit directory?");
  json sidecar;
  try {
    sidecar = json::parse(read_file(sidecar_path));
  } catch (const json::exception& e) {
    throw std::invalid_argument(sidecar_path + ": parse error: " + e.what());
  }
  check_keys(sidecar,
             {"format_version", "dims", "seed", "failed", "failure",
              "tensors"},
             sidecar_path);
  int version = sidecar.at("format_version").get<int>();
  if (version != kFitFormatVersion)
    throw std::runtime_error(sidecar_path + ": format_version " +
                             std::to_string(version) + " unsupported (want " +
                             std::to_string(kFitFormatVersion) + ")");
  const json& dims_j = sidecar.at("dims");
  check_keys(dims_j, {"K", "M", "hidden"}, sidecar_path + " dims");
  nn::NetDims dims{dims_j.at("K").get<int>(), dims_j.at("M").get<int>(),
                   dims_j.at("hidden").get<int>()};

  infer::FitResult fit;
  fit.params = model::ModelParams::init(0, dims);
  fit.seed = sidecar.at("seed").get<std::uint64_t>();
  fit.failed = sidecar.at("failed").get<bool>();
  fit.failure = sidecar.at("failure").get<std::string>();

  // Blob layout must agree with the manifest and the parameter structure.
  std::vector<ad::Tensor*> slots{&fit.params.rho};
  std::vector<std::string> names{"rho"};
  nn::visit_tensors(fit.params.nets,
                    [&](const std::string& name, ad::Tensor& t) {
                      slots.push_back(&t);
                      names.push_back(name);
                    });
  const json& manifest = sidecar.at("tensors");
  if (manifest.size() != slots.size())
    throw std::runtime_error(sidecar_path + ": expected " +
                             std::to_string(slots.size()) + " tensors, got " +
                             std::to_string(manifest.size()));
  size_t total = 0;
  for (size_t i = 0; i < slots.size(); ++i) {
    const json& entry = manifest[i];
    if (entry.at("name").get<std::string>() != names[i])
      throw std::runtime_error(sidecar_path + ": tensor " +
                               std::to_string(i) + " is \"" +
                               entry.at("name").get<std::string>() +
                               "\", expected \"" + names[i] + "\"");
    if (entry.at("shape").get<std::vector<int>>() != slots[i]->shape)
      throw std::runtime_error(sidecar_path + ": tensor \"" + names[i] +
                               "\" shape mismatch");
    total += slots[i]->data.size();
  }
  std::string blob = read_file(dir + "/params.bin");
  if (blob.size() != total * sizeof(double))
    throw std::runtime_error(dir + "/params.bin: expected " +
                             std::to_string(total * sizeof(double)) +
                             " bytes, got " + std::to_string(blob.size()));
  size_t off = 0;
  for (ad::Tensor* t : slots) {
    std::memcpy(t->data.data(), blob.data() + off,
                t->data.size() * sizeof(double));
    off += t->data.size() * sizeof(double);
  }

  // Posterior CSV.
  {
    std::istringstream in(read_file(dir + "/posterior.csv"));
    std::string line;
    if (!std::getline(in, line))
      throw std::runtime_error(dir + "/posterior.csv: empty");
    const int K = dims.K;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
      if (line.empty() || line == "\r") continue;
      std::vector<std::string> cells = split_csv_line(line);
      if (static_cast<int>(cells.size()) != 2 * K + 1)
        throw std::runtime_error(dir + "/posterior.csv: row " +
                                 std::to_string(rows.size() + 1) +
                                 ": wrong cell count");
      std::vector<double> row;
      for (const std::string& c : cells)
        row.push_back(parse_number(c, dir + "/posterior.csv"));
      rows.push_back(std::move(row));
    }
    const int T = static_cast<int>(rows.size());
    fit.posterior.h = ad::Tensor::zeros({T, K});
    fit.posterior.z = ad::Tensor::zeros({T, K + 1});
    for (int t = 0; t < T; ++t) {
      for (int k = 0; k < K; ++k)
        fit.posterior.h(t, k) = rows[static_cast<size_t>(t)][static_cast<size_t>(k)];
      for (int k = 0; k <= K; ++k)
        fit.posterior.z(t, k) =
            rows[static_cast<size_t>(t)][static_cast<size_t>(K + k)];
    }
  }

  // ELBO trace CSV.
  {
    std::istringstream in(read_file(dir + "/elbo_trace.csv"));
    std::string line;
    if (!std::getline(in, line))
      throw std::runtime_error(dir + "/elbo_trace.csv: empty");
    while (std::getline(in, line)) {
      if (line.empty() || line == "\r") continue;
      std::vector<std::string> cells = split_csv_line(line);
      if (cells.size() != 6)
        throw std::runtime_error(dir + "/elbo_trace.csv: wrong cell count");
      infer::ElboEstimate e;
      e.total = parse_number(cells[1], dir + "/elbo_trace.csv");
      e.recon = parse_number(cells[2], dir + "/elbo_trace.csv");
      e.kl_h = parse_number(cells[3], dir + "/elbo_trace.csv");
      e.kl_z = parse_number(cells[4], dir + "/elbo_trace.csv");
      e.l1_penalty = parse_number(cells[5], dir + "/elbo_trace.csv");
      fit.elbo_trace.push_back(e);
    }
  }

  fit.config = fit_config_from_json(read_file(dir + "/config.json"));
  return fit;
}

}  // namespace fslds::io
