#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maskforest/common.hpp"
#include "maskforest/detrng.hpp"
#include "maskforest/isoforest.hpp"
#include "maskforest/linalg.hpp"
#include "maskforest/protocol.hpp"

namespace maskforest {

struct UndefinedMetric : std::domain_error {
  using std::domain_error::domain_error;
};

struct LabeledDataset {
  Matrix features;
  std::vector<int> labels;  // 1 = true outlier
  std::string name;
};

enum class Mode { standard, multiparty };

inline const char* algo_name(Algo a) { return a == Algo::IF ? "if" : "eif"; }
inline const char* mode_name(Mode m) { return m == Mode::standard ? "standard" : "multiparty"; }

struct BenchResult {
  std::string dataset;
  Algo algo = Algo::IF;
  Mode mode = Mode::standard;
  std::optional<double> t_param;  // empty for standard runs
  std::uint64_t run_seed = 0;
  double auroc = 0.0;
};

namespace detail {

inline bool parse_double(const std::string& cell, double& out) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  return end != begin && *end == '\0' && !cell.empty();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  for (std::string& s : cells) {
    const auto a = s.find_first_not_of(" \t");
    const auto b = s.find_last_not_of(" \t");
    s = a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
  }
  return cells;
}

inline std::string format_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// CSV: feature columns then one 0/1 label column; an optional header row is
// recognized by failing to parse as numbers.
inline LabeledDataset load_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  LabeledDataset ds;
  ds.name = std::filesystem::path(path).stem().string();

  std::string line;
  std::size_t lineno = 0;
  std::vector<std::vector<double>> rows;
  std::size_t width = 0;
  bool first_content = true;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = detail::split_csv_line(line);
    std::vector<double> values(cells.size());
    bool numeric = true;
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (!detail::parse_double(cells[i], values[i])) {
        numeric = false;
        break;
      }
    if (first_content) {
      first_content = false;
      if (!numeric) continue;  // header row
      width = cells.size();
    } else if (!numeric) {
      throw ParseError(lineno, "non-numeric value");
    }
    if (width == 0) width = cells.size();
    if (cells.size() != width) throw ParseError(lineno, "ragged row");
    if (width < 2) throw ParseError(lineno, "need at least one feature column and a label");
    const double label = values.back();
    if (label != 0.0 && label != 1.0) throw ParseError(lineno, "label not 0/1");
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw ParseError(lineno == 0 ? 1 : lineno, "no data rows");

  const std::size_t d = width - 1;
  ds.features = Matrix(rows.size(), d);
  ds.labels.resize(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < d; ++c) ds.features(r, c) = rows[r][c];
    ds.labels[r] = static_cast<int>(rows[r][d]);
  }
  return ds;
}

inline std::string dataset_csv(const LabeledDataset& ds) {
  std::string out;
  for (std::size_t r = 0; r < ds.features.rows; ++r) {
    for (std::size_t c = 0; c < ds.features.cols; ++c) {
      out += detail::format_g17(ds.features(r, c));
      out += ',';
    }
    out += std::to_string(ds.labels[r]);
    out += '\n';
  }
  return out;
}

// Gaussian bulk plus a ring of far points: inliers ~ N(0, I_d), outliers
// uniform on the radius-[6,10] shell.
inline LabeledDataset synth(std::size_t n_inliers, std::size_t n_outliers, std::size_t d,
                            std::uint64_t seed) {
  if (n_inliers == 0) throw std::invalid_argument("synth: need at least one inlier");
  if (d == 0) throw std::invalid_argument("synth: need at least one dimension");
  RngStream stream{seed};
  LabeledDataset ds;
  ds.name = "synth";
  ds.features = Matrix(n_inliers + n_outliers, d);
  ds.labels.assign(n_inliers + n_outliers, 0);
  for (std::size_t r = 0; r < n_inliers; ++r)
    for (std::size_t c = 0; c < d; ++c) ds.features(r, c) = stream.gaussian(0.0, 1.0);
  std::vector<double> dir(d);
  for (std::size_t r = n_inliers; r < ds.features.rows; ++r) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        dir[c] = stream.gaussian(0.0, 1.0);
        norm += dir[c] * dir[c];
      }
      norm = std::sqrt(norm);
    } while (norm == 0.0);
    const double radius = 6.0 + stream.uniform01() * 4.0;
    for (std::size_t c = 0; c < d; ++c) ds.features(r, c) = radius * dir[c] / norm;
    ds.labels[r] = 1;
  }
  return ds;
}

// Probability that a random true outlier outscores a random inlier, ties
// counted half — computed with midranks rather than the O(n^2) pair sum.
inline double auroc(const ScoreVector& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc: length mismatch");
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("auroc: labels must be 0/1");
    pos += static_cast<std::size_t>(l);
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0)
    throw UndefinedMetric("auroc: both classes required");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += midrank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1);
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

// Shuffle by seed, deal round-robin: part sizes differ by at most one.
inline std::vector<LabeledDataset> partition_uniform(const LabeledDataset& ds, std::size_t m,
                                                     std::uint64_t seed) {
  if (m == 0) throw std::invalid_argument("partition_uniform: m must be >= 1");
  std::vector<LabeledDataset> parts(m);
  const std::size_t n = ds.features.rows;
  const std::size_t d = ds.features.cols;
  std::vector<std::vector<std::size_t>> member(m);
  if (n > 0) {
    const std::vector<std::size_t> perm = permutation(n, seed);
    for (std::size_t k = 0; k < n; ++k) member[k % m].push_back(perm[k]);
  }
  for (std::size_t i = 0; i < m; ++i) {
    parts[i].name = ds.name;
    parts[i].features = Matrix(member[i].size(), d);
    parts[i].labels.resize(member[i].size());
    for (std::size_t r = 0; r < member[i].size(); ++r) {
      for (std::size_t c = 0; c < d; ++c) parts[i].features(r, c) = ds.features(member[i][r], c);
      parts[i].labels[r] = ds.labels[member[i][r]];
    }
  }
  return parts;
}

struct BenchConfig {
  std::vector<LabeledDataset> datasets;
  std::vector<Algo> algos{Algo::IF, Algo::EIF};
  std::vector<Mode> modes{Mode::standard, Mode::multiparty};
  std::vector<double> t_values{2.0, 10.0, 100.0, 1000.0};
  std::size_t runs = 20;
  std::size_t m = 3;
  std::size_t trees = 100;
  std::size_t psi = 256;
  unsigned keysize = 512;  // round after round of keygen: the small size keeps sweeps fast
  OutlierPolicy policy;
  std::uint64_t seed = 1;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t h, std::uint64_t v) {
  RngStream s{h ^ (v + 0x9E3779B97F4A7C15ULL)};
  return s.next_u64();
}

}  // namespace detail

// One cell per (dataset, algo, mode, T, run); standard mode is T-independent
// and contributes a single T-less cell per run. A failing cell is logged and
// skipped, never fatal to the sweep.
inline std::vector<BenchResult> bench(const BenchConfig& cfg) {
  if (cfg.runs == 0) throw std::invalid_argument("bench: runs must be >= 1");
  if (cfg.datasets.empty()) throw std::invalid_argument("bench: no datasets");
  std::vector<BenchResult> results;
  for (std::size_t di = 0; di < cfg.datasets.size(); ++di) {
    const LabeledDataset& ds = cfg.datasets[di];
    for (std::size_t ai = 0; ai < cfg.algos.size(); ++ai) {
      for (std::size_t mi = 0; mi < cfg.modes.size(); ++mi) {
        const Mode mode = cfg.modes[mi];
        const std::size_t t_cells = mode == Mode::standard ? 1 : cfg.t_values.size();
        for (std::size_t ti = 0; ti < t_cells; ++ti) {
          for (std::size_t run = 0; run < cfg.runs; ++run) {
            BenchResult row;
            row.dataset = ds.name;
            row.algo = cfg.algos[ai];
            row.mode = mode;
            if (mode == Mode::multiparty) row.t_param = cfg.t_values[ti];
            row.run_seed = cfg.seed + run;
            std::uint64_t cell_seed = detail::mix_seed(row.run_seed, di);
            cell_seed = detail::mix_seed(cell_seed, ai);
            cell_seed = detail::mix_seed(cell_seed, mi);
            cell_seed = detail::mix_seed(cell_seed, ti + 1);
            try {
              if (mode == Mode::standard) {
                RngStream stream{cell_seed};
                const Forest forest =
                    fit(ds.features, row.algo, cfg.trees, cfg.psi, stream);
                row.auroc = auroc(score_all(forest, ds.features), ds.labels);
              } else {
                const auto parts = partition_uniform(
                    ds, cfg.m, detail::mix_seed(cell_seed, 0xda3e39cb94b95bdbULL));
                RoundConfig rc;
                rc.m = cfg.m;
                rc.algo = row.algo;
                rc.trees = cfg.trees;
                rc.psi = cfg.psi;
                rc.t_param = *row.t_param;
                rc.keysize = cfg.keysize;
                rc.policy = cfg.policy;
                rc.master_seed = cell_seed;
                std::vector<Matrix> data;
                data.reserve(cfg.m);
                for (const auto& p : parts) data.push_back(p.features);
                const RoundResult rr = run_full_round(rc, std::move(data));
                ScoreVector scores;
                std::vector<int> labels;
                for (std::size_t i = 0; i < cfg.m; ++i) {
                  scores.insert(scores.end(), rr.clients[i].local_scores.begin(),
                                rr.clients[i].local_scores.end());
                  labels.insert(labels.end(), parts[i].labels.begin(), parts[i].labels.end());
                }
                row.auroc = auroc(scores, labels);
              }
              results.push_back(std::move(row));
            } catch (const std::exception& e) {
              log_error("bench cell failed (dataset=%s algo=%s mode=%s T=%s seed=%llu): %s",
                        ds.name.c_str(), algo_name(row.algo), mode_name(mode),
                        row.t_param ? detail::format_g17(*row.t_param).c_str() : "-",
                        static_cast<unsigned long long>(row.run_seed), e.what());
            }
          }
        }
      }
    }
  }
  return results;
}

inline std::string results_csv(const std::vector<BenchResult>& rows) {
  std::string out = "dataset,algo,mode,T,seed,auroc\n";
  for (const BenchResult& r : rows) {
    out += r.dataset;
    out += ',';
    out += algo_name(r.algo);
    out += ',';
    out += mode_name(r.mode);
    out += ',';
    if (r.t_param) out += detail::format_g17(*r.t_param);
    out += ',';
    out += std::to_string(r.run_seed);
    out += ',';
    out += detail::format_g17(r.auroc);
    out += '\n';
  }
  return out;
}

namespace detail {

inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.size() == 1) return sorted[0];
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace detail

// Boxplot-ready per-(dataset, algo, mode, T) statistics.
inline std::string summary_json(const std::vector<BenchResult>& rows) {
  struct Group {
    std::string dataset;
    Algo algo;
    Mode mode;
    std::optional<double> t_param;
    std::vector<double> values;
  };
  std::vector<Group> groups;
  for (const BenchResult& r : rows) {
    Group* g = nullptr;
    for (Group& cand : groups)
      if (cand.dataset == r.dataset && cand.algo == r.algo && cand.mode == r.mode &&
          cand.t_param == r.t_param) {
        g = &cand;
        break;
      }
    if (!g) {
      groups.push_back({r.dataset, r.algo, r.mode, r.t_param, {}});
      g = &groups.back();
    }
    g->values.push_back(r.auroc);
  }
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (Group& g : groups) {
    std::vector<double> sorted = g.values;
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    double mean = 0.0;
    for (double v : sorted) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : sorted) var += (v - mean) * (v - mean);
    const double stddev = sorted.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    nlohmann::ordered_json j;
    j["dataset"] = g.dataset;
    j["algo"] = algo_name(g.algo);
    j["mode"] = mode_name(g.mode);
    if (g.t_param)
      j["T"] = *g.t_param;
    else
      j["T"] = nullptr;
    j["runs"] = sorted.size();
    j["mean"] = mean;
    j["stddev"] = stddev;
    j["min"] = sorted.front();
    j["q1"] = detail::quantile_sorted(sorted, 0.25);
    j["median"] = detail::quantile_sorted(sorted, 0.5);
    j["q3"] = detail::quantile_sorted(sorted, 0.75);
    j["max"] = sorted.back();
    out.push_back(std::move(j));
  }
  return out.dump(2) + "\n";
}

}  // namespace maskforest
