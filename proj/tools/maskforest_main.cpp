// command-line front end: run one detection round, sweep benchmarks, generate
// synthetic data, or audit a finished transcript.
//
// exit codes: 0 success, 1 configuration / domain errors, 2 I/O and format
// errors (audit: 1 means the transcript failed its checks).

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "maskforest/maskforest.hpp"

namespace mf = maskforest;

namespace {

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << content;
  f.flush();
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

mf::Algo parse_algo(const std::string& name) {
  if (name == "if") return mf::Algo::IF;
  if (name == "eif") return mf::Algo::EIF;
  throw std::invalid_argument("unknown algorithm '" + name + "' (want if|eif)");
}

mf::Mode parse_mode(const std::string& name) {
  if (name == "standard") return mf::Mode::standard;
  if (name == "multiparty") return mf::Mode::multiparty;
  throw std::invalid_argument("unknown mode '" + name + "' (want standard|multiparty)");
}

double parse_positive_double(const std::string& text, const char* what) {
  double v = 0.0;
  if (!mf::detail::parse_double(text, v) || !(v > 0.0))
    throw std::invalid_argument(std::string(what) + ": bad value '" + text + "'");
  return v;
}

nlohmann::json load_config(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::invalid_argument("cannot open config: " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
}

bool given(const CLI::Option* opt) { return opt != nullptr && opt->count() > 0; }

template <typename T>
void merge_value(const nlohmann::json& cfg, const char* key, const CLI::Option* opt, T& value) {
  if (given(opt) || !cfg.contains(key)) return;
  try {
    value = cfg.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument(std::string("config: bad type for '") + key + "'");
  }
}

// list-valued keys accept either the flag's comma syntax or a JSON array
void merge_list(const nlohmann::json& cfg, const char* key, const CLI::Option* opt,
                std::string& value) {
  if (given(opt) || !cfg.contains(key)) return;
  const auto& v = cfg.at(key);
  if (v.is_string()) {
    value = v.get<std::string>();
    return;
  }
  if (v.is_array()) {
    std::string joined;
    for (const auto& item : v) {
      if (!joined.empty()) joined += ',';
      joined += item.is_string() ? item.get<std::string>() : item.dump();
    }
    value = joined;
    return;
  }
  throw std::invalid_argument(std::string("config: '") + key + "' must be a string or array");
}

constexpr std::uint64_t kPartitionSalt = 0x706172746974696fULL;

struct RunOpts {
  std::string config_path;
  std::string data_path;
  std::size_t clients = 0;
  std::string algo = "if";
  std::size_t trees = 100;
  std::size_t psi = 256;
  double t_param = 2.0;
  unsigned keysize = 2048;
  double contamination = 0.05;
  double threshold = 0.0;
  std::uint64_t seed = 0;
  std::string out_dir;
  CLI::Option* o_data = nullptr;
  CLI::Option* o_clients = nullptr;
  CLI::Option* o_algo = nullptr;
  CLI::Option* o_trees = nullptr;
  CLI::Option* o_psi = nullptr;
  CLI::Option* o_t = nullptr;
  CLI::Option* o_keysize = nullptr;
  CLI::Option* o_cont = nullptr;
  CLI::Option* o_thr = nullptr;
  CLI::Option* o_seed = nullptr;
  CLI::Option* o_out = nullptr;
};

int do_run(RunOpts& o) {
  mf::LabeledDataset ds;
  try {
    const nlohmann::json cfg = load_config(o.config_path);
    merge_value(cfg, "data", o.o_data, o.data_path);
    merge_value(cfg, "clients", o.o_clients, o.clients);
    merge_value(cfg, "algo", o.o_algo, o.algo);
    merge_value(cfg, "trees", o.o_trees, o.trees);
    merge_value(cfg, "psi", o.o_psi, o.psi);
    merge_value(cfg, "T", o.o_t, o.t_param);
    merge_value(cfg, "keysize", o.o_keysize, o.keysize);
    merge_value(cfg, "seed", o.o_seed, o.seed);
    merge_value(cfg, "out", o.o_out, o.out_dir);

    std::optional<double> cont, thr;
    if (given(o.o_cont)) cont = o.contamination;
    if (given(o.o_thr)) thr = o.threshold;
    if (!cont && !thr) {  // the command line chose no policy; consult the config
      if (cfg.contains("contamination")) cont = cfg.at("contamination").get<double>();
      if (cfg.contains("threshold")) thr = cfg.at("threshold").get<double>();
    }
    if (cont && thr)
      throw std::invalid_argument("--contamination and --threshold are mutually exclusive");
    if (o.data_path.empty()) throw std::invalid_argument("missing --data");
    if (o.out_dir.empty()) throw std::invalid_argument("missing --out");
    if (!given(o.o_seed) && !cfg.contains("seed")) throw std::invalid_argument("missing --seed");

    mf::RoundConfig rc;
    rc.m = o.clients;
    rc.algo = parse_algo(o.algo);
    rc.trees = o.trees;
    rc.psi = o.psi;
    rc.t_param = o.t_param;
    rc.keysize = o.keysize;
    if (thr)
      rc.policy = {mf::OutlierPolicy::Type::threshold, *thr};
    else
      rc.policy = {mf::OutlierPolicy::Type::contamination, cont.value_or(0.05)};
    rc.master_seed = o.seed;

    ds = mf::load_csv(o.data_path);
    const auto parts = mf::partition_uniform(
        ds, o.clients, mf::detail::mix_seed(o.seed, kPartitionSalt));
    std::vector<mf::Matrix> data;
    data.reserve(parts.size());
    for (const auto& p : parts) data.push_back(p.features);

    const mf::RoundResult result = mf::run_full_round(rc, std::move(data));

    std::filesystem::create_directories(o.out_dir);
    const std::filesystem::path out(o.out_dir);
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const mf::ClientOutcome& oc = result.clients[i];
      dropped += oc.flagged.size();
      mf::LabeledDataset cleaned;
      cleaned.name = parts[i].name;
      cleaned.features = oc.cleaned;
      for (std::size_t j = 0, f = 0; j < parts[i].labels.size(); ++j) {
        if (f < oc.flagged.size() && oc.flagged[f] == j) {
          ++f;
          continue;
        }
        cleaned.labels.push_back(parts[i].labels[j]);
      }
      write_file((out / ("client_" + std::to_string(i) + ".csv")).string(),
                 mf::dataset_csv(cleaned));
    }
    std::string scores_text;
    for (double s : result.scores) {
      scores_text += mf::detail::format_g17(s);
      scores_text += '\n';
    }
    write_file((out / "scores.csv").string(), scores_text);
    result.transcript.save_ndjson((out / "transcript.ndjson").string());

    std::printf("run: %llu pooled rows, %zu flagged across %zu clients; outputs in %s\n",
                static_cast<unsigned long long>(result.total_n), dropped, parts.size(),
                o.out_dir.c_str());
    return 0;
  } catch (const mf::ParseError& e) {
    std::fprintf(stderr, "error: %s: %s\n", o.data_path.c_str(), e.what());
    return 2;
  } catch (const mf::ProtocolAbort& e) {
    std::fprintf(stderr, "error: protocol aborted: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return 1;
  } catch (const std::runtime_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

struct BenchOpts {
  std::string config_path;
  std::string data_list;
  std::size_t runs = 20;
  std::string algos = "if,eif";
  std::string modes = "standard,multiparty";
  std::string t_list = "2,10,100,1000";
  std::size_t clients = 3;
  std::size_t trees = 100;
  std::size_t psi = 256;
  unsigned keysize = 512;
  std::uint64_t seed = 0;
  std::string out_dir;
  CLI::Option* o_data = nullptr;
  CLI::Option* o_runs = nullptr;
  CLI::Option* o_algos = nullptr;
  CLI::Option* o_modes = nullptr;
  CLI::Option* o_t = nullptr;
  CLI::Option* o_clients = nullptr;
  CLI::Option* o_seed = nullptr;
  CLI::Option* o_out = nullptr;
};

int do_bench(BenchOpts& o) {
  mf::BenchConfig bc;
  try {
    const nlohmann::json cfg = load_config(o.config_path);
    merge_list(cfg, "data", o.o_data, o.data_list);
    merge_value(cfg, "runs", o.o_runs, o.runs);
    merge_list(cfg, "algos", o.o_algos, o.algos);
    merge_list(cfg, "modes", o.o_modes, o.modes);
    merge_list(cfg, "T", o.o_t, o.t_list);
    merge_value(cfg, "clients", o.o_clients, o.clients);
    merge_value(cfg, "seed", o.o_seed, o.seed);
    merge_value(cfg, "out", o.o_out, o.out_dir);
    merge_value(cfg, "trees", nullptr, o.trees);
    merge_value(cfg, "psi", nullptr, o.psi);
    merge_value(cfg, "keysize", nullptr, o.keysize);
    if (o.data_list.empty()) throw std::invalid_argument("missing --data");
    if (o.out_dir.empty()) throw std::invalid_argument("missing --out");
    if (!given(o.o_seed) && !cfg.contains("seed")) throw std::invalid_argument("missing --seed");

    bc.algos.clear();
    for (const std::string& name : split_list(o.algos)) bc.algos.push_back(parse_algo(name));
    bc.modes.clear();
    for (const std::string& name : split_list(o.modes)) bc.modes.push_back(parse_mode(name));
    bc.t_values.clear();
    for (const std::string& t : split_list(o.t_list))
      bc.t_values.push_back(parse_positive_double(t, "--T"));
    bc.runs = o.runs;
    bc.m = o.clients;
    bc.trees = o.trees;
    bc.psi = o.psi;
    bc.keysize = o.keysize;
    bc.seed = o.seed;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }

  for (const std::string& path : split_list(o.data_list)) {
    try {
      bc.datasets.push_back(mf::load_csv(path));
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: dataset %s: %s\n", path.c_str(), e.what());
      return 1;
    }
  }

  std::vector<mf::BenchResult> rows;
  try {
    rows = mf::bench(bc);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }

  try {
    std::filesystem::create_directories(o.out_dir);
    const std::filesystem::path out(o.out_dir);
    write_file((out / "results.csv").string(), mf::results_csv(rows));
    write_file((out / "summary.json").string(), mf::summary_json(rows));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  std::printf("bench: %zu cells -> %s/results.csv, %s/summary.json\n", rows.size(),
              o.out_dir.c_str(), o.out_dir.c_str());
  return 0;
}

struct SynthOpts {
  std::string config_path;
  std::size_t inliers = 0;
  std::size_t outliers = 0;
  std::size_t dims = 0;
  std::uint64_t seed = 0;
  std::string out_path;
  CLI::Option* o_inliers = nullptr;
  CLI::Option* o_outliers = nullptr;
  CLI::Option* o_dims = nullptr;
  CLI::Option* o_seed = nullptr;
  CLI::Option* o_out = nullptr;
};

int do_synth(SynthOpts& o) {
  try {
    const nlohmann::json cfg = load_config(o.config_path);
    merge_value(cfg, "inliers", o.o_inliers, o.inliers);
    merge_value(cfg, "outliers", o.o_outliers, o.outliers);
    merge_value(cfg, "dims", o.o_dims, o.dims);
    merge_value(cfg, "seed", o.o_seed, o.seed);
    merge_value(cfg, "out", o.o_out, o.out_path);
    if (o.out_path.empty()) throw std::invalid_argument("missing --out");
    const mf::LabeledDataset ds = mf::synth(o.inliers, o.outliers, o.dims, o.seed);
    write_file(o.out_path, mf::dataset_csv(ds));
    std::printf("synth: %zu rows (%zu outliers), %zu dims -> %s\n", ds.features.rows, o.outliers,
                o.dims, o.out_path.c_str());
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

int do_audit(const std::string& transcript_path) {
  mf::Transcript transcript;
  try {
    transcript = mf::Transcript::load_ndjson(transcript_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  const mf::PrivacyReport report = mf::audit_transcript(transcript);
  const auto verdict = [](bool ok) { return ok ? "PASS" : "FAIL"; };
  std::printf("check (a) auxiliary-server intake:   %s\n", verdict(report.aux_inbound_ok));
  std::printf("check (b) principal-server intake:   %s\n", verdict(report.principal_inbound_ok));
  std::printf("check (c) client-to-client silence:  %s\n", verdict(report.no_client_links));
  std::printf("check (d) public-count consistency:  %s\n", verdict(report.counts_consistent));
  for (const std::string& v : report.violations) std::printf("  violation: %s\n", v.c_str());
  std::printf("audit: %s (%zu envelopes)\n", report.passed() ? "PASS" : "FAIL",
              transcript.entries.size());
  return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-server outlier detection over masked, pooled data", "maskforest"};
  app.require_subcommand(1);

  RunOpts run;
  CLI::App* run_cmd = app.add_subcommand("run", "execute one detection round over a CSV");
  run_cmd->add_option("--config", run.config_path, "JSON config; explicit flags win");
  run.o_data = run_cmd->add_option("--data", run.data_path, "labeled CSV (features..., 0/1 label)");
  run.o_clients = run_cmd->add_option("--clients", run.clients, "number of clients (>= 2)");
  run.o_algo = run_cmd->add_option("--algo", run.algo, "if | eif")
                   ->check(CLI::IsMember({"if", "eif"}));
  run.o_trees = run_cmd->add_option("--trees", run.trees, "trees per forest")
                    ->default_val(std::size_t{100});
  run.o_psi = run_cmd->add_option("--psi", run.psi, "subsample size per tree")
                  ->default_val(std::size_t{256});
  run.o_t = run_cmd->add_option("--T", run.t_param, "scaling interval bound (> 1)")
                ->default_val(2.0);
  run.o_keysize = run_cmd->add_option("--keysize", run.keysize, "512|1024|2048|3072")
                      ->default_val(2048u);
  run.o_cont = run_cmd->add_option("--contamination", run.contamination,
                                   "flag the top fraction in (0, 1)");
  run.o_thr = run_cmd->add_option("--threshold", run.threshold, "flag scores above tau in (0, 1]");
  run.o_seed = run_cmd->add_option("--seed", run.seed, "master seed; fixes every byte of output");
  run.o_out = run_cmd->add_option("--out", run.out_dir, "output directory");

  BenchOpts bench;
  CLI::App* bench_cmd = app.add_subcommand("bench", "AUROC sweep over datasets and settings");
  bench_cmd->add_option("--config", bench.config_path, "JSON config; explicit flags win");
  bench.o_data = bench_cmd->add_option("--data", bench.data_list, "CSV path[,path...]");
  bench.o_runs = bench_cmd->add_option("--runs", bench.runs, "repetitions per cell");
  bench.o_algos = bench_cmd->add_option("--algos", bench.algos, "subset of if,eif")
                      ->default_val(std::string{"if,eif"});
  bench.o_modes = bench_cmd->add_option("--modes", bench.modes, "subset of standard,multiparty")
                      ->default_val(std::string{"standard,multiparty"});
  bench.o_t = bench_cmd->add_option("--T", bench.t_list, "scaling bounds to sweep")
                  ->default_val(std::string{"2,10,100,1000"});
  bench.o_clients = bench_cmd->add_option("--clients", bench.clients, "clients per round")
                        ->default_val(std::size_t{3});
  bench.o_seed = bench_cmd->add_option("--seed", bench.seed, "base seed; run r uses seed+r");
  bench.o_out = bench_cmd->add_option("--out", bench.out_dir, "output directory");

  SynthOpts synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "write a Gaussian-bulk/far-shell CSV");
  synth_cmd->add_option("--config", synth.config_path, "JSON config; explicit flags win");
  synth.o_inliers = synth_cmd->add_option("--inliers", synth.inliers, "inlier count (>= 1)");
  synth.o_outliers = synth_cmd->add_option("--outliers", synth.outliers, "outlier count");
  synth.o_dims = synth_cmd->add_option("--dims", synth.dims, "feature count (>= 1)");
  synth.o_seed = synth_cmd->add_option("--seed", synth.seed, "generator seed");
  synth.o_out = synth_cmd->add_option("--out", synth.out_path, "output CSV path");

  std::string transcript_path;
  CLI::App* audit_cmd = app.add_subcommand("audit", "check a transcript's privacy structure");
  audit_cmd->add_option("--transcript", transcript_path, "NDJSON transcript")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (run_cmd->parsed()) return do_run(run);
  if (bench_cmd->parsed()) return do_bench(bench);
  if (synth_cmd->parsed()) return do_synth(synth);
  if (audit_cmd->parsed()) return do_audit(transcript_path);
  return 1;
}
