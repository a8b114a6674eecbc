// End-to-end gate: ten numbered checks, one PASS/FAIL line each. Every check
// pins the tolerances the library promises; none of them may be loosened.

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "maskforest/maskforest.hpp"

using namespace maskforest;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return {};
  std::ostringstream out;
  out << f.rdbuf();
  return out.str();
}

// A stand-in with the Glass geometry (214 x 9, 9 outliers): three anisotropic
// Gaussian clusters, six fringe outliers at triple the cluster spread, and
// three wide-scattered points. The fringe keeps scores off the ceiling so the
// mode/algorithm comparisons below measure something. Drop a real converted
// copy at data/glass.csv (or point MASKFOREST_GLASS at one) to use it instead.
LabeledDataset glass_surrogate() {
  RngStream s{99173};
  const std::size_t d = 9;
  LabeledDataset ds;
  ds.name = "glass-surrogate";
  ds.features = Matrix(214, d);
  ds.labels.assign(214, 0);

  std::vector<std::vector<double>> centers(3, std::vector<double>(d));
  std::vector<std::vector<double>> scales(3, std::vector<double>(d));
  std::vector<Matrix> rots;
  for (int c = 0; c < 3; ++c) {
    for (auto& v : centers[c]) v = (s.uniform01() * 2.0 - 1.0) * 2.0;
    for (auto& v : scales[c]) v = 0.2 + s.uniform01() * 1.3;
    rots.push_back(random_orthogonal(d, s));
  }
  std::vector<double> g(d);
  auto emit = [&](std::size_t row, int c, double inflate) {
    for (std::size_t j = 0; j < d; ++j) g[j] = s.gaussian(0.0, scales[c][j] * inflate);
    for (std::size_t j = 0; j < d; ++j) {
      double v = 0.0;
      for (std::size_t t = 0; t < d; ++t) v += rots[c](j, t) * g[t];
      ds.features(row, j) = centers[c][j] + v;
    }
  };

  const std::size_t cluster_sizes[3] = {69, 68, 68};
  std::size_t row = 0;
  for (int c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < cluster_sizes[c]; ++k, ++row) emit(row, c, 1.0);
  for (int k = 0; k < 6; ++k, ++row) {
    emit(row, k % 3, 3.0);
    ds.labels[row] = 1;
  }
  for (; row < 214; ++row) {
    for (std::size_t j = 0; j < d; ++j)
      ds.features(row, j) = (s.uniform01() * 2.0 - 1.0) * 6.0;
    ds.labels[row] = 1;
  }
  return ds;
}

LabeledDataset load_glass_or_surrogate() {
  std::vector<std::string> candidates;
  if (const char* env = std::getenv("MASKFOREST_GLASS")) candidates.push_back(env);
  const auto here = std::filesystem::path(__FILE__).parent_path();
  candidates.push_back((here / ".." / "data" / "glass.csv").string());
  candidates.push_back("data/glass.csv");
  candidates.push_back("../data/glass.csv");
  for (const std::string& path : candidates) {
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) continue;
    try {
      LabeledDataset ds = load_csv(path);
      if (ds.features.cols == 9) return ds;
      log_warn("%s has %zu feature columns, want 9; ignoring", path.c_str(), ds.features.cols);
    } catch (const std::exception& e) {
      log_warn("could not load %s: %s", path.c_str(), e.what());
    }
  }
  return glass_surrogate();
}

struct GlassBench {
  LabeledDataset ds;
  std::vector<BenchResult> rows;
  double seconds = 0.0;
};

// One shared sweep feeds checks 6-8: per algorithm, 20 standard runs plus
// 20 multiparty runs at each T in {2, 10, 100, 1000}, 3 clients.
const GlassBench& glass_bench() {
  static const GlassBench gb = [] {
    GlassBench g;
    g.ds = load_glass_or_surrogate();
    BenchConfig bc;
    bc.datasets = {g.ds};
    bc.runs = 20;
    bc.m = 3;
    bc.keysize = 512;
    bc.seed = 20260819;
    const auto t0 = Clock::now();
    g.rows = bench(bc);
    g.seconds = seconds_since(t0);
    return g;
  }();
  return gb;
}

double mean_auroc(const std::vector<BenchResult>& rows, Algo algo, Mode mode,
                  std::optional<double> t_param) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const BenchResult& r : rows) {
    if (r.algo != algo || r.mode != mode) continue;
    if (t_param && (!r.t_param || *r.t_param != *t_param)) continue;
    sum += r.auroc;
    ++n;
  }
  EXPECT_GT(n, 0u) << "no cells matched";
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

class Acceptance : public ::testing::Test {
 protected:
  void criterion(int id, std::string label) {
    id_ = id;
    label_ = std::move(label);
  }
  void TearDown() override {
    std::printf("[%s] criterion %d: %s\n", HasFailure() ? "FAIL" : "PASS", id_, label_.c_str());
    std::fflush(stdout);
  }

 private:
  int id_ = 0;
  std::string label_;
};

}  // namespace

TEST_F(Acceptance, C01_PaillierPropertySuite) {
  criterion(1, "encryption property suite: 1000 pairs at keysize 512, exact, < 60 s");
  const auto t0 = Clock::now();
  SeededEntropy src{0xACCE0001};
  const paillier::KeyPair kp = paillier::gen(512, src);
  ASSERT_EQ(kp.pk.bits, 512u);
  for (int i = 0; i < 1000; ++i) {
    const mpz_class x = paillier::detail::random_below(src, kp.pk.n);
    const mpz_class y = paillier::detail::random_below(src, kp.pk.n);
    const auto cx = paillier::enc(x, kp.pk, src);
    const auto cy = paillier::enc(y, kp.pk, src);
    ASSERT_EQ(paillier::dec(cx, kp.sk, kp.pk), x);
    const auto csum = paillier::hom_add(cx, cy, kp.pk);
    ASSERT_EQ(paillier::dec(csum, kp.sk, kp.pk), (x + y) % kp.pk.n);
    const std::uint64_t k = src.draw_u64();
    const auto cscaled = paillier::scalar_mul(k, cx, kp.pk);
    ASSERT_EQ(paillier::dec(cscaled, kp.sk, kp.pk),
              (mpz_class(static_cast<unsigned long>(k)) * x) % kp.pk.n);
  }
  const double elapsed = seconds_since(t0);
  EXPECT_LT(elapsed, 60.0);
  std::printf("  (1000 pairs in %.2f s)\n", elapsed);
}

TEST_F(Acceptance, C02_IndexAssignmentPartition) {
  criterion(2, "index assignment: 100 random shapes give disjoint, exact, covering windows");
  RngStream meta{0xACCE0002};
  std::size_t violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 2 + meta.next_u64() % 5;  // [2, 6]
    std::vector<Matrix> data;
    std::size_t total = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t n = meta.next_u64() % 51;  // [0, 50]
      data.emplace_back(n, 2);
      total += n;
    }
    RoundConfig cfg;
    cfg.m = m;
    cfg.keysize = 512;
    cfg.master_seed = meta.next_u64();
    Round round(cfg, std::move(data));
    round.distribute_keys();
    round.agree_seed();
    round.secure_total_count();
    round.assign_indices();

    std::set<std::size_t> seen;
    bool ok = true;
    for (const ClientState& cl : round.clients()) {
      if (cl.z_set.size() != cl.n_local) ok = false;
      for (std::size_t row : cl.z_set)
        if (row >= total || !seen.insert(row).second) ok = false;
    }
    if (seen.size() != total) ok = false;
    if (!ok) {
      ++violations;
      ADD_FAILURE() << "partition violation in trial " << trial << " (m=" << m
                    << ", N=" << total << ")";
    }
  }
  EXPECT_EQ(violations, 0u);
}

TEST_F(Acceptance, C03_MaskingReconstruction) {
  criterion(3, "masked pooling: 20 random datasets reassemble within 1e-6 relative at sigma 1e6");
  RngStream meta{0xACCE0003};
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n_total = 10 + meta.next_u64() % 491;  // [10, 500]
    const std::size_t d = 1 + meta.next_u64() % 20;          // [1, 20]
    const std::size_t m = 2 + meta.next_u64() % 3;           // [2, 4]
    std::vector<std::size_t> owner(n_total);
    std::vector<std::size_t> sizes(m, 0);
    for (std::size_t r = 0; r < n_total; ++r) {
      owner[r] = meta.next_u64() % m;
      ++sizes[owner[r]];
    }
    std::vector<Matrix> data;
    for (std::size_t i = 0; i < m; ++i) data.emplace_back(sizes[i], d);
    std::vector<std::size_t> cursor(m, 0);
    for (std::size_t r = 0; r < n_total; ++r) {
      Matrix& x = data[owner[r]];
      for (std::size_t c = 0; c < d; ++c)
        x(cursor[owner[r]], c) = (meta.uniform01() * 2.0 - 1.0) * 1000.0;
      ++cursor[owner[r]];
    }

    RoundConfig cfg;
    cfg.m = m;
    cfg.keysize = 512;
    cfg.noise_sigma = 1e6;
    cfg.master_seed = meta.next_u64();
    Round round(cfg, std::move(data));
    round.distribute_keys();
    round.agree_seed();
    round.secure_total_count();
    round.assign_indices();
    round.prepare_masks();
    round.mask_and_send();
    round.aggregate_and_denoise();

    // assemble the expectation from scratch: shared seed -> mask and
    // permutation; offsets from the auxiliary server's draw and the counts
    std::uint64_t xi = 0;
    for (const ClientState& cl : round.clients()) xi += cl.xi_own;
    const MaskingMatrix mm = build_masking_matrix(d, xi, cfg.t_param);
    const std::vector<std::size_t> z = permutation(n_total, xi);
    std::uint64_t h_sum = 0;
    for (std::size_t j = 0; j < round.server_a().h_offset; ++j)
      h_sum += round.clients()[j].xi_own;
    Matrix expected(n_total, d);
    std::uint64_t prefix = 0;
    for (const ClientState& cl : round.clients()) {
      if (cl.n_local > 0) {
        const Matrix xt = matmul(cl.x_local, mm.m);
        for (std::size_t k = 0; k < cl.n_local; ++k) {
          const std::size_t row = z[(h_sum + prefix + k) % n_total];
          for (std::size_t c = 0; c < d; ++c) expected(row, c) = xt(k, c);
        }
      }
      prefix += cl.n_local;
    }

    const Matrix& got = round.server_p().x_masked;
    ASSERT_EQ(got.rows, n_total);
    double worst = 0.0;
    for (std::size_t k = 0; k < got.data.size(); ++k) {
      const double rel =
          std::abs(got.data[k] - expected.data[k]) / (1.0 + std::abs(expected.data[k]));
      worst = std::max(worst, rel);
    }
    EXPECT_LE(worst, 1e-6) << "trial " << trial << " (N=" << n_total << ", D=" << d
                           << ", m=" << m << ")";
  }
}

TEST_F(Acceptance, C04_MaskSpectrum) {
  criterion(4, "mask spectrum: singular values equal the scaling diagonal within 1e-9");
  std::uint64_t seed = 0xACCE0004;
  for (std::size_t d : {2u, 9u, 36u, 274u}) {
    for (double t_param : {2.0, 1000.0}) {
      const MaskingMatrix mm = build_masking_matrix(d, ++seed, t_param);
      Eigen::MatrixXd m(d, d);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) m(i, j) = mm.m(i, j);
      Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
      std::vector<double> got(svd.singularValues().data(),
                              svd.singularValues().data() + d);
      std::vector<double> want = mm.scales;
      std::sort(want.rbegin(), want.rend());
      for (std::size_t i = 0; i < d; ++i)
        EXPECT_NEAR(got[i], want[i], 1e-9) << "D=" << d << " T=" << t_param << " i=" << i;
    }
  }
}

TEST_F(Acceptance, C05_ForestSanity) {
  criterion(5, "forest sanity: 500/25 synthetic, mean AUROC >= 0.95 for both algorithms, < 30 s");
  const auto t0 = Clock::now();
  for (Algo algo : {Algo::IF, Algo::EIF}) {
    double sum = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const LabeledDataset ds = synth(500, 25, 2, 4242 + seed);
      RngStream stream{seed};
      const Forest forest = fit(ds.features, algo, 100, 256, stream);
      sum += auroc(score_all(forest, ds.features), ds.labels);
    }
    const double mean = sum / 10.0;
    EXPECT_GE(mean, 0.95) << "algo=" << algo_name(algo);
    std::printf("  (%s mean AUROC %.4f)\n", algo_name(algo), mean);
  }
  const double elapsed = seconds_since(t0);
  EXPECT_LT(elapsed, 30.0);
  std::printf("  (both sweeps in %.2f s)\n", elapsed);
}

TEST_F(Acceptance, C06_StandardVsMultiparty) {
  criterion(6, "pooled-vs-multiparty comparability: |mean AUROC gap| <= 0.05 per algorithm, < 10 min");
  const GlassBench& gb = glass_bench();
  std::printf("  (dataset %s, %zu cells in %.1f s)\n", gb.ds.name.c_str(), gb.rows.size(),
              gb.seconds);
  ASSERT_EQ(gb.rows.size(), 200u) << "some benchmark cells failed";
  EXPECT_LT(gb.seconds, 600.0);
  for (Algo algo : {Algo::IF, Algo::EIF}) {
    const double std_mean = mean_auroc(gb.rows, algo, Mode::standard, std::nullopt);
    const double mp_mean = mean_auroc(gb.rows, algo, Mode::multiparty, 2.0);
    EXPECT_LE(std::abs(std_mean - mp_mean), 0.05)
        << algo_name(algo) << ": standard " << std_mean << " vs multiparty " << mp_mean;
    std::printf("  (%s: standard %.4f, multiparty@T=2 %.4f)\n", algo_name(algo), std_mean,
                mp_mean);
  }
}

TEST_F(Acceptance, C07_ScalingBoundInsensitivity) {
  criterion(7, "scaling-bound insensitivity: multiparty means pairwise within 0.05 across T");
  const GlassBench& gb = glass_bench();
  const double ts[] = {2.0, 10.0, 100.0, 1000.0};
  for (Algo algo : {Algo::IF, Algo::EIF}) {
    double means[4];
    for (int i = 0; i < 4; ++i) means[i] = mean_auroc(gb.rows, algo, Mode::multiparty, ts[i]);
    std::printf("  (%s: T=2 %.4f, T=10 %.4f, T=100 %.4f, T=1000 %.4f)\n", algo_name(algo),
                means[0], means[1], means[2], means[3]);
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j)
        EXPECT_LE(std::abs(means[i] - means[j]), 0.05)
            << algo_name(algo) << ": T=" << ts[i] << " vs T=" << ts[j];
  }
}

TEST_F(Acceptance, C08_AlgorithmEquivalenceUnderMasking) {
  criterion(8, "algorithm equivalence under masking: |mean AUROC(IF) - mean AUROC(EIF)| <= 0.05");
  const GlassBench& gb = glass_bench();
  const double if_mean = mean_auroc(gb.rows, Algo::IF, Mode::multiparty, std::nullopt);
  const double eif_mean = mean_auroc(gb.rows, Algo::EIF, Mode::multiparty, std::nullopt);
  std::printf("  (multiparty pooled: if %.4f, eif %.4f)\n", if_mean, eif_mean);
  EXPECT_LE(std::abs(if_mean - eif_mean), 0.05);
}

TEST_F(Acceptance, C09_PrivacyAudit) {
  criterion(9, "privacy audit: honest transcripts pass all checks; injected leak fails intake (b)");
  for (std::uint64_t seed : {901u, 902u}) {
    RoundConfig cfg;
    cfg.m = seed == 901 ? 2 : 3;
    cfg.keysize = 512;
    cfg.master_seed = seed;
    std::vector<Matrix> data;
    RngStream gen{seed};
    for (std::size_t i = 0; i < cfg.m; ++i) {
      Matrix x(6 + i, 2);
      for (auto& v : x.data) v = gen.gaussian(0.0, 1.0);
      data.push_back(std::move(x));
    }
    const RoundResult result = run_full_round(cfg, std::move(data));
    const PrivacyReport honest = audit_transcript(result.transcript);
    EXPECT_TRUE(honest.passed()) << "honest run failed the audit (seed " << seed << ")";
    EXPECT_TRUE(honest.violations.empty());

    // negative control: a raw data matrix lands at the principal server
    Transcript leaked = result.transcript;
    Envelope bad;
    bad.seq = leaked.entries.back().seq + 1;
    bad.from = client_name(0);
    bad.to = SERVER_P;
    bad.kind = "x_plain";
    bad.payload = encode_matrix(Matrix(3, 2));
    leaked.entries.push_back(bad);
    const PrivacyReport report = audit_transcript(leaked);
    EXPECT_FALSE(report.principal_inbound_ok) << "leak not caught";
    EXPECT_TRUE(report.aux_inbound_ok);
    EXPECT_TRUE(report.no_client_links);
    EXPECT_FALSE(report.passed());

    if (const char* cli = std::getenv("MASKFOREST_CLI")) {
      const auto dir = std::filesystem::temp_directory_path() / "maskforest_accept9";
      std::filesystem::create_directories(dir);
      const auto good_path = dir / "good.ndjson";
      const auto bad_path = dir / "bad.ndjson";
      result.transcript.save_ndjson(good_path.string());
      leaked.save_ndjson(bad_path.string());
      const std::string base = std::string("'") + cli + "' audit --transcript ";
      EXPECT_EQ(std::system((base + "'" + good_path.string() + "' > /dev/null").c_str()), 0);
      const int rc = std::system((base + "'" + bad_path.string() + "' > /dev/null").c_str());
      EXPECT_TRUE(WIFEXITED(rc) && WEXITSTATUS(rc) == 1) << "audit exit code for leak";
      std::filesystem::remove_all(dir);
    }
  }
}

TEST_F(Acceptance, C10_DeterministicRuns) {
  criterion(10, "determinism: identical flags give byte-identical transcripts, scores, CSVs");
  const char* cli = std::getenv("MASKFOREST_CLI");
  ASSERT_NE(cli, nullptr) << "MASKFOREST_CLI must point at the command-line binary";

  const auto root = std::filesystem::temp_directory_path() / "maskforest_accept10";
  std::filesystem::remove_all(root);
  std::filesystem::create_directories(root);
  const auto data_path = root / "data.csv";
  {
    std::ofstream f(data_path, std::ios::binary);
    f << dataset_csv(synth(60, 6, 2, 99));
  }

  for (const char* out : {"out1", "out2"}) {
    const std::string cmd = std::string("'") + cli + "' run --data '" + data_path.string() +
                            "' --clients 3 --algo if --keysize 512 --T 2 --seed 7 --out '" +
                            (root / out).string() + "' > /dev/null";
    ASSERT_EQ(std::system(cmd.c_str()), 0) << cmd;
  }

  const char* files[] = {"client_0.csv", "client_1.csv", "client_2.csv", "scores.csv",
                         "transcript.ndjson"};
  for (const char* name : files) {
    const std::string a = read_file(root / "out1" / name);
    const std::string b = read_file(root / "out2" / name);
    ASSERT_FALSE(a.empty()) << name << " missing or empty";
    EXPECT_EQ(a, b) << name << " differs between identical runs";
  }
  std::filesystem::remove_all(root);
}
