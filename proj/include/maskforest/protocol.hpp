#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maskforest/common.hpp"
#include "maskforest/detrng.hpp"
#include "maskforest/entropy.hpp"
#include "maskforest/isoforest.hpp"
#include "maskforest/linalg.hpp"
#include "maskforest/message.hpp"
#include "maskforest/paillier.hpp"

namespace maskforest {

struct OutlierPolicy {
  enum class Type { contamination, threshold };
  Type type = Type::contamination;
  double value = 0.05;
};

struct RoundConfig {
  std::size_t m = 2;
  Algo algo = Algo::IF;
  std::size_t trees = 100;
  std::size_t psi = 256;
  double t_param = 2.0;       // upper bound T of the scaling interval (1, T)
  unsigned keysize = 2048;
  OutlierPolicy policy;
  double noise_sigma = 1e6;   // sigma of N(0, sigma^2) client noise
  std::optional<std::uint64_t> master_seed;  // set => fully reproducible round
};

struct ClientState {
  Matrix x_local;
  std::size_t n_local = 0;
  paillier::KeyPair keypair;
  std::vector<paillier::PublicKey> peer_pks;  // indexed by owner, self included
  std::uint64_t xi_own = 0;
  std::uint64_t xi_global = 0;
  std::uint64_t total_n = 0;
  std::uint64_t s_start = 0;
  std::vector<std::size_t> z_set;  // global row of each local row, in local order
  MaskingMatrix masking;
  Matrix r_noise;
  std::vector<std::uint8_t> labels;  // evaluation bookkeeping only; unused by the protocol
};

struct ServerAState {
  std::vector<paillier::PublicKey> pks;
  // ciphertexts kept from the seed-agreement and count rounds, [recipient][owner]
  std::vector<std::vector<paillier::Ciphertext>> cipher_xi;
  std::vector<std::vector<paillier::Ciphertext>> cipher_count;
  std::size_t h_offset = 0;
  std::uint64_t total_n = 0;
  Matrix r_sum;
  std::size_t noise_received = 0;
};

struct ServerPState {
  std::vector<paillier::PublicKey> pks;
  std::uint64_t total_n = 0;
  Matrix w_sum;
  std::size_t w_received = 0;
  Matrix r_sum;
  Matrix x_masked;
  Forest forest;
  ScoreVector scores;
};

struct ClientOutcome {
  Matrix cleaned;                      // local rows that survived
  std::vector<std::size_t> flagged;    // local row indices removed, ascending
  ScoreVector local_scores;            // score of every local row, local order
};

struct RoundResult {
  std::vector<ClientOutcome> clients;
  ScoreVector scores;  // masked-row order, as broadcast
  std::uint64_t total_n = 0;
  std::uint64_t forest_seed = 0;
  Matrix x_masked;
  Transcript transcript;
};

namespace detail {

inline std::uint64_t draw_below(EntropySource& src, std::uint64_t bound) {
  // rejection sampling keeps the draw exactly uniform
  const std::uint64_t limit = bound * (~std::uint64_t{0} / bound);
  std::uint64_t v;
  do {
    v = src.draw_u64();
  } while (v >= limit);
  return v % bound;
}

inline std::string u64_to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t hex_to_u64(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

inline std::uint64_t mpz_to_u64(const mpz_class& v) {
  if (v < 0 || mpz_sizeinbase(v.get_mpz_t(), 2) > 64)
    throw std::runtime_error("value does not fit in 64 bits");
  return static_cast<std::uint64_t>(mpz_get_ui(v.get_mpz_t()));
}

// Global outlier set under the given policy, as a row-indexed flag vector.
inline std::vector<bool> flag_rows(const ScoreVector& scores, const OutlierPolicy& policy) {
  const std::size_t n = scores.size();
  std::vector<bool> flags(n, false);
  if (policy.type == OutlierPolicy::Type::contamination) {
    if (!(policy.value > 0.0 && policy.value < 1.0))
      throw std::invalid_argument("contamination fraction must lie in (0, 1)");
    const auto k = static_cast<std::size_t>(std::ceil(policy.value * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return a < b;
    });
    for (std::size_t i = 0; i < k && i < n; ++i) flags[order[i]] = true;
  } else {
    if (!(policy.value > 0.0 && policy.value <= 1.0))
      throw std::invalid_argument("score threshold must lie in (0, 1]");
    for (std::size_t i = 0; i < n; ++i) flags[i] = scores[i] > policy.value;
  }
  return flags;
}

}  // namespace detail

// One detection round over an in-process transport. Phases must run in order;
// every message is captured in the transcript, and parties only consume what
// the transcript carries to them.
class Round {
 public:
  Round(RoundConfig config, std::vector<Matrix> client_data) : cfg_(std::move(config)) {
    if (cfg_.m < 2) throw std::invalid_argument("round: at least two clients required");
    if (cfg_.m > 64) throw std::invalid_argument("round: at most 64 clients supported");
    if (client_data.size() != cfg_.m)
      throw std::invalid_argument("round: client data count != m");
    const std::size_t d = client_data[0].cols;
    if (d == 0) throw ShapeError("round: zero-column client data");
    for (const Matrix& x : client_data)
      if (x.cols != d) throw ShapeError("round: clients disagree on column count");
    dims_ = d;
    clients_.resize(cfg_.m);
    for (std::size_t i = 0; i < cfg_.m; ++i) {
      clients_[i].x_local = std::move(client_data[i]);
      clients_[i].n_local = clients_[i].x_local.rows;
    }
    if (cfg_.master_seed) {
      RngStream seeder{*cfg_.master_seed};
      for (std::size_t i = 0; i < cfg_.m; ++i)
        seeded_.push_back(std::make_unique<SeededEntropy>(seeder.next_u64()));
      seeded_.push_back(std::make_unique<SeededEntropy>(seeder.next_u64()));  // server A
      forest_seed_ = seeder.next_u64();
      for (std::size_t i = 0; i < cfg_.m; ++i) entropy_.push_back(seeded_[i].get());
      entropy_a_ = seeded_[cfg_.m].get();
    } else {
      for (std::size_t i = 0; i < cfg_.m; ++i) entropy_.push_back(&os_entropy());
      entropy_a_ = &os_entropy();
      forest_seed_ = os_entropy().draw_u64();
    }
  }

  // Every client generates a keypair; A relays each public key to the other
  // clients and to P. Relays are ordered by owner index, which is how
  // receivers associate keys with owners.
  void distribute_keys() {
    expect_phase(0, "key distribution");
    for (std::size_t i = 0; i < cfg_.m; ++i) {
      clients_[i].keypair = paillier::gen(cfg_.keysize, *entropy_[i]);
      clients_[i].peer_pks.resize(cfg_.m);
    }
    server_a_.pks.resize(cfg_.m);
    for (std::size_t i = 0; i < cfg_.m; ++i) {
      const std::string seen =
          send(client_name(i), SERVER_A, "pk_broadcast", clients_[i].keypair.pk.n_hex());
      server_a_.pks[i] = paillier::PublicKey::from_hex(seen);
    }
    for (std::size_t j = 0; j < cfg_.m; ++j) {
      clients_[j].peer_pks[j] = clients_[j].keypair.pk;
      for (std::size_t i = 0; i < cfg_.m; ++i) {
        if (i == j) continue;
        const std::string seen =
            send(SERVER_A, client_name(j), "pk_broadcast", server_a_.pks[i].n_hex());
        clients_[j].peer_pks[i] = paillier::PublicKey::from_hex(seen);
      }
    }
    server_p_.pks.resize(cfg_.m);
    for (std::size_t i = 0; i < cfg_.m; ++i) {
      const std::string seen = send(SERVER_A, SERVER_P, "pk_broadcast", server_a_.pks[i].n_hex());
      server_p_.pks[i] = paillier::PublicKey::from_hex(seen);
    }
    phase_ = 1;
  }

  // Client-client integer agreement: every client ends up holding the sum of
  // all private draws without either server learning it.
  void agree_seed() {
    expect_phase(1, "seed agreement");
    for (std::size_t i = 0; i < cfg_.m; ++i) {
      std::uint64_t xi;
      do {
        xi = entropy_[i]->draw_u64() & ((std::uint64_t{1} << 48) - 1);
      } while (xi == 0);
      clients_[i].xi_own = xi;
    }
    server_a_.cipher_xi.assign(cfg_.m, {});
    for (std::size_t i = 0; i < cfg_.m; ++i) {
      const mpz_class xi(static_cast<unsigned long>(clients_[i].xi_own));
      for (std::size_t j = 0; j < cfg_.m; ++j) {
        const auto c = paillier::enc(xi, clients_[i].peer_pks[j], *entropy_[i]);
        const std::string seen = send(client_name(i), SERVER_A, "enc_xi", c.to_hex());
        // batch position within C_i's sends names the recipient key j
        server_a_.cipher_xi[j].push_back(paillier::Ciphertext::from_hex(seen));
      }
    }
    for (std::size_t i = 0; i < cfg_.m; ++i) {
      if (server_a_.cipher_xi[i].size() != cfg_.m)
        throw ProtocolAbort("seed agreement", "missing client contribution");
      paillier::Ciphertext acc = server_a_.cipher_xi[i][0];
      for (std::size_t j = 1; j < cfg_.m; ++j)
        acc = paillier::hom_add(acc, server_a_.cipher_xi[i][j], server_a_.pks[i]);
      const std::string seen = send(SERVER_A, client_name(i), "enc_Xi_sum", acc.to_hex());
      const mpz_class xi_sum = paillier::dec(paillier::Ciphertext::from_hex(seen),
                                             clients_[i].keypair.sk, clients_[i].keypair.pk);
      clients_[i].xi_global = detail::mpz_to_u64(xi_sum);
    }
    phase_ = 2;
  }

  // The same machinery over local sample sizes. A designated client (C0)
  // decrypts the homomorphic total and A broadcasts it; individual counts
  // stay encrypted end to end.
  void secure_total_count() {
    expect_phase(2, "secure count");
    server_a_.cipher_count.assign(cfg_.m, {});
    for (std::size_t i = 0; i < cfg_.m; ++i) {
      const mpz_class n_local(static_cast<unsigned long>(clients_[i].n_local));
      for (std::size_t j = 0; j < cfg_.m; ++j) {
        const auto c = paillier::enc(n_local, clients_[i].peer_pks[j], *entropy_[i]);
        const std::string seen = send(client_name(i), SERVER_A, "enc_count", c.to_hex());
        server_a_.cipher_count[j].push_back(paillier::Ciphertext::from_hex(seen));
      }
    }
    if (server_a_.cipher_count[0].size() != cfg_.m)
      throw ProtocolAbort("secure count", "missing client contribution");
    paillier::Ciphertext acc = server_a_.cipher_count[0][0];
    for (std::size_t j = 1; j < cfg_.m; ++j)
      acc = paillier::hom_add(acc, server_a_.cipher_count[0][j], server_a_.pks[0]);
    const std::string to_c0 = send(SERVER_A, client_name(0), "enc_count", acc.to_hex());
    const mpz_class total = paillier::dec(paillier::Ciphertext::from_hex(to_c0),
                                          clients_[0].keypair.sk, clients_[0].keypair.pk);
    const std::uint64_t n = detail::mpz_to_u64(total);
    const std::string back = send(client_name(0), SERVER_A, "count_result", detail::u64_to_hex(n));
    server_a_.total_n = detail::hex_to_u64(back);
    for (std::size_t i = 0; i < cfg_.m; ++i) {
      const std::string seen =
          send(SERVER_A, client_name(i), "count_result", detail::u64_to_hex(server_a_.total_n));
      clients_[i].total_n = detail::hex_to_u64(seen);
    }
    const std::string to_p =
        send(SERVER_A, SERVER_P, "count_result", detail::u64_to_hex(server_a_.total_n));
    server_p_.total_n = detail::hex_to_u64(to_p);
    phase_ = 3;
  }

  // A hands every client an encrypted start offset; the client decrypts it and
  // cuts its window out of the shared permutation. A never sees any offset or
  // the permutation seed in the clear.
  void assign_indices() {
    expect_phase(3, "index assignment");
    server_a_.h_offset = 1 + static_cast<std::size_t>(detail::draw_below(*entropy_a_, cfg_.m - 1));
    for (std::size_t i = 0; i < cfg_.m; ++i) {
      paillier::Ciphertext acc = server_a_.cipher_xi[i][0];
      for (std::size_t j = 1; j < server_a_.h_offset; ++j)
        acc = paillier::hom_add(acc, server_a_.cipher_xi[i][j], server_a_.pks[i]);
      for (std::size_t j = 0; j < i; ++j)
        acc = paillier::hom_add(acc, server_a_.cipher_count[i][j], server_a_.pks[i]);
      const std::string seen = send(SERVER_A, client_name(i), "enc_offset_start", acc.to_hex());
      ClientState& cl = clients_[i];
      const mpz_class s = paillier::dec(paillier::Ciphertext::from_hex(seen),
                                        cl.keypair.sk, cl.keypair.pk);
      cl.s_start = detail::mpz_to_u64(s);
      cl.z_set.clear();
      if (cl.total_n > 0 && cl.n_local > 0) {
        const std::vector<std::size_t> z = permutation(cl.total_n, cl.xi_global);
        const std::size_t n = cl.total_n;
        for (std::size_t k = 0; k < cl.n_local; ++k)
          cl.z_set.push_back(z[(cl.s_start + k) % n]);
      }
    }
    phase_ = 4;
  }

  // Everyone derives the same masking matrix from the shared seed; each client
  // draws its own private noise from its own entropy.
  void prepare_masks() {
    expect_phase(4, "mask preparation");
    for (std::size_t i = 0; i < cfg_.m; ++i) {
      ClientState& cl = clients_[i];
      cl.masking = build_masking_matrix(dims_, cl.xi_global, cfg_.t_param);
      cl.r_noise = noise_matrix(cl.total_n, dims_, cfg_.noise_sigma, *entropy_[i]);
    }
    phase_ = 5;
  }

  // W^i = R^i except at this client's assigned rows, which additionally carry
  // the transformed local rows. Noise goes to A, the noisy scatter to P.
  void mask_and_send() {
    expect_phase(5, "masking");
    for (std::size_t i = 0; i < cfg_.m; ++i) {
      ClientState& cl = clients_[i];
      const Matrix x_tilde = cl.n_local > 0 ? matmul(cl.x_local, cl.masking.m)
                                            : Matrix(0, dims_);
      Matrix w = cl.r_noise;
      for (std::size_t j = 0; j < cl.n_local; ++j) {
        const std::size_t row = cl.z_set[j];
        for (std::size_t c = 0; c < dims_; ++c) w(row, c) += x_tilde(j, c);
      }
      const std::string to_a =
          send(client_name(i), SERVER_A, "noise_matrix", encode_matrix(cl.r_noise));
      if (server_a_.noise_received == 0)
        server_a_.r_sum = decode_matrix(to_a);
      else
        server_a_.r_sum = add(server_a_.r_sum, decode_matrix(to_a));
      ++server_a_.noise_received;

      const std::string to_p = send(client_name(i), SERVER_P, "masked_matrix", encode_matrix(w));
      if (server_p_.w_received == 0)
        server_p_.w_sum = decode_matrix(to_p);
      else
        server_p_.w_sum = add(server_p_.w_sum, decode_matrix(to_p));
      ++server_p_.w_received;
    }
    phase_ = 6;
  }

  void aggregate_and_denoise() {
    expect_phase(6, "aggregation");
    if (server_a_.noise_received != cfg_.m)
      throw ProtocolAbort("aggregation", "missing noise contribution");
    if (server_p_.w_received != cfg_.m)
      throw ProtocolAbort("aggregation", "missing masked contribution");
    const std::string seen = send(SERVER_A, SERVER_P, "noise_sum", encode_matrix(server_a_.r_sum));
    server_p_.r_sum = decode_matrix(seen);
    server_p_.x_masked = sub(server_p_.w_sum, server_p_.r_sum);
    phase_ = 7;
  }

  // P fits the forest on the masked matrix and broadcasts scores plus the
  // decision policy; clients read off their own rows and flag locally.
  void detect_and_report() {
    expect_phase(7, "detection");
    if (server_p_.x_masked.rows == 0)
      throw ProtocolAbort("detection", "no rows to score");
    RngStream forest_stream{forest_seed_};
    server_p_.forest =
        fit(server_p_.x_masked, cfg_.algo, cfg_.trees, cfg_.psi, forest_stream);
    server_p_.scores = score_all(server_p_.forest, server_p_.x_masked);

    Matrix score_col(server_p_.scores.size(), 1);
    for (std::size_t r = 0; r < server_p_.scores.size(); ++r)
      score_col(r, 0) = server_p_.scores[r];
    const std::string score_payload = encode_matrix(score_col);

    nlohmann::ordered_json policy_json;
    policy_json["type"] =
        cfg_.policy.type == OutlierPolicy::Type::contamination ? "contamination" : "threshold";
    policy_json["value"] = cfg_.policy.value;
    const std::string policy_text = policy_json.dump();
    const std::string policy_payload = base64_encode(
        reinterpret_cast<const std::uint8_t*>(policy_text.data()), policy_text.size());

    outcomes_.assign(cfg_.m, {});
    for (std::size_t i = 0; i < cfg_.m; ++i) {
      const std::string seen_scores = send(SERVER_P, client_name(i), "score_vector", score_payload);
      const std::string seen_policy =
          send(SERVER_P, client_name(i), "outlier_policy", policy_payload);

      const Matrix received = decode_matrix(seen_scores);
      ScoreVector scores(received.data.begin(), received.data.end());
      const std::vector<std::uint8_t> policy_bytes = base64_decode(seen_policy);
      const auto pj = nlohmann::json::parse(policy_bytes.begin(), policy_bytes.end());
      OutlierPolicy policy;
      policy.type = pj.at("type").get<std::string>() == "threshold"
                        ? OutlierPolicy::Type::threshold
                        : OutlierPolicy::Type::contamination;
      policy.value = pj.at("value").get<double>();
      const std::vector<bool> flagged_global = detail::flag_rows(scores, policy);

      ClientState& cl = clients_[i];
      ClientOutcome& out = outcomes_[i];
      out.local_scores.resize(cl.n_local);
      for (std::size_t j = 0; j < cl.n_local; ++j) {
        out.local_scores[j] = scores[cl.z_set[j]];
        if (flagged_global[cl.z_set[j]]) out.flagged.push_back(j);
      }
      out.cleaned = Matrix(cl.n_local - out.flagged.size(), dims_);
      std::size_t kept = 0;
      for (std::size_t j = 0; j < cl.n_local; ++j) {
        if (std::binary_search(out.flagged.begin(), out.flagged.end(), j)) continue;
        for (std::size_t c = 0; c < dims_; ++c) out.cleaned(kept, c) = cl.x_local(j, c);
        ++kept;
      }
    }
    phase_ = 8;
  }

  RoundResult run_all() {
    distribute_keys();
    agree_seed();
    secure_total_count();
    assign_indices();
    prepare_masks();
    mask_and_send();
    aggregate_and_denoise();
    detect_and_report();
    RoundResult result;
    result.clients = std::move(outcomes_);
    result.scores = server_p_.scores;
    result.total_n = server_p_.total_n;
    result.forest_seed = forest_seed_;
    result.x_masked = server_p_.x_masked;
    result.transcript = transcript_;
    return result;
  }

  const Transcript& transcript() const { return transcript_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  const ServerAState& server_a() const { return server_a_; }
  const ServerPState& server_p() const { return server_p_; }
  std::uint64_t forest_seed() const { return forest_seed_; }

 private:
  void expect_phase(int want, const char* round_name) {
    if (phase_ != want) throw ProtocolAbort(round_name, "phase out of order");
  }

  // Returns the payload as the receiving side sees it (a copy out of the
  // transcript, which stays the single source of truth).
  std::string send(std::string from, std::string to, std::string kind, std::string payload) {
    Envelope e;
    e.seq = ++seq_;
    e.from = std::move(from);
    e.to = std::move(to);
    e.kind = std::move(kind);
    e.payload = std::move(payload);
    transcript_.entries.push_back(std::move(e));
    return transcript_.entries.back().payload;
  }

  RoundConfig cfg_;
  std::size_t dims_ = 0;
  std::vector<ClientState> clients_;
  ServerAState server_a_;
  ServerPState server_p_;
  std::vector<ClientOutcome> outcomes_;
  std::vector<std::unique_ptr<SeededEntropy>> seeded_;
  std::vector<EntropySource*> entropy_;
  EntropySource* entropy_a_ = nullptr;
  std::uint64_t forest_seed_ = 0;
  Transcript transcript_;
  std::uint64_t seq_ = 0;
  int phase_ = 0;
};

inline RoundResult run_full_round(const RoundConfig& config, std::vector<Matrix> client_data) {
  Round round(config, std::move(client_data));
  return round.run_all();
}

struct PrivacyReport {
  bool aux_inbound_ok = true;      // A saw only keys, ciphertexts, noise
  bool principal_inbound_ok = true;  // P saw only keys, counts, W's, R
  bool no_client_links = true;     // zero client-to-client envelopes
  bool counts_consistent = true;   // one public N, matching all matrix sizes
  std::vector<std::string> violations;

  bool passed() const {
    return aux_inbound_ok && principal_inbound_ok && no_client_links && counts_consistent;
  }
};

// Structural audit over a finished transcript; findings are reported, never
// thrown.
inline PrivacyReport audit_transcript(const Transcript& transcript) {
  PrivacyReport report;
  auto note = [&](std::string text) { report.violations.push_back(std::move(text)); };

  static const char* a_allowed[] = {"pk_broadcast", "enc_xi", "enc_count", "count_result",
                                    "noise_matrix"};
  static const char* p_allowed[] = {"pk_broadcast", "count_result", "masked_matrix",
                                    "noise_sum"};
  auto in = [](const std::string& kind, const char* const* list, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
      if (kind == list[i]) return true;
    return false;
  };

  std::optional<std::string> count_payload;
  for (const Envelope& e : transcript.entries) {
    if (e.to == SERVER_A && !in(e.kind, a_allowed, 5)) {
      report.aux_inbound_ok = false;
      note("seq " + std::to_string(e.seq) + ": auxiliary server received kind '" + e.kind + "'");
    }
    if (e.to == SERVER_P && !in(e.kind, p_allowed, 4)) {
      report.principal_inbound_ok = false;
      note("seq " + std::to_string(e.seq) + ": principal server received kind '" + e.kind + "'");
    }
    if (is_client_name(e.from) && is_client_name(e.to)) {
      report.no_client_links = false;
      note("seq " + std::to_string(e.seq) + ": client-to-client envelope " + e.from + " -> " +
           e.to);
    }
    if (e.kind == "count_result") {
      if (!count_payload) {
        count_payload = e.payload;
      } else if (*count_payload != e.payload) {
        report.counts_consistent = false;
        note("seq " + std::to_string(e.seq) + ": conflicting public count");
      }
    }
  }
  if (count_payload) {
    std::uint64_t n = 0;
    bool parsed = true;
    try {
      n = detail::hex_to_u64(*count_payload);
    } catch (const std::exception&) {
      parsed = false;
      report.counts_consistent = false;
      note("unparseable public count payload");
    }
    if (parsed) {
      for (const Envelope& e : transcript.entries) {
        if (e.to != SERVER_A && e.to != SERVER_P) continue;
        if (e.kind != "noise_matrix" && e.kind != "masked_matrix" && e.kind != "noise_sum")
          continue;
        try {
          const Matrix m = decode_matrix(e.payload);
          if (m.rows != n) {
            report.counts_consistent = false;
            note("seq " + std::to_string(e.seq) + ": matrix rows " + std::to_string(m.rows) +
                 " != public count " + std::to_string(n));
          }
        } catch (const std::exception&) {
          report.counts_consistent = false;
          note("seq " + std::to_string(e.seq) + ": undecodable matrix payload");
        }
      }
    }
  }
  return report;
}

}  // namespace maskforest
