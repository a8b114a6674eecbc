#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maskforest/common.hpp"
#include "maskforest/linalg.hpp"

namespace maskforest {

inline std::string base64_encode(const std::uint8_t* data, std::size_t len) {
  static constexpr char alphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= len; i += 3) {
    const std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out += alphabet[(v >> 18) & 63];
    out += alphabet[(v >> 12) & 63];
    out += alphabet[(v >> 6) & 63];
    out += alphabet[v & 63];
  }
  if (i + 1 == len) {
    const std::uint32_t v = data[i] << 16;
    out += alphabet[(v >> 18) & 63];
    out += alphabet[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == len) {
    const std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
    out += alphabet[(v >> 18) & 63];
    out += alphabet[(v >> 12) & 63];
    out += alphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

inline std::string base64_encode(const std::vector<std::uint8_t>& data) {
  return base64_encode(data.data(), data.size());
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw std::invalid_argument("base64: length not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) throw std::invalid_argument("base64: stray padding");
        vals[k] = 0;
        ++pad;
      } else {
        if (pad > 0) throw std::invalid_argument("base64: data after padding");
        vals[k] = value_of(c);
        if (vals[k] < 0) throw std::invalid_argument("base64: invalid character");
      }
    }
    const std::uint32_t v = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
    out.push_back((v >> 16) & 0xFF);
    if (pad < 2) out.push_back((v >> 8) & 0xFF);
    if (pad < 1) out.push_back(v & 0xFF);
  }
  return out;
}

namespace detail {

inline void put_u32_le(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) buf.push_back((v >> (8 * k)) & 0xFF);
}

inline std::uint32_t get_u32_le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

// Matrix payload: u32 rows, u32 cols, then row-major f64s, all little-endian,
// wrapped in base64.
inline std::string encode_matrix(const Matrix& m) {
  std::vector<std::uint8_t> buf;
  buf.reserve(8 + m.data.size() * 8);
  detail::put_u32_le(buf, static_cast<std::uint32_t>(m.rows));
  detail::put_u32_le(buf, static_cast<std::uint32_t>(m.cols));
  for (double x : m.data) {
    const auto bits = std::bit_cast<std::uint64_t>(x);
    for (int k = 0; k < 8; ++k) buf.push_back((bits >> (8 * k)) & 0xFF);
  }
  return base64_encode(buf);
}

inline Matrix decode_matrix(const std::string& payload) {
  const std::vector<std::uint8_t> buf = base64_decode(payload);
  if (buf.size() < 8) throw std::invalid_argument("matrix payload: truncated header");
  const std::size_t rows = detail::get_u32_le(buf.data());
  const std::size_t cols = detail::get_u32_le(buf.data() + 4);
  if (buf.size() != 8 + rows * cols * 8)
    throw std::invalid_argument("matrix payload: size does not match header");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k)
      bits |= static_cast<std::uint64_t>(buf[8 + i * 8 + k]) << (8 * k);
    m.data[i] = std::bit_cast<double>(bits);
  }
  return m;
}

inline std::string client_name(std::size_t index) { return "C" + std::to_string(index); }
constexpr const char* SERVER_P = "P";
constexpr const char* SERVER_A = "A";

inline bool is_client_name(const std::string& party) {
  if (party.size() < 2 || party[0] != 'C') return false;
  for (std::size_t i = 1; i < party.size(); ++i)
    if (party[i] < '0' || party[i] > '9') return false;
  return true;
}

struct Envelope {
  std::uint64_t seq = 0;
  std::string from;
  std::string to;
  std::string kind;
  std::string payload;
};

// Every kind a conforming round may emit. The audit treats anything else as a
// violation rather than a parse failure, so injected garbage stays auditable.
inline bool is_known_kind(const std::string& kind) {
  static const char* kinds[] = {"pk_broadcast", "enc_xi",       "enc_Xi_sum",   "enc_count",
                                "count_result", "enc_offset_start", "noise_matrix",
                                "masked_matrix", "noise_sum",   "score_vector", "outlier_policy"};
  for (const char* k : kinds)
    if (kind == k) return true;
  return false;
}

struct Transcript {
  std::vector<Envelope> entries;

  std::string to_ndjson() const {
    std::string out;
    for (const Envelope& e : entries) {
      nlohmann::ordered_json line;
      line["seq"] = e.seq;
      line["from"] = e.from;
      line["to"] = e.to;
      line["kind"] = e.kind;
      line["payload"] = e.payload;
      out += line.dump();
      out += '\n';
    }
    return out;
  }

  void save_ndjson(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << to_ndjson();
    if (!f) throw std::runtime_error("write failed: " + path);
  }

  static Transcript parse_ndjson(std::istream& in) {
    Transcript t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        throw ParseError(lineno, "transcript: invalid JSON");
      }
      if (!j.is_object() || !j.contains("seq") || !j.contains("from") || !j.contains("to") ||
          !j.contains("kind") || !j.contains("payload") || !j["seq"].is_number_unsigned() ||
          !j["from"].is_string() || !j["to"].is_string() || !j["kind"].is_string() ||
          !j["payload"].is_string())
        throw ParseError(lineno, "transcript: missing or mistyped envelope field");
      Envelope e;
      e.seq = j["seq"].get<std::uint64_t>();
      e.from = j["from"].get<std::string>();
      e.to = j["to"].get<std::string>();
      e.kind = j["kind"].get<std::string>();
      e.payload = j["payload"].get<std::string>();
      t.entries.push_back(std::move(e));
    }
    return t;
  }

  static Transcript load_ndjson(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    return parse_ndjson(f);
  }
};

}  // namespace maskforest
