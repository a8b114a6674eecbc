#pragma once

#include <gmpxx.h>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "maskforest/common.hpp"
#include "maskforest/entropy.hpp"

namespace maskforest::paillier {

// g is fixed to n+1, so a public key is fully described by n. With that
// choice Enc(x) = (1 + x*n) * r^n mod n^2 and no discrete log is needed.
struct PublicKey {
  mpz_class n;
  mpz_class n_squared;
  mpz_class g;
  unsigned bits = 0;

  static PublicKey from_n(mpz_class modulus) {
    PublicKey pk;
    pk.n = std::move(modulus);
    pk.n_squared = pk.n * pk.n;
    pk.g = pk.n + 1;
    pk.bits = static_cast<unsigned>(mpz_sizeinbase(pk.n.get_mpz_t(), 2));
    return pk;
  }

  std::string n_hex() const { return n.get_str(16); }
  static PublicKey from_hex(const std::string& hex) { return from_n(mpz_class(hex, 16)); }
};

struct SecretKey {
  mpz_class lambda;  // lcm(p-1, q-1)
  mpz_class mu;      // (L(g^lambda mod n^2))^-1 mod n
};

struct KeyPair {
  PublicKey pk;
  SecretKey sk;
};

struct Ciphertext {
  mpz_class value;

  std::string to_hex() const { return value.get_str(16); }
  static Ciphertext from_hex(const std::string& hex) { return Ciphertext{mpz_class(hex, 16)}; }
};

namespace detail {

inline mpz_class mpz_from_bytes(const std::uint8_t* buf, std::size_t len) {
  mpz_class v;
  mpz_import(v.get_mpz_t(), len, 1, 1, 1, 0, buf);
  return v;
}

inline mpz_class random_bits(EntropySource& src, std::size_t bits) {
  const std::size_t bytes = (bits + 7) / 8;
  std::vector<std::uint8_t> buf(bytes);
  src.fill(buf.data(), bytes);
  mpz_class v = mpz_from_bytes(buf.data(), bytes);
  mpz_fdiv_r_2exp(v.get_mpz_t(), v.get_mpz_t(), bits);  // trim excess high bits
  return v;
}

// Uniform in [0, bound) by rejection on the bit-length of bound.
inline mpz_class random_below(EntropySource& src, const mpz_class& bound) {
  const std::size_t bits = mpz_sizeinbase(bound.get_mpz_t(), 2);
  mpz_class v;
  do {
    v = random_bits(src, bits);
  } while (v >= bound);
  return v;
}

// Random prime of exactly `bits` bits with the top two bits set, so the
// product of two such primes has exactly 2*bits bits.
inline mpz_class random_prime(EntropySource& src, std::size_t bits) {
  for (;;) {
    mpz_class candidate = random_bits(src, bits);
    mpz_setbit(candidate.get_mpz_t(), bits - 1);
    mpz_setbit(candidate.get_mpz_t(), bits - 2);
    mpz_class prime;
    mpz_nextprime(prime.get_mpz_t(), candidate.get_mpz_t());
    if (mpz_sizeinbase(prime.get_mpz_t(), 2) == bits) return prime;
    // nextprime overflowed past 2^bits; redraw
  }
}

inline mpz_class l_function(const mpz_class& u, const mpz_class& n) { return (u - 1) / n; }

}  // namespace detail

inline KeyPair gen(unsigned keysize, EntropySource& src = os_entropy()) {
  if (keysize != 512 && keysize != 1024 && keysize != 2048 && keysize != 3072)
    throw std::invalid_argument("paillier::gen: keysize must be one of 512/1024/2048/3072");
  const std::size_t half = keysize / 2;
  mpz_class p, q;
  do {
    p = detail::random_prime(src, half);
    q = detail::random_prime(src, half);
  } while (p == q);

  KeyPair kp;
  kp.pk = PublicKey::from_n(p * q);
  kp.sk.lambda = lcm(p - 1, q - 1);
  const mpz_class u = [&] {
    mpz_class r;
    mpz_powm(r.get_mpz_t(), kp.pk.g.get_mpz_t(), kp.sk.lambda.get_mpz_t(),
             kp.pk.n_squared.get_mpz_t());
    return r;
  }();
  const mpz_class l = detail::l_function(u, kp.pk.n);
  if (mpz_invert(kp.sk.mu.get_mpz_t(), l.get_mpz_t(), kp.pk.n.get_mpz_t()) == 0)
    throw std::runtime_error("paillier::gen: L(g^lambda) not invertible mod n");
  return kp;
}

inline Ciphertext enc(const mpz_class& x, const PublicKey& pk, EntropySource& src = os_entropy()) {
  if (x < 0 || x >= pk.n)
    throw std::invalid_argument("paillier::enc: plaintext out of [0, n)");
  mpz_class r;
  do {
    r = detail::random_below(src, pk.n);
  } while (r == 0 || gcd(r, pk.n) != 1);
  mpz_class rn;
  mpz_powm(rn.get_mpz_t(), r.get_mpz_t(), pk.n.get_mpz_t(), pk.n_squared.get_mpz_t());
  mpz_class c = ((1 + x * pk.n) % pk.n_squared) * rn % pk.n_squared;
  return Ciphertext{std::move(c)};
}

inline mpz_class dec(const Ciphertext& c, const SecretKey& sk, const PublicKey& pk) {
  if (c.value <= 0 || c.value >= pk.n_squared || gcd(c.value, pk.n_squared) != 1)
    throw InvalidCiphertext("paillier::dec: ciphertext outside Z*_{n^2}");
  mpz_class u;
  mpz_powm(u.get_mpz_t(), c.value.get_mpz_t(), sk.lambda.get_mpz_t(), pk.n_squared.get_mpz_t());
  return detail::l_function(u, pk.n) * sk.mu % pk.n;
}

// [x1] (+) [x2]: ciphertext product decrypts to the plaintext sum mod n.
inline Ciphertext hom_add(const Ciphertext& a, const Ciphertext& b, const PublicKey& pk) {
  return Ciphertext{a.value * b.value % pk.n_squared};
}

// k (x) [x]: ciphertext exponentiation decrypts to k*x mod n.
inline Ciphertext scalar_mul(const mpz_class& k, const Ciphertext& c, const PublicKey& pk) {
  if (k < 0) throw std::invalid_argument("paillier::scalar_mul: k must be >= 0");
  mpz_class v;
  mpz_powm(v.get_mpz_t(), c.value.get_mpz_t(), k.get_mpz_t(), pk.n_squared.get_mpz_t());
  return Ciphertext{std::move(v)};
}

inline Ciphertext scalar_mul(std::uint64_t k, const Ciphertext& c, const PublicKey& pk) {
  return scalar_mul(mpz_class(static_cast<unsigned long>(k)), c, pk);
}

}  // namespace maskforest::paillier
