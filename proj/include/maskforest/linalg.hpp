#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "maskforest/common.hpp"
#include "maskforest/detrng.hpp"
#include "maskforest/entropy.hpp"

namespace maskforest {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> d)
      : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != rows * cols) throw ShapeError("Matrix: data length != rows*cols");
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw ShapeError("matmul: inner dimensions differ");
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw ShapeError("add: shapes differ");
  Matrix out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw ShapeError("sub: shapes differ");
  Matrix out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

// Householder QR for square a: Q orthogonal, R upper triangular, QR = a.
inline std::pair<Matrix, Matrix> householder_qr(const Matrix& a) {
  if (a.rows != a.cols) throw ShapeError("householder_qr: matrix not square");
  const std::size_t n = a.rows;
  Matrix r = a;
  Matrix q = Matrix::identity(n);
  std::vector<double> v(n);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    double norm = 0.0;
    for (std::size_t i = k; i < n; ++i) norm += r(i, k) * r(i, k);
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    const double alpha = r(k, k) >= 0.0 ? -norm : norm;
    double vnorm2 = 0.0;
    for (std::size_t i = k; i < n; ++i) {
      v[i] = r(i, k);
      if (i == k) v[i] -= alpha;
      vnorm2 += v[i] * v[i];
    }
    if (vnorm2 == 0.0) continue;
    // R <- (I - 2vv^T/|v|^2) R on the trailing block
    for (std::size_t j = k; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t i = k; i < n; ++i) dot += v[i] * r(i, j);
      const double f = 2.0 * dot / vnorm2;
      for (std::size_t i = k; i < n; ++i) r(i, j) -= f * v[i];
    }
    // Q <- Q (I - 2vv^T/|v|^2)
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = k; j < n; ++j) dot += q(i, j) * v[j];
      const double f = 2.0 * dot / vnorm2;
      for (std::size_t j = k; j < n; ++j) q(i, j) -= f * v[j];
    }
  }
  // scrub the round-off below the diagonal so R is exactly triangular
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) r(i, j) = 0.0;
  return {std::move(q), std::move(r)};
}

// Haar-distributed orthogonal matrix: QR of an i.i.d. Gaussian matrix with the
// column signs fixed to sign(R_jj), mapping sign(0) -> +1 (Mezzadri's recipe).
inline Matrix random_orthogonal(std::size_t d, RngStream& stream) {
  if (d == 0) throw std::invalid_argument("random_orthogonal: d must be >= 1");
  Matrix a(d, d);
  for (auto& x : a.data) x = stream.gaussian(0.0, 1.0);
  auto [q, r] = householder_qr(a);
  for (std::size_t j = 0; j < d; ++j) {
    if (r(j, j) < 0.0)
      for (std::size_t i = 0; i < d; ++i) q(i, j) = -q(i, j);
  }
  return q;
}

// Diagonal scaling with entries drawn uniformly from the open interval (1, T).
inline Matrix random_scaling(std::size_t d, RngStream& stream, double t_param) {
  if (d == 0) throw std::invalid_argument("random_scaling: d must be >= 1");
  if (!(t_param > 1.0)) throw std::invalid_argument("random_scaling: t_param must be > 1");
  Matrix s(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    double u;
    do {
      u = stream.uniform01();
    } while (u == 0.0);  // keep the interval open at 1
    s(i, i) = 1.0 + u * (t_param - 1.0);
  }
  return s;
}

// M = Q S Q'. Q and S come from one stream seeded with the shared seed, Q'
// from a second stream seeded one higher, so every holder of (d, xi, T)
// reconstructs a bit-identical M. The factors stay around for analytic
// inversion and for spectrum checks (the singular values of M are diag(S)).
struct MaskingMatrix {
  Matrix m;
  double t_param = 0.0;
  Matrix q;
  std::vector<double> scales;  // diagonal of S
  Matrix q_prime;

  // M^-1 = Q'^T S^-1 Q^T, exact up to round-off because Q, Q' are orthogonal.
  Matrix inverse() const {
    const std::size_t d = m.rows;
    Matrix si(d, d);
    for (std::size_t i = 0; i < d; ++i) si(i, i) = 1.0 / scales[i];
    return matmul(matmul(transpose(q_prime), si), transpose(q));
  }
};

inline MaskingMatrix build_masking_matrix(std::size_t d, std::uint64_t xi, double t_param) {
  RngStream primary{xi};
  Matrix q = random_orthogonal(d, primary);
  Matrix s = random_scaling(d, primary, t_param);
  RngStream secondary{xi + 1};
  Matrix q_prime = random_orthogonal(d, secondary);

  MaskingMatrix mm;
  mm.m = matmul(matmul(q, s), q_prime);
  mm.t_param = t_param;
  mm.q = std::move(q);
  mm.scales.resize(d);
  for (std::size_t i = 0; i < d; ++i) mm.scales[i] = s(i, i);
  mm.q_prime = std::move(q_prime);
  return mm;
}

// Client-private additive noise; seeded from OS entropy by default, never from
// the shared seed stream.
inline Matrix noise_matrix(std::size_t n_rows, std::size_t d, double sigma,
                           EntropySource& src = os_entropy()) {
  if (!(sigma > 0.0)) throw std::invalid_argument("noise_matrix: sigma must be > 0");
  RngStream stream{src.draw_u64()};
  Matrix r(n_rows, d);
  for (auto& x : r.data) x = stream.gaussian(0.0, sigma);
  return r;
}

}  // namespace maskforest
