#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "maskforest/common.hpp"
#include "maskforest/detrng.hpp"
#include "maskforest/linalg.hpp"

namespace maskforest {

enum class Algo { IF, EIF };

// Expected path length of an unsuccessful BST search over n points; the
// standard normalization constant for isolation scores.
inline double avg_path_c(std::size_t n) {
  if (n <= 1) return 0.0;
  if (n == 2) return 1.0;
  constexpr double euler_gamma = 0.5772156649015329;
  const double m = static_cast<double>(n);
  return 2.0 * (std::log(m - 1.0) + euler_gamma) - 2.0 * (m - 1.0) / m;
}

struct SplitRule {
  bool oblique = false;
  // axis-aligned: cut at `value` on column `dim` (strictly inside the node's range)
  std::size_t dim = 0;
  double value = 0.0;
  // oblique: route left iff (x - offset_point) . normal <= 0
  std::vector<double> normal;
  std::vector<double> offset_point;
};

struct TreeNode {
  SplitRule rule;
  std::unique_ptr<TreeNode> left;
  std::unique_ptr<TreeNode> right;
  std::size_t size = 0;  // external nodes: training points that landed here
  std::size_t depth = 0;

  bool is_external() const { return !left; }
};

struct Forest {
  std::vector<std::unique_ptr<TreeNode>> trees;
  std::size_t psi = 0;  // effective subsample size, min(requested, N)
  std::size_t max_depth = 0;
  Algo algo = Algo::IF;
  std::size_t dims = 0;
};

using ScoreVector = std::vector<double>;

namespace detail {

inline bool rows_all_identical(const Matrix& data, const std::vector<std::size_t>& rows) {
  for (std::size_t i = 1; i < rows.size(); ++i)
    for (std::size_t j = 0; j < data.cols; ++j)
      if (data(rows[i], j) != data(rows[0], j)) return false;
  return true;
}

inline std::unique_ptr<TreeNode> external_node(std::size_t size, std::size_t depth) {
  auto node = std::make_unique<TreeNode>();
  node->size = size;
  node->depth = depth;
  return node;
}

inline std::unique_ptr<TreeNode> build_tree(const Matrix& data, std::vector<std::size_t> rows,
                                            std::size_t depth, std::size_t max_depth, Algo algo,
                                            RngStream& stream) {
  if (rows.size() <= 1 || depth >= max_depth || rows_all_identical(data, rows))
    return external_node(rows.size(), depth);
  const std::size_t d = data.cols;

  SplitRule rule;
  std::vector<std::size_t> left_rows, right_rows;
  if (algo == Algo::IF) {
    // pick a non-degenerate column; one exists because the rows are not all identical
    std::size_t dim;
    double lo, hi;
    for (;;) {
      dim = static_cast<std::size_t>(stream.next_u64() % d);
      lo = hi = data(rows[0], dim);
      for (std::size_t r : rows) {
        lo = std::min(lo, data(r, dim));
        hi = std::max(hi, data(r, dim));
      }
      if (lo < hi) break;
    }
    double value;
    do {
      value = lo + stream.uniform01() * (hi - lo);
    } while (!(value > lo && value < hi));  // keep the cut strictly interior
    rule.dim = dim;
    rule.value = value;
    for (std::size_t r : rows)
      (data(r, dim) < value ? left_rows : right_rows).push_back(r);
  } else {
    std::vector<double> bmin(d), bmax(d);
    for (std::size_t j = 0; j < d; ++j) bmin[j] = bmax[j] = data(rows[0], j);
    for (std::size_t r : rows)
      for (std::size_t j = 0; j < d; ++j) {
        bmin[j] = std::min(bmin[j], data(r, j));
        bmax[j] = std::max(bmax[j], data(r, j));
      }
    rule.oblique = true;
    rule.normal.resize(d);
    rule.offset_point.resize(d);
    // a random hyperplane through the bounding box can miss the points
    // entirely; retry a bounded number of times before giving up on the node
    for (int attempt = 0; attempt < 64; ++attempt) {
      bool any_nonzero = false;
      for (std::size_t j = 0; j < d; ++j) {
        rule.normal[j] = stream.gaussian(0.0, 1.0);
        any_nonzero |= rule.normal[j] != 0.0;
      }
      if (!any_nonzero) continue;
      for (std::size_t j = 0; j < d; ++j)
        rule.offset_point[j] = bmin[j] + stream.uniform01() * (bmax[j] - bmin[j]);
      left_rows.clear();
      right_rows.clear();
      for (std::size_t r : rows) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j)
          dot += (data(r, j) - rule.offset_point[j]) * rule.normal[j];
        (dot <= 0.0 ? left_rows : right_rows).push_back(r);
      }
      if (!left_rows.empty() && !right_rows.empty()) break;
    }
    if (left_rows.empty() || right_rows.empty())
      return external_node(rows.size(), depth);
  }

  auto node = std::make_unique<TreeNode>();
  node->rule = std::move(rule);
  node->depth = depth;
  node->left = build_tree(data, std::move(left_rows), depth + 1, max_depth, algo, stream);
  node->right = build_tree(data, std::move(right_rows), depth + 1, max_depth, algo, stream);
  return node;
}

}  // namespace detail

inline Forest fit(const Matrix& data, Algo algo, std::size_t t, std::size_t psi,
                  RngStream& stream) {
  if (data.rows == 0 || data.cols == 0) throw std::invalid_argument("fit: empty data");
  if (t == 0) throw std::invalid_argument("fit: tree count must be >= 1");
  if (psi == 0) throw std::invalid_argument("fit: psi must be >= 1");
  const std::size_t n = data.rows;
  const std::size_t psi_eff = std::min(psi, n);

  Forest forest;
  forest.psi = psi_eff;
  forest.max_depth = std::bit_width(psi_eff - 1);  // ceil(log2(psi_eff))
  forest.algo = algo;
  forest.dims = data.cols;
  forest.trees.reserve(t);

  std::vector<std::size_t> idx(n);
  for (std::size_t tree = 0; tree < t; ++tree) {
    std::iota(idx.begin(), idx.end(), 0);
    // partial Fisher-Yates: psi_eff distinct rows without replacement
    for (std::size_t i = 0; i < psi_eff; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(stream.next_u64() % (n - i));
      std::swap(idx[i], idx[j]);
    }
    std::vector<std::size_t> sample(idx.begin(), idx.begin() + psi_eff);
    forest.trees.push_back(
        detail::build_tree(data, std::move(sample), 0, forest.max_depth, algo, stream));
  }
  return forest;
}

inline double path_length(const TreeNode& tree, const double* x, std::size_t d) {
  const TreeNode* node = &tree;
  double edges = 0.0;
  while (!node->is_external()) {
    const SplitRule& rule = node->rule;
    bool go_left;
    if (rule.oblique) {
      if (rule.normal.size() != d) throw ShapeError("path_length: point dimension mismatch");
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += (x[j] - rule.offset_point[j]) * rule.normal[j];
      go_left = dot <= 0.0;
    } else {
      if (rule.dim >= d) throw ShapeError("path_length: point dimension mismatch");
      go_left = x[rule.dim] < rule.value;
    }
    node = go_left ? node->left.get() : node->right.get();
    edges += 1.0;
  }
  return edges + avg_path_c(node->size);
}

inline double path_length(const TreeNode& tree, const std::vector<double>& x) {
  return path_length(tree, x.data(), x.size());
}

inline ScoreVector score_all(const Forest& forest, const Matrix& data) {
  if (data.cols != forest.dims) throw ShapeError("score_all: column count != forest dims");
  const double denom = avg_path_c(forest.psi);
  ScoreVector scores(data.rows);
  for (std::size_t r = 0; r < data.rows; ++r) {
    double total = 0.0;
    for (const auto& tree : forest.trees)
      total += path_length(*tree, &data.data[r * data.cols], data.cols);
    const double mean = total / static_cast<double>(forest.trees.size());
    scores[r] = denom > 0.0 ? std::exp2(-mean / denom) : 1.0;
  }
  return scores;
}

}  // namespace maskforest
