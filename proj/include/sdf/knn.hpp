// SPDX-License-Identifier: Apache-2.0
//
// Exact k-nearest-neighbor search in 3-D with a bucketed kd-tree.
// Ties in distance are broken by ascending point index.
#pragma once

#include "sdf/core.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <thread>
#include <utility>
#include <vector>

namespace sdf::knn {

struct Neighbor {
  double dist2;
  std::size_t index;
  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }
};

class KdTree {
 public:
  static constexpr std::size_t kLeafSize = 12;

  explicit KdTree(const Matrix& points) : pts_(points) {
    if (points.cols() != 3) throw InvalidArgument("KdTree: points must be N x 3");
    order_.resize(static_cast<std::size_t>(points.rows()));
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (!order_.empty()) build(0, order_.size());
  }

  std::size_t size() const noexcept { return order_.size(); }

  /// The k nearest points to `q`, sorted ascending, skipping index `exclude`.
  std::vector<Neighbor> query(const Vec3& q, std::size_t k,
                              std::size_t exclude = static_cast<std::size_t>(-1)) const {
    std::vector<Neighbor> heap;
    heap.reserve(k + 1);
    if (k > 0 && !nodes_.empty()) search(0, q, k, exclude, heap);
    std::sort_heap(heap.begin(), heap.end());
    return heap;
  }

 private:
  struct Node {
    std::size_t begin, end;  // range in order_
    int dim = -1;            // -1 for leaves
    double split = 0.0;
    std::size_t left = 0, right = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      const Vec3 p = pts_.row(static_cast<Eigen::Index>(order_[i])).transpose();
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    int dim = 0;
    (hi - lo).maxCoeff(&dim);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                       return pts_(static_cast<Eigen::Index>(a), dim) < pts_(static_cast<Eigen::Index>(b), dim);
                     });
    const double split = pts_(static_cast<Eigen::Index>(order_[mid]), dim);
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    nodes_[id].dim = dim;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void offer(std::vector<Neighbor>& heap, std::size_t k, Neighbor n) const {
    if (heap.size() < k) {
      heap.push_back(n);
      std::push_heap(heap.begin(), heap.end());
    } else if (n < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = n;
      std::push_heap(heap.begin(), heap.end());
    }
  }

  void search(std::size_t id, const Vec3& q, std::size_t k, std::size_t exclude,
              std::vector<Neighbor>& heap) const {
    const Node& n = nodes_[id];
    if (n.dim < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        if (idx == exclude) continue;
        const double d2 = (pts_.row(static_cast<Eigen::Index>(idx)).transpose() - q).squaredNorm();
        offer(heap, k, {d2, idx});
      }
      return;
    }
    const double diff = q[n.dim] - n.split;
    const std::size_t near = diff < 0 ? n.left : n.right;
    const std::size_t far = diff < 0 ? n.right : n.left;
    search(near, q, k, exclude, heap);
    // Points equal to the split can sit on either side, so visit on equality.
    if (heap.size() < k || diff * diff <= heap.front().dist2) search(far, q, k, exclude, heap);
  }

  Matrix pts_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

/// Runs fn(i) for i in [0, n), split into contiguous chunks over `threads`
/// workers (0 or 1 = calling thread only).
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n < 64) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t per = (n + threads - 1) / threads;
  for (std::size_t b = 0; b < n; b += per)
    pool.emplace_back([&, b] {
      for (std::size_t i = b; i < std::min(n, b + per); ++i) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace sdf::knn
