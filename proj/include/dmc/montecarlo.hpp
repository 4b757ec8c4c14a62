#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <thread>
#include <vector>

namespace dmc {

// Deterministic Monte Carlo plumbing: per-path seeds are derived from
// (master seed, path index) with the counter scheme in rng.hpp, workers own
// fixed index ranges, and every reduction is a fixed-order pairwise tree over
// a per-path buffer, so results do not depend on the thread count.

inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 32) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

inline MeanSe mean_se(std::span<const double> v) {
  MeanSe out;
  out.n = v.size();
  if (v.empty()) return out;
  out.mean = pairwise_sum(v) / static_cast<double>(v.size());
  std::vector<double> sq(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    double c = v[i] - out.mean;
    sq[i] = c * c;
  }
  double var = pairwise_sum(sq) / static_cast<double>(v.size());
  out.se = std::sqrt(var / static_cast<double>(v.size()));
  return out;
}

//! Run body(begin, end) over fixed contiguous chunks of [0, n).
inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t, std::size_t)>& body) {
  if (threads <= 1 || n < 2) {
    body(0, n);
    return;
  }
  std::size_t nt = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  std::size_t chunk = (n + nt - 1) / nt;
  for (std::size_t w = 0; w < nt; ++w) {
    std::size_t b = w * chunk;
    std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&body, b, e] { body(b, e); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace dmc
