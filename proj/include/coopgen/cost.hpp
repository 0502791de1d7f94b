// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace coopgen {

/// Exact operation counters. These are the deterministic stand-in for wall
/// time: one forward pass per model invocation (full or incremental), one
/// attention score per query-key pair per head per layer.
struct CostCounters {
  std::uint64_t forward_passes = 0;
  std::uint64_t attention_scores = 0;
  std::uint64_t tokens_scored = 0;

  CostCounters& operator+=(const CostCounters& other) {
    forward_passes += other.forward_passes;
    attention_scores += other.attention_scores;
    tokens_scored += other.tokens_scored;
    return *this;
  }

  friend CostCounters operator+(CostCounters a, const CostCounters& b) { return a += b; }

  // Only meaningful when `later` was taken after `earlier` on the same counter.
  friend CostCounters operator-(const CostCounters& later, const CostCounters& earlier) {
    return {later.forward_passes - earlier.forward_passes,
            later.attention_scores - earlier.attention_scores,
            later.tokens_scored - earlier.tokens_scored};
  }

  bool operator==(const CostCounters&) const = default;
};

}  // namespace coopgen
