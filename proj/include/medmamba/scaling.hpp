#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "medmamba/config.hpp"

namespace medmamba {

struct ScalingPoint {
  std::size_t length = 0;
  double median_ms = 0.0;
};

struct ScalingReport {
  std::vector<ScalingPoint> points;  // in the order of the requested lengths
  double slope = 0.0;                // least-squares fit of log ms against log L
  std::vector<double> doubling_ratios;  // t(L_{i+1}) / t(L_i)
};

// Least-squares slope of log(median_ms) on log(length); needs >= 2 points.
double loglog_slope(std::span<const ScalingPoint> points);

/// Median eval-mode forward time of a model built from `base` (length
/// replaced) on a [batch, L, C] input. Repetitions are interleaved across
/// lengths so slow drifts in machine load hit every length alike.
ScalingReport measure_scaling(const ModelConfig& base, std::span<const std::size_t> lengths, std::size_t reps,
                              std::size_t batch = 1);

}  // namespace medmamba
