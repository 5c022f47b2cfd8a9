#include "medmamba/scaling.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "medmamba/errors.hpp"
#include "medmamba/model.hpp"

namespace medmamba {

double loglog_slope(std::span<const ScalingPoint> points) {
  if (points.size() < 2) throw DomainError("slope fit needs at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(points.size());
  for (const auto& p : points) {
    if (p.length == 0 || !(p.median_ms > 0.0)) throw DomainError("slope fit needs positive lengths and times");
    const double x = std::log(static_cast<double>(p.length)), y = std::log(p.median_ms);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double den = n * sxx - sx * sx;
  if (den == 0.0) throw DomainError("slope fit needs distinct lengths");
  return (n * sxy - sx * sy) / den;
}

ScalingReport measure_scaling(const ModelConfig& base, std::span<const std::size_t> lengths, std::size_t reps,
                              std::size_t batch) {
  if (lengths.empty() || reps == 0 || batch == 0) throw DomainError("measure_scaling: empty request");
  std::vector<model::Model> models;
  std::vector<Tensor> inputs;
  Rng rng(7);
  for (std::size_t l : lengths) {
    ModelConfig c = base;
    c.length = l;
    c.validate();
    models.emplace_back(c, 41);
    Tensor x({batch, l, c.channels});
    for (double& v : x.values()) v = rng.normal();
    inputs.push_back(std::move(x));
    models.back().predict(inputs.back());  // warm-up
  }
  std::vector<std::vector<double>> times(lengths.size());
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      models[i].predict(inputs[i]);
      times[i].push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
  }
  ScalingReport rep;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    auto& t = times[i];
    std::nth_element(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(t.size() / 2), t.end());
    double med = t[t.size() / 2];
    if (t.size() % 2 == 0) {
      med = 0.5 * (med + *std::max_element(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(t.size() / 2)));
    }
    rep.points.push_back({lengths[i], med});
  }
  if (rep.points.size() >= 2) rep.slope = loglog_slope(rep.points);
  for (std::size_t i = 1; i < rep.points.size(); ++i) rep.doubling_ratios.push_back(rep.points[i].median_ms / rep.points[i - 1].median_ms);
  return rep;
}

}  // namespace medmamba
