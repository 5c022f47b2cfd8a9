#include "medmamba/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace medmamba {

const GradCheckEntry* GradCheckReport::worst() const {
  const GradCheckEntry* worst = nullptr;
  for (const auto& e : entries) {
    if (!e.finite) return &e;
    if (!worst || e.rel_error > worst->rel_error) worst = &e;
  }
  return worst;
}

std::vector<std::string> GradCheckReport::failures() const {
  std::vector<std::string> names;
  for (const auto& e : entries)
    if (!e.passed) names.push_back(e.name);
  return names;
}

namespace {

double evaluate(const LossFn& loss, const std::vector<NamedTensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.leaf(p.value, false));
  return loss(tape, vars).value().item();
}

}  // namespace

GradCheckReport grad_check(const LossFn& loss, const std::vector<NamedTensor>& params, double tol_rel) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(tape.leaf(p.value, true));
    Var out = loss(tape, vars);
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckReport report;
  report.tol_rel = tol_rel;
  report.passed = true;
  std::vector<NamedTensor> work = params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    GradCheckEntry entry;
    entry.name = params[k].name;
    entry.size = params[k].value.size();
    const Tensor& ga = analytic[k];
    entry.finite = ga.all_finite();
    double diff2 = 0.0, ad2 = 0.0, fd2 = 0.0;
    for (std::size_t i = 0; i < entry.size && entry.finite; ++i) {
      const double theta = params[k].value[i];
      const double h = 1e-5 * (std::abs(theta) + 1.0);
      work[k].value[i] = theta + h;
      const double up = evaluate(loss, work);
      work[k].value[i] = theta - h;
      const double down = evaluate(loss, work);
      work[k].value[i] = theta;
      const double fd = (up - down) / (2.0 * h);
      if (!std::isfinite(fd)) entry.finite = false;
      const double d = ga[i] - fd;
      diff2 += d * d;
      ad2 += ga[i] * ga[i];
      fd2 += fd * fd;
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(d));
    }
    entry.rel_error = entry.finite ? std::sqrt(diff2) / std::max({std::sqrt(ad2), std::sqrt(fd2), 1e-12})
                                   : INFINITY;
    entry.passed = entry.finite && entry.rel_error <= tol_rel;
    report.passed = report.passed && entry.passed;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace medmamba
