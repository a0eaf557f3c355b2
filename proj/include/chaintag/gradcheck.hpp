#pragma once

// Central finite differences against analytic gradients.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "chaintag/numerics.hpp"

namespace chaintag {

struct GradientMismatch {
  std::string parameter;
  std::size_t entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
  double numeric_wide = 0.0;  // same difference at 10x the step, filled for failures only
};

struct GradientCheckReport {
  std::size_t checked = 0;
  double max_relative_error = 0.0;
  GradientMismatch worst;
  std::vector<GradientMismatch> failures;

  bool passed() const { return failures.empty(); }
};

struct GradientCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  double floor = 1e-8;  // added to |numeric| in the denominator
  bool include_untrainable = false;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / (std::abs(numeric) + floor);
}

// `loss(store)` evaluates the objective at the store's current values;
// `analytic` is laid out like the store. Every entry of every (trainable)
// parameter is perturbed in turn and restored bit-exactly afterwards.
inline GradientCheckReport check_gradients(ParameterStore& store, const Gradients& analytic,
                                           const std::function<double(const ParameterStore&)>& loss,
                                           const GradientCheckOptions& opt = {}) {
  GradientCheckReport rep;
  auto& entries = store.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i].trainable && !opt.include_untrainable) continue;
    auto vals = entries[i].value.values();
    const auto grads = analytic.at(i).values();
    for (std::size_t k = 0; k < vals.size(); ++k) {
      const double orig = vals[k];
      vals[k] = orig + opt.step;
      const double up = loss(store);
      vals[k] = orig - opt.step;
      const double down = loss(store);
      vals[k] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      GradientMismatch m{entries[i].name, k, grads[k], numeric,
                         relative_error(grads[k], numeric, opt.floor)};
      ++rep.checked;
      if (rep.checked == 1 || m.relative_error > rep.max_relative_error) {
        rep.max_relative_error = m.relative_error;
        rep.worst = m;
      }
      if (!(m.relative_error <= opt.tolerance)) {
        // A second estimate helps tell roundoff in the loss from a real error.
        const double wide = 10.0 * opt.step;
        vals[k] = orig + wide;
        const double up_w = loss(store);
        vals[k] = orig - wide;
        const double down_w = loss(store);
        vals[k] = orig;
        m.numeric_wide = (up_w - down_w) / (2.0 * wide);
        rep.failures.push_back(m);
      }
    }
  }
  return rep;
}

}  // namespace chaintag
