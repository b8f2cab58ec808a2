// Copyright 2026 xmodal authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <string>

#include "xmodal/error.hpp"

namespace xmodal {

/// Linear warmup from 0 to peak over the first warmup_fraction of steps,
/// then linear decay back to 0 at total_steps.
struct LRSchedule {
  double peak = 0.001;
  long long total_steps = 1;
  double warmup_fraction = 0.1;

  void validate() const {
    if (!(peak > 0)) throw ValidationError("LRSchedule: peak must be positive");
    if (total_steps < 1) throw ValidationError("LRSchedule: total_steps must be >= 1");
    if (!(warmup_fraction > 0 && warmup_fraction < 1)) {
      throw ValidationError("LRSchedule: warmup_fraction must lie in (0, 1)");
    }
  }
};

inline double lr_at_step(const LRSchedule& sched, double step) {
  sched.validate();
  const double total = static_cast<double>(sched.total_steps);
  if (step < 0 || step > total) {
    throw ValidationError("lr_at_step: step " + std::to_string(step) +
                          " outside [0, " + std::to_string(sched.total_steps) + "]");
  }
  const double warmup_end = sched.warmup_fraction * total;
  if (step <= warmup_end) {
    return sched.peak * (step / warmup_end);
  }
  return sched.peak * ((total - step) / (total - warmup_end));
}

}  // namespace xmodal
