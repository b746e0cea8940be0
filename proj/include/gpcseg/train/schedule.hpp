#pragma once

#include <cmath>
#include <cstdint>

#include "gpcseg/core/error.hpp"

namespace gpcseg {

struct LrSchedule {
  double initial = 1e-3;
  double decay_rate = 0.9;
  std::int64_t decay_every = 1000;
  bool staircase = true;

  void validate() const {
    if (!(initial > 0)) throw ConfigError("initial learning rate must be positive");
    if (!(decay_rate > 0) || decay_rate > 1) throw ConfigError("decay_rate must be in (0, 1]");
    if (decay_every < 1) throw ConfigError("decay_every must be >= 1");
  }
};

inline double lr_at(std::int64_t step, const LrSchedule& s) {
  if (step < 0) throw ConfigError("step must be >= 0");
  const double e = s.staircase ? static_cast<double>(step / s.decay_every)
                               : static_cast<double>(step) / static_cast<double>(s.decay_every);
  return s.initial * std::pow(s.decay_rate, e);
}

}  // namespace gpcseg
