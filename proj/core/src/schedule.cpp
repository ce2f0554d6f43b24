#include "funmatch/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "funmatch/error.hpp"

namespace funmatch {

std::string_view to_string(Decay decay) {
  return decay == Decay::quadratic ? "quadratic" : "cosine";
}

Decay parse_decay(std::string_view text) {
  if (text == "quadratic") return Decay::quadratic;
  if (text == "cosine") return Decay::cosine;
  throw ConfigError("unknown decay '" + std::string(text) + "' (expected quadratic or cosine)");
}

void ScheduleConfig::validate() const {
  if (!(peak_lr >= 0.0)) throw ConfigError("schedule: peak_lr must be non-negative");
  if (total_steps == 0) throw ConfigError("schedule: total_steps must be positive");
  if (warmup_steps >= total_steps) {
    throw ConfigError("schedule: warmup_steps (" + std::to_string(warmup_steps) + ") must be < total_steps (" +
                      std::to_string(total_steps) + ")");
  }
}

double lr_at(std::size_t step, const ScheduleConfig& config) {
  config.validate();
  if (step > config.total_steps) {
    throw ConfigError("lr_at: step " + std::to_string(step) + " beyond total " + std::to_string(config.total_steps));
  }
  if (step < config.warmup_steps) {
    return config.peak_lr * static_cast<double>(step + 1) / static_cast<double>(config.warmup_steps);
  }
  const double progress = static_cast<double>(step - config.warmup_steps) /
                          static_cast<double>(config.total_steps - config.warmup_steps);
  switch (config.decay) {
    case Decay::quadratic: {
      const double remaining = 1.0 - progress;
      return config.peak_lr * remaining * remaining;
    }
    case Decay::cosine:
      if (progress >= 1.0) return 0.0;
      return config.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
  return 0.0;
}

std::size_t scaled_warmup(std::size_t total_steps, std::size_t nominal) {
  return std::min(nominal, total_steps / 10);
}

}  // namespace funmatch
