#pragma once

#include <cstddef>
#include <string_view>

namespace funmatch {

enum class Decay { quadratic, cosine };

std::string_view to_string(Decay decay);
Decay parse_decay(std::string_view text);

/// Linear warmup to peak_lr, then decay to zero at total_steps.
struct ScheduleConfig {
  double peak_lr = 0.01;
  std::size_t warmup_steps = 1800;
  std::size_t total_steps = 10000;
  Decay decay = Decay::quadratic;

  void validate() const;
};

/// warmup:    peak * (step + 1) / warmup                       for step < warmup
/// quadratic: peak * (1 - (step - warmup) / (total - warmup))^2
/// cosine:    peak * 0.5 * (1 + cos(pi * (step - warmup) / (total - warmup)))
/// Throws ConfigError for step > total.
double lr_at(std::size_t step, const ScheduleConfig& config);

/// Warmup for short runs: min(1800, total / 10).
std::size_t scaled_warmup(std::size_t total_steps, std::size_t nominal = 1800);

}  // namespace funmatch
