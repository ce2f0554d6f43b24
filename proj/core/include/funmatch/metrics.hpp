#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace funmatch {

inline constexpr const char* kMetricsHeader = "step,epoch,split,loss,top1,agreement,lr,wall_s";

/// One line of metrics.csv. Optional columns are written empty.
struct MetricsRow {
  std::size_t step = 0;
  double epoch = 0.0;
  std::string split;
  double loss = 0.0;
  std::optional<double> top1;
  std::optional<double> agreement;
  double lr = 0.0;
  double wall_s = 0.0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

/// Shortest round-trip decimal form of a double ("nan"/"inf" for non-finite values).
std::string format_number(double value);

std::string format_row(const MetricsRow& row);
MetricsRow parse_row(const std::string& line);

/// Append-only metrics.csv writer. Every row is flushed as it is written.
class MetricsWriter {
 public:
  /// Creates the file with the header, or appends to an existing file after
  /// checking its header (used when resuming).
  explicit MetricsWriter(const std::filesystem::path& path, bool append = false);

  void write(const MetricsRow& row);
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

/// Drops rows with step > max_step (resuming from an earlier checkpoint).
void truncate_metrics(const std::filesystem::path& path, std::size_t max_step);

}  // namespace funmatch
