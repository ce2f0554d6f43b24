#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "funmatch/data.hpp"
#include "funmatch/error.hpp"

namespace funmatch {

/// `name` or `name[A%:B%]` with each bound an optional integer percent in 0..100.
struct SplitSpec {
  std::string name;
  std::optional<int> lower;
  std::optional<int> upper;

  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

enum class SplitErrorKind {
  empty,
  bad_name,
  whitespace,
  malformed_bracket,
  missing_percent,
  bad_number,
  percent_out_of_range,
  inverted_range,
};

class SplitParseError : public ConfigError {
 public:
  SplitParseError(SplitErrorKind kind, std::size_t position, const std::string& text, const std::string& message);

  SplitErrorKind kind() const noexcept { return kind_; }
  /// Byte offset of the offending character.
  std::size_t position() const noexcept { return position_; }

 private:
  SplitErrorKind kind_;
  std::size_t position_;
};

SplitSpec parse_split_spec(std::string_view text);
std::string render(const SplitSpec& spec);

/// [floor(A*n/100), floor(B*n/100)), A defaulting to 0 and B to 100.
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};
IndexRange split_range(std::size_t n, const SplitSpec& spec);

/// Slice of `ds` selected by `spec`; ds.name must equal spec.name.
Dataset apply_split(const Dataset& ds, const SplitSpec& spec);

/// Named base splits ("train", "validation", "test") of one dataset.
class SplitRegistry {
 public:
  void add(Dataset ds);
  bool contains(std::string_view name) const;
  const Dataset& base(std::string_view name) const;
  Dataset resolve(const SplitSpec& spec) const;
  Dataset resolve(std::string_view text) const { return resolve(parse_split_spec(text)); }
  std::vector<std::string> names() const;

 private:
  std::map<std::string, Dataset, std::less<>> splits_;
};

}  // namespace funmatch
