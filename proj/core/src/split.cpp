#include "funmatch/split.hpp"

#include <cctype>

namespace funmatch {

namespace {

std::string kind_label(SplitErrorKind kind) {
  switch (kind) {
    case SplitErrorKind::empty: return "empty split spec";
    case SplitErrorKind::bad_name: return "invalid split name";
    case SplitErrorKind::whitespace: return "whitespace is not allowed";
    case SplitErrorKind::malformed_bracket: return "malformed bracket";
    case SplitErrorKind::missing_percent: return "missing '%'";
    case SplitErrorKind::bad_number: return "expected an integer percent";
    case SplitErrorKind::percent_out_of_range: return "percent > 100";
    case SplitErrorKind::inverted_range: return "empty or inverted range";
  }
  return "parse error";
}

class SplitParser {
 public:
  explicit SplitParser(std::string_view text) : text_(text) {}

  SplitSpec parse() {
    if (text_.empty()) fail(SplitErrorKind::empty, 0);
    for (std::size_t i = 0; i < text_.size(); ++i) {
      if (std::isspace(static_cast<unsigned char>(text_[i]))) fail(SplitErrorKind::whitespace, i);
    }
    SplitSpec spec;
    while (pos_ < text_.size() && is_name_char(text_[pos_])) spec.name.push_back(text_[pos_++]);
    if (spec.name.empty()) fail(SplitErrorKind::bad_name, pos_);
    if (pos_ == text_.size()) return spec;
    if (text_[pos_] != '[') fail(SplitErrorKind::bad_name, pos_);
    ++pos_;
    spec.lower = bound();
    if (pos_ >= text_.size() || text_[pos_] != ':') fail(SplitErrorKind::malformed_bracket, pos_);
    ++pos_;
    const std::size_t upper_pos = pos_;
    spec.upper = bound();
    if (pos_ >= text_.size() || text_[pos_] != ']') fail(SplitErrorKind::malformed_bracket, pos_);
    ++pos_;
    if (pos_ != text_.size()) fail(SplitErrorKind::malformed_bracket, pos_);
    if (spec.lower && spec.upper && *spec.lower > *spec.upper) fail(SplitErrorKind::inverted_range, upper_pos);
    return spec;
  }

 private:
  static bool is_name_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  }

  std::optional<int> bound() {
    if (pos_ < text_.size() && (text_[pos_] == ':' || text_[pos_] == ']')) return std::nullopt;
    const std::size_t start = pos_;
    int value = 0;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
      value = value * 10 + (text_[pos_] - '0');
      if (value > 100) {
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        fail(SplitErrorKind::percent_out_of_range, start);
      }
      ++pos_;
    }
    if (pos_ == start) {
      fail(pos_ < text_.size() && text_[pos_] == '%' ? SplitErrorKind::bad_number : SplitErrorKind::malformed_bracket,
           pos_);
    }
    if (pos_ >= text_.size() || text_[pos_] != '%') fail(SplitErrorKind::missing_percent, pos_);
    ++pos_;
    return value;
  }

  [[noreturn]] void fail(SplitErrorKind kind, std::size_t position) const {
    throw SplitParseError(kind, position, std::string(text_), kind_label(kind));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

SplitParseError::SplitParseError(SplitErrorKind kind, std::size_t position, const std::string& text,
                                 const std::string& message)
    : ConfigError("split spec '" + text + "': " + message + " at position " + std::to_string(position)),
      kind_(kind),
      position_(position) {}

SplitSpec parse_split_spec(std::string_view text) {
  return SplitParser(text).parse();
}

std::string render(const SplitSpec& spec) {
  if (!spec.lower && !spec.upper) return spec.name;
  std::string out = spec.name + "[";
  if (spec.lower) out += std::to_string(*spec.lower) + "%";
  out += ":";
  if (spec.upper) out += std::to_string(*spec.upper) + "%";
  out += "]";
  return out;
}

IndexRange split_range(std::size_t n, const SplitSpec& spec) {
  const auto boundary = [n](int percent) { return static_cast<std::size_t>(percent) * n / 100; };
  const std::size_t begin = boundary(spec.lower.value_or(0));
  const std::size_t end = boundary(spec.upper.value_or(100));
  if (begin > end) throw ConfigError("split '" + render(spec) + "': empty or inverted range");
  return {begin, end};
}

Dataset apply_split(const Dataset& ds, const SplitSpec& spec) {
  if (ds.name != spec.name) {
    throw ConfigError("unknown split '" + spec.name + "' (dataset provides '" + ds.name + "')");
  }
  const IndexRange range = split_range(ds.size(), spec);
  Dataset out = ds.slice(range.begin, range.end);
  out.name = ds.name;
  return out;
}

void SplitRegistry::add(Dataset ds) {
  const std::string key = ds.name;
  splits_.insert_or_assign(key, std::move(ds));
}

bool SplitRegistry::contains(std::string_view name) const {
  return splits_.find(name) != splits_.end();
}

const Dataset& SplitRegistry::base(std::string_view name) const {
  const auto it = splits_.find(name);
  if (it == splits_.end()) throw ConfigError("unknown split '" + std::string(name) + "'");
  return it->second;
}

Dataset SplitRegistry::resolve(const SplitSpec& spec) const {
  return apply_split(base(spec.name), spec);
}

std::vector<std::string> SplitRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, ds] : splits_) out.push_back(name);
  return out;
}

}  // namespace funmatch
