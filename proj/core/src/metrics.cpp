#include "funmatch/metrics.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "funmatch/error.hpp"

namespace funmatch {

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, result.ptr);
}

std::string format_row(const MetricsRow& row) {
  std::string line = std::to_string(row.step);
  line += ',' + format_number(row.epoch);
  line += ',' + row.split;
  line += ',' + format_number(row.loss);
  line += ',' + (row.top1 ? format_number(*row.top1) : std::string());
  line += ',' + (row.agreement ? format_number(*row.agreement) : std::string());
  line += ',' + format_number(row.lr);
  line += ',' + format_number(row.wall_s);
  return line;
}

namespace {

double parse_double(const std::string& field, const std::string& line) {
  if (field == "nan") return std::nan("");
  if (field == "inf") return INFINITY;
  if (field == "-inf") return -INFINITY;
  double value = 0.0;
  const auto result = std::from_chars(field.data(), field.data() + field.size(), value);
  if (result.ec != std::errc{} || result.ptr != field.data() + field.size()) {
    throw FormatError(FormatErrorKind::malformed, "metrics: bad number '" + field + "' in line '" + line + "'");
  }
  return value;
}

}  // namespace

MetricsRow parse_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  if (fields.size() != 8) {
    throw FormatError(FormatErrorKind::malformed, "metrics: expected 8 fields in line '" + line + "'");
  }
  MetricsRow row;
  std::size_t step = 0;
  const auto r = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), step);
  if (r.ec != std::errc{} || r.ptr != fields[0].data() + fields[0].size()) {
    throw FormatError(FormatErrorKind::malformed, "metrics: bad step in line '" + line + "'");
  }
  row.step = step;
  row.epoch = parse_double(fields[1], line);
  row.split = fields[2];
  row.loss = parse_double(fields[3], line);
  if (!fields[4].empty()) row.top1 = parse_double(fields[4], line);
  if (!fields[5].empty()) row.agreement = parse_double(fields[5], line);
  row.lr = parse_double(fields[6], line);
  row.wall_s = parse_double(fields[7], line);
  return row;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, bool append) : path_(path) {
  if (append && std::filesystem::exists(path)) {
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    if (header != kMetricsHeader) {
      throw FormatError(FormatErrorKind::malformed, "metrics: unexpected header in '" + path.string() + "'");
    }
    out_.open(path, std::ios::app | std::ios::binary);
  } else {
    out_.open(path, std::ios::trunc | std::ios::binary);
    if (out_) out_ << kMetricsHeader << '\n' << std::flush;
  }
  if (!out_) throw IoError("cannot open metrics file '" + path.string() + "'");
}

void MetricsWriter::write(const MetricsRow& row) {
  out_ << format_row(row) << '\n' << std::flush;
  if (!out_) throw IoError("write failed for '" + path_.string() + "'");
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open metrics file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw FormatError(FormatErrorKind::malformed, "metrics: unexpected header in '" + path.string() + "'");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(parse_row(line));
  }
  return rows;
}

void truncate_metrics(const std::filesystem::path& path, std::size_t max_step) {
  const std::vector<MetricsRow> rows = read_metrics(path);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    MetricsWriter writer(tmp);
    for (const MetricsRow& row : rows) {
      if (row.step <= max_step) writer.write(row);
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace funmatch
