#include "funmatch/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json_io.hpp"

namespace funmatch {

namespace {

constexpr std::array<char, 4> kMagic{'F', 'M', 'C', 'K'};

void append_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void append_f32_le(std::string& out, const Tensor<float>& t) {
  for (float v : t.values()) append_u32_le(out, std::bit_cast<std::uint32_t>(v));
}

json_io::json tensor_entry(const NamedTensor<float>& t, std::size_t offset) {
  return {{"name", t.name}, {"shape", t.value.shape()}, {"offset", offset}, {"len", t.value.size() * 4}};
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  check_parameters(checkpoint.config, checkpoint.params);
  std::string payload;
  json_io::json tensors = json_io::json::array();
  const auto emit = [&](const NamedTensor<float>& t) {
    tensors.push_back(tensor_entry(t, payload.size()));
    append_f32_le(payload, t.value);
  };
  for (const auto& t : checkpoint.params) emit(t);
  for (const auto& t : checkpoint.extra) emit(t);

  const json_io::json manifest{{"config", json_io::model_config_to_json(checkpoint.config)},
                               {"step", checkpoint.step},
                               {"seed", checkpoint.seed},
                               {"tensors", std::move(tensors)}};
  const std::string manifest_text = manifest.dump();

  std::string blob(kMagic.begin(), kMagic.end());
  blob.push_back(static_cast<char>(Checkpoint::kVersion));
  append_u32_le(blob, static_cast<std::uint32_t>(manifest_text.size()));
  blob += manifest_text;
  blob += payload;

  // Write-then-rename so a crash never leaves a half-written checkpoint under the final name.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename checkpoint to '" + path.string() + "': " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  const std::string where = " in '" + path.string() + "'";

  if (blob.size() < kMagic.size() || std::memcmp(blob.data(), kMagic.data(), kMagic.size()) != 0) {
    throw FormatError(FormatErrorKind::bad_magic, "bad magic" + where);
  }
  if (blob.size() < 5) throw FormatError(FormatErrorKind::truncated, "truncated header" + where);
  if (bytes[4] != Checkpoint::kVersion) {
    throw FormatError(FormatErrorKind::version_mismatch,
                      "version mismatch: file has " + std::to_string(bytes[4]) + ", reader supports " +
                          std::to_string(Checkpoint::kVersion) + where);
  }
  if (blob.size() < 9) throw FormatError(FormatErrorKind::truncated, "truncated header" + where);
  const std::size_t manifest_len = read_u32_le(bytes + 5);
  if (blob.size() < 9 + manifest_len) throw FormatError(FormatErrorKind::truncated, "truncated manifest" + where);

  json_io::json manifest;
  try {
    manifest = json_io::json::parse(blob.begin() + 9, blob.begin() + 9 + static_cast<std::ptrdiff_t>(manifest_len));
  } catch (const json_io::json::exception& e) {
    throw FormatError(FormatErrorKind::malformed, std::string("malformed manifest") + where + ": " + e.what());
  }

  Checkpoint ckpt;
  const std::size_t payload_start = 9 + manifest_len;
  const std::size_t payload_size = blob.size() - payload_start;
  try {
    ckpt.config = json_io::model_config_from_json(manifest.at("config"), "checkpoint.config");
    ckpt.step = manifest.at("step").get<std::uint64_t>();
    ckpt.seed = manifest.at("seed").get<std::uint64_t>();
    const auto expected = ckpt.config.parameter_shapes();
    for (const auto& entry : manifest.at("tensors")) {
      NamedTensor<float> t{entry.at("name").get<std::string>(), Tensor<float>(entry.at("shape").get<Shape>())};
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto len = entry.at("len").get<std::size_t>();
      if (len != t.value.size() * 4) {
        throw FormatError(FormatErrorKind::malformed, "tensor '" + t.name + "' length does not match shape" + where);
      }
      if (offset > payload_size || len > payload_size - offset) {
        throw FormatError(FormatErrorKind::truncated, "truncated payload for tensor '" + t.name + "'" + where);
      }
      const unsigned char* src = bytes + payload_start + offset;
      for (std::size_t i = 0; i < t.value.size(); ++i) t.value[i] = std::bit_cast<float>(read_u32_le(src + 4 * i));
      const bool is_param =
          std::any_of(expected.begin(), expected.end(), [&](const auto& e) { return e.first == t.name; });
      if (is_param) {
        ckpt.params.add(std::move(t.name), std::move(t.value));
      } else {
        ckpt.extra.push_back(std::move(t));
      }
    }
  } catch (const json_io::json::exception& e) {
    throw FormatError(FormatErrorKind::malformed, std::string("malformed manifest") + where + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(FormatErrorKind::malformed, std::string("malformed manifest") + where + ": " + e.what());
  }
  check_parameters(ckpt.config, ckpt.params);
  return ckpt;
}

}  // namespace funmatch
