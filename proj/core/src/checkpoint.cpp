#include "jamba/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "jamba/errors.hpp"
#include "jamba/io.hpp"
#include "json.hpp"

namespace jamba {

using json = nlohmann::ordered_json;

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

template <typename T>
void put_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get_le(std::string_view bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

std::size_t padded(std::size_t n) {
  return (n + kCheckpointAlignment - 1) / kCheckpointAlignment * kCheckpointAlignment;
}

}  // namespace

std::string encode_checkpoint(const JambaModel& model) {
  const auto params = model.named_parameters();
  json index = json::object();
  std::size_t offset = 0;
  for (const auto& [name, tensor] : params) {
    const std::size_t length = tensor.numel() * dtype_bytes(tensor.dtype());
    index[name] = {{"dtype", std::string(to_string(tensor.dtype()))},
                   {"shape", tensor.shape()},
                   {"offset", offset},
                   {"length", length}};
    offset += length;
  }
  json header;
  header["config"] = json::parse(config_to_json(model.config(), -1));
  header["tensors"] = std::move(index);
  const std::string header_text = header.dump();

  std::string out;
  out.append(kCheckpointMagic);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, header_text.size());
  out.append(header_text);
  out.resize(padded(out.size()), '\0');
  out.reserve(out.size() + offset);
  for (const auto& [name, tensor] : params) {
    if (tensor.dtype() == DType::kReal64) {
      for (double v : tensor.data()) put_le<double>(out, v);
    } else {
      for (double v : tensor.data()) put_le<float>(out, static_cast<float>(v));
    }
  }
  return out;
}

JambaModel decode_checkpoint(std::string_view bytes) {
  constexpr std::size_t kPrefix = 8 + 4 + 8;
  if (bytes.size() < kPrefix || bytes.substr(0, 8) != kCheckpointMagic) {
    fail(ErrorKind::kFormatViolation, "missing checkpoint magic");
  }
  const auto version = get_le<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) {
    fail(ErrorKind::kFormatViolation, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 12);
  if (header_len > bytes.size() - kPrefix) fail(ErrorKind::kFormatViolation, "truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(kPrefix, header_len));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kFormatViolation, std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || header.size() != 2 || !header.contains("config") ||
      !header.contains("tensors") || !header["tensors"].is_object()) {
    fail(ErrorKind::kFormatViolation, "header must hold exactly 'config' and 'tensors'");
  }
  const JambaConfig config = config_from_json(header["config"].dump());
  const std::size_t payload = padded(kPrefix + header_len);
  if (payload > bytes.size()) fail(ErrorKind::kFormatViolation, "truncated padding");
  for (std::size_t i = kPrefix + header_len; i < payload; ++i) {
    if (bytes[i] != '\0') fail(ErrorKind::kFormatViolation, "nonzero header padding");
  }

  const auto& index = header["tensors"];
  std::optional<DType> dtype;
  for (auto it = index.begin(); it != index.end(); ++it) {
    const DType d = parse_dtype(it.value().at("dtype").get<std::string>());
    if (dtype && *dtype != d) fail(ErrorKind::kFormatViolation, "mixed tensor dtypes");
    dtype = d;
  }
  JambaModel model = JambaModel::allocate(config, dtype.value_or(DType::kReal64));
  auto params = model.named_parameters();
  if (params.size() != index.size()) {
    fail(ErrorKind::kFormatViolation, "checkpoint holds " + std::to_string(index.size()) +
                                          " tensors, model expects " + std::to_string(params.size()));
  }
  std::size_t expected_offset = 0;
  auto it = index.begin();
  for (auto& [name, tensor] : params) {
    if (it.key() != name) {
      fail(ErrorKind::kFormatViolation, "tensor '" + it.key() + "' where '" + name + "' was expected");
    }
    const auto& entry = it.value();
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto length = entry.at("length").get<std::size_t>();
    const std::size_t width = dtype_bytes(tensor.dtype());
    if (shape != tensor.shape() || length != tensor.numel() * width || offset != expected_offset) {
      fail(ErrorKind::kFormatViolation, "index entry for '" + name + "' is inconsistent");
    }
    if (payload + offset + length > bytes.size()) {
      fail(ErrorKind::kFormatViolation, "payload for '" + name + "' is truncated");
    }
    auto data = tensor.mutable_data();
    const std::size_t base = payload + offset;
    for (std::size_t i = 0; i < data.size(); ++i) {
      data[i] = width == 8 ? get_le<double>(bytes, base + i * 8)
                           : static_cast<double>(get_le<float>(bytes, base + i * 4));
    }
    require_finite(data, "checkpoint tensor " + name);
    expected_offset += length;
    ++it;
  }
  if (payload + expected_offset != bytes.size()) {
    fail(ErrorKind::kFormatViolation, "trailing bytes after payload");
  }
  return model;
}

void save_checkpoint(const JambaModel& model, const std::string& path) {
  write_file_atomic(path, encode_checkpoint(model));
}

JambaModel load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace jamba
