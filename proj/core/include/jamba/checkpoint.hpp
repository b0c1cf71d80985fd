#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "jamba/model.hpp"

namespace jamba {

// On-disk layout (all integers little-endian):
//   8 bytes  magic "JMBACKPT"
//   4 bytes  version (1)
//   8 bytes  header length in bytes
//   header   UTF-8 JSON {"config": {...}, "tensors": {name: {dtype, shape, offset, length}}}
//   padding  zeros up to the next 64-byte boundary of the file
//   payload  raw little-endian IEEE-754 tensors in index order; offsets are
//            relative to the payload start, lengths in bytes
inline constexpr std::string_view kCheckpointMagic = "JMBACKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kCheckpointAlignment = 64;

std::string encode_checkpoint(const JambaModel& model);
JambaModel decode_checkpoint(std::string_view bytes);

void save_checkpoint(const JambaModel& model, const std::string& path);
JambaModel load_checkpoint(const std::string& path);

}  // namespace jamba
