#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace jamba {

enum class TaskKind : std::uint8_t { kInduction, kSelectiveCopy, kNeedle, kLmBytes };

std::string_view to_string(TaskKind kind);
// Throws kInvalidArgument.
TaskKind parse_task_kind(std::string_view name);

// Token conventions: 0 is filler/noise, 1 and 2 are markers; content tokens
// are drawn from [3, vocab_size).
inline constexpr std::int32_t kFillerToken = 0;
inline constexpr std::int32_t kMarkerToken = 1;
inline constexpr std::int32_t kQueryToken = 2;
inline constexpr std::int32_t kFirstContentToken = 3;

struct TaskSpec {
  TaskKind kind = TaskKind::kInduction;
  std::size_t vocab_size = 64;
  std::size_t seq_len = 64;  // model input length; each sample has seq_len + 1 tokens
  std::size_t n_pairs = 8;   // induction: distinct key/value pairs listed before the queries
  std::size_t n_content = 8; // selective-copy: tokens to copy
  double needle_depth = -1;  // needle: fixed depth in [0, 1], or negative for uniform
  std::uint64_t seed = 0;

  bool operator==(const TaskSpec&) const = default;
};

// `samples` rows of length seq_len, row-major. targets[i] is the token that
// follows inputs[i]; only positions with mask[i] != 0 contribute to the loss.
struct TaskBatch {
  std::size_t samples = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> inputs;
  std::vector<std::int32_t> targets;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> needle_positions;  // needle: haystack offset of each statement
};

// Throws kImpossibleSpec when the spec cannot be realized.
void check_task(const TaskSpec& spec);

// Pure function of (spec, samples, stream): distinct streams give independent
// draws from the same task distribution.
//
// induction:      k1 v1 k2 v2 ... kP vP | k1 v1 k2 v2 ...   the pairs repeated in order
//                 until seq_len; keys (distinct) and values come from disjoint halves of
//                 the content range; loss on each repeated value
// selective-copy: content tokens scattered in filler, marker, then the content in order
// needle:         filler haystack with "marker key value" planted at a uniform depth,
//                 then "query key" and the value as the sole answer
// lm-bytes:       procedurally generated English-like text as raw bytes, loss everywhere
TaskBatch gen_task(const TaskSpec& spec, std::size_t samples, std::uint64_t stream = 0);

}  // namespace jamba
