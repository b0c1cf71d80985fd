#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jamba/model.hpp"

namespace jamba {

struct HeadProbe {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t q_len = 0;
  std::size_t k_len = 0;
  std::vector<double> matrix;  // [q_len, k_len], rows sum to 1
  double induction_score = 0;
};

struct ProbeResult {
  std::vector<HeadProbe> heads;

  const HeadProbe& best() const;
};

// Mean, over query positions t for which some earlier position s - 1 < t holds
// the same token as t, of the attention mass t places on all such s (the
// tokens that followed earlier occurrences of the current token). 0 when no
// position qualifies. A non-empty `query_mask` restricts t to positions with
// a nonzero entry (e.g. the scored positions of a task sample).
double induction_score(std::span<const double> matrix, std::size_t len,
                       std::span<const std::int32_t> tokens, std::span<const std::uint8_t> query_mask = {});

// Runs one causal forward pass over `tokens` and returns every attention head.
// Throws kInvalidArgument when the model has no attention layer.
ProbeResult probe_attention(const JambaModel& model, std::span<const std::int32_t> tokens,
                            std::span<const std::uint8_t> query_mask = {});

// One "layer{L}_head{H}.txt" matrix file (space-separated rows) and one
// "layer{L}_head{H}.json" sidecar {layer, head, induction_score} per head.
void write_probe(const ProbeResult& result, const std::string& dir);

}  // namespace jamba
