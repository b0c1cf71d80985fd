#include "jamba/probe.hpp"

#include <algorithm>
#include <cstdio>

#include "jamba/errors.hpp"
#include "jamba/io.hpp"
#include "json.hpp"

namespace jamba {

const HeadProbe& ProbeResult::best() const {
  if (heads.empty()) fail(ErrorKind::kInvalidArgument, "probe has no heads");
  return *std::max_element(heads.begin(), heads.end(), [](const HeadProbe& a, const HeadProbe& b) {
    return a.induction_score < b.induction_score;
  });
}

double induction_score(std::span<const double> matrix, std::size_t len,
                       std::span<const std::int32_t> tokens, std::span<const std::uint8_t> query_mask) {
  if (matrix.size() != len * len || tokens.size() != len) {
    fail(ErrorKind::kShapeMismatch, "induction score needs a square matrix over the token sequence");
  }
  if (!query_mask.empty() && query_mask.size() != len) {
    fail(ErrorKind::kShapeMismatch, "query mask length differs from the token sequence");
  }
  double total = 0;
  std::size_t counted = 0;
  for (std::size_t t = 1; t < len; ++t) {
    if (!query_mask.empty() && !query_mask[t]) continue;
    double mass = 0;
    bool any = false;
    for (std::size_t s = 1; s <= t; ++s) {
      if (tokens[s - 1] == tokens[t]) {
        mass += matrix[t * len + s];
        any = true;
      }
    }
    if (any) {
      total += mass;
      ++counted;
    }
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

ProbeResult probe_attention(const JambaModel& model, std::span<const std::int32_t> tokens,
                            std::span<const std::uint8_t> query_mask) {
  if (model.schedule().count(MixerKind::kAttention) == 0) {
    fail(ErrorKind::kInvalidArgument, "model has no attention layers to probe");
  }
  if (tokens.empty()) fail(ErrorKind::kInvalidArgument, "probe needs at least one token");
  NoGradGuard no_grad;
  std::vector<AttentionCapture> captures;
  ForwardOptions opts;
  opts.attention = &captures;
  model.forward(tokens, 1, tokens.size(), opts);
  ProbeResult out;
  for (const auto& c : captures) {
    const std::size_t block = c.q_len * c.k_len;
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      HeadProbe hp;
      hp.layer = c.layer;
      hp.head = h;
      hp.q_len = c.q_len;
      hp.k_len = c.k_len;
      hp.matrix.assign(c.probs.begin() + static_cast<std::ptrdiff_t>(h * block),
                       c.probs.begin() + static_cast<std::ptrdiff_t>((h + 1) * block));
      hp.induction_score = induction_score(hp.matrix, tokens.size(), tokens, query_mask);
      out.heads.push_back(std::move(hp));
    }
  }
  return out;
}

void write_probe(const ProbeResult& result, const std::string& dir) {
  for (const auto& h : result.heads) {
    const std::string stem = dir + "/layer" + std::to_string(h.layer) + "_head" + std::to_string(h.head);
    std::string text;
    char buf[32];
    for (std::size_t i = 0; i < h.q_len; ++i) {
      for (std::size_t j = 0; j < h.k_len; ++j) {
        std::snprintf(buf, sizeof buf, "%.10g", h.matrix[i * h.k_len + j]);
        if (j) text += ' ';
        text += buf;
      }
      text += '\n';
    }
    write_file_atomic(stem + ".txt", text);
    nlohmann::ordered_json j{{"layer", h.layer}, {"head", h.head}, {"induction_score", h.induction_score}};
    write_file_atomic(stem + ".json", j.dump(2) + "\n");
  }
}

}  // namespace jamba
