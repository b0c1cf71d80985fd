#include "jamba/tasks.hpp"

#include <algorithm>
#include <array>
#include <numeric>

#include "jamba/errors.hpp"
#include "jamba/rng.hpp"

namespace jamba {

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kInduction: return "induction";
    case TaskKind::kSelectiveCopy: return "selective-copy";
    case TaskKind::kNeedle: return "needle";
    case TaskKind::kLmBytes: return "lm-bytes";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view name) {
  for (auto k : {TaskKind::kInduction, TaskKind::kSelectiveCopy, TaskKind::kNeedle, TaskKind::kLmBytes}) {
    if (to_string(k) == name) return k;
  }
  fail(ErrorKind::kInvalidArgument, "unknown task '" + std::string(name) +
                                        "' (expected induction, selective-copy, needle or lm-bytes)");
}

namespace {

constexpr std::size_t kNeedleOverhead = 5;  // marker key value query key

std::size_t content_range(const TaskSpec& s) {
  return s.vocab_size > static_cast<std::size_t>(kFirstContentToken)
             ? s.vocab_size - kFirstContentToken
             : 0;
}

void impossible(const std::string& msg) { fail(ErrorKind::kImpossibleSpec, msg); }

void gen_induction(const TaskSpec& s, Rng& rng, std::int32_t* tok) {
  const std::size_t keys = content_range(s) / 2;
  const auto key_base = kFirstContentToken;
  const auto value_base = static_cast<std::int32_t>(kFirstContentToken + keys);
  const std::size_t values = content_range(s) - keys;
  // Distinct keys by partial Fisher-Yates.
  std::vector<std::int32_t> pool(keys);
  std::iota(pool.begin(), pool.end(), key_base);
  for (std::size_t i = 0; i < s.n_pairs; ++i) {
    std::swap(pool[i], pool[i + rng.below(keys - i)]);
  }
  std::vector<std::int32_t> val(s.n_pairs);
  std::size_t p = 0;
  for (std::size_t i = 0; i < s.n_pairs; ++i) {
    val[i] = value_base + static_cast<std::int32_t>(rng.below(values));
    tok[p++] = pool[i];
    tok[p++] = val[i];
  }
  const std::size_t total = s.seq_len + 1;
  for (std::size_t q = 0; p + 2 <= total; q = (q + 1) % s.n_pairs) {
    tok[p++] = pool[q];
    tok[p++] = val[q];
  }
  while (p < total) tok[p++] = kFillerToken;
}

void gen_selective_copy(const TaskSpec& s, Rng& rng, std::int32_t* tok) {
  const std::size_t region = s.seq_len - s.n_content;
  std::vector<std::size_t> slots(region);
  std::iota(slots.begin(), slots.end(), std::size_t{0});
  for (std::size_t i = 0; i < s.n_content; ++i) std::swap(slots[i], slots[i + rng.below(region - i)]);
  std::sort(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(s.n_content));
  std::fill(tok, tok + region, kFillerToken);
  std::vector<std::int32_t> content(s.n_content);
  for (std::size_t i = 0; i < s.n_content; ++i) {
    content[i] = kFirstContentToken + static_cast<std::int32_t>(rng.below(content_range(s)));
    tok[slots[i]] = content[i];
  }
  tok[region] = kMarkerToken;
  for (std::size_t i = 0; i < s.n_content; ++i) tok[region + 1 + i] = content[i];
}

std::size_t gen_needle(const TaskSpec& s, Rng& rng, std::int32_t* tok) {
  const std::size_t haystack = s.seq_len - kNeedleOverhead;
  const std::size_t range = content_range(s);
  std::size_t depth;
  if (s.needle_depth < 0) {
    depth = rng.below(haystack + 1);
  } else {
    depth = static_cast<std::size_t>(s.needle_depth * static_cast<double>(haystack) + 0.5);
  }
  const auto key = kFirstContentToken + static_cast<std::int32_t>(rng.below(range));
  const auto value = kFirstContentToken + static_cast<std::int32_t>(rng.below(range));
  std::size_t p = 0;
  for (std::size_t i = 0; i < haystack + 3; ++i) {
    if (i == depth) {
      tok[p++] = kMarkerToken;
      tok[p++] = key;
      tok[p++] = value;
      i += 2;
      continue;
    }
    tok[p++] = kFirstContentToken + static_cast<std::int32_t>(rng.below(range));
  }
  tok[p++] = kQueryToken;
  tok[p++] = key;
  tok[p++] = value;
  return depth;
}

constexpr std::array<std::string_view, 48> kWords = {
    "the",    "a",      "state",  "space",  "model",  "attention", "layer",  "expert",
    "token",  "memory", "long",   "short",  "context", "window",   "reads",  "writes",
    "keeps",  "moves",  "small",  "large",  "fast",   "slow",      "and",    "or",
    "of",     "in",     "to",     "with",   "every",  "each",      "block",  "head",
    "cache",  "value",  "key",    "query",  "signal", "mixes",     "routes", "learns",
    "copies", "finds",  "needle", "hay",    "stack",  "ratio",     "seven",  "one"};

void gen_lm_bytes(const TaskSpec& s, Rng& rng, std::int32_t* tok) {
  const std::size_t total = s.seq_len + 1;
  std::string text;
  text.reserve(total + 32);
  // Start mid-stream so samples do not all begin at a sentence boundary.
  const std::size_t skip = rng.below(16);
  bool sentence_start = true;
  std::size_t words_in_sentence = 0;
  std::size_t prev = kWords.size();
  while (text.size() < total + skip) {
    // Bigram-ish bias: function words tend to follow content words.
    std::size_t w = rng.below(kWords.size());
    if (prev < kWords.size() && prev >= 22 && prev < 30 && w >= 22 && w < 30) w = rng.below(22);
    std::string word(kWords[w]);
    if (sentence_start) word[0] = static_cast<char>(word[0] - 'a' + 'A');
    text += word;
    ++words_in_sentence;
    prev = w;
    sentence_start = false;
    if (words_in_sentence >= 4 && rng.uniform() < 0.2) {
      text += rng.uniform() < 0.8 ? ". " : "? ";
      sentence_start = true;
      words_in_sentence = 0;
    } else if (rng.uniform() < 0.08) {
      text += ", ";
    } else {
      text += ' ';
    }
  }
  for (std::size_t i = 0; i < total; ++i) {
    tok[i] = static_cast<std::int32_t>(static_cast<unsigned char>(text[skip + i]));
  }
}

}  // namespace

void check_task(const TaskSpec& s) {
  if (s.seq_len == 0) impossible("seq_len must be positive");
  const std::size_t range = content_range(s);
  switch (s.kind) {
    case TaskKind::kInduction: {
      if (s.n_pairs == 0) impossible("induction needs at least one pair");
      if (range < 2) impossible("vocab_size " + std::to_string(s.vocab_size) + " leaves no key/value tokens");
      if (s.n_pairs > range / 2) {
        impossible(std::to_string(s.n_pairs) + " pairs need distinct keys but only " +
                   std::to_string(range / 2) + " key tokens exist at vocab_size " +
                   std::to_string(s.vocab_size));
      }
      if (2 * s.n_pairs + 2 > s.seq_len + 1) {
        impossible("seq_len " + std::to_string(s.seq_len) + " cannot hold " + std::to_string(s.n_pairs) +
                   " pairs and a query");
      }
      break;
    }
    case TaskKind::kSelectiveCopy:
      if (s.n_content == 0) impossible("selective-copy needs at least one content token");
      if (range < 1) impossible("vocab_size too small for content tokens");
      if (2 * s.n_content > s.seq_len) {
        impossible("seq_len " + std::to_string(s.seq_len) + " cannot hold " + std::to_string(s.n_content) +
                   " content tokens and their copy");
      }
      break;
    case TaskKind::kNeedle:
      if (range < 1) impossible("vocab_size too small for content tokens");
      if (s.seq_len < kNeedleOverhead) impossible("needle needs seq_len >= 5");
      if (s.needle_depth > 1) impossible("needle_depth must be at most 1");
      break;
    case TaskKind::kLmBytes:
      if (s.vocab_size < 128) impossible("lm-bytes needs vocab_size >= 128");
      break;
  }
}

TaskBatch gen_task(const TaskSpec& spec, std::size_t samples, std::uint64_t stream) {
  check_task(spec);
  TaskBatch out;
  out.samples = samples;
  out.seq_len = spec.seq_len;
  const std::size_t L = spec.seq_len;
  out.inputs.resize(samples * L);
  out.targets.resize(samples * L);
  out.mask.assign(samples * L, 0);
  std::vector<std::int32_t> tok(L + 1);
  for (std::size_t b = 0; b < samples; ++b) {
    Rng rng(mix_seed(mix_seed(spec.seed, stream), b));
    std::uint8_t* m = out.mask.data() + b * L;
    switch (spec.kind) {
      case TaskKind::kInduction: {
        gen_induction(spec, rng, tok.data());
        for (std::size_t i = 2 * spec.n_pairs; i + 1 < L + 1; i += 2) {
          if (tok[i + 1] != kFillerToken) m[i] = 1;
        }
        break;
      }
      case TaskKind::kSelectiveCopy: {
        gen_selective_copy(spec, rng, tok.data());
        for (std::size_t i = L - spec.n_content; i < L; ++i) m[i] = 1;
        break;
      }
      case TaskKind::kNeedle: {
        out.needle_positions.push_back(gen_needle(spec, rng, tok.data()));
        m[L - 1] = 1;
        break;
      }
      case TaskKind::kLmBytes: {
        gen_lm_bytes(spec, rng, tok.data());
        std::fill(m, m + L, 1);
        break;
      }
    }
    std::copy(tok.begin(), tok.begin() + static_cast<std::ptrdiff_t>(L), out.inputs.begin() + static_cast<std::ptrdiff_t>(b * L));
    std::copy(tok.begin() + 1, tok.end(), out.targets.begin() + static_cast<std::ptrdiff_t>(b * L));
  }
  return out;
}

}  // namespace jamba
