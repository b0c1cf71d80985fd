#include "jamba/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "jamba/errors.hpp"
#include "json.hpp"

namespace jamba {

using json = nlohmann::ordered_json;

std::size_t default_dt_rank(std::size_t d_model) { return (d_model + 15) / 16; }

void validate(const JambaConfig& c) {
  std::vector<ValidationIssue> issues;
  auto range = [&](bool ok, const std::string& msg) {
    if (!ok) issues.push_back({ErrorKind::kRangeViolation, msg});
  };
  auto divides = [&](bool ok, const std::string& msg) {
    if (!ok) issues.push_back({ErrorKind::kDivisibilityViolation, msg});
  };
  auto positive = [&](std::size_t v, const char* name) {
    range(v > 0, std::string(name) + " must be positive");
  };

  positive(c.d_model, "d_model");
  positive(c.n_layers_per_block, "n_layers_per_block");
  positive(c.n_blocks, "n_blocks");
  positive(c.n_experts, "n_experts");
  positive(c.top_k, "top_k");
  positive(c.n_heads, "n_heads");
  positive(c.n_kv_heads, "n_kv_heads");
  positive(c.head_dim, "head_dim");
  positive(c.mamba_d_state, "mamba_d_state");
  positive(c.mamba_expand, "mamba_expand");
  positive(c.mamba_conv_kernel, "mamba_conv_kernel");
  positive(c.mamba_dt_rank, "mamba_dt_rank");
  positive(c.mlp_hidden, "mlp_hidden");
  positive(c.vocab_size, "vocab_size");

  const std::size_t group = c.attn_ratio + c.mamba_ratio;
  range(group > 0, "attn_ratio + mamba_ratio must be positive");
  if (group > 0 && c.n_layers_per_block > 0) {
    divides(c.n_layers_per_block % group == 0,
            "attn_ratio + mamba_ratio = " + std::to_string(group) +
                " does not divide n_layers_per_block = " + std::to_string(c.n_layers_per_block));
  }
  if (c.moe_every > 0) {
    if (c.n_layers_per_block > 0) {
      divides(c.n_layers_per_block % c.moe_every == 0,
              "moe_every = " + std::to_string(c.moe_every) +
                  " does not divide n_layers_per_block = " + std::to_string(c.n_layers_per_block));
    }
    range(c.moe_offset < c.moe_every, "moe_offset must be smaller than moe_every");
  } else {
    range(c.moe_offset == 0, "moe_offset must be 0 when moe_every is 0");
  }
  if (c.top_k > 0 && c.n_experts > 0) {
    range(c.top_k <= c.n_experts, "top_k = " + std::to_string(c.top_k) +
                                      " exceeds n_experts = " + std::to_string(c.n_experts));
  }
  if (c.n_kv_heads > 0 && c.n_heads > 0) {
    divides(c.n_heads % c.n_kv_heads == 0, "n_kv_heads = " + std::to_string(c.n_kv_heads) +
                                               " does not divide n_heads = " +
                                               std::to_string(c.n_heads));
  }
  if (c.n_heads * c.head_dim != c.d_model) {
    issues.push_back({ErrorKind::kDimensionMismatch,
                      "n_heads * head_dim = " + std::to_string(c.n_heads * c.head_dim) +
                          " differs from d_model = " + std::to_string(c.d_model)});
  }
  if (c.use_rope) range(c.head_dim % 2 == 0, "head_dim must be even when use_rope is set");
  range(c.load_balance_alpha >= 0.0 && std::isfinite(c.load_balance_alpha),
        "load_balance_alpha must be a nonnegative finite number");

  if (!issues.empty()) throw ValidationError(std::move(issues));
}

std::string_view to_string(MixerKind kind) {
  return kind == MixerKind::kAttention ? "attention" : "mamba";
}

std::string_view to_string(MlpKind kind) { return kind == MlpKind::kMoe ? "moe" : "mlp"; }

std::size_t LayerSchedule::count(MixerKind kind) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [kind](const LayerSpec& s) { return s.mixer == kind; }));
}

std::size_t LayerSchedule::count(MlpKind kind) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [kind](const LayerSpec& s) { return s.mlp == kind; }));
}

std::string LayerSchedule::mixer_string() const {
  std::string out;
  for (const auto& e : entries) out += e.mixer == MixerKind::kAttention ? 'A' : 'M';
  return out;
}

std::vector<std::size_t> attention_offsets(std::size_t attn, std::size_t mamba) {
  std::vector<std::size_t> out;
  const std::size_t group = attn + mamba;
  if (attn == 0) return out;
  const std::size_t shift = mamba / (2 * attn);
  for (std::size_t j = 0; j < attn; ++j) out.push_back(j * group / attn + shift);
  return out;
}

LayerSchedule resolve_schedule(const JambaConfig& config) {
  validate(config);
  const std::size_t group = config.attn_ratio + config.mamba_ratio;
  const auto offsets = attention_offsets(config.attn_ratio, config.mamba_ratio);
  LayerSchedule schedule;
  schedule.entries.reserve(config.n_layers());
  for (std::size_t i = 0; i < config.n_layers(); ++i) {
    LayerSpec spec;
    spec.index = i;
    const bool attn = std::find(offsets.begin(), offsets.end(), i % group) != offsets.end();
    spec.mixer = attn ? MixerKind::kAttention : MixerKind::kMamba;
    const std::size_t one_based = i + 1;
    const bool moe = config.moe_every > 0 && one_based >= config.moe_offset &&
                     (one_based - config.moe_offset) % config.moe_every == 0;
    spec.mlp = moe ? MlpKind::kMoe : MlpKind::kPlain;
    schedule.entries.push_back(spec);
  }
  return schedule;
}

namespace {

JambaConfig dense_transformer(std::size_t layers, std::size_t d_model, std::size_t heads,
                              std::size_t kv_heads, std::size_t mlp_hidden, std::size_t vocab) {
  JambaConfig c;
  c.d_model = d_model;
  c.n_layers_per_block = layers;
  c.n_blocks = 1;
  c.attn_ratio = 1;
  c.mamba_ratio = 0;
  c.moe_every = 0;
  c.n_experts = 1;
  c.top_k = 1;
  c.n_heads = heads;
  c.n_kv_heads = kv_heads;
  c.head_dim = d_model / heads;
  c.mamba_d_state = 16;
  c.mamba_expand = 2;
  c.mamba_conv_kernel = 4;
  c.mamba_dt_rank = default_dt_rank(d_model);
  c.mlp_hidden = mlp_hidden;
  c.vocab_size = vocab;
  c.use_rope = true;
  return c;
}

std::vector<PresetModel> build_presets() {
  std::vector<PresetModel> out;

  JambaConfig jamba;
  jamba.d_model = 4096;
  jamba.n_layers_per_block = 8;
  jamba.n_blocks = 4;
  jamba.attn_ratio = 1;
  jamba.mamba_ratio = 7;
  jamba.moe_every = 2;
  jamba.n_experts = 16;
  jamba.top_k = 2;
  jamba.n_heads = 32;
  jamba.n_kv_heads = 8;
  jamba.head_dim = 128;
  jamba.mamba_d_state = 16;
  jamba.mamba_expand = 2;
  jamba.mamba_conv_kernel = 4;
  jamba.mamba_dt_rank = default_dt_rank(4096);
  jamba.mlp_hidden = 14336;
  jamba.vocab_size = 65536;
  jamba.use_rope = false;
  jamba.use_inner_mamba_norm = true;
  out.push_back({"jamba-release-shape", jamba,
                 "Released hybrid: 4 blocks of l=8, a:m=1:7, MoE every 2 layers with 16 experts "
                 "and top-2 routing, 8 KV heads of width 128, 64K vocabulary. d_model=4096, "
                 "n_heads=32 and mlp_hidden=14336 are assumed (Mistral-family widths)."});

  out.push_back({"llama2-7b-shape", dense_transformer(32, 4096, 32, 32, 11008, 32000),
                 "Llama-2 7B: 32 layers, d_model 4096, 32 heads without GQA, SwiGLU 11008, "
                 "vocab 32000 (public model card)."});

  out.push_back({"mistral-7b-shape", dense_transformer(32, 4096, 32, 8, 14336, 32000),
                 "Mistral 7B: 32 layers, d_model 4096, 32 query heads sharing 8 KV heads, "
                 "SwiGLU 14336, vocab 32000 (public release)."});

  JambaConfig mixtral = dense_transformer(32, 4096, 32, 8, 14336, 32000);
  mixtral.moe_every = 1;
  mixtral.n_experts = 8;
  mixtral.top_k = 2;
  out.push_back({"mixtral-8x7b-shape", mixtral,
                 "Mixtral 8x7B: Mistral 7B attention stack with an 8-expert top-2 MoE in every "
                 "layer (public release)."});

  JambaConfig toy1;
  toy1.d_model = 64;
  toy1.n_layers_per_block = 8;
  toy1.n_blocks = 1;
  toy1.attn_ratio = 1;
  toy1.mamba_ratio = 7;
  toy1.moe_every = 2;
  toy1.n_experts = 8;
  toy1.top_k = 2;
  toy1.n_heads = 4;
  toy1.n_kv_heads = 2;
  toy1.head_dim = 16;
  toy1.mamba_d_state = 16;
  toy1.mamba_expand = 2;
  toy1.mamba_conv_kernel = 4;
  toy1.mamba_dt_rank = default_dt_rank(64);
  toy1.mlp_hidden = 128;
  toy1.vocab_size = 256;
  out.push_back({"toy-1m", toy1, "Desk-scale hybrid with the released layer pattern, ~1M parameters."});

  JambaConfig toy10 = toy1;
  toy10.d_model = 256;
  toy10.n_experts = 4;
  toy10.n_heads = 8;
  toy10.n_kv_heads = 4;
  toy10.head_dim = 32;
  toy10.mamba_dt_rank = default_dt_rank(256);
  toy10.mlp_hidden = 512;
  out.push_back({"toy-10m", toy10, "Desk-scale hybrid with the released layer pattern, ~10M parameters."});

  return out;
}

using FieldSetter = std::function<void(JambaConfig&, const json&)>;

const std::map<std::string, FieldSetter, std::less<>>& field_setters() {
  static const auto table = [] {
    std::map<std::string, FieldSetter, std::less<>> t;
    auto uint_field = [](std::size_t JambaConfig::*member, const char* name) {
      return [member, name](JambaConfig& c, const json& v) {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
          fail(ErrorKind::kFormatViolation, std::string(name) + " must be a nonnegative integer");
        }
        c.*member = v.get<std::size_t>();
      };
    };
    auto bool_field = [](bool JambaConfig::*member, const char* name) {
      return [member, name](JambaConfig& c, const json& v) {
        if (!v.is_boolean()) fail(ErrorKind::kFormatViolation, std::string(name) + " must be a boolean");
        c.*member = v.get<bool>();
      };
    };
#define JAMBA_UINT(f) t[#f] = uint_field(&JambaConfig::f, #f)
    JAMBA_UINT(d_model);
    JAMBA_UINT(n_layers_per_block);
    JAMBA_UINT(n_blocks);
    JAMBA_UINT(attn_ratio);
    JAMBA_UINT(mamba_ratio);
    JAMBA_UINT(moe_every);
    JAMBA_UINT(moe_offset);
    JAMBA_UINT(n_experts);
    JAMBA_UINT(top_k);
    JAMBA_UINT(n_heads);
    JAMBA_UINT(n_kv_heads);
    JAMBA_UINT(head_dim);
    JAMBA_UINT(mamba_d_state);
    JAMBA_UINT(mamba_expand);
    JAMBA_UINT(mamba_conv_kernel);
    JAMBA_UINT(mamba_dt_rank);
    JAMBA_UINT(mlp_hidden);
    JAMBA_UINT(vocab_size);
#undef JAMBA_UINT
    t["use_rope"] = bool_field(&JambaConfig::use_rope, "use_rope");
    t["use_inner_mamba_norm"] = bool_field(&JambaConfig::use_inner_mamba_norm, "use_inner_mamba_norm");
    t["load_balance_alpha"] = [](JambaConfig& c, const json& v) {
      if (!v.is_number()) fail(ErrorKind::kFormatViolation, "load_balance_alpha must be a number");
      c.load_balance_alpha = v.get<double>();
    };
    return t;
  }();
  return table;
}

}  // namespace

const std::vector<PresetModel>& preset_table() {
  static const std::vector<PresetModel> presets = build_presets();
  return presets;
}

const PresetModel& preset(std::string_view name) {
  for (const auto& p : preset_table()) {
    if (p.name == name) return p;
  }
  std::string known;
  for (const auto& p : preset_table()) known += (known.empty() ? "" : ", ") + p.name;
  fail(ErrorKind::kUnknownPreset, "'" + std::string(name) + "' (known: " + known + ")");
}

JambaConfig config_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kFormatViolation, std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) fail(ErrorKind::kFormatViolation, "config must be a JSON object");
  const auto& setters = field_setters();
  std::vector<std::string> unknown;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!setters.count(it.key())) unknown.push_back(it.key());
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    fail(ErrorKind::kFormatViolation, msg);
  }
  JambaConfig config;
  for (auto it = doc.begin(); it != doc.end(); ++it) setters.find(it.key())->second(config, it.value());
  if (!doc.contains("mamba_dt_rank")) config.mamba_dt_rank = default_dt_rank(config.d_model);
  return config;
}

std::string config_to_json(const JambaConfig& c, int indent) {
  json doc;
  doc["d_model"] = c.d_model;
  doc["n_layers_per_block"] = c.n_layers_per_block;
  doc["n_blocks"] = c.n_blocks;
  doc["attn_ratio"] = c.attn_ratio;
  doc["mamba_ratio"] = c.mamba_ratio;
  doc["moe_every"] = c.moe_every;
  doc["moe_offset"] = c.moe_offset;
  doc["n_experts"] = c.n_experts;
  doc["top_k"] = c.top_k;
  doc["n_heads"] = c.n_heads;
  doc["n_kv_heads"] = c.n_kv_heads;
  doc["head_dim"] = c.head_dim;
  doc["mamba_d_state"] = c.mamba_d_state;
  doc["mamba_expand"] = c.mamba_expand;
  doc["mamba_conv_kernel"] = c.mamba_conv_kernel;
  doc["mamba_dt_rank"] = c.mamba_dt_rank;
  doc["mlp_hidden"] = c.mlp_hidden;
  doc["vocab_size"] = c.vocab_size;
  doc["use_rope"] = c.use_rope;
  doc["use_inner_mamba_norm"] = c.use_inner_mamba_norm;
  doc["load_balance_alpha"] = c.load_balance_alpha;
  return doc.dump(indent);
}

void set_config_field(JambaConfig& config, std::string_view key, std::string_view value) {
  const auto& setters = field_setters();
  auto it = setters.find(key);
  if (it == setters.end()) fail(ErrorKind::kFormatViolation, "unknown config key " + std::string(key));
  json v;
  try {
    v = json::parse(value);
  } catch (const json::parse_error&) {
    fail(ErrorKind::kFormatViolation, "cannot parse value '" + std::string(value) + "' for " +
                                          std::string(key));
  }
  it->second(config, v);
}

JambaConfig load_config(const std::string& preset_or_path) {
  for (const auto& p : preset_table()) {
    if (p.name == preset_or_path) return p.config;
  }
  std::ifstream in(preset_or_path, std::ios::binary);
  if (!in) {
    if (preset_or_path.find(".json") == std::string::npos) preset(preset_or_path);
    fail(ErrorKind::kIoFailure, "cannot open config file " + preset_or_path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

}  // namespace jamba
