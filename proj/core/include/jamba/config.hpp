#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace jamba {

// Every architectural degree of freedom of a hybrid attention/Mamba/MoE
// decoder plus its dimensions.
struct JambaConfig {
  std::size_t d_model = 64;
  std::size_t n_layers_per_block = 8;  // l
  std::size_t n_blocks = 1;
  std::size_t attn_ratio = 1;          // a
  std::size_t mamba_ratio = 7;         // m
  std::size_t moe_every = 2;           // e; 0 disables MoE
  std::size_t moe_offset = 0;          // MoE phase; layer i (1-based) is MoE iff (i - offset) % e == 0
  std::size_t n_experts = 4;           // n
  std::size_t top_k = 2;               // K
  std::size_t n_heads = 4;
  std::size_t n_kv_heads = 2;
  std::size_t head_dim = 16;
  std::size_t mamba_d_state = 16;      // N
  std::size_t mamba_expand = 2;
  std::size_t mamba_conv_kernel = 4;
  std::size_t mamba_dt_rank = 4;
  std::size_t mlp_hidden = 128;
  std::size_t vocab_size = 64;
  bool use_rope = false;
  bool use_inner_mamba_norm = true;
  double load_balance_alpha = 0.01;

  std::size_t n_layers() const { return n_layers_per_block * n_blocks; }
  std::size_t d_inner() const { return mamba_expand * d_model; }

  bool operator==(const JambaConfig&) const = default;
};

// ceil(d_model / 16), the customary Mamba step-rank.
std::size_t default_dt_rank(std::size_t d_model);

// Throws ValidationError listing every violated invariant.
void validate(const JambaConfig& config);

enum class MixerKind : std::uint8_t { kAttention, kMamba };
enum class MlpKind : std::uint8_t { kPlain, kMoe };

std::string_view to_string(MixerKind kind);
std::string_view to_string(MlpKind kind);

struct LayerSpec {
  std::size_t index = 0;  // 0-based
  MixerKind mixer = MixerKind::kMamba;
  MlpKind mlp = MlpKind::kPlain;

  bool operator==(const LayerSpec&) const = default;
};

struct LayerSchedule {
  std::vector<LayerSpec> entries;

  std::size_t size() const { return entries.size(); }
  std::size_t count(MixerKind kind) const;
  std::size_t count(MlpKind kind) const;
  // e.g. "MMMAMMMM"
  std::string mixer_string() const;

  bool operator==(const LayerSchedule&) const = default;
};

// Attention layers sit at offset floor(m/2) of each (a+m)-layer group when
// a == 1, and are spread evenly across the group when a > 1. MoE replaces the
// MLP at every 1-based layer index i with (i - moe_offset) divisible by e.
LayerSchedule resolve_schedule(const JambaConfig& config);

// Offsets of attention layers within one (a+m)-layer group.
std::vector<std::size_t> attention_offsets(std::size_t attn, std::size_t mamba);

struct PresetModel {
  std::string name;
  JambaConfig config;
  std::string notes;
};

const std::vector<PresetModel>& preset_table();
// Throws kUnknownPreset.
const PresetModel& preset(std::string_view name);

// Config file: JSON object with exactly the JambaConfig field names. Missing
// keys keep their defaults (mamba_dt_rank defaults from d_model); unknown keys
// raise kFormatViolation.
JambaConfig config_from_json(std::string_view text);
std::string config_to_json(const JambaConfig& config, int indent = 2);

// Sets one field from its textual value ("d_model", "64").
void set_config_field(JambaConfig& config, std::string_view key, std::string_view value);

// A preset name or a path to a JSON config file.
JambaConfig load_config(const std::string& preset_or_path);

}  // namespace jamba
