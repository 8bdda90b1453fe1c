#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cetrec/encoding.hpp"
#include "cetrec/numerics.hpp"
#include "cetrec/positional.hpp"
#include "cetrec/rng.hpp"

namespace cetrec {

enum class PeMode { SinPE, RoPE };
enum class World { Factual, Counterfactual };

std::string to_string(PeMode mode);
PeMode pe_mode_from_string(std::string_view s);

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t vocab_size = 0;
  int max_position = 512;  // largest rotary / sinusoidal index
  std::size_t max_context = 256;
  PeMode pe_mode = PeMode::RoPE;
  bool temporal_enabled = true;
  int stride = 16;
  std::size_t lora_rank = 8;
  double lora_alpha = 16.0;

  void validate() const;
  [[nodiscard]] std::size_t head_dim() const { return d_model / n_heads; }
  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  Tensor attn_norm;
  Tensor wq, wk, wv, wo;  // (out, in)
  Tensor ffn_norm;
  Tensor w1;  // (d_ff, d_model)
  Tensor w2;  // (d_model, d_ff)
};

/// Base weights of the decoder.
struct ModelParams {
  Tensor token_embedding;  // (vocab, d_model)
  std::vector<LayerParams> layers;
  Tensor final_norm;
  Tensor output_head;  // (vocab, d_model)

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  std::vector<std::pair<std::string, Tensor*>> named();
  [[nodiscard]] std::vector<std::pair<std::string, const Tensor*>> named() const;
  /// FNV-1a over the raw parameter bytes, in named() order.
  [[nodiscard]] std::uint64_t checksum() const;
};

/// Low-rank factors of one wrapped matrix: a is (r, d_in), b is (d_out, r).
struct LoraFactors {
  Tensor a;
  Tensor b;
};

struct WrappedLinear {
  Tensor weight;
  LoraFactors factors;
  double scaling = 1.0;  // alpha / r
};

/// Wraps `weight` with a rank-r update; a is drawn from a small normal, b is
/// zero so the wrapped map starts equal to the base map.
WrappedLinear lora_wrap(Tensor weight, std::size_t rank, double alpha, Pcg32& rng);
/// W + scaling * B A.
Tensor merge_lora(const WrappedLinear& wrapped);
/// x W^T + scaling * (x A^T) B^T on the tape.
Var lora_linear(Var x, Var weight, Var a, Var b, double scaling);

/// Adapters on W_q and W_v of every layer.
struct LoraAdapter {
  std::size_t rank = 8;
  double alpha = 16.0;
  std::vector<LoraFactors> q;
  std::vector<LoraFactors> v;

  [[nodiscard]] double scaling() const { return alpha / static_cast<double>(rank); }
  static LoraAdapter init(const ModelConfig& config, std::uint64_t seed);
  std::vector<std::pair<std::string, Tensor*>> named();
  [[nodiscard]] std::vector<std::pair<std::string, const Tensor*>> named() const;
};

/// Folds an adapter into plain weights.
ModelParams merge_adapter(const ModelParams& base, const LoraAdapter& adapter);

/// Rows fed to one forward pass. Rows may form a tree (see AttentionLayout):
/// a shared prompt prefix followed by several continuations.
struct PackedInput {
  std::vector<int> token_ids;
  std::vector<int> positions;                   // token-level p_t
  std::vector<std::optional<int>> temporal;     // item index k, already resolved for the world
  std::shared_ptr<const AttentionLayout> layout;

  [[nodiscard]] std::size_t rows() const { return token_ids.size(); }
};

class PackBuilder {
 public:
  PackBuilder() = default;
  /// Continues an already finished input.
  explicit PackBuilder(const PackedInput& input);

  int append_row(int parent, int token, int position, std::optional<int> temporal);
  /// Appends a chain hanging off `attach` (-1 for a new root); returns the row
  /// index of each appended token.
  std::vector<int> append_chain(int attach, std::span<const int> tokens, std::span<const int> positions,
                                std::span<const std::optional<int>> temporal);
  [[nodiscard]] std::size_t rows() const { return tokens_.size(); }
  PackedInput finish();

 private:
  std::vector<int> tokens_;
  std::vector<int> positions_;
  std::vector<std::optional<int>> temporal_;
  std::vector<int> parents_;
};

struct SequenceRequest {
  const PromptEncoding* encoding = nullptr;
  World world = World::Factual;
};

/// Teacher-forced sequences packed into one input. prediction_rows[i][j] is
/// the row whose logits predict target token j of request i.
struct PackedBatch {
  PackedInput input;
  std::vector<std::vector<int>> prediction_rows;
  std::vector<int> last_prompt_rows;  // row of each request's final prompt token
};

/// Packs prompt + target (minus its last token) for each request. With
/// `share_prefix`, the longest common run of leading non-item tokens is
/// stored once and every sequence continues from it.
PackedBatch pack_teacher_forced(std::span<const SequenceRequest> requests, bool share_prefix = true);

/// Parameters recorded on a tape for one forward/backward.
struct BoundParams {
  struct Layer {
    Var attn_norm, wq, wk, wv, wo, ffn_norm, w1, w2;
    std::optional<Var> qa, qb, va, vb;
  };
  Var token_embedding;
  std::vector<Layer> layers;
  Var final_norm;
  Var output_head;
  double lora_scaling = 0.0;

  /// Base vars in ModelParams::named() order.
  std::vector<Var> base;
  /// Adapter vars in LoraAdapter::named() order (empty without adapter).
  std::vector<Var> adapter;
};

/// Pre-norm decoder: RMSNorm, multi-head causal attention, SiLU feed-forward.
class Model {
 public:
  Model(ModelConfig config, ModelParams params, std::optional<LoraAdapter> adapter = std::nullopt);

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  [[nodiscard]] const std::optional<LoraAdapter>& adapter() const { return adapter_; }
  std::optional<LoraAdapter>& adapter() { return adapter_; }

  /// Records parameters as leaves; base and adapter trainability are chosen
  /// independently (frozen leaves receive no gradient).
  BoundParams bind(Tape& tape, bool train_base, bool train_adapter) const;
  /// Binds caller-supplied vars (same order as bind()) so gradient checks can
  /// perturb them.
  BoundParams bind_vars(std::span<const Var> base, std::span<const Var> adapter) const;

  /// Final-normed hidden states for every packed row.
  Var hidden(Tape& tape, const BoundParams& bound, const PackedInput& input) const;
  /// Output-head logits for the selected rows.
  Var logits(const BoundParams& bound, Var hidden, std::span<const int> rows) const;

  /// Next-token logits at every position of prompt + target[:-1], one row per
  /// position. Counterfactual world requires temporal embeddings.
  [[nodiscard]] Tensor forward(const PromptEncoding& encoding, World world) const;

  [[nodiscard]] const RotaryTable& rotary() const { return *rotary_; }
  [[nodiscard]] const SinusoidalTable& sinusoidal() const { return *sinusoidal_; }

 private:
  ModelConfig config_;
  ModelParams params_;
  std::optional<LoraAdapter> adapter_;
  std::shared_ptr<const RotaryTable> rotary_;
  std::shared_ptr<const SinusoidalTable> sinusoidal_;
};

/// Temporal indices of `encoding` in the requested world.
TemporalIndices world_indices(const PromptEncoding& encoding, World world);

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::optional<LoraAdapter> adapter;
  std::uint64_t seed = 0;
  std::string metadata_json = "{}";
};

/// Binary layout: "CETRECK1", u64 little-endian header length, UTF-8 JSON
/// header {config, seed, metadata, tensors:[{name, shape}]}, then every tensor
/// as little-endian float64 in header order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cetrec
