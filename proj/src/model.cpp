#include "cetrec/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cetrec/config.hpp"
#include "cetrec/errors.hpp"

namespace cetrec {

namespace {

constexpr std::uint64_t kInitPurpose = 0x1a17;
constexpr std::uint64_t kLoraPurpose = 0x10ea;

Tensor normal_matrix(std::size_t rows, std::size_t cols, double stddev, Pcg32& rng) {
  Tensor t = Tensor::zeros({rows, cols});
  for (double& v : t.data()) {
    v = stddev * rng.normal();
  }
  return t;
}

Tensor ones(std::size_t n) {
  Tensor t = Tensor::zeros({n});
  for (double& v : t.data()) {
    v = 1.0;
  }
  return t;
}

void fnv_mix(std::uint64_t& h, const Tensor& t) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(t.ptr());
  for (std::size_t i = 0; i < t.size() * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
}

}  // namespace

std::string to_string(PeMode mode) { return mode == PeMode::SinPE ? "sinpe" : "rope"; }

PeMode pe_mode_from_string(std::string_view s) {
  if (s == "sinpe") {
    return PeMode::SinPE;
  }
  if (s == "rope") {
    return PeMode::RoPE;
  }
  throw ConfigError("pe_mode must be 'sinpe' or 'rope', got '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0) {
    throw ConfigError("model: n_layers, d_model, n_heads and d_ff must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("model: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (head_dim() % 2 != 0) {
    throw ConfigError("model: head dimension " + std::to_string(head_dim()) + " must be even");
  }
  if (d_model % 2 != 0) {
    throw ConfigError("model: d_model must be even");
  }
  if (vocab_size < 2) {
    throw ConfigError("model: vocab_size must be at least 2");
  }
  if (stride < 1) {
    throw ConfigError("model: stride must be >= 1");
  }
  if (max_position < 1 || max_context < 1) {
    throw ConfigError("model: max_position and max_context must be positive");
  }
  if (lora_rank == 0 || lora_rank > std::min(d_model, d_model)) {
    throw ConfigError("model: lora_rank must be in [1, d_model]");
  }
}

// ---------------------------------------------------------------------------
// Parameters

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Pcg32 rng = derive_rng(seed, kInitPurpose);
  const std::size_t d = config.d_model;
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_std = in_std / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  ModelParams p;
  p.token_embedding = normal_matrix(config.vocab_size, d, 1.0, rng);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerParams layer;
    layer.attn_norm = ones(d);
    layer.wq = normal_matrix(d, d, in_std, rng);
    layer.wk = normal_matrix(d, d, in_std, rng);
    layer.wv = normal_matrix(d, d, in_std, rng);
    layer.wo = normal_matrix(d, d, out_std, rng);
    layer.ffn_norm = ones(d);
    layer.w1 = normal_matrix(config.d_ff, d, in_std, rng);
    layer.w2 = normal_matrix(d, config.d_ff, out_std / std::sqrt(static_cast<double>(config.d_ff) / d), rng);
    p.layers.push_back(std::move(layer));
  }
  p.final_norm = ones(d);
  p.output_head = normal_matrix(config.vocab_size, d, in_std, rng);
  return p;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("token_embedding", &token_embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    LayerParams& L = layers[l];
    out.emplace_back(pre + "attn_norm", &L.attn_norm);
    out.emplace_back(pre + "wq", &L.wq);
    out.emplace_back(pre + "wk", &L.wk);
    out.emplace_back(pre + "wv", &L.wv);
    out.emplace_back(pre + "wo", &L.wo);
    out.emplace_back(pre + "ffn_norm", &L.ffn_norm);
    out.emplace_back(pre + "w1", &L.w1);
    out.emplace_back(pre + "w2", &L.w2);
  }
  out.emplace_back("final_norm", &final_norm);
  out.emplace_back("output_head", &output_head);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  auto mut = const_cast<ModelParams*>(this)->named();
  return {mut.begin(), mut.end()};
}

std::uint64_t ModelParams::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : named()) {
    fnv_mix(h, *t);
  }
  return h;
}

// ---------------------------------------------------------------------------
// LoRA

WrappedLinear lora_wrap(Tensor weight, std::size_t rank, double alpha, Pcg32& rng) {
  if (weight.shape().size() != 2) {
    throw DimensionError("lora_wrap: weight must be a matrix, got " + weight.shape_string());
  }
  const std::size_t d_out = weight.rows();
  const std::size_t d_in = weight.cols();
  if (rank == 0 || rank > std::min(d_in, d_out)) {
    throw ConfigError("lora_wrap: rank " + std::to_string(rank) + " exceeds min(d_in, d_out) = " +
                      std::to_string(std::min(d_in, d_out)));
  }
  WrappedLinear w;
  w.factors.a = normal_matrix(rank, d_in, 1.0 / std::sqrt(static_cast<double>(d_in)), rng);
  w.factors.b = Tensor::zeros({d_out, rank});
  w.scaling = alpha / static_cast<double>(rank);
  w.weight = std::move(weight);
  return w;
}

Tensor merge_lora(const WrappedLinear& wrapped) {
  const Tensor& a = wrapped.factors.a;
  const Tensor& b = wrapped.factors.b;
  const std::size_t d_out = b.rows();
  const std::size_t rank = b.cols();
  const std::size_t d_in = a.cols();
  if (a.rows() != rank || wrapped.weight.rows() != d_out || wrapped.weight.cols() != d_in) {
    throw DimensionError("merge_lora: factors " + a.shape_string() + " / " + b.shape_string() +
                         " do not fit weight " + wrapped.weight.shape_string());
  }
  Tensor out = wrapped.weight;
  for (std::size_t i = 0; i < d_out; ++i) {
    for (std::size_t j = 0; j < d_in; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < rank; ++r) {
        s += b(i, r) * a(r, j);
      }
      out(i, j) += wrapped.scaling * s;
    }
  }
  return out;
}

Var lora_linear(Var x, Var weight, Var a, Var b, double scaling) {
  return add(linear(x, weight), scale(linear(linear(x, a), b), scaling));
}

LoraAdapter LoraAdapter::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Pcg32 rng = derive_rng(seed, kLoraPurpose);
  LoraAdapter adapter;
  adapter.rank = config.lora_rank;
  adapter.alpha = config.lora_alpha;
  const std::size_t d = config.d_model;
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    adapter.q.push_back(lora_wrap(Tensor::zeros({d, d}), config.lora_rank, config.lora_alpha, rng).factors);
    adapter.v.push_back(lora_wrap(Tensor::zeros({d, d}), config.lora_rank, config.lora_alpha, rng).factors);
  }
  return adapter;
}

std::vector<std::pair<std::string, Tensor*>> LoraAdapter::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t l = 0; l < q.size(); ++l) {
    const std::string pre = "lora." + std::to_string(l) + ".";
    out.emplace_back(pre + "q.a", &q[l].a);
    out.emplace_back(pre + "q.b", &q[l].b);
    out.emplace_back(pre + "v.a", &v[l].a);
    out.emplace_back(pre + "v.b", &v[l].b);
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> LoraAdapter::named() const {
  auto mut = const_cast<LoraAdapter*>(this)->named();
  return {mut.begin(), mut.end()};
}

ModelParams merge_adapter(const ModelParams& base, const LoraAdapter& adapter) {
  ModelParams out = base;
  if (adapter.q.size() != base.layers.size() || adapter.v.size() != base.layers.size()) {
    throw DimensionError("merge_adapter: adapter covers " + std::to_string(adapter.q.size()) + " layers, model has " +
                         std::to_string(base.layers.size()));
  }
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    out.layers[l].wq = merge_lora({base.layers[l].wq, adapter.q[l], adapter.scaling()});
    out.layers[l].wv = merge_lora({base.layers[l].wv, adapter.v[l], adapter.scaling()});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Packing

PackBuilder::PackBuilder(const PackedInput& input)
    : tokens_(input.token_ids), positions_(input.positions), temporal_(input.temporal) {
  parents_.reserve(input.rows());
  for (std::size_t r = 0; r < input.rows(); ++r) {
    parents_.push_back(input.layout->parent(r));
  }
}

int PackBuilder::append_row(int parent, int token, int position, std::optional<int> temporal) {
  if (parent >= static_cast<int>(tokens_.size()) || parent < -1) {
    throw InvariantError("pack: parent row " + std::to_string(parent) + " does not exist");
  }
  tokens_.push_back(token);
  positions_.push_back(position);
  temporal_.push_back(temporal);
  parents_.push_back(parent);
  return static_cast<int>(tokens_.size() - 1);
}

std::vector<int> PackBuilder::append_chain(int attach, std::span<const int> tokens, std::span<const int> positions,
                                           std::span<const std::optional<int>> temporal) {
  if (tokens.size() != positions.size() || tokens.size() != temporal.size()) {
    throw DimensionError("pack: chain arrays differ in length");
  }
  std::vector<int> rows;
  rows.reserve(tokens.size());
  int parent = attach;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    parent = append_row(parent, tokens[i], positions[i], temporal[i]);
    rows.push_back(parent);
  }
  return rows;
}

PackedInput PackBuilder::finish() {
  PackedInput out;
  out.token_ids = std::move(tokens_);
  out.positions = std::move(positions_);
  out.temporal = std::move(temporal_);
  out.layout = std::make_shared<const AttentionLayout>(AttentionLayout::from_parents(std::move(parents_)));
  tokens_.clear();
  positions_.clear();
  temporal_.clear();
  parents_.clear();
  return out;
}

TemporalIndices world_indices(const PromptEncoding& encoding, World world) {
  return world == World::Factual ? encoding.temporal_indices : counterfactual_indices(encoding.temporal_indices);
}

PackedBatch pack_teacher_forced(std::span<const SequenceRequest> requests, bool share_prefix) {
  PackedBatch batch;
  if (requests.empty()) {
    batch.input = PackBuilder().finish();
    return batch;
  }
  // Longest common run of leading tokens that carry no temporal index.
  std::size_t shared = 0;
  if (share_prefix) {
    const PromptEncoding& first = *requests.front().encoding;
    shared = first.prompt_length();
    for (const auto& req : requests) {
      const PromptEncoding& e = *req.encoding;
      std::size_t i = 0;
      while (i < shared && i < e.prompt_length() && e.token_ids[i] == first.token_ids[i] &&
             e.token_positions[i] == first.token_positions[i] && !e.temporal_indices[i].has_value()) {
        ++i;
      }
      shared = i;
    }
    // keep at least the final prompt row per sequence so every request owns a row
    if (shared > 0) {
      for (const auto& req : requests) {
        shared = std::min(shared, req.encoding->prompt_length() - 1);
      }
    }
  }

  PackBuilder builder;
  std::vector<int> prefix_rows;
  if (shared > 0) {
    const PromptEncoding& first = *requests.front().encoding;
    const std::vector<std::optional<int>> none(shared);
    prefix_rows = builder.append_chain(-1, std::span(first.token_ids).first(shared),
                                       std::span(first.token_positions).first(shared), none);
  }
  const int attach = prefix_rows.empty() ? -1 : prefix_rows.back();

  for (const auto& req : requests) {
    const PromptEncoding& e = *req.encoding;
    const TemporalIndices temporal = world_indices(e, req.world);
    const std::size_t plen = e.prompt_length();
    const std::size_t tlen = e.target_token_ids.size();
    std::vector<int> tokens(e.token_ids.begin() + static_cast<std::ptrdiff_t>(shared), e.token_ids.end());
    std::vector<int> positions(e.token_positions.begin() + static_cast<std::ptrdiff_t>(shared),
                               e.token_positions.end());
    std::vector<std::optional<int>> temps(temporal.begin() + static_cast<std::ptrdiff_t>(shared), temporal.end());
    const int last_pos = e.token_positions.empty() ? -1 : e.token_positions.back();
    for (std::size_t j = 0; j + 1 < tlen; ++j) {
      tokens.push_back(e.target_token_ids[j]);
      positions.push_back(last_pos + 1 + static_cast<int>(j));
      temps.emplace_back(std::nullopt);
    }
    const auto rows = builder.append_chain(attach, tokens, positions, temps);
    auto row_of = [&](std::size_t seq_index) {
      return seq_index < shared ? prefix_rows[seq_index] : rows[seq_index - shared];
    };
    std::vector<int> pred;
    pred.reserve(tlen);
    for (std::size_t j = 0; j < tlen; ++j) {
      pred.push_back(row_of(plen - 1 + j));
    }
    batch.prediction_rows.push_back(std::move(pred));
    batch.last_prompt_rows.push_back(row_of(plen - 1));
  }
  batch.input = builder.finish();
  return batch;
}

// ---------------------------------------------------------------------------
// Model

Model::Model(ModelConfig config, ModelParams params, std::optional<LoraAdapter> adapter)
    : config_(std::move(config)), params_(std::move(params)), adapter_(std::move(adapter)) {
  config_.validate();
  if (params_.layers.size() != config_.n_layers || params_.token_embedding.rows() != config_.vocab_size ||
      params_.token_embedding.cols() != config_.d_model) {
    throw DimensionError("model parameters do not match config (layers " + std::to_string(params_.layers.size()) +
                         ", embedding " + params_.token_embedding.shape_string() + ")");
  }
  rotary_ = std::make_shared<const RotaryTable>(config_.max_position, config_.head_dim());
  sinusoidal_ = std::make_shared<const SinusoidalTable>(config_.max_position, config_.d_model);
}

BoundParams Model::bind(Tape& tape, bool train_base, bool train_adapter) const {
  std::vector<Var> base;
  for (const auto& [name, t] : params_.named()) {
    base.push_back(tape.leaf(*t, train_base));
  }
  std::vector<Var> adapter;
  if (adapter_) {
    for (const auto& [name, t] : adapter_->named()) {
      adapter.push_back(tape.leaf(*t, train_adapter));
    }
  }
  return bind_vars(base, adapter);
}

BoundParams Model::bind_vars(std::span<const Var> base, std::span<const Var> adapter) const {
  const std::size_t expected = 3 + 8 * config_.n_layers;
  if (base.size() != expected) {
    throw DimensionError("bind_vars: expected " + std::to_string(expected) + " base vars, got " +
                         std::to_string(base.size()));
  }
  if (adapter_.has_value() != !adapter.empty() || (!adapter.empty() && adapter.size() != 4 * config_.n_layers)) {
    throw DimensionError("bind_vars: adapter vars do not match the model's adapter");
  }
  BoundParams b;
  b.base.assign(base.begin(), base.end());
  b.adapter.assign(adapter.begin(), adapter.end());
  std::size_t i = 0;
  b.token_embedding = base[i++];
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    BoundParams::Layer L{base[i], base[i + 1], base[i + 2], base[i + 3], base[i + 4], base[i + 5], base[i + 6],
                         base[i + 7], {}, {}, {}, {}};
    i += 8;
    if (!adapter.empty()) {
      L.qa = adapter[4 * l];
      L.qb = adapter[4 * l + 1];
      L.va = adapter[4 * l + 2];
      L.vb = adapter[4 * l + 3];
    }
    b.layers.push_back(L);
  }
  b.final_norm = base[i++];
  b.output_head = base[i++];
  b.lora_scaling = adapter_ ? adapter_->scaling() : 0.0;
  return b;
}

Var Model::hidden(Tape& tape, const BoundParams& bound, const PackedInput& input) const {
  const std::size_t n = input.rows();
  if (n == 0 || input.layout == nullptr || input.layout->rows() != n || input.positions.size() != n ||
      input.temporal.size() != n) {
    throw DimensionError("model: malformed packed input");
  }
  std::vector<int> effective(n);
  for (std::size_t r = 0; r < n; ++r) {
    if (static_cast<std::size_t>(input.positions[r]) >= config_.max_context) {
      throw DimensionError("context overflow: position " + std::to_string(input.positions[r]) + " >= limit " +
                           std::to_string(config_.max_context));
    }
    const std::optional<int> k = config_.temporal_enabled ? input.temporal[r] : std::nullopt;
    effective[r] = config_.pe_mode == PeMode::RoPE ? effective_position(input.positions[r], k, config_.stride)
                                                   : input.positions[r];
  }

  Var x = embedding(bound.token_embedding, input.token_ids);
  if (config_.pe_mode == PeMode::SinPE) {
    const std::size_t d = config_.d_model;
    Tensor pe = Tensor::zeros({n, d});
    for (std::size_t r = 0; r < n; ++r) {
      const auto pt = sinusoidal_->row(input.positions[r]);
      std::copy(pt.begin(), pt.end(), pe.ptr() + r * d);
      if (config_.temporal_enabled && input.temporal[r].has_value()) {
        const auto pk = sinusoidal_->row(*input.temporal[r]);
        for (std::size_t c = 0; c < d; ++c) {
          pe(r, c) += pk[c];
        }
      }
    }
    x = add(x, tape.constant(std::move(pe)));
  }

  for (const auto& L : bound.layers) {
    const Var xn = rms_norm(x, L.attn_norm);
    Var q = L.qa ? lora_linear(xn, L.wq, *L.qa, *L.qb, bound.lora_scaling) : linear(xn, L.wq);
    Var k = linear(xn, L.wk);
    const Var v = L.va ? lora_linear(xn, L.wv, *L.va, *L.vb, bound.lora_scaling) : linear(xn, L.wv);
    if (config_.pe_mode == PeMode::RoPE) {
      q = rope(q, effective, config_.n_heads, *rotary_);
      k = rope(k, effective, config_.n_heads, *rotary_);
    }
    const Var attn = masked_attention(q, k, v, input.layout, config_.n_heads);
    x = add(x, linear(attn, L.wo));
    const Var hn = rms_norm(x, L.ffn_norm);
    x = add(x, linear(silu(linear(hn, L.w1)), L.w2));
  }
  return rms_norm(x, bound.final_norm);
}

Var Model::logits(const BoundParams& bound, Var hidden, std::span<const int> rows) const {
  return linear(gather_rows(hidden, rows), bound.output_head);
}

Tensor Model::forward(const PromptEncoding& encoding, World world) const {
  if (world == World::Counterfactual && !config_.temporal_enabled) {
    throw ConfigError("counterfactual world requested but temporal embeddings are disabled");
  }
  const std::size_t total = encoding.prompt_length() + encoding.target_token_ids.size() -
                            (encoding.target_token_ids.empty() ? 0 : 1);
  if (total > config_.max_context) {
    throw DimensionError("context overflow: " + std::to_string(total) + " tokens > limit " +
                         std::to_string(config_.max_context));
  }
  const SequenceRequest req{&encoding, world};
  PackedBatch batch = pack_teacher_forced(std::span(&req, 1), false);
  Tape tape;
  const BoundParams bound = bind(tape, false, false);
  const Var h = hidden(tape, bound, batch.input);
  std::vector<int> rows(batch.input.rows());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    rows[r] = static_cast<int>(r);
  }
  return logits(bound, h, rows).value();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'C', 'E', 'T', 'R', 'E', 'C', 'K', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) {
    buf[i] = static_cast<unsigned char>(v >> (8 * i));
  }
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  }
  return v;
}

void write_tensor(std::ostream& os, const Tensor& t) {
  for (double x : t.data()) {
    write_u64(os, std::bit_cast<std::uint64_t>(x));
  }
}

Tensor read_tensor(std::istream& is, std::vector<std::size_t> shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& x : t.data()) {
    x = std::bit_cast<double>(read_u64(is));
  }
  return t;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::vector<std::pair<std::string, const Tensor*>> tensors = checkpoint.params.named();
  if (checkpoint.adapter) {
    const auto extra = checkpoint.adapter->named();
    tensors.insert(tensors.end(), extra.begin(), extra.end());
  }
  nlohmann::json header;
  header["config"] = model_config_to_json(checkpoint.config);
  header["seed"] = checkpoint.seed;
  header["metadata"] = nlohmann::json::parse(checkpoint.metadata_json);
  if (checkpoint.adapter) {
    header["adapter"] = {{"rank", checkpoint.adapter->rank}, {"alpha", checkpoint.adapter->alpha}};
  } else {
    header["adapter"] = nullptr;
  }
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t->shape()}});
  }
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw IoError("cannot write checkpoint " + path.string());
  }
  os.write(kMagic, sizeof(kMagic));
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors) {
    write_tensor(os, *t);
  }
  if (!os) {
    throw IoError("failed writing checkpoint " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw IoError("cannot open checkpoint " + path.string());
  }
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError(path.string() + " is not a checkpoint file");
  }
  const std::uint64_t len = read_u64(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  const nlohmann::json header = nlohmann::json::parse(text);

  Checkpoint ck;
  ck.config = model_config_from_json(header.at("config"));
  ck.seed = header.at("seed").get<std::uint64_t>();
  ck.metadata_json = header.at("metadata").dump();
  ck.params = ModelParams::init(ck.config, 0);
  if (!header.at("adapter").is_null()) {
    ck.config.lora_rank = header["adapter"]["rank"].get<std::size_t>();
    ck.config.lora_alpha = header["adapter"]["alpha"].get<double>();
    ck.adapter = LoraAdapter::init(ck.config, 0);
  }
  auto slots = ck.params.named();
  if (ck.adapter) {
    const auto extra = ck.adapter->named();
    slots.insert(slots.end(), extra.begin(), extra.end());
  }
  const auto& entries = header.at("tensors");
  if (entries.size() != slots.size()) {
    throw IoError("checkpoint tensor count " + std::to_string(entries.size()) + " does not match config (" +
                  std::to_string(slots.size()) + ")");
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto name = entries[i].at("name").get<std::string>();
    auto shape = entries[i].at("shape").get<std::vector<std::size_t>>();
    if (name != slots[i].first || shape != slots[i].second->shape()) {
      throw IoError("checkpoint tensor " + name + " does not match expected " + slots[i].first);
    }
    *slots[i].second = read_tensor(is, std::move(shape));
  }
  if (!is) {
    throw IoError("checkpoint " + path.string() + " is truncated");
  }
  return ck;
}

}  // namespace cetrec
