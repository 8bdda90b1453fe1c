#include "cetrec/config.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <type_traits>
#include <set>
#include <string>

#include "cetrec/errors.hpp"

namespace cetrec {

namespace {

using nlohmann::json;

/// Reads the known keys of one section and rejects everything else.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) {
      throw ConfigError(name_ + ": expected a JSON object");
    }
  }
  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) {
      return;
    }
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) {
        throw ConfigError(field(key) + ": unknown field");
      }
    }
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) {
      return;
    }
    out = convert<T>(key, *it);
  }

  template <typename T, typename F>
  void read_with(const std::string& key, T& out, F&& parse) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) {
      return;
    }
    if (!it->is_string()) {
      throw ConfigError(field(key) + ": expected a string");
    }
    try {
      out = parse(it->template get<std::string>());
    } catch (const ConfigError& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  /// Declares a key handled by the caller.
  void mark(const std::string& key) { seen_.insert(key); }

  [[nodiscard]] std::string field(const std::string& key) const { return name_ + "." + key; }

 private:
  template <typename T>
  T convert(const std::string& key, const json& v) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) {
        throw ConfigError(field(key) + ": expected true or false");
      }
      return v.get<bool>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) {
        throw ConfigError(field(key) + ": expected a number");
      }
      return v.get<T>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
        throw ConfigError(field(key) + ": expected a non-negative integer");
      }
      return static_cast<T>(v.get<unsigned long long>());
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) {
        throw ConfigError(field(key) + ": expected an integer");
      }
      return static_cast<T>(v.get<long long>());
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  }

  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

template <typename F>
auto with_validation(const std::string& section, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const json::exception& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return json{{"n_layers", c.n_layers},
              {"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"d_ff", c.d_ff},
              {"vocab_size", c.vocab_size},
              {"max_position", c.max_position},
              {"max_context", c.max_context},
              {"pe_mode", to_string(c.pe_mode)},
              {"temporal_enabled", c.temporal_enabled},
              {"stride", c.stride},
              {"lora_rank", c.lora_rank},
              {"lora_alpha", c.lora_alpha}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base) {
  return with_validation("model", [&] {
    ModelConfig c = base;
    Section s(j, "model");
    s.read("n_layers", c.n_layers);
    s.read("d_model", c.d_model);
    s.read("n_heads", c.n_heads);
    s.read("d_ff", c.d_ff);
    s.read("vocab_size", c.vocab_size);
    s.read("max_position", c.max_position);
    s.read("max_context", c.max_context);
    s.read_with("pe_mode", c.pe_mode, [](const std::string& v) { return pe_mode_from_string(v); });
    s.read("temporal_enabled", c.temporal_enabled);
    s.read("stride", c.stride);
    s.read("lora_rank", c.lora_rank);
    s.read("lora_alpha", c.lora_alpha);
    return c;
  });
}

nlohmann::json generator_config_to_json(const GeneratorConfig& c) {
  return json{{"n_genres", c.n_genres},
              {"franchises_per_genre", c.franchises_per_genre},
              {"parts_per_franchise", c.parts_per_franchise},
              {"standalone_per_genre", c.standalone_per_genre},
              {"n_users", c.n_users},
              {"steps_per_user", c.steps_per_user},
              {"drift", c.drift},
              {"recency_window", c.recency_window},
              {"franchise_boost", c.franchise_boost},
              {"min_window", c.min_window},
              {"max_window", c.max_window},
              {"split_ratio", c.split_ratio},
              {"seed", c.seed}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j, const GeneratorConfig& base) {
  return with_validation("data", [&] {
    GeneratorConfig c = base;
    Section s(j, "data");
    s.read("n_genres", c.n_genres);
    s.read("franchises_per_genre", c.franchises_per_genre);
    s.read("parts_per_franchise", c.parts_per_franchise);
    s.read("standalone_per_genre", c.standalone_per_genre);
    s.read("n_users", c.n_users);
    s.read("steps_per_user", c.steps_per_user);
    s.read("drift", c.drift);
    s.read("recency_window", c.recency_window);
    s.read("franchise_boost", c.franchise_boost);
    s.read("min_window", c.min_window);
    s.read("max_window", c.max_window);
    s.read("seed", c.seed);
    if (const auto it = j.find("split_ratio"); it != j.end()) {
      if (!it->is_array() || it->size() != 3 || !std::all_of(it->begin(), it->end(), [](const json& v) {
            return v.is_number_integer();
          })) {
        throw ConfigError("data.split_ratio: expected three integers, e.g. [8, 1, 1]");
      }
      c.split_ratio = {(*it)[0].get<int>(), (*it)[1].get<int>(), (*it)[2].get<int>()};
    }
    s.mark("split_ratio");
    return c;
  });
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return json{{"lambda", c.lambda},
              {"learning_rate", c.learning_rate},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"weight_decay", c.weight_decay},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"regime", to_string(c.regime)},
              {"detach_counterfactual", c.detach_counterfactual},
              {"patience", c.patience},
              {"pretrain_epochs", c.pretrain_epochs},
              {"train_limit", c.train_limit},
              {"val_limit", c.val_limit}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base) {
  return with_validation("train", [&] {
    TrainConfig c = base;
    Section s(j, "train");
    s.read("lambda", c.lambda);
    s.read("learning_rate", c.learning_rate);
    s.read("beta1", c.beta1);
    s.read("beta2", c.beta2);
    s.read("adam_eps", c.adam_eps);
    s.read("weight_decay", c.weight_decay);
    s.read("epochs", c.epochs);
    s.read("batch_size", c.batch_size);
    s.read("seed", c.seed);
    s.read_with("regime", c.regime, [](const std::string& v) { return regime_from_string(v); });
    s.read("detach_counterfactual", c.detach_counterfactual);
    s.read("patience", c.patience);
    s.read("pretrain_epochs", c.pretrain_epochs);
    s.read("train_limit", c.train_limit);
    s.read("val_limit", c.val_limit);
    return c;
  });
}

EvalOptions EvalConfig::options() const {
  EvalOptions o;
  o.mode = mode;
  o.limit = test_limit;
  o.per_pass = per_pass;
  o.generation.beam_width = beam_width;
  o.generation.max_tokens = max_tokens;
  return o;
}

nlohmann::json eval_config_to_json(const EvalConfig& c) {
  return json{{"mode", to_string(c.mode)},
              {"test_limit", c.test_limit},
              {"per_pass", c.per_pass},
              {"beam_width", c.beam_width},
              {"max_tokens", c.max_tokens}};
}

EvalConfig eval_config_from_json(const nlohmann::json& j, const EvalConfig& base) {
  return with_validation("eval", [&] {
    EvalConfig c = base;
    Section s(j, "eval");
    s.read_with("mode", c.mode, [](const std::string& v) { return inference_mode_from_string(v); });
    s.read("test_limit", c.test_limit);
    s.read("per_pass", c.per_pass);
    s.read("beam_width", c.beam_width);
    s.read("max_tokens", c.max_tokens);
    return c;
  });
}

void ExperimentConfig::validate() const {
  data.validate();
  ModelConfig m = model;
  if (m.vocab_size == 0) {
    m.vocab_size = 2;  // filled in from the tokenizer later
  }
  m.validate();
  train.validate();
  if (seeds.empty()) {
    throw ConfigError("seeds: at least one seed is required");
  }
  if (eval.per_pass == 0 || eval.beam_width == 0 || eval.max_tokens == 0) {
    throw ConfigError("eval: per_pass, beam_width and max_tokens must be positive");
  }
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  return json{{"data", generator_config_to_json(c.data)},
              {"model", model_config_to_json(c.model)},
              {"train", train_config_to_json(c.train)},
              {"eval", eval_config_to_json(c.eval)},
              {"seeds", c.seeds}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const ExperimentConfig& base) {
  ExperimentConfig c = base;
  if (!j.is_object()) {
    throw ConfigError("config: expected a JSON object");
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "data") {
      c.data = generator_config_from_json(value, c.data);
    } else if (key == "model") {
      c.model = model_config_from_json(value, c.model);
    } else if (key == "train") {
      c.train = train_config_from_json(value, c.train);
    } else if (key == "eval") {
      c.eval = eval_config_from_json(value, c.eval);
    } else if (key == "seeds") {
      if (!value.is_array() || !std::all_of(value.begin(), value.end(), [](const json& v) {
            return v.is_number_unsigned();
          })) {
        throw ConfigError("seeds: expected a list of non-negative integers");
      }
      c.seeds = value.get<std::vector<std::uint64_t>>();
    } else {
      throw ConfigError(key + ": unknown section (expected data, model, train, eval or seeds)");
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open config file " + path.string());
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

}  // namespace cetrec
