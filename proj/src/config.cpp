#include "semtok/config.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <set>

#include "semtok/error.hpp"
#include "semtok/rng.hpp"

namespace semtok {

using nlohmann::json;

namespace {

// Pulls typed values out of one JSON object and remembers which keys were
// consumed so leftovers can be rejected.
class ObjectReader {
 public:
  explicit ObjectReader(const json& j) : j_(j) {
    if (!j.is_object()) throw ConfigError("expected a JSON object", "");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer() || v->get<std::int64_t>() < 0)
        throw ConfigError("expected a non-negative integer", "/" + key);
      out = v->get<std::size_t>();
    }
  }
  void read(const std::string& key, std::uint64_t& out, int) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0))
        throw ConfigError("expected a non-negative integer", "/" + key);
      out = v->get<std::uint64_t>();
    }
  }
  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError("expected a number", "/" + key);
      out = v->get<double>();
      if (!std::isfinite(out)) throw ConfigError("expected a finite number", "/" + key);
    }
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError("expected true or false", "/" + key);
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError("expected a string", "/" + key);
      out = v->get<std::string>();
    }
  }
  void read(const std::string& key, std::optional<double>& out) {
    if (const json* v = find(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      double x = 0.0;
      read(key, x);
      out = x;
    }
  }
  template <class T, class Parse>
  void read_enum(const std::string& key, T& out, Parse parse) {
    std::string text;
    read(key, text);
    if (!j_.contains(key)) return;
    try {
      out = parse(text);
    } catch (const UsageError& e) {
      throw ConfigError(e.what(), "/" + key);
    }
  }

  void require(const std::string& key, bool ok, const std::string& message) const {
    if (ok) return;
    throw ConfigError(message, "/" + key);
  }

  void reject_unknown() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key", "/" + it.key());
  }

  void require_all(std::initializer_list<const char*> keys) const {
    for (const char* k : keys)
      if (!j_.contains(k)) throw ConfigError("missing key", std::string("/") + k);
  }

 private:
  const json& j_;
  std::set<std::string> seen_;
};

void read_model(ObjectReader& r, ModelConfig& m) {
  r.read("image_size", m.image_size);
  r.read("patch_size", m.patch_size);
  r.read("channels", m.channels);
  r.read("dim", m.dim);
  r.read("heads", m.heads);
  r.read("mlp_ratio", m.mlp_ratio);
  r.read("encoder_layers", m.encoder_layers);
  r.read("decoder_layers", m.decoder_layers);
  r.read("num_classes", m.num_classes);
  r.read("score_slope", m.score_slope);
  r.read("score_bias", m.score_bias);
  r.read_enum("penalty", m.penalty, parse_penalty_kind);
  r.read("lambda", m.lambda);
  r.read("layernorm_eps", m.layernorm_eps);
  r.read("score_scaling", m.score_scaling);

  r.require("lambda", m.lambda >= 0.0, "must be >= 0");
  r.require("layernorm_eps", m.layernorm_eps > 0.0, "must be > 0");
  r.require("patch_size", m.patch_size > 0, "must be positive");
  r.require("image_size", m.image_size > 0 && m.patch_size > 0 && m.image_size % m.patch_size == 0,
            "must be a positive multiple of patch_size");
  r.require("channels", m.channels == 1 || m.channels == 3, "must be 1 or 3");
  r.require("heads", m.heads > 0 && m.dim % m.heads == 0, "must be positive and divide dim");
  r.require("dim", m.dim > 0, "must be positive");
  r.require("mlp_ratio", m.mlp_ratio > 0, "must be positive");
  r.require("encoder_layers", m.encoder_layers >= 1, "must be >= 1");
  r.require("decoder_layers", m.decoder_layers >= 1, "must be >= 1");
  r.require("num_classes", m.num_classes >= 2, "must be >= 2");
}

void write_model(json& j, const ModelConfig& m) {
  j["image_size"] = m.image_size;
  j["patch_size"] = m.patch_size;
  j["channels"] = m.channels;
  j["dim"] = m.dim;
  j["heads"] = m.heads;
  j["mlp_ratio"] = m.mlp_ratio;
  j["encoder_layers"] = m.encoder_layers;
  j["decoder_layers"] = m.decoder_layers;
  j["num_classes"] = m.num_classes;
  j["score_slope"] = m.score_slope;
  j["score_bias"] = m.score_bias;
  j["penalty"] = std::string(to_string(m.penalty));
  j["lambda"] = m.lambda;
  j["layernorm_eps"] = m.layernorm_eps;
  j["score_scaling"] = m.score_scaling;
}

}  // namespace

json model_config_to_json(const ModelConfig& config) {
  json j = json::object();
  write_model(j, config);
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ObjectReader r(j);
  r.require_all({"image_size", "patch_size", "channels", "dim", "heads", "mlp_ratio",
                 "encoder_layers", "decoder_layers", "num_classes", "score_slope", "score_bias",
                 "penalty", "lambda", "layernorm_eps", "score_scaling"});
  ModelConfig m;
  read_model(r, m);
  r.reject_unknown();
  m.validate();
  return m;
}

ExperimentConfig parse_config(const json& j) {
  ObjectReader r(j);
  ExperimentConfig c;
  read_model(r, c.model);

  TrainConfig& t = c.train;
  r.read("epochs", t.epochs);
  r.read("batch_size", t.batch_size);
  r.read("learning_rate", t.learning_rate);
  r.read("beta1", t.beta1);
  r.read("beta2", t.beta2);
  r.read("adam_eps", t.adam_eps);
  r.read("weight_decay", t.weight_decay);
  r.read("grad_clip", t.grad_clip);
  r.read("seed", t.seed, 0);
  r.read_enum("train_channel", t.channel.kind, parse_channel_kind);
  r.read("train_snr_db", t.channel.snr_db);
  r.read("train_drop_prob", t.channel.drop_prob);
  r.read_enum("train_noise_mode", t.channel.noise_mode, parse_noise_mode);
  r.read("train_drop_class_token", t.channel.drop_class_token);
  r.read("train_channel_seed", t.channel.seed, 0);

  r.require("epochs", t.epochs >= 1, "must be >= 1");
  r.require("batch_size", t.batch_size >= 1, "must be >= 1");
  r.require("learning_rate", t.learning_rate > 0.0, "must be > 0");
  r.require("beta1", t.beta1 >= 0.0 && t.beta1 < 1.0, "must lie in [0,1)");
  r.require("beta2", t.beta2 >= 0.0 && t.beta2 < 1.0, "must lie in [0,1)");
  r.require("adam_eps", t.adam_eps > 0.0, "must be > 0");
  r.require("weight_decay", t.weight_decay >= 0.0, "must be >= 0");
  r.require("grad_clip", !t.grad_clip || *t.grad_clip > 0.0, "must be > 0 or null");
  r.require("train_drop_prob", t.channel.drop_prob >= 0.0 && t.channel.drop_prob <= 1.0,
            "must lie in [0,1]");

  DataConfig& d = c.data;
  r.read("train_size", d.train_size);
  r.read("test_size", d.test_size);
  r.read("clutter_level", d.clutter_level);
  r.read("pixel_noise", d.pixel_noise);
  r.read("data_seed", d.seed, 0);
  r.read("train_images", d.train_images);
  r.read("train_labels", d.train_labels);
  r.read("test_images", d.test_images);
  r.read("test_labels", d.test_labels);
  r.require("train_size", d.train_size >= 1, "must be >= 1");
  r.require("pixel_noise", d.pixel_noise >= 0.0, "must be >= 0");
  r.require("train_labels", d.train_images.empty() == d.train_labels.empty(),
            "train_images and train_labels must be given together");
  r.require("test_labels", d.test_images.empty() == d.test_labels.empty(),
            "test_images and test_labels must be given together");

  r.reject_unknown();
  c.model.validate();
  c.train.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json dump_config(const ExperimentConfig& c) {
  json j = model_config_to_json(c.model);
  const TrainConfig& t = c.train;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["learning_rate"] = t.learning_rate;
  j["beta1"] = t.beta1;
  j["beta2"] = t.beta2;
  j["adam_eps"] = t.adam_eps;
  j["weight_decay"] = t.weight_decay;
  j["grad_clip"] = t.grad_clip ? json(*t.grad_clip) : json(nullptr);
  j["seed"] = t.seed;
  j["train_channel"] = std::string(to_string(t.channel.kind));
  j["train_snr_db"] = t.channel.snr_db;
  j["train_drop_prob"] = t.channel.drop_prob;
  j["train_noise_mode"] = std::string(to_string(t.channel.noise_mode));
  j["train_drop_class_token"] = t.channel.drop_class_token;
  j["train_channel_seed"] = t.channel.seed;
  const DataConfig& d = c.data;
  j["train_size"] = d.train_size;
  j["test_size"] = d.test_size;
  j["clutter_level"] = d.clutter_level;
  j["pixel_noise"] = d.pixel_noise;
  j["data_seed"] = d.seed;
  j["train_images"] = d.train_images;
  j["train_labels"] = d.train_labels;
  j["test_images"] = d.test_images;
  j["test_labels"] = d.test_labels;
  return j;
}

namespace {

Dataset load_split(const DataConfig& c, const ModelConfig& m, bool test) {
  const std::string& images = test ? c.test_images : c.train_images;
  const std::string& labels = test ? c.test_labels : c.train_labels;
  Dataset data;
  if (!images.empty()) {
    data = load_idx(images, labels, m.num_classes);
    data.split = test ? "test" : "train";
  } else {
    ShapesOptions o;
    o.count = test ? c.test_size : c.train_size;
    o.image_size = m.image_size;
    o.num_classes = m.num_classes;
    o.clutter_level = c.clutter_level;
    o.pixel_noise = c.pixel_noise;
    o.seed = test ? derive_seed(c.seed, 1) : c.seed;
    o.split = test ? "test" : "train";
    data = gen_shapes(o);
  }
  if (data.image_size != m.image_size || data.channels != m.channels)
    throw ConsistencyError(std::string(test ? "test" : "train") + " images are " +
                           std::to_string(data.image_size) + "px with " +
                           std::to_string(data.channels) + " channel(s); the model expects " +
                           std::to_string(m.image_size) + "px with " + std::to_string(m.channels));
  return data;
}

}  // namespace

Dataset load_train_split(const DataConfig& config, const ModelConfig& model) {
  return load_split(config, model, false);
}

Dataset load_test_split(const DataConfig& config, const ModelConfig& model) {
  return load_split(config, model, true);
}

}  // namespace semtok
