#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <vector>

#include "semtok/checkpoint.hpp"
#include "semtok/config.hpp"
#include "semtok/data.hpp"
#include "semtok/error.hpp"

using namespace semtok;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "semtok_test_data";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<unsigned char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

ModelConfig tiny() {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.dim = 4;
  c.heads = 2;
  c.mlp_ratio = 1;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  return c;
}

}  // namespace

TEST_CASE("shapes generator") {
  ShapesOptions o;
  o.count = 40;
  const Dataset a = gen_shapes(o);
  a.validate();
  CHECK(a.size() == 40);
  CHECK(a.num_classes == 4);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.labels[i] == i % 4);
  for (double v : a.pixels) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(std::abs(v * 255.0 - std::round(v * 255.0)) < 1e-9);
  }
  CHECK(dataset_hash(gen_shapes(o)) == dataset_hash(a));
  o.seed = 8;
  CHECK(dataset_hash(gen_shapes(o)) != dataset_hash(a));
  CHECK(a.image(3).shape() == Shape{1, 32, 32});
  CHECK(a.subset(10, 20).size() == 10);
  CHECK(a.subset(10, 20).labels[0] == a.labels[10]);
}

TEST_CASE("glyph pixels are brighter than the background") {
  ShapesOptions o;
  o.count = 8;
  o.pixel_noise = 0.0;
  o.clutter_level = 0;
  const Dataset d = gen_shapes(o);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Tensor img = d.image(i);
    double peak = 0.0;
    std::size_t lit = 0;
    for (double v : img.data()) {
      peak = std::max(peak, v);
      lit += v > 0.5;
    }
    CHECK(peak >= 0.7);
    CHECK(lit > 10);
    CHECK(lit < 32 * 32 / 2);
  }
}

TEST_CASE("IDX round trip and errors") {
  ShapesOptions o;
  o.count = 12;
  o.image_size = 16;
  const Dataset a = gen_shapes(o);
  const fs::path img = scratch("a-images.idx3-ubyte"), lab = scratch("a-labels.idx1-ubyte");
  save_idx(a, img, lab);
  const Dataset b = load_idx(img, lab);
  CHECK(b.pixels == a.pixels);
  CHECK(b.labels == a.labels);
  CHECK(b.num_classes == 4);
  CHECK(load_idx(img, lab, 10).num_classes == 10);

  auto bytes = read_bytes(img);
  auto bad = bytes;
  bad[3] = 0x01;
  write_bytes(scratch("bad-magic"), bad);
  CHECK_THROWS_AS(load_idx(scratch("bad-magic"), lab), FormatError);
  bad = bytes;
  bad.resize(bad.size() - 5);
  write_bytes(scratch("short"), bad);
  CHECK_THROWS_AS(load_idx(scratch("short"), lab), FormatError);

  o.count = 5;
  const Dataset c = gen_shapes(o);
  save_idx(c, scratch("c-img"), scratch("c-lab"));
  CHECK_THROWS_AS(load_idx(img, scratch("c-lab")), ConsistencyError);
  CHECK_THROWS_AS(load_idx(scratch("missing-file"), lab), IoError);
}

TEST_CASE("checkpoint round trip") {
  Model m(tiny(), 4);
  const auto bytes = serialize_checkpoint(m);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "STKC");
  const Model back = deserialize_checkpoint(bytes);
  CHECK(back.config() == m.config());
  CHECK(serialize_checkpoint(back) == bytes);

  const fs::path p = scratch("m.stkc");
  save_checkpoint(m, p);
  CHECK(read_bytes(p) == bytes);
  CHECK_FALSE(fs::exists(p.string() + ".tmp"));
  CHECK(serialize_checkpoint(load_checkpoint(p)) == bytes);
  CHECK_THROWS_AS(load_checkpoint(scratch("nope.stkc")), IoError);
}

TEST_CASE("checkpoint corruption is detected") {
  Model m(tiny(), 4);
  const auto bytes = serialize_checkpoint(m);
  for (std::size_t pos : {std::size_t{0}, std::size_t{5}, bytes.size() / 2, bytes.size() - 1}) {
    auto b = bytes;
    b[pos] ^= 0x40;
    CHECK_THROWS_AS(deserialize_checkpoint(b), CorruptionError);
  }
  auto cut = bytes;
  cut.resize(cut.size() - 9);
  CHECK_THROWS_AS(deserialize_checkpoint(cut), CorruptionError);
  CHECK_THROWS_AS(deserialize_checkpoint({}), CorruptionError);

  CHECK_THROWS_AS(deserialize_checkpoint(serialize_checkpoint(m.config(), m.parameters(), 2)),
                  VersionError);

  auto params = m.parameters();
  params.pop_back();
  CHECK_THROWS_AS(deserialize_checkpoint(serialize_checkpoint(m.config(), params)), ShapeError);
  params = m.parameters();
  params[0].tensor = Tensor::zeros({3});
  CHECK_THROWS_AS(deserialize_checkpoint(serialize_checkpoint(m.config(), params)), ShapeError);
  params = m.parameters();
  params.push_back({"extra.weight", Tensor::zeros({1})});
  CHECK_THROWS_AS(deserialize_checkpoint(serialize_checkpoint(m.config(), params)), ShapeError);
}

TEST_CASE("config defaults and strict parsing") {
  const ExperimentConfig d = parse_config(nlohmann::json::object());
  CHECK(d.model == ModelConfig{});
  CHECK(d.train.epochs == 30);
  CHECK(d.data.train_size == 2000);

  try {
    parse_config(nlohmann::json{{"lambda", -1.0}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.pointer() == "/lambda");
  }
  try {
    parse_config(nlohmann::json{{"lamda", 1.0}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.pointer() == "/lamda");
  }
  CHECK_THROWS_AS(parse_config(nlohmann::json{{"dim", "64"}}), ConfigError);
  CHECK_THROWS_AS(parse_config(nlohmann::json::array()), ConfigError);
  CHECK_THROWS_AS(parse_config(nlohmann::json{{"penalty", "both"}}), ConfigError);

  nlohmann::json j{{"penalty", "local"}, {"dim", 32}, {"heads", 2}, {"train_channel", "drop"},
                   {"train_drop_prob", 0.1}, {"grad_clip", 1.5}};
  const ExperimentConfig c = parse_config(j);
  CHECK(c.model.penalty == PenaltyKind::local);
  CHECK(c.train.channel.kind == ChannelKind::drop);
  CHECK(*c.train.grad_clip == 1.5);
  const ExperimentConfig again = parse_config(dump_config(c));
  CHECK(again.model == c.model);
  CHECK(again.train.channel.drop_prob == 0.1);

  CHECK(model_config_from_json(model_config_to_json(c.model)) == c.model);
  nlohmann::json partial = model_config_to_json(c.model);
  partial.erase("dim");
  CHECK_THROWS_AS(model_config_from_json(partial), ConfigError);

  const fs::path p = scratch("bad.json");
  std::ofstream(p) << "{ \"dim\": ";
  CHECK_THROWS_AS(load_config(p), ConfigError);
  CHECK_THROWS_AS(load_config(scratch("absent.json")), IoError);
}

TEST_CASE("splits must match the model") {
  ExperimentConfig c = parse_config(nlohmann::json{{"train_size", 8}, {"test_size", 4}});
  CHECK(load_train_split(c.data, c.model).size() == 8);
  CHECK(load_test_split(c.data, c.model).size() == 4);
  CHECK(dataset_hash(load_test_split(c.data, c.model)) != dataset_hash(load_train_split(c.data, c.model).subset(0, 4)));
  c.model.image_size = 16;
  c.model.patch_size = 4;
  ShapesOptions o;
  o.count = 3;
  save_idx(gen_shapes(o), scratch("m-img"), scratch("m-lab"));
  c.data.train_images = scratch("m-img").string();
  c.data.train_labels = scratch("m-lab").string();
  CHECK_THROWS_AS(load_train_split(c.data, c.model), ConsistencyError);
}
