#include <doctest.h>

#include <fstream>

#include <nlohmann/json.hpp>

#include "kws/error.hpp"
#include "kws/model_io.hpp"
#include "testutil.hpp"

using namespace kws;
namespace tu = kws::testutil;

namespace {

TrainedModel make_model(Rng& rng) {
  Matrix train(50, 6);
  for (auto& v : train.data) v = rng.uniform01() * 10.0;
  QuantileEncoder encoder = QuantileEncoder::fit(train, 4);

  TmParams params;
  params.clauses_per_class = 6;
  params.threshold = 4;
  params.s = 3.9;
  params.n_states = 100;
  TsetlinMachine machine(3, encoder.total_booleans(), params);

  // A few genuine training steps leave the automata in a nontrivial state.
  EncodedDataset data;
  data.n_bits = encoder.total_booleans();
  for (int i = 0; i < 30; ++i) {
    std::vector<double> sample(6);
    for (auto& v : sample) v = rng.uniform01() * 10.0;
    data.samples.push_back(encoder.transform(sample));
    data.labels.push_back(static_cast<int>(rng.below(3)));
  }
  Rng fit_rng(5);
  machine.fit(data, nullptr, nullptr, 2, fit_rng);

  return TrainedModel{{"yes", "no", "stop"}, std::move(encoder), std::move(machine)};
}

}  // namespace

TEST_CASE("model file round trip preserves behavior") {
  const auto dir = tu::fresh_dir("model_io");
  Rng rng(404);
  const TrainedModel model = make_model(rng);
  save_model(model, dir / "model.json");

  const TrainedModel back = load_model(dir / "model.json");
  CHECK(back.keywords == model.keywords);
  CHECK(back.encoder.n_bins() == 4);
  CHECK(back.encoder.boundaries() == model.encoder.boundaries());
  CHECK(back.machine.n_classes() == 3);
  CHECK(back.machine.n_features() == model.machine.n_features());
  CHECK(back.machine.params().clauses_per_class == 6);
  CHECK(back.machine.params().threshold == 4);
  CHECK(back.machine.params().s == 3.9);
  CHECK(back.machine.params().n_states == 100);

  const auto a = model.machine.ta_states();
  const auto b = back.machine.ta_states();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  for (int i = 0; i < 100; ++i) {
    std::vector<double> sample(6);
    for (auto& v : sample) v = rng.uniform01() * 10.0;
    const BitVector bits = model.encoder.transform(sample);
    CHECK(back.machine.predict(bits) == model.machine.predict(bits));
  }
}

TEST_CASE("unknown format versions are rejected") {
  const auto dir = tu::fresh_dir("model_version");
  Rng rng(405);
  save_model(make_model(rng), dir / "model.json");

  auto doc = nlohmann::json::parse(tu::read_file(dir / "model.json"));
  doc["format_version"] = 999;
  std::ofstream(dir / "model.json") << doc.dump(2);
  CHECK_THROWS_AS(load_model(dir / "model.json"), ModelVersionError);
}

TEST_CASE("structural damage is a parse error") {
  const auto dir = tu::fresh_dir("model_damage");
  Rng rng(406);
  save_model(make_model(rng), dir / "model.json");
  const std::string original = tu::read_file(dir / "model.json");

  SUBCASE("truncated file") {
    std::ofstream(dir / "model.json") << original.substr(0, original.size() / 2);
    CHECK_THROWS_AS(load_model(dir / "model.json"), ParseError);
  }
  SUBCASE("invalid base64 characters") {
    auto doc = nlohmann::json::parse(original);
    std::string states = doc["ta_states"].get<std::string>();
    states[0] = '!';
    doc["ta_states"] = states;
    std::ofstream(dir / "model.json") << doc.dump(2);
    CHECK_THROWS_AS(load_model(dir / "model.json"), ParseError);
  }
  SUBCASE("padding in the middle") {
    auto doc = nlohmann::json::parse(original);
    std::string states = doc["ta_states"].get<std::string>();
    states[4] = '=';
    doc["ta_states"] = states;
    std::ofstream(dir / "model.json") << doc.dump(2);
    CHECK_THROWS_AS(load_model(dir / "model.json"), ParseError);
  }
  SUBCASE("state payload has the wrong length") {
    auto doc = nlohmann::json::parse(original);
    std::string states = doc["ta_states"].get<std::string>();
    doc["ta_states"] = states.substr(0, states.size() - 4);
    std::ofstream(dir / "model.json") << doc.dump(2);
    CHECK_THROWS_AS(load_model(dir / "model.json"), ParseError);
  }
  SUBCASE("feature width disagrees with the encoder") {
    auto doc = nlohmann::json::parse(original);
    doc["feature_meta"]["F"] = doc["feature_meta"]["F"].get<int>() + 1;
    std::ofstream(dir / "model.json") << doc.dump(2);
    CHECK_THROWS_AS(load_model(dir / "model.json"), ParseError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_model(dir / "absent.json"), ParseError);
  }
}

TEST_CASE("deep automata cannot be packed into single bytes") {
  Rng rng(407);
  Matrix train(50, 6);
  for (auto& v : train.data) v = rng.uniform01();
  TmParams params;
  params.clauses_per_class = 2;
  params.threshold = 1;
  params.n_states = 200;  // 2N = 400 exceeds one byte
  TrainedModel deep{{"a", "b"},
                    QuantileEncoder::fit(train, 2),
                    TsetlinMachine(2, 6, params)};

  const auto dir = tu::fresh_dir("model_deep");
  CHECK_THROWS_AS(save_model(deep, dir / "model.json"), ConfigError);
}
