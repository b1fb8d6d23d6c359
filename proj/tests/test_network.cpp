#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "test_models.hpp"

using namespace thinner;
using namespace testing_models;

TEST_CASE("forward on a zero network gives zero logits") {
  Rng rng(1);
  Model model = random_model(rng, Topology::kConvConvDense);
  for (auto& layer : model.layers)
    for (auto& p : layer.params) p.fill(0.0);
  const Tensor logits = forward(model, random_batch(rng, model, 4)).logits;
  for (double v : logits.data()) CHECK(v == 0.0);
}

TEST_CASE("identity dense layer passes its input through") {
  Model model = init_model({3, 1, 1}, {flatten(), dense(3), softmax()}, 0);
  model.layers[1].weights() = Tensor(Shape{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor batch(Shape{1, 3, 1, 1}, {0.25, -2.0, 7.5});
  const Tensor logits = forward(model, batch).logits;
  CHECK(logits == Tensor(Shape{1, 3}, {0.25, -2.0, 7.5}));
}

TEST_CASE("forward matches a hand-stepped computation") {
  // conv(3x3, pad 1) -> relu -> maxpool 2 -> flatten -> dense -> relu -> dense,
  // evaluated with explicit loops.
  Model model = init_model({2, 4, 4},
                           {conv(3, 3, 1, 1), relu(), pool(), flatten(), dense(5), relu(),
                            dense(2), softmax()},
                           12345);
  Rng rng(99);
  for (auto& layer : model.layers)
    if (layer.parameterized())
      for (double& b : layer.bias().data()) b = rng.uniform(-0.3, 0.3);
  const Tensor x = oracle::random_tensor({1, 2, 4, 4}, rng);

  const Tensor& f = model.layers[0].weights();
  Tensor sample({2, 4, 4});
  std::copy(x.data().begin(), x.data().end(), sample.data().begin());
  Tensor conv_out = oracle::nested_loop_conv(sample, f, 1, 1);
  std::vector<double> pooled;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t oy = 0; oy < 2; ++oy)
      for (std::size_t ox = 0; ox < 2; ++ox) {
        double best = -1e300;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const double v = conv_out(c, 2 * oy + dy, 2 * ox + dx) + model.layers[0].bias()[c];
            best = std::max(best, std::max(v, 0.0));
          }
        pooled.push_back(best);
      }
  const Tensor& w1 = model.layers[4].weights();
  const Tensor& w2 = model.layers[6].weights();
  std::vector<double> hidden(5);
  for (std::size_t j = 0; j < 5; ++j) {
    double s = model.layers[4].bias()[j];
    for (std::size_t i = 0; i < pooled.size(); ++i) s += pooled[i] * w1(i, j);
    hidden[j] = std::max(s, 0.0);
  }
  const Tensor logits = forward(model, x).logits;
  for (std::size_t k = 0; k < 2; ++k) {
    double s = model.layers[6].bias()[k];
    for (std::size_t j = 0; j < 5; ++j) s += hidden[j] * w2(j, k);
    CHECK(std::abs(logits(0, k) - s) < 1e-10);
  }
}

TEST_CASE("forward records activations of prunable layers") {
  Rng rng(3);
  const Model model = random_model(rng, Topology::kConvDense);
  const auto result = forward(model, random_batch(rng, model, 3), true);
  REQUIRE(result.activations.size() == model.prunable.size());
  const auto& conv_act = result.activations.at(model.prunable[0]);
  CHECK(conv_act.rank() == 4);
  CHECK(conv_act.dim(0) == 3);
  CHECK(conv_act.dim(1) == model.layers[model.prunable[0]].width());
}

TEST_CASE("shape errors are raised before arithmetic") {
  Rng rng(4);
  const Model model = random_model(rng, Topology::kConvConvDense);
  CHECK_THROWS_AS(forward(model, Tensor({1, 9, 9, 9})), ShapeError);
  CHECK_THROWS_AS(init_model({1, 4, 4}, {dense(3)}, 0), ShapeError);
  CHECK_THROWS_AS(init_model({1, 2, 2}, {conv(2, 5)}, 0), ShapeError);

  Model broken = model;
  broken.layers[model.prunable[0]].bias() = Tensor({17});
  try {
    validate(broken);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find(broken.layers[model.prunable[0]].name) != std::string::npos);
  }
}

TEST_CASE("prunable set rules") {
  Rng rng(5);
  Model model = random_model(rng, Topology::kDenseOnly);
  CHECK(model.prunable == std::vector<std::size_t>{1, 3});
  Model bad = model;
  bad.prunable.push_back(5);  // output layer
  CHECK_THROWS_AS(validate(bad), ValueError);
  bad.prunable = {2};  // relu
  CHECK_THROWS_AS(validate(bad), ValueError);
}

TEST_CASE("uniform logits give loss ln(classes)") {
  Rng rng(6);
  Model model = random_model(rng, Topology::kDenseOnly, 5);
  for (auto& layer : model.layers)
    for (auto& p : layer.params) p.fill(0.0);
  const std::vector<int> labels{0, 3};
  const auto result = backward(model, random_batch(rng, model, 2), labels);
  CHECK(result.loss == doctest::Approx(std::log(5.0)).epsilon(1e-14));
}

TEST_CASE("backward rejects labels out of range") {
  Rng rng(7);
  const Model model = random_model(rng, Topology::kDenseOnly, 3);
  const std::vector<int> labels{3};
  CHECK_THROWS_AS(backward(model, random_batch(rng, model, 1), labels), ValueError);
  const std::vector<int> negative{-1};
  CHECK_THROWS_AS(backward(model, random_batch(rng, model, 1), negative), ValueError);
}

TEST_CASE("parameter and input gradients match central differences") {
  Rng rng(8);
  for (Topology topo : {Topology::kConvConvDense, Topology::kConvDense, Topology::kDenseOnly}) {
    for (int trial = 0; trial < 3; ++trial) {
      Model model = random_model(rng, topo);
      Tensor batch = random_batch(rng, model, 3);
      std::vector<int> labels;
      for (int s = 0; s < 3; ++s) labels.push_back(static_cast<int>(rng.below(3)));
      const auto analytic = backward(model, batch, labels);
      CHECK(analytic.loss >= 0.0);
      for (std::size_t li = 0; li < model.layers.size(); ++li) {
        for (std::size_t p = 0; p < model.layers[li].params.size(); ++p) {
          Tensor& param = model.layers[li].params[p];
          const Tensor numeric = oracle::central_difference(
              param, [&] { return cross_entropy(forward(model, batch).logits, labels); });
          CHECK(oracle::max_relative_error(analytic.gradients[li][p], numeric) < 1e-4);
        }
      }
      const Tensor numeric_input = oracle::central_difference(
          batch, [&] { return cross_entropy(forward(model, batch).logits, labels); });
      CHECK(oracle::max_relative_error(analytic.input_gradient, numeric_input) < 1e-4);
    }
  }
}

TEST_CASE("a duplicated sample gives the single-sample gradient") {
  Rng rng(9);
  const Model model = random_model(rng, Topology::kConvDense);
  const Tensor one = random_batch(rng, model, 1);
  Shape twice_shape = one.shape();
  twice_shape[0] = 2;
  std::vector<double> twice_data(one.data().begin(), one.data().end());
  twice_data.insert(twice_data.end(), one.data().begin(), one.data().end());
  const std::vector<int> l1{1}, l2{1, 1};
  const auto g1 = backward(model, one, l1);
  const auto g2 = backward(model, Tensor(twice_shape, twice_data), l2);
  CHECK(std::abs(g1.loss - g2.loss) < 1e-12);
  for (std::size_t li = 0; li < model.layers.size(); ++li)
    for (std::size_t p = 0; p < g1.gradients[li].size(); ++p)
      for (std::size_t i = 0; i < g1.gradients[li][p].size(); ++i)
        CHECK(std::abs(g1.gradients[li][p][i] - g2.gradients[li][p][i]) < 1e-12);
}

TEST_CASE("sgd_step") {
  Model model = init_model({1, 1, 1}, {flatten(), dense(1), softmax()}, 0);
  model.layers[1].weights()[0] = 1.0;
  ParamTensors grads = zeros_like_params(model);
  grads[1][0][0] = 2.0;

  SUBCASE("plain step") {
    ParamTensors velocity = zeros_like_params(model);
    sgd_step(model, grads, TrainConfig{0.1, 0.0, 1, 1, 0}, velocity);
    CHECK(model.layers[1].weights()[0] == doctest::Approx(0.8).epsilon(1e-15));
  }
  SUBCASE("zero gradients are a fixed point") {
    const Model before = model;
    ParamTensors velocity = zeros_like_params(model);
    sgd_step(model, zeros_like_params(model), TrainConfig{0.1, 0.9, 1, 1, 0}, velocity);
    CHECK(model == before);
  }
  SUBCASE("momentum recurrence") {
    ParamTensors velocity = zeros_like_params(model);
    const TrainConfig cfg{0.1, 0.9, 1, 1, 0};
    sgd_step(model, grads, cfg, velocity);
    grads[1][0][0] = -1.0;
    sgd_step(model, grads, cfg, velocity);
    const double v1 = -0.1 * 2.0;
    const double v2 = 0.9 * v1 - 0.1 * -1.0;
    CHECK(std::abs(model.layers[1].weights()[0] - (1.0 + v1 + v2)) < 1e-12);
    CHECK(std::abs(velocity[1][0][0] - v2) < 1e-12);
  }
  SUBCASE("shape mismatch") {
    ParamTensors velocity = zeros_like_params(model);
    grads[1][0] = Tensor({2, 2});
    CHECK_THROWS_AS(sgd_step(model, grads, TrainConfig{}, velocity), ShapeError);
  }
}

TEST_CASE("train") {
  const Dataset data = two_gaussians(200, 11);
  const Model start =
      init_model({2, 1, 1}, {flatten(), dense(8), relu(), dense(2), softmax()}, 21);

  SUBCASE("zero epochs is a no-op") {
    Model model = start;
    const auto result = train(model, data, TrainConfig{0.05, 0.9, 16, 0, 1});
    CHECK(model == start);
    CHECK(result.loss_history.empty());
  }
  SUBCASE("identical seeds give identical parameters") {
    Model a = start, b = start;
    train(a, data, TrainConfig{0.05, 0.9, 16, 3, 77});
    train(b, data, TrainConfig{0.05, 0.9, 16, 3, 77});
    CHECK(serialize_model(a) == serialize_model(b));
    Model c = start;
    train(c, data, TrainConfig{0.05, 0.9, 16, 3, 78});
    CHECK(serialize_model(a) != serialize_model(c));
  }
  SUBCASE("separable two-Gaussian task is learned") {
    Model model = start;
    std::size_t epochs_seen = 0;
    const auto result = train(model, data, TrainConfig{0.05, 0.9, 16, 20, 5}, nullptr,
                              [&](const EpochStats&) { ++epochs_seen; });
    CHECK(epochs_seen == 20);
    CHECK(result.loss_history.back() < result.loss_history.front());
    CHECK(evaluate(model, data) >= 0.95);
  }
  SUBCASE("empty dataset") {
    Model model = start;
    Dataset empty = data;
    empty.labels.clear();
    CHECK_THROWS_AS(train(model, empty, TrainConfig{}), ValueError);
    CHECK_THROWS_AS(evaluate(model, empty), ValueError);
  }
  SUBCASE("masked parameters stay at zero") {
    Model model = start;
    ParamMask mask = zeros_like_params(model);
    for (auto& layer : mask)
      for (auto& p : layer) p.fill(1.0);
    mask[1][0][0] = 0.0;
    mask[3][1][1] = 0.0;
    train(model, data, TrainConfig{0.05, 0.9, 16, 2, 3}, &mask);
    CHECK(model.layers[1].weights()[0] == 0.0);
    CHECK(model.layers[3].bias()[1] == 0.0);
    CHECK(!(model.layers[1].weights() == start.layers[1].weights()));
  }
}

TEST_CASE("evaluate") {
  SUBCASE("constant prediction") {
    Model model = init_model({2, 1, 1}, {flatten(), dense(3), softmax()}, 0);
    for (auto& p : model.layers[1].params) p.fill(0.0);
    model.layers[1].bias()[2] = 1.0;
    Dataset data = two_gaussians(10, 1);
    data.classes = 3;
    for (int& l : data.labels) l = 2;
    CHECK(evaluate(model, data) == 1.0);
    data.labels[0] = 0;
    CHECK(evaluate(model, data) == doctest::Approx(0.9));
  }
  SUBCASE("random weights sit near chance on balanced 10-class data") {
    // 1000 balanced samples: for any fixed classifier that ignores the
    // labels, accuracy is Binomial(1000, 0.1)/1000, so [0.05, 0.20] is a
    // > 5-sigma band.
    const Dataset data = generate_synthetic({"blobs", 1, 8, 8, 10, 0.3}, 1000, 4);
    const Model model = init_model({1, 8, 8},
                                   {conv(4, 3), relu(), flatten(), dense(16), relu(), dense(10),
                                    softmax()},
                                   1234);
    const double acc = evaluate(model, data);
    CHECK(acc >= 0.05);
    CHECK(acc <= 0.20);
    CHECK(evaluate(model, data) == acc);
  }
  SUBCASE("single sample") {
    const Dataset data = two_gaussians(2, 3);
    const Model model = init_model({2, 1, 1}, {flatten(), dense(2), softmax()}, 9);
    const std::vector<std::size_t> idx{0};
    const double acc = evaluate(model, subset(data, idx));
    CHECK((acc == 0.0 || acc == 1.0));
  }
}

TEST_CASE("init_model") {
  const std::vector<LayerSpec> specs{conv(4, 3, 1, 1), relu(), pool(), flatten(), dense(6),
                                     relu(), dense(3), softmax()};
  const Model a = init_model({2, 6, 6}, specs, 42);
  const Model b = init_model({2, 6, 6}, specs, 42);
  CHECK(a == b);
  CHECK(!(a == init_model({2, 6, 6}, specs, 43)));
  for (const auto& layer : a.layers)
    if (layer.parameterized())
      for (double v : layer.bias().data()) CHECK(v == 0.0);
  CHECK(a.layers[0].name == "conv1");
  CHECK(a.layers[4].name == "fc1");
  CHECK(a.prunable == std::vector<std::size_t>{0, 4});

  // Weights of a 10000-input dense layer: sample variance vs 2 / fan_in.
  const Model wide = init_model({10000, 1, 1}, {flatten(), dense(20), softmax()}, 7);
  const auto w = wide.layers[1].weights().data();
  double sum = 0.0, sq = 0.0;
  for (double v : w) sum += v;
  const double mean = sum / static_cast<double>(w.size());
  for (double v : w) sq += (v - mean) * (v - mean);
  const double var = sq / static_cast<double>(w.size() - 1);
  CHECK(std::abs(var - 2.0 / 10000.0) < 0.2 * (2.0 / 10000.0));
  CHECK(std::abs(mean) < 0.01 * std::sqrt(2.0 / 10000.0) * 10);
}

TEST_CASE("model file round trip and corruption handling") {
  Rng rng(10);
  const Model model = random_model(rng, Topology::kConvConvDense);
  const auto dir = std::filesystem::temp_directory_path() / "thinner_network_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "m.model";
  save_model(model, path);
  CHECK(!std::filesystem::exists(dir / "m.model.tmp"));
  const Model loaded = load_model(path);
  CHECK(loaded == model);
  CHECK(serialize_model(loaded) == serialize_model(model));

  auto bytes = serialize_model(model);
  const std::string head(bytes.begin(), bytes.begin() + 200);
  CHECK(head.rfind("THINNER-MODEL\nversion 1\n", 0) == 0);
  CHECK(head.find("header_bytes ") != std::string::npos);

  SUBCASE("truncated file") {
    std::vector<unsigned char> cut(bytes.begin(), bytes.end() - 13);
    CHECK_THROWS_AS(deserialize_model(cut), ChecksumError);
    std::ofstream(path, std::ios::binary | std::ios::trunc)
        .write(reinterpret_cast<const char*>(cut.data()), static_cast<long>(cut.size()));
    CHECK_THROWS_AS(load_model(path), ChecksumError);
  }
  SUBCASE("flipped payload byte") {
    bytes[bytes.size() - 20] ^= 0x40;
    CHECK_THROWS_AS(deserialize_model(bytes), ChecksumError);
  }
  SUBCASE("unknown version") {
    const std::string tag = "version 1";
    const auto pos = std::search(bytes.begin(), bytes.end(), tag.begin(), tag.end());
    *(pos + 8) = '7';
    CHECK_THROWS_AS(deserialize_model(bytes), VersionError);
  }
  SUBCASE("not a model file") {
    const std::vector<unsigned char> junk{'h', 'e', 'l', 'l', 'o'};
    CHECK_THROWS_AS(deserialize_model(junk), FormatError);
    CHECK_THROWS_AS(load_model(dir / "missing.model"), IoError);
  }
  std::filesystem::remove_all(dir);
}
