#include <doctest.h>

#include <cmath>
#include <set>

#include "support.hpp"
#include "umsnet/errors.hpp"
#include "umsnet/model/umsnet.hpp"
#include "umsnet/numerics/grad_check.hpp"
#include "umsnet/numerics/ops.hpp"

using namespace umsnet;
using test::random_tensor;
using test::weighted_sum;

namespace {

ModelConfig tiny_config(const DatasetProfile& profile, std::size_t k = 6, Variant v = Variant::kA) {
  ModelConfig c = make_model_config(v, profile, k);
  c.single_stage.widths = {4, 4, 6, 8};
  c.multi_stage.widths = {4, 4, 6, 6};
  c.model_dim = 8;
  c.num_heads = 2;
  c.dropout = 0.0;
  c.validate();
  return c;
}

DatasetProfile two_sensor_profile() { return {"two", {{"acc", 3, 8}, {"ecg", 2, 8}}, 5}; }

template <typename T>
ModelInput<T> random_input(const ModelConfig& c, std::size_t batch, Rng& rng) {
  ModelInput<T> in;
  in.batch = batch;
  for (const auto& s : c.sensors)
    in.sensors.push_back(random_tensor<T>({batch * c.num_slices, s.channels, s.samples_per_slice}, rng));
  return in;
}

template <typename T>
Tensor<T> logits(UmsNet<T>& net, const ModelInput<T>& in) {
  Tape<T> tape(false);
  Context<T> ctx{tape, Mode::kEval, nullptr};
  return net.forward(in, ctx).value();
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST_CASE("variants and profiles") {
  const VariantDepths a = variant_depths(Variant::kA), b = variant_depths(Variant::kB),
                      c = variant_depths(Variant::kC);
  CHECK(a.single == std::array<std::size_t, 4>{2, 2, 2, 2});
  CHECK(a.multi == std::array<std::size_t, 4>{2, 2, 2, 2});
  CHECK(a.encoder == 3);
  CHECK(b.single == std::array<std::size_t, 4>{2, 2, 6, 2});
  CHECK(b.multi == std::array<std::size_t, 4>{2, 2, 6, 2});
  CHECK(b.encoder == 6);
  CHECK(c.single == std::array<std::size_t, 4>{2, 2, 18, 2});
  CHECK(c.multi == std::array<std::size_t, 4>{2, 2, 18, 2});
  CHECK(c.encoder == 6);
  CHECK(parse_variant("b") == Variant::kB);
  CHECK(parse_variant("custom") == Variant::kCustom);
  CHECK_THROWS_AS(parse_variant("D"), ConfigError);

  const DatasetProfile hhar = hhar_profile();
  CHECK(hhar.sensors.size() == 2);
  CHECK(hhar.num_classes == 6);
  const DatasetProfile mh = mhealth_profile();
  REQUIRE(mh.sensors.size() == 4);
  CHECK(mh.num_classes == 7);
  std::vector<std::size_t> channels;
  for (const auto& s : mh.sensors) channels.push_back(s.channels);
  CHECK(channels == std::vector<std::size_t>{3, 3, 3, 2});
  CHECK(profile_by_name("mhealth").sensors == mh.sensors);
  CHECK_THROWS_AS(profile_by_name("wisdm"), ConfigError);

  const ModelConfig cfg = make_model_config(Variant::kB, hhar, 12);
  CHECK(cfg.transformer_depth == 6);
  CHECK(cfg.single_stage.depths == b.single);
  CHECK(cfg.single_stage.widths == kDefaultSingleWidths);
  CHECK(cfg.multi_stage.widths == kDefaultMultiWidths);
  CHECK(cfg.multi_stage.input_channels == 2);
  CHECK(cfg.num_slices == 12);
  ModelConfig bad = cfg;
  bad.sensors[0].samples_per_slice = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.num_heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config json round trip") {
  ModelConfig c = tiny_config(mhealth_profile(), 12, Variant::kC);
  c.stack.norm = NormKind::kLayer;
  c.stack.min_survival = 0.7;
  nlohmann::json j = c;
  const ModelConfig back = j.get<ModelConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.sensors == c.sensors);
  CHECK(back.single_stage.depths == c.single_stage.depths);
}

TEST_CASE("forward shape and eval determinism") {
  const ModelConfig c = tiny_config(hhar_profile());
  UmsNet<double> net(c, 1);
  Rng rng(2);
  const auto in = random_input<double>(c, 4, rng);
  const Tensor<double> y = logits(net, in);
  CHECK(y.shape() == Shape{4, 6});
  CHECK(y == logits(net, in));
  Rng r1(1);
  Tape<double> tape(false);
  Context<double> ctx{tape, Mode::kEval, &r1};
  CHECK(net.forward(in, ctx).value() == y);

  UmsNet<double> twin(c, 1);
  CHECK(logits(twin, in) == y);
  UmsNet<double> other(c, 2);
  CHECK(!(logits(other, in) == y));
}

TEST_CASE("geometry errors name the sensor") {
  const ModelConfig c = tiny_config(two_sensor_profile());
  UmsNet<double> net(c, 1);
  Rng rng(3);
  auto in = random_input<double>(c, 2, rng);
  in.sensors[1] = Tensor<double>({12, 3, 8});
  try {
    logits(net, in);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("ecg") != std::string::npos);
  }
  in.sensors.pop_back();
  CHECK_THROWS_AS(logits(net, in), DimensionError);
  Tape<double> tape(false);
  Context<double> ctx{tape, Mode::kEval, nullptr};
  CHECK_THROWS_AS(net.single_sensor_features(tape.constant(Tensor<double>({6, 3, 8})), 2, ctx), ConfigError);
  CHECK_THROWS_AS(net.classify_sequence(tape.constant(Tensor<double>({1, 5, 8})), ctx), DimensionError);
}

TEST_CASE("single-sensor features are per sensor and shared across slices") {
  const ModelConfig c = tiny_config(two_sensor_profile());
  UmsNet<double> net(c, 4);
  Rng rng(5);
  const auto in = random_input<double>(c, 1, rng);
  Tape<double> tape(false);
  Context<double> ctx{tape, Mode::kEval, nullptr};
  const auto f0 = net.single_sensor_features(tape.constant(in.sensors[0]), 0, ctx).value();
  const auto f1 = net.single_sensor_features(tape.constant(in.sensors[1]), 1, ctx).value();
  CHECK(f0.shape() == Shape{6, 8, 1});
  CHECK(f1.shape() == Shape{6, 8, 1});

  // Slice 2 alone through the stack gives the same row as inside the batch.
  const auto one = net.single_sensor_features(tape.constant(slice(tape.constant(in.sensors[0]), 0, 2, 1).value()), 0,
                                              ctx)
                        .value();
  for (std::size_t i = 0; i < 8; ++i) CHECK(one[i] == f0[2 * 8 + i]);

  ParamList<double> s0, s1;
  net.sensor_stack(0).collect(s0);
  net.sensor_stack(1).collect(s1);
  for (auto* p : s0)
    for (auto* q : s1) CHECK(p != q);
}

TEST_CASE("sensor modularity") {
  const ModelConfig c = tiny_config(two_sensor_profile());
  UmsNet<double> net(c, 6);
  Rng rng(7);
  auto in = random_input<double>(c, 2, rng);
  auto moved = in;
  for (double& v : moved.sensors[1].data()) v += 1.0;
  Tape<double> tape(false);
  Context<double> ctx{tape, Mode::kEval, nullptr};
  CHECK(net.single_sensor_features(tape.constant(in.sensors[0]), 0, ctx).value() ==
        net.single_sensor_features(tape.constant(moved.sensors[0]), 0, ctx).value());
  CHECK(!(net.single_sensor_features(tape.constant(in.sensors[1]), 1, ctx).value() ==
          net.single_sensor_features(tape.constant(moved.sensors[1]), 1, ctx).value()));

  // A loss that reads only sensor 1 leaves sensor 0's stack without gradient.
  net.zero_grad();
  {
    Tape<double> t;
    Context<double> c2{t, Mode::kEval, nullptr};
    t.backward(weighted_sum(net.single_sensor_features(t.constant(in.sensors[1]), 1, c2)));
  }
  ParamList<double> s0, s1;
  net.sensor_stack(0).collect(s0);
  net.sensor_stack(1).collect(s1);
  for (auto* p : s0)
    for (double g : p->grad.data()) CHECK(g == 0.0);
  bool any = false;
  for (auto* p : s1)
    for (double g : p->grad.data()) any = any || g != 0.0;
  CHECK(any);
}

TEST_CASE("fuse sensors") {
  Tape<double> tape;
  Rng rng(1);
  const Tensor<double> a = random_tensor<double>({3, 4, 1}, rng), b = random_tensor<double>({3, 4, 1}, rng);
  const auto fused = fuse_sensors<double>({tape.constant(a), tape.constant(b)}).value();
  CHECK(fused.shape() == Shape{3, 2, 4});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(fused[(r * 2 + 0) * 4 + i] == a[r * 4 + i]);
      CHECK(fused[(r * 2 + 1) * 4 + i] == b[r * 4 + i]);
    }
  const Tensor<double> wide = random_tensor<double>({2, 3, 2}, rng);
  const auto single = fuse_sensors<double>({tape.constant(wide)}).value();
  CHECK(single.shape() == Shape{2, 1, 6});
  CHECK(single.values() == wide.values());
  CHECK_THROWS_AS(fuse_sensors<double>({tape.constant(a), tape.constant(wide)}), DimensionError);
}

TEST_CASE("multi-sensor features equal stack, mean pool and projection") {
  const ModelConfig c = tiny_config(two_sensor_profile());
  UmsNet<double> net(c, 8);
  Rng rng(9);
  const Tensor<double> fused = random_tensor<double>({5, 2, 8}, rng);
  Tape<double> tape(false);
  Context<double> ctx{tape, Mode::kEval, nullptr};
  const auto y = net.multi_sensor_features(tape.constant(fused), ctx).value();
  CHECK(y.shape() == Shape{5, 8});
  const auto map = net.multi_stack().forward(tape.constant(fused), ctx).value();
  const std::size_t ch = map.extent(1), len = map.extent(2);
  Linear<double>& proj = net.projection();
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t o = 0; o < 8; ++o) {
      double acc = proj.bias() ? proj.bias()->value[o] : 0.0;
      for (std::size_t k = 0; k < ch; ++k) {
        double mean = 0;
        for (std::size_t t = 0; t < len; ++t) mean += map[(r * ch + k) * len + t] / static_cast<double>(len);
        acc += proj.weight().value[o * ch + k] * mean;
      }
      CHECK(std::abs(y[r * 8 + o] - acc) < 1e-12);
    }

  const auto constant = net.multi_sensor_features(tape.constant(Tensor<double>({3, 2, 8}, 0.5)), ctx).value();
  for (std::size_t r = 1; r < 3; ++r)
    for (std::size_t o = 0; o < 8; ++o) CHECK(constant[r * 8 + o] == constant[o]);
}

TEST_CASE("slice order and the class token") {
  const ModelConfig c = tiny_config(hhar_profile());
  UmsNet<double> net(c, 10);
  Rng rng(11);
  const Tensor<double> emb = random_tensor<double>({2, 6, 8}, rng);
  Tensor<double> permuted(emb.shape());
  const std::size_t order[6] = {3, 0, 5, 1, 4, 2};
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t k = 0; k < 6; ++k)
      for (std::size_t d = 0; d < 8; ++d) permuted[(b * 6 + k) * 8 + d] = emb[(b * 6 + order[k]) * 8 + d];
  auto classify = [&](const Tensor<double>& e) {
    Tape<double> tape(false);
    Context<double> ctx{tape, Mode::kEval, nullptr};
    return net.classify_sequence(tape.constant(e), ctx).value();
  };
  CHECK(classify(emb).shape() == Shape{2, 6});
  CHECK(max_abs_diff(classify(emb), classify(permuted)) > 1e-9);

  // Equal rows in the position table (index 0 belongs to the class token).
  auto& pos = net.embedding().position().value;
  const std::size_t d = pos.extent(1);
  for (std::size_t k = 2; k < pos.extent(0); ++k)
    for (std::size_t j = 0; j < d; ++j) pos[k * d + j] = pos[d + j];
  CHECK(max_abs_diff(classify(emb), classify(permuted)) < 1e-12);
}

TEST_CASE("every slice reaches the logits") {
  const ModelConfig c = tiny_config(hhar_profile());
  UmsNet<double> net(c, 12);
  Rng rng(13);
  const auto in = random_input<double>(c, 1, rng);
  const Tensor<double> base = logits(net, in);
  for (std::size_t k = 0; k < c.num_slices; ++k) {
    auto moved = in;
    const std::size_t per = 3 * 8;
    for (std::size_t i = 0; i < per; ++i) moved.sensors[0][k * per + i] += 1.0;
    CHECK(max_abs_diff(logits(net, moved), base) > 1e-9);
  }
}

TEST_CASE("initialisation") {
  const ModelConfig c = tiny_config(two_sensor_profile());
  UmsNet<double> net(c, 14);
  std::set<std::string> names;
  for (auto* p : net.parameters()) {
    CHECK(names.insert(p->name).second);
    const bool is_bias = p->name.size() > 5 && p->name.substr(p->name.size() - 5) == ".bias";
    if (p->name.find("layer_scale") != std::string::npos)
      for (double v : p->value.data()) CHECK(v == doctest::Approx(1e-6));
    if (is_bias && p->trainable)
      for (double v : p->value.data()) CHECK(v == 0.0);
  }
  for (auto* p : {&net.embedding().position(), &net.embedding().class_token()}) {
    double sq = 0;
    for (double v : p->value.data()) {
      CHECK(std::abs(v) <= 0.04 + 1e-12);
      sq += v * v;
    }
    CHECK(sq > 0.0);
  }
  CostTrace trace = net.trace(1);
  std::int64_t counted = 0;
  for (auto* p : net.trainable_parameters()) counted += static_cast<std::int64_t>(p->value.size());
  CHECK(trace.total_params() == counted);
}

TEST_CASE("variant ordering under identical widths") {
  std::int64_t prev = 0;
  for (Variant v : {Variant::kA, Variant::kB, Variant::kC}) {
    const ModelConfig c = tiny_config(hhar_profile(), 6, v);
    UmsNet<float> net(c, 1);
    std::int64_t n = 0;
    for (auto* p : net.trainable_parameters()) n += static_cast<std::int64_t>(p->value.size());
    CHECK(n > prev);
    prev = n;
  }
}

TEST_CASE("end-to-end gradient check") {
  ModelConfig c = tiny_config(two_sensor_profile());
  c.stack.min_survival = 1.0;
  UmsNet<double> net(c, 15);
  Rng rng(16);
  for (auto* p : net.parameters())
    if (p->name.find("layer_scale") != std::string::npos) p->value.fill(0.5);
  const auto in = random_input<double>(c, 2, rng);
  GradCheckOptions opts;
  opts.max_coords_per_param = 4;
  // The default step is truncation-limited on this deeper graph.
  opts.epsilon = 1e-6;
  for (Mode mode : {Mode::kEval, Mode::kTrain}) {
    const auto r = grad_check<double>(
        [&](Tape<double>& t) {
          Context<double> ctx{t, mode, nullptr};
          return weighted_sum(net.forward(in, ctx));
        },
        net.trainable_parameters(), opts);
    INFO(r.worst_param, " ", r.worst_index, " analytic ", r.analytic, " numeric ", r.numeric);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.coords_checked > 100);
  }
}
