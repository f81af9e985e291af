#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "umsnet/layers/functional.hpp"
#include "umsnet/layers/modules.hpp"
#include "umsnet/numerics/grad_check.hpp"
#include "umsnet/numerics/ops.hpp"

using namespace umsnet;
using test::random_tensor;
using test::weighted_sum;

namespace {

Tensor<double> vec(std::vector<double> v, Shape shape) { return Tensor<double>(std::move(shape), std::move(v)); }

// Direct sliding-window oracle.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b,
                           const Conv1dSpec& s) {
  const std::size_t batch = x.extent(0), t_in = x.extent(2), t_out = s.output_length(t_in);
  const std::size_t cin_g = s.in_channels / s.groups, cout_g = s.out_channels / s.groups;
  Tensor<double> y({batch, s.out_channels, t_out});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      const std::size_t g = co / cout_g;
      for (std::size_t t = 0; t < t_out; ++t) {
        double acc = b ? (*b)[co] : 0.0;
        for (std::size_t ci = 0; ci < cin_g; ++ci)
          for (std::size_t k = 0; k < s.kernel_size; ++k) {
            const long pos = static_cast<long>(t * s.stride + k) - static_cast<long>(s.padding);
            if (pos < 0 || pos >= static_cast<long>(t_in)) continue;
            acc += w[(co * cin_g + ci) * s.kernel_size + k] *
                   x[(n * s.in_channels + g * cin_g + ci) * t_in + static_cast<std::size_t>(pos)];
          }
        y[(n * s.out_channels + co) * t_out + t] = acc;
      }
    }
  return y;
}

Conv1dSpec random_conv_spec(Rng& rng) {
  Conv1dSpec s;
  s.groups = 1 + rng.below(3);
  s.in_channels = s.groups * (1 + rng.below(3));
  s.out_channels = s.groups * (1 + rng.below(3));
  s.kernel_size = 1 + rng.below(3);
  s.stride = 1 + rng.below(2);
  s.padding = rng.below(2);
  s.bias = rng.below(2) == 1;
  return s;
}

}  // namespace

TEST_CASE("conv1d examples") {
  Tape<double> tape;
  Conv1dSpec s{1, 1, 3, 1, 1, 1, false};
  Var<double> x = tape.constant(vec({1, 2, 3, 4}, {1, 1, 4}));
  CHECK(conv1d<double>(x, tape.constant(vec({0, 1, 0}, {1, 1, 3})), std::nullopt, s).value().values() ==
        std::vector<double>{1, 2, 3, 4});
  CHECK(conv1d<double>(x, tape.constant(vec({1, 1, 1}, {1, 1, 3})), std::nullopt, s).value().values() ==
        std::vector<double>{3, 6, 9, 7});
  CHECK_THROWS_AS(conv1d<double>(tape.constant(Tensor<double>({1, 2, 4})), tape.constant(vec({1, 1, 1}, {1, 1, 3})),
                         std::nullopt, s),
                  DimensionError);
  Conv1dSpec bad{4, 6, 3, 1, 1, 4, true};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  for (std::size_t c : {2u, 8u, 16u}) {
    Conv1dSpec dw{c, c, 3, 1, 1, c, false}, dense{c, c, 3, 1, 1, 1, false};
    CHECK(dw.weight_count() * c == dense.weight_count());
  }
}

TEST_CASE("property: conv1d matches the sliding-window oracle and grad_check over random specs") {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const Conv1dSpec s = random_conv_spec(rng);
    const std::size_t batch = 1 + rng.below(3);
    const std::size_t t_in = s.kernel_size + rng.below(6);
    Parameter<double> x("x", random_tensor<double>({batch, s.in_channels, t_in}, rng));
    Parameter<double> w("w", random_tensor<double>({s.out_channels, s.in_channels / s.groups, s.kernel_size}, rng));
    Parameter<double> b("b", random_tensor<double>({s.out_channels}, rng));
    std::vector<Parameter<double>*> ps{&x, &w};
    if (s.bias) ps.push_back(&b);
    auto fn = [&](Tape<double>& t) {
      std::optional<Var<double>> bias;
      if (s.bias) bias = t.parameter(b);
      return conv1d<double>(t.parameter(x), t.parameter(w), bias, s);
    };
    Tape<double> tape;
    const Var<double> y = fn(tape);
    CHECK(y.shape() == Shape{batch, s.out_channels, s.output_length(t_in)});
    const Tensor<double> ref = conv_oracle(x.value, w.value, s.bias ? &b.value : nullptr, s);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.value()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    const auto r = grad_check<double>([&](Tape<double>& t) { return weighted_sum(fn(t)); }, ps);
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("depthwise conv touches exactly one input channel per output channel") {
  Rng rng(3);
  const std::size_t c = 5;
  Conv1dSpec s{c, c, 3, 1, 1, c, true};
  const Tensor<double> w = random_tensor<double>({c, 1, 3}, rng);
  const Tensor<double> x = random_tensor<double>({1, c, 6}, rng);
  Tape<double> tape;
  const Tensor<double> base = conv1d<double>(tape.constant(x), tape.constant(w), std::nullopt, s).value();
  for (std::size_t j = 0; j < c; ++j) {
    Tensor<double> xp = x;
    for (std::size_t t = 0; t < 6; ++t) xp[j * 6 + t] += 1.0;
    const Tensor<double> y = conv1d<double>(tape.constant(xp), tape.constant(w), std::nullopt, s).value();
    for (std::size_t co = 0; co < c; ++co) {
      bool changed = false;
      for (std::size_t t = 0; t < 6; ++t) changed = changed || y[co * 6 + t] != base[co * 6 + t];
      CHECK(changed == (co == j));
    }
  }
}

TEST_CASE("gelu") {
  CHECK(gelu_value(0.0) == 0.0);
  CHECK(std::abs(gelu_value(10.0) - 10.0) < 1e-6);
  CHECK(gelu_value(1.0) == doctest::Approx(0.841345).epsilon(1e-6));
  Rng rng(1);
  Parameter<double> x("x", random_tensor<double>({3, 7}, rng, 2.0));
  CHECK(grad_check<double>([&](Tape<double>& t) { return weighted_sum(gelu(t.parameter(x))); }, {&x}).max_rel_error <
        1e-5);
}

TEST_CASE("softmax") {
  Tape<double> tape;
  CHECK(softmax(tape.constant(vec({0, 0}, {2}))).value().values() == std::vector<double>{0.5, 0.5});
  const auto big = softmax(tape.constant(vec({1000, 0}, {2}))).value();
  CHECK(std::abs(big[0] - 1.0) < 1e-12);
  CHECK(big[1] < 1e-12);
  CHECK(big.all_finite());
  Rng rng(8);
  const auto r = softmax(tape.constant(random_tensor<double>({4, 9}, rng, 3.0))).value();
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 9; ++j) {
      CHECK(r[i * 9 + j] > 0.0);
      s += r[i * 9 + j];
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  Parameter<double> x("x", random_tensor<double>({2, 5}, rng));
  CHECK(grad_check<double>([&](Tape<double>& t) { return weighted_sum(softmax(t.parameter(x))); }, {&x})
            .max_rel_error < 1e-5);
}

TEST_CASE("layer norm") {
  Tape<double> tape;
  Var<double> g1 = tape.constant(Tensor<double>({3}, 1.0)), b1 = tape.constant(Tensor<double>({3}, 0.0));
  CHECK(layer_norm(tape.constant(vec({1, 1, 1}, {3})), g1, b1, 1e-5).value().values() ==
        std::vector<double>{0, 0, 0});
  Var<double> g2 = tape.constant(Tensor<double>({2}, 1.0)), b2 = tape.constant(Tensor<double>({2}, 0.0));
  const auto y = layer_norm(tape.constant(vec({-1, 1}, {2})), g2, b2, 1e-5).value();
  CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK_THROWS_AS(layer_norm(tape.constant(Tensor<double>({2, 4})), g1, b1, 1e-5), DimensionError);

  Rng rng(4);
  const Tensor<double> x = random_tensor<double>({3, 6}, rng, 2.0);
  Tensor<double> gamma = random_tensor<double>({6}, rng), beta = random_tensor<double>({6}, rng);
  const auto out = layer_norm(tape.constant(x), tape.constant(gamma), tape.constant(beta), 1e-5).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 6; ++j) m += x[r * 6 + j] / 6;
    for (std::size_t j = 0; j < 6; ++j) v += (x[r * 6 + j] - m) * (x[r * 6 + j] - m) / 6;
    for (std::size_t j = 0; j < 6; ++j) {
      const double ref = (x[r * 6 + j] - m) / std::sqrt(v + 1e-5) * gamma[j] + beta[j];
      CHECK(std::abs(out[r * 6 + j] - ref) < 1e-6);
    }
  }
  Parameter<double> px("x", x), pg("g", gamma), pb("b", beta);
  CHECK(grad_check<double>(
            [&](Tape<double>& t) {
              return weighted_sum(layer_norm(t.parameter(px), t.parameter(pg), t.parameter(pb), 1e-5));
            },
            {&px, &pg, &pb})
            .max_rel_error < 1e-5);
}

TEST_CASE("batch norm") {
  Tape<double> tape;
  Var<double> g = tape.constant(Tensor<double>({2}, 1.0)), b = tape.constant(Tensor<double>({2}, 0.0));
  Tensor<double> rm({2}, 0.0), rv({2}, 1.0);
  const auto zeros = batch_norm(tape.constant(Tensor<double>({3, 2, 4}, 7.0)), g, b, rm, rv, 1e-5, 0.1, true).value();
  for (double v : zeros.data()) CHECK(v == 0.0);
  CHECK(rm[0] == doctest::Approx(0.7));

  // Running statistics untouched in eval mode; initial (0, 1) act as identity.
  Tensor<double> rm2({2}, 0.0), rv2({2}, 1.0);
  Rng rng(6);
  const Tensor<double> x = random_tensor<double>({4, 2, 5}, rng, 3.0);
  const auto ev = batch_norm(tape.constant(x), g, b, rm2, rv2, 1e-5, 0.1, false).value();
  CHECK(rm2.values() == std::vector<double>{0, 0});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(ev[i] == doctest::Approx(x[i] / std::sqrt(1 + 1e-5)));

  const auto tr = batch_norm(tape.constant(x), g, b, rm2, rv2, 1e-5, 0.1, true).value();
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t t = 0; t < 5; ++t) m += x[(n * 2 + c) * 5 + t] / 20;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t t = 0; t < 5; ++t) v += std::pow(x[(n * 2 + c) * 5 + t] - m, 2) / 20;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t t = 0; t < 5; ++t) {
        const std::size_t i = (n * 2 + c) * 5 + t;
        CHECK(std::abs(tr[i] - (x[i] - m) / std::sqrt(v + 1e-5)) < 1e-6);
      }
    CHECK(rm2[c] == doctest::Approx(0.1 * m));
    CHECK(rv2[c] == doctest::Approx(0.9 + 0.1 * v * 20 / 19));
  }

  Parameter<double> px("x", x), pg("g", random_tensor<double>({2}, rng)), pb("b", random_tensor<double>({2}, rng));
  Tensor<double> rm3({2}, 0.0), rv3({2}, 1.0);
  for (bool training : {true, false}) {
    CHECK(grad_check<double>(
              [&](Tape<double>& t) {
                return weighted_sum(
                    batch_norm(t.parameter(px), t.parameter(pg), t.parameter(pb), rm3, rv3, 1e-5, 0.0, training));
              },
              {&px, &pg, &pb})
              .max_rel_error < 1e-5);
  }
}

TEST_CASE("linear") {
  Tape<double> tape;
  Var<double> x = tape.constant(vec({1, 2}, {2}));
  CHECK(linear<double>(x, tape.constant(vec({1, 0, 0, 1}, {2, 2})), std::nullopt).value().values() ==
        std::vector<double>{1, 2});
  CHECK(linear<double>(x, tape.constant(vec({1, 0, 0, 1, 1, 1}, {3, 2})), tape.constant(Tensor<double>({3}))).value().values() ==
        std::vector<double>{1, 2, 3});
  CHECK_THROWS_AS(linear<double>(tape.constant(Tensor<double>({3})), tape.constant(Tensor<double>({2, 2})), std::nullopt),
                  DimensionError);
  Rng rng(9);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t rows = 1 + rng.below(4), in = 1 + rng.below(5), out = 1 + rng.below(5);
    Parameter<double> px("x", random_tensor<double>({2, rows, in}, rng));
    Parameter<double> pw("w", random_tensor<double>({out, in}, rng));
    Parameter<double> pb("b", random_tensor<double>({out}, rng));
    Tape<double> t;
    const auto y = linear<double>(t.parameter(px), t.parameter(pw), t.parameter(pb)).value();
    CHECK(y.shape() == Shape{2, rows, out});
    for (std::size_t r = 0; r < 2 * rows; ++r)
      for (std::size_t o = 0; o < out; ++o) {
        double acc = pb.value[o];
        for (std::size_t i = 0; i < in; ++i) acc += px.value[r * in + i] * pw.value[o * in + i];
        CHECK(y[r * out + o] == doctest::Approx(acc).epsilon(1e-12));
      }
    CHECK(grad_check<double>(
              [&](Tape<double>& tt) {
                return weighted_sum(linear<double>(tt.parameter(px), tt.parameter(pw), tt.parameter(pb)));
              },
              {&px, &pw, &pb})
              .max_rel_error < 1e-5);
  }
}

namespace {

void set_identity(Linear<double>& l) {
  l.weight().value.fill(0.0);
  const std::size_t d = l.in_features();
  for (std::size_t i = 0; i < d; ++i) l.weight().value[i * d + i] = 1.0;
  if (l.bias()) l.bias()->value.fill(0.0);
}

}  // namespace

TEST_CASE("multi-head attention examples") {
  Rng init(1);
  MultiHeadAttention<double> mha("mha", AttentionSpec{4, 2, 0.0}, init);
  set_identity(mha.query());
  set_identity(mha.key());
  set_identity(mha.value());
  set_identity(mha.output());
  Tape<double> tape(false);
  Context<double> ctx{tape, Mode::kEval, nullptr};
  Rng rng(2);
  const Tensor<double> one = random_tensor<double>({1, 1, 4}, rng);
  CHECK(mha.forward(tape.constant(one), ctx).value() == one);

  Tensor<double> twin({1, 2, 4});
  for (std::size_t i = 0; i < 4; ++i) twin[i] = twin[4 + i] = one[i];
  Tensor<double> weights;
  mha.forward(tape.constant(twin), ctx, &weights);
  for (double w : weights.data()) CHECK(w == doctest::Approx(0.5));
  CHECK_THROWS_AS(MultiHeadAttention<double>("bad", AttentionSpec{6, 4, 0.0}, init), ConfigError);
}

TEST_CASE("multi-head attention matches an explicit per-head loop") {
  Rng init(7);
  const std::size_t L = 5, D = 8, H = 2, hd = D / H;
  MultiHeadAttention<double> mha("mha", AttentionSpec{D, H, 0.0}, init);
  Rng rng(3);
  for (auto* l : {&mha.query(), &mha.key(), &mha.value(), &mha.output()}) {
    if (l->bias()) l->bias()->value = random_tensor<double>({D}, rng, 0.1);
  }
  const Tensor<double> x = random_tensor<double>({2, L, D}, rng);
  Tape<double> tape(false);
  Context<double> ctx{tape, Mode::kEval, nullptr};
  Tensor<double> weights;
  const Tensor<double> y = mha.forward(tape.constant(x), ctx, &weights).value();

  auto project = [&](Linear<double>& l, const std::vector<double>& in, std::size_t rows) {
    std::vector<double> out(rows * D);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < D; ++o) {
        double acc = l.bias() ? l.bias()->value[o] : 0.0;
        for (std::size_t i = 0; i < D; ++i) acc += in[r * D + i] * l.weight().value[o * D + i];
        out[r * D + o] = acc;
      }
    return out;
  };
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<double> xb(x.values().begin() + static_cast<long>(b * L * D),
                           x.values().begin() + static_cast<long>((b + 1) * L * D));
    const auto q = project(mha.query(), xb, L), k = project(mha.key(), xb, L), v = project(mha.value(), xb, L);
    std::vector<double> concat(L * D, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        std::vector<double> s(L);
        double mx = -1e300;
        for (std::size_t j = 0; j < L; ++j) {
          double dot = 0;
          for (std::size_t d = 0; d < hd; ++d) dot += q[i * D + h * hd + d] * k[j * D + h * hd + d];
          s[j] = dot / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (double& e : s) z += (e = std::exp(e - mx));
        double row = 0;
        for (std::size_t j = 0; j < L; ++j) {
          s[j] /= z;
          CHECK(std::abs(weights[((b * H + h) * L + i) * L + j] - s[j]) < 1e-12);
          row += weights[((b * H + h) * L + i) * L + j];
        }
        CHECK(std::abs(row - 1.0) < 1e-6);
        for (std::size_t d = 0; d < hd; ++d) {
          double acc = 0;
          for (std::size_t j = 0; j < L; ++j) acc += s[j] * v[j * D + h * hd + d];
          concat[i * D + h * hd + d] = acc;
        }
      }
    }
    const auto ref = project(mha.output(), concat, L);
    for (std::size_t i = 0; i < L * D; ++i) CHECK(std::abs(y[b * L * D + i] - ref[i]) < 1e-5);
  }

  ParamList<double> ps;
  mha.collect(ps);
  Parameter<double> px("x", x);
  ps.push_back(&px);
  const auto r = grad_check<double>(
      [&](Tape<double>& t) {
        Context<double> c{t, Mode::kEval, nullptr};
        return weighted_sum(mha.forward(t.parameter(px), c));
      },
      ps);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("position and class embedding") {
  Tape<double> tape;
  Var<double> tokens = tape.constant(Tensor<double>({1, 2, 3}, 1.0));
  Tensor<double> pos({3, 3});
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t d = 0; d < 3; ++d) pos[k * 3 + d] = static_cast<double>(k);
  const auto out =
      add_position_and_class(tokens, tape.constant(pos), tape.constant(Tensor<double>({1, 3}))).value();
  CHECK(out.values() == std::vector<double>{0, 0, 0, 2, 2, 2, 3, 3, 3});
  const auto zero = add_position_and_class(tokens, tape.constant(Tensor<double>({3, 3})),
                                           tape.constant(Tensor<double>({1, 3})))
                        .value();
  CHECK(zero.values() == std::vector<double>{0, 0, 0, 1, 1, 1, 1, 1, 1});
  CHECK_THROWS_AS(add_position_and_class(tokens, tape.constant(Tensor<double>({4, 3})),
                                         tape.constant(Tensor<double>({1, 3}))),
                  DimensionError);

  Rng init(5);
  PositionAndClass<double> pc("emb", 2, 3, init);
  Parameter<double> tok("tok", random_tensor<double>({2, 2, 3}, init));
  {
    Tape<double> t;
    Context<double> c{t, Mode::kEval, nullptr};
    t.backward(sum(slice(pc.forward(t.parameter(tok), c), 1, 0, 1)));
  }
  bool pos_nonzero = false, cls_nonzero = false;
  for (double g : pc.position().grad.data()) pos_nonzero = pos_nonzero || g != 0.0;
  for (double g : pc.class_token().grad.data()) cls_nonzero = cls_nonzero || g != 0.0;
  CHECK(pos_nonzero);
  CHECK(cls_nonzero);
  ParamList<double> ps;
  pc.collect(ps);
  CHECK(grad_check<double>(
            [&](Tape<double>& t) {
              Context<double> c{t, Mode::kEval, nullptr};
              return weighted_sum(pc.forward(t.parameter(tok), c));
            },
            ps)
            .max_rel_error < 1e-5);
}

TEST_CASE("transformer encoder layer gradients and dropout modes") {
  Rng init(12);
  TransformerEncoderLayer<double> layer("enc", AttentionSpec{8, 2, 0.1}, 4, 0.1, init);
  Parameter<double> x("x", random_tensor<double>({2, 4, 8}, init));
  ParamList<double> ps;
  layer.collect(ps);
  ps.push_back(&x);
  const auto r = grad_check<double>(
      [&](Tape<double>& t) {
        Context<double> c{t, Mode::kEval, nullptr};
        return weighted_sum(layer.forward(t.parameter(x), c));
      },
      ps);
  CHECK(r.max_rel_error < 1e-5);

  Tape<double> t1(false), t2(false);
  Context<double> e1{t1, Mode::kEval, nullptr}, e2{t2, Mode::kEval, nullptr};
  CHECK(layer.forward(t1.constant(x.value), e1).value() == layer.forward(t2.constant(x.value), e2).value());
  Tape<double> t3(false);
  Context<double> tr{t3, Mode::kTrain, nullptr};
  CHECK_THROWS_AS(layer.forward(t3.constant(x.value), tr), ContractError);
}

TEST_CASE("dropout") {
  Rng rng(1);
  Tape<double> tape;
  const auto y = dropout(tape.constant(Tensor<double>({10000}, 1.0)), 0.25, rng).value();
  std::size_t zeros = 0;
  for (double v : y.data()) {
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
    zeros += v == 0.0;
  }
  const double sigma = std::sqrt(10000 * 0.25 * 0.75);
  CHECK(std::abs(static_cast<double>(zeros) - 2500.0) < 3 * sigma);
}

TEST_CASE("property: module output shapes are a function of input shape and spec") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Conv1dSpec s = random_conv_spec(rng);
    Rng init(static_cast<std::uint64_t>(trial));
    Conv1d<float> conv("c", s, init);
    const std::size_t batch = 1 + rng.below(3), t_in = s.kernel_size + rng.below(8);
    Tape<float> tape(false);
    Context<float> ctx{tape, Mode::kEval, nullptr};
    const auto y = conv.forward(tape.constant(Tensor<float>({batch, s.in_channels, t_in})), ctx);
    CostTrace trace;
    CHECK(y.shape() == conv.trace({batch, s.in_channels, t_in}, trace));
    CHECK(y.shape() == Shape{batch, s.out_channels, s.output_length(t_in)});

    const std::size_t in = 1 + rng.below(6), out = 1 + rng.below(6);
    Linear<float> lin("l", in, out, init);
    const auto z = lin.forward(tape.constant(Tensor<float>({batch, 3, in})), ctx);
    CostTrace t2;
    CHECK(z.shape() == lin.trace({batch, 3, in}, t2));
    CHECK(z.shape() == Shape{batch, 3, out});
  }
}
