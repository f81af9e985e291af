#include "umsnet/layers/functional.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "umsnet/numerics/ops.hpp"

namespace umsnet {

void Conv1dSpec::validate() const {
  if (in_channels == 0 || out_channels == 0 || kernel_size == 0 || stride == 0 || groups == 0) {
    throw ConfigError("conv1d: channels, kernel_size, stride and groups must be positive");
  }
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ConfigError("conv1d: channels " + std::to_string(in_channels) + "->" +
                      std::to_string(out_channels) + " not divisible by groups " +
                      std::to_string(groups));
  }
}

std::size_t Conv1dSpec::output_length(std::size_t input_length) const {
  if (input_length + 2 * padding < kernel_size) {
    throw DimensionError("conv1d: input length " + std::to_string(input_length) +
                         " too short for kernel " + std::to_string(kernel_size));
  }
  return (input_length + 2 * padding - kernel_size) / stride + 1;
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& weight, const std::optional<Var<T>>& bias,
              const Conv1dSpec& spec) {
  spec.validate();
  const Shape& xs = x.shape();
  if (xs.size() != 3 || xs[1] != spec.in_channels) {
    throw DimensionError("conv1d: expected input (batch, " + std::to_string(spec.in_channels) +
                         ", T), got " + shape_str(xs));
  }
  const Shape wshape{spec.out_channels, spec.in_channels / spec.groups, spec.kernel_size};
  if (weight.shape() != wshape) {
    throw DimensionError("conv1d: weight shape " + shape_str(weight.shape()) + ", expected " +
                         shape_str(wshape));
  }
  if (bias && bias->shape() != Shape{spec.out_channels}) {
    throw DimensionError("conv1d: bias shape " + shape_str(bias->shape()));
  }
  const std::size_t batch = xs[0], len = xs[2];
  const std::size_t out_len = spec.output_length(len);
  const std::size_t cin_g = spec.in_channels / spec.groups;
  const std::size_t cout_g = spec.out_channels / spec.groups;
  const std::size_t k = spec.kernel_size, stride = spec.stride, pad = spec.padding;
  const std::size_t cin = spec.in_channels, cout = spec.out_channels;

  // Output positions t with 0 <= t*stride + j - pad < len, as [lo, hi).
  auto t_range = [=](std::size_t j) {
    std::size_t lo = 0;
    if (j < pad) lo = (pad - j + stride - 1) / stride;
    std::size_t hi = 0;
    if (len + pad > j) hi = std::min(out_len, (len + pad - j - 1) / stride + 1);
    return std::pair{lo, std::max(lo, hi)};
  };

  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);

  if (spec.groups == 1) {
    // im2col: cols is (batch*out_len, cin*k), the weight is (cout, cin*k).
    const std::size_t rows = batch * out_len, width = cin * k;
    auto cols = std::make_shared<std::vector<T>>(rows * width, T(0));
    {
      const T* xd = x.value().data().data();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t j = 0; j < k; ++j) {
            const auto [lo, hi] = t_range(j);
            const T* xrow = xd + (b * cin + ci) * len;
            T* dst = cols->data() + b * out_len * width + ci * k + j;
            for (std::size_t t = lo; t < hi; ++t) dst[t * width] = xrow[t * stride + j - pad];
          }
    }
    std::vector<T> wt(width * cout);
    {
      const T* wd = weight.value().data().data();
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t p = 0; p < width; ++p) wt[p * cout + o] = wd[o * width + p];
    }
    std::vector<T> y(rows * cout, T(0));
    kernels::gemm_acc(cols->data(), wt.data(), y.data(), rows, width, cout, false);
    Tensor<T> out({batch, cout, out_len});
    T* od = out.data().data();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < cout; ++o) {
        const T bv = bias ? bias->value()[o] : T(0);
        for (std::size_t t = 0; t < out_len; ++t) od[(b * cout + o) * out_len + t] = y[(b * out_len + t) * cout + o] + bv;
      }
    return x.tape().record(std::move(out), inputs, [=](Tape<T>& tape, const Tensor<T>& g) {
      const T* gd = g.data().data();
      std::vector<T> gy(rows * cout);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t t = 0; t < out_len; ++t) gy[(b * out_len + t) * cout + o] = gd[(b * cout + o) * out_len + t];
      if (bias && bias->requires_grad()) {
        auto gb = tape.grad(*bias).data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < cout; ++o) gb[o] += gy[r * cout + o];
      }
      if (weight.requires_grad()) {
        kernels::gemm_at_acc(gy.data(), cols->data(), tape.grad(weight).data().data(), rows, cout, width);
      }
      if (x.requires_grad()) {
        std::vector<T> gcols(rows * width, T(0));
        kernels::gemm_acc(gy.data(), weight.value().data().data(), gcols.data(), rows, cout, width, false);
        T* gx = tape.grad(x).data().data();
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t j = 0; j < k; ++j) {
              const auto [lo, hi] = t_range(j);
              T* gxrow = gx + (b * cin + ci) * len;
              const T* src = gcols.data() + b * out_len * width + ci * k + j;
              for (std::size_t t = lo; t < hi; ++t) gxrow[t * stride + j - pad] += src[t * width];
            }
      }
    });
  }

  Tensor<T> out({batch, cout, out_len});
  {
    const T* xd = x.value().data().data();
    const T* wd = weight.value().data().data();
    T* od = out.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t o = 0; o < cout; ++o) {
        T* orow = od + (b * cout + o) * out_len;
        if (bias) std::fill_n(orow, out_len, bias->value()[o]);
        const std::size_t g = o / cout_g;
        for (std::size_t ci = 0; ci < cin_g; ++ci) {
          const T* xrow = xd + (b * cin + g * cin_g + ci) * len;
          const T* wrow = wd + (o * cin_g + ci) * k;
          for (std::size_t j = 0; j < k; ++j) {
            const T w = wrow[j];
            const auto [lo, hi] = t_range(j);
            for (std::size_t t = lo; t < hi; ++t) orow[t] += w * xrow[t * stride + j - pad];
          }
        }
      }
    }
  }

  return x.tape().record(std::move(out), inputs, [=](Tape<T>& tape, const Tensor<T>& g) {
    const T* gd = g.data().data();
    const T* xd = x.value().data().data();
    const T* wd = weight.value().data().data();
    T* gx = x.requires_grad() ? tape.grad(x).data().data() : nullptr;
    T* gw = weight.requires_grad() ? tape.grad(weight).data().data() : nullptr;
    if (bias && bias->requires_grad()) {
      auto gb = tape.grad(*bias).data();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < cout; ++o) {
          const T* grow = gd + (b * cout + o) * out_len;
          T acc = T(0);
          for (std::size_t t = 0; t < out_len; ++t) acc += grow[t];
          gb[o] += acc;
        }
      }
    }
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t o = 0; o < cout; ++o) {
        const T* grow = gd + (b * cout + o) * out_len;
        const std::size_t grp = o / cout_g;
        for (std::size_t ci = 0; ci < cin_g; ++ci) {
          const std::size_t xoff = (b * cin + grp * cin_g + ci) * len;
          const std::size_t woff = (o * cin_g + ci) * k;
          for (std::size_t j = 0; j < k; ++j) {
            const auto [lo, hi] = t_range(j);
            if (gw) {
              T acc = T(0);
              for (std::size_t t = lo; t < hi; ++t) acc += grow[t] * xd[xoff + t * stride + j - pad];
              gw[woff + j] += acc;
            }
            if (gx) {
              const T w = wd[woff + j];
              for (std::size_t t = lo; t < hi; ++t) gx[xoff + t * stride + j - pad] += w * grow[t];
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const auto xd = x.value().data();
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = static_cast<T>(gelu_value(xd[i]));
  return x.tape().record(std::move(out), {x}, [x](Tape<T>& tape, const Tensor<T>& g) {
    const auto xd = x.value().data();
    auto gx = tape.grad(x).data();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < xd.size(); ++i) {
      const double v = xd[i];
      const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx[i] += static_cast<T>(g[i] * (cdf + v * pdf));
    }
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.empty()) throw DimensionError("softmax: scalar input");
  const std::size_t n = s.back();
  const std::size_t rows = x.value().size() / n;
  Tensor<T> out(s);
  const auto xd = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xd.data() + r * n;
    T* o = out.data().data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  Tensor<T> y = out;
  return x.tape().record(std::move(out), {x},
                         [x, n, rows, y = std::move(y)](Tape<T>& tape, const Tensor<T>& g) {
    auto gx = tape.grad(x).data();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = T(0);
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const std::optional<Var<T>>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws.size() != 2 || xs.empty() || xs.back() != ws[1]) {
    throw DimensionError("linear: input " + shape_str(xs) + " incompatible with weight " +
                         shape_str(ws));
  }
  if (bias && bias->shape() != Shape{ws[0]}) {
    throw DimensionError("linear: bias shape " + shape_str(bias->shape()) + " for weight " +
                         shape_str(ws));
  }
  const std::size_t in = ws[1], outf = ws[0];
  const std::size_t rows = x.value().size() / in;
  Shape os = xs;
  os.back() = outf;
  Tensor<T> out(os);
  const T* xd = x.value().data().data();
  const T* wd = weight.value().data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xd + r * in;
    T* orow = out.data().data() + r * outf;
    for (std::size_t o = 0; o < outf; ++o) {
      const T* wr = wd + o * in;
      T acc = bias ? bias->value()[o] : T(0);
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      orow[o] = acc;
    }
  }
  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return x.tape().record(std::move(out), inputs, [=](Tape<T>& tape, const Tensor<T>& g) {
    const T* gd = g.data().data();
    const T* xd = x.value().data().data();
    const T* wd = weight.value().data().data();
    if (x.requires_grad()) {
      T* gx = tape.grad(x).data().data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < outf; ++o) {
          const T go = gd[r * outf + o];
          const T* wr = wd + o * in;
          for (std::size_t i = 0; i < in; ++i) gx[r * in + i] += go * wr[i];
        }
      }
    }
    if (weight.requires_grad()) {
      T* gw = tape.grad(weight).data().data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < outf; ++o) {
          const T go = gd[r * outf + o];
          T* wr = gw + o * in;
          for (std::size_t i = 0; i < in; ++i) wr[i] += go * xd[r * in + i];
        }
      }
    }
    if (bias && bias->requires_grad()) {
      auto gb = tape.grad(*bias).data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < outf; ++o) gb[o] += gd[r * outf + o];
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps) {
  const Shape& s = x.shape();
  if (s.empty() || gamma.shape() != Shape{s.back()} || beta.shape() != Shape{s.back()}) {
    throw DimensionError("layer_norm: input " + shape_str(s) + " vs scale " + shape_str(gamma.shape()));
  }
  const std::size_t n = s.back();
  const std::size_t rows = x.value().size() / n;
  Tensor<T> out(s);
  Tensor<T> xhat(s);
  std::vector<T> rstd(rows);
  const auto xd = x.value().data();
  const auto gd = gamma.value().data();
  const auto bd = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += xd[r * n + j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T d = xd[r * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<T>(n);
    rstd[r] = T(1) / std::sqrt(var + static_cast<T>(eps));
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (xd[r * n + j] - mu) * rstd[r];
      xhat[r * n + j] = h;
      out[r * n + j] = gd[j] * h + bd[j];
    }
  }
  return x.tape().record(std::move(out), {x, gamma, beta},
                         [x, gamma, beta, n, rows, xhat = std::move(xhat),
                          rstd = std::move(rstd)](Tape<T>& tape, const Tensor<T>& g) {
    const auto gm = gamma.value().data();
    if (gamma.requires_grad() || beta.requires_grad()) {
      auto gg = tape.grad(gamma).data();
      auto gb = tape.grad(beta).data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) {
          gg[j] += g[r * n + j] * xhat[r * n + j];
          gb[j] += g[r * n + j];
        }
      }
    }
    if (x.requires_grad()) {
      auto gx = tape.grad(x).data();
      const T inv_n = T(1) / static_cast<T>(n);
      for (std::size_t r = 0; r < rows; ++r) {
        T sum_d = T(0), sum_dh = T(0);
        for (std::size_t j = 0; j < n; ++j) {
          const T d = g[r * n + j] * gm[j];
          sum_d += d;
          sum_dh += d * xhat[r * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const T d = g[r * n + j] * gm[j];
          gx[r * n + j] += rstd[r] * (d - inv_n * sum_d - xhat[r * n + j] * inv_n * sum_dh);
        }
      }
    }
  });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, double eps, double momentum, bool training) {
  const Shape& s = x.shape();
  if (s.size() != 3 || gamma.shape() != Shape{s[1]} || beta.shape() != Shape{s[1]} ||
      running_mean.shape() != Shape{s[1]} || running_var.shape() != Shape{s[1]}) {
    throw DimensionError("batch_norm: input " + shape_str(s) + " vs features " +
                         shape_str(gamma.shape()));
  }
  const std::size_t batch = s[0], ch = s[1], len = s[2];
  const std::size_t count = batch * len;
  const auto xd = x.value().data();
  const auto gm = gamma.value().data();
  const auto bt = beta.value().data();
  std::vector<T> mean(ch), rstd(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    if (training) {
      T mu = T(0);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < len; ++t) mu += xd[(b * ch + c) * len + t];
      }
      mu /= static_cast<T>(count);
      T var = T(0);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < len; ++t) {
          const T d = xd[(b * ch + c) * len + t] - mu;
          var += d * d;
        }
      }
      const T biased = var / static_cast<T>(count);
      const T unbiased = count > 1 ? var / static_cast<T>(count - 1) : biased;
      const T m = static_cast<T>(momentum);
      running_mean[c] = (T(1) - m) * running_mean[c] + m * mu;
      running_var[c] = (T(1) - m) * running_var[c] + m * unbiased;
      mean[c] = mu;
      rstd[c] = T(1) / std::sqrt(biased + static_cast<T>(eps));
    } else {
      mean[c] = running_mean[c];
      rstd[c] = T(1) / std::sqrt(running_var[c] + static_cast<T>(eps));
    }
  }
  Tensor<T> out(s);
  Tensor<T> xhat(s);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t i = (b * ch + c) * len + t;
        xhat[i] = (xd[i] - mean[c]) * rstd[c];
        out[i] = gm[c] * xhat[i] + bt[c];
      }
    }
  }
  return x.tape().record(std::move(out), {x, gamma, beta},
                         [x, gamma, beta, batch, ch, len, count, training, xhat = std::move(xhat),
                          rstd = std::move(rstd)](Tape<T>& tape, const Tensor<T>& g) {
    const auto gm = gamma.value().data();
    std::vector<T> sum_g(ch, T(0)), sum_gh(ch, T(0));
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t t = 0; t < len; ++t) {
          const std::size_t i = (b * ch + c) * len + t;
          sum_g[c] += g[i];
          sum_gh[c] += g[i] * xhat[i];
        }
      }
    }
    if (gamma.requires_grad()) {
      auto gg = tape.grad(gamma).data();
      for (std::size_t c = 0; c < ch; ++c) gg[c] += sum_gh[c];
    }
    if (beta.requires_grad()) {
      auto gb = tape.grad(beta).data();
      for (std::size_t c = 0; c < ch; ++c) gb[c] += sum_g[c];
    }
    if (!x.requires_grad()) return;
    auto gx = tape.grad(x).data();
    const T inv_n = T(1) / static_cast<T>(count);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t t = 0; t < len; ++t) {
          const std::size_t i = (b * ch + c) * len + t;
          if (training) {
            gx[i] += gm[c] * rstd[c] * (g[i] - inv_n * sum_g[c] - xhat[i] * inv_n * sum_gh[c]);
          } else {
            gx[i] += gm[c] * rstd[c] * g[i];
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> dropout(const Var<T>& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout: rate must be < 1");
  Tensor<T> mask(x.shape());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (T& m : mask.data()) m = rng.uniform() < rate ? T(0) : keep_scale;
  return mul(x, x.tape().constant(std::move(mask)));
}

template <typename T>
Var<T> prepend_token(const Var<T>& tokens, const Var<T>& cls) {
  const Shape& s = tokens.shape();
  if (s.size() != 3 || cls.shape() != Shape{1, s[2]}) {
    throw DimensionError("prepend_token: tokens " + shape_str(s) + " vs class token " +
                         shape_str(cls.shape()));
  }
  const std::size_t batch = s[0], len = s[1], d = s[2];
  Tensor<T> out({batch, len + 1, d});
  const auto td = tokens.value().data();
  const auto cd = cls.value().data();
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(cd.begin(), d, out.data().begin() + b * (len + 1) * d);
    std::copy_n(td.begin() + b * len * d, len * d, out.data().begin() + (b * (len + 1) + 1) * d);
  }
  return tokens.tape().record(std::move(out), {tokens, cls},
                              [tokens, cls, batch, len, d](Tape<T>& tape, const Tensor<T>& g) {
    if (tokens.requires_grad()) {
      auto gt = tape.grad(tokens).data();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < len * d; ++i) gt[b * len * d + i] += g[(b * (len + 1) + 1) * d + i];
      }
    }
    if (cls.requires_grad()) {
      auto gc = tape.grad(cls).data();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < d; ++i) gc[i] += g[b * (len + 1) * d + i];
      }
    }
  });
}

#define UMSNET_INSTANTIATE_FUNCTIONAL(T)                                                        \
  template Var<T> conv1d(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&,            \
                         const Conv1dSpec&);                                                    \
  template Var<T> gelu(const Var<T>&);                                                          \
  template Var<T> softmax(const Var<T>&);                                                       \
  template Var<T> linear(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&);           \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, double);              \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&,          \
                             Tensor<T>&, double, double, bool);                                 \
  template Var<T> dropout(const Var<T>&, double, Rng&);                                         \
  template Var<T> prepend_token(const Var<T>&, const Var<T>&);

UMSNET_INSTANTIATE_FUNCTIONAL(float)
UMSNET_INSTANTIATE_FUNCTIONAL(double)

}  // namespace umsnet
