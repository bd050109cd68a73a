#include "sliceforge/layers.hpp"

#include <cmath>
#include <string>

#include "sliceforge/rng.hpp"

namespace sliceforge {

namespace {

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.rank() != rank) {
    throw InvalidArgument(std::string(what) + " expects rank-" + std::to_string(rank) +
                          " input, got " + s.to_string());
  }
}

template <typename T>
BasicTensor<T> from_accumulator(const Shape& shape, const std::vector<double>& acc) {
  std::vector<T> values(acc.begin(), acc.end());
  return BasicTensor<T>(shape, std::move(values));
}

}  // namespace

std::size_t conv_output_size(std::size_t in, std::size_t kernel, int stride, Padding padding) {
  if (kernel % 2 == 0) throw InvalidArgument("kernel size must be odd");
  if (stride != 1 && stride != 2) throw InvalidArgument("stride must be 1 or 2");
  const std::size_t s = static_cast<std::size_t>(stride);
  if (padding == Padding::kSame) return (in - 1) / s + 1;
  if (in < kernel) throw InvalidArgument("input smaller than kernel under valid padding");
  return (in - kernel) / s + 1;
}

template <typename T>
void validate_sepconv(const SepConvParams<T>& p) {
  const Shape& dw = p.depthwise.shape();
  const Shape& pw = p.pointwise.shape();
  if (dw.rank() != 4 || dw[1] != 1) throw InvalidArgument("depthwise kernel must be [C_in,1,k,k]");
  if (dw[2] % 2 == 0 || dw[3] % 2 == 0) throw InvalidArgument("kernel size must be odd");
  if (pw.rank() != 4 || pw[2] != 1 || pw[3] != 1) {
    throw InvalidArgument("pointwise kernel must be [C_out,C_in,1,1]");
  }
  if (pw[1] != dw[0]) throw InvalidArgument("pointwise C_in does not match depthwise channels");
  if (p.bias.shape() != Shape{pw[0]}) throw InvalidArgument("bias must be [C_out]");
  if (p.stride != 1 && p.stride != 2) throw InvalidArgument("stride must be 1 or 2");
}

template <typename T>
LayerResult<T, SepConvCache<T>> sepconv2d(const BasicTensor<T>& x, const SepConvParams<T>& p) {
  validate_sepconv(p);
  require_rank(x.shape(), 4, "sepconv2d");
  const std::size_t n_batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (cin != p.depthwise.dim(0)) {
    throw InvalidArgument("sepconv2d channel mismatch: input has " + std::to_string(cin) +
                          ", kernel expects " + std::to_string(p.depthwise.dim(0)));
  }
  const std::size_t kh = p.depthwise.dim(2), kw = p.depthwise.dim(3);
  const std::size_t cout = p.pointwise.dim(0);
  const std::size_t oh = conv_output_size(h, kh, p.stride, p.padding);
  const std::size_t ow = conv_output_size(w, kw, p.stride, p.padding);
  const std::ptrdiff_t pad_h = p.padding == Padding::kSame ? static_cast<std::ptrdiff_t>(kh / 2) : 0;
  const std::ptrdiff_t pad_w = p.padding == Padding::kSame ? static_cast<std::ptrdiff_t>(kw / 2) : 0;
  const auto stride = static_cast<std::ptrdiff_t>(p.stride);

  BasicTensor<T> mid(Shape{n_batch, cin, oh, ow});
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < cin; ++c) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (std::size_t a = 0; a < kh; ++a) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i) * stride - pad_h +
                                     static_cast<std::ptrdiff_t>(a);
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t b = 0; b < kw; ++b) {
              const std::ptrdiff_t z = static_cast<std::ptrdiff_t>(j) * stride - pad_w +
                                       static_cast<std::ptrdiff_t>(b);
              if (z < 0 || z >= static_cast<std::ptrdiff_t>(w)) continue;
              acc += static_cast<double>(x.at(n, c, static_cast<std::size_t>(y),
                                              static_cast<std::size_t>(z))) *
                     static_cast<double>(p.depthwise.at(c, 0, a, b));
            }
          }
          mid.at(n, c, i, j) = static_cast<T>(acc);
        }
      }
    }
  }

  BasicTensor<T> out(Shape{n_batch, cout, oh, ow});
  const std::size_t plane = oh * ow;
  std::vector<double> acc(plane);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      std::fill(acc.begin(), acc.end(), static_cast<double>(p.bias[o]));
      for (std::size_t c = 0; c < cin; ++c) {
        const double wgt = static_cast<double>(p.pointwise[o * cin + c]);
        const T* src = &mid.at(n, c, 0, 0);
        for (std::size_t q = 0; q < plane; ++q) acc[q] += wgt * static_cast<double>(src[q]);
      }
      T* dst = &out.at(n, o, 0, 0);
      for (std::size_t q = 0; q < plane; ++q) dst[q] = static_cast<T>(acc[q]);
    }
  }
  return {std::move(out), SepConvCache<T>{x, std::move(mid)}};
}

template <typename T>
SepConvGrads<T> sepconv2d_backward(const BasicTensor<T>& grad_out, const SepConvParams<T>& p,
                                   const SepConvCache<T>& cache) {
  const BasicTensor<T>& x = cache.input;
  const BasicTensor<T>& mid = cache.depthwise_out;
  const std::size_t n_batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t kh = p.depthwise.dim(2), kw = p.depthwise.dim(3);
  const std::size_t cout = p.pointwise.dim(0);
  const std::size_t oh = mid.dim(2), ow = mid.dim(3), plane = oh * ow;
  if (grad_out.shape() != Shape{n_batch, cout, oh, ow}) {
    throw InvalidArgument("sepconv2d_backward gradient shape mismatch");
  }
  const std::ptrdiff_t pad_h = p.padding == Padding::kSame ? static_cast<std::ptrdiff_t>(kh / 2) : 0;
  const std::ptrdiff_t pad_w = p.padding == Padding::kSame ? static_cast<std::ptrdiff_t>(kw / 2) : 0;
  const auto stride = static_cast<std::ptrdiff_t>(p.stride);

  std::vector<double> d_bias(cout, 0.0), d_pointwise(cout * cin, 0.0);
  std::vector<double> d_mid(n_batch * cin * plane, 0.0);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      const T* g = &grad_out.at(n, o, 0, 0);
      double bias_acc = 0.0;
      for (std::size_t q = 0; q < plane; ++q) bias_acc += static_cast<double>(g[q]);
      d_bias[o] += bias_acc;
      for (std::size_t c = 0; c < cin; ++c) {
        const T* m = &mid.at(n, c, 0, 0);
        const double wgt = static_cast<double>(p.pointwise[o * cin + c]);
        double* dm = &d_mid[(n * cin + c) * plane];
        double acc = 0.0;
        for (std::size_t q = 0; q < plane; ++q) {
          acc += static_cast<double>(g[q]) * static_cast<double>(m[q]);
          dm[q] += wgt * static_cast<double>(g[q]);
        }
        d_pointwise[o * cin + c] += acc;
      }
    }
  }

  std::vector<double> d_depthwise(cin * kh * kw, 0.0), d_input(x.size(), 0.0);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < cin; ++c) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          const double g = d_mid[(n * cin + c) * plane + i * ow + j];
          for (std::size_t a = 0; a < kh; ++a) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i) * stride - pad_h +
                                     static_cast<std::ptrdiff_t>(a);
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t b = 0; b < kw; ++b) {
              const std::ptrdiff_t z = static_cast<std::ptrdiff_t>(j) * stride - pad_w +
                                       static_cast<std::ptrdiff_t>(b);
              if (z < 0 || z >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t xi = ((n * cin + c) * h + static_cast<std::size_t>(y)) * w +
                                     static_cast<std::size_t>(z);
              d_depthwise[(c * kh + a) * kw + b] += g * static_cast<double>(x[xi]);
              d_input[xi] += g * static_cast<double>(p.depthwise.at(c, 0, a, b));
            }
          }
        }
      }
    }
  }

  return SepConvGrads<T>{from_accumulator<T>(x.shape(), d_input),
                         from_accumulator<T>(p.depthwise.shape(), d_depthwise),
                         from_accumulator<T>(p.pointwise.shape(), d_pointwise),
                         from_accumulator<T>(p.bias.shape(), d_bias)};
}

// ---------------------------------------------------------------------------

template <typename T>
BatchNormParams<T> make_batchnorm(std::size_t channels, double momentum, double epsilon) {
  if (!(momentum > 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must be in (0,1)");
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
  return BatchNormParams<T>{BasicTensor<T>(Shape{channels}, T{1}),
                            BasicTensor<T>(Shape{channels}, T{0}),
                            BasicTensor<T>(Shape{channels}, T{0}),
                            BasicTensor<T>(Shape{channels}, T{1}), momentum, epsilon};
}

template <typename T>
LayerResult<T, BatchNormCache<T>> batchnorm(const BasicTensor<T>& x, const BatchNormParams<T>& p,
                                            Mode mode) {
  require_rank(x.shape(), 4, "batchnorm");
  const std::size_t n_batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (p.gamma.shape() != Shape{channels} || p.beta.shape() != Shape{channels} ||
      p.running_mean.shape() != Shape{channels} || p.running_var.shape() != Shape{channels}) {
    throw InvalidArgument("batchnorm parameter shapes do not match channel count");
  }
  const std::size_t count = n_batch * plane;
  if (mode == Mode::kTrain && count < 2) {
    throw InvalidArgument("batchnorm train mode needs at least 2 values per channel");
  }

  BatchNormCache<T> cache;
  cache.mode = mode;
  cache.inv_std.resize(channels);
  if (mode == Mode::kTrain) {
    cache.batch_mean.assign(channels, 0.0);
    cache.batch_var.assign(channels, 0.0);
  }
  for (std::size_t c = 0; c < channels; ++c) {
    double mean, var;
    if (mode == Mode::kTrain) {
      double sum = 0.0;
      for (std::size_t n = 0; n < n_batch; ++n) {
        const T* src = &x.at(n, c, 0, 0);
        for (std::size_t q = 0; q < plane; ++q) sum += static_cast<double>(src[q]);
      }
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < n_batch; ++n) {
        const T* src = &x.at(n, c, 0, 0);
        for (std::size_t q = 0; q < plane; ++q) {
          const double d = static_cast<double>(src[q]) - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(count);
      cache.batch_mean[c] = mean;
      cache.batch_var[c] = var;
    } else {
      mean = static_cast<double>(p.running_mean[c]);
      var = static_cast<double>(p.running_var[c]);
    }
    cache.inv_std[c] = 1.0 / std::sqrt(var + p.epsilon);
  }

  BasicTensor<T> normalized(x.shape()), out(x.shape());
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double mean = mode == Mode::kTrain ? cache.batch_mean[c]
                                               : static_cast<double>(p.running_mean[c]);
      const double inv = cache.inv_std[c];
      const double g = static_cast<double>(p.gamma[c]), b = static_cast<double>(p.beta[c]);
      const T* src = &x.at(n, c, 0, 0);
      T* nrm = &normalized.at(n, c, 0, 0);
      T* dst = &out.at(n, c, 0, 0);
      for (std::size_t q = 0; q < plane; ++q) {
        const double xh = (static_cast<double>(src[q]) - mean) * inv;
        nrm[q] = static_cast<T>(xh);
        dst[q] = static_cast<T>(g * xh + b);
      }
    }
  }
  cache.normalized = std::move(normalized);
  return {std::move(out), std::move(cache)};
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>& grad_out, const BatchNormParams<T>& p,
                                     const BatchNormCache<T>& cache) {
  const BasicTensor<T>& xh = cache.normalized;
  if (grad_out.shape() != xh.shape()) throw InvalidArgument("batchnorm_backward shape mismatch");
  const std::size_t n_batch = xh.dim(0), channels = xh.dim(1), plane = xh.dim(2) * xh.dim(3);
  const double count = static_cast<double>(n_batch * plane);

  std::vector<double> d_gamma(channels, 0.0), d_beta(channels, 0.0);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T* g = &grad_out.at(n, c, 0, 0);
      const T* nrm = &xh.at(n, c, 0, 0);
      for (std::size_t q = 0; q < plane; ++q) {
        d_beta[c] += static_cast<double>(g[q]);
        d_gamma[c] += static_cast<double>(g[q]) * static_cast<double>(nrm[q]);
      }
    }
  }

  BasicTensor<T> d_input(xh.shape());
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double scale = static_cast<double>(p.gamma[c]) * cache.inv_std[c];
      const T* g = &grad_out.at(n, c, 0, 0);
      const T* nrm = &xh.at(n, c, 0, 0);
      T* dst = &d_input.at(n, c, 0, 0);
      if (cache.mode == Mode::kTrain) {
        const double mean_g = d_beta[c] / count, mean_gx = d_gamma[c] / count;
        for (std::size_t q = 0; q < plane; ++q) {
          dst[q] = static_cast<T>(scale * (static_cast<double>(g[q]) - mean_g -
                                           static_cast<double>(nrm[q]) * mean_gx));
        }
      } else {
        for (std::size_t q = 0; q < plane; ++q) {
          dst[q] = static_cast<T>(scale * static_cast<double>(g[q]));
        }
      }
    }
  }
  return BatchNormGrads<T>{std::move(d_input), from_accumulator<T>(p.gamma.shape(), d_gamma),
                           from_accumulator<T>(p.beta.shape(), d_beta)};
}

template <typename T>
void update_running_stats(BatchNormParams<T>& p, const BatchNormCache<T>& cache) {
  if (cache.mode != Mode::kTrain) return;
  const double m = p.momentum;
  const double prev_weight = 1.0 - std::pow(m, static_cast<double>(p.updates));
  ++p.updates;
  const double norm = 1.0 - std::pow(m, static_cast<double>(p.updates));
  for (std::size_t c = 0; c < cache.batch_mean.size(); ++c) {
    const double mean = static_cast<double>(p.running_mean[c]);
    const double var = static_cast<double>(p.running_var[c]);
    p.running_mean[c] =
        static_cast<T>((m * prev_weight * mean + (1.0 - m) * cache.batch_mean[c]) / norm);
    p.running_var[c] =
        static_cast<T>((m * prev_weight * var + (1.0 - m) * cache.batch_var[c]) / norm);
  }
}

// ---------------------------------------------------------------------------

template <typename T>
LayerResult<T, ReluCache<T>> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  return {std::move(out), ReluCache<T>{x}};
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const ReluCache<T>& cache) {
  if (grad_out.shape() != cache.input.shape()) throw InvalidArgument("relu_backward shape mismatch");
  BasicTensor<T> dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = cache.input[i] > T{0} ? grad_out[i] : T{0};
  return dx;
}

template <typename T>
LayerResult<T, PoolCache> global_avg_pool(const BasicTensor<T>& x) {
  require_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t n_batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  BasicTensor<T> out(Shape{n_batch, channels});
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T* src = &x.at(n, c, 0, 0);
      double sum = 0.0;
      for (std::size_t q = 0; q < plane; ++q) sum += static_cast<double>(src[q]);
      out[n * channels + c] = static_cast<T>(sum / static_cast<double>(plane));
    }
  }
  return {std::move(out), PoolCache{x.shape()}};
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& grad_out, const PoolCache& cache) {
  const Shape& s = cache.input_shape;
  const std::size_t n_batch = s[0], channels = s[1], plane = s[2] * s[3];
  if (grad_out.shape() != Shape{n_batch, channels}) {
    throw InvalidArgument("global_avg_pool_backward shape mismatch");
  }
  BasicTensor<T> dx(s);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T share = static_cast<T>(static_cast<double>(grad_out[n * channels + c]) /
                                     static_cast<double>(plane));
      T* dst = &dx.at(n, c, 0, 0);
      for (std::size_t q = 0; q < plane; ++q) dst[q] = share;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

template <typename T>
LayerResult<T, DenseCache<T>> dense(const BasicTensor<T>& x, const DenseParams<T>& p) {
  require_rank(x.shape(), 2, "dense");
  if (p.weight.shape().rank() != 2) throw InvalidArgument("dense weight must be [out,in]");
  const std::size_t n_batch = x.dim(0), in = x.dim(1), out_dim = p.weight.dim(0);
  if (p.weight.dim(1) != in) {
    throw InvalidArgument("dense input dim " + std::to_string(in) + " does not match weight " +
                          p.weight.shape().to_string());
  }
  if (p.bias.shape() != Shape{out_dim}) throw InvalidArgument("dense bias must be [out]");
  BasicTensor<T> out(Shape{n_batch, out_dim});
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      double acc = static_cast<double>(p.bias[o]);
      for (std::size_t i = 0; i < in; ++i) {
        acc += static_cast<double>(x[n * in + i]) * static_cast<double>(p.weight[o * in + i]);
      }
      out[n * out_dim + o] = static_cast<T>(acc);
    }
  }
  return {std::move(out), DenseCache<T>{x}};
}

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& grad_out, const DenseParams<T>& p,
                             const DenseCache<T>& cache) {
  const BasicTensor<T>& x = cache.input;
  const std::size_t n_batch = x.dim(0), in = x.dim(1), out_dim = p.weight.dim(0);
  if (grad_out.shape() != Shape{n_batch, out_dim}) {
    throw InvalidArgument("dense_backward shape mismatch");
  }
  std::vector<double> dx(n_batch * in, 0.0), dw(out_dim * in, 0.0), db(out_dim, 0.0);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double g = static_cast<double>(grad_out[n * out_dim + o]);
      db[o] += g;
      for (std::size_t i = 0; i < in; ++i) {
        dw[o * in + i] += g * static_cast<double>(x[n * in + i]);
        dx[n * in + i] += g * static_cast<double>(p.weight[o * in + i]);
      }
    }
  }
  return DenseGrads<T>{from_accumulator<T>(x.shape(), dx),
                       from_accumulator<T>(p.weight.shape(), dw),
                       from_accumulator<T>(p.bias.shape(), db)};
}

// ---------------------------------------------------------------------------

template <typename T>
LayerResult<T, DropoutCache<T>> dropout(const BasicTensor<T>& x, double rate, Mode mode,
                                        const RngContext& rng, std::uint64_t layer_index) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("dropout rate must be in [0,1)");
  BasicTensor<T> mask(x.shape(), T{1});
  if (mode == Mode::kTrain && rate > 0.0) {
    const std::size_t n_batch = x.dim(0);
    const std::size_t per_sample = x.size() / n_batch;
    if (!rng.sample_indices.empty() && rng.sample_indices.size() != n_batch) {
      throw InvalidArgument("dropout needs one sample index per batch row");
    }
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (std::size_t n = 0; n < n_batch; ++n) {
      const std::uint64_t sample = rng.sample_indices.empty() ? n : rng.sample_indices[n];
      RngStream stream{stream_tag::kDropout, rng.seed, rng.epoch, sample, layer_index};
      for (std::size_t q = 0; q < per_sample; ++q) {
        mask[n * per_sample + q] = stream.uniform() < rate ? T{0} : keep_scale;
      }
    }
  }
  return dropout_with_mask(x, mask);
}

template <typename T>
LayerResult<T, DropoutCache<T>> dropout_with_mask(const BasicTensor<T>& x,
                                                  const BasicTensor<T>& mask) {
  if (mask.shape() != x.shape()) throw InvalidArgument("dropout mask shape mismatch");
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
  return {std::move(out), DropoutCache<T>{mask}};
}

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& grad_out, const DropoutCache<T>& cache) {
  if (grad_out.shape() != cache.mask.shape()) throw InvalidArgument("dropout_backward shape mismatch");
  BasicTensor<T> dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = grad_out[i] * cache.mask[i];
  return dx;
}

// ---------------------------------------------------------------------------

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T{0}) {
    const T z = std::exp(-x);
    return T{1} / (T{1} + z);
  }
  const T z = std::exp(x);
  return z / (T{1} + z);
}

template <typename T>
LayerResult<T, SigmoidCache<T>> sigmoid(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = stable_sigmoid(x[i]);
  SigmoidCache<T> cache{out};
  return {std::move(out), std::move(cache)};
}

template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& grad_out, const SigmoidCache<T>& cache) {
  if (grad_out.shape() != cache.output.shape()) throw InvalidArgument("sigmoid_backward shape mismatch");
  BasicTensor<T> dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const T s = cache.output[i];
    dx[i] = grad_out[i] * s * (T{1} - s);
  }
  return dx;
}

#define SLICEFORGE_INSTANTIATE_LAYERS(T)                                                        \
  template void validate_sepconv(const SepConvParams<T>&);                                      \
  template LayerResult<T, SepConvCache<T>> sepconv2d(const BasicTensor<T>&,                     \
                                                     const SepConvParams<T>&);                  \
  template SepConvGrads<T> sepconv2d_backward(const BasicTensor<T>&, const SepConvParams<T>&,   \
                                              const SepConvCache<T>&);                          \
  template BatchNormParams<T> make_batchnorm<T>(std::size_t, double, double);                   \
  template LayerResult<T, BatchNormCache<T>> batchnorm(const BasicTensor<T>&,                   \
                                                       const BatchNormParams<T>&, Mode);        \
  template BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>&, const BatchNormParams<T>&, \
                                                const BatchNormCache<T>&);                      \
  template void update_running_stats(BatchNormParams<T>&, const BatchNormCache<T>&);            \
  template LayerResult<T, ReluCache<T>> relu(const BasicTensor<T>&);                            \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const ReluCache<T>&);            \
  template LayerResult<T, PoolCache> global_avg_pool(const BasicTensor<T>&);                    \
  template BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>&, const PoolCache&);    \
  template LayerResult<T, DenseCache<T>> dense(const BasicTensor<T>&, const DenseParams<T>&);   \
  template DenseGrads<T> dense_backward(const BasicTensor<T>&, const DenseParams<T>&,           \
                                        const DenseCache<T>&);                                  \
  template LayerResult<T, DropoutCache<T>> dropout(const BasicTensor<T>&, double, Mode,         \
                                                   const RngContext&, std::uint64_t);           \
  template LayerResult<T, DropoutCache<T>> dropout_with_mask(const BasicTensor<T>&,             \
                                                             const BasicTensor<T>&);            \
  template BasicTensor<T> dropout_backward(const BasicTensor<T>&, const DropoutCache<T>&);      \
  template T stable_sigmoid(T);                                                                 \
  template LayerResult<T, SigmoidCache<T>> sigmoid(const BasicTensor<T>&);                      \
  template BasicTensor<T> sigmoid_backward(const BasicTensor<T>&, const SigmoidCache<T>&);

SLICEFORGE_INSTANTIATE_LAYERS(float)
SLICEFORGE_INSTANTIATE_LAYERS(double)

#undef SLICEFORGE_INSTANTIATE_LAYERS

}  // namespace sliceforge
