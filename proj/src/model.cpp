#include "sliceforge/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "sliceforge/rng.hpp"

namespace sliceforge {

void ModelConfig::validate() const {
  if (input_height == 0 || input_width == 0 || input_channels == 0) {
    throw InvalidArgument("input dimensions must be positive");
  }
  if (channel_plan.size() != kNumBlocks) {
    throw InvalidArgument("channel_plan must have exactly 9 entries, got " +
                          std::to_string(channel_plan.size()));
  }
  if (stride_plan.size() != kNumBlocks) {
    throw InvalidArgument("stride_plan must have exactly 9 entries, got " +
                          std::to_string(stride_plan.size()));
  }
  for (std::size_t c : channel_plan) {
    if (c == 0) throw InvalidArgument("channel_plan entries must be positive");
  }
  for (int s : stride_plan) {
    if (s != 1 && s != 2) throw InvalidArgument("stride_plan entries must be 1 or 2");
  }
  if (kernel == 0 || kernel % 2 == 0) throw InvalidArgument("kernel must be odd and positive");
  if (hidden_units == 0) throw InvalidArgument("hidden_units must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw InvalidArgument("dropout_rate must be in [0,1)");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("threshold must be in (0,1)");
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) throw InvalidArgument("bn_momentum must be in (0,1)");
  if (!(bn_epsilon > 0.0)) throw InvalidArgument("bn_epsilon must be positive");
  // A stride-2 stage applied to a 1-pixel extent would halve it below one pixel.
  std::size_t h = input_height, w = input_width;
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    if (stride_plan[b] == 2 && (h < 2 || w < 2)) {
      throw InvalidArgument("stride plan collapses the spatial size at block " + std::to_string(b));
    }
    h = conv_output_size(h, kernel, stride_plan[b], Padding::kSame);
    w = conv_output_size(w, kernel, stride_plan[b], Padding::kSame);
  }
}

std::pair<std::size_t, std::size_t> ModelConfig::block_output_size(std::size_t b) const {
  if (b >= kNumBlocks) throw InvalidArgument("block index out of range");
  std::size_t h = input_height, w = input_width;
  for (std::size_t i = 0; i <= b; ++i) {
    h = conv_output_size(h, kernel, stride_plan[i], Padding::kSame);
    w = conv_output_size(w, kernel, stride_plan[i], Padding::kSame);
  }
  return {h, w};
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_height", c.input_height},
                     {"input_width", c.input_width},
                     {"input_channels", c.input_channels},
                     {"channel_plan", c.channel_plan},
                     {"stride_plan", c.stride_plan},
                     {"kernel", c.kernel},
                     {"hidden_units", c.hidden_units},
                     {"dropout_rate", c.dropout_rate},
                     {"threshold", c.threshold},
                     {"bn_momentum", c.bn_momentum},
                     {"bn_epsilon", c.bn_epsilon}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.input_height = j.value("input_height", d.input_height);
  c.input_width = j.value("input_width", d.input_width);
  c.input_channels = j.value("input_channels", d.input_channels);
  c.channel_plan = j.value("channel_plan", d.channel_plan);
  c.stride_plan = j.value("stride_plan", d.stride_plan);
  c.kernel = j.value("kernel", d.kernel);
  c.hidden_units = j.value("hidden_units", d.hidden_units);
  c.dropout_rate = j.value("dropout_rate", d.dropout_rate);
  c.threshold = j.value("threshold", d.threshold);
  c.bn_momentum = j.value("bn_momentum", d.bn_momentum);
  c.bn_epsilon = j.value("bn_epsilon", d.bn_epsilon);
}

// ---------------------------------------------------------------------------

template <typename T>
std::vector<BasicTensor<T>*> BasicModel<T>::trainable() {
  std::vector<BasicTensor<T>*> out;
  for (auto& b : blocks) {
    out.insert(out.end(), {&b.conv.depthwise, &b.conv.pointwise, &b.conv.bias, &b.norm.gamma,
                           &b.norm.beta});
  }
  out.insert(out.end(), {&hidden.weight, &hidden.bias, &output.weight, &output.bias});
  return out;
}

template <typename T>
std::vector<const BasicTensor<T>*> BasicModel<T>::trainable() const {
  std::vector<const BasicTensor<T>*> out;
  for (auto* t : const_cast<BasicModel*>(this)->trainable()) out.push_back(t);
  return out;
}

template <typename T>
std::vector<const BasicTensor<T>*> BasicModel<T>::stored() const {
  std::vector<const BasicTensor<T>*> out;
  for (const auto& b : blocks) {
    out.insert(out.end(), {&b.conv.depthwise, &b.conv.pointwise, &b.conv.bias, &b.norm.gamma,
                           &b.norm.beta, &b.norm.running_mean, &b.norm.running_var});
  }
  out.insert(out.end(), {&hidden.weight, &hidden.bias, &output.weight, &output.bias});
  return out;
}

template <typename T>
template <typename U>
BasicModel<U> BasicModel<T>::cast() const {
  BasicModel<U> m;
  m.config = config;
  for (const auto& b : blocks) {
    Block<U> nb;
    nb.conv = SepConvParams<U>{b.conv.depthwise.template cast<U>(),
                               b.conv.pointwise.template cast<U>(), b.conv.bias.template cast<U>(),
                               b.conv.stride, b.conv.padding};
    nb.norm = BatchNormParams<U>{b.norm.gamma.template cast<U>(), b.norm.beta.template cast<U>(),
                                 b.norm.running_mean.template cast<U>(),
                                 b.norm.running_var.template cast<U>(), b.norm.momentum,
                                 b.norm.epsilon, b.norm.updates};
    m.blocks.push_back(std::move(nb));
  }
  m.hidden = DenseParams<U>{hidden.weight.template cast<U>(), hidden.bias.template cast<U>()};
  m.output = DenseParams<U>{output.weight.template cast<U>(), output.bias.template cast<U>()};
  return m;
}

template struct BasicModel<float>;
template struct BasicModel<double>;
template BasicModel<double> BasicModel<float>::cast<double>() const;
template BasicModel<float> BasicModel<double>::cast<float>() const;
template BasicModel<float> BasicModel<float>::cast<float>() const;

namespace {

Tensor glorot(const Shape& shape, std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-limit, limit));
  return t;
}

}  // namespace

Model build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  const std::size_t k = config.kernel;
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    const std::size_t cin = config.block_input_channels(b), cout = config.channel_plan[b];
    RngStream rng{stream_tag::kInit, seed, b};
    Block<float> blk;
    // Each depthwise filter maps one channel to one channel over a k x k window.
    blk.conv.depthwise = glorot(Shape{cin, 1, k, k}, k * k, k * k, rng);
    blk.conv.pointwise = glorot(Shape{cout, cin, 1, 1}, cin, cout, rng);
    blk.conv.bias = Tensor(Shape{cout});
    blk.conv.stride = config.stride_plan[b];
    blk.conv.padding = Padding::kSame;
    blk.norm = make_batchnorm<float>(cout, config.bn_momentum, config.bn_epsilon);
    m.blocks.push_back(std::move(blk));
  }
  const std::size_t feat = config.channel_plan.back(), hid = config.hidden_units;
  RngStream rng{stream_tag::kInit, seed, kNumBlocks};
  m.hidden.weight = glorot(Shape{hid, feat}, feat, hid, rng);
  m.hidden.bias = Tensor(Shape{hid});
  m.output.weight = glorot(Shape{1, hid}, hid, 1, rng);
  m.output.bias = Tensor(Shape{1});
  return m;
}

std::size_t parameter_count(const ModelConfig& config) {
  config.validate();
  const std::size_t k2 = config.kernel * config.kernel;
  std::size_t total = 0;
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    const std::size_t cin = config.block_input_channels(b), cout = config.channel_plan[b];
    total += cin * k2 + cin * cout + cout + 4 * cout;
  }
  const std::size_t feat = config.channel_plan.back(), hid = config.hidden_units;
  total += hid * feat + hid + hid + 1;
  return total;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void check_input(const ModelConfig& c, const BasicTensor<T>& batch) {
  const Shape& s = batch.shape();
  if (s.rank() != 4 || s[1] != c.input_channels || s[2] != c.input_height ||
      s[3] != c.input_width) {
    throw InvalidArgument("batch shape " + s.to_string() + " does not match model input [N," +
                          std::to_string(c.input_channels) + "," + std::to_string(c.input_height) +
                          "," + std::to_string(c.input_width) + "]");
  }
}

/// Runs blocks 0..last, filling caches and activations.
template <typename T>
BasicTensor<T> run_blocks(const BasicModel<T>& model, BasicTensor<T> x, Mode mode,
                          std::size_t last, std::vector<BlockCache<T>>& caches,
                          std::vector<BasicTensor<T>>& activations) {
  for (std::size_t b = 0; b <= last; ++b) {
    const Block<T>& blk = model.blocks[b];
    auto conv = sepconv2d(x, blk.conv);
    auto norm = batchnorm(conv.output, blk.norm, mode);
    auto act = relu(norm.output);
    caches.push_back(BlockCache<T>{std::move(conv.cache), std::move(norm.cache),
                                   std::move(act.cache)});
    activations.push_back(act.output);
    x = std::move(act.output);
  }
  return x;
}

/// Propagates a gradient on the output of block `last` back to the input,
/// optionally collecting parameter gradients in trainable order.
template <typename T>
BasicTensor<T> backprop_blocks(const BasicModel<T>& model, const std::vector<BlockCache<T>>& caches,
                               std::size_t last, BasicTensor<T> grad,
                               std::vector<BasicTensor<T>>* param_grads) {
  for (std::size_t i = last + 1; i-- > 0;) {
    const Block<T>& blk = model.blocks[i];
    grad = relu_backward(grad, caches[i].act);
    auto gn = batchnorm_backward(grad, blk.norm, caches[i].norm);
    auto gc = sepconv2d_backward(gn.input, blk.conv, caches[i].conv);
    if (param_grads) {
      const std::size_t base = i * 5;
      (*param_grads)[base + 0] = std::move(gc.depthwise);
      (*param_grads)[base + 1] = std::move(gc.pointwise);
      (*param_grads)[base + 2] = std::move(gc.bias);
      (*param_grads)[base + 3] = std::move(gn.gamma);
      (*param_grads)[base + 4] = std::move(gn.beta);
    }
    grad = std::move(gc.input);
  }
  return grad;
}

}  // namespace

template <typename T>
ForwardPass<T> forward(const BasicModel<T>& model, const BasicTensor<T>& batch, Mode mode,
                       const RngContext& rng, const BasicTensor<T>* dropout_mask) {
  check_input(model.config, batch);
  ForwardPass<T> pass;
  BasicTensor<T> x = run_blocks(model, batch, mode, kNumBlocks - 1, pass.blocks, pass.activations);
  auto pooled = global_avg_pool(x);
  pass.pool = pooled.cache;
  auto hid = dense(pooled.output, model.hidden);
  pass.hidden = std::move(hid.cache);
  auto hid_act = relu(hid.output);
  pass.hidden_act = std::move(hid_act.cache);
  auto drop = dropout_mask ? dropout_with_mask(hid_act.output, *dropout_mask)
                           : dropout(hid_act.output, model.config.dropout_rate, mode, rng,
                                     kDropoutLayerIndex);
  pass.drop = std::move(drop.cache);
  auto out = dense(drop.output, model.output);
  pass.output = std::move(out.cache);
  const std::size_t n = batch.dim(0);
  pass.logits = out.output.reshaped(Shape{n});
  pass.probs = sigmoid(pass.logits).output;
  if (!pass.logits.all_finite()) throw NumericError("non-finite logits in forward pass");
  return pass;
}

template <typename T>
std::vector<BasicTensor<T>> backward(const BasicModel<T>& model, const ForwardPass<T>& pass,
                                     const BasicTensor<T>& grad_logits) {
  const std::size_t n = pass.logits.size();
  if (grad_logits.size() != n) throw InvalidArgument("grad_logits size mismatch");
  std::vector<BasicTensor<T>> grads(kNumBlocks * 5 + 4);
  auto g_out = dense_backward(grad_logits.reshaped(Shape{n, 1}), model.output, pass.output);
  grads[kNumBlocks * 5 + 2] = std::move(g_out.weight);
  grads[kNumBlocks * 5 + 3] = std::move(g_out.bias);
  BasicTensor<T> g = dropout_backward(g_out.input, pass.drop);
  g = relu_backward(g, pass.hidden_act);
  auto g_hid = dense_backward(g, model.hidden, pass.hidden);
  grads[kNumBlocks * 5 + 0] = std::move(g_hid.weight);
  grads[kNumBlocks * 5 + 1] = std::move(g_hid.bias);
  g = global_avg_pool_backward(g_hid.input, pass.pool);
  backprop_blocks(model, pass.blocks, kNumBlocks - 1, std::move(g), &grads);
  return grads;
}

template <typename T>
void apply_running_stats(BasicModel<T>& model, const ForwardPass<T>& pass) {
  for (std::size_t b = 0; b < pass.blocks.size(); ++b) {
    update_running_stats(model.blocks[b].norm, pass.blocks[b].norm);
  }
}

template ForwardPass<float> forward(const Model&, const Tensor&, Mode, const RngContext&,
                                    const Tensor*);
template ForwardPass<double> forward(const ModelD&, const TensorD&, Mode, const RngContext&,
                                     const TensorD*);
template std::vector<Tensor> backward(const Model&, const ForwardPass<float>&, const Tensor&);
template std::vector<TensorD> backward(const ModelD&, const ForwardPass<double>&, const TensorD&);
template void apply_running_stats(Model&, const ForwardPass<float>&);
template void apply_running_stats(ModelD&, const ForwardPass<double>&);

std::vector<int> predict_labels(const Tensor& probs, double threshold) {
  std::vector<int> labels(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    labels[i] = static_cast<double>(probs[i]) >= threshold ? 1 : 0;
  }
  return labels;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kModelMagic[4] = {'S', 'F', 'M', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  if (bytes.size() < offset + 4) throw IoError("truncated model file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

std::vector<std::size_t> expected_shape(const ModelConfig& c, std::size_t index) {
  const std::size_t per_block = 7;
  const std::size_t k = c.kernel;
  if (index < kNumBlocks * per_block) {
    const std::size_t b = index / per_block;
    const std::size_t cin = c.block_input_channels(b), cout = c.channel_plan[b];
    switch (index % per_block) {
      case 0: return {cin, 1, k, k};
      case 1: return {cout, cin, 1, 1};
      default: return {cout};
    }
  }
  switch (index - kNumBlocks * per_block) {
    case 0: return {c.hidden_units, c.channel_plan.back()};
    case 1: return {c.hidden_units};
    case 2: return {1, c.hidden_units};
    default: return {1};
  }
}

}  // namespace

void save_model(const std::filesystem::path& path, const Model& model) {
  std::vector<std::uint8_t> bytes(kModelMagic, kModelMagic + 4);
  put_u32(bytes, kModelFileVersion);
  nlohmann::json header = model.config;
  std::vector<std::uint64_t> updates;
  for (const auto& b : model.blocks) updates.push_back(b.norm.updates);
  header["bn_updates"] = updates;
  const std::string cfg = header.dump();
  put_u32(bytes, static_cast<std::uint32_t>(cfg.size()));
  bytes.insert(bytes.end(), cfg.begin(), cfg.end());
  for (const Tensor* t : model.stored()) {
    const auto rec = tensor_encode(*t);
    bytes.insert(bytes.end(), rec.begin(), rec.end());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kModelMagic, 4) != 0) {
    throw IoError("bad magic");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kModelFileVersion) {
    throw IoError("unsupported model file version " + std::to_string(version));
  }
  const std::uint32_t cfg_len = get_u32(bytes, 8);
  std::size_t offset = 12;
  if (bytes.size() - offset < cfg_len) throw IoError("truncated model config");
  ModelConfig config;
  std::vector<std::uint64_t> updates(kNumBlocks, 0);
  try {
    const auto header = nlohmann::json::parse(
        bytes.begin() + static_cast<std::ptrdiff_t>(offset),
        bytes.begin() + static_cast<std::ptrdiff_t>(offset + cfg_len));
    config = header.get<ModelConfig>();
    if (header.contains("bn_updates")) updates = header.at("bn_updates").get<std::vector<std::uint64_t>>();
    if (updates.size() != kNumBlocks) throw IoError("corrupt model config: bn_updates");
    config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt model config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("invalid model config: ") + e.what());
  }
  offset += cfg_len;

  Model model = build_model(config, 0);
  std::vector<Tensor*> slots;
  for (auto& b : model.blocks) {
    slots.insert(slots.end(), {&b.conv.depthwise, &b.conv.pointwise, &b.conv.bias, &b.norm.gamma,
                               &b.norm.beta, &b.norm.running_mean, &b.norm.running_var});
  }
  slots.insert(slots.end(), {&model.hidden.weight, &model.hidden.bias, &model.output.weight,
                             &model.output.bias});
  for (std::size_t i = 0; i < slots.size(); ++i) {
    Tensor t = tensor_decode(bytes, offset);
    if (t.shape().dims() != expected_shape(config, i)) {
      throw IoError("corrupt payload: tensor " + std::to_string(i) + " has shape " +
                    t.shape().to_string());
    }
    *slots[i] = std::move(t);
  }
  if (offset != bytes.size()) throw IoError("corrupt payload: trailing bytes");
  for (std::size_t b = 0; b < kNumBlocks; ++b) model.blocks[b].norm.updates = updates[b];
  for (const auto& b : model.blocks) {
    for (std::size_t c = 0; c < b.norm.running_var.size(); ++c) {
      if (b.norm.running_var[c] < 0.0f) throw IoError("corrupt payload: negative running variance");
    }
  }
  return model;
}

// ---------------------------------------------------------------------------

namespace {

void check_block_channel(const ModelConfig& c, std::size_t block, std::size_t channel) {
  if (block >= kNumBlocks) {
    throw InvalidArgument("block index " + std::to_string(block) + " out of range 0..8");
  }
  if (channel >= c.channel_plan[block]) {
    throw InvalidArgument("channel " + std::to_string(channel) + " out of range for block " +
                          std::to_string(block) + " with " + std::to_string(c.channel_plan[block]) +
                          " channels");
  }
}

Tensor channel_map(const Tensor& act, std::size_t channel) {
  const std::size_t h = act.dim(2), w = act.dim(3);
  Tensor out(Shape{h, w});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = act.at(0, channel, i, j);
  }
  return out;
}

}  // namespace

Tensor extract_activation(const Model& model, const Tensor& input, std::size_t block,
                          std::size_t channel) {
  check_block_channel(model.config, block, channel);
  check_input(model.config, input);
  if (input.dim(0) != 1) throw InvalidArgument("extract_activation expects a single input");
  std::vector<BlockCache<float>> caches;
  std::vector<Tensor> acts;
  const Tensor act = run_blocks(model, input, Mode::kInfer, block, caches, acts);
  return channel_map(act, channel);
}

MaximizeResult maximize_activation(const Model& model, std::size_t block, std::size_t channel,
                                   int steps, double step_size, std::uint64_t seed) {
  check_block_channel(model.config, block, channel);
  if (steps < 1) throw InvalidArgument("steps must be >= 1");
  const ModelConfig& c = model.config;
  Tensor x(Shape{1, c.input_channels, c.input_height, c.input_width});
  RngStream rng{stream_tag::kVisualize, seed, block, channel};
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.uniform());

  MaximizeResult result;
  for (int step = 0; step <= steps; ++step) {
    std::vector<BlockCache<float>> caches;
    std::vector<Tensor> acts;
    const Tensor act = run_blocks(model, x, Mode::kInfer, block, caches, acts);
    const std::size_t h = act.dim(2), w = act.dim(3);
    double objective = 0.0;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) objective += static_cast<double>(act.at(0, channel, i, j));
    }
    objective /= static_cast<double>(h * w);
    if (!std::isfinite(objective)) {
      throw NumericError("non-finite activation objective at step " + std::to_string(step));
    }
    result.objective_trace.push_back(objective);
    if (step == steps) break;

    Tensor grad(act.shape());
    const float share = static_cast<float>(1.0 / static_cast<double>(h * w));
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) grad.at(0, channel, i, j) = share;
    }
    const Tensor dx = backprop_blocks<float>(model, caches, block, std::move(grad), nullptr);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = static_cast<float>(static_cast<double>(x[i]) + step_size * static_cast<double>(dx[i]));
    }
    if (!x.all_finite()) throw NumericError("non-finite image at step " + std::to_string(step));
  }
  result.image = std::move(x);
  return result;
}

}  // namespace sliceforge
