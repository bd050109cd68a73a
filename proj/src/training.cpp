#include "sliceforge/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "sliceforge/rng.hpp"

namespace sliceforge {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(initial_lr > 0.0)) throw InvalidArgument("initial_lr must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw InvalidArgument("decay_factor must be in (0,1]");
  if (epochs == 0) throw InvalidArgument("epochs must be positive");
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (!(clip_value > 0.0)) throw InvalidArgument("clip_value must be positive");
  if (!(clip_norm > 0.0)) throw InvalidArgument("clip_norm must be positive");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"initial_lr", c.initial_lr}, {"decay_factor", c.decay_factor},
           {"epochs", c.epochs},         {"batch_size", c.batch_size},
           {"clip_value", c.clip_value}, {"clip_norm", c.clip_norm},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.initial_lr = j.value("initial_lr", d.initial_lr);
  c.decay_factor = j.value("decay_factor", d.decay_factor);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.clip_value = j.value("clip_value", d.clip_value);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.seed = j.value("seed", d.seed);
}

// ---------------------------------------------------------------------------

namespace {

std::string g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v + 0.0);
  return buf;
}

}  // namespace

std::string History::to_csv() const {
  std::ostringstream os;
  os << "epoch,lr,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& e : epochs) {
    os << e.epoch << ',' << g9(e.lr) << ',' << g9(e.train_loss) << ',' << g9(e.train_accuracy)
       << ',' << g9(e.val_loss) << ',' << g9(e.val_accuracy) << '\n';
  }
  return os.str();
}

void History::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write history " + path.string());
  out << to_csv();
  if (!out) throw IoError("write failed for " + path.string());
}

History History::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open history " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "epoch,lr,train_loss,train_acc,val_loss,val_acc") {
    throw IoError("bad history header in " + path.string());
  }
  History h;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochRecord e;
    char extra;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf%c", &e.epoch, &e.lr, &e.train_loss,
                    &e.train_accuracy, &e.val_loss, &e.val_accuracy, &extra) != 6) {
      throw IoError("malformed history row in " + path.string() + ": " + line);
    }
    h.epochs.push_back(e);
  }
  return h;
}

// ---------------------------------------------------------------------------

SampleSet load_samples(const DatasetManifest& manifest, const std::vector<std::string>& ids,
                       Granularity granularity) {
  std::unordered_map<std::string, std::pair<const SubjectRecord*, std::uint64_t>> index;
  std::uint64_t next = 0;
  for (const auto& s : manifest.subjects) {
    index.emplace(s.subject_id, std::make_pair(&s, next));
    next += s.slice_paths.size();
  }
  SampleSet set;
  set.intensity_ceiling = manifest.intensity_ceiling;
  auto add = [&](const SubjectRecord& s, std::uint64_t base, std::size_t k) {
    set.slices.push_back(tensor_read(manifest.slice_path(s, k)));
    set.labels.push_back(s.label);
    set.subject_ids.push_back(s.subject_id);
    set.sample_ids.push_back(base + k);
  };
  for (const auto& id : ids) {
    if (granularity == Granularity::kSubject) {
      auto it = index.find(id);
      if (it == index.end()) throw InvalidArgument("unknown subject id " + id);
      for (std::size_t k = 0; k < it->second.first->slice_paths.size(); ++k) {
        add(*it->second.first, it->second.second, k);
      }
    } else {
      const auto [subject, k] = parse_slice_key(id);
      auto it = index.find(subject);
      if (it == index.end()) throw InvalidArgument("unknown subject id " + subject);
      if (k >= it->second.first->slice_paths.size()) throw InvalidArgument("unknown slice " + id);
      add(*it->second.first, it->second.second, k);
    }
  }
  return set;
}

// ---------------------------------------------------------------------------

template <typename T>
BceResult<T> bce_loss(const BasicTensor<T>& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.size();
  if (labels.size() != n) throw InvalidArgument("bce_loss label count mismatch");
  BceResult<T> r;
  r.grad_logits = BasicTensor<T>(logits.shape());
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw InvalidArgument("bce_loss labels must be 0 or 1");
    const double z = static_cast<double>(logits[i]);
    if (!std::isfinite(z)) throw NumericError("non-finite logit in bce_loss");
    const double y = labels[i];
    sum += std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
    const double p = stable_sigmoid(z);
    r.grad_logits[i] = static_cast<T>((p - y) / static_cast<double>(n));
  }
  r.loss = sum / static_cast<double>(n);
  return r;
}

template BceResult<float> bce_loss(const Tensor&, const std::vector<int>&);
template BceResult<double> bce_loss(const TensorD&, const std::vector<int>&);

double global_norm(const std::vector<Tensor>& grads) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (float v : g.data()) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(sq);
}

void clip_gradients(std::vector<Tensor>& grads, double clip_value, double clip_norm) {
  const float hi = static_cast<float>(clip_value);
  for (auto& g : grads) {
    for (float& v : g.data()) {
      if (!std::isfinite(v)) throw NumericError("non-finite gradient");
      v = std::clamp(v, -hi, hi);
    }
  }
  const double norm = global_norm(grads);
  if (norm > clip_norm) {
    // float rounding can leave the product a hair above clip_norm; shrink the
    // scale until the stored collection satisfies the bound.
    double scale = clip_norm / norm;
    std::vector<Tensor> scaled;
    for (int attempt = 0; attempt < 8; ++attempt) {
      scaled = grads;
      for (auto& g : scaled) {
        for (float& v : g.data()) v = static_cast<float>(static_cast<double>(v) * scale);
      }
      if (global_norm(scaled) <= clip_norm) break;
      scale *= 1.0 - 1e-7;
    }
    grads = std::move(scaled);
  }
}

double lr_for_epoch(const TrainConfig& config, std::size_t epoch) {
  return config.initial_lr * std::pow(config.decay_factor, static_cast<double>(epoch));
}

void sgd_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr) {
  if (params.size() != grads.size()) throw InvalidArgument("sgd_step parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i];
    const Tensor& g = grads[i];
    if (w.shape() != g.shape()) {
      throw InvalidArgument("sgd_step shape mismatch: " + w.shape().to_string() + " vs " +
                            g.shape().to_string());
    }
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] = static_cast<float>(static_cast<double>(w[j]) - lr * static_cast<double>(g[j]));
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

Tensor stack_batch(const std::vector<Tensor>& slices, const std::vector<std::size_t>& order,
                   std::size_t begin, std::size_t end) {
  const std::size_t h = slices[order[begin]].dim(0), w = slices[order[begin]].dim(1);
  Tensor batch(Shape{end - begin, 1, h, w});
  for (std::size_t i = begin; i < end; ++i) {
    const Tensor& s = slices[order[i]];
    if (s.shape() != Shape{h, w}) throw InvalidArgument("inconsistent slice shapes in batch");
    std::copy(s.data().begin(), s.data().end(), batch.data().begin() + static_cast<std::ptrdiff_t>((i - begin) * h * w));
  }
  return batch;
}

std::size_t count_correct(const Tensor& probs, const std::vector<int>& labels, double threshold) {
  const auto pred = predict_labels(probs, threshold);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return correct;
}

}  // namespace

EvalResult evaluate(const Model& model, const SampleSet& data, double threshold, bool normalize,
                    std::size_t batch_size) {
  if (data.size() == 0) throw InvalidArgument("evaluate needs a nonempty dataset");
  std::vector<Tensor> prepared;
  prepared.reserve(data.size());
  for (const auto& s : data.slices) {
    prepared.push_back(normalize ? scale_normalize(s, data.intensity_ceiling) : s);
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  EvalResult r;
  double loss_sum = 0.0;
  std::vector<int> predictions;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, data.size());
    const Tensor batch = stack_batch(prepared, order, begin, end);
    const auto pass = forward(model, batch, Mode::kInfer);
    const std::vector<int> labels(data.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                                  data.labels.begin() + static_cast<std::ptrdiff_t>(end));
    loss_sum += bce_loss(pass.logits, labels).loss * static_cast<double>(end - begin);
    const auto pred = predict_labels(pass.probs, threshold);
    predictions.insert(predictions.end(), pred.begin(), pred.end());
    r.probs.insert(r.probs.end(), pass.probs.data().begin(), pass.probs.data().end());
  }
  r.counts = count_confusion(data.labels, predictions);
  r.mean_loss = loss_sum / static_cast<double>(data.size());
  if (!std::isfinite(r.mean_loss)) throw NumericError("non-finite evaluation loss");
  return r;
}

ConfusionCounts subject_vote_counts(const SampleSet& data, const std::vector<float>& probs,
                                    double threshold) {
  if (probs.size() != data.size()) throw InvalidArgument("probability count mismatch");
  std::map<std::string, std::pair<std::size_t, std::size_t>> votes;  // positive, total
  std::map<std::string, int> label;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto& v = votes[data.subject_ids[i]];
    v.first += static_cast<double>(probs[i]) >= threshold;
    ++v.second;
    label[data.subject_ids[i]] = data.labels[i];
  }
  std::vector<int> labels, predictions;
  for (const auto& [id, v] : votes) {
    labels.push_back(label[id]);
    predictions.push_back(2 * v.first >= v.second ? 1 : 0);
  }
  return count_confusion(labels, predictions);
}

FitResult fit(Model model, const SampleSet& train, const SampleSet& val, const TrainConfig& config,
              const AugmentConfig& augment_cfg) {
  config.validate();
  augment_cfg.validate();
  if (train.size() == 0 || val.size() == 0) throw InvalidArgument("fit needs nonempty train and validation sets");
  if (config.batch_size > train.size()) {
    throw InvalidArgument("batch_size " + std::to_string(config.batch_size) + " exceeds train size " +
                          std::to_string(train.size()));
  }
  {
    const std::set<std::uint64_t> train_ids(train.sample_ids.begin(), train.sample_ids.end());
    for (auto id : val.sample_ids) {
      if (train_ids.count(id)) throw InvalidArgument("train and validation sets share a sample");
    }
  }
  const double threshold = model.config.threshold;

  FitResult result;
  result.best_model = model;
  bool have_best = false;
  std::vector<Tensor> prepared(train.size());
  std::vector<std::size_t> order(train.size());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_for_epoch(config, epoch);
    std::iota(order.begin(), order.end(), 0);
    RngStream shuffle{stream_tag::kShuffle, config.seed, epoch};
    deterministic_shuffle(order, shuffle);
    for (std::size_t i = 0; i < train.size(); ++i) {
      RngStream rng{stream_tag::kAugment, config.seed, epoch, train.sample_ids[i]};
      prepared[i] = augment(train.slices[i], augment_cfg, rng, train.intensity_ceiling);
    }

    double loss_sum = 0.0;
    std::size_t correct = 0, batch_index = 0;
    for (std::size_t begin = 0; begin < train.size(); begin += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(begin + config.batch_size, train.size());
      const Tensor batch = stack_batch(prepared, order, begin, end);
      std::vector<int> labels;
      RngContext rng{config.seed, epoch, {}};
      for (std::size_t i = begin; i < end; ++i) {
        labels.push_back(train.labels[order[i]]);
        rng.sample_indices.push_back(train.sample_ids[order[i]]);
      }
      const std::string where = "epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(batch_index + 1);
      ForwardPass<float> pass;
      BceResult<float> bce;
      std::vector<Tensor> grads;
      try {
        pass = forward(model, batch, Mode::kTrain, rng);
        bce = bce_loss(pass.logits, labels);
        if (!std::isfinite(bce.loss)) throw NumericError("non-finite loss");
        grads = backward(model, pass, bce.grad_logits);
        clip_gradients(grads, config.clip_value, config.clip_norm);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at " + where);
      }
      sgd_step(model.trainable(), grads, lr);
      apply_running_stats(model, pass);
      loss_sum += bce.loss * static_cast<double>(end - begin);
      correct += count_correct(pass.probs, labels, threshold);
    }

    const EvalResult v = evaluate(model, val, threshold, augment_cfg.normalize);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    rec.val_loss = v.mean_loss;
    rec.val_accuracy = static_cast<double>(v.counts.tp + v.counts.tn) / static_cast<double>(val.size());
    result.history.epochs.push_back(rec);
    if (!have_best || rec.val_accuracy > result.best_val_accuracy) {
      have_best = true;
      result.best_val_accuracy = rec.val_accuracy;
      result.best_epoch = rec.epoch;
      result.best_model = model;
    }
  }
  result.final_model = std::move(model);
  return result;
}

}  // namespace sliceforge
