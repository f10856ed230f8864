// SPDX-License-Identifier: Apache-2.0

#include "synthaug/trainer.hpp"

#include <algorithm>
#include <sstream>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include "synthaug/common.hpp"

namespace synthaug::trainer {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config and schedule

void TrainConfig::validate() const {
  if (epochs < 1) throw InputError("epochs must be >= 1");
  if (batch_size < 1) throw InputError("batch_size must be >= 1");
  if (!(base_lr > 0)) throw InputError("base_lr must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw InputError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw InputError("weight_decay must be >= 0");
  if (!(gamma > 0 && gamma < 1)) throw InputError("gamma must be in (0, 1)");
  if (warmup_epochs < 0) throw InputError("warmup_epochs must be >= 0");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] >= epochs || milestones[i] < 0) {
      throw InputError(fmt::format("milestone {} outside [0, {})", milestones[i], epochs));
    }
    if (i > 0 && milestones[i] <= milestones[i - 1]) {
      throw InputError("milestones must be strictly increasing");
    }
  }
  if (!milestones.empty() && warmup_epochs >= milestones.front()) {
    throw InputError("warmup must end before the first milestone");
  }
  if (seeds.empty()) throw InputError("at least one seed is required");
  if (!(holdout_fraction > 0 && holdout_fraction < 1)) {
    throw InputError("holdout_fraction must be in (0, 1)");
  }
}

json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"base_lr", base_lr},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"milestones", milestones},
          {"gamma", gamma},
          {"warmup_epochs", warmup_epochs},
          {"seeds", seeds},
          {"loss", "cross_entropy"},
          {"holdout_fraction", holdout_fraction}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.base_lr = j.at("base_lr").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.milestones = j.at("milestones").get<std::vector<int>>();
  c.gamma = j.at("gamma").get<double>();
  c.warmup_epochs = j.at("warmup_epochs").get<int>();
  c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.holdout_fraction = j.value("holdout_fraction", 0.2);
  return c;
}

std::string TrainConfig::digest() const { return sha256_hex(to_json().dump()); }

double lr_schedule(const TrainConfig& config, int epoch) {
  if (epoch < 0 || epoch >= config.epochs) {
    throw std::out_of_range(fmt::format("epoch {} outside [0, {})", epoch, config.epochs));
  }
  if (epoch < config.warmup_epochs) {
    return config.base_lr * (epoch + 1) / config.warmup_epochs;
  }
  // Dividing by 1/gamma once per decay keeps decimal recipes exact
  // (0.1 -> 0.02 -> 0.004 -> 0.0008), unlike multiplying by gamma.
  const double divisor = 1.0 / config.gamma;
  double lr = config.base_lr;
  for (int m : config.milestones) {
    if (m <= epoch) lr /= divisor;
  }
  return lr;
}

// ---------------------------------------------------------------------------
// Classifier base

template <typename Scalar>
void Classifier<Scalar>::zero_grad() {
  for (auto& p : parameters()) p.grad->setZero();
}

template <typename Scalar>
std::size_t Classifier<Scalar>::parameter_count() {
  std::size_t n = 0;
  for (auto& p : parameters()) n += static_cast<std::size_t>(p.value->size());
  return n;
}

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'Y', 'N', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw InputError("checkpoint is truncated");
  return v;
}

}  // namespace

template <typename Scalar>
void Classifier<Scalar>::save(std::ostream& out) {
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::string n = name();
  write_pod(out, static_cast<std::uint32_t>(n.size()));
  out.write(n.data(), static_cast<std::streamsize>(n.size()));
  const ImageSpec spec = input_spec();
  write_pod(out, static_cast<std::int32_t>(num_classes()));
  write_pod(out, static_cast<std::int32_t>(spec.width));
  write_pod(out, static_cast<std::int32_t>(spec.height));
  auto params = parameters();
  write_pod(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    write_pod(out, static_cast<std::int64_t>(p.value->rows()));
    write_pod(out, static_cast<std::int64_t>(p.value->cols()));
    for (Eigen::Index i = 0; i < p.value->size(); ++i) {
      write_pod(out, static_cast<double>(p.value->data()[i]));
    }
  }
}

template <typename Scalar>
void Classifier<Scalar>::load(std::istream& in) {
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw InputError("not a classifier checkpoint");
  }
  const auto len = read_pod<std::uint32_t>(in);
  if (len > 256) throw InputError("checkpoint header is corrupt");
  std::string n(len, '\0');
  in.read(n.data(), len);
  if (n != name()) {
    throw InputError(fmt::format("checkpoint holds a '{}' model, expected '{}'", n, name()));
  }
  const int classes = read_pod<std::int32_t>(in);
  const int w = read_pod<std::int32_t>(in);
  const int h = read_pod<std::int32_t>(in);
  init(classes, {w, h, 3}, 0);
  auto params = parameters();
  if (read_pod<std::uint32_t>(in) != params.size()) {
    throw InputError("checkpoint parameter count mismatch");
  }
  for (auto& p : params) {
    const auto rows = read_pod<std::int64_t>(in);
    const auto cols = read_pod<std::int64_t>(in);
    if (rows != p.value->rows() || cols != p.value->cols()) {
      throw InputError("checkpoint parameter shape mismatch");
    }
    for (Eigen::Index i = 0; i < p.value->size(); ++i) {
      p.value->data()[i] = static_cast<Scalar>(read_pod<double>(in));
    }
  }
}

template <typename Scalar>
std::unique_ptr<Classifier<Scalar>> make_classifier(const std::string& name) {
  if (name == "convnet") return std::make_unique<ConvNet<Scalar>>();
  if (name == "softmax") return std::make_unique<SoftmaxRegression<Scalar>>();
  throw InputError(fmt::format(
      "unknown classifier '{}' (built in: convnet, softmax; others plug in via Classifier)", name));
}

template <typename Scalar>
std::unique_ptr<Classifier<Scalar>> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(fmt::format("cannot open checkpoint '{}'", path.string()));
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw InputError(fmt::format("'{}' is not a classifier checkpoint", path.string()));
  }
  const auto len = read_pod<std::uint32_t>(in);
  if (len > 256) throw InputError("checkpoint header is corrupt");
  std::string n(len, '\0');
  in.read(n.data(), len);
  auto model = make_classifier<Scalar>(n);
  in.seekg(0);
  model->load(in);
  return model;
}

namespace {

template <typename Scalar>
void init_normal(Matrix<Scalar>& m, double stddev, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(stddev * rng.normal());
}

// x: C x (H*W), pixel p = y*W + x. Returns (C*9) x (H*W), zero padded.
template <typename Scalar>
Matrix<Scalar> im2col(const Eigen::Ref<const Matrix<Scalar>>& x, int c_in, int h, int w) {
  Matrix<Scalar> col = Matrix<Scalar>::Zero(c_in * 9, h * w);
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int row = c * 9 + ky * 3 + kx;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - 1;
            if (sx < 0 || sx >= w) continue;
            col(row, y * w + xx) = x(c, sy * w + sx);
          }
        }
      }
    }
  }
  return col;
}

template <typename Scalar>
Matrix<Scalar> col2im(const Matrix<Scalar>& col, int c_in, int h, int w) {
  Matrix<Scalar> x = Matrix<Scalar>::Zero(c_in, h * w);
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int row = c * 9 + ky * 3 + kx;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - 1;
            if (sx < 0 || sx >= w) continue;
            x(c, sy * w + sx) += col(row, y * w + xx);
          }
        }
      }
    }
  }
  return x;
}

}  // namespace

// ---------------------------------------------------------------------------
// ConvNet

template <typename Scalar>
void ConvNet<Scalar>::init(int num_classes, const ImageSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (num_classes < 1) throw InputError("num_classes must be >= 1");
  if (spec.width < 8 || spec.height < 8) {
    throw InputError(fmt::format("convnet needs inputs of at least 8x8, got {}", spec.to_string()));
  }
  num_classes_ = num_classes;
  spec_ = spec;
  Rng rng(seed);
  int in_c = 3, h = spec.height, w = spec.width;
  for (int b = 0; b < 3; ++b) {
    Block& blk = blocks_[b];
    blk.in_c = in_c;
    blk.out_c = options_.channels[b];
    blk.h = h;
    blk.w = w;
    blk.weight.resize(blk.out_c, in_c * 9);
    init_normal(blk.weight, std::sqrt(2.0 / (in_c * 9)), rng);
    blk.bias = Matrix<Scalar>::Zero(blk.out_c, 1);
    blk.dweight = Matrix<Scalar>::Zero(blk.out_c, in_c * 9);
    blk.dbias = Matrix<Scalar>::Zero(blk.out_c, 1);
    in_c = blk.out_c;
    h /= 2;
    w /= 2;
  }
  fc_weight_.resize(num_classes, in_c);
  init_normal(fc_weight_, std::sqrt(1.0 / in_c), rng);
  fc_bias_ = Matrix<Scalar>::Zero(num_classes, 1);
  fc_dweight_ = Matrix<Scalar>::Zero(num_classes, in_c);
  fc_dbias_ = Matrix<Scalar>::Zero(num_classes, 1);
  caches_.clear();
}

template <typename Scalar>
Matrix<Scalar> ConvNet<Scalar>::forward(const Matrix<Scalar>& batch) {
  const Eigen::Index n = batch.cols();
  const int feat = options_.channels[2];
  caches_.resize(static_cast<std::size_t>(n));
  features_.resize(feat, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Cache& cache = caches_[static_cast<std::size_t>(i)];
    Matrix<Scalar> x = Eigen::Map<const Matrix<Scalar>>(batch.col(i).data(), 3,
                                                        spec_.width * spec_.height);
    for (int b = 0; b < 3; ++b) {
      const Block& blk = blocks_[b];
      cache.cols[b] = im2col<Scalar>(x, blk.in_c, blk.h, blk.w);
      Matrix<Scalar> z = blk.weight * cache.cols[b];
      z.colwise() += blk.bias.col(0);
      cache.activated[b] = z.cwiseMax(Scalar(0));
      // 2x2 max pool, floor semantics.
      const int ph = blk.h / 2, pw = blk.w / 2;
      Matrix<Scalar> pooled(blk.out_c, ph * pw);
      auto& arg = cache.argmax[b];
      arg.assign(static_cast<std::size_t>(blk.out_c) * ph * pw, 0);
      for (int c = 0; c < blk.out_c; ++c) {
        for (int py = 0; py < ph; ++py) {
          for (int px = 0; px < pw; ++px) {
            int best = (2 * py) * blk.w + 2 * px;
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const int p = (2 * py + dy) * blk.w + 2 * px + dx;
                if (cache.activated[b](c, p) > cache.activated[b](c, best)) best = p;
              }
            }
            pooled(c, py * pw + px) = cache.activated[b](c, best);
            arg[static_cast<std::size_t>(c) * ph * pw + py * pw + px] = best;
          }
        }
      }
      x = std::move(pooled);
    }
    features_.col(i) = x.rowwise().mean();
  }
  Matrix<Scalar> logits = fc_weight_ * features_;
  logits.colwise() += fc_bias_.col(0);
  return logits;
}

template <typename Scalar>
void ConvNet<Scalar>::backward(const Matrix<Scalar>& grad_logits) {
  const Eigen::Index n = grad_logits.cols();
  fc_dweight_.noalias() += grad_logits * features_.transpose();
  fc_dbias_ += grad_logits.rowwise().sum();
  const Matrix<Scalar> dfeat = fc_weight_.transpose() * grad_logits;
  for (Eigen::Index i = 0; i < n; ++i) {
    Cache& cache = caches_[static_cast<std::size_t>(i)];
    const Block& last = blocks_[2];
    const int last_pixels = (last.h / 2) * (last.w / 2);
    Matrix<Scalar> dx = dfeat.col(i).replicate(1, last_pixels) / Scalar(last_pixels);
    for (int b = 2; b >= 0; --b) {
      Block& blk = blocks_[b];
      const int ph = blk.h / 2, pw = blk.w / 2;
      Matrix<Scalar> dz = Matrix<Scalar>::Zero(blk.out_c, blk.h * blk.w);
      const auto& arg = cache.argmax[b];
      for (int c = 0; c < blk.out_c; ++c) {
        for (int q = 0; q < ph * pw; ++q) {
          const int p = arg[static_cast<std::size_t>(c) * ph * pw + q];
          if (cache.activated[b](c, p) > Scalar(0)) dz(c, p) += dx(c, q);
        }
      }
      blk.dweight.noalias() += dz * cache.cols[b].transpose();
      blk.dbias += dz.rowwise().sum();
      if (b > 0) {
        const Matrix<Scalar> dcol = blk.weight.transpose() * dz;
        dx = col2im<Scalar>(dcol, blk.in_c, blk.h, blk.w);
      }
    }
  }
}

template <typename Scalar>
std::vector<Parameter<Scalar>> ConvNet<Scalar>::parameters() {
  std::vector<Parameter<Scalar>> out;
  for (auto& blk : blocks_) {
    out.push_back({&blk.weight, &blk.dweight});
    out.push_back({&blk.bias, &blk.dbias});
  }
  out.push_back({&fc_weight_, &fc_dweight_});
  out.push_back({&fc_bias_, &fc_dbias_});
  return out;
}

// ---------------------------------------------------------------------------
// SoftmaxRegression

template <typename Scalar>
void SoftmaxRegression<Scalar>::init(int num_classes, const ImageSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (num_classes < 1) throw InputError("num_classes must be >= 1");
  spec_ = spec;
  const int features = spec.width * spec.height * 3;
  Rng rng(seed);
  weight_.resize(num_classes, features);
  init_normal(weight_, 0.01, rng);
  bias_ = Matrix<Scalar>::Zero(num_classes, 1);
  dweight_ = Matrix<Scalar>::Zero(num_classes, features);
  dbias_ = Matrix<Scalar>::Zero(num_classes, 1);
}

template <typename Scalar>
Matrix<Scalar> SoftmaxRegression<Scalar>::forward(const Matrix<Scalar>& batch) {
  input_ = batch;
  Matrix<Scalar> logits = weight_ * batch;
  logits.colwise() += bias_.col(0);
  return logits;
}

template <typename Scalar>
void SoftmaxRegression<Scalar>::backward(const Matrix<Scalar>& grad_logits) {
  dweight_.noalias() += grad_logits * input_.transpose();
  dbias_ += grad_logits.rowwise().sum();
}

template <typename Scalar>
std::vector<Parameter<Scalar>> SoftmaxRegression<Scalar>::parameters() {
  return {{&weight_, &dweight_}, {&bias_, &dbias_}};
}

// ---------------------------------------------------------------------------
// Optimizer and loss

template <typename Scalar>
void Sgd<Scalar>::step(std::span<const Parameter<Scalar>> params, double lr) {
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto& p : params) velocity_.push_back(Matrix<Scalar>::Zero(p.value->rows(), p.value->cols()));
  }
  const auto m = static_cast<Scalar>(momentum_);
  const auto wd = static_cast<Scalar>(weight_decay_);
  const auto step = static_cast<Scalar>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& v = velocity_[i];
    v = m * v + *params[i].grad + wd * *params[i].value;
    *params[i].value -= step * v;
  }
}

template <typename Scalar>
double softmax_cross_entropy(const Matrix<Scalar>& logits, std::span<const int> labels,
                             Matrix<Scalar>* grad) {
  const Eigen::Index n = logits.cols();
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  }
  if (grad) grad->resize(logits.rows(), n);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto col = logits.col(i);
    const Scalar mx = col.maxCoeff();
    const Vector<Scalar> e = (col.array() - mx).exp().matrix();
    const Scalar z = e.sum();
    loss += -(static_cast<double>(col(labels[i]) - mx) - std::log(static_cast<double>(z)));
    if (grad) {
      grad->col(i) = e / z;
      (*grad)(labels[i], i) -= Scalar(1);
    }
  }
  if (grad) *grad /= static_cast<Scalar>(n);
  return loss / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Data

template <typename Scalar>
TensorSet<Scalar> to_tensors(const datasets::Dataset& dataset, const ImageLoader& loader,
                             const std::optional<imagegen::Standardization<Scalar>>& standardization) {
  TensorSet<Scalar> out;
  out.num_classes = static_cast<int>(dataset.categories.size());
  out.spec = dataset.image_spec;
  const Eigen::Index features = dataset.image_spec.width * dataset.image_spec.height * 3;
  out.features.resize(features, static_cast<Eigen::Index>(dataset.total_images()));
  Eigen::Index col = 0;
  for (const auto& cat : dataset.categories) {
    for (const auto* list : {&cat.real_images, &cat.synthetic_images, &cat.adversarial_images}) {
      for (const auto& ref : *list) {
        const Image img = loader(ref, dataset.image_spec);
        if (img.spec() != dataset.image_spec) {
          throw InputError(fmt::format("image '{}' does not match dataset spec {}", ref.path,
                                       dataset.image_spec.to_string()));
        }
        const Matrix<Scalar> m = imagegen::normalize<Scalar>(img, standardization);
        out.features.col(col++) = Eigen::Map<const Vector<Scalar>>(m.data(), m.size());
        out.labels.push_back(cat.label.class_id);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

std::size_t select_best_epoch(std::span<const EpochRecord> history) {
  if (history.empty()) throw std::invalid_argument("select_best_epoch: empty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    const auto& h = history[i];
    const auto& b = history[best];
    if (h.val_accuracy > b.val_accuracy ||
        (h.val_accuracy == b.val_accuracy && h.epoch < b.epoch)) {
      best = i;
    }
  }
  return best;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (labels.empty()) throw InputError("accuracy of an empty set is undefined");
  if (predictions.size() != labels.size()) throw std::invalid_argument("accuracy: size mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

template <typename Scalar>
double evaluate(Classifier<Scalar>& model, const TensorSet<Scalar>& test_set) {
  if (test_set.size() == 0) throw InputError("evaluation set is empty");
  if (test_set.num_classes != model.num_classes()) {
    throw InputError(fmt::format("model has {} classes, evaluation set has {}",
                                 model.num_classes(), test_set.num_classes));
  }
  constexpr Eigen::Index kChunk = 256;
  std::vector<int> predictions;
  predictions.reserve(test_set.size());
  for (Eigen::Index start = 0; start < test_set.features.cols(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, test_set.features.cols() - start);
    const Matrix<Scalar> logits = model.forward(test_set.features.middleCols(start, len));
    for (Eigen::Index i = 0; i < len; ++i) {
      Eigen::Index arg;
      logits.col(i).maxCoeff(&arg);
      predictions.push_back(static_cast<int>(arg));
    }
  }
  return accuracy(predictions, test_set.labels);
}

template <typename Scalar>
TrainResult<Scalar> train(Classifier<Scalar>& model, const TensorSet<Scalar>& train_set,
                          const TensorSet<Scalar>& val_set, const TrainConfig& config,
                          std::uint64_t seed) {
  config.validate();
  if (train_set.size() == 0 || val_set.size() == 0) {
    throw InputError("training and validation sets must be non-empty");
  }
  if (train_set.num_classes != val_set.num_classes ||
      train_set.num_classes != model.num_classes()) {
    throw InputError("label spaces of model, training set and validation set differ");
  }
  TrainResult<Scalar> result;
  Sgd<Scalar> sgd(config.momentum, config.weight_decay);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(config.batch_size);
  Matrix<Scalar> x, grad;
  std::vector<int> y;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_schedule(config, epoch);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t len = std::min(batch, order.size() - start);
      x.resize(train_set.features.rows(), static_cast<Eigen::Index>(len));
      y.resize(len);
      for (std::size_t k = 0; k < len; ++k) {
        x.col(static_cast<Eigen::Index>(k)) = train_set.features.col(static_cast<Eigen::Index>(order[start + k]));
        y[k] = train_set.labels[order[start + k]];
      }
      model.zero_grad();
      const Matrix<Scalar> logits = model.forward(x);
      loss_sum += softmax_cross_entropy<Scalar>(logits, y, &grad) * static_cast<double>(len);
      model.backward(grad);
      const auto params = model.parameters();
      sgd.step(params, lr);
    }
    const double train_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(train_loss)) {
      throw TrainingDiverged(fmt::format("training loss diverged at epoch {}", epoch),
                             std::move(result.history));
    }
    const double val_acc = evaluate(model, val_set);
    result.history.push_back({epoch, lr, train_loss, val_acc});
    if (!result.best || val_acc > result.best_val_accuracy) {
      result.best = model.clone();
      result.best_epoch = epoch;
      result.best_val_accuracy = val_acc;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Experiments

json RunReport::to_json() const {
  json per_seed = json::array();
  for (const auto& s : seeds) {
    json history = json::array();
    for (const auto& h : s.history) {
      history.push_back({{"epoch", h.epoch},
                         {"lr", h.lr},
                         {"train_loss", h.train_loss},
                         {"val_accuracy", h.val_accuracy}});
    }
    per_seed.push_back({{"seed", s.seed},
                        {"ok", s.ok},
                        {"error", s.error},
                        {"best_val_accuracy", s.best_val_accuracy},
                        {"best_epoch", s.best_epoch},
                        {"test_accuracy", s.test_accuracy},
                        {"checkpoint_path", s.checkpoint_path},
                        {"checkpoint_digest", s.checkpoint_digest},
                        {"history", history}});
  }
  return {{"seeds", per_seed},
          {"mean_test_accuracy", mean_test_accuracy},
          {"std_test_accuracy", std_test_accuracy},
          {"mean_val_accuracy", mean_val_accuracy},
          {"partial", partial},
          {"config_digest", config_digest},
          {"manifest_digest", manifest_digest}};
}

RunReport RunReport::from_json(const json& j) {
  RunReport r;
  for (const auto& s : j.at("seeds")) {
    SeedResult sr;
    sr.seed = s.at("seed").get<std::uint64_t>();
    sr.ok = s.at("ok").get<bool>();
    sr.error = s.value("error", "");
    sr.best_val_accuracy = s.at("best_val_accuracy").get<double>();
    sr.best_epoch = s.at("best_epoch").get<int>();
    sr.test_accuracy = s.at("test_accuracy").get<double>();
    sr.checkpoint_path = s.value("checkpoint_path", "");
    sr.checkpoint_digest = s.value("checkpoint_digest", "");
    for (const auto& h : s.value("history", json::array())) {
      sr.history.push_back({h.at("epoch").get<int>(), h.at("lr").get<double>(),
                            h.at("train_loss").get<double>(), h.at("val_accuracy").get<double>()});
    }
    r.seeds.push_back(std::move(sr));
  }
  r.mean_test_accuracy = j.at("mean_test_accuracy").get<double>();
  r.std_test_accuracy = j.at("std_test_accuracy").get<double>();
  r.mean_val_accuracy = j.value("mean_val_accuracy", 0.0);
  r.partial = j.at("partial").get<bool>();
  r.config_digest = j.at("config_digest").get<std::string>();
  r.manifest_digest = j.at("manifest_digest").get<std::string>();
  return r;
}

void summarize(RunReport& report) {
  double sum = 0.0, val_sum = 0.0;
  std::size_t n = 0;
  report.partial = false;
  for (const auto& s : report.seeds) {
    if (!s.ok) {
      report.partial = true;
      continue;
    }
    sum += s.test_accuracy;
    val_sum += s.best_val_accuracy;
    ++n;
  }
  report.mean_test_accuracy = n ? sum / static_cast<double>(n) : 0.0;
  report.mean_val_accuracy = n ? val_sum / static_cast<double>(n) : 0.0;
  double var = 0.0;
  for (const auto& s : report.seeds) {
    if (s.ok) var += (s.test_accuracy - report.mean_test_accuracy) * (s.test_accuracy - report.mean_test_accuracy);
  }
  report.std_test_accuracy = n ? std::sqrt(var / static_cast<double>(n)) : 0.0;
}

RunReport run_experiment(const datasets::Dataset& train_set, const datasets::Dataset& test_set,
                         const TrainConfig& config, const ExperimentOptions& options) {
  config.validate();
  if (config.seeds.empty()) throw InputError("at least one seed is required");
  if (train_set.categories.size() != test_set.categories.size()) {
    throw InputError("training and test sets have different label spaces");
  }
  std::unordered_map<std::string, Image> memo;
  const ImageLoader cached = [&](const datasets::ImageRef& ref, const ImageSpec& spec) {
    auto it = memo.find(ref.path);
    if (it == memo.end()) it = memo.emplace(ref.path, options.loader(ref, spec)).first;
    return it->second;
  };

  RunReport report;
  report.config_digest = config.digest();
  report.manifest_digest = sha256_hex(datasets::manifest_digest(train_set) + "\n" +
                                      datasets::manifest_digest(test_set));
  const auto test = to_tensors<float>(test_set, cached, options.standardization);

  for (std::uint64_t seed : config.seeds) {
    SeedResult sr;
    sr.seed = seed;
    try {
      const auto [tr, va] = datasets::split_holdout(train_set, config.holdout_fraction, seed);
      const auto train_t = to_tensors<float>(tr, cached, options.standardization);
      const auto val_t = to_tensors<float>(va, cached, options.standardization);
      auto model = make_classifier<float>(options.classifier);
      model->init(static_cast<int>(train_set.categories.size()), train_set.image_spec, seed);
      auto result = train(*model, train_t, val_t, config, seed);
      sr.best_val_accuracy = result.best_val_accuracy;
      sr.best_epoch = result.best_epoch;
      sr.test_accuracy = evaluate(*result.best, test);
      sr.history = std::move(result.history);
      if (options.checkpoint_dir) {
        std::filesystem::create_directories(*options.checkpoint_dir);
        const auto path = *options.checkpoint_dir / fmt::format("seed_{}.ckpt", seed);
        std::ostringstream buf;
        result.best->save(buf);
        write_file_atomic(path, buf.str());
        sr.checkpoint_path = path.string();
        sr.checkpoint_digest = sha256_hex(buf.str());
      }
      spdlog::info("seed {}: best val {:.4f} at epoch {}, test {:.4f}", seed,
                   sr.best_val_accuracy, sr.best_epoch, sr.test_accuracy);
    } catch (const TrainingDiverged& e) {
      sr.ok = false;
      sr.error = e.what();
      sr.history = e.history;
      spdlog::warn("seed {}: {}", seed, e.what());
    }
    report.seeds.push_back(std::move(sr));
  }
  summarize(report);
  return report;
}

// ---------------------------------------------------------------------------

template class Classifier<float>;
template class Classifier<double>;
template class ConvNet<float>;
template class ConvNet<double>;
template class SoftmaxRegression<float>;
template class SoftmaxRegression<double>;
template class Sgd<float>;
template class Sgd<double>;

template std::unique_ptr<Classifier<float>> make_classifier<float>(const std::string&);
template std::unique_ptr<Classifier<double>> make_classifier<double>(const std::string&);
template std::unique_ptr<Classifier<float>> load_checkpoint<float>(const std::filesystem::path&);
template std::unique_ptr<Classifier<double>> load_checkpoint<double>(const std::filesystem::path&);
template double softmax_cross_entropy<float>(const Matrix<float>&, std::span<const int>, Matrix<float>*);
template double softmax_cross_entropy<double>(const Matrix<double>&, std::span<const int>, Matrix<double>*);
template TensorSet<float> to_tensors<float>(const datasets::Dataset&, const ImageLoader&,
                                            const std::optional<imagegen::Standardization<float>>&);
template TensorSet<double> to_tensors<double>(const datasets::Dataset&, const ImageLoader&,
                                              const std::optional<imagegen::Standardization<double>>&);
template TrainResult<float> train<float>(Classifier<float>&, const TensorSet<float>&,
                                         const TensorSet<float>&, const TrainConfig&, std::uint64_t);
template TrainResult<double> train<double>(Classifier<double>&, const TensorSet<double>&,
                                           const TensorSet<double>&, const TrainConfig&, std::uint64_t);
template double evaluate<float>(Classifier<float>&, const TensorSet<float>&);
template double evaluate<double>(Classifier<double>&, const TensorSet<double>&);

}  // namespace synthaug::trainer
