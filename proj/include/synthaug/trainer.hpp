// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "synthaug/datasets.hpp"
#include "synthaug/image.hpp"
#include "synthaug/imagegen.hpp"

namespace synthaug::trainer {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class Loss { cross_entropy };

/// SGD recipe with linear warmup and multi-step decay. The defaults are the
/// full-scale classification recipe (200 epochs, batch 128, lr 0.1, momentum
/// 0.9, weight decay 5e-4, decay x0.2 at {60, 120, 160}, 10 warmup epochs,
/// seeds {7, 17, 42}).
struct TrainConfig {
  int epochs = 200;
  int batch_size = 128;
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::vector<int> milestones{60, 120, 160};
  double gamma = 0.2;
  int warmup_epochs = 10;
  std::vector<std::uint64_t> seeds{7, 17, 42};
  Loss loss = Loss::cross_entropy;
  double holdout_fraction = 0.2;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  /// sha256 of the canonical JSON form.
  std::string digest() const;
};

/// Learning rate for a 0-based epoch: base * (epoch + 1) / warmup during
/// warmup, then base * gamma^k with k = number of milestones <= epoch.
double lr_schedule(const TrainConfig& config, int epoch);

/// A trainable parameter block and its gradient accumulator.
template <typename Scalar>
struct Parameter {
  Matrix<Scalar>* value;
  Matrix<Scalar>* grad;
};

/// Image classifier over batches laid out as one column per image; each
/// column is the channels x pixels matrix from imagegen::normalize, flattened
/// column-major.
template <typename Scalar>
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::string name() const = 0;
  virtual void init(int num_classes, const ImageSpec& spec, std::uint64_t seed) = 0;
  virtual int num_classes() const = 0;
  virtual ImageSpec input_spec() const = 0;

  /// Returns logits, num_classes x batch. Caches what backward() needs.
  virtual Matrix<Scalar> forward(const Matrix<Scalar>& batch) = 0;

  /// Accumulates parameter gradients for the last forward() batch.
  virtual void backward(const Matrix<Scalar>& grad_logits) = 0;

  virtual std::vector<Parameter<Scalar>> parameters() = 0;
  virtual std::unique_ptr<Classifier> clone() const = 0;

  void zero_grad();
  std::size_t parameter_count();

  /// Binary checkpoint: header (name, classes, spec) then parameter blocks.
  void save(std::ostream& out);
  void load(std::istream& in);
};

struct ConvNetOptions {
  std::array<int, 3> channels{32, 64, 128};
};

/// Three conv3x3 -> ReLU -> maxpool2 blocks, global average pooling and a
/// linear head. About 93k weights at the default widths.
template <typename Scalar>
class ConvNet final : public Classifier<Scalar> {
 public:
  explicit ConvNet(ConvNetOptions options = {}) : options_(options) {}

  std::string name() const override { return "convnet"; }
  void init(int num_classes, const ImageSpec& spec, std::uint64_t seed) override;
  int num_classes() const override { return num_classes_; }
  ImageSpec input_spec() const override { return spec_; }
  Matrix<Scalar> forward(const Matrix<Scalar>& batch) override;
  void backward(const Matrix<Scalar>& grad_logits) override;
  std::vector<Parameter<Scalar>> parameters() override;
  std::unique_ptr<Classifier<Scalar>> clone() const override {
    return std::make_unique<ConvNet>(*this);
  }

 private:
  struct Block {
    int in_c = 0, out_c = 0, h = 0, w = 0;
    Matrix<Scalar> weight, bias, dweight, dbias;
  };
  struct Cache {
    std::array<Matrix<Scalar>, 3> cols;       // im2col inputs
    std::array<Matrix<Scalar>, 3> activated;  // post-ReLU, pre-pool
    std::array<std::vector<int>, 3> argmax;   // pool winners
  };

  ConvNetOptions options_;
  int num_classes_ = 0;
  ImageSpec spec_{};
  std::array<Block, 3> blocks_;
  Matrix<Scalar> fc_weight_, fc_bias_, fc_dweight_, fc_dbias_;
  std::vector<Cache> caches_;
  Matrix<Scalar> features_;
};

/// Linear softmax model on raw pixels.
template <typename Scalar>
class SoftmaxRegression final : public Classifier<Scalar> {
 public:
  std::string name() const override { return "softmax"; }
  void init(int num_classes, const ImageSpec& spec, std::uint64_t seed) override;
  int num_classes() const override { return static_cast<int>(weight_.rows()); }
  ImageSpec input_spec() const override { return spec_; }
  Matrix<Scalar> forward(const Matrix<Scalar>& batch) override;
  void backward(const Matrix<Scalar>& grad_logits) override;
  std::vector<Parameter<Scalar>> parameters() override;
  std::unique_ptr<Classifier<Scalar>> clone() const override {
    return std::make_unique<SoftmaxRegression>(*this);
  }

 private:
  ImageSpec spec_{};
  Matrix<Scalar> weight_, bias_, dweight_, dbias_;
  Matrix<Scalar> input_;
};

/// "convnet" or "softmax". Larger backbones plug in through Classifier.
template <typename Scalar>
std::unique_ptr<Classifier<Scalar>> make_classifier(const std::string& name);

/// Rebuilds a classifier from a checkpoint written by Classifier::save.
template <typename Scalar>
std::unique_ptr<Classifier<Scalar>> load_checkpoint(const std::filesystem::path& path);

/// v <- momentum * v + g + wd * w;  w <- w - lr * v
template <typename Scalar>
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(std::span<const Parameter<Scalar>> params, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Matrix<Scalar>> velocity_;
};

/// Mean cross-entropy of softmax(logits); writes d(loss)/d(logits).
template <typename Scalar>
double softmax_cross_entropy(const Matrix<Scalar>& logits, std::span<const int> labels,
                             Matrix<Scalar>* grad);

/// Features (one column per image) and labels.
template <typename Scalar>
struct TensorSet {
  Matrix<Scalar> features;
  std::vector<int> labels;
  int num_classes = 0;
  ImageSpec spec{};

  std::size_t size() const { return labels.size(); }
};

using ImageLoader = std::function<Image(const datasets::ImageRef&, const ImageSpec&)>;

/// Loads and normalizes every image of a dataset (all provenances).
template <typename Scalar>
TensorSet<Scalar> to_tensors(const datasets::Dataset& dataset, const ImageLoader& loader,
                             const std::optional<imagegen::Standardization<Scalar>>& standardization);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

template <typename Scalar>
struct TrainResult {
  std::unique_ptr<Classifier<Scalar>> best;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
  std::vector<EpochRecord> history;
};

/// Loss became NaN or infinite; carries the history up to that point.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::vector<EpochRecord> history)
      : std::runtime_error(what), history(std::move(history)) {}
  std::vector<EpochRecord> history;
};

/// Epoch with the highest validation accuracy; ties go to the earlier epoch.
/// The result does not depend on the order of `history`.
std::size_t select_best_epoch(std::span<const EpochRecord> history);

/// Trains `model` (already initialized) with the shuffle keyed by (seed,
/// epoch) and keeps the best-on-validation checkpoint.
template <typename Scalar>
TrainResult<Scalar> train(Classifier<Scalar>& model, const TensorSet<Scalar>& train_set,
                          const TensorSet<Scalar>& val_set, const TrainConfig& config,
                          std::uint64_t seed);

/// correct / total under argmax of the logits.
template <typename Scalar>
double evaluate(Classifier<Scalar>& model, const TensorSet<Scalar>& test_set);

double accuracy(std::span<const int> predictions, std::span<const int> labels);

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  double best_val_accuracy = 0.0;
  int best_epoch = -1;
  double test_accuracy = 0.0;
  std::string checkpoint_path;
  std::string checkpoint_digest;
  std::vector<EpochRecord> history;
};

struct RunReport {
  std::vector<SeedResult> seeds;
  double mean_test_accuracy = 0.0;
  double std_test_accuracy = 0.0;  // population standard deviation
  double mean_val_accuracy = 0.0;
  bool partial = false;
  std::string config_digest;
  std::string manifest_digest;

  nlohmann::json to_json() const;
  static RunReport from_json(const nlohmann::json& j);
};

/// Mean and population standard deviation of the surviving seeds.
void summarize(RunReport& report);

struct ExperimentOptions {
  std::string classifier = "convnet";
  std::optional<imagegen::Standardization<float>> standardization =
      imagegen::Standardization<float>::uniform(0.5f, 0.25f);
  std::optional<std::filesystem::path> checkpoint_dir;
  ImageLoader loader = datasets::load_image;
};

/// Per seed: hold out a validation split from `train_set`, train, pick the
/// best epoch on validation and score it on `test_set`.
RunReport run_experiment(const datasets::Dataset& train_set, const datasets::Dataset& test_set,
                         const TrainConfig& config, const ExperimentOptions& options = {});

}  // namespace synthaug::trainer
