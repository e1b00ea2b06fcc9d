#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tfm/dataset.hpp"
#include "tfm/layers.hpp"
#include "tfm/models.hpp"
#include "tfm/tensor.hpp"

namespace tfm {

struct TrainConfig {
  double lr0 = 2e-4;
  double gamma = 0.9;
  std::size_t decay_period = 40;
  std::size_t patience = 10;
  std::size_t max_epochs = 100;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(std::string_view text);
};

/// Mean squared error over all 2N^2 components; shapes must match.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& prediction, const Tensor<T>& target);

/// lr0 * gamma^floor(epoch / period)
double step_lr(std::size_t epoch, double lr0, double gamma, std::size_t period);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a ParamSet. Moment buffers follow the ParamSet
/// order and are keyed by parameter name for checkpointing.
template <typename T>
class Adam {
 public:
  explicit Adam(ParamSet<T>& params, AdamConfig config = {});

  /// One update from the accumulated gradients. Throws NumericError naming
  /// the first parameter with a non-finite gradient, before touching anything.
  void step(double lr);

  std::uint64_t step_count() const { return step_; }
  const AdamConfig& config() const { return config_; }
  std::vector<T>& first_moment(std::size_t i) { return m_[i]; }
  std::vector<T>& second_moment(std::size_t i) { return v_[i]; }
  const std::vector<T>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<T>& second_moment(std::size_t i) const { return v_[i]; }
  void set_step_count(std::uint64_t step) { step_ = step; }

 private:
  ParamSet<T>* params_;
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

/// Patience-based stopping with best-weight retention. An epoch counts as an
/// improvement only if its validation loss is strictly below the best so far.
template <typename T>
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);

  /// Records one epoch; returns true when training should stop.
  bool update(std::size_t epoch, double val_loss, const ParamSet<T>& params);
  /// Copies the best snapshot back into `params` (no-op before any update).
  void restore(ParamSet<T>& params) const;

  double best_loss() const { return best_loss_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t epochs_since_improvement() const { return since_; }

 private:
  std::size_t patience_;
  double best_loss_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t since_ = 0;
  std::vector<std::vector<T>> snapshot_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

template <typename T>
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig model;
  TrainConfig train;
  std::size_t epochs = 0;  // epochs actually run
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<EpochRecord> history;
  std::uint64_t adam_step = 0;
  /// Parameter tensors in model order, then "adam.m/<name>", "adam.v/<name>".
  std::vector<std::pair<std::string, Tensor<T>>> records;
};

template <typename T>
struct TrainResult {
  std::unique_ptr<Model<T>> model;  // holds the best-validation weights
  Checkpoint<T> checkpoint;
  bool stopped_early = false;
};

struct TrainOptions {
  /// Called after every epoch.
  std::function<void(const EpochRecord&)> on_epoch;
};

template <typename T>
TrainResult<T> train(const ModelConfig& model_config, const TrainConfig& cfg, std::span<const Example<T>> train_set,
                     std::span<const Example<T>> val_set, const TrainOptions& options = {});

/// Mean loss over a split with dropout disabled.
template <typename T>
double validation_loss(const Model<T>& model, std::span<const Example<T>> examples);

/// epoch,lr,train_loss,val_loss
void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& checkpoint);
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint parameters into `model`. Rejects a different model kind
/// or any difference in parameter names (listing missing and extra ones) or
/// shapes.
template <typename T>
void load_parameters(Model<T>& model, const Checkpoint<T>& checkpoint);

/// Builds the checkpoint's model and loads its weights.
template <typename T>
std::unique_ptr<Model<T>> restore_model(const Checkpoint<T>& checkpoint);

}  // namespace tfm
