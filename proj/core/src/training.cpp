#include "tfm/training.hpp"

#include <cmath>
#include <json.hpp>
#include <numeric>

#include "tfm/error.hpp"
#include "tfm/ops.hpp"
#include "tfm/report_io.hpp"
#include "tfm/tensor_io.hpp"

namespace tfm {

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) {
    throw ValueError("train: lr0 must be positive");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw ValueError("train: gamma must lie in (0, 1]");
  }
  if (decay_period == 0) {
    throw ValueError("train: decay period must be at least 1");
  }
  if (patience == 0) {
    throw ValueError("train: patience must be at least 1");
  }
  if (max_epochs == 0) {
    throw ValueError("train: max_epochs must be at least 1");
  }
  if (batch_size == 0) {
    throw ValueError("train: batch size must be at least 1");
  }
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j = {{"lr0", lr0},
                              {"gamma", gamma},
                              {"decay_period", decay_period},
                              {"patience", patience},
                              {"max_epochs", max_epochs},
                              {"batch_size", batch_size},
                              {"seed", seed}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    TrainConfig c;
    c.lr0 = j.at("lr0").get<double>();
    c.gamma = j.at("gamma").get<double>();
    c.decay_period = j.at("decay_period").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.max_epochs = j.at("max_epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValueError(std::string("malformed train config: ") + e.what());
  }
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
  if (prediction.shape() != target.shape()) {
    throw ShapeError("mse_loss: prediction " + to_string(prediction.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  return mean_squared_error(prediction, target);
}

double step_lr(std::size_t epoch, double lr0, double gamma, std::size_t period) {
  if (period == 0) {
    throw ValueError("step_lr: period must be at least 1");
  }
  return lr0 * std::pow(gamma, static_cast<double>(epoch / period));
}

template <typename T>
Adam<T>::Adam(ParamSet<T>& params, AdamConfig config) : params_(&params), config_(config) {
  for (const auto& [name, tensor] : params) {
    m_.emplace_back(tensor.numel(), T{0});
    v_.emplace_back(tensor.numel(), T{0});
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  for (const auto& [name, tensor] : *params_) {
    for (T g : tensor.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in parameter '" + name + "' at step " + std::to_string(step_ + 1));
      }
    }
  }
  ++step_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  std::size_t i = 0;
  for (auto& [name, tensor] : *params_) {
    auto& m = m_[i];
    auto& v = v_[i];
    ++i;
    if (!tensor.has_grad()) {
      // A parameter outside the graph has zero gradient; decay its moments.
      for (std::size_t k = 0; k < m.size(); ++k) {
        m[k] = static_cast<T>(b1 * m[k]);
        v[k] = static_cast<T>(b2 * v[k]);
      }
    } else {
      auto g = tensor.grad();
      for (std::size_t k = 0; k < m.size(); ++k) {
        m[k] = static_cast<T>(b1 * m[k] + (1.0 - b1) * g[k]);
        v[k] = static_cast<T>(b2 * v[k] + (1.0 - b2) * static_cast<double>(g[k]) * g[k]);
      }
    }
    auto w = tensor.mutable_values();
    for (std::size_t k = 0; k < m.size(); ++k) {
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] = static_cast<T>(w[k] - lr * mhat / (std::sqrt(vhat) + config_.eps));
    }
  }
}

template <typename T>
EarlyStopping<T>::EarlyStopping(std::size_t patience) : patience_(patience) {
  if (patience == 0) {
    throw ValueError("early stopping: patience must be at least 1");
  }
}

template <typename T>
bool EarlyStopping<T>::update(std::size_t epoch, double val_loss, const ParamSet<T>& params) {
  if (!std::isfinite(val_loss)) {
    throw NumericError("early stopping: non-finite validation loss at epoch " + std::to_string(epoch));
  }
  if (val_loss < best_loss_) {
    best_loss_ = val_loss;
    best_epoch_ = epoch;
    since_ = 0;
    snapshot_.clear();
    for (const auto& [name, tensor] : params) {
      snapshot_.emplace_back(tensor.values().begin(), tensor.values().end());
    }
    return false;
  }
  ++since_;
  return since_ >= patience_;
}

template <typename T>
void EarlyStopping<T>::restore(ParamSet<T>& params) const {
  if (snapshot_.empty()) {
    return;
  }
  std::size_t i = 0;
  for (auto& [name, tensor] : params) {
    auto w = tensor.mutable_values();
    std::copy(snapshot_[i].begin(), snapshot_[i].end(), w.begin());
    ++i;
  }
}

template <typename T>
double validation_loss(const Model<T>& model, std::span<const Example<T>> examples) {
  if (examples.empty()) {
    throw ValueError("validation_loss: empty split");
  }
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& ex : examples) {
    const std::optional<int> ct = model.uses_cell_type() ? std::optional<int>(ex.cell_type) : std::nullopt;
    total += static_cast<double>(mse_loss(model.forward(ex.u, ct), ex.f).item());
  }
  return total / static_cast<double>(examples.size());
}

template <typename T>
TrainResult<T> train(const ModelConfig& model_config, const TrainConfig& cfg, std::span<const Example<T>> train_set,
                     std::span<const Example<T>> val_set, const TrainOptions& options) {
  cfg.validate();
  if (train_set.empty()) {
    throw ValueError("train: empty training split");
  }
  if (val_set.empty()) {
    throw ValueError("train: empty validation split");
  }
  if (!grad_enabled()) {
    throw ValueError("train: gradient recording is disabled on this thread (NoGradGuard active)");
  }
  TrainResult<T> result;
  result.model = make_model<T>(model_config, cfg.seed);
  Model<T>& model = *result.model;
  ParamSet<T>& params = model.params();
  Adam<T> adam(params);
  EarlyStopping<T> stopper(cfg.patience);
  std::vector<EpochRecord> history;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = step_lr(epoch, cfg.lr0, cfg.gamma, cfg.decay_period);
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream shuffle(cfg.seed, "shuffle", epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle.below(i)]);
    }
    RngStream dropout_rng(cfg.seed, "dropout", epoch);
    ForwardOptions fw{true, &dropout_rng, nullptr};

    double train_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const T inv_batch = static_cast<T>(1.0 / static_cast<double>(end - start));
      params.zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const Example<T>& ex = train_set[order[b]];
        const std::optional<int> ct = model.uses_cell_type() ? std::optional<int>(ex.cell_type) : std::nullopt;
        const Tensor<T> loss = mse_loss(model.forward(ex.u, ct, fw), ex.f);
        train_total += static_cast<double>(loss.item());
        backward(scale(loss, inv_batch));
      }
      adam.step(lr);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = train_total / static_cast<double>(train_set.size());
    rec.val_loss = validation_loss(model, val_set);
    history.push_back(rec);
    if (options.on_epoch) {
      options.on_epoch(rec);
    }
    if (stopper.update(epoch, rec.val_loss, params)) {
      result.stopped_early = true;
      break;
    }
  }

  Checkpoint<T>& ck = result.checkpoint;
  ck.model = model_config;
  ck.train = cfg;
  ck.epochs = history.size();
  ck.history = std::move(history);
  ck.adam_step = adam.step_count();
  // Optimizer moments belong to the last epoch; the weights to the best one.
  stopper.restore(params);
  ck.best_epoch = stopper.best_epoch();
  ck.best_val_loss = stopper.best_loss();
  std::size_t i = 0;
  for (const auto& [name, tensor] : params) {
    ck.records.emplace_back(name, tensor.clone());
  }
  for (const auto& [name, tensor] : params) {
    ck.records.emplace_back("adam.m/" + name, Tensor<T>(tensor.shape(), adam.first_moment(i)));
    ++i;
  }
  i = 0;
  for (const auto& [name, tensor] : params) {
    ck.records.emplace_back("adam.v/" + name, Tensor<T>(tensor.shape(), adam.second_moment(i)));
    ++i;
  }
  return result;
}

void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history) {
  std::string out = "epoch,lr,train_loss,val_loss\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + format_number(r.lr) + "," + format_number(r.train_loss) + "," +
           format_number(r.val_loss) + "\n";
  }
  write_file_bytes(path, out);
}

#define TFM_INSTANTIATE_TRAINING(T)                                                                          \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);                                          \
  template class Adam<T>;                                                                                    \
  template class EarlyStopping<T>;                                                                           \
  template double validation_loss(const Model<T>&, std::span<const Example<T>>);                            \
  template TrainResult<T> train(const ModelConfig&, const TrainConfig&, std::span<const Example<T>>,        \
                                std::span<const Example<T>>, const TrainOptions&);

TFM_INSTANTIATE_TRAINING(float)
TFM_INSTANTIATE_TRAINING(double)

}  // namespace tfm
