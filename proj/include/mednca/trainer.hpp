#pragma once

// Optimization loop: shuffled mini-batches of train_step + adam_step,
// per-epoch validation via full-image inference, best-checkpoint tracking,
// early stopping and a history CSV.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mednca/adam.hpp"
#include "mednca/losses.hpp"
#include "mednca/parallel.hpp"
#include "mednca/pipeline.hpp"

namespace mednca {

struct TrainConfig {
  double lr = 1e-3;
  i64 epochs = 8;             // the synthetic task converges in 2-3 epochs
  i64 batch_size = 8;
  std::uint64_t seed = 0;
  i64 patience = 4;           // early stop on stagnant validation Dice
  double clip_norm = 1.0;     // global-norm gradient clip; <= 0 disables
  // lr halves every 25% of the configured epochs

  void validate() const {
    require(lr > 0, "TrainConfig: lr must be positive");
    require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
    require(epochs >= 0, "TrainConfig: epochs must be >= 0");
  }
};

struct EpochRecord {
  i64 epoch;
  double train_loss;
  double val_dice;
  double lr;
};

struct TrainHistory {
  std::vector<EpochRecord> records;

  std::string to_csv() const {
    std::ostringstream out;
    out << "epoch,train_loss,val_dice,lr\n";
    for (const auto& r : records) {
      char line[160];
      std::snprintf(line, sizeof(line), "%lld,%.8f,%.8f,%.8g\n",
                    static_cast<long long>(r.epoch), r.train_loss, r.val_dice, r.lr);
      out << line;
    }
    return out.str();
  }
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename T>
double mean_val_dice(const MedNcaModel<T>& model, const std::vector<TrainSample<T>>& val,
                     std::uint64_t seed) {
  std::vector<double> scores(val.size());
  parallel_for(val.size(), [&](std::size_t i) {
    InferResult<T> r = infer(model, val[i].image, mix64(seed, 0xe7a1ULL, i));
    scores[i] = dice_score(r.mask, val[i].mask);
  });
  return EvalReport::from_scores(std::move(scores)).mean;
}

template <typename T>
struct FitResult {
  MedNcaModel<T> best_model;
  double best_val_dice = -1.0;
  i64 best_epoch = -1;
  TrainHistory history;
};

// Deterministic given (model, data, config). progress, when set, receives one
// line per epoch.
template <typename T>
FitResult<T> fit(MedNcaModel<T> model, const std::vector<TrainSample<T>>& train_set,
                 const std::vector<TrainSample<T>>& val_set, const TrainConfig& cfg,
                 const std::function<void(const std::string&)>& progress = {}) {
  cfg.validate();
  require(!train_set.empty() && !val_set.empty(), "fit: empty split");

  FitResult<T> result;
  result.best_model = model;
  OptimState<T> opt = OptimState<T>::init(model, cfg.lr);
  const i64 decay_every = std::max<i64>(1, cfg.epochs / 4);

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  i64 epochs_since_best = 0;
  for (i64 epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.lr = cfg.lr * std::pow(0.5, static_cast<double>(epoch / decay_every));

    // deterministic shuffle
    Rng shuffle_rng(mix64(cfg.seed, 0x5fffULL, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<i64>(i) - 1))]);

    double epoch_loss = 0;
    i64 n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<TrainSample<T>> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);
      const std::uint64_t step_seed =
          mix64(cfg.seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(start));
      auto [loss, grads] = train_step(model, batch, step_seed);
      if (!std::isfinite(static_cast<double>(loss)))
        throw DivergenceError("fit: loss diverged (NaN/Inf) at epoch " + std::to_string(epoch));
      if (cfg.clip_norm > 0) clip_global_norm(grads, cfg.clip_norm);
      adam_step(model, grads, opt);
      epoch_loss += static_cast<double>(loss);
      ++n_batches;
    }
    epoch_loss /= static_cast<double>(n_batches);

    const double val_dice = mean_val_dice(model, val_set, cfg.seed);
    result.history.records.push_back({epoch, epoch_loss, val_dice, opt.lr});
    if (progress) {
      char line[160];
      std::snprintf(line, sizeof(line), "epoch %lld  loss %.4f  val_dice %.4f  lr %.2g",
                    static_cast<long long>(epoch), epoch_loss, val_dice, opt.lr);
      progress(line);
    }

    if (val_dice > result.best_val_dice) {
      result.best_val_dice = val_dice;
      result.best_epoch = epoch;
      result.best_model = model;
      epochs_since_best = 0;
    } else if (++epochs_since_best >= cfg.patience) {
      break;
    }
  }
  if (result.best_epoch < 0) result.best_model = model;  // epochs == 0
  return result;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << content;
}

}  // namespace mednca
