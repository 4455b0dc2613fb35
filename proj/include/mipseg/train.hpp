#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mipseg/config.hpp"
#include "mipseg/io.hpp"
#include "mipseg/loss.hpp"
#include "mipseg/model.hpp"
#include "mipseg/optim.hpp"
#include "mipseg/run_state.hpp"

namespace mipseg {

struct TrainHooks {
  // Replaces the measured validation loss (protocol tests).
  std::function<double(int epoch, double val_loss)> override_val;
  // Receives one formatted line per epoch.
  std::function<void(const std::string&)> log_line;
  // Runs after each completed epoch with a resumable state (checkpoint tests).
  std::function<void(int epoch)> after_epoch;
};

template <typename T>
RunState<T> init_run_state(const TrainConfig& cfg) {
  RunState<T> s;
  s.lr = cfg.lr;
  s.balance = BalanceSchedule{0.99, 1};
  s.rng = Rng(Rng::derive(cfg.seed, 1));
  return s;
}

namespace detail {

template <typename T>
std::vector<std::vector<T>> snapshot_params(const std::vector<Tensor<T>>& params) {
  std::vector<std::vector<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.values());
  return out;
}

// Validation bookkeeping shared by both trainers: strict improvement resets
// the counters and snapshots the weights; stagnation drives lr halving and
// early stopping.
template <typename T>
void protocol_update(RunState<T>& state, const TrainConfig& cfg, int epoch, double val_loss,
                     const std::vector<Tensor<T>>& params) {
  if (val_loss < state.best_val) {
    state.best_val = val_loss;
    state.best_epoch = epoch;
    state.best_params = snapshot_params(params);
    state.plateau_count = 0;
    state.stop_count = 0;
  } else {
    ++state.plateau_count;
    ++state.stop_count;
    if (state.plateau_count >= cfg.plateau_patience) {
      state.lr /= 2.0;
      state.plateau_count = 0;
    }
    if (state.stop_count >= cfg.early_stop_patience) state.stopped_early = true;
  }
}

inline std::string epoch_log_line(int epoch, double c, double lr, double train_loss,
                                  double val_loss) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "epoch=%d c=%.8f lr=%.8g train_loss=%.6f val_loss=%.6f",
                epoch, c, lr, train_loss, val_loss);
  return buf;
}

}  // namespace detail

template <typename T>
void restore_best_weights(const std::vector<Tensor<T>>& params, const RunState<T>& state) {
  if (state.best_params.empty()) return;
  require(state.best_params.size() == params.size(),
          "best-weights snapshot does not match the parameter list");
  for (size_t i = 0; i < params.size(); ++i) params[i].mutable_values() = state.best_params[i];
}

// Mean path-2 Dice loss over a validation set (the deliverable output).
template <typename T>
double validation_loss_25d(const Model25D<T>& model, const Dataset<T>& val_set) {
  require(!val_set.empty(), "validation set is empty");
  NoGradScope<T> inference;
  double sum = 0.0;
  for (const auto& s : val_set) {
    Tensor<T> yhat = forward_path2(model, to_tensor(s.scan));
    sum += static_cast<double>(dice_loss(to_tensor(s.mask), yhat).item());
  }
  return sum / static_cast<double>(val_set.size());
}

// Two-path random-angle training. Per epoch: one fresh path-1 angle draw,
// then per sample both paths, the joint loss at the current balance c, one
// backward and one Adam step. Validation decides plateau halving and early
// stopping; the best epoch's weights are restored on exit.
template <typename T>
void train(Model25D<T>& model, const Dataset<T>& train_set, const Dataset<T>& val_set,
           const TrainConfig& cfg, RunState<T>& state, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  if (val_set.empty()) throw ConfigError("validation set is empty");
  const std::vector<Tensor<T>> params = model.params();
  if (state.epoch == 0 && state.lr == 0.0) state = init_run_state<T>(cfg);
  AdamOptimizer<T> opt(params, &state.adam);

  for (int epoch = state.epoch + 1; epoch <= cfg.max_epochs && !state.stopped_early; ++epoch) {
    const std::vector<double> angles = sample_path1_angles(cfg.p, cfg.m, state.rng);
    double train_loss_sum = 0.0;
    for (size_t i = 0; i < train_set.size(); ++i) {
      const auto& sample = train_set[i];
      Graph<T> graph;
      double loss_value;
      {
        auto scope = graph.activate();
        Tensor<T> x = to_tensor(sample.scan);
        Tensor<T> y = to_tensor(sample.mask);
        Tensor<T> yhat_aux = forward_path1(model, x, angles);
        Tensor<T> yhat = forward_path2(model, x);
        Tensor<T> loss = joint_loss(y, yhat, yhat_aux, state.balance.c);
        loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value))
          throw TrainError("non-finite training loss at epoch " + std::to_string(epoch) +
                           " sample " + std::to_string(i) + " (" + sample.name + ")");
        graph.backward(loss);
      }
      opt.step(state.lr);
      opt.zero_grad();
      train_loss_sum += loss_value;
    }
    const double train_loss = train_loss_sum / static_cast<double>(train_set.size());

    double val_loss = validation_loss_25d(model, val_set);
    if (hooks.override_val) val_loss = hooks.override_val(epoch, val_loss);
    if (!std::isfinite(val_loss))
      throw TrainError("non-finite validation loss at epoch " + std::to_string(epoch));

    if (hooks.log_line)
      hooks.log_line(detail::epoch_log_line(epoch, state.balance.c, state.lr, train_loss,
                                            val_loss));
    detail::protocol_update(state, cfg, epoch, val_loss, params);
    state.balance = advance_balance(state.balance);
    state.epoch = epoch;
    if (hooks.after_epoch) hooks.after_epoch(epoch);
  }
  restore_best_weights(params, state);
}

// ---- slice-by-slice baseline ----

template <typename T>
Tensor<T> slice_tensor(const Volume<T>& vol, int ia) {
  std::vector<T> pix(vol.voxels.begin() + static_cast<size_t>(ia) * vol.b * vol.c,
                     vol.voxels.begin() + static_cast<size_t>(ia + 1) * vol.b * vol.c);
  return Tensor<T>::from({vol.b, vol.c}, std::move(pix));
}

// Segments every slice along axis a independently and restacks to a volume.
template <typename T>
Volume<T> slice_by_slice_segment(const UNetModel<T>& unet, const Volume<T>& x) {
  NoGradScope<T> inference;
  Volume<T> out(x.a, x.b, x.c);
  for (int ia = 0; ia < x.a; ++ia) {
    Tensor<T> pred = unet_forward(unet, slice_tensor(x, ia));
    std::copy(pred.values().begin(), pred.values().end(),
              out.voxels.begin() + static_cast<size_t>(ia) * x.b * x.c);
  }
  return out;
}

template <typename T>
double validation_loss_slices(const UNetModel<T>& unet, const Dataset<T>& val_set) {
  require(!val_set.empty(), "validation set is empty");
  double sum = 0.0;
  for (const auto& s : val_set) {
    Volume<T> prob = slice_by_slice_segment(unet, s.scan);
    sum += static_cast<double>(dice_loss(to_tensor(s.mask), to_tensor(prob)).item());
  }
  return sum / static_cast<double>(val_set.size());
}

// Plain Dice training of the shared U-net on individual slices (minibatch
// one slice), same plateau/early-stopping protocol as the projection model.
template <typename T>
void train_slice_model(UNetModel<T>& unet, const Dataset<T>& train_set,
                       const Dataset<T>& val_set, const TrainConfig& cfg, RunState<T>& state,
                       const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  if (val_set.empty()) throw ConfigError("validation set is empty");
  const std::vector<Tensor<T>> params = unet.params();
  if (state.epoch == 0 && state.lr == 0.0) state = init_run_state<T>(cfg);
  AdamOptimizer<T> opt(params, &state.adam);

  for (int epoch = state.epoch + 1; epoch <= cfg.max_epochs && !state.stopped_early; ++epoch) {
    double loss_sum = 0.0;
    long long steps = 0;
    for (size_t i = 0; i < train_set.size(); ++i) {
      const auto& sample = train_set[i];
      for (int ia = 0; ia < sample.scan.a; ++ia) {
        Graph<T> graph;
        double loss_value;
        {
          auto scope = graph.activate();
          Tensor<T> pred = unet_forward(unet, slice_tensor(sample.scan, ia));
          Tensor<T> loss = dice_loss(slice_tensor(sample.mask, ia), pred);
          loss_value = static_cast<double>(loss.item());
          if (!std::isfinite(loss_value))
            throw TrainError("non-finite training loss at epoch " + std::to_string(epoch) +
                             " sample " + std::to_string(i) + " slice " + std::to_string(ia));
          graph.backward(loss);
        }
        opt.step(state.lr);
        opt.zero_grad();
        loss_sum += loss_value;
        ++steps;
      }
    }
    const double train_loss = loss_sum / static_cast<double>(steps);

    double val_loss = validation_loss_slices(unet, val_set);
    if (hooks.override_val) val_loss = hooks.override_val(epoch, val_loss);
    if (!std::isfinite(val_loss))
      throw TrainError("non-finite validation loss at epoch " + std::to_string(epoch));
    if (hooks.log_line)
      hooks.log_line(detail::epoch_log_line(epoch, 0.0, state.lr, train_loss, val_loss));
    detail::protocol_update(state, cfg, epoch, val_loss, params);
    state.epoch = epoch;
    if (hooks.after_epoch) hooks.after_epoch(epoch);
  }
  restore_best_weights(params, state);
}

// ---- cross-validation ----

enum class ModelKind { Random25D, SliceBySlice };

inline const char* model_kind_name(ModelKind k) {
  return k == ModelKind::Random25D ? "random-2.5d" : "slice-by-slice";
}

struct CrossValResult {
  std::vector<MetricsReport> folds;     // pooled counts per held-out fold
  std::array<double, 3> mean{};         // ma, iu, dc
  std::array<double, 3> stddev{};       // sample standard deviation over folds
};

inline void aggregate_reports(CrossValResult& r) {
  const size_t n = r.folds.size();
  std::array<double, 3> sum{};
  for (const auto& f : r.folds) {
    sum[0] += f.ma;
    sum[1] += f.iu;
    sum[2] += f.dc;
  }
  for (int i = 0; i < 3; ++i) r.mean[i] = sum[i] / static_cast<double>(n);
  if (n > 1) {
    std::array<double, 3> sq{};
    for (const auto& f : r.folds) {
      const std::array<double, 3> v{f.ma, f.iu, f.dc};
      for (int i = 0; i < 3; ++i) sq[i] += (v[i] - r.mean[i]) * (v[i] - r.mean[i]);
    }
    for (int i = 0; i < 3; ++i) r.stddev[i] = std::sqrt(sq[i] / static_cast<double>(n - 1));
  }
}

// k-fold split by seeded shuffle; every sample is held out exactly once.
// Each fold trains from scratch with an rng stream derived from (seed, fold)
// and reports metrics from counts pooled over its held-out samples.
inline CrossValResult cross_validate(const Dataset<float>& data, const TrainConfig& cfg,
                                     ModelKind kind, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (cfg.folds < 2) throw ConfigError("cross-validation needs folds >= 2");
  if (static_cast<int>(data.size()) < cfg.folds)
    throw ConfigError("dataset of " + std::to_string(data.size()) +
                      " samples is smaller than folds=" + std::to_string(cfg.folds));

  std::vector<int> perm(data.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng shuffle_rng(Rng::derive(cfg.seed, 0xCF));
  for (size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[shuffle_rng.uniform_index(i)]);

  CrossValResult result;
  for (int fold = 0; fold < cfg.folds; ++fold) {
    Dataset<float> held_out, rest;
    for (size_t j = 0; j < perm.size(); ++j)
      (static_cast<int>(j) % cfg.folds == fold ? held_out : rest).push_back(data[perm[j]]);
    const size_t n_val = std::max<size_t>(1, rest.size() / 5);
    Dataset<float> val_set(rest.end() - n_val, rest.end());
    Dataset<float> train_set(rest.begin(), rest.end() - n_val);
    if (train_set.empty()) throw ConfigError("fold split left no training samples");

    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = Rng::derive(cfg.seed, 0xF0 + static_cast<std::uint64_t>(fold));
    RunState<float> state;
    ConfusionCounts pooled;
    if (kind == ModelKind::Random25D) {
      Model25D<float> model =
          make_model25d<float>(fold_cfg.unet(), fold_cfg.p, fold_cfg.m, fold_cfg.seed);
      train(model, train_set, val_set, fold_cfg, state, hooks);
      for (const auto& s : held_out) {
        Volume<float> mask = threshold_mask(predict_volume(model, s.scan));
        const ConfusionCounts n = confusion_counts(s.mask, mask);
        pooled.tp += n.tp;
        pooled.tn += n.tn;
        pooled.fp += n.fp;
        pooled.fn += n.fn;
      }
    } else {
      UNetModel<float> unet = build_unet<float>(fold_cfg.unet(), fold_cfg.seed);
      train_slice_model(unet, train_set, val_set, fold_cfg, state, hooks);
      for (const auto& s : held_out) {
        Volume<float> mask = threshold_mask(slice_by_slice_segment(unet, s.scan));
        const ConfusionCounts n = confusion_counts(s.mask, mask);
        pooled.tp += n.tp;
        pooled.tn += n.tn;
        pooled.fp += n.fp;
        pooled.fn += n.fn;
      }
    }
    result.folds.push_back(metrics_from_counts(pooled));
  }
  aggregate_reports(result);
  return result;
}

}  // namespace mipseg
