// Copyright 2026 The hacnn Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hacnn/checkpoint.hpp"
#include "hacnn/config.hpp"
#include "hacnn/data.hpp"
#include "hacnn/network.hpp"
#include "hacnn/optim.hpp"

namespace hacnn {

struct TrainConfig {
  std::size_t epochs = 150;
  std::size_t batch_size = 32;
  AdamConfig adam;
  double global_weight = 1.0;
  double local_weight = 1.0;
  std::uint64_t seed = 1;              // batch order
  std::size_t checkpoint_every = 0;    // epochs; 0 writes only the final checkpoint
  std::string checkpoint_path;         // empty disables checkpoints
  std::string log_path;                // empty disables the CSV log file
  std::size_t lr_decay_every = 0;      // epochs; 0 keeps the learning rate constant
  double lr_decay_factor = 0.1;

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be positive");
    if (global_weight < 0 || local_weight < 0) {
      throw std::invalid_argument("train config: loss weights must be non-negative");
    }
    if (adam.learning_rate < 0) throw std::invalid_argument("train config: negative learning rate");
    if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1)) {
      throw std::invalid_argument("train config: betas must lie in [0, 1)");
    }
    if (!(adam.epsilon > 0)) throw std::invalid_argument("train config: adam epsilon must be positive");
  }

  kv::Map to_kv() const {
    return {{"epochs", kv::format(epochs)},
            {"batch_size", kv::format(batch_size)},
            {"learning_rate", kv::format(adam.learning_rate)},
            {"beta1", kv::format(adam.beta1)},
            {"beta2", kv::format(adam.beta2)},
            {"adam_epsilon", kv::format(adam.epsilon)},
            {"global_weight", kv::format(global_weight)},
            {"local_weight", kv::format(local_weight)},
            {"train_seed", kv::format(seed)},
            {"checkpoint_every", kv::format(checkpoint_every)},
            {"lr_decay_every", kv::format(lr_decay_every)},
            {"lr_decay_factor", kv::format(lr_decay_factor)}};
  }

  void apply(const kv::Map& m) {
    kv::read(m, "epochs", epochs);
    kv::read(m, "batch_size", batch_size);
    kv::read(m, "learning_rate", adam.learning_rate);
    kv::read(m, "beta1", adam.beta1);
    kv::read(m, "beta2", adam.beta2);
    kv::read(m, "adam_epsilon", adam.epsilon);
    kv::read(m, "global_weight", global_weight);
    kv::read(m, "local_weight", local_weight);
    kv::read(m, "train_seed", seed);
    kv::read(m, "checkpoint_every", checkpoint_every);
    kv::read(m, "lr_decay_every", lr_decay_every);
    kv::read(m, "lr_decay_factor", lr_decay_factor);
  }
};

template <typename T>
struct LossTerms {
  Tensor<T> global;  // L_G
  Tensor<T> local;   // L_L
  Tensor<T> total;   // w_G L_G + w_L L_L
};

/// Cross-entropy on both branches. A zero weight keeps its term off the
/// tape, so it contributes no gradient at all.
template <typename T>
LossTerms<T> compute_loss(Tape<T>& tape, const ForwardOutputs<T>& out,
                          std::span<const std::size_t> labels, double global_weight = 1.0,
                          double local_weight = 1.0) {
  LossTerms<T> t;
  t.global = ops::softmax_cross_entropy(tape, out.global_logits, labels);
  t.local = ops::softmax_cross_entropy(tape, out.local_logits, labels);
  Tensor<T> total;
  auto accumulate = [&](const Tensor<T>& term, double w) {
    if (w == 0.0) return;
    auto scaled = w == 1.0 ? term : ops::scale(tape, term, static_cast<T>(w));
    total = total.defined() ? ops::add(tape, total, scaled) : scaled;
  };
  accumulate(t.global, global_weight);
  accumulate(t.local, local_weight);
  t.total = total.defined() ? total : Tensor<T>::scalar(T(0));
  return t;
}

struct TrainLogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss_global = 0, loss_local = 0, loss_total = 0;
  double acc_global = 0, acc_local = 0;
  double wall_ms = 0;
};

inline const char* kTrainLogHeader =
    "epoch,step,L_G,L_L,L_total,train_acc_global,train_acc_local,wall_ms";

inline std::string format_log_row(const TrainLogRow& r, bool with_wall = true) {
  std::ostringstream os;
  os << std::setprecision(17) << r.epoch << ',' << r.step << ',' << r.loss_global << ','
     << r.loss_local << ',' << r.loss_total << ',' << r.acc_global << ',' << r.acc_local;
  if (with_wall) os << ',' << std::setprecision(6) << r.wall_ms;
  return os.str();
}

struct TrainResult {
  std::vector<TrainLogRow> log;
  bool aborted = false;
  std::string message;
  std::size_t steps = 0;
  // Original dense identity label of each training class.
  std::vector<std::size_t> class_to_id;
};

/// Maps the identities present in the training split to classes 0..k-1.
inline std::map<std::size_t, std::size_t> training_classes(const Dataset& ds) {
  std::map<std::size_t, std::size_t> cls;
  for (auto i : ds.indices(Split::train)) cls.emplace(ds.items[i].id, 0);
  std::size_t k = 0;
  for (auto& [id, c] : cls) c = k++;
  return cls;
}

template <typename T>
std::size_t argmax_row(const Tensor<T>& logits, std::size_t row) {
  const std::size_t k = logits.dim(1);
  const T* p = logits.data() + row * k;
  return static_cast<std::size_t>(std::max_element(p, p + k) - p);
}

/// Mini-batch ADAM over the training split in a seeded order. No
/// augmentation. A non-finite loss stops training before the update, so the
/// last written checkpoint stays the last good one.
template <typename T>
TrainResult train(Model<T>& model, const Dataset& ds, const TrainConfig& cfg, AdamState<T>& adam,
                  std::ostream* progress = nullptr) {
  cfg.validate();
  const auto train_idx = ds.indices(Split::train);
  if (train_idx.empty()) throw std::invalid_argument("train: dataset has no training images");
  const auto classes = training_classes(ds);
  if (classes.size() != model.config().num_classes) {
    throw std::invalid_argument("train: dataset has " + std::to_string(classes.size()) +
                                " training identities but the model has " +
                                std::to_string(model.config().num_classes) + " classes");
  }
  TrainResult result;
  result.class_to_id.resize(classes.size());
  for (const auto& [id, c] : classes) result.class_to_id[c] = id;

  std::ofstream log_file;
  if (!cfg.log_path.empty()) {
    log_file.open(cfg.log_path, std::ios::trunc);
    if (!log_file) throw std::runtime_error("cannot write training log " + cfg.log_path);
    log_file << kTrainLogHeader << '\n';
  }
  if (!adam.matches(model.parameters())) adam.reset(model.parameters());
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    AdamConfig step_cfg = cfg.adam;
    if (cfg.lr_decay_every) {
      step_cfg.learning_rate *= std::pow(cfg.lr_decay_factor, static_cast<double>((epoch - 1) / cfg.lr_decay_every));
    }
    std::vector<std::size_t> order = train_idx;
    SplitMix rng(hash_seed({cfg.seed, epoch}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      batches.emplace_back(b, std::min(order.size(), b + cfg.batch_size));
    }
    // A trailing single-image batch would leave batch norm without variance.
    if (batches.size() > 1 && batches.back().second - batches.back().first == 1) {
      batches[batches.size() - 2].second = batches.back().second;
      batches.pop_back();
    }

    double sum_g = 0, sum_l = 0, sum_t = 0;
    std::size_t seen = 0, hit_g = 0, hit_l = 0;
    for (const auto& [b0, b1] : batches) {
      std::vector<std::size_t> idx(order.begin() + b0, order.begin() + b1);
      std::vector<std::size_t> labels;
      for (auto i : idx) labels.push_back(classes.at(ds.items[i].id));
      const auto x = make_batch<T>(ds, idx);
      Tape<T> tape;
      model.zero_grad();
      const auto out = model.forward(tape, x, Mode::train);
      const auto loss = compute_loss<T>(tape, out, labels, cfg.global_weight, cfg.local_weight);
      const double lt = static_cast<double>(loss.total.item());
      if (!std::isfinite(lt) || !std::isfinite(static_cast<double>(loss.global.item())) ||
          !std::isfinite(static_cast<double>(loss.local.item()))) {
        result.aborted = true;
        result.message = "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(result.steps + 1);
        return result;
      }
      if (loss.total.requires_grad()) tape.backward(loss.total);
      adam_step(model.parameters(), adam, step_cfg);
      ++result.steps;
      const double n = static_cast<double>(idx.size());
      sum_g += loss.global.item() * n;
      sum_l += loss.local.item() * n;
      sum_t += lt * n;
      seen += idx.size();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        hit_g += argmax_row(out.global_logits, r) == labels[r];
        hit_l += argmax_row(out.local_logits, r) == labels[r];
      }
    }
    TrainLogRow row;
    row.epoch = epoch;
    row.step = result.steps;
    row.loss_global = sum_g / seen;
    row.loss_local = sum_l / seen;
    row.loss_total = sum_t / seen;
    row.acc_global = static_cast<double>(hit_g) / seen;
    row.acc_local = static_cast<double>(hit_l) / seen;
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(row);
    if (log_file) log_file << format_log_row(row) << '\n' << std::flush;
    if (progress) *progress << format_log_row(row) << '\n' << std::flush;
    const bool last = epoch == cfg.epochs;
    if (!cfg.checkpoint_path.empty() &&
        (last || (cfg.checkpoint_every && epoch % cfg.checkpoint_every == 0))) {
      save_checkpoint(cfg.checkpoint_path, model, &adam);
    }
  }
  return result;
}

}  // namespace hacnn
