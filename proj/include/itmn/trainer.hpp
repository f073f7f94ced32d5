#pragma once

// SGD training loop: per-image forward passes accumulated into micro-batch
// means, gradient accumulation across micro-batches, cosine learning-rate
// decay, and deterministic per-epoch shuffling and augmentation so a run
// resumed at an epoch boundary is bit-identical to an uninterrupted one.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "itmn/loss.hpp"
#include "itmn/model.hpp"
#include "itmn/rng.hpp"
#include "itmn/synthdata.hpp"

namespace itmn {

// Raised when the loss leaves the representable range; the CLI maps this to
// its numeric-failure exit code.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double cosine_lr(int epoch, int epochs, double base_lr) {
  if (epochs <= 0) throw std::invalid_argument("cosine_lr: epochs must be positive");
  if (epoch < 0 || epoch >= epochs)
    throw std::invalid_argument("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                                std::to_string(epochs) + ")");
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * epoch / epochs));
}

struct TrainConfig {
  double base_lr = 0.001;
  int epochs = 200;
  int micro_batch = 8;
  int accumulation_steps = 4;  // effective batch = micro_batch * accumulation_steps
  double momentum = 0.0;
  std::uint64_t seed = 0;
  bool augment = true;
  LossConfig loss;
};

struct TrainLogEntry {
  int epoch;
  double lr, cls, loc, total;
};

inline std::string train_log_to_csv(const std::vector<TrainLogEntry>& log) {
  std::ostringstream os;
  os << "epoch,lr,cls_loss,loc_loss,total_loss\n";
  os.precision(9);
  for (const auto& e : log) os << e.epoch << "," << e.lr << "," << e.cls << "," << e.loc << "," << e.total << "\n";
  return os.str();
}

// Hooks around each micro-batch, used by quantization-aware fine-tuning to
// swap fake-quantized weights in before the forward pass and restore the
// float master copies before the update.
template <typename T>
struct StepHooks {
  std::function<void(Detector<T>&)> pre_forward;
  std::function<void(Detector<T>&)> post_backward;
};

template <typename T>
class Trainer {
 public:
  TrainConfig cfg;
  std::map<std::string, std::vector<T>> velocity;  // momentum state, by parameter name
  std::vector<TrainLogEntry> log;

  explicit Trainer(const TrainConfig& c) : cfg(c) {
    if (c.micro_batch < 1 || c.accumulation_steps < 1)
      throw std::invalid_argument("trainer: micro_batch and accumulation_steps must be positive");
  }

  // Deterministic augmentation seed for a sample: depends only on the run
  // seed, the epoch, and the sample's dataset index.
  static std::uint64_t augment_seed(std::uint64_t run_seed, int epoch, std::size_t index) {
    return splitmix64(splitmix64(run_seed ^ 0x5851f42d4c957f2dULL) ^
                      (static_cast<std::uint64_t>(epoch) << 32 ^ index));
  }

  // Trains epochs [start_epoch, end_epoch); end_epoch -1 means cfg.epochs.
  // Stopping at an epoch boundary and resuming from a restored checkpoint is
  // bit-identical to an uninterrupted run.
  void fit(Detector<T>& model, const Dataset& ds, const DefaultBoxSet& boxes, int start_epoch = 0,
           StepHooks<T> hooks = {}, int end_epoch = -1) {
    if (ds.pairs.empty()) throw std::invalid_argument("trainer: empty dataset");
    if (end_epoch < 0) end_epoch = cfg.epochs;
    if (start_epoch < 0 || start_epoch > cfg.epochs || end_epoch > cfg.epochs)
      throw std::invalid_argument("trainer: epoch range out of bounds");
    const std::size_t n = ds.pairs.size();

    for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
      const double lr = cosine_lr(epoch, cfg.epochs, cfg.base_lr);
      std::vector<std::size_t> order(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      Rng shuffle_rng = Rng::child(cfg.seed, 3, static_cast<std::uint64_t>(epoch));
      for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = shuffle_rng.uniform_int(i);
        std::swap(order[i - 1], order[j]);
      }

      double ep_cls = 0, ep_loc = 0, ep_total = 0;
      std::size_t images_seen = 0;
      int accum_count = 0;
      model.training = true;

      for (std::size_t start = 0; start < n; start += cfg.micro_batch) {
        const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.micro_batch));
        if (hooks.pre_forward) hooks.pre_forward(model);
        {
          Tape<T> tape;
          Tensor<T> sum;
          for (std::size_t p = start; p < end; ++p) {
            const std::size_t idx = order[p];
            ImagePair pair = cfg.augment ? augment(ds.pairs[idx], augment_seed(cfg.seed, epoch, idx))
                                         : ds.pairs[idx];
            DetectorOut<T> out = model.forward(pair);
            LossTerms<T> terms = total_loss(out.deltas, out.scores, pair.gts, boxes, cfg.loss);
            ep_cls += terms.cls;
            ep_loc += terms.loc;
            sum = sum.defined() ? add(sum, terms.total) : terms.total;
          }
          Tensor<T> mean = scale(sum, T(1) / static_cast<T>(end - start));
          if (!std::isfinite(static_cast<double>(mean.item())))
            throw NumericError("trainer: non-finite loss at epoch " + std::to_string(epoch) +
                                     ", micro-batch starting at position " + std::to_string(start));
          ep_total += static_cast<double>(mean.item()) * (end - start);
          images_seen += end - start;
          tape.backward(mean);
        }
        if (hooks.post_backward) hooks.post_backward(model);
        ++accum_count;
        if (accum_count == cfg.accumulation_steps || end == n) {
          apply_update(model, lr, accum_count);
          accum_count = 0;
        }
      }

      log.push_back({epoch, lr, ep_cls / images_seen, ep_loc / images_seen, ep_total / images_seen});
    }
    // Re-estimate batch-norm inference statistics once the run completes.
    // The per-step EMA sees only within-image variance (every forward is a
    // single image), which collapses at small spatial extents; an exact pass
    // over the unaugmented training set restores usable inference stats.
    // Skipped for a no-op resume of a finished run, whose stats are final.
    if (end_epoch == cfg.epochs && start_epoch < end_epoch) reestimate_batchnorm(model, ds);
    model.training = false;
  }

  static void reestimate_batchnorm(Detector<T>& model, const Dataset& ds) {
    model.visit_bn([](BatchNormLayer<T>& bn) { bn.begin_stats(); });
    model.training = true;
    for (const auto& pair : ds.pairs) model.forward(pair);
    model.visit_bn([](BatchNormLayer<T>& bn) { bn.finish_stats(); });
    model.training = false;
  }

 private:
  void apply_update(Detector<T>& model, double lr, int accum_count) {
    const T inv = T(1) / static_cast<T>(accum_count);
    const T lrt = static_cast<T>(lr);
    const T mom = static_cast<T>(cfg.momentum);
    model.visit_params([&](const std::string& name, Tensor<T>& p) {
      std::vector<T>& g = p.node()->grad;
      if (g.size() != p.numel()) return;  // parameter never touched by backward
      if (cfg.momentum != 0.0) {
        std::vector<T>& v = velocity[name];
        if (v.size() != p.numel()) v.assign(p.numel(), T(0));
        for (std::size_t i = 0; i < p.numel(); ++i) {
          v[i] = mom * v[i] + g[i] * inv;
          p.data()[i] -= lrt * v[i];
        }
      } else {
        for (std::size_t i = 0; i < p.numel(); ++i) p.data()[i] -= lrt * g[i] * inv;
      }
      p.zero_grad();
    });
  }
};

}  // namespace itmn
