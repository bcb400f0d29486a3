#pragma once

// Joint training of the equivariant network on coordinates, types and
// affinity, plus the sectioned binary checkpoint.

#include "paflow/common.hpp"
#include "paflow/egnn.hpp"
#include "paflow/geomdata.hpp"
#include "paflow/optim.hpp"
#include "paflow/sampler.hpp"
#include "paflow/sizer.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace paflow {

struct TrainConfig {
  double lambda_a = 100.0;
  double omega_y = 1.0;
  double lr = 5e-4;
  double lr_decay = 0.95;
  int lr_patience = 15;
  double min_lr = 1e-6;
  double beta1 = 0.95;
  double beta2 = 0.999;
  int batch_size = 4;
  double clip_norm = 8.0;
  int max_steps = 2000;
  std::uint64_t seed = 0;
  /// Steps between validation evaluations (plateau decay counts these).
  int eval_every = 50;
  double validation_fraction = 0.05;
  /// (t, noise) draws per validation record.
  int validation_draws = 4;
  /// Steps between checkpoint writes; 0 disables.
  int checkpoint_every = 0;
  std::string checkpoint_path;

  void validate() const;
};

struct LossTerms {
  double coords = 0.0;    // L_x
  double types = 0.0;     // L_a
  double affinity = 0.0;  // L_y
  double total = 0.0;     // L_x + lambda L_a + omega L_y
};

struct StepReport {
  LossTerms loss;
  double grad_norm = 0.0;  // before clipping
  double lr = 0.0;
};

/// Loss of one record at flow time t with coordinate noise and type draw
/// taken from `seed`. When `grads` is non-null the parameter gradients of
/// `total` are added into it (same layout as params.tensors).
LossTerms record_loss(const EgnnParams& params, const ComplexRecord& record, double t, std::uint64_t seed,
                      const TrainConfig& config, const Schedules& schedules, std::vector<Matrix>* grads = nullptr);

/// One optimizer step on `batch`: t ~ U(0, 1) per record, mean loss over the
/// batch, clipped gradients, Adam update of params.tensors.
StepReport train_step(EgnnParams& params, AdamState& adam, double lr, const std::vector<const ComplexRecord*>& batch,
                      const TrainConfig& config, std::uint64_t seed, const Schedules& schedules = Schedules::defaults());

struct ValidationPoint {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainHistory {
  std::vector<StepReport> steps;
  std::vector<ValidationPoint> validation;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  EgnnParams egnn;
  std::optional<SizerParams> sizer;
  AdamState adam;
  double lr = 0.0;
  PlateauDecay decay;
  std::int64_t step = 0;
  /// Resolved run configuration as `key = value` lines.
  std::string config_text;
  TrainHistory history;
};

std::string checkpoint_bytes(const Checkpoint& ckpt);
Checkpoint checkpoint_from_bytes(const std::string& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Deterministic split: the first `count` entries of a seeded permutation are
/// the validation records.
struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};
DataSplit split_dataset(std::size_t n, double validation_fraction, std::uint64_t seed);

/// Mean total loss over the validation records (fixed t and noise per record).
double validation_loss(const EgnnParams& params, const std::vector<ComplexRecord>& dataset,
                       const std::vector<std::size_t>& validation, const TrainConfig& config,
                       const Schedules& schedules = Schedules::defaults());

/// Called after every optimizer step; returning false stops training.
using TrainCallback = std::function<bool(const Checkpoint&)>;

/// Trains from `start` (a fresh checkpoint or one loaded from disk) until
/// config.max_steps total steps. Validation runs at step 0 and every
/// eval_every steps; the learning rate decays on validation plateaus.
Checkpoint train(const std::vector<ComplexRecord>& dataset, const TrainConfig& config, Checkpoint start,
                 const Schedules& schedules = Schedules::defaults(), const TrainCallback& callback = {});

/// Fresh checkpoint with initialized network weights.
Checkpoint initial_checkpoint(const EgnnConfig& egnn, const TrainConfig& config);

}  // namespace paflow
