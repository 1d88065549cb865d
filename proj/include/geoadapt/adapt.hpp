#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geoadapt/augment.hpp"
#include "geoadapt/eval.hpp"
#include "geoadapt/geodata.hpp"
#include "geoadapt/models.hpp"
#include "geoadapt/tensor.hpp"

namespace geoadapt::adapt {

enum class TrainMode { source_only, advent, advent_aug };

std::string mode_name(TrainMode mode);
TrainMode mode_from_name(const std::string& name);

struct MonitorThresholds {
  double disc_acc_threshold = 0.95;
  int disc_acc_iters = 200;          // consecutive iterations above threshold
  double iou_collapse_fraction = 0.25;  // of the running peak
};

struct TrainConfig {
  TrainMode mode = TrainMode::source_only;
  int iterations = 5000;
  int batch_size = 4;
  double seg_lr = 2.5e-4;
  double disc_lr = 1e-4;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double poly_power = 0.9;
  double lambda_adv = 1e-3;
  double lambda_ent = 1e-3;
  bool entropy_min_enabled = false;
  augment::AugmentationConfig aug;  // discriminator-input augmentation (advent_aug)
  bool adaptive_p = false;          // drive aug.p with the sign controller
  std::uint64_t seed = 0;
  int eval_every = 250;
  int checkpoint_every = 0;  // 0 disables the rolling last.ckpt snapshot
  MonitorThresholds monitor;
};

void validate_config(const TrainConfig& config);

/// base_lr * (1 - iter/max_iter)^power.
double lr_schedule(double base_lr, int iter, int max_iter, double power);

/// Mean per-pixel cross-entropy over [B,H,W,C] logits vs class masks.
/// When dlogits is non-null it receives dL/dlogits.
double seg_loss(const Tensor& logits, const std::vector<Mask>& masks,
                Tensor* dlogits = nullptr);

struct AdversarialLosses {
  double disc;  // BCE(src, real) + BCE(tgt, fake)
  double adv;   // BCE(tgt, real), the segmenter's fooling objective
};

/// Source patches are "real", target patches "fake"; log-sum-exp stable.
AdversarialLosses adversarial_losses(const Tensor& disc_src_logits,
                                     const Tensor& disc_tgt_logits);

/// d(mean BCE(x, target))/dx elementwise: (sigmoid(x) - target) / count.
Tensor bce_with_logits_grad(const Tensor& logits, double target);

struct SgdMomentum {
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<Tensor> velocity;  // lazily sized to the parameter list

  /// v = momentum*v + (g + wd*w); w -= lr*v.
  void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
            double lr);
};

struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
            double lr);
};

struct EvalPoint {
  int iter = 0;
  double seg_loss = 0.0;      // mean since the previous eval point
  double disc_acc = 0.0;
  std::optional<double> r_t;
  std::optional<double> p;
  double val_iou_target = 0.0;
  std::string monitor = "healthy";
};

struct MetricsHistory {
  std::vector<double> seg_loss;   // one entry per iteration
  std::vector<double> disc_loss;  // per iteration, advent modes only
  std::vector<double> disc_acc;   // per iteration, advent modes only
  std::vector<EvalPoint> evals;
};

std::string eval_point_to_jsonl(const EvalPoint& point, TrainMode mode);
EvalPoint eval_point_from_jsonl(const std::string& line);

enum class MonitorKind { healthy, discriminator_overfit, diverged };

struct MonitorStatus {
  MonitorKind kind = MonitorKind::healthy;
  std::string evidence;
};

std::string monitor_name(MonitorKind kind);

/// Pure function of logged history: diverged on any non-finite tracked loss
/// or a val IoU below iou_collapse_fraction of its running peak; otherwise
/// discriminator_overfit once disc accuracy exceeds the threshold for
/// disc_acc_iters consecutive iterations; otherwise healthy.
MonitorStatus divergence_monitor(const MetricsHistory& history,
                                 const MonitorThresholds& thresholds);

struct TrainState {
  TrainConfig config;
  int iter = 0;
  models::Segmenter segmenter;
  models::Discriminator discriminator;
  SgdMomentum seg_opt;
  Adam disc_opt;
  augment::AdaptiveState adaptive;
  MetricsHistory history;
  double best_val_iou = -1.0;         // building-class target-val IoU
  double best_val_background = 0.0;   // background IoU at the same eval point
  int best_iter = -1;
};

/// Fresh state: networks seeded from config.seed, optimizers empty. All RNG
/// during training is derived from (config.seed, role, iter), so the
/// iteration counter is the complete RNG state.
TrainState init_train_state(const TrainConfig& config, int class_count = 2);

/// One supervised SGD step on the labeled batch.
void train_step_source_only(TrainState& state, const geodata::Batch& src_batch);

/// One adversarial step: (1) segmenter forward on both domains, (2)
/// segmenter update on seg_loss + lambda_adv*L_adv (+ optional entropy term)
/// with the discriminator frozen, (3) discriminator update on detached
/// self-information maps (augmented in advent_aug mode), (4) adaptive-p
/// controller on schedule, (5) monitor bookkeeping.
void train_step_advent(TrainState& state, const geodata::Batch& src_batch,
                       const geodata::Batch& tgt_batch);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

struct ExperimentResult {
  eval::MetricsRecord record;
  TrainState state;
  geodata::Manifest source_train, source_val, target_train, target_val;
  std::filesystem::path metrics_path, final_checkpoint, best_checkpoint, record_path;
};

/// Full training run: merges sources, carves 90/10 train/val splits from
/// both sides, trains config.iterations steps with periodic target-val IoU
/// evaluation, appends one JSONL line per eval point, and writes best +
/// final checkpoints plus a record.json. The record's IoU fields carry the
/// best target-val IoU seen.
ExperimentResult run_experiment(const TrainConfig& config,
                                const std::vector<geodata::Manifest>& source_manifests,
                                const geodata::Manifest& target_manifest,
                                const std::filesystem::path& out_dir,
                                const std::string& benchmark_name,
                                const std::optional<std::filesystem::path>& resume = {});

}  // namespace geoadapt::adapt
