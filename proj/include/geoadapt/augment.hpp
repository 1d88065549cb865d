#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geoadapt/image.hpp"
#include "geoadapt/rng.hpp"
#include "geoadapt/tensor.hpp"

namespace geoadapt::augment {

enum class AugOp {
  hflip,
  vflip,
  rot90,
  translate_int,
  rotate_arbitrary,
  scale_iso,
  brightness,
  contrast,
  hue_shift,
  cutout,
};

std::string op_name(AugOp op);
AugOp op_from_name(const std::string& name);

/// Geometric ops act on pixel positions and apply to image and mask alike.
bool is_geometric(AugOp op);
/// Ops that are meaningful on self-information maps: geometric ops plus
/// cutout. Photometric ops are undefined there and are rejected.
bool is_map_compatible(AugOp op);

std::vector<AugOp> default_ops();

struct AugmentationConfig {
  std::vector<AugOp> ops = default_ops();
  double p = 0.6;
  bool geometric_only = false;
};

struct PlannedOp {
  AugOp op;
  // Parameter slots; meaning depends on op:
  //   rot90: a = k (1..3)
  //   translate_int: a = dx, b = dy (pixels)
  //   rotate_arbitrary: a = angle in degrees
  //   scale_iso: a = factor
  //   brightness: a = delta;  contrast: a = factor;  hue_shift: a = turns
  //   cutout: a, b = fractional position of the square in [0,1)
  double a = 0.0;
  double b = 0.0;
};

struct TransformPlan {
  std::vector<PlannedOp> ops;

  bool empty() const { return ops.empty(); }
  std::string to_json() const;
  static TransformPlan from_json(const std::string& text);
};

/// One Bernoulli(p) draw per configured op, parameter draws for ops that
/// fired. With geometric_only set, photometric ops are skipped entirely
/// (no RNG consumed for them).
TransformPlan sample_pipeline(const AugmentationConfig& config, Rng& rng);

/// Applies the plan to a registered image/mask pair. Geometric ops hit both
/// (bilinear vs nearest resampling), photometric ops and cutout hit the
/// image only. Out-of-frame fill: class 0 for the mask, the mean color of
/// the op's input for the image.
void augment_pair(const Tensor& image, const Mask& mask, const TransformPlan& plan,
                  Tensor* image_out, Mask* mask_out);

/// Applies per-item plans to a [B,H,W,C] batch of maps. Every op is linear
/// in the input (zero fill), so gradients pass through exactly via
/// augment_maps_backward. Throws if a plan carries a photometric op.
Tensor augment_maps(const Tensor& maps, const std::vector<TransformPlan>& plans);

/// Transpose of augment_maps for the same plans: dL/dinput from dL/doutput.
Tensor augment_maps_backward(const Tensor& dmaps, const std::vector<TransformPlan>& plans);

/// Adaptive per-op probability controller driven by the sign of the
/// discriminator's logits on non-augmented real inputs.
struct AdaptiveState {
  double p = 0.0;
  double target_r = 0.6;
  double step = 0.005;
  double p_max = 0.85;
  std::vector<double> window;  // ring buffer of recent sign values
  std::size_t window_capacity = 256;
  std::size_t window_head = 0;

  void push_sign(double value);
  double window_mean() const;
};

/// Pushes sign(logit) for every patch logit, recomputes the running mean
/// r_t, then nudges p by +/- step toward keeping r_t at target_r, clamped
/// to [0, p_max]. An empty batch is a no-op.
AdaptiveState update_probability(AdaptiveState state, const Tensor& real_logits);

}  // namespace geoadapt::augment
