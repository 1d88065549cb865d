#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "geoadapt/nn.hpp"
#include "geoadapt/tensor.hpp"

namespace geoadapt::models {

inline constexpr double kLogEps = 1e-12;

/// Compact fully convolutional encoder-decoder: four stride-2 k4 encoder
/// stages, three k3 decoder stages with skip connections, a final bilinear
/// x2 upsample and a 1x1 projection to class logits at input resolution.
struct SegmenterDescriptor {
  std::vector<int> encoder_channels{32, 64, 128, 256};
  std::vector<int> decoder_channels{128, 64, 32};
  int in_channels = 3;
  int class_count = 2;
  std::uint64_t init_seed = 0;
};

struct SegmenterActs {
  Tensor input;
  std::vector<Tensor> enc_pre;   // pre-activation per encoder stage
  std::vector<Tensor> enc_out;   // post-ReLU per encoder stage
  std::vector<Tensor> dec_in;    // concat(upsample, skip) per decoder stage
  std::vector<Tensor> dec_pre;
  std::vector<Tensor> dec_out;
  Tensor head_in;                // final upsample output
};

struct Segmenter {
  SegmenterDescriptor desc;
  std::vector<nn::Conv2d> encoder;
  std::vector<nn::Conv2d> decoder;
  nn::Conv2d head;

  static Segmenter init(const SegmenterDescriptor& desc);

  /// images [B,H,W,3] with H, W divisible by 16 -> logits [B,H,W,C].
  Tensor forward(const Tensor& images, SegmenterActs* acts = nullptr) const;
  void backward(const SegmenterActs& acts, const Tensor& dlogits,
                std::vector<nn::Conv2dGrads>& grads) const;

  std::vector<std::pair<std::string, const Tensor*>> named_params() const;
  std::vector<Tensor*> params();
  std::vector<nn::Conv2d*> layers();
  std::size_t param_count() const;
};

/// Patch discriminator over self-information maps: four stride-2 k4 stages
/// (leaky ReLU 0.2) plus a stride-2 k4 single-channel head, so the output
/// grid is ceil(H/32) x ceil(W/32).
struct DiscriminatorDescriptor {
  std::vector<int> channels{64, 128, 256, 512};
  int in_channels = 2;  // class count
  double leaky_slope = 0.2;
  std::uint64_t init_seed = 0;
};

struct DiscriminatorActs {
  Tensor input;
  std::vector<Tensor> pre;
  std::vector<Tensor> out;
};

struct Discriminator {
  DiscriminatorDescriptor desc;
  std::vector<nn::Conv2d> stages;
  nn::Conv2d head;

  static Discriminator init(const DiscriminatorDescriptor& desc);

  /// maps [B,H,W,C] -> patch logits [B,ceil(H/32),ceil(W/32)].
  Tensor forward(const Tensor& maps, DiscriminatorActs* acts = nullptr) const;
  /// dmaps is optional (adversarial path); grads optional (frozen pass).
  void backward(const DiscriminatorActs& acts, const Tensor& dlogits,
                std::vector<nn::Conv2dGrads>* grads, Tensor* dmaps) const;

  std::vector<std::pair<std::string, const Tensor*>> named_params() const;
  std::vector<Tensor*> params();
  std::vector<nn::Conv2d*> layers();
  std::size_t param_count() const;
};

/// Numerically stabilized softmax over the channel axis of [B,H,W,C].
Tensor softmax_probs(const Tensor& logits);

/// Per-pixel normalized entropy, -(1/log C) * sum_c P log(P+eps), in [0,1].
/// Computed as the channel sum of self_information_map, so the channel-sum
/// identity between the two holds exactly.
Tensor entropy_map(const Tensor& probs);

/// Per-channel weighted self-information, -P log(P+eps) / log C.
Tensor self_information_map(const Tensor& probs);

/// Gradient of a loss through self_information_map(softmax_probs(logits)).
/// dmaps holds dL/dS; returns dL/dlogits. The mean-entropy objective is the
/// special case dmaps = 1/(B*H*W) everywhere.
Tensor self_information_backward(const Tensor& probs, const Tensor& dmaps);

double mean_entropy(const Tensor& probs);
/// Adds the gradient of weight * mean(entropy_map(softmax(logits))) to dlogits.
void add_mean_entropy_grad(const Tensor& probs, double weight, Tensor& dlogits);

}  // namespace geoadapt::models
