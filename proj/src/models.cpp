#include "geoadapt/models.hpp"

#include <cmath>
#include <stdexcept>

namespace geoadapt::models {

using nn::Conv2d;
using nn::Conv2dGrads;

Segmenter Segmenter::init(const SegmenterDescriptor& desc) {
  if (desc.encoder_channels.size() != 4 || desc.decoder_channels.size() != 3)
    throw std::invalid_argument("segmenter: expected 4 encoder and 3 decoder stages");
  Segmenter net;
  net.desc = desc;
  Rng rng = substream(desc.init_seed, {rng_tag("init/segmenter")});
  int in = desc.in_channels;
  for (int ch : desc.encoder_channels) {
    net.encoder.emplace_back(in, ch, 4, 2);
    net.encoder.back().init(rng);
    in = ch;
  }
  // decoder stage i consumes upsample(previous) ++ encoder skip
  const auto& enc = desc.encoder_channels;
  int carry = enc[3];
  for (int i = 0; i < 3; ++i) {
    const int skip = enc[2 - i];
    net.decoder.emplace_back(carry + skip, desc.decoder_channels[i], 3, 1);
    net.decoder.back().init(rng);
    carry = desc.decoder_channels[i];
  }
  net.head = Conv2d(carry, desc.class_count, 1, 1);
  net.head.init(rng);
  return net;
}

Tensor Segmenter::forward(const Tensor& images, SegmenterActs* acts) const {
  if (images.rank() != 4 || images.dim(3) != desc.in_channels)
    throw std::invalid_argument("segmenter: expected [B,H,W," +
                                std::to_string(desc.in_channels) + "], got " +
                                images.shape_str());
  if (images.dim(1) % 16 != 0 || images.dim(2) % 16 != 0)
    throw std::invalid_argument("segmenter: H and W must be divisible by 16");

  SegmenterActs local;
  SegmenterActs& a = acts ? *acts : local;
  a.enc_pre.clear();
  a.enc_out.clear();
  a.dec_in.clear();
  a.dec_pre.clear();
  a.dec_out.clear();
  if (acts) a.input = images;

  Tensor x = images;
  for (const auto& layer : encoder) {
    Tensor pre = nn::conv2d_forward(layer, x);
    x = nn::leaky_relu(pre, 0.0);
    a.enc_pre.push_back(std::move(pre));
    a.enc_out.push_back(x);
  }
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    Tensor up = nn::upsample2x_forward(x);
    Tensor cat = nn::concat_channels(up, a.enc_out[2 - i]);
    Tensor pre = nn::conv2d_forward(decoder[i], cat);
    x = nn::leaky_relu(pre, 0.0);
    a.dec_in.push_back(std::move(cat));
    a.dec_pre.push_back(std::move(pre));
    a.dec_out.push_back(x);
  }
  Tensor up = nn::upsample2x_forward(x);
  Tensor logits = nn::conv2d_forward(head, up);
  if (acts) a.head_in = std::move(up);
  return logits;
}

void Segmenter::backward(const SegmenterActs& acts, const Tensor& dlogits,
                         std::vector<Conv2dGrads>& grads) const {
  const std::size_t n_layers = encoder.size() + decoder.size() + 1;
  if (grads.size() != n_layers) grads.assign(n_layers, Conv2dGrads{});

  Tensor d_head_in;
  nn::conv2d_backward(head, acts.head_in, dlogits, &d_head_in, &grads[n_layers - 1]);
  Tensor dx = nn::upsample2x_backward(d_head_in, acts.dec_out[2].dim(1), acts.dec_out[2].dim(2));

  std::vector<Tensor> d_skip(encoder.size());  // gradient into encoder outputs via skips
  for (int i = 2; i >= 0; --i) {
    const Tensor dpre = nn::leaky_relu_backward(acts.dec_pre[i], dx, 0.0);
    Tensor dcat;
    nn::conv2d_backward(decoder[i], acts.dec_in[i], dpre, &dcat, &grads[encoder.size() + i]);
    Tensor dup, dskip;
    const int up_channels = acts.dec_in[i].dim(3) - acts.enc_out[2 - i].dim(3);
    nn::split_channels_backward(dcat, up_channels, &dup, &dskip);
    d_skip[2 - i] = std::move(dskip);
    const Tensor& below = (i == 0) ? acts.enc_out[3] : acts.dec_out[i - 1];
    dx = nn::upsample2x_backward(dup, below.dim(1), below.dim(2));
  }

  for (int i = 3; i >= 0; --i) {
    if (i < 3) {
      // add skip gradient flowing directly into this encoder output
      check_same_shape(dx, d_skip[i], "segmenter skip grad");
      for (std::size_t j = 0; j < dx.size(); ++j) dx[j] += d_skip[i][j];
    }
    const Tensor dpre = nn::leaky_relu_backward(acts.enc_pre[i], dx, 0.0);
    const Tensor& in = (i == 0) ? acts.input : acts.enc_out[i - 1];
    const bool need_dx = i > 0;
    nn::conv2d_backward(encoder[i], in, dpre, need_dx ? &dx : nullptr, &grads[i]);
  }
}

std::vector<std::pair<std::string, const Tensor*>> Segmenter::named_params() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    out.emplace_back("enc" + std::to_string(i) + ".w", &encoder[i].w);
    out.emplace_back("enc" + std::to_string(i) + ".b", &encoder[i].b);
  }
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    out.emplace_back("dec" + std::to_string(i) + ".w", &decoder[i].w);
    out.emplace_back("dec" + std::to_string(i) + ".b", &decoder[i].b);
  }
  out.emplace_back("head.w", &head.w);
  out.emplace_back("head.b", &head.b);
  return out;
}

std::vector<Tensor*> Segmenter::params() {
  std::vector<Tensor*> out;
  for (auto* layer : layers()) {
    out.push_back(&layer->w);
    out.push_back(&layer->b);
  }
  return out;
}

std::vector<Conv2d*> Segmenter::layers() {
  std::vector<Conv2d*> out;
  for (auto& l : encoder) out.push_back(&l);
  for (auto& l : decoder) out.push_back(&l);
  out.push_back(&head);
  return out;
}

std::size_t Segmenter::param_count() const {
  std::size_t n = 0;
  for (const auto& l : encoder) n += l.param_count();
  for (const auto& l : decoder) n += l.param_count();
  return n + head.param_count();
}

Discriminator Discriminator::init(const DiscriminatorDescriptor& desc) {
  if (desc.channels.size() != 4)
    throw std::invalid_argument("discriminator: expected 4 stages");
  Discriminator net;
  net.desc = desc;
  Rng rng = substream(desc.init_seed, {rng_tag("init/discriminator")});
  int in = desc.in_channels;
  for (int ch : desc.channels) {
    net.stages.emplace_back(in, ch, 4, 2);
    net.stages.back().init(rng);
    in = ch;
  }
  net.head = Conv2d(in, 1, 4, 2);
  net.head.init(rng);
  return net;
}

Tensor Discriminator::forward(const Tensor& maps, DiscriminatorActs* acts) const {
  if (maps.rank() != 4 || maps.dim(3) != desc.in_channels)
    throw std::invalid_argument("discriminator: expected [B,H,W," +
                                std::to_string(desc.in_channels) + "], got " +
                                maps.shape_str());
  DiscriminatorActs local;
  DiscriminatorActs& a = acts ? *acts : local;
  a.pre.clear();
  a.out.clear();
  if (acts) a.input = maps;

  Tensor x = maps;
  for (const auto& layer : stages) {
    Tensor pre = nn::conv2d_forward(layer, x);
    x = nn::leaky_relu(pre, desc.leaky_slope);
    a.pre.push_back(std::move(pre));
    a.out.push_back(x);
  }
  Tensor logits4 = nn::conv2d_forward(head, x);  // [B,h,w,1]
  Tensor logits({logits4.dim(0), logits4.dim(1), logits4.dim(2)});
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = logits4[i];
  return logits;
}

void Discriminator::backward(const DiscriminatorActs& acts, const Tensor& dlogits,
                             std::vector<Conv2dGrads>* grads, Tensor* dmaps) const {
  if (grads && grads->size() != stages.size() + 1)
    grads->assign(stages.size() + 1, Conv2dGrads{});
  Tensor dl4({dlogits.dim(0), dlogits.dim(1), dlogits.dim(2), 1});
  for (std::size_t i = 0; i < dlogits.size(); ++i) dl4[i] = dlogits[i];

  Tensor dx;
  nn::conv2d_backward(head, acts.out.back(), dl4, &dx,
                      grads ? &(*grads)[stages.size()] : nullptr);
  for (int i = static_cast<int>(stages.size()) - 1; i >= 0; --i) {
    const Tensor dpre = nn::leaky_relu_backward(acts.pre[i], dx, desc.leaky_slope);
    const Tensor& in = (i == 0) ? acts.input : acts.out[i - 1];
    Tensor* dst = (i == 0) ? dmaps : &dx;
    nn::conv2d_backward(stages[i], in, dpre, dst, grads ? &(*grads)[i] : nullptr);
  }
}

std::vector<std::pair<std::string, const Tensor*>> Discriminator::named_params() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    out.emplace_back("disc" + std::to_string(i) + ".w", &stages[i].w);
    out.emplace_back("disc" + std::to_string(i) + ".b", &stages[i].b);
  }
  out.emplace_back("disc_head.w", &head.w);
  out.emplace_back("disc_head.b", &head.b);
  return out;
}

std::vector<Tensor*> Discriminator::params() {
  std::vector<Tensor*> out;
  for (auto* layer : layers()) {
    out.push_back(&layer->w);
    out.push_back(&layer->b);
  }
  return out;
}

std::vector<Conv2d*> Discriminator::layers() {
  std::vector<Conv2d*> out;
  for (auto& l : stages) out.push_back(&l);
  out.push_back(&head);
  return out;
}

std::size_t Discriminator::param_count() const {
  std::size_t n = 0;
  for (const auto& l : stages) n += l.param_count();
  return n + head.param_count();
}

Tensor softmax_probs(const Tensor& logits) {
  if (logits.rank() != 4) throw std::invalid_argument("softmax_probs: expected [B,H,W,C]");
  const int c = logits.dim(3);
  Tensor probs(logits.shape());
  const std::size_t pixels = logits.size() / static_cast<std::size_t>(c);
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* z = logits.data() + p * c;
    double* out = probs.data() + p * c;
    double zmax = z[0];
    for (int i = 1; i < c; ++i) zmax = std::max(zmax, z[i]);
    double sum = 0.0;
    for (int i = 0; i < c; ++i) {
      out[i] = std::exp(z[i] - zmax);
      sum += out[i];
    }
    for (int i = 0; i < c; ++i) out[i] /= sum;
  }
  return probs;
}

Tensor self_information_map(const Tensor& probs) {
  if (probs.rank() != 4) throw std::invalid_argument("self_information_map: expected [B,H,W,C]");
  const double norm = std::log(static_cast<double>(probs.dim(3)));
  Tensor maps(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i)
    maps[i] = -probs[i] * std::log(probs[i] + kLogEps) / norm;
  return maps;
}

Tensor entropy_map(const Tensor& probs) {
  if (probs.rank() != 4) throw std::invalid_argument("entropy_map: expected [B,H,W,C]");
  const int c = probs.dim(3);
  const Tensor maps = self_information_map(probs);
  Tensor ent({probs.dim(0), probs.dim(1), probs.dim(2)});
  for (std::size_t p = 0; p < ent.size(); ++p) {
    const double* m = maps.data() + p * c;
    double sum = 0.0;
    for (int i = 0; i < c; ++i) sum += m[i];
    ent[p] = sum;
  }
  return ent;
}

Tensor self_information_backward(const Tensor& probs, const Tensor& dmaps) {
  check_same_shape(probs, dmaps, "self_information_backward");
  const int c = probs.dim(3);
  const double norm = std::log(static_cast<double>(c));
  Tensor dlogits(probs.shape());
  const std::size_t pixels = probs.size() / static_cast<std::size_t>(c);
  for (std::size_t px = 0; px < pixels; ++px) {
    const double* p = probs.data() + px * c;
    const double* dm = dmaps.data() + px * c;
    double* dz = dlogits.data() + px * c;
    // dL/dp_i through s_i = -p_i log(p_i + eps) / log C
    double dot = 0.0;
    for (int i = 0; i < c; ++i) {
      const double dLdp =
          dm[i] * (-(std::log(p[i] + kLogEps) + p[i] / (p[i] + kLogEps)) / norm);
      dz[i] = dLdp;  // reuse as scratch
      dot += dLdp * p[i];
    }
    for (int i = 0; i < c; ++i) dz[i] = p[i] * (dz[i] - dot);
  }
  return dlogits;
}

double mean_entropy(const Tensor& probs) {
  const Tensor ent = entropy_map(probs);
  double sum = 0.0;
  for (std::size_t i = 0; i < ent.size(); ++i) sum += ent[i];
  return sum / static_cast<double>(ent.size());
}

void add_mean_entropy_grad(const Tensor& probs, double weight, Tensor& dlogits) {
  check_same_shape(probs, dlogits, "add_mean_entropy_grad");
  const int c = probs.dim(3);
  const std::size_t pixels = probs.size() / static_cast<std::size_t>(c);
  Tensor dmaps = Tensor::full(probs.shape(), weight / static_cast<double>(pixels));
  const Tensor dz = self_information_backward(probs, dmaps);
  for (std::size_t i = 0; i < dlogits.size(); ++i) dlogits[i] += dz[i];
}

}  // namespace geoadapt::models
