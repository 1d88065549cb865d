#include "geoadapt/adapt.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace geoadapt::adapt {

using json = nlohmann::json;

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

std::vector<const Tensor*> flat_grads(const std::vector<nn::Conv2dGrads>& grads) {
  std::vector<const Tensor*> out;
  out.reserve(grads.size() * 2);
  for (const auto& g : grads) {
    out.push_back(&g.dw);
    out.push_back(&g.db);
  }
  return out;
}

std::vector<augment::TransformPlan> sample_map_plans(const TrainState& state,
                                                     std::uint64_t role, int batch) {
  augment::AugmentationConfig cfg = state.config.aug;
  cfg.geometric_only = true;  // photometric ops are undefined on maps
  cfg.p = state.adaptive.p;
  std::vector<augment::TransformPlan> plans;
  plans.reserve(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    Rng rng = substream(state.config.seed,
                        {role, static_cast<std::uint64_t>(state.iter),
                         static_cast<std::uint64_t>(i)});
    plans.push_back(augment::sample_pipeline(cfg, rng));
  }
  return plans;
}

double fraction_matching(const Tensor& logits, bool positive) {
  if (logits.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (positive ? logits[i] > 0.0 : logits[i] < 0.0) ++hits;
  return static_cast<double>(hits) / static_cast<double>(logits.size());
}

// --- checkpoint binary helpers ---

constexpr char kMagic[4] = {'G', 'A', 'D', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void put_tensor(std::ostream& out, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}
void put_tensors(std::ostream& out, const std::vector<Tensor>& ts) {
  put_u64(out, ts.size());
  for (const auto& t : ts) put_tensor(out, t);
}
void put_f64s(std::ostream& out, const std::vector<double>& vs) {
  put_u64(out, vs.size());
  out.write(reinterpret_cast<const char*>(vs.data()),
            static_cast<std::streamsize>(vs.size() * sizeof(double)));
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
double get_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::string get_string(std::istream& in) {
  std::string s(get_u32(in), '\0');
  in.read(s.data(), static_cast<std::streamsize>(s.size()));
  return s;
}
Tensor get_tensor(std::istream& in) {
  const auto rank = get_u32(in);
  std::vector<int> shape(rank);
  for (auto& d : shape) d = static_cast<int>(get_u32(in));
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
  return t;
}
std::vector<Tensor> get_tensors(std::istream& in) {
  std::vector<Tensor> ts(get_u64(in));
  for (auto& t : ts) t = get_tensor(in);
  return ts;
}
std::vector<double> get_f64s(std::istream& in) {
  std::vector<double> vs(get_u64(in));
  in.read(reinterpret_cast<char*>(vs.data()),
          static_cast<std::streamsize>(vs.size() * sizeof(double)));
  return vs;
}

void copy_params_into(std::vector<Tensor*> dst, const std::vector<Tensor>& src,
                      const char* what) {
  if (dst.size() != src.size()) throw std::runtime_error(std::string(what) + ": param count");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (!dst[i]->same_shape(src[i]))
      throw std::runtime_error(std::string(what) + ": param shape mismatch");
    *dst[i] = src[i];
  }
}

}  // namespace

std::string mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::source_only: return "source_only";
    case TrainMode::advent: return "advent";
    case TrainMode::advent_aug: return "advent_aug";
  }
  throw std::invalid_argument("unknown train mode");
}

TrainMode mode_from_name(const std::string& name) {
  if (name == "source_only") return TrainMode::source_only;
  if (name == "advent") return TrainMode::advent;
  if (name == "advent_aug") return TrainMode::advent_aug;
  throw std::invalid_argument("unknown train mode: " + name);
}

void validate_config(const TrainConfig& config) {
  if (config.iterations < 1) throw std::invalid_argument("config: iterations must be >= 1");
  if (config.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (config.eval_every < 1) throw std::invalid_argument("config: eval_every must be >= 1");
  if (config.checkpoint_every < 0)
    throw std::invalid_argument("config: checkpoint_every must be >= 0");
  if (config.lambda_adv < 0.0 || config.lambda_ent < 0.0)
    throw std::invalid_argument("config: lambdas must be >= 0");
  if (config.seg_lr < 0.0 || config.disc_lr < 0.0)
    throw std::invalid_argument("config: learning rates must be >= 0");
  if (config.aug.p < 0.0 || config.aug.p > 1.0)
    throw std::invalid_argument("config: aug.p outside [0,1]");
  if (config.monitor.disc_acc_iters < 1)
    throw std::invalid_argument("config: monitor.disc_acc_iters must be >= 1");
  if (config.monitor.iou_collapse_fraction <= 0.0 ||
      config.monitor.iou_collapse_fraction > 1.0)
    throw std::invalid_argument("config: monitor.iou_collapse_fraction outside (0,1]");
}

double lr_schedule(double base_lr, int iter, int max_iter, double power) {
  if (iter < 0 || iter > max_iter) throw std::invalid_argument("lr_schedule: iter out of range");
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / max_iter, power);
}

double seg_loss(const Tensor& logits, const std::vector<Mask>& masks, Tensor* dlogits) {
  if (logits.rank() != 4) throw std::invalid_argument("seg_loss: expected [B,H,W,C]");
  const int b = logits.dim(0), h = logits.dim(1), w = logits.dim(2), c = logits.dim(3);
  if (masks.size() != static_cast<std::size_t>(b))
    throw std::invalid_argument("seg_loss: one mask per batch item required");
  if (dlogits) *dlogits = Tensor(logits.shape());

  const double inv_n = 1.0 / (static_cast<double>(b) * h * w);
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    const auto& mask = masks[static_cast<std::size_t>(i)];
    if (mask.h != h || mask.w != w) throw std::invalid_argument("seg_loss: mask shape");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double* z = logits.data() + ((static_cast<std::size_t>(i) * h + y) * w + x) * c;
        const int gt = mask.at(y, x);
        if (gt >= c) throw std::invalid_argument("seg_loss: class index out of range");
        double zmax = z[0];
        for (int k = 1; k < c; ++k) zmax = std::max(zmax, z[k]);
        double sum = 0.0;
        for (int k = 0; k < c; ++k) sum += std::exp(z[k] - zmax);
        const double lse = zmax + std::log(sum);
        total += lse - z[gt];
        if (dlogits) {
          double* g = dlogits->data() + ((static_cast<std::size_t>(i) * h + y) * w + x) * c;
          for (int k = 0; k < c; ++k)
            g[k] = (std::exp(z[k] - zmax) / sum - (k == gt ? 1.0 : 0.0)) * inv_n;
        }
      }
  }
  return total * inv_n;
}

AdversarialLosses adversarial_losses(const Tensor& disc_src_logits,
                                     const Tensor& disc_tgt_logits) {
  if (disc_src_logits.empty() || disc_tgt_logits.empty())
    throw std::invalid_argument("adversarial_losses: empty logits");
  double src_real = 0.0, tgt_fake = 0.0, tgt_real = 0.0;
  for (std::size_t i = 0; i < disc_src_logits.size(); ++i)
    src_real += softplus(-disc_src_logits[i]);
  for (std::size_t i = 0; i < disc_tgt_logits.size(); ++i) {
    tgt_fake += softplus(disc_tgt_logits[i]);
    tgt_real += softplus(-disc_tgt_logits[i]);
  }
  const double ns = static_cast<double>(disc_src_logits.size());
  const double nt = static_cast<double>(disc_tgt_logits.size());
  return {src_real / ns + tgt_fake / nt, tgt_real / nt};
}

Tensor bce_with_logits_grad(const Tensor& logits, double target) {
  Tensor grad(logits.shape());
  const double inv_n = 1.0 / static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    grad[i] = (sigmoid(logits[i]) - target) * inv_n;
  return grad;
}

void SgdMomentum::step(const std::vector<Tensor*>& params,
                       const std::vector<const Tensor*>& grads, double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("sgd: param/grad count");
  if (velocity.size() != params.size()) {
    velocity.clear();
    for (const auto* p : params) velocity.emplace_back(p->shape());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i];
    const Tensor& g = *grads[i];
    Tensor& v = velocity[i];
    check_same_shape(w, g, "sgd");
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = momentum * v[j] + (g[j] + weight_decay * w[j]);
      w[j] -= lr * v[j];
    }
  }
}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam: param/grad count");
  if (m.size() != params.size()) {
    m.clear();
    v.clear();
    for (const auto* p : params) {
      m.emplace_back(p->shape());
      v.emplace_back(p->shape());
    }
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i];
    const Tensor& g = *grads[i];
    check_same_shape(w, g, "adam");
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g[j];
      v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g[j] * g[j];
      w[j] -= lr * (m[i][j] / c1) / (std::sqrt(v[i][j] / c2) + eps);
    }
  }
}

std::string eval_point_to_jsonl(const EvalPoint& point, TrainMode mode) {
  json line{{"iter", point.iter},
            {"mode", mode_name(mode)},
            {"seg_loss", point.seg_loss},
            {"disc_acc", point.disc_acc},
            {"r_t", point.r_t ? json(*point.r_t) : json(nullptr)},
            {"p", point.p ? json(*point.p) : json(nullptr)},
            {"val_iou_target", point.val_iou_target},
            {"monitor", point.monitor}};
  return line.dump();
}

EvalPoint eval_point_from_jsonl(const std::string& text) {
  const json line = json::parse(text);
  EvalPoint point;
  point.iter = line.at("iter").get<int>();
  point.seg_loss = line.at("seg_loss").get<double>();
  point.disc_acc = line.at("disc_acc").get<double>();
  if (!line.at("r_t").is_null()) point.r_t = line.at("r_t").get<double>();
  if (!line.at("p").is_null()) point.p = line.at("p").get<double>();
  point.val_iou_target = line.at("val_iou_target").get<double>();
  point.monitor = line.at("monitor").get<std::string>();
  mode_from_name(line.at("mode").get<std::string>());  // schema check
  return point;
}

std::string monitor_name(MonitorKind kind) {
  switch (kind) {
    case MonitorKind::healthy: return "healthy";
    case MonitorKind::discriminator_overfit: return "discriminator_overfit";
    case MonitorKind::diverged: return "diverged";
  }
  throw std::invalid_argument("unknown monitor kind");
}

MonitorStatus divergence_monitor(const MetricsHistory& history,
                                 const MonitorThresholds& thresholds) {
  if (history.seg_loss.empty() && history.disc_loss.empty() && history.evals.empty())
    throw std::invalid_argument("divergence_monitor: empty history");

  for (std::size_t i = 0; i < history.seg_loss.size(); ++i)
    if (!std::isfinite(history.seg_loss[i]))
      return {MonitorKind::diverged,
              "non-finite seg loss at iter " + std::to_string(i + 1)};
  for (std::size_t i = 0; i < history.disc_loss.size(); ++i)
    if (!std::isfinite(history.disc_loss[i]))
      return {MonitorKind::diverged,
              "non-finite disc loss at iter " + std::to_string(i + 1)};

  double peak = 0.0;
  for (const auto& e : history.evals) {
    if (!std::isfinite(e.val_iou_target))
      return {MonitorKind::diverged, "non-finite val IoU at iter " + std::to_string(e.iter)};
    if (peak > 0.0 && e.val_iou_target < thresholds.iou_collapse_fraction * peak)
      return {MonitorKind::diverged,
              "val IoU " + std::to_string(e.val_iou_target) + " fell below " +
                  std::to_string(thresholds.iou_collapse_fraction) + " of peak " +
                  std::to_string(peak)};
    peak = std::max(peak, e.val_iou_target);
  }

  int run = 0;
  for (std::size_t i = 0; i < history.disc_acc.size(); ++i) {
    run = history.disc_acc[i] > thresholds.disc_acc_threshold ? run + 1 : 0;
    if (run >= thresholds.disc_acc_iters)
      return {MonitorKind::discriminator_overfit,
              "disc accuracy > " + std::to_string(thresholds.disc_acc_threshold) + " for " +
                  std::to_string(run) + " consecutive iters ending at " +
                  std::to_string(i + 1)};
  }
  return {MonitorKind::healthy, ""};
}

TrainState init_train_state(const TrainConfig& config, int class_count) {
  validate_config(config);
  TrainState state;
  state.config = config;

  models::SegmenterDescriptor seg_desc;
  seg_desc.class_count = class_count;
  seg_desc.init_seed = config.seed;
  state.segmenter = models::Segmenter::init(seg_desc);

  models::DiscriminatorDescriptor disc_desc;
  disc_desc.in_channels = class_count;
  disc_desc.init_seed = config.seed;
  state.discriminator = models::Discriminator::init(disc_desc);

  state.seg_opt.momentum = config.momentum;
  state.seg_opt.weight_decay = config.weight_decay;
  // the adaptive controller ramps from 0; fixed mode pins the configured p
  state.adaptive.p = config.adaptive_p ? 0.0 : config.aug.p;
  return state;
}

void train_step_source_only(TrainState& state, const geodata::Batch& src_batch) {
  const TrainConfig& cfg = state.config;
  models::SegmenterActs acts;
  const Tensor logits = state.segmenter.forward(src_batch.images, &acts);
  Tensor dlogits;
  const double loss = seg_loss(logits, src_batch.masks, &dlogits);

  std::vector<nn::Conv2dGrads> grads;
  state.segmenter.backward(acts, dlogits, grads);
  const double lr = lr_schedule(cfg.seg_lr, state.iter, cfg.iterations, cfg.poly_power);
  state.seg_opt.step(state.segmenter.params(), flat_grads(grads), lr);

  state.history.seg_loss.push_back(loss);
  ++state.iter;
}

void train_step_advent(TrainState& state, const geodata::Batch& src_batch,
                       const geodata::Batch& tgt_batch) {
  const TrainConfig& cfg = state.config;
  if (cfg.mode == TrainMode::source_only)
    throw std::invalid_argument("train_step_advent: config mode is source_only");
  if (tgt_batch.images.empty())
    throw std::invalid_argument("train_step_advent: missing target batch");
  const bool aug_mode = cfg.mode == TrainMode::advent_aug;

  // (1) segmenter forward on both domains
  models::SegmenterActs src_acts, tgt_acts;
  const Tensor src_logits = state.segmenter.forward(src_batch.images, &src_acts);
  const Tensor tgt_logits = state.segmenter.forward(tgt_batch.images, &tgt_acts);

  // (2) segmenter update; discriminator weights frozen. With both lambdas
  // inactive this path reduces exactly to the source-only step.
  Tensor dsrc_logits;
  const double sup_loss = seg_loss(src_logits, src_batch.masks, &dsrc_logits);
  std::vector<nn::Conv2dGrads> seg_grads;
  state.segmenter.backward(src_acts, dsrc_logits, seg_grads);

  Tensor tgt_probs;
  const bool need_adv = cfg.lambda_adv > 0.0;
  const bool need_ent = cfg.entropy_min_enabled && cfg.lambda_ent > 0.0;
  if (need_adv || need_ent) {
    tgt_probs = models::softmax_probs(tgt_logits);
    Tensor dtgt_logits(tgt_logits.shape());
    if (need_adv) {
      const Tensor maps = models::self_information_map(tgt_probs);
      std::vector<augment::TransformPlan> plans;
      Tensor disc_in = maps;
      if (aug_mode) {
        plans = sample_map_plans(state, rng_tag("advent/aug_seg"), maps.dim(0));
        disc_in = augment::augment_maps(maps, plans);
      }
      models::DiscriminatorActs disc_acts;
      const Tensor adv_logits = state.discriminator.forward(disc_in, &disc_acts);
      Tensor dmaps;
      state.discriminator.backward(disc_acts, bce_with_logits_grad(adv_logits, 1.0),
                                   nullptr, &dmaps);
      if (aug_mode) dmaps = augment::augment_maps_backward(dmaps, plans);
      const Tensor dadv = models::self_information_backward(tgt_probs, dmaps);
      for (std::size_t i = 0; i < dtgt_logits.size(); ++i)
        dtgt_logits[i] += cfg.lambda_adv * dadv[i];
    }
    if (need_ent) models::add_mean_entropy_grad(tgt_probs, cfg.lambda_ent, dtgt_logits);
    state.segmenter.backward(tgt_acts, dtgt_logits, seg_grads);
  }
  const double seg_lr = lr_schedule(cfg.seg_lr, state.iter, cfg.iterations, cfg.poly_power);
  state.seg_opt.step(state.segmenter.params(), flat_grads(seg_grads), seg_lr);

  // (3) discriminator update on maps detached from the segmenter graph
  const Tensor src_maps = models::self_information_map(models::softmax_probs(src_logits));
  if (tgt_probs.empty()) tgt_probs = models::softmax_probs(tgt_logits);
  const Tensor tgt_maps = models::self_information_map(tgt_probs);

  Tensor disc_src_in = src_maps, disc_tgt_in = tgt_maps;
  if (aug_mode) {
    disc_src_in = augment::augment_maps(
        src_maps, sample_map_plans(state, rng_tag("advent/aug_disc_src"), src_maps.dim(0)));
    disc_tgt_in = augment::augment_maps(
        tgt_maps, sample_map_plans(state, rng_tag("advent/aug_disc_tgt"), tgt_maps.dim(0)));
  }
  models::DiscriminatorActs src_dacts, tgt_dacts;
  const Tensor disc_src_logits = state.discriminator.forward(disc_src_in, &src_dacts);
  const Tensor disc_tgt_logits = state.discriminator.forward(disc_tgt_in, &tgt_dacts);
  const AdversarialLosses losses = adversarial_losses(disc_src_logits, disc_tgt_logits);

  std::vector<nn::Conv2dGrads> disc_grads;
  state.discriminator.backward(src_dacts, bce_with_logits_grad(disc_src_logits, 1.0),
                               &disc_grads, nullptr);
  state.discriminator.backward(tgt_dacts, bce_with_logits_grad(disc_tgt_logits, 0.0),
                               &disc_grads, nullptr);
  const double disc_lr = lr_schedule(cfg.disc_lr, state.iter, cfg.iterations, cfg.poly_power);
  state.disc_opt.step(state.discriminator.params(), flat_grads(disc_grads), disc_lr);

  const double disc_acc = 0.5 * (fraction_matching(disc_src_logits, true) +
                                 fraction_matching(disc_tgt_logits, false));

  // (4) adaptive p from discriminator signs on non-augmented real maps,
  // every 4 discriminator steps
  if (aug_mode && cfg.adaptive_p && (state.iter + 1) % 4 == 0) {
    const Tensor real_logits = state.discriminator.forward(src_maps, nullptr);
    state.adaptive = augment::update_probability(state.adaptive, real_logits);
  }

  // (5) monitor bookkeeping
  state.history.seg_loss.push_back(sup_loss);
  state.history.disc_loss.push_back(losses.disc);
  state.history.disc_acc.push_back(disc_acc);
  ++state.iter;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);

  const TrainConfig& c = state.config;
  put_string(out, mode_name(c.mode));
  put_u64(out, static_cast<std::uint64_t>(c.iterations));
  put_u64(out, static_cast<std::uint64_t>(c.batch_size));
  put_f64(out, c.seg_lr);
  put_f64(out, c.disc_lr);
  put_f64(out, c.momentum);
  put_f64(out, c.weight_decay);
  put_f64(out, c.poly_power);
  put_f64(out, c.lambda_adv);
  put_f64(out, c.lambda_ent);
  put_u32(out, c.entropy_min_enabled ? 1 : 0);
  put_u32(out, static_cast<std::uint32_t>(c.aug.ops.size()));
  for (auto op : c.aug.ops) put_string(out, augment::op_name(op));
  put_f64(out, c.aug.p);
  put_u32(out, c.aug.geometric_only ? 1 : 0);
  put_u32(out, c.adaptive_p ? 1 : 0);
  put_u64(out, c.seed);
  put_u64(out, static_cast<std::uint64_t>(c.eval_every));
  put_u64(out, static_cast<std::uint64_t>(c.checkpoint_every));
  put_f64(out, c.monitor.disc_acc_threshold);
  put_u64(out, static_cast<std::uint64_t>(c.monitor.disc_acc_iters));
  put_f64(out, c.monitor.iou_collapse_fraction);
  put_u32(out, static_cast<std::uint32_t>(state.segmenter.desc.class_count));

  put_u64(out, static_cast<std::uint64_t>(state.iter));

  const auto put_params =
      [&](const std::vector<std::pair<std::string, const Tensor*>>& named) {
        put_u64(out, named.size());
        for (const auto& [name, t] : named) put_tensor(out, *t);
      };
  put_params(state.segmenter.named_params());
  put_params(state.discriminator.named_params());

  put_tensors(out, state.seg_opt.velocity);
  put_u64(out, static_cast<std::uint64_t>(state.disc_opt.t));
  put_tensors(out, state.disc_opt.m);
  put_tensors(out, state.disc_opt.v);

  put_f64(out, state.adaptive.p);
  put_f64(out, state.adaptive.target_r);
  put_f64(out, state.adaptive.step);
  put_f64(out, state.adaptive.p_max);
  put_f64s(out, state.adaptive.window);
  put_u64(out, state.adaptive.window_head);

  put_f64s(out, state.history.seg_loss);
  put_f64s(out, state.history.disc_loss);
  put_f64s(out, state.history.disc_acc);
  put_u64(out, state.history.evals.size());
  for (const auto& e : state.history.evals) {
    put_u64(out, static_cast<std::uint64_t>(e.iter));
    put_f64(out, e.seg_loss);
    put_f64(out, e.disc_acc);
    put_u32(out, e.r_t ? 1 : 0);
    put_f64(out, e.r_t.value_or(0.0));
    put_u32(out, e.p ? 1 : 0);
    put_f64(out, e.p.value_or(0.0));
    put_f64(out, e.val_iou_target);
    put_string(out, e.monitor);
  }

  put_f64(out, state.best_val_iou);
  put_f64(out, state.best_val_background);
  put_u64(out, static_cast<std::uint64_t>(state.best_iter));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open checkpoint: " + path.string());
  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::invalid_argument("not a checkpoint file: " + path.string());
  if (get_u32(in) != kVersion)
    throw std::invalid_argument("unsupported checkpoint version: " + path.string());

  TrainConfig c;
  c.mode = mode_from_name(get_string(in));
  c.iterations = static_cast<int>(get_u64(in));
  c.batch_size = static_cast<int>(get_u64(in));
  c.seg_lr = get_f64(in);
  c.disc_lr = get_f64(in);
  c.momentum = get_f64(in);
  c.weight_decay = get_f64(in);
  c.poly_power = get_f64(in);
  c.lambda_adv = get_f64(in);
  c.lambda_ent = get_f64(in);
  c.entropy_min_enabled = get_u32(in) != 0;
  c.aug.ops.clear();
  const auto n_ops = get_u32(in);
  for (std::uint32_t i = 0; i < n_ops; ++i)
    c.aug.ops.push_back(augment::op_from_name(get_string(in)));
  c.aug.p = get_f64(in);
  c.aug.geometric_only = get_u32(in) != 0;
  c.adaptive_p = get_u32(in) != 0;
  c.seed = get_u64(in);
  c.eval_every = static_cast<int>(get_u64(in));
  c.checkpoint_every = static_cast<int>(get_u64(in));
  c.monitor.disc_acc_threshold = get_f64(in);
  c.monitor.disc_acc_iters = static_cast<int>(get_u64(in));
  c.monitor.iou_collapse_fraction = get_f64(in);
  const int class_count = static_cast<int>(get_u32(in));

  TrainState state = init_train_state(c, class_count);
  state.iter = static_cast<int>(get_u64(in));

  copy_params_into(state.segmenter.params(), get_tensors(in), "checkpoint segmenter");
  copy_params_into(state.discriminator.params(), get_tensors(in), "checkpoint discriminator");

  state.seg_opt.velocity = get_tensors(in);
  state.disc_opt.t = static_cast<std::int64_t>(get_u64(in));
  state.disc_opt.m = get_tensors(in);
  state.disc_opt.v = get_tensors(in);

  state.adaptive.p = get_f64(in);
  state.adaptive.target_r = get_f64(in);
  state.adaptive.step = get_f64(in);
  state.adaptive.p_max = get_f64(in);
  state.adaptive.window = get_f64s(in);
  state.adaptive.window_head = get_u64(in);

  state.history.seg_loss = get_f64s(in);
  state.history.disc_loss = get_f64s(in);
  state.history.disc_acc = get_f64s(in);
  const auto n_evals = get_u64(in);
  for (std::uint64_t i = 0; i < n_evals; ++i) {
    EvalPoint e;
    e.iter = static_cast<int>(get_u64(in));
    e.seg_loss = get_f64(in);
    e.disc_acc = get_f64(in);
    const bool has_rt = get_u32(in) != 0;
    const double rt = get_f64(in);
    if (has_rt) e.r_t = rt;
    const bool has_p = get_u32(in) != 0;
    const double p = get_f64(in);
    if (has_p) e.p = p;
    e.val_iou_target = get_f64(in);
    e.monitor = get_string(in);
    state.history.evals.push_back(std::move(e));
  }

  state.best_val_iou = get_f64(in);
  state.best_val_background = get_f64(in);
  state.best_iter = static_cast<int>(get_u64(in));
  if (!in) throw std::invalid_argument("truncated checkpoint: " + path.string());
  return state;
}

ExperimentResult run_experiment(const TrainConfig& config,
                                const std::vector<geodata::Manifest>& source_manifests,
                                const geodata::Manifest& target_manifest,
                                const std::filesystem::path& out_dir,
                                const std::string& benchmark_name,
                                const std::optional<std::filesystem::path>& resume) {
  validate_config(config);
  if (source_manifests.empty())
    throw std::invalid_argument("run_experiment: no source manifests");
  std::filesystem::create_directories(out_dir);

  const geodata::Manifest merged = source_manifests.size() == 1
                                       ? source_manifests.front()
                                       : geodata::merge_manifests(source_manifests);
  auto [src_train, src_val] = geodata::split(merged, 0.9, 0.1, config.seed);
  auto [tgt_train, tgt_val] = geodata::split(target_manifest, 0.9, 0.1, config.seed);
  if (src_val.entries.empty()) src_val = src_train;  // tiny smoke datasets
  if (tgt_val.entries.empty()) tgt_val = tgt_train;
  const int class_count = merged.class_count;

  TrainState state =
      resume ? load_checkpoint(*resume) : init_train_state(config, class_count);
  if (resume) {
    if (state.config.mode != config.mode || state.config.seed != config.seed ||
        state.config.iterations != config.iterations)
      throw std::invalid_argument("run_experiment: checkpoint does not match config");
  }

  // augmented mode also augments the supervised source pairs; target images
  // stay raw because their self-information maps are augmented downstream.
  // image-side ops are the exact geometric group only: interpolating warps
  // smear 64px tiles, photometric ops corrupt the palette cues that carry
  // class information on synthetic tiles, and zero-filled cutout patches
  // keep their building labels (there is no ignore class)
  std::optional<augment::AugmentationConfig> src_aug;
  if (config.mode == TrainMode::advent_aug) {
    augment::AugmentationConfig pair_cfg = config.aug;
    std::erase_if(pair_cfg.ops, [](augment::AugOp op) {
      return op != augment::AugOp::hflip && op != augment::AugOp::vflip &&
             op != augment::AugOp::rot90 && op != augment::AugOp::translate_int;
    });
    src_aug = pair_cfg;
  }
  geodata::BatchIterator src_it(src_train, config.batch_size,
                                derive_seed(config.seed, {rng_tag("data/source")}),
                                src_aug);
  geodata::BatchIterator tgt_it(tgt_train, config.batch_size,
                                derive_seed(config.seed, {rng_tag("data/target")}));
  src_it.seek(static_cast<std::size_t>(state.iter));
  tgt_it.seek(static_cast<std::size_t>(state.iter));

  ExperimentResult result;
  result.source_train = src_train;
  result.source_val = src_val;
  result.target_train = tgt_train;
  result.target_val = tgt_val;
  result.metrics_path = out_dir / "metrics.jsonl";
  result.final_checkpoint = out_dir / "final.ckpt";
  result.best_checkpoint = out_dir / "best.ckpt";
  result.record_path = out_dir / "record.json";

  // rewrite the log from history so a resumed run ends with the same bytes
  // as an uninterrupted one
  std::ofstream metrics(result.metrics_path, std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot open " + result.metrics_path.string());
  for (const auto& e : state.history.evals)
    metrics << eval_point_to_jsonl(e, config.mode) << "\n";
  metrics.flush();

  const auto window_mean = [](const std::vector<double>& v, std::size_t from) {
    if (v.size() <= from) return 0.0;
    double sum = 0.0;
    for (std::size_t i = from; i < v.size(); ++i) sum += v[i];
    return sum / static_cast<double>(v.size() - from);
  };

  while (state.iter < config.iterations) {
    // window means restart at the previous eval point (not the resume point)
    // so a resumed run logs the same values as an uninterrupted one
    const std::size_t loss_from =
        state.history.evals.empty()
            ? 0
            : static_cast<std::size_t>(state.history.evals.back().iter);
    const std::size_t acc_from = loss_from;
    const int window_start_iter = state.iter;
    // run up to the next eval point
    while (state.iter < config.iterations &&
           (state.iter == window_start_iter ||
            state.iter % config.eval_every != 0)) {
      const geodata::Batch src_batch = src_it.next();
      if (config.mode == TrainMode::source_only) {
        train_step_source_only(state, src_batch);
      } else {
        const geodata::Batch tgt_batch = tgt_it.next();
        train_step_advent(state, src_batch, tgt_batch);
      }
      if (config.checkpoint_every > 0 && state.iter % config.checkpoint_every == 0 &&
          state.iter < config.iterations) {
        save_checkpoint(state, out_dir / "last.ckpt");
      }
    }

    const auto val_ious = eval::dataset_iou(state.segmenter, tgt_val, class_count);
    EvalPoint point;
    point.iter = state.iter;
    point.seg_loss = window_mean(state.history.seg_loss, loss_from);
    point.disc_acc = window_mean(state.history.disc_acc, acc_from);
    if (!state.adaptive.window.empty()) point.r_t = state.adaptive.window_mean();
    if (config.mode == TrainMode::advent_aug) point.p = state.adaptive.p;
    point.val_iou_target = val_ious[1];
    state.history.evals.push_back(point);
    const MonitorStatus status = divergence_monitor(state.history, config.monitor);
    state.history.evals.back().monitor = monitor_name(status.kind);
    metrics << eval_point_to_jsonl(state.history.evals.back(), config.mode) << "\n";
    metrics.flush();

    if (val_ious[1] > state.best_val_iou) {
      state.best_val_iou = val_ious[1];
      state.best_val_background = val_ious[0];
      state.best_iter = state.iter;
      save_checkpoint(state, result.best_checkpoint);
    }
  }

  save_checkpoint(state, result.final_checkpoint);

  const MonitorStatus final_status = divergence_monitor(state.history, config.monitor);
  eval::MetricsRecord record;
  record.benchmark = benchmark_name;
  record.mode = mode_name(config.mode);
  record.seed = config.seed;
  record.iou_building = state.best_val_iou;
  record.iou_background = state.best_val_background;
  record.iterations = state.iter;
  record.monitor = monitor_name(final_status.kind);
  result.record = record;

  std::ofstream record_out(result.record_path, std::ios::trunc);
  record_out << eval::record_to_json(record) << "\n";

  result.state = std::move(state);
  return result;
}

}  // namespace geoadapt::adapt
