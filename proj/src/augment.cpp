#include "geoadapt/augment.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <stdexcept>

namespace geoadapt::augment {

using json = nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Affine {
  // source = M * (dst - center) + center, row-major 2x2
  double m00, m01, m10, m11;
};

Affine inverse_rotation(double degrees) {
  const double t = -degrees * kPi / 180.0;
  return {std::cos(t), -std::sin(t), std::sin(t), std::cos(t)};
}

Affine inverse_scale(double factor) { return {1.0 / factor, 0.0, 0.0, 1.0 / factor}; }

std::array<double, 3> mean_color(const Tensor& image) {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  const std::size_t pixels = image.size() / 3;
  for (std::size_t p = 0; p < pixels; ++p)
    for (int c = 0; c < 3; ++c) mean[c] += image[p * 3 + c];
  for (int c = 0; c < 3; ++c) mean[c] /= static_cast<double>(pixels);
  return mean;
}

Tensor warp_image(const Tensor& img, const Affine& a) {
  const int h = img.dim(0), w = img.dim(1), ch = img.dim(2);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const auto fill = mean_color(img);
  Tensor out({h, w, ch});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double sx = a.m00 * (x - cx) + a.m01 * (y - cy) + cx;
      const double sy = a.m10 * (x - cx) + a.m11 * (y - cy) + cy;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < ch; ++c) {
        auto tap = [&](int yy, int xx) {
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) return fill[static_cast<std::size_t>(c)];
          return img.at(yy, xx, c);
        };
        out.at(y, x, c) = (1 - fy) * ((1 - fx) * tap(y0, x0) + fx * tap(y0, x0 + 1)) +
                          fy * ((1 - fx) * tap(y0 + 1, x0) + fx * tap(y0 + 1, x0 + 1));
      }
    }
  return out;
}

Mask warp_mask(const Mask& mask, const Affine& a) {
  const int h = mask.h, w = mask.w;
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  Mask out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double sx = a.m00 * (x - cx) + a.m01 * (y - cy) + cx;
      const double sy = a.m10 * (x - cx) + a.m11 * (y - cy) + cy;
      const int xi = static_cast<int>(std::floor(sx + 0.5));
      const int yi = static_cast<int>(std::floor(sy + 0.5));
      out.at(y, x) = (yi < 0 || yi >= h || xi < 0 || xi >= w) ? 0 : mask.at(yi, xi);
    }
  return out;
}

void require_square(int h, int w, const char* what) {
  if (h != w) throw std::invalid_argument(std::string(what) + ": rot90 requires square input");
}

int cutout_side(int h) { return std::max(1, static_cast<int>(std::lround(0.25 * h))); }

struct CutoutBox {
  int y0, x0, side;
};

CutoutBox cutout_box(const PlannedOp& op, int h, int w) {
  const int side = cutout_side(h);
  const int y0 = static_cast<int>(std::lround(op.a * (h - side)));
  const int x0 = static_cast<int>(std::lround(op.b * (w - side)));
  return {y0, x0, side};
}

// Linear single-op forward on one [H,W,C] map slice (zero fill).
void map_op_forward(const PlannedOp& p, const double* in, double* out, int h, int w, int c) {
  const std::size_t n = static_cast<std::size_t>(h) * w * c;
  auto src = [&](int y, int x, int cc) -> double {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return in[(static_cast<std::size_t>(y) * w + x) * c + cc];
  };
  auto dst = [&](int y, int x, int cc) -> double& {
    return out[(static_cast<std::size_t>(y) * w + x) * c + cc];
  };
  switch (p.op) {
    case AugOp::hflip:
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int cc = 0; cc < c; ++cc) dst(y, x, cc) = src(y, w - 1 - x, cc);
      return;
    case AugOp::vflip:
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int cc = 0; cc < c; ++cc) dst(y, x, cc) = src(h - 1 - y, x, cc);
      return;
    case AugOp::rot90: {
      require_square(h, w, "augment_maps");
      const int k = static_cast<int>(p.a) & 3;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          int sy = y, sx = x;
          for (int i = 0; i < k; ++i) {
            const int ny = sx, nx = h - 1 - sy;
            sy = ny;
            sx = nx;
          }
          for (int cc = 0; cc < c; ++cc) dst(y, x, cc) = src(sy, sx, cc);
        }
      return;
    }
    case AugOp::translate_int: {
      const int dx = static_cast<int>(p.a), dy = static_cast<int>(p.b);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int cc = 0; cc < c; ++cc) dst(y, x, cc) = src(y - dy, x - dx, cc);
      return;
    }
    case AugOp::rotate_arbitrary:
    case AugOp::scale_iso: {
      const Affine a =
          p.op == AugOp::rotate_arbitrary ? inverse_rotation(p.a) : inverse_scale(p.a);
      const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double sx = a.m00 * (x - cx) + a.m01 * (y - cy) + cx;
          const double sy = a.m10 * (x - cx) + a.m11 * (y - cy) + cy;
          const int x0 = static_cast<int>(std::floor(sx));
          const int y0 = static_cast<int>(std::floor(sy));
          const double fx = sx - x0, fy = sy - y0;
          for (int cc = 0; cc < c; ++cc)
            dst(y, x, cc) =
                (1 - fy) * ((1 - fx) * src(y0, x0, cc) + fx * src(y0, x0 + 1, cc)) +
                fy * ((1 - fx) * src(y0 + 1, x0, cc) + fx * src(y0 + 1, x0 + 1, cc));
        }
      return;
    }
    case AugOp::cutout: {
      const CutoutBox box = cutout_box(p, h, w);
      for (std::size_t i = 0; i < n; ++i) out[i] = in[i];
      for (int y = box.y0; y < box.y0 + box.side; ++y)
        for (int x = box.x0; x < box.x0 + box.side; ++x)
          for (int cc = 0; cc < c; ++cc) dst(y, x, cc) = 0.0;
      return;
    }
    default:
      throw std::invalid_argument("augment_maps: photometric op " + op_name(p.op) +
                                  " is undefined on self-information maps");
  }
}

// Transpose of map_op_forward: scatter dL/dout into dL/din.
void map_op_backward(const PlannedOp& p, const double* dout, double* din, int h, int w, int c) {
  auto out_at = [&](int y, int x, int cc) -> double {
    return dout[(static_cast<std::size_t>(y) * w + x) * c + cc];
  };
  auto add = [&](int y, int x, int cc, double g) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    din[(static_cast<std::size_t>(y) * w + x) * c + cc] += g;
  };
  switch (p.op) {
    case AugOp::hflip:
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int cc = 0; cc < c; ++cc) add(y, w - 1 - x, cc, out_at(y, x, cc));
      return;
    case AugOp::vflip:
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int cc = 0; cc < c; ++cc) add(h - 1 - y, x, cc, out_at(y, x, cc));
      return;
    case AugOp::rot90: {
      const int k = static_cast<int>(p.a) & 3;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          int sy = y, sx = x;
          for (int i = 0; i < k; ++i) {
            const int ny = sx, nx = h - 1 - sy;
            sy = ny;
            sx = nx;
          }
          for (int cc = 0; cc < c; ++cc) add(sy, sx, cc, out_at(y, x, cc));
        }
      return;
    }
    case AugOp::translate_int: {
      const int dx = static_cast<int>(p.a), dy = static_cast<int>(p.b);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int cc = 0; cc < c; ++cc) add(y - dy, x - dx, cc, out_at(y, x, cc));
      return;
    }
    case AugOp::rotate_arbitrary:
    case AugOp::scale_iso: {
      const Affine a =
          p.op == AugOp::rotate_arbitrary ? inverse_rotation(p.a) : inverse_scale(p.a);
      const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double sx = a.m00 * (x - cx) + a.m01 * (y - cy) + cx;
          const double sy = a.m10 * (x - cx) + a.m11 * (y - cy) + cy;
          const int x0 = static_cast<int>(std::floor(sx));
          const int y0 = static_cast<int>(std::floor(sy));
          const double fx = sx - x0, fy = sy - y0;
          for (int cc = 0; cc < c; ++cc) {
            const double g = out_at(y, x, cc);
            add(y0, x0, cc, (1 - fy) * (1 - fx) * g);
            add(y0, x0 + 1, cc, (1 - fy) * fx * g);
            add(y0 + 1, x0, cc, fy * (1 - fx) * g);
            add(y0 + 1, x0 + 1, cc, fy * fx * g);
          }
        }
      return;
    }
    case AugOp::cutout: {
      const CutoutBox box = cutout_box(p, h, w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const bool cut = y >= box.y0 && y < box.y0 + box.side && x >= box.x0 &&
                           x < box.x0 + box.side;
          if (cut) continue;
          for (int cc = 0; cc < c; ++cc) add(y, x, cc, out_at(y, x, cc));
        }
      return;
    }
    default:
      throw std::invalid_argument("augment_maps_backward: photometric op");
  }
}

}  // namespace

std::string op_name(AugOp op) {
  switch (op) {
    case AugOp::hflip: return "hflip";
    case AugOp::vflip: return "vflip";
    case AugOp::rot90: return "rot90";
    case AugOp::translate_int: return "translate_int";
    case AugOp::rotate_arbitrary: return "rotate_arbitrary";
    case AugOp::scale_iso: return "scale_iso";
    case AugOp::brightness: return "brightness";
    case AugOp::contrast: return "contrast";
    case AugOp::hue_shift: return "hue_shift";
    case AugOp::cutout: return "cutout";
  }
  throw std::invalid_argument("unknown augmentation op");
}

AugOp op_from_name(const std::string& name) {
  for (AugOp op : default_ops())
    if (op_name(op) == name) return op;
  throw std::invalid_argument("unknown augmentation op: " + name);
}

bool is_geometric(AugOp op) {
  switch (op) {
    case AugOp::hflip:
    case AugOp::vflip:
    case AugOp::rot90:
    case AugOp::translate_int:
    case AugOp::rotate_arbitrary:
    case AugOp::scale_iso:
      return true;
    default:
      return false;
  }
}

bool is_map_compatible(AugOp op) { return is_geometric(op) || op == AugOp::cutout; }

std::vector<AugOp> default_ops() {
  return {AugOp::hflip,      AugOp::vflip,    AugOp::rot90,    AugOp::translate_int,
          AugOp::rotate_arbitrary, AugOp::scale_iso, AugOp::brightness, AugOp::contrast,
          AugOp::hue_shift,  AugOp::cutout};
}

std::string TransformPlan::to_json() const {
  json arr = json::array();
  for (const auto& p : ops) {
    json o{{"op", op_name(p.op)}};
    switch (p.op) {
      case AugOp::rot90: o["k"] = static_cast<int>(p.a); break;
      case AugOp::translate_int:
        o["dx"] = static_cast<int>(p.a);
        o["dy"] = static_cast<int>(p.b);
        break;
      case AugOp::rotate_arbitrary: o["degrees"] = p.a; break;
      case AugOp::scale_iso: o["factor"] = p.a; break;
      case AugOp::brightness: o["delta"] = p.a; break;
      case AugOp::contrast: o["factor"] = p.a; break;
      case AugOp::hue_shift: o["turns"] = p.a; break;
      case AugOp::cutout:
        o["fy"] = p.a;
        o["fx"] = p.b;
        break;
      default: break;
    }
    arr.push_back(o);
  }
  return arr.dump();
}

TransformPlan TransformPlan::from_json(const std::string& text) {
  TransformPlan plan;
  for (const auto& o : json::parse(text)) {
    PlannedOp p{op_from_name(o.at("op").get<std::string>())};
    switch (p.op) {
      case AugOp::rot90: p.a = o.at("k").get<int>(); break;
      case AugOp::translate_int:
        p.a = o.at("dx").get<int>();
        p.b = o.at("dy").get<int>();
        break;
      case AugOp::rotate_arbitrary: p.a = o.at("degrees").get<double>(); break;
      case AugOp::scale_iso: p.a = o.at("factor").get<double>(); break;
      case AugOp::brightness: p.a = o.at("delta").get<double>(); break;
      case AugOp::contrast: p.a = o.at("factor").get<double>(); break;
      case AugOp::hue_shift: p.a = o.at("turns").get<double>(); break;
      case AugOp::cutout:
        p.a = o.at("fy").get<double>();
        p.b = o.at("fx").get<double>();
        break;
      default: break;
    }
    plan.ops.push_back(p);
  }
  return plan;
}

TransformPlan sample_pipeline(const AugmentationConfig& config, Rng& rng) {
  if (config.ops.empty()) throw std::invalid_argument("sample_pipeline: empty op set");
  if (config.p < 0.0 || config.p > 1.0)
    throw std::invalid_argument("sample_pipeline: p outside [0,1]");
  TransformPlan plan;
  for (AugOp op : config.ops) {
    if (config.geometric_only && !is_map_compatible(op)) continue;
    if (!rng.bernoulli(config.p)) continue;
    PlannedOp p{op};
    switch (op) {
      case AugOp::rot90: p.a = static_cast<double>(1 + rng.uniform_int(3)); break;
      case AugOp::translate_int:
        p.a = static_cast<double>(rng.uniform_int(-8, 8));
        p.b = static_cast<double>(rng.uniform_int(-8, 8));
        break;
      case AugOp::rotate_arbitrary: p.a = rng.uniform(-30.0, 30.0); break;
      case AugOp::scale_iso: p.a = std::exp(rng.uniform(std::log(0.8), std::log(1.25))); break;
      case AugOp::brightness: p.a = rng.uniform(-0.2, 0.2); break;
      case AugOp::contrast: p.a = rng.uniform(0.75, 1.33); break;
      case AugOp::hue_shift: p.a = rng.uniform(-0.1, 0.1); break;
      case AugOp::cutout:
        p.a = rng.uniform();
        p.b = rng.uniform();
        break;
      default: break;
    }
    plan.ops.push_back(p);
  }
  return plan;
}

void augment_pair(const Tensor& image, const Mask& mask, const TransformPlan& plan,
                  Tensor* image_out, Mask* mask_out) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw std::invalid_argument("augment_pair: expected image [H,W,3]");
  if (image.dim(0) != mask.h || image.dim(1) != mask.w)
    throw std::invalid_argument("augment_pair: image/mask shape mismatch");

  Tensor img = image;
  Mask msk = mask;
  const int h = mask.h, w = mask.w;

  for (const auto& p : plan.ops) {
    switch (p.op) {
      case AugOp::hflip: {
        Tensor io(img.shape());
        Mask mo(h, w);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            mo.at(y, x) = msk.at(y, w - 1 - x);
            for (int c = 0; c < 3; ++c) io.at(y, x, c) = img.at(y, w - 1 - x, c);
          }
        img = std::move(io);
        msk = std::move(mo);
        break;
      }
      case AugOp::vflip: {
        Tensor io(img.shape());
        Mask mo(h, w);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            mo.at(y, x) = msk.at(h - 1 - y, x);
            for (int c = 0; c < 3; ++c) io.at(y, x, c) = img.at(h - 1 - y, x, c);
          }
        img = std::move(io);
        msk = std::move(mo);
        break;
      }
      case AugOp::rot90: {
        require_square(h, w, "augment_pair");
        const int k = static_cast<int>(p.a) & 3;
        Tensor io(img.shape());
        Mask mo(h, w);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            int sy = y, sx = x;
            for (int i = 0; i < k; ++i) {
              const int ny = sx, nx = h - 1 - sy;
              sy = ny;
              sx = nx;
            }
            mo.at(y, x) = msk.at(sy, sx);
            for (int c = 0; c < 3; ++c) io.at(y, x, c) = img.at(sy, sx, c);
          }
        img = std::move(io);
        msk = std::move(mo);
        break;
      }
      case AugOp::translate_int: {
        const int dx = static_cast<int>(p.a), dy = static_cast<int>(p.b);
        const auto fill = mean_color(img);
        Tensor io(img.shape());
        Mask mo(h, w);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const int sy = y - dy, sx = x - dx;
            if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
              mo.at(y, x) = 0;
              for (int c = 0; c < 3; ++c) io.at(y, x, c) = fill[static_cast<std::size_t>(c)];
            } else {
              mo.at(y, x) = msk.at(sy, sx);
              for (int c = 0; c < 3; ++c) io.at(y, x, c) = img.at(sy, sx, c);
            }
          }
        img = std::move(io);
        msk = std::move(mo);
        break;
      }
      case AugOp::rotate_arbitrary: {
        const Affine a = inverse_rotation(p.a);
        img = warp_image(img, a);
        msk = warp_mask(msk, a);
        break;
      }
      case AugOp::scale_iso: {
        const Affine a = inverse_scale(p.a);
        img = warp_image(img, a);
        msk = warp_mask(msk, a);
        break;
      }
      case AugOp::brightness:
        for (std::size_t i = 0; i < img.size(); ++i)
          img[i] = std::clamp(img[i] + p.a, 0.0, 1.0);
        break;
      case AugOp::contrast:
        for (std::size_t i = 0; i < img.size(); ++i)
          img[i] = std::clamp(0.5 + p.a * (img[i] - 0.5), 0.0, 1.0);
        break;
      case AugOp::hue_shift: {
        // rotation of the color cube about the gray axis
        const double t = p.a * 2.0 * kPi;
        const double ct = std::cos(t), st = std::sin(t);
        const double k1 = (1.0 - ct) / 3.0;
        const double k2 = st / std::sqrt(3.0);
        const double m[3][3] = {{ct + k1, k1 - k2, k1 + k2},
                                {k1 + k2, ct + k1, k1 - k2},
                                {k1 - k2, k1 + k2, ct + k1}};
        const std::size_t pixels = img.size() / 3;
        for (std::size_t px = 0; px < pixels; ++px) {
          double* v = img.data() + px * 3;
          const double r = v[0], g = v[1], b = v[2];
          for (int c = 0; c < 3; ++c)
            v[c] = std::clamp(m[c][0] * r + m[c][1] * g + m[c][2] * b, 0.0, 1.0);
        }
        break;
      }
      case AugOp::cutout: {
        const CutoutBox box = cutout_box(p, h, w);
        for (int y = box.y0; y < box.y0 + box.side; ++y)
          for (int x = box.x0; x < box.x0 + box.side; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.0;
        break;
      }
    }
  }
  *image_out = std::move(img);
  *mask_out = std::move(msk);
}

Tensor augment_maps(const Tensor& maps, const std::vector<TransformPlan>& plans) {
  if (maps.rank() != 4) throw std::invalid_argument("augment_maps: expected [B,H,W,C]");
  if (plans.size() != static_cast<std::size_t>(maps.dim(0)))
    throw std::invalid_argument("augment_maps: one plan per batch item required");
  const int h = maps.dim(1), w = maps.dim(2), c = maps.dim(3);
  const std::size_t slice = static_cast<std::size_t>(h) * w * c;
  for (const auto& plan : plans)
    for (const auto& p : plan.ops)
      if (!is_map_compatible(p.op))
        throw std::invalid_argument("augment_maps: photometric op " + op_name(p.op) +
                                    " is undefined on self-information maps");

  Tensor out = maps;
  std::vector<double> buf(slice);
  for (int item = 0; item < maps.dim(0); ++item) {
    double* x = out.data() + static_cast<std::size_t>(item) * slice;
    for (const auto& p : plans[item].ops) {
      map_op_forward(p, x, buf.data(), h, w, c);
      std::copy(buf.begin(), buf.end(), x);
    }
  }
  return out;
}

Tensor augment_maps_backward(const Tensor& dmaps, const std::vector<TransformPlan>& plans) {
  if (dmaps.rank() != 4) throw std::invalid_argument("augment_maps_backward: expected [B,H,W,C]");
  if (plans.size() != static_cast<std::size_t>(dmaps.dim(0)))
    throw std::invalid_argument("augment_maps_backward: one plan per batch item required");
  const int h = dmaps.dim(1), w = dmaps.dim(2), c = dmaps.dim(3);
  const std::size_t slice = static_cast<std::size_t>(h) * w * c;

  Tensor dx = dmaps;
  std::vector<double> buf(slice);
  for (int item = 0; item < dmaps.dim(0); ++item) {
    double* g = dx.data() + static_cast<std::size_t>(item) * slice;
    for (auto it = plans[item].ops.rbegin(); it != plans[item].ops.rend(); ++it) {
      std::fill(buf.begin(), buf.end(), 0.0);
      map_op_backward(*it, g, buf.data(), h, w, c);
      std::copy(buf.begin(), buf.end(), g);
    }
  }
  return dx;
}

void AdaptiveState::push_sign(double value) {
  if (window.size() < window_capacity) {
    window.push_back(value);
  } else {
    window[window_head] = value;
    window_head = (window_head + 1) % window_capacity;
  }
}

double AdaptiveState::window_mean() const {
  if (window.empty()) return 0.0;
  double sum = 0.0;
  for (double v : window) sum += v;
  return sum / static_cast<double>(window.size());
}

AdaptiveState update_probability(AdaptiveState state, const Tensor& real_logits) {
  if (real_logits.empty()) return state;  // no-op by contract
  for (std::size_t i = 0; i < real_logits.size(); ++i) {
    const double x = real_logits[i];
    if (!std::isfinite(x)) throw std::invalid_argument("update_probability: non-finite logit");
    state.push_sign(x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
  }
  const double r_t = state.window_mean();
  state.p += (r_t > state.target_r) ? state.step : -state.step;
  state.p = std::clamp(state.p, 0.0, state.p_max);
  return state;
}

}  // namespace geoadapt::augment
