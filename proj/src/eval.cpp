#include "geoadapt/eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace geoadapt::eval {

namespace {

constexpr double kPaletteBackground[3] = {0.13, 0.13, 0.16};
constexpr double kPaletteBuilding[3] = {0.95, 0.80, 0.20};

std::string format2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string format2_signed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%+.2f", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

std::int64_t Confusion::total() const {
  std::int64_t sum = 0;
  for (auto v : counts) sum += v;
  return sum;
}

Confusion confusion_counts(const Mask& pred, const Mask& gt, int class_count) {
  Confusion acc(class_count);
  accumulate_confusion(acc, pred, gt);
  return acc;
}

void accumulate_confusion(Confusion& acc, const Mask& pred, const Mask& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw std::invalid_argument("confusion_counts: shape mismatch");
  for (std::size_t i = 0; i < gt.v.size(); ++i) {
    const int g = gt.v[i], p = pred.v[i];
    if (g >= acc.class_count || p >= acc.class_count)
      throw std::invalid_argument("confusion_counts: class index out of range");
    ++acc.at(g, p);
  }
}

double iou(const Confusion& counts, int c) {
  if (c < 0 || c >= counts.class_count) throw std::invalid_argument("iou: bad class index");
  const std::int64_t tp = counts.at(c, c);
  std::int64_t fp = 0, fn = 0;
  for (int i = 0; i < counts.class_count; ++i) {
    if (i == c) continue;
    fp += counts.at(i, c);
    fn += counts.at(c, i);
  }
  const std::int64_t uni = tp + fp + fn;
  if (uni == 0) return 1.0;  // class absent from pred and gt alike
  return static_cast<double>(tp) / static_cast<double>(uni);
}

std::vector<double> per_class_iou(const Confusion& counts) {
  std::vector<double> out(static_cast<std::size_t>(counts.class_count));
  for (int c = 0; c < counts.class_count; ++c) out[static_cast<std::size_t>(c)] = iou(counts, c);
  return out;
}

Mask predict_mask(const models::Segmenter& net, const Tensor& image) {
  if (image.rank() != 3) throw std::invalid_argument("predict_mask: expected [H,W,3]");
  Tensor batch({1, image.dim(0), image.dim(1), image.dim(2)});
  std::copy(image.data(), image.data() + image.size(), batch.data());
  const Tensor logits = net.forward(batch, nullptr);
  const int h = logits.dim(1), w = logits.dim(2), c = logits.dim(3);
  Mask mask(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int best = 0;
      for (int k = 1; k < c; ++k)
        if (logits.at(0, y, x, k) > logits.at(0, y, x, best)) best = k;
      mask.at(y, x) = static_cast<std::uint8_t>(best);
    }
  return mask;
}

std::vector<double> dataset_iou(const models::Segmenter& net,
                                const geodata::Manifest& manifest, int class_count) {
  if (manifest.entries.empty()) throw std::invalid_argument("dataset_iou: empty manifest");
  Confusion acc(class_count);
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const geodata::Sample s = geodata::load_sample(manifest, i);
    accumulate_confusion(acc, predict_mask(net, s.image), s.mask);
  }
  return per_class_iou(acc);
}

double delta_iou(double adapted, double source_only) { return adapted - source_only; }

std::string records_to_csv(const std::vector<MetricsRecord>& records) {
  std::string out = "benchmark,mode,seed,iou_building,iou_background,delta_iou\n";
  for (const auto& r : records) {
    out += r.benchmark + "," + r.mode + "," + std::to_string(r.seed) + "," +
           format2(r.iou_building) + "," + format2(r.iou_background) + ",";
    if (r.delta_iou) out += format2_signed(*r.delta_iou);
    out += "\n";
  }
  return out;
}

std::vector<MetricsRecord> records_from_csv(const std::string& csv) {
  std::stringstream ss(csv);
  std::string line;
  if (!std::getline(ss, line) ||
      line != "benchmark,mode,seed,iou_building,iou_background,delta_iou")
    throw std::invalid_argument("records_from_csv: bad header");
  std::vector<MetricsRecord> records;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 6) throw std::invalid_argument("records_from_csv: bad row");
    MetricsRecord r;
    r.benchmark = cells[0];
    r.mode = cells[1];
    r.seed = std::stoull(cells[2]);
    r.iou_building = std::stod(cells[3]);
    r.iou_background = std::stod(cells[4]);
    if (!cells[5].empty()) r.delta_iou = std::stod(cells[5]);
    records.push_back(std::move(r));
  }
  return records;
}

std::string record_to_json(const MetricsRecord& record) {
  nlohmann::json doc{{"benchmark", record.benchmark},
                     {"mode", record.mode},
                     {"seed", record.seed},
                     {"iou_building", record.iou_building},
                     {"iou_background", record.iou_background},
                     {"delta_iou", record.delta_iou ? nlohmann::json(*record.delta_iou)
                                                    : nlohmann::json(nullptr)},
                     {"iterations", record.iterations},
                     {"monitor", record.monitor}};
  return doc.dump();
}

MetricsRecord record_from_json(const std::string& text) {
  const nlohmann::json doc = nlohmann::json::parse(text);
  MetricsRecord r;
  r.benchmark = doc.at("benchmark").get<std::string>();
  r.mode = doc.at("mode").get<std::string>();
  r.seed = doc.at("seed").get<std::uint64_t>();
  r.iou_building = doc.at("iou_building").get<double>();
  r.iou_background = doc.at("iou_background").get<double>();
  if (!doc.at("delta_iou").is_null()) r.delta_iou = doc.at("delta_iou").get<double>();
  r.iterations = doc.at("iterations").get<int>();
  r.monitor = doc.at("monitor").get<std::string>();
  return r;
}

Report render_report(const std::vector<MetricsRecord>& records) {
  if (records.empty()) throw std::invalid_argument("render_report: no records");

  struct Column {
    double adapted_sum = 0.0;
    int adapted_n = 0;
    double src_sum = 0.0;
    int src_n = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Column> columns;
  for (const auto& r : records) {
    if (!columns.count(r.benchmark)) order.push_back(r.benchmark);
    auto& col = columns[r.benchmark];
    if (r.mode == "source_only") {
      col.src_sum += r.iou_building;
      ++col.src_n;
    } else {
      col.adapted_sum += r.iou_building;
      ++col.adapted_n;
    }
  }

  const std::vector<std::string> row_labels = {"IoU (ADVENT)", "IoU (src-only)",
                                               "Δ IoU"};
  std::vector<std::vector<std::string>> cells(3, std::vector<std::string>(order.size()));
  for (std::size_t j = 0; j < order.size(); ++j) {
    const auto& col = columns[order[j]];
    const bool has_adapted = col.adapted_n > 0, has_src = col.src_n > 0;
    const double adapted = has_adapted ? col.adapted_sum / col.adapted_n : 0.0;
    const double src = has_src ? col.src_sum / col.src_n : 0.0;
    cells[0][j] = has_adapted ? format2(adapted) : "--";
    cells[1][j] = has_src ? format2(src) : "--";
    cells[2][j] = (has_adapted && has_src) ? format2_signed(delta_iou(adapted, src)) : "--";
  }

  Report report;
  report.csv = "row";
  for (const auto& name : order) report.csv += "," + name;
  report.csv += "\n";
  for (std::size_t i = 0; i < row_labels.size(); ++i) {
    report.csv += row_labels[i];
    for (std::size_t j = 0; j < order.size(); ++j) report.csv += "," + cells[i][j];
    report.csv += "\n";
  }

  // aligned text: label column + right-aligned benchmark columns.
  // Δ is a two-byte UTF-8 character, so pad by display length, not bytes.
  const auto display_len = [](const std::string& s) {
    return s.size() - (s.find("Δ") != std::string::npos ? 1 : 0);
  };
  std::size_t label_w = 0;
  for (const auto& l : row_labels) label_w = std::max(label_w, display_len(l));
  std::vector<std::size_t> col_w(order.size());
  for (std::size_t j = 0; j < order.size(); ++j) {
    col_w[j] = order[j].size();
    for (std::size_t i = 0; i < 3; ++i) col_w[j] = std::max(col_w[j], cells[i][j].size());
  }

  std::string text(label_w, ' ');
  for (std::size_t j = 0; j < order.size(); ++j)
    text += "  " + std::string(col_w[j] - order[j].size(), ' ') + order[j];
  text += "\n";
  for (std::size_t i = 0; i < 3; ++i) {
    text += row_labels[i] + std::string(label_w - display_len(row_labels[i]), ' ');
    for (std::size_t j = 0; j < order.size(); ++j)
      text += "  " + std::string(col_w[j] - cells[i][j].size(), ' ') + cells[i][j];
    text += "\n";
  }
  report.text = std::move(text);
  return report;
}

void render_predictions(const std::vector<const models::Segmenter*>& nets,
                        const std::vector<geodata::Sample>& samples,
                        const std::filesystem::path& out_path) {
  if (samples.empty()) throw std::invalid_argument("render_predictions: no samples");
  const int th = samples.front().image.dim(0);
  const int tw = samples.front().image.dim(1);
  const int panels = 2 + static_cast<int>(nets.size());
  const int out_h = th * static_cast<int>(samples.size());
  const int out_w = tw * panels;

  Tensor canvas({out_h, out_w, 3});
  const auto blit_image = [&](const Tensor& img, int row, int panel) {
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x)
        for (int c = 0; c < 3; ++c)
          canvas.at(row * th + y, panel * tw + x, c) = img.at(y, x, c);
  };
  const auto blit_mask = [&](const Mask& mask, int row, int panel) {
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x) {
        const double* color = mask.at(y, x) ? kPaletteBuilding : kPaletteBackground;
        for (int c = 0; c < 3; ++c) canvas.at(row * th + y, panel * tw + x, c) = color[c];
      }
  };

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.image.dim(0) != th || s.image.dim(1) != tw)
      throw std::invalid_argument("render_predictions: mixed tile sizes");
    const int row = static_cast<int>(i);
    blit_image(s.image, row, 0);
    blit_mask(s.mask, row, 1);
    for (std::size_t m = 0; m < nets.size(); ++m)
      blit_mask(predict_mask(*nets[m], s.image), row, 2 + static_cast<int>(m));
  }
  write_png_rgb8(out_path, out_h, out_w, quantize_rgb8(canvas));
}

}  // namespace geoadapt::eval
