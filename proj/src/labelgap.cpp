#include "geoadapt/labelgap.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace geoadapt::labelgap {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Components {
  int count = 0;
  std::int64_t building_pixels = 0;
  std::array<double, 8> orientation_hist{};  // area-fraction weighted
};

Components analyze_components(const Mask& mask) {
  Components result;
  const int h = mask.h, w = mask.w;
  std::vector<char> seen(static_cast<std::size_t>(h) * w, 0);
  std::vector<int> stack;
  for (int sy = 0; sy < h; ++sy)
    for (int sx = 0; sx < w; ++sx) {
      const std::size_t start = static_cast<std::size_t>(sy) * w + sx;
      if (mask.v[start] == 0 || seen[start]) continue;
      ++result.count;
      stack.assign(1, static_cast<int>(start));
      seen[start] = 1;
      double sum_y = 0, sum_x = 0, n = 0;
      double sum_yy = 0, sum_xx = 0, sum_xy = 0;
      while (!stack.empty()) {
        const int idx = stack.back();
        stack.pop_back();
        const int y = idx / w, x = idx % w;
        ++result.building_pixels;
        sum_y += y;
        sum_x += x;
        sum_yy += static_cast<double>(y) * y;
        sum_xx += static_cast<double>(x) * x;
        sum_xy += static_cast<double>(x) * y;
        n += 1;
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int ny = y + dy[k], nx = x + dx[k];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
          if (mask.v[nidx] == 0 || seen[nidx]) continue;
          seen[nidx] = 1;
          stack.push_back(static_cast<int>(nidx));
        }
      }
      // principal axis from second central moments
      const double cy = sum_y / n, cx = sum_x / n;
      const double vyy = sum_yy / n - cy * cy;
      const double vxx = sum_xx / n - cx * cx;
      const double vxy = sum_xy / n - cx * cy;
      double theta = 0.5 * std::atan2(2.0 * vxy, vxx - vyy);  // [-pi/2, pi/2]
      if (theta < 0.0) theta += kPi;                          // [0, pi)
      int bin = static_cast<int>(theta / kPi * 8.0);
      bin = std::clamp(bin, 0, 7);
      result.orientation_hist[static_cast<std::size_t>(bin)] +=
          n / (static_cast<double>(h) * w);
    }
  return result;
}

struct DisjointSet {
  std::vector<int> parent, size, majority;  // majority = max(#source, #target)
  std::vector<int> source_count;

  explicit DisjointSet(const std::vector<LabelFeature>& features) {
    const int n = static_cast<int>(features.size());
    parent.resize(static_cast<std::size_t>(n));
    size.assign(static_cast<std::size_t>(n), 1);
    majority.assign(static_cast<std::size_t>(n), 1);
    source_count.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      parent[static_cast<std::size_t>(i)] = i;
      source_count[static_cast<std::size_t>(i)] =
          features[static_cast<std::size_t>(i)].origin == Origin::source ? 1 : 0;
    }
  }

  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] =
          parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }

  // returns the change in the summed per-cluster majority counts
  int merge(int a, int b) {
    a = find(a);
    b = find(b);
    const int old_majority = majority[static_cast<std::size_t>(a)] +
                             majority[static_cast<std::size_t>(b)];
    if (size[static_cast<std::size_t>(a)] < size[static_cast<std::size_t>(b)])
      std::swap(a, b);
    parent[static_cast<std::size_t>(b)] = a;
    size[static_cast<std::size_t>(a)] += size[static_cast<std::size_t>(b)];
    source_count[static_cast<std::size_t>(a)] += source_count[static_cast<std::size_t>(b)];
    const int src = source_count[static_cast<std::size_t>(a)];
    majority[static_cast<std::size_t>(a)] =
        std::max(src, size[static_cast<std::size_t>(a)] - src);
    return majority[static_cast<std::size_t>(a)] - old_majority;
  }
};

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum;
}

struct MstEdge {
  double len2;
  int u, v;  // u < v
};

// Prim's algorithm on the dense Euclidean graph, O(n^2).
std::vector<MstEdge> euclidean_mst(const std::vector<LabelFeature>& features) {
  const int n = static_cast<int>(features.size());
  std::vector<char> in_tree(static_cast<std::size_t>(n), 0);
  std::vector<double> best(static_cast<std::size_t>(n),
                           std::numeric_limits<double>::infinity());
  std::vector<int> best_from(static_cast<std::size_t>(n), 0);
  std::vector<MstEdge> edges;
  edges.reserve(static_cast<std::size_t>(n - 1));

  in_tree[0] = 1;
  for (int j = 1; j < n; ++j) {
    best[static_cast<std::size_t>(j)] =
        squared_distance(features[0].vec, features[static_cast<std::size_t>(j)].vec);
    best_from[static_cast<std::size_t>(j)] = 0;
  }
  for (int step = 1; step < n; ++step) {
    int pick = -1;
    for (int j = 0; j < n; ++j)
      if (!in_tree[static_cast<std::size_t>(j)] &&
          (pick < 0 || best[static_cast<std::size_t>(j)] < best[static_cast<std::size_t>(pick)]))
        pick = j;
    in_tree[static_cast<std::size_t>(pick)] = 1;
    const int from = best_from[static_cast<std::size_t>(pick)];
    edges.push_back({best[static_cast<std::size_t>(pick)], std::min(from, pick),
                     std::max(from, pick)});
    for (int j = 0; j < n; ++j) {
      if (in_tree[static_cast<std::size_t>(j)]) continue;
      const double d = squared_distance(features[static_cast<std::size_t>(pick)].vec,
                                        features[static_cast<std::size_t>(j)].vec);
      if (d < best[static_cast<std::size_t>(j)]) {
        best[static_cast<std::size_t>(j)] = d;
        best_from[static_cast<std::size_t>(j)] = pick;
      }
    }
  }
  return edges;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

}  // namespace

std::vector<double> featurize_mask(const Mask& mask, int grid, FeatureMode mode) {
  if (grid < 1) throw std::invalid_argument("featurize_mask: grid must be >= 1");
  if (mask.h < grid || mask.w < grid)
    throw std::invalid_argument("featurize_mask: mask smaller than pooling grid");

  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(grid) * grid + (mode == FeatureMode::pool ? 0 : 11));
  for (int gy = 0; gy < grid; ++gy) {
    const int y0 = gy * mask.h / grid, y1 = (gy + 1) * mask.h / grid;
    for (int gx = 0; gx < grid; ++gx) {
      const int x0 = gx * mask.w / grid, x1 = (gx + 1) * mask.w / grid;
      double sum = 0.0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) sum += mask.at(y, x) != 0 ? 1.0 : 0.0;
      out.push_back(sum / (static_cast<double>(y1 - y0) * (x1 - x0)));
    }
  }
  if (mode == FeatureMode::pool_stats) {
    const Components comp = analyze_components(mask);
    const double pixels = static_cast<double>(mask.h) * mask.w;
    out.push_back(static_cast<double>(comp.building_pixels) / pixels);
    out.push_back(comp.count / 100.0);
    out.push_back(comp.count > 0
                      ? static_cast<double>(comp.building_pixels) / comp.count / pixels
                      : 0.0);
    for (double h : comp.orientation_hist) out.push_back(h);
  }
  return out;
}

std::vector<LabelFeature> embed(const std::vector<LabelFeature>& features,
                                const EmbedMethod& method) {
  if (features.size() < 2) throw std::invalid_argument("embed: need at least 2 features");
  const std::size_t d = features.front().vec.size();
  for (const auto& f : features)
    if (f.vec.size() != d) throw std::invalid_argument("embed: inconsistent dimensions");

  switch (method.kind) {
    case EmbedMethod::Kind::identity:
      return features;

    case EmbedMethod::Kind::pca: {
      const int k = method.k;
      if (k < 1 || static_cast<std::size_t>(k) > d)
        throw std::invalid_argument("embed: pca k outside [1, d]");
      const auto n = static_cast<Eigen::Index>(features.size());
      Eigen::MatrixXd x(n, static_cast<Eigen::Index>(d));
      for (Eigen::Index i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
          x(i, static_cast<Eigen::Index>(j)) = features[static_cast<std::size_t>(i)].vec[j];
      const Eigen::RowVectorXd mean = x.colwise().mean();
      x.rowwise() -= mean;

      const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
      if (eig.info() != Eigen::Success) throw std::runtime_error("embed: pca eig failed");

      // eigenvalues ascend; take the top k columns, fix each sign so the
      // largest-magnitude coefficient is positive
      Eigen::MatrixXd basis(static_cast<Eigen::Index>(d), k);
      for (int j = 0; j < k; ++j) {
        Eigen::VectorXd v = eig.eigenvectors().col(static_cast<Eigen::Index>(d) - 1 - j);
        Eigen::Index argmax = 0;
        v.cwiseAbs().maxCoeff(&argmax);
        if (v(argmax) < 0.0) v = -v;
        basis.col(j) = v;
      }
      const Eigen::MatrixXd projected = x * basis;

      std::vector<LabelFeature> out = features;
      for (Eigen::Index i = 0; i < n; ++i) {
        auto& vec = out[static_cast<std::size_t>(i)].vec;
        vec.assign(static_cast<std::size_t>(k), 0.0);
        for (int j = 0; j < k; ++j) vec[static_cast<std::size_t>(j)] = projected(i, j);
      }
      return out;
    }

    case EmbedMethod::Kind::external: {
      std::ifstream in(method.path);
      if (!in)
        throw std::invalid_argument("embed: cannot open " + method.path.string());
      std::string line;
      if (!std::getline(in, line) || line.rfind("id,", 0) != 0)
        throw std::invalid_argument("embed: expected header id,x1,..,xk");
      std::map<int, std::vector<double>> coords;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_line(line);
        if (cells.size() < 2) throw std::invalid_argument("embed: bad row: " + line);
        std::vector<double> v;
        for (std::size_t i = 1; i < cells.size(); ++i) v.push_back(std::stod(cells[i]));
        coords[std::stoi(cells[0])] = std::move(v);
      }
      std::vector<LabelFeature> out = features;
      for (auto& f : out) {
        const auto it = coords.find(f.id);
        if (it == coords.end())
          throw std::invalid_argument("embed: external file missing id " +
                                      std::to_string(f.id));
        f.vec = it->second;
      }
      return out;
    }
  }
  throw std::invalid_argument("embed: unknown method");
}

PurityCurve purity_curve(const std::vector<LabelFeature>& features) {
  const int n = static_cast<int>(features.size());
  if (n < 2) throw std::invalid_argument("purity_curve: need at least 2 features");
  bool has_source = false, has_target = false;
  for (const auto& f : features)
    (f.origin == Origin::source ? has_source : has_target) = true;
  if (!has_source || !has_target)
    throw std::invalid_argument("purity_curve: both origins must be present");

  std::vector<MstEdge> edges = euclidean_mst(features);
  DisjointSet ds(features);

  PurityCurve curve;
  curve.merge_fraction.reserve(edges.size());
  curve.purity.reserve(edges.size());
  std::vector<char> used(edges.size(), 0);
  int majority_sum = n;  // singletons are pure

  for (std::size_t k = 0; k < edges.size(); ++k) {
    // smallest length first; among ties, the merge creating the smallest
    // cluster, then lowest endpoint ids
    std::size_t pick = edges.size();
    int pick_size = 0;
    for (std::size_t e = 0; e < edges.size(); ++e) {
      if (used[e]) continue;
      const int merged_size = ds.size[static_cast<std::size_t>(ds.find(edges[e].u))] +
                              ds.size[static_cast<std::size_t>(ds.find(edges[e].v))];
      if (pick == edges.size()) {
        pick = e;
        pick_size = merged_size;
        continue;
      }
      const auto& a = edges[e];
      const auto& b = edges[pick];
      if (std::tie(a.len2, merged_size, a.u, a.v) <
          std::tie(b.len2, pick_size, b.u, b.v)) {
        pick = e;
        pick_size = merged_size;
      }
    }
    used[pick] = 1;
    majority_sum += ds.merge(edges[pick].u, edges[pick].v);
    curve.merge_fraction.push_back(static_cast<double>(k + 1) /
                                   static_cast<double>(edges.size()));
    curve.purity.push_back(static_cast<double>(majority_sum) / n);
  }

  double sum = 0.0;
  for (double p : curve.purity) sum += p;
  curve.auc = sum / static_cast<double>(curve.purity.size());
  return curve;
}

std::string curve_to_csv(const PurityCurve& curve) {
  std::string out = "merge_fraction,purity\n";
  char buf[64];
  for (std::size_t i = 0; i < curve.purity.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", curve.merge_fraction[i],
                  curve.purity[i]);
    out += buf;
  }
  return out;
}

std::string gap_summary_json(const GapResult& result) {
  nlohmann::json doc{{"pair", result.name},
                     {"n_source", result.n_source},
                     {"n_target", result.n_target},
                     {"auc", result.curve.auc}};
  return doc.dump();
}

std::vector<GapResult> compare_gaps(const std::vector<MaskPair>& pairs, int grid,
                                    FeatureMode mode, const EmbedMethod& method) {
  if (pairs.empty()) throw std::invalid_argument("compare_gaps: no pairs");
  std::vector<GapResult> results;
  results.reserve(pairs.size());
  for (const auto& pair : pairs) {
    std::vector<LabelFeature> features;
    features.reserve(pair.source.size() + pair.target.size());
    int id = 0;
    for (const auto& mask : pair.source)
      features.push_back({featurize_mask(mask, grid, mode), Origin::source, id++});
    for (const auto& mask : pair.target)
      features.push_back({featurize_mask(mask, grid, mode), Origin::target, id++});
    const auto embedded = embed(features, method);
    results.push_back(
        {pair.name, pair.source.size(), pair.target.size(), purity_curve(embedded)});
  }
  std::sort(results.begin(), results.end(), [](const GapResult& a, const GapResult& b) {
    if (a.curve.auc != b.curve.auc) return a.curve.auc > b.curve.auc;
    return a.name < b.name;
  });
  return results;
}

}  // namespace geoadapt::labelgap
