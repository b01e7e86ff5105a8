#include "aesth/response.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace aesth {

namespace {

// L2-regularized L1-loss SVM in the dual, bias folded in as an extra
// always-one feature. Deterministic sweep order.
void train_binary(const MatXd& X, const std::vector<double>& y, double C,
                  VecXd& w_out, double& b_out) {
  const int n = static_cast<int>(X.rows());
  const int dim = static_cast<int>(X.cols());
  VecXd w = VecXd::Zero(dim + 1);
  VecXd alpha = VecXd::Zero(n);
  VecXd qii(n);
  for (int i = 0; i < n; ++i) qii(i) = X.row(i).squaredNorm() + 1.0;

  const int max_epochs = 1000;
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    double max_violation = 0.0;
    for (int i = 0; i < n; ++i) {
      const double margin = y[i] * (X.row(i).dot(w.head(dim)) + w(dim));
      const double g = margin - 1.0;
      double pg = g;
      if (alpha(i) <= 0.0) pg = std::min(g, 0.0);
      else if (alpha(i) >= C) pg = std::max(g, 0.0);
      if (std::abs(pg) < 1e-12) continue;
      max_violation = std::max(max_violation, std::abs(pg));
      const double old = alpha(i);
      alpha(i) = std::min(std::max(old - g / qii(i), 0.0), C);
      const double delta = (alpha(i) - old) * y[i];
      w.head(dim) += delta * X.row(i).transpose();
      w(dim) += delta;
    }
    if (max_violation < 1e-10) break;
  }
  w_out = w.head(dim);
  b_out = w(dim);
}

}  // namespace

AttributeClassifier train_classifiers(const std::vector<VecXd>& embedded,
                                      const std::vector<std::vector<int>>& labels,
                                      int attribute_count, double C_reg) {
  const int n = static_cast<int>(embedded.size());
  if (n == 0) throw std::invalid_argument("empty training set");
  if (n != static_cast<int>(labels.size()))
    throw std::invalid_argument("labels must match embedding count");
  if (C_reg <= 0.0) throw std::invalid_argument("C_reg must be positive");
  const int dim = static_cast<int>(embedded[0].size());

  MatXd X(n, dim);
  for (int i = 0; i < n; ++i) X.row(i) = embedded[i].transpose();

  AttributeClassifier clf;
  clf.weights.resize(attribute_count, dim);
  clf.bias.resize(attribute_count);
  for (int a = 0; a < attribute_count; ++a) {
    std::vector<double> y(n, -1.0);
    int positives = 0;
    for (int i = 0; i < n; ++i)
      if (std::binary_search(labels[i].begin(), labels[i].end(), a)) {
        y[i] = 1.0;
        ++positives;
      }
    if (positives == 0)
      throw std::runtime_error("attribute " + std::to_string(a) +
                               " has no positive graphlets");
    VecXd w;
    double b;
    train_binary(X, y, C_reg, w, b);
    clf.weights.row(a) = w.transpose();
    clf.bias(a) = b;
  }
  return clf;
}

double decision_value(const AttributeClassifier& clf, const VecXd& y,
                      int attribute_id) {
  if (attribute_id < 0 || attribute_id >= clf.attribute_count())
    throw std::invalid_argument("attribute id out of range");
  return clf.weights.row(attribute_id).dot(y) + clf.bias(attribute_id);
}

double graphlet_response(const AttributeClassifier& clf, const VecXd& y,
                         int attribute_id) {
  return 1.0 / (1.0 + std::exp(-decision_value(clf, y, attribute_id)));
}

std::vector<int> patch_size_grid(int dim) {
  std::vector<int> sizes;
  for (int i = 0; i <= 80; ++i) {
    const double frac = 0.10 + 0.01 * i;
    sizes.push_back(std::max(1, static_cast<int>(std::lround(frac * dim))));
  }
  return sizes;
}

namespace {

// Row-interval decomposition of each graphlet's pixel footprint (union of its
// member superpixels), so patch containment is countable without revisiting
// the label map per patch.
struct Footprint {
  int y0 = 0;                                          // first row
  std::vector<std::vector<std::pair<int, int>>> rows;  // [x0,x1) spans per row
  long total = 0;
};

Footprint build_footprint(const SuperpixelLevel& level,
                          const std::vector<int>& vertices) {
  const int h = level.height(), w = level.width();
  std::vector<char> member(level.count(), 0);
  for (int v : vertices) member[v] = 1;
  Footprint fp;
  int ymin = h, ymax = -1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (member[level.labels(y, x)]) {
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
      }
  fp.y0 = ymin;
  if (ymax < ymin) return fp;
  fp.rows.resize(ymax - ymin + 1);
  for (int y = ymin; y <= ymax; ++y) {
    auto& spans = fp.rows[y - ymin];
    int run_start = -1;
    for (int x = 0; x <= w; ++x) {
      const bool in = x < w && member[level.labels(y, x)];
      if (in && run_start < 0) run_start = x;
      if (!in && run_start >= 0) {
        spans.emplace_back(run_start, x);
        fp.total += x - run_start;
        run_start = -1;
      }
    }
  }
  return fp;
}

long count_inside(const Footprint& fp, const Rect& r) {
  long inside = 0;
  const int yfirst = std::max(r.y, fp.y0);
  const int ylast = std::min(r.y + r.h, fp.y0 + static_cast<int>(fp.rows.size()));
  for (int y = yfirst; y < ylast; ++y)
    for (const auto& [x0, x1] : fp.rows[y - fp.y0]) {
      const int a = std::max(x0, r.x);
      const int b = std::min(x1, r.x + r.w);
      if (b > a) inside += b - a;
    }
  return inside;
}

}  // namespace

PatchSet sample_patches(const Image& img, const SuperpixelPyramid& pyramid,
                        const std::vector<Graphlet>& graphlets, int num_patches,
                        std::uint64_t seed) {
  const int w = img.width(), h = img.height();
  PatchSet set;
  if (num_patches <= 0) return set;

  std::vector<Footprint> fps;
  fps.reserve(graphlets.size());
  for (const auto& g : graphlets)
    fps.push_back(build_footprint(pyramid.levels[g.level], g.vertices));

  const auto widths = patch_size_grid(w);
  const auto heights = patch_size_grid(h);
  std::mt19937_64 rng(seed);
  set.rects.reserve(num_patches);
  set.contained.resize(num_patches);
  for (int p = 0; p < num_patches; ++p) {
    Rect r;
    r.w = widths[rng() % widths.size()];
    r.h = heights[rng() % heights.size()];
    r.x = static_cast<int>(rng() % static_cast<std::uint64_t>(w - r.w + 1));
    r.y = static_cast<int>(rng() % static_cast<std::uint64_t>(h - r.h + 1));
    set.rects.push_back(r);
    auto& inside = set.contained[p];
    for (std::size_t g = 0; g < fps.size(); ++g) {
      if (fps[g].total == 0) continue;
      if (2 * count_inside(fps[g], r) >= fps[g].total) inside.push_back(static_cast<int>(g));
    }
  }
  return set;
}

std::optional<Aesthlet> detect_aesthlet(const Image& img, const PatchSet& patches,
                                        const std::vector<double>& probs,
                                        const std::string& image_id,
                                        int attribute_id, PatchScore score_mode) {
  auto clamped_log = [](double p) {
    return std::log(std::min(std::max(p, 1e-300), 1.0 - 1e-16));
  };
  double reference = 0.0;
  if (score_mode == PatchScore::kEvidence && !probs.empty()) {
    for (const double p : probs) reference += clamped_log(p);
    reference /= static_cast<double>(probs.size());
  }

  int best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  double best_mean_prob = 0.0;
  for (std::size_t p = 0; p < patches.rects.size(); ++p) {
    const auto& inside = patches.contained[p];
    if (inside.empty()) continue;
    double log_sum = 0.0, prob_sum = 0.0;
    for (int g : inside) {
      log_sum += clamped_log(probs[g]) - reference;
      prob_sum += probs[g];
    }
    const double score = score_mode == PatchScore::kMean
                             ? log_sum / static_cast<double>(inside.size())
                             : log_sum;
    bool take = false;
    if (score > best_score) {
      take = true;
    } else if (score == best_score && best >= 0) {
      const Rect& a = patches.rects[p];
      const Rect& b = patches.rects[best];
      if (a.area() < b.area() ||
          (a.area() == b.area() && std::pair(a.x, a.y) < std::pair(b.x, b.y)))
        take = true;
    }
    if (take) {
      best = static_cast<int>(p);
      best_score = score;
      best_mean_prob = prob_sum / static_cast<double>(inside.size());
    }
  }
  if (best < 0) return std::nullopt;

  Aesthlet a;
  a.image_id = image_id;
  a.attribute_id = attribute_id;
  a.rect = patches.rects[best];
  a.score = best_score;
  a.mean_prob = best_mean_prob;
  a.patch = resize_bilinear(crop(img, a.rect), kPatchSide, kPatchSide);
  return a;
}

std::optional<Aesthlet> detect_aesthlet(const Image& img,
                                        const SuperpixelPyramid& pyramid,
                                        const std::vector<Graphlet>& graphlets,
                                        const std::vector<double>& probs,
                                        const std::string& image_id,
                                        int attribute_id,
                                        const DetectOptions& opts) {
  if (probs.size() != graphlets.size())
    throw std::invalid_argument("probs must match graphlet count");
  const PatchSet set =
      sample_patches(img, pyramid, graphlets, opts.num_patches, opts.seed);
  return detect_aesthlet(img, set, probs, image_id, attribute_id, opts.score);
}

Aesthlet global_aesthlet(const Image& img, const std::string& image_id,
                         int attribute_count) {
  Aesthlet a;
  a.image_id = image_id;
  a.attribute_id = attribute_count;  // the (D+1)-th slot
  a.rect = Rect{0, 0, img.width(), img.height()};
  a.score = 0.0;
  a.mean_prob = 1.0;
  a.patch = resize_bilinear(img, kPatchSide, kPatchSide);
  return a;
}

}  // namespace aesth
