#include "aesth/response.hpp"

#include "aesth/corpus.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace aesth;

namespace {

std::vector<VecXd> to_vecs(const MatXd& m) {
  std::vector<VecXd> v;
  for (Eigen::Index i = 0; i < m.rows(); ++i) v.push_back(m.row(i).transpose());
  return v;
}

// Independent oracle: plain projected-subgradient descent on the same primal
// hinge-loss objective.
void subgradient_svm(const MatXd& X, const std::vector<double>& y, double C,
                     VecXd& w, double& b) {
  const int n = static_cast<int>(X.rows());
  const int dim = static_cast<int>(X.cols());
  w = VecXd::Zero(dim);
  b = 0.0;
  for (int it = 1; it <= 20000; ++it) {
    const double lr = 1.0 / (0.01 * it + 100.0);
    VecXd gw = w;
    double gb = 0.0;
    for (int i = 0; i < n; ++i) {
      const double margin = y[i] * (X.row(i).dot(w) + b);
      if (margin < 1.0) {
        gw -= C * y[i] * X.row(i).transpose();
        gb -= C * y[i];
      }
    }
    w -= lr * gw;
    b -= lr * gb;
  }
}

}  // namespace

TEST_CASE("separable attributes are classified perfectly") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss;
  std::vector<VecXd> pts;
  std::vector<std::vector<int>> labels;
  for (int i = 0; i < 40; ++i) {
    VecXd v(2);
    const int cls = i % 2;
    v << gauss(rng) + (cls ? 4.0 : -4.0), gauss(rng);
    pts.push_back(v);
    labels.push_back({cls});
  }
  const auto clf = train_classifiers(pts, labels, 2, 1.0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const int cls = labels[i][0];
    CHECK(decision_value(clf, pts[i], cls) > 0.0);
    CHECK(decision_value(clf, pts[i], 1 - cls) < 0.0);
  }
}

TEST_CASE("uninformative attribute collapses to a near-zero hyperplane") {
  // identical points are positive for attribute 0 and negative for it too
  // (via duplicated features with opposite labels)
  std::vector<VecXd> pts;
  std::vector<std::vector<int>> labels;
  VecXd v(3);
  v << 1.0, -2.0, 0.5;
  for (int i = 0; i < 20; ++i) {
    pts.push_back(v);
    labels.push_back(i % 2 ? std::vector<int>{0} : std::vector<int>{1});
  }
  const auto clf = train_classifiers(pts, labels, 2, 1.0);
  // decision value is the bias alone up to solver tolerance
  const double spread = std::abs(decision_value(clf, 2.0 * v, 0) -
                                 decision_value(clf, v, 0));
  CHECK(spread <= 1e-6);
}

TEST_CASE("attribute with no positives is reported") {
  std::vector<VecXd> pts(4, VecXd::Ones(2));
  std::vector<std::vector<int>> labels(4, {0});
  CHECK_THROWS_WITH_AS(train_classifiers(pts, labels, 2, 1.0),
                       doctest::Contains("attribute 1"), std::runtime_error);
}

TEST_CASE("decision values agree in sign with a subgradient-descent oracle") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss;
  const int n = 50, dim = 4;
  MatXd X(n, dim);
  std::vector<double> y(n);
  VecXd true_w(dim);
  true_w << 1.0, -2.0, 0.5, 1.5;
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < dim; ++d) X(i, d) = gauss(rng);
    y[i] = X.row(i).dot(true_w) + 0.3 * gauss(rng) > 0 ? 1.0 : -1.0;
  }

  std::vector<std::vector<int>> labels(n);
  for (int i = 0; i < n; ++i)
    labels[i] = y[i] > 0 ? std::vector<int>{0} : std::vector<int>{};
  // attribute 1 gets at least one positive so training succeeds
  labels[0] = {0, 1};
  const auto clf = train_classifiers(to_vecs(X), labels, 2, 1.0);

  VecXd w_oracle;
  double b_oracle;
  subgradient_svm(X, y, 1.0, w_oracle, b_oracle);

  int agree = 0;
  for (int i = 0; i < n; ++i) {
    const double mine = decision_value(clf, X.row(i).transpose(), 0);
    const double oracle = X.row(i).dot(w_oracle) + b_oracle;
    agree += (mine > 0) == (oracle > 0);
  }
  CHECK(agree == n);
}

TEST_CASE("logistic response follows the sigmoid") {
  AttributeClassifier clf;
  clf.weights = MatXd::Zero(1, 1);
  clf.bias = VecXd::Zero(1);
  SUBCASE("zero decision value maps to one half") {
    CHECK(graphlet_response(clf, VecXd::Zero(1), 0) == doctest::Approx(0.5));
  }
  SUBCASE("response is strictly monotone and saturates at one") {
    clf.weights(0, 0) = 1.0;
    double prev = 0.0;
    VecXd v(1);
    for (double x = -20; x <= 20; x += 0.5) {
      v(0) = x;
      const double p = graphlet_response(clf, v, 0);
      CHECK(p > prev);
      CHECK(p > 0.0);
      CHECK(p < 1.0);
      prev = p;
    }
    v(0) = 40.0;
    CHECK(graphlet_response(clf, v, 0) == doctest::Approx(1.0));
  }
  SUBCASE("log-odds of three maps to three quarters") {
    clf.weights(0, 0) = 1.0;
    VecXd v(1);
    v(0) = std::log(3.0);
    CHECK(graphlet_response(clf, v, 0) == doctest::Approx(0.75).epsilon(1e-12));
  }
}

namespace {

// one textured region on a flat background, with classifier-like graded
// responses: deep-inside graphlets score high, straddlers middling,
// background low
struct DetectFixture {
  Image image;
  Rect region{24, 16, 96, 56};
  SuperpixelPyramid pyramid;
  std::vector<Graphlet> graphlets;
  std::vector<double> probs;

  explicit DetectFixture(std::uint64_t seed) : image(128, 192, 0.5f) {
    TextureRecipe recipe;
    recipe.hue = 0.6;
    recipe.orientation = 0.4;
    fill_texture(image, region, recipe);
    pyramid = build_pyramid(image, {100, 40, 12});
    std::array<std::vector<SuperpixelFeature>, 3> feats;
    for (int lv = 0; lv < 3; ++lv)
      feats[lv] = superpixel_features(image, pyramid.levels[lv]);
    graphlets = extract_graphlets(pyramid, feats, "img", 80, 5, seed);
    probs.resize(graphlets.size());
    for (std::size_t g = 0; g < graphlets.size(); ++g) {
      const auto& gl = graphlets[g];
      const auto& level = pyramid.levels[gl.level];
      long inside = 0, total = 0;
      for (int y = 0; y < level.height(); ++y)
        for (int x = 0; x < level.width(); ++x) {
          bool member = false;
          for (int v : gl.vertices) member |= level.labels(y, x) == v;
          if (!member) continue;
          ++total;
          inside += region.contains(x, y);
        }
      const double frac = total ? static_cast<double>(inside) / total : 0.0;
      probs[g] = 0.05 + 0.9 * frac * frac * frac;
    }
  }
};

}  // namespace

TEST_CASE("detection hugs the high-probability cluster") {
  const DetectFixture fx(19);
  DetectOptions opts;
  opts.num_patches = 4000;
  opts.seed = 77;
  const auto det = detect_aesthlet(fx.image, fx.pyramid, fx.graphlets, fx.probs,
                                   "img", 0, opts);
  REQUIRE(det.has_value());
  CHECK(det->image_id == "img");
  CHECK(det->attribute_id == 0);
  CHECK(det->patch.width() == kPatchSide);
  CHECK(det->patch.height() == kPatchSide);

  // the winning patch covers at least 90% of the union footprint of the
  // high-probability graphlets
  const auto& level0 = fx.pyramid.levels[0];
  long covered = 0, total = 0;
  for (int y = 0; y < level0.height(); ++y)
    for (int x = 0; x < level0.width(); ++x) {
      bool hot = false;
      for (std::size_t g = 0; g < fx.graphlets.size() && !hot; ++g) {
        if (fx.probs[g] < 0.5) continue;
        const auto& gl = fx.graphlets[g];
        const auto& level = fx.pyramid.levels[gl.level];
        for (int v : gl.vertices) hot |= level.labels(y, x) == v;
      }
      if (!hot) continue;
      ++total;
      covered += det->rect.contains(x, y);
    }
  REQUIRE(total > 0);
  CHECK(static_cast<double>(covered) / total >= 0.9);
  CHECK(rect_iou(det->rect, fx.region) >= 0.4);
}

TEST_CASE("rects always come from the size grid and stay inside bounds") {
  const DetectFixture fx(23);
  const auto widths = patch_size_grid(fx.image.width());
  const auto heights = patch_size_grid(fx.image.height());
  const PatchSet set =
      sample_patches(fx.image, fx.pyramid, fx.graphlets, 500, 13);
  REQUIRE(set.rects.size() == 500);
  for (const auto& r : set.rects) {
    CHECK(std::count(widths.begin(), widths.end(), r.w) > 0);
    CHECK(std::count(heights.begin(), heights.end(), r.h) > 0);
    CHECK(r.x >= 0);
    CHECK(r.y >= 0);
    CHECK(r.x + r.w <= fx.image.width());
    CHECK(r.y + r.h <= fx.image.height());
  }
}

TEST_CASE("detection is deterministic in the seed") {
  const DetectFixture fx(29);
  DetectOptions opts;
  opts.num_patches = 1500;
  opts.seed = 5;
  const auto a = detect_aesthlet(fx.image, fx.pyramid, fx.graphlets, fx.probs,
                                 "img", 1, opts);
  const auto b = detect_aesthlet(fx.image, fx.pyramid, fx.graphlets, fx.probs,
                                 "img", 1, opts);
  REQUIRE(a.has_value());
  REQUIRE(b.has_value());
  CHECK(a->rect == b->rect);
  CHECK(a->score == b->score);
}

TEST_CASE("score ties break toward smaller area then position") {
  // one tiny graphlet: every patch containing it scores identically
  Image img(96, 96, 0.5f);
  SuperpixelPyramid pyr;
  for (int lv = 0; lv < 3; ++lv) {
    pyr.levels[lv].labels = ArrXXi::Zero(96, 96);
    // superpixel 1 is a small blob near the center
    for (int y = 46; y < 50; ++y)
      for (int x = 46; x < 50; ++x) pyr.levels[lv].labels(y, x) = 1;
    pyr.levels[lv].centers = MatXd::Zero(2, 5);
    pyr.levels[lv].adjacency = {{1}, {0}};
  }
  Graphlet g;
  g.image_id = "img";
  g.level = 0;
  g.vertices = {1};

  const PatchSet set = sample_patches(img, pyr, {g}, 3000, 99);
  const auto det = detect_aesthlet(img, set, {0.9}, "img", 0);
  REQUIRE(det.has_value());

  long long best_area = std::numeric_limits<long long>::max();
  Rect best{};
  bool found = false;
  for (std::size_t p = 0; p < set.rects.size(); ++p) {
    if (set.contained[p].empty()) continue;
    const Rect& r = set.rects[p];
    if (!found || r.area() < best_area ||
        (r.area() == best_area && std::pair(r.x, r.y) < std::pair(best.x, best.y))) {
      best = r;
      best_area = r.area();
      found = true;
    }
  }
  REQUIRE(found);
  CHECK(det->rect == best);
}

TEST_CASE("zero patches yields no detection") {
  const DetectFixture fx(31);
  DetectOptions opts;
  opts.num_patches = 0;
  CHECK_FALSE(detect_aesthlet(fx.image, fx.pyramid, fx.graphlets, fx.probs, "img",
                              0, opts)
                  .has_value());
}

TEST_CASE("patches containing no graphlet are never selected") {
  Image img(96, 96, 0.5f);
  SuperpixelPyramid pyr;
  for (int lv = 0; lv < 3; ++lv) {
    pyr.levels[lv].labels = ArrXXi::Zero(96, 96);
    pyr.levels[lv].centers = MatXd::Zero(1, 5);
    pyr.levels[lv].adjacency = {{}};
  }
  // no graphlets at all
  const PatchSet set = sample_patches(img, pyr, {}, 100, 3);
  CHECK_FALSE(detect_aesthlet(img, set, {}, "img", 0).has_value());
}

TEST_CASE("the global aesthlet covers the whole image") {
  Image img(128, 192, 0.25f);
  const auto g = global_aesthlet(img, "pic", 6);
  CHECK(g.attribute_id == 6);
  CHECK(g.rect == Rect{0, 0, 192, 128});
  CHECK(g.patch.width() == kPatchSide);
  CHECK(g.patch.height() == kPatchSide);
}

TEST_CASE("mean scoring mode reduces to the average log response") {
  const DetectFixture fx(37);
  DetectOptions opts;
  opts.num_patches = 800;
  opts.seed = 21;
  opts.score = PatchScore::kMean;
  const auto det = detect_aesthlet(fx.image, fx.pyramid, fx.graphlets, fx.probs,
                                   "img", 0, opts);
  REQUIRE(det.has_value());
  CHECK(det->score <= 0.0);  // mean log of probabilities
  CHECK(det->score >= std::log(1e-300));
}
