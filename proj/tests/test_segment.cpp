#include "aesth/segment.hpp"

#include "aesth/corpus.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <deque>
#include <set>

using namespace aesth;

namespace {

// BFS over one label's pixels; true when the label forms one 4-connected part.
bool label_connected(const ArrXXi& labels, int id) {
  const int h = static_cast<int>(labels.rows());
  const int w = static_cast<int>(labels.cols());
  int sy = -1, sx = -1, total = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (labels(y, x) == id) {
        if (sy < 0) {
          sy = y;
          sx = x;
        }
        ++total;
      }
  if (total == 0) return false;
  ArrXX<bool> seen = ArrXX<bool>::Constant(h, w, false);
  std::deque<std::pair<int, int>> q{{sy, sx}};
  seen(sy, sx) = true;
  int reached = 0;
  while (!q.empty()) {
    auto [y, x] = q.front();
    q.pop_front();
    ++reached;
    const int ny[4] = {y - 1, y + 1, y, y};
    const int nx[4] = {x, x, x - 1, x + 1};
    for (int i = 0; i < 4; ++i) {
      if (ny[i] < 0 || ny[i] >= h || nx[i] < 0 || nx[i] >= w) continue;
      if (seen(ny[i], nx[i]) || labels(ny[i], nx[i]) != id) continue;
      seen(ny[i], nx[i]) = true;
      q.push_back({ny[i], nx[i]});
    }
  }
  return reached == total;
}

void check_level_invariants(const SuperpixelLevel& level) {
  const int n = level.count();
  REQUIRE(n > 0);
  for (int y = 0; y < level.height(); ++y)
    for (int x = 0; x < level.width(); ++x) {
      REQUIRE(level.labels(y, x) >= 0);
      REQUIRE(level.labels(y, x) < n);
    }
  for (int i = 0; i < n; ++i) {
    REQUIRE(label_connected(level.labels, i));
    for (int j : level.adjacency[i]) {
      REQUIRE(j != i);
      const auto& back = level.adjacency[j];
      REQUIRE(std::binary_search(back.begin(), back.end(), i));
    }
  }
}

}  // namespace

TEST_CASE("uniform image yields near-regular cells") {
  const Image img(96, 96, 0.42f);
  const auto level = slic(img, 16);
  check_level_invariants(level);
  CHECK(level.count() >= 13);
  CHECK(level.count() <= 19);
  const double expected = 96.0 * 96.0 / 16.0;
  VecXd sizes = VecXd::Zero(level.count());
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x) sizes(level.labels(y, x)) += 1;
  for (int i = 0; i < level.count(); ++i) {
    CHECK(sizes(i) >= 0.8 * expected);
    CHECK(sizes(i) <= 1.2 * expected);
  }
}

TEST_CASE("two-tone boundary leaks at most two pixels") {
  Image img(80, 120, 0.f);
  const int boundary = 60;
  for (int y = 0; y < 80; ++y)
    for (int x = 0; x < 120; ++x) {
      const float v = x < boundary ? 0.15f : 0.85f;
      for (int c = 0; c < 3; ++c) img.ch[c](y, x) = v;
    }
  const auto level = slic(img, 40);
  check_level_invariants(level);
  for (int i = 0; i < level.count(); ++i) {
    int min_x = 1 << 20, max_x = -1;
    for (int y = 0; y < 80; ++y)
      for (int x = 0; x < 120; ++x)
        if (level.labels(y, x) == i) {
          min_x = std::min(min_x, x);
          max_x = std::max(max_x, x);
        }
    if (min_x < boundary && max_x >= boundary) {
      const int left = boundary - min_x;
      const int right = max_x - boundary + 1;
      CHECK(std::min(left, right) <= 2);
    }
  }
}

TEST_CASE("labels partition synthetic images with counts near k") {
  const SyntheticSpec spec = SyntheticSpec::basic(4, 4, 144, 96, 0.0, 4);
  const auto corpus = generate_synthetic(spec, 2);
  for (const auto& im : corpus.images) {
    for (const int k : {120, 40}) {
      const auto level = slic(im.pixels, k);
      check_level_invariants(level);
      CHECK(level.count() >= static_cast<int>(0.8 * k));
      CHECK(level.count() <= static_cast<int>(1.2 * k) + 1);
    }
  }
}

TEST_CASE("k outside the valid range is rejected") {
  const Image img(64, 64, 0.5f);
  CHECK_THROWS_AS(slic(img, 3), std::invalid_argument);
  CHECK_THROWS_AS(slic(img, 64 * 64 / 16 + 1), std::invalid_argument);
}

TEST_CASE("pyramid counts decrease strictly and bad ordering is rejected") {
  const Image img(128, 192, 0.3f);
  const auto pyr = build_pyramid(img, {120, 60, 24});
  CHECK(pyr.levels[0].count() > pyr.levels[1].count());
  CHECK(pyr.levels[1].count() > pyr.levels[2].count());
  CHECK_THROWS_AS(build_pyramid(img, {24, 60, 120}), std::invalid_argument);
}

TEST_CASE("coarse superpixels mostly avoid straddling region boundaries") {
  SyntheticSpec spec = SyntheticSpec::basic(4, 6, 384, 256, 0.0, 4);
  spec.min_regions = spec.max_regions = 1;
  const auto corpus = generate_synthetic(spec, 13);
  int clean = 0, total = 0;
  for (const auto& im : corpus.images) {
    const auto level = slic(im.pixels, 30);
    const auto& regions = corpus.truth.regions.at(im.id);
    for (int i = 0; i < level.count(); ++i) {
      bool inside = false, outside = false;
      for (int y = 0; y < level.height(); ++y)
        for (int x = 0; x < level.width(); ++x) {
          if (level.labels(y, x) != i) continue;
          bool in_region = false;
          for (const auto& r : regions) in_region |= r.rect.contains(x, y);
          (in_region ? inside : outside) = true;
        }
      clean += !(inside && outside);
      ++total;
    }
  }
  CHECK(static_cast<double>(clean) / total >= 0.8);
}

TEST_CASE("constant region has flat moments and zero texture descriptor") {
  const Image img(64, 64, 0.5f);
  const auto level = slic(img, 9);
  const auto feats = superpixel_features(img, level);
  for (const auto& f : feats) {
    CHECK(f.color(0) > 0.0);                          // gray has positive lightness
    CHECK(std::abs(f.color(1)) < 1e-9);               // stddev
    CHECK(std::abs(f.color(2)) < 1e-9);               // skewness
    CHECK(std::abs(f.color(3)) < 1.0);                // a close to neutral
    CHECK(std::abs(f.color(6)) < 1.0);                // b close to neutral
    CHECK(f.hog.norm() == 0.0);
  }
}

TEST_CASE("vertical stripes concentrate energy in the horizontal-gradient bin pair") {
  Image img(64, 64, 0.f);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const float v = (x / 4) % 2 ? 0.8f : 0.2f;
      for (int c = 0; c < 3; ++c) img.ch[c](y, x) = v;
    }
  const ArrXXd gray = to_gray(img);
  const VecXd hog = hog_descriptor(gray);
  REQUIRE(hog.norm() == doctest::Approx(1.0));
  double pair_mass = 0.0, total = 0.0;
  for (int cell = 0; cell < 16; ++cell)
    for (int b = 0; b < 8; ++b) {
      total += hog(cell * 8 + b);
      if (b == 0 || b == 7) pair_mass += hog(cell * 8 + b);
    }
  CHECK(pair_mass / total >= 0.95);
}

TEST_CASE("color moments match a brute-force accumulation") {
  const SyntheticSpec spec = SyntheticSpec::basic(3, 1, 128, 96, 0.0, 3);
  const auto corpus = generate_synthetic(spec, 4);
  const Image& img = corpus.images[0].pixels;
  const auto level = slic(img, 50);
  const auto feats = superpixel_features(img, level);
  const auto lab = to_lab(img);

  for (int i = 0; i < level.count(); i += 7) {
    double n = 0;
    double mean[3] = {0, 0, 0};
    for (int y = 0; y < level.height(); ++y)
      for (int x = 0; x < level.width(); ++x)
        if (level.labels(y, x) == i) {
          for (int c = 0; c < 3; ++c) mean[c] += lab[c](y, x);
          ++n;
        }
    for (double& m : mean) m /= n;
    double m2[3] = {0, 0, 0}, m3[3] = {0, 0, 0};
    for (int y = 0; y < level.height(); ++y)
      for (int x = 0; x < level.width(); ++x)
        if (level.labels(y, x) == i)
          for (int c = 0; c < 3; ++c) {
            const double d = lab[c](y, x) - mean[c];
            m2[c] += d * d;
            m3[c] += d * d * d;
          }
    for (int c = 0; c < 3; ++c) {
      CHECK(std::abs(feats[i].color(3 * c + 0) - mean[c]) < 1e-9);
      CHECK(std::abs(feats[i].color(3 * c + 1) - std::sqrt(m2[c] / n)) < 1e-9);
      CHECK(std::abs(feats[i].color(3 * c + 2) - std::cbrt(m3[c] / n)) < 1e-9);
    }
  }
}

TEST_CASE("descriptor is invariant to a constant intensity offset") {
  Image img(80, 80, 0.f);
  for (int y = 0; y < 80; ++y)
    for (int x = 0; x < 80; ++x) {
      const float v = 0.2f + 0.4f * ((x * 13 + y * 7) % 32) / 32.0f;
      for (int c = 0; c < 3; ++c) img.ch[c](y, x) = v;
    }
  Image shifted = img;
  for (int c = 0; c < 3; ++c) shifted.ch[c] += 0.2f;
  // pixels are stored as float32, so the shift is exact only to ~1e-7
  const VecXd a = hog_descriptor(to_gray(img));
  const VecXd b = hog_descriptor(to_gray(shifted));
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("descriptor norm is zero or one") {
  const SyntheticSpec spec = SyntheticSpec::basic(3, 2, 96, 64, 0.0, 3);
  const auto corpus = generate_synthetic(spec, 6);
  for (const auto& im : corpus.images) {
    const auto level = slic(im.pixels, 40);
    for (const auto& f : superpixel_features(im.pixels, level)) {
      const double n = f.hog.norm();
      CHECK((n == 0.0 || std::abs(n - 1.0) <= 1e-6));
      CHECK(f.color.allFinite());
    }
  }
}

TEST_CASE("grid segmentation produces rectangular cells") {
  const Image img(96, 128, 0.5f);
  const auto level = grid_segmentation(img, 24);
  check_level_invariants(level);
  CHECK(level.count() >= 20);
  CHECK(level.count() <= 28);
}
