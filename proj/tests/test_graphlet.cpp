#include "aesth/graphlet.hpp"

#include "aesth/corpus.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <Eigen/QR>

#include <deque>
#include <random>
#include <set>

using namespace aesth;

namespace {

// a plain 2x2 grid adjacency, superpixels numbered row-major
SuperpixelLevel grid2x2_level() {
  SuperpixelLevel level;
  level.labels.resize(2, 2);
  level.labels << 0, 1, 2, 3;
  level.centers = MatXd::Zero(4, 5);
  level.adjacency = {{1, 2}, {0, 3}, {0, 3}, {1, 2}};
  return level;
}

std::array<std::vector<SuperpixelFeature>, 3> dummy_features(int n0, int n1, int n2) {
  std::array<std::vector<SuperpixelFeature>, 3> feats;
  const std::array<int, 3> counts = {n0, n1, n2};
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss;
  for (int lv = 0; lv < 3; ++lv) {
    feats[lv].resize(counts[lv]);
    for (auto& f : feats[lv]) {
      for (int c = 0; c < 9; ++c) f.color(c) = gauss(rng);
      f.hog = VecXd::Zero(kHogDim);
      for (int c = 0; c < kHogDim; ++c) f.hog(c) = gauss(rng);
      f.hog.normalize();
    }
  }
  return feats;
}

bool connected_in(const SuperpixelLevel& level, const std::vector<int>& vertices) {
  std::set<int> vs(vertices.begin(), vertices.end());
  std::set<int> seen{vertices[0]};
  std::deque<int> q{vertices[0]};
  while (!q.empty()) {
    const int v = q.front();
    q.pop_front();
    for (int nb : level.adjacency[v])
      if (vs.count(nb) && !seen.count(nb)) {
        seen.insert(nb);
        q.push_back(nb);
      }
  }
  return seen.size() == vs.size();
}

}  // namespace

TEST_CASE("similarity on the worked example with known counts") {
  // counts: Sailboat 5, Mountain 1, Bridge 3, Grass 1, Waterman 3, River 7,
  // Cloud 2, Garden 2, Flowers 5, Jungle 4, Insect 4, House 3, Tower 1,
  // Bicycle 2, Sunshine 1, Jumping 1 (total 45). Attribute ids follow that
  // order. The two sets share {Sailboat, Waterman, River}; the symmetric
  // difference is {Mountain, Bridge, Grass, Jungle, House}.
  VecXd n(16);
  n << 5, 1, 3, 1, 3, 7, 2, 2, 5, 4, 4, 3, 1, 2, 1, 1;
  REQUIRE(n.sum() == 45.0);
  const std::vector<int> ci = {0, 1, 2, 4, 5};      // + Mountain, Bridge
  const std::vector<int> cj = {0, 3, 4, 5, 9, 11};  // + Grass, Jungle, House
  const auto [ls, ld] = semantic_similarity(ci, cj, n);
  CHECK(std::abs(ls - 15.0 / 45.0) <= 1e-9);
  // The symmetric-difference mass is 1+3+1+4+3 = 12, so l_d = 12/45 = 0.2667
  // under the definition implemented here. A circulated value of 0.200 for
  // this instance is inconsistent with that numerator; the formula is
  // asserted literally rather than reconciled to it.
  CHECK(std::abs(ld - 12.0 / 45.0) <= 1e-9);
  CHECK(std::abs(ld - 0.200) > 1e-3);
}

TEST_CASE("similarity degenerate cases") {
  VecXd n(4);
  n << 2, 3, 4, 1;
  SUBCASE("identical sets have zero difference") {
    const auto [ls, ld] = semantic_similarity({1, 2}, {1, 2}, n);
    CHECK(ld == 0.0);
    CHECK(ls == doctest::Approx(7.0 / 10.0));
  }
  SUBCASE("disjoint sets have zero similarity") {
    const auto [ls, ld] = semantic_similarity({0}, {2, 3}, n);
    CHECK(ls == 0.0);
    CHECK(ld == doctest::Approx(7.0 / 10.0));
  }
  SUBCASE("empty count vector is an error") {
    CHECK_THROWS_AS(semantic_similarity({0}, {1}, VecXd()), std::invalid_argument);
  }
  SUBCASE("bounds and symmetry over random sets") {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 200; ++t) {
      std::vector<int> a, b;
      for (int k = 0; k < 4; ++k) {
        if (rng() % 2) a.push_back(k);
        if (rng() % 2) b.push_back(k);
      }
      const auto [ls, ld] = semantic_similarity(a, b, n);
      const auto [ls2, ld2] = semantic_similarity(b, a, n);
      CHECK(ls == ls2);
      CHECK(ld == ld2);
      CHECK(ls >= 0.0);
      CHECK(ls <= 1.0);
      CHECK(ld >= 0.0);
      CHECK(ld <= 1.0);
      const auto [ls3, ld3] = semantic_similarity(a, a, n);
      CHECK(ld3 == 0.0);
      (void)ls3;
    }
  }
}

TEST_CASE("packed graphlet vectors round trip") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> gauss;
  for (const int t : {1, 3, 7}) {
    MatXd color(t, 9), texture(t, kHogDim);
    Eigen::MatrixXi topo = Eigen::MatrixXi::Zero(t, t);
    for (int i = 0; i < t; ++i) {
      for (int c = 0; c < 9; ++c) color(i, c) = gauss(rng);
      for (int c = 0; c < kHogDim; ++c) texture(i, c) = gauss(rng);
      for (int j = i + 1; j < t; ++j)
        if (rng() % 2) {
          topo(i, j) = 1;
          topo(j, i) = 1;
        }
    }
    const VecXd v = pack_graphlet(color, texture, topo);
    REQUIRE(v.size() == kGraphletVecDim);
    MatXd c2, t2;
    Eigen::MatrixXi s2;
    unpack_graphlet(v, t, c2, t2, s2);
    CHECK((c2 - color).norm() == 0.0);
    CHECK((t2 - texture).norm() == 0.0);
    CHECK((s2 - topo).norm() == 0);
  }
}

TEST_CASE("single-superpixel level yields only singleton graphlets") {
  SuperpixelPyramid pyr;
  for (int lv = 0; lv < 3; ++lv) {
    pyr.levels[lv].labels = ArrXXi::Zero(4, 4);
    pyr.levels[lv].centers = MatXd::Zero(1, 5);
    pyr.levels[lv].adjacency = {{}};
  }
  const auto feats = dummy_features(1, 1, 1);
  const auto gs = extract_graphlets(pyr, feats, "img", 20, 7, 3);
  REQUIRE(gs.size() == 3);  // one distinct graphlet per level
  for (const auto& g : gs) {
    CHECK(g.size() == 1);
    CHECK(g.topology.rows() == 1);
    CHECK(g.topology(0, 0) == 0);
  }
}

TEST_CASE("walks produce connected deduplicated subgraphs") {
  SuperpixelPyramid pyr;
  pyr.levels[0] = grid2x2_level();
  pyr.levels[1] = grid2x2_level();
  pyr.levels[2] = grid2x2_level();
  const auto feats = dummy_features(4, 4, 4);
  const auto gs = extract_graphlets(pyr, feats, "img", 500, 4, 7);

  // brute-force enumeration of connected vertex subsets of the 2x2 grid
  std::set<std::set<int>> connected_subsets;
  for (int mask = 1; mask < 16; ++mask) {
    std::vector<int> vs;
    for (int v = 0; v < 4; ++v)
      if (mask & (1 << v)) vs.push_back(v);
    if (connected_in(pyr.levels[0], vs))
      connected_subsets.insert(std::set<int>(vs.begin(), vs.end()));
  }

  std::set<std::pair<int, std::set<int>>> seen;
  for (const auto& g : gs) {
    CHECK(connected_in(pyr.levels[g.level], g.vertices));
    const std::set<int> key(g.vertices.begin(), g.vertices.end());
    CHECK(connected_subsets.count(key) == 1);
    CHECK(seen.insert({g.level, key}).second);  // deduplicated per level
    for (int i = 0; i < g.size(); ++i)
      for (int j = 0; j < g.size(); ++j) {
        const auto& adj = pyr.levels[g.level].adjacency[g.vertices[i]];
        const bool expect =
            i != j && std::binary_search(adj.begin(), adj.end(), g.vertices[j]);
        CHECK(g.topology(i, j) == (expect ? 1 : 0));
      }
  }
  // with 500 walks per level every connected subset is reached
  CHECK(seen.size() == 3 * connected_subsets.size());

  const auto gs2 = extract_graphlets(pyr, feats, "img", 500, 4, 7);
  REQUIRE(gs.size() == gs2.size());
  for (std::size_t i = 0; i < gs.size(); ++i)
    CHECK(gs[i].vertices == gs2[i].vertices);
}

namespace {

std::vector<VecXd> random_raw_vecs(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::vector<VecXd> out(n);
  for (auto& v : out) {
    v = VecXd::Zero(kGraphletVecDim);
    for (int c = 0; c < kGraphletVecDim; ++c) v(c) = gauss(rng);
  }
  return out;
}

std::vector<std::vector<int>> random_labels(int n, int attrs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<int>> labels(n);
  for (auto& l : labels) {
    for (int a = 0; a < attrs; ++a)
      if (rng() % 2) l.push_back(a);
    if (l.empty()) l.push_back(static_cast<int>(rng() % attrs));
  }
  return labels;
}

}  // namespace

TEST_CASE("laplacian quadratic form identity") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> gauss;
  const int n = 12, d = 3;
  MatXd W(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      W(i, j) = gauss(rng);
      W(j, i) = W(i, j);
    }
  MatXd Y(n, d);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) Y(i, c) = gauss(rng);

  const MatXd L = MatXd(W.rowwise().sum().asDiagonal()) - W;
  const double direct = laplacian_objective(W, Y);
  const double reorganized = 2.0 * (Y.transpose() * L * Y).trace();
  CHECK(std::abs(direct - reorganized) <= 1e-9 * std::max(1.0, std::abs(direct)));
}

TEST_CASE("eigen solution beats random orthonormal samples") {
  const int n = 14, d = 2, attrs = 5;
  const auto raw = random_raw_vecs(n, 31);
  const auto labels = random_labels(n, attrs, 32);
  VecXd counts(attrs);
  counts << 9, 4, 6, 2, 5;

  const auto model = fit_embedding(raw, labels, counts, d);
  const MatXd W = affinity_matrix(labels, counts);
  const double achieved = laplacian_objective(W, model.coords);

  CHECK((model.coords.transpose() * model.coords - MatXd::Identity(d, d)).norm() <=
        1e-6);

  std::mt19937_64 rng(33);
  std::normal_distribution<double> gauss;
  double best_random = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 100000; ++trial) {
    MatXd G(n, d);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < d; ++c) G(i, c) = gauss(rng);
    const MatXd Q =
        Eigen::HouseholderQR<MatXd>(G).householderQ() * MatXd::Identity(n, d);
    best_random = std::min(best_random, laplacian_objective(W, Q));
  }
  CHECK(achieved <= best_random + 1e-9);
}

TEST_CASE("identical labels flatten the spectrum beyond the trivial eigenvector") {
  const int n = 10, d = 2;
  const auto raw = random_raw_vecs(n, 41);
  std::vector<std::vector<int>> labels(n, {0, 1});
  VecXd counts(2);
  counts << 5, 7;
  const auto model = fit_embedding(raw, labels, counts, d);
  const MatXd W = affinity_matrix(labels, counts);
  const double achieved = laplacian_objective(W, model.coords);

  // W is the constant matrix c*J, so L = c(nI - J): eigenvalue 0 on the
  // constant vector and c*n on everything else. The optimum value is unique
  // even though the optimizer is not.
  const double c = W(0, 1);
  const double expected = 2.0 * (0.0 + c * n);
  CHECK(std::abs(achieved - expected) <= 1e-9 * std::max(1.0, expected));

  // every orthonormal basis containing the constant direction is optimal
  std::mt19937_64 rng(42);
  std::normal_distribution<double> gauss;
  for (int trial = 0; trial < 50; ++trial) {
    MatXd Q(n, d);
    Q.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(n)));
    VecXd q(n);
    for (int i = 0; i < n; ++i) q(i) = gauss(rng);
    q -= Q.col(0) * Q.col(0).dot(q);
    q.normalize();
    Q.col(1) = q;
    CHECK(std::abs(laplacian_objective(W, Q) - achieved) <=
          1e-9 * std::max(1.0, expected));
  }
}

TEST_CASE("duplicate graphlets with equal labels embed identically") {
  const int n = 12, d = 3;
  auto raw = random_raw_vecs(n, 51);
  raw[7] = raw[2];
  auto labels = random_labels(n, 3, 52);
  labels[7] = labels[2];
  VecXd counts(3);
  counts << 4, 6, 3;
  const auto model = fit_embedding(raw, labels, counts, d);
  CHECK((embed(model, raw[2]) - embed(model, raw[7])).norm() <= 1e-6);
}

TEST_CASE("in-sample projections stay within the reported residual") {
  const int n = 20, d = 2;
  const auto raw = random_raw_vecs(n, 61);
  const auto labels = random_labels(n, 4, 62);
  VecXd counts(4);
  counts << 3, 8, 2, 6;
  const auto model = fit_embedding(raw, labels, counts, d);
  for (int i = 0; i < n; ++i) {
    const VecXd pred = embed(model, raw[model.subsample[i]]);
    CHECK((pred - model.coords.row(i).transpose()).norm() <=
          model.fit_residual + 1e-9);
  }
}

TEST_CASE("zero input embeds to the projector offset") {
  const auto raw = random_raw_vecs(10, 71);
  const auto labels = random_labels(10, 3, 72);
  VecXd counts(3);
  counts << 2, 2, 2;
  const auto model = fit_embedding(raw, labels, counts, 2);
  const VecXd zero_pred = embed(model, VecXd::Zero(kGraphletVecDim));
  const VecXd expected =
      model.projector.transpose() * (-model.mean).cwiseQuotient(model.scale) +
      model.offset;
  CHECK((zero_pred - expected).norm() <= 1e-12);
}

TEST_CASE("perturbations are bounded by the projector operator norm") {
  const auto raw = random_raw_vecs(16, 81);
  const auto labels = random_labels(16, 4, 82);
  VecXd counts(4);
  counts << 5, 5, 5, 5;
  const auto model = fit_embedding(raw, labels, counts, 3);

  // effective linear map on unstandardized inputs
  MatXd eff = model.projector;
  for (Eigen::Index r = 0; r < eff.rows(); ++r) eff.row(r) /= model.scale(r);
  const double opnorm = eff.jacobiSvd().singularValues()(0);

  std::mt19937_64 rng(83);
  std::normal_distribution<double> gauss;
  for (int trial = 0; trial < 25; ++trial) {
    VecXd delta = VecXd::Zero(kGraphletVecDim);
    for (int c = 0; c < kGraphletVecDim; ++c) delta(c) = 0.01 * gauss(rng);
    const VecXd a = embed(model, raw[0]);
    const VecXd b = embed(model, raw[0] + delta);
    CHECK((a - b).norm() <= opnorm * delta.norm() + 1e-12);
  }
}

TEST_CASE("subsampling caps the spectral problem size") {
  const auto raw = random_raw_vecs(40, 91);
  const auto labels = random_labels(40, 3, 92);
  VecXd counts(3);
  counts << 10, 12, 9;
  EmbeddingOptions opts;
  opts.max_graphlets = 15;
  opts.seed = 7;
  const auto model = fit_embedding(raw, labels, counts, 2, opts);
  CHECK(model.subsample.size() == 15);
  CHECK(model.coords.rows() == 15);
  CHECK(std::is_sorted(model.subsample.begin(), model.subsample.end()));
}

TEST_CASE("embedding dimension must stay below the graphlet count") {
  const auto raw = random_raw_vecs(5, 95);
  const auto labels = random_labels(5, 2, 96);
  VecXd counts(2);
  counts << 2, 3;
  CHECK_THROWS_AS(fit_embedding(raw, labels, counts, 5), std::invalid_argument);
}
