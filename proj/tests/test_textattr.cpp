#include "aesth/textattr.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <Eigen/QR>
#include <Eigen/SVD>

#include <map>
#include <random>

using namespace aesth;

namespace {

std::vector<TaggedImage> tiny_corpus(const std::vector<std::map<std::string, int>>& docs) {
  std::vector<TaggedImage> corpus;
  for (std::size_t i = 0; i < docs.size(); ++i)
    corpus.push_back(testutil::make_tagged("doc" + std::to_string(i), docs[i]));
  return corpus;
}

}  // namespace

TEST_CASE("vocabulary keeps the most frequent tags") {
  const auto corpus = tiny_corpus({{{"a", 6}, {"b", 5}}, {{"a", 4}, {"c", 1}}});
  const auto vocab = build_vocabulary(corpus, 2);
  REQUIRE(vocab.size() == 2);
  CHECK(vocab.tags[0] == "a");  // 10 occurrences
  CHECK(vocab.tags[1] == "b");  // 5
  CHECK(vocab.counts[0] == 10);
}

TEST_CASE("vocabulary ties break lexicographically") {
  const auto corpus = tiny_corpus({{{"b", 5}}, {{"a", 5}}});
  const auto vocab = build_vocabulary(corpus, 1);
  CHECK(vocab.tags[0] == "a");
}

TEST_CASE("vocabulary fails when too few distinct tags exist") {
  const auto corpus = tiny_corpus({{{"a", 3}, {"b", 1}}});
  CHECK_THROWS_WITH_AS(build_vocabulary(corpus, 5), doctest::Contains("distinct"),
                       std::runtime_error);
}

TEST_CASE("vocabulary matches an independent count-and-sort pass") {
  SyntheticSpec spec = SyntheticSpec::basic(8, 300, 96, 64, 0.25, 14);
  const auto corpus = generate_synthetic(spec, 3).images;
  const int M = 100;
  const auto vocab = build_vocabulary(corpus, M);

  // brute force: accumulate counts, stable sort with the tie rule
  std::map<std::string, long> freq;
  for (const auto& im : corpus)
    for (const auto& [t, n] : im.tags) freq[t] += n;
  std::vector<std::pair<std::string, long>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  REQUIRE(static_cast<int>(items.size()) >= M);
  for (int i = 0; i < M; ++i) {
    CHECK(vocab.tags[i] == items[i].first);
    CHECK(vocab.counts[i] == items[i].second);
  }
}

TEST_CASE("augmented frequency follows the present-tag normalization") {
  Vocabulary vocab;
  vocab.tags = {"a", "b"};
  vocab.counts = {2, 1};
  const VecXd v1 = augmented_tf({{"a", 2}, {"b", 1}}, vocab);
  CHECK(v1(0) == doctest::Approx(1.0));
  CHECK(v1(1) == doctest::Approx(0.75));
  const VecXd v2 = augmented_tf({{"a", 3}}, vocab);
  CHECK(v2(0) == doctest::Approx(1.0));
  CHECK(v2(1) == 0.0);  // absent tag stays exactly zero
  const VecXd v3 = augmented_tf({{"zzz", 4}}, vocab);
  CHECK(v3.isZero());
}

TEST_CASE("augmented frequency agrees with a scalar reimplementation") {
  Vocabulary vocab;
  for (int i = 0; i < 12; ++i) vocab.tags.push_back("t" + std::to_string(i));
  vocab.counts.assign(12, 1);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::map<std::string, int> doc;
    for (int i = 0; i < 12; ++i)
      if (rng() % 3 == 0) doc["t" + std::to_string(i)] = 1 + static_cast<int>(rng() % 5);
    if (rng() % 2) doc["outside"] = 2;
    const VecXd got = augmented_tf(doc, vocab);
    int maxf = 0;
    for (int i = 0; i < 12; ++i) {
      const auto it = doc.find("t" + std::to_string(i));
      if (it != doc.end()) maxf = std::max(maxf, it->second);
    }
    for (int i = 0; i < 12; ++i) {
      const auto it = doc.find("t" + std::to_string(i));
      const double expect =
          it == doc.end() ? 0.0 : 0.5 + 0.5 * static_cast<double>(it->second) / maxf;
      CHECK(std::abs(got(i) - expect) < 1e-12);
    }
  }
}

namespace {

DocMatrix random_doc_matrix(int n, int m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  DocMatrix docs;
  docs.X = MatXd::Zero(n, m);
  for (int i = 0; i < n; ++i) {
    docs.row_ids.push_back("d" + std::to_string(i));
    int maxf = 0;
    std::vector<int> counts(m, 0);
    for (int j = 0; j < m; ++j)
      if (rng() % 4 == 0) {
        counts[j] = 1 + static_cast<int>(rng() % 6);
        maxf = std::max(maxf, counts[j]);
      }
    if (maxf == 0) {
      counts[static_cast<int>(rng() % m)] = 1;
      maxf = 1;
    }
    for (int j = 0; j < m; ++j)
      if (counts[j]) docs.X(i, j) = 0.5 + 0.5 * static_cast<double>(counts[j]) / maxf;
  }
  return docs;
}

}  // namespace

TEST_CASE("lambda zero matches the truncated-SVD residual") {
  const DocMatrix docs = random_doc_matrix(80, 30, 1);
  const int D = 6;
  const auto model = fit_sparse_lsa(docs, D, 0.0, 50, 1e-10);

  Eigen::BDCSVD<MatXd> svd(docs.X);
  double expect = 0.0;
  for (Eigen::Index i = D; i < svd.singularValues().size(); ++i)
    expect += svd.singularValues()(i) * svd.singularValues()(i);

  const double got = model.loss_trace.back();
  CHECK(std::abs(got - expect) <= 1e-6 * std::max(1.0, expect));
  CHECK((model.U.transpose() * model.U - MatXd::Identity(D, D)).norm() <= 1e-8);
}

TEST_CASE("objective is monotone non-increasing") {
  const DocMatrix docs = random_doc_matrix(60, 25, 2);
  const auto model = fit_sparse_lsa(docs, 5, 0.15, 60, 0.0);
  REQUIRE(model.loss_trace.size() > 1);
  for (std::size_t i = 1; i < model.loss_trace.size(); ++i)
    CHECK(model.loss_trace[i] <= model.loss_trace[i - 1] + 1e-9);
}

TEST_CASE("an exactly realizable factorization is recovered") {
  std::mt19937_64 rng(3);
  const int N = 40, M = 20, D = 4;
  MatXd G(N, D);
  std::normal_distribution<double> gauss;
  for (int i = 0; i < N; ++i)
    for (int d = 0; d < D; ++d) G(i, d) = gauss(rng);
  const MatXd U0 = Eigen::HouseholderQR<MatXd>(G).householderQ() * MatXd::Identity(N, D);
  MatXd A0 = MatXd::Zero(D, M);
  for (int d = 0; d < D; ++d)
    for (int j = 0; j < M; ++j)
      if (rng() % 3 == 0) A0(d, j) = gauss(rng);
  DocMatrix docs;
  docs.X = U0 * A0;
  for (int i = 0; i < N; ++i) docs.row_ids.push_back("d" + std::to_string(i));

  const auto model = fit_sparse_lsa(docs, D, 1e-9, 80, 1e-14);
  CHECK((docs.X - model.U * model.A).norm() <= 1e-6);
}

TEST_CASE("larger lambda never increases the support of A") {
  const DocMatrix docs = random_doc_matrix(100, 40, 5);
  long prev = -1;
  for (const double lambda : {0.001, 0.05, 0.1, 0.2, 0.5}) {
    const auto model = fit_sparse_lsa(docs, 6, lambda, 60, 1e-9);
    const long n = nnz(model.A);
    if (prev >= 0) CHECK(n <= prev);
    prev = n;
  }
}

TEST_CASE("rank-deficient input is reported") {
  DocMatrix docs;
  docs.X = MatXd::Ones(30, 10);  // rank 1
  for (int i = 0; i < 30; ++i) docs.row_ids.push_back("d" + std::to_string(i));
  CHECK_THROWS_WITH_AS(fit_sparse_lsa(docs, 3, 0.1, 20, 1e-8),
                       doctest::Contains("rank"), std::runtime_error);
}

TEST_CASE("attribute activation rules") {
  TextualAttributeModel model;
  model.A = MatXd::Zero(3, 4);
  model.A << 1, 0, 0, 0,
             0, 0.5, 0, 0,
             0, 0, 0.2, 0;
  SUBCASE("zero input activates nothing") {
    CHECK(image_attributes(model, VecXd::Zero(4), 0.3).empty());
  }
  SUBCASE("threshold zero activates every attribute with signal") {
    const VecXd alpha = VecXd::Ones(4);
    CHECK(image_attributes(model, alpha, 0.0) == std::vector<int>{0, 1, 2});
  }
  SUBCASE("relative threshold keeps only dominant attributes") {
    const VecXd alpha = VecXd::Ones(4);
    CHECK(image_attributes(model, alpha, 0.3) == std::vector<int>{0, 1});
  }
}

TEST_CASE("noiseless single-attribute images map to a single matching attribute") {
  SyntheticSpec spec = SyntheticSpec::basic(4, 120, 96, 64, 0.0, 5);
  spec.min_regions = spec.max_regions = 1;
  const auto corpus = generate_synthetic(spec, 17);
  const auto vocab = build_vocabulary(corpus.images, 20);
  const auto docs = build_doc_matrix(corpus.images, vocab);
  const auto model = fit_sparse_lsa(docs, 4, 0.1, 100, 1e-9);

  // majority vote mapping: model attribute -> true attribute
  std::map<int, std::map<int, int>> votes;
  std::vector<std::pair<int, std::vector<int>>> per_image;  // (truth, predicted)
  for (int i = 0; i < docs.docs(); ++i) {
    const auto attrs = image_attributes(model, docs.X.row(i).transpose(), 0.3);
    const int truth =
        corpus.truth.regions.at(docs.row_ids[i]).front().attribute_id;
    for (int d : attrs) votes[d][truth] += 1;
    per_image.push_back({truth, attrs});
  }
  std::map<int, int> mapping;
  for (const auto& [d, hist] : votes) {
    int best = -1, best_n = -1;
    for (const auto& [g, n] : hist)
      if (n > best_n) {
        best_n = n;
        best = g;
      }
    mapping[d] = best;
  }
  int hits = 0;
  for (const auto& [truth, attrs] : per_image)
    hits += attrs.size() == 1 && mapping.at(attrs[0]) == truth;
  CHECK(static_cast<double>(hits) / per_image.size() >= 0.95);
}

TEST_CASE("model file round trip") {
  testutil::TempDir dir("textattr_io");
  const DocMatrix docs = random_doc_matrix(50, 20, 9);
  auto model = fit_sparse_lsa(docs, 4, 0.1, 40, 1e-9);
  model.vocab.tags.assign(20, "");
  for (int i = 0; i < 20; ++i) model.vocab.tags[i] = "t" + std::to_string(i);
  model.vocab.counts.assign(20, 1);

  const auto file = dir.path / "model.json";
  save_textattr_model(file, model);
  const auto loaded = load_textattr_model(file);
  CHECK(loaded.lambda == model.lambda);
  CHECK((loaded.U - model.U).norm() == 0.0);
  CHECK((loaded.A - model.A).norm() == 0.0);
  CHECK(loaded.loss_trace == model.loss_trace);
  CHECK(loaded.vocab.tags == model.vocab.tags);
}
