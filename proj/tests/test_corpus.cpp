#include "aesth/corpus.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <fstream>

using namespace aesth;

TEST_CASE("load returns entries sorted by id") {
  testutil::TempDir dir("corpus_sorted");
  std::vector<TaggedImage> imgs = {testutil::make_tagged("zeta", {{"a", 1}}),
                                   testutil::make_tagged("alpha", {{"b", 1}}),
                                   testutil::make_tagged("mid", {{"c", 2}})};
  save_corpus(dir.path, imgs);
  const auto loaded = load_corpus(dir.path);
  REQUIRE(loaded.size() == 3);
  CHECK(loaded[0].id == "alpha");
  CHECK(loaded[1].id == "mid");
  CHECK(loaded[2].id == "zeta");
}

TEST_CASE("missing image file is an error naming the id") {
  testutil::TempDir dir("corpus_missing");
  save_corpus(dir.path, {testutil::make_tagged("keepme", {{"a", 1}}),
                         testutil::make_tagged("lost", {{"b", 1}})});
  std::filesystem::remove(dir.path / "images" / "lost.png");
  CHECK_THROWS_WITH_AS(load_corpus(dir.path), doctest::Contains("lost"),
                       std::runtime_error);
  // permissive mode skips the broken entry instead
  const auto loaded = load_corpus(dir.path, true);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].id == "keepme");
}

TEST_CASE("missing metadata file is an error") {
  testutil::TempDir dir("corpus_nometa");
  std::filesystem::create_directories(dir.path / "images");
  CHECK_THROWS_WITH_AS(load_corpus(dir.path), doctest::Contains("tags.jsonl"),
                       std::runtime_error);
}

TEST_CASE("repeated tags parse as a multiset") {
  testutil::TempDir dir("corpus_multiset");
  save_corpus(dir.path, {testutil::make_tagged("pic", {})});
  std::ofstream(dir.path / "tags.jsonl")
      << R"({"id":"pic","tags":["sunset","sunset","beach"]})" << "\n";
  const auto loaded = load_corpus(dir.path);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].tags.at("sunset") == 2);
  CHECK(loaded[0].tags.at("beach") == 1);
}

TEST_CASE("noiseless single-region tags equal the attribute vocabulary") {
  SyntheticSpec spec = SyntheticSpec::basic(3, 12, 96, 64, 0.0, 4);
  spec.min_regions = spec.max_regions = 1;
  const auto corpus = generate_synthetic(spec, 5);
  const auto truth = corpus.truth;
  for (const auto& im : corpus.images) {
    const int attr = truth.regions.at(im.id).front().attribute_id;
    REQUIRE(im.tags.size() == spec.tag_vocab[attr].size());
    for (const auto& tag : spec.tag_vocab[attr]) {
      REQUIRE(im.tags.count(tag) == 1);
      CHECK(im.tags.at(tag) == 1);
    }
  }
}

TEST_CASE("generation is a pure function of spec and seed") {
  const SyntheticSpec spec = SyntheticSpec::basic(4, 6, 96, 64, 0.3, 3);
  const auto a = generate_synthetic(spec, 99);
  const auto b = generate_synthetic(spec, 99);
  REQUIRE(a.images.size() == b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    CHECK(a.images[i].id == b.images[i].id);
    CHECK(a.images[i].tags == b.images[i].tags);
    for (int c = 0; c < 3; ++c)
      CHECK((a.images[i].pixels.ch[c] == b.images[i].pixels.ch[c]).all());
  }
  const auto c = generate_synthetic(spec, 100);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.images.size() && !any_diff; ++i)
    any_diff = pixel_hash(a.images[i].pixels) != pixel_hash(c.images[i].pixels);
  CHECK(any_diff);
}

TEST_CASE("spurious tag fraction tracks the noise rate") {
  SyntheticSpec spec = SyntheticSpec::basic(4, 1000, 96, 64, 0.5, 5);
  spec.min_regions = spec.max_regions = 1;
  const auto corpus = generate_synthetic(spec, 7);
  long included = 0, candidates = 0;
  for (const auto& im : corpus.images) {
    const int attr = corpus.truth.regions.at(im.id).front().attribute_id;
    for (int k = 0; k < 4; ++k) {
      if (k == attr) continue;
      for (const auto& tag : spec.tag_vocab[k]) {
        ++candidates;
        included += im.tags.count(tag);
      }
    }
  }
  const double fraction = static_cast<double>(included) / candidates;
  CHECK(fraction == doctest::Approx(0.5).epsilon(0.06));  // +-3% absolute
  CHECK(std::abs(fraction - 0.5) <= 0.03);
}

TEST_CASE("regions stay inside the image bounds") {
  const SyntheticSpec spec = SyntheticSpec::basic(5, 40, 128, 96, 0.1, 3);
  const auto corpus = generate_synthetic(spec, 11);
  for (const auto& [id, regions] : corpus.truth.regions) {
    REQUIRE(!regions.empty());
    for (const auto& r : regions) {
      CHECK(r.rect.x >= 0);
      CHECK(r.rect.y >= 0);
      CHECK(r.rect.w > 0);
      CHECK(r.rect.h > 0);
      CHECK(r.rect.x + r.rect.w <= spec.width);
      CHECK(r.rect.y + r.rect.h <= spec.height);
    }
  }
}

TEST_CASE("save then load round trips ids, tags and pixels") {
  testutil::TempDir dir("corpus_roundtrip");
  SyntheticSpec spec = SyntheticSpec::basic(3, 8, 96, 64, 0.2, 4);
  const auto corpus = generate_synthetic(spec, 21);
  save_corpus(dir.path, corpus.images, &corpus.truth);
  const auto first = load_corpus(dir.path);

  testutil::TempDir dir2("corpus_roundtrip2");
  save_corpus(dir2.path, first);
  const auto second = load_corpus(dir2.path);

  REQUIRE(first.size() == second.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(first[i].id == second[i].id);
    CHECK(first[i].tags == second[i].tags);
    CHECK(pixel_hash(first[i].pixels) == pixel_hash(second[i].pixels));
  }

  const auto truth = load_ground_truth(dir.path);
  CHECK(truth.regions.size() == corpus.truth.regions.size());
  CHECK(truth.group == corpus.truth.group);
}

TEST_CASE("palette with fewer than two attributes is rejected") {
  CHECK_THROWS_AS(SyntheticSpec::basic(1, 10), std::invalid_argument);
  SyntheticSpec spec = SyntheticSpec::basic(2, 4);
  spec.attribute_palette.pop_back();
  spec.tag_vocab.pop_back();
  CHECK_THROWS_AS(generate_synthetic(spec, 1), std::invalid_argument);
}
