#pragma once

#include "aesth/image.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace aesth {

// An image plus its tag multiset (tag -> occurrence count).
struct TaggedImage {
  std::string id;
  Image pixels;
  std::map<std::string, int> tags;
};

struct RegionRecord {
  int attribute_id = 0;
  Rect rect;
};

// Procedural solid texture: one hue band plus oriented stripes, so that both
// color moments and gradient histograms separate attributes.
struct TextureRecipe {
  double hue = 0.0;          // [0,1)
  double orientation = 0.0;  // stripe normal direction, radians in [0,pi)
  double period = 8.0;       // stripe period in pixels
  double saturation = 0.8;
  double value_lo = 0.35;
  double value_hi = 0.9;
};

struct SyntheticSpec {
  int num_images = 200;
  int width = 384;
  int height = 256;
  std::vector<TextureRecipe> attribute_palette;          // one per attribute
  std::vector<std::vector<std::string>> tag_vocab;       // one tag set per attribute
  double noise_rate = 0.0;                               // in [0,1)
  int min_regions = 1;
  int max_regions = 3;

  // Palette of K well-separated recipes plus "attrKK_tagNN" vocabularies.
  static SyntheticSpec basic(int num_attributes, int num_images, int width = 384,
                             int height = 256, double noise_rate = 0.0,
                             int tags_per_attribute = 6);
};

struct GroundTruth {
  // Per image: regions actually painted, and the group (first region's attribute).
  std::map<std::string, std::vector<RegionRecord>> regions;
  std::map<std::string, int> group;
};

struct SyntheticCorpus {
  std::vector<TaggedImage> images;
  GroundTruth truth;
};

// Pure function of (spec, seed); identical arguments reproduce bit-identical
// pixels, tags and region records.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Directory layout: images/<id>.png (or .ppm) plus tags.jsonl; the synthetic
// writer adds ground_truth.jsonl. Returned sorted by id.
std::vector<TaggedImage> load_corpus(const std::filesystem::path& root,
                                     bool permissive = false);
void save_corpus(const std::filesystem::path& root,
                 const std::vector<TaggedImage>& images,
                 const GroundTruth* truth = nullptr);
GroundTruth load_ground_truth(const std::filesystem::path& root);

// Paints recipe texture over `r`; `phase` shifts the stripes.
void fill_texture(Image& img, const Rect& r, const TextureRecipe& recipe,
                  double phase = 0.0);

}  // namespace aesth
