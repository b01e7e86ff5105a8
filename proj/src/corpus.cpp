#include "aesth/corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace aesth {

using nlohmann::json;

SyntheticSpec SyntheticSpec::basic(int num_attributes, int num_images, int width,
                                   int height, double noise_rate,
                                   int tags_per_attribute) {
  if (num_attributes < 2)
    throw std::invalid_argument("synthetic palette needs at least 2 attributes");
  if (tags_per_attribute < 1)
    throw std::invalid_argument("tags_per_attribute must be >= 1");
  SyntheticSpec spec;
  spec.num_images = num_images;
  spec.width = width;
  spec.height = height;
  spec.noise_rate = noise_rate;
  const double pi = 3.14159265358979323846;
  for (int k = 0; k < num_attributes; ++k) {
    TextureRecipe r;
    r.hue = static_cast<double>(k) / num_attributes;
    r.orientation = pi * (k % 8) / 8.0;
    r.period = 6.0 + 2.0 * (k % 3);
    spec.attribute_palette.push_back(r);
    std::vector<std::string> vocab;
    for (int t = 0; t < tags_per_attribute; ++t) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "attr%02d_tag%02d", k, t);
      vocab.emplace_back(buf);
    }
    spec.tag_vocab.push_back(std::move(vocab));
  }
  return spec;
}

void fill_texture(Image& img, const Rect& r, const TextureRecipe& recipe,
                  double phase) {
  const double cs = std::cos(recipe.orientation);
  const double sn = std::sin(recipe.orientation);
  for (int y = r.y; y < r.y + r.h; ++y)
    for (int x = r.x; x < r.x + r.w; ++x) {
      const double proj = (x * cs + y * sn) / recipe.period + phase;
      const double frac = proj - std::floor(proj);
      const double v = frac < 0.5 ? recipe.value_hi : recipe.value_lo;
      float rr, gg, bb;
      hsv_to_rgb(recipe.hue, recipe.saturation, v, rr, gg, bb);
      img.ch[0](y, x) = rr;
      img.ch[1](y, x) = gg;
      img.ch[2](y, x) = bb;
    }
}

namespace {

void validate_spec(const SyntheticSpec& spec) {
  if (spec.attribute_palette.size() < 2)
    throw std::invalid_argument("synthetic palette needs at least 2 attributes");
  if (spec.tag_vocab.size() != spec.attribute_palette.size())
    throw std::invalid_argument("tag_vocab must match palette size");
  if (spec.noise_rate < 0.0 || spec.noise_rate >= 1.0)
    throw std::invalid_argument("noise_rate must be in [0,1)");
  if (spec.width < 64 || spec.height < 64)
    throw std::invalid_argument("synthetic images must be at least 64x64");
  if (spec.min_regions < 1 || spec.max_regions < spec.min_regions)
    throw std::invalid_argument("bad region count range");
  if (spec.num_images < 1) throw std::invalid_argument("num_images must be >= 1");
}

bool rects_overlap_padded(const Rect& a, const Rect& b, int pad) {
  return !(a.x + a.w + pad <= b.x || b.x + b.w + pad <= a.x ||
           a.y + a.h + pad <= b.y || b.y + b.h + pad <= a.y);
}

std::string image_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "img%05d", i);
  return buf;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  const int K = static_cast<int>(spec.attribute_palette.size());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // global tag union, ordered by attribute then tag
  std::vector<std::pair<std::string, int>> all_tags;  // (tag, attribute)
  for (int k = 0; k < K; ++k)
    for (const auto& t : spec.tag_vocab[k]) all_tags.emplace_back(t, k);

  SyntheticCorpus out;
  for (int i = 0; i < spec.num_images; ++i) {
    TaggedImage im;
    im.id = image_id(i);
    im.pixels = Image(spec.height, spec.width, 0.5f);

    const int span = spec.max_regions - spec.min_regions;
    const int n_regions =
        spec.min_regions + (span > 0 ? static_cast<int>(rng() % (span + 1)) : 0);
    std::vector<int> attrs(K);
    std::iota(attrs.begin(), attrs.end(), 0);
    std::shuffle(attrs.begin(), attrs.end(), rng);
    attrs.resize(std::min(n_regions, K));

    std::vector<RegionRecord> placed;
    for (int a : attrs) {
      // sizes 25-45% of each dimension, kept 2 px off every border
      Rect r;
      bool ok = false;
      for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
        r.w = static_cast<int>((0.25 + 0.20 * unit(rng)) * spec.width);
        r.h = static_cast<int>((0.25 + 0.20 * unit(rng)) * spec.height);
        const int xmax = spec.width - r.w - 2;
        const int ymax = spec.height - r.h - 2;
        if (xmax < 2 || ymax < 2) continue;
        r.x = 2 + static_cast<int>(rng() % (xmax - 1));
        r.y = 2 + static_cast<int>(rng() % (ymax - 1));
        ok = true;
        for (const auto& p : placed)
          if (rects_overlap_padded(r, p.rect, 4)) ok = false;
      }
      if (!ok) continue;  // image keeps fewer regions when placement fails
      const double phase = unit(rng);
      fill_texture(im.pixels, r, spec.attribute_palette[a], phase);
      placed.push_back({a, r});
    }
    if (placed.empty()) {
      // always at least one region: retry deterministically with a centered rect
      const int a = attrs.empty() ? 0 : attrs[0];
      Rect r{spec.width / 4, spec.height / 4, spec.width / 3, spec.height / 3};
      fill_texture(im.pixels, r, spec.attribute_palette[a], 0.0);
      placed.push_back({a, r});
    }

    std::vector<bool> present(K, false);
    for (const auto& p : placed) present[p.attribute_id] = true;
    for (const auto& [tag, k] : all_tags) {
      if (present[k])
        im.tags[tag] = 1;
      else if (spec.noise_rate > 0.0 && unit(rng) < spec.noise_rate)
        im.tags[tag] = 1;
    }

    out.truth.group[im.id] = placed.front().attribute_id;
    out.truth.regions[im.id] = std::move(placed);
    out.images.push_back(std::move(im));
  }
  return out;
}

void save_corpus(const std::filesystem::path& root,
                 const std::vector<TaggedImage>& images, const GroundTruth* truth) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "images");
  std::ofstream tags(root / "tags.jsonl");
  if (!tags) throw std::runtime_error("cannot write " + (root / "tags.jsonl").string());
  for (const auto& im : images) {
    json j;
    j["id"] = im.id;
    std::vector<std::string> flat;
    for (const auto& [tag, n] : im.tags)
      for (int i = 0; i < n; ++i) flat.push_back(tag);
    j["tags"] = flat;
    tags << j.dump() << "\n";
    save_png(root / "images" / (im.id + ".png"), im.pixels);
  }
  if (truth) {
    std::ofstream gt(root / "ground_truth.jsonl");
    for (const auto& [id, regions] : truth->regions) {
      json j;
      j["id"] = id;
      auto itg = truth->group.find(id);
      j["group"] = itg == truth->group.end() ? 0 : itg->second;
      json regs = json::array();
      for (const auto& r : regions)
        regs.push_back({{"attribute", r.attribute_id},
                        {"x", r.rect.x},
                        {"y", r.rect.y},
                        {"w", r.rect.w},
                        {"h", r.rect.h}});
      j["regions"] = regs;
      gt << j.dump() << "\n";
    }
  }
}

std::vector<TaggedImage> load_corpus(const std::filesystem::path& root,
                                     bool permissive) {
  namespace fs = std::filesystem;
  const auto meta = root / "tags.jsonl";
  if (!fs::exists(meta))
    throw std::runtime_error("missing metadata file: " + meta.string());

  std::vector<TaggedImage> images;
  std::ifstream in(meta);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("bad metadata line " + std::to_string(lineno) + ": " +
                               e.what());
    }
    TaggedImage im;
    im.id = j.at("id").get<std::string>();
    for (const auto& t : j.at("tags")) im.tags[t.get<std::string>()] += 1;

    fs::path img_file = root / "images" / (im.id + ".png");
    if (!fs::exists(img_file)) img_file = root / "images" / (im.id + ".ppm");
    try {
      if (!fs::exists(img_file))
        throw std::runtime_error("image file not found");
      im.pixels = load_image(img_file);
    } catch (const std::exception& e) {
      const std::string msg = "image for id '" + im.id + "' unusable: " + e.what();
      if (permissive) {
        std::cerr << "warning: skipping " << msg << "\n";
        continue;
      }
      throw std::runtime_error(msg);
    }
    if (im.pixels.height() < 64 || im.pixels.width() < 64) {
      const std::string msg = "image for id '" + im.id + "' smaller than 64x64";
      if (permissive) {
        std::cerr << "warning: skipping " << msg << "\n";
        continue;
      }
      throw std::runtime_error(msg);
    }
    images.push_back(std::move(im));
  }
  std::sort(images.begin(), images.end(),
            [](const TaggedImage& a, const TaggedImage& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < images.size(); ++i)
    if (images[i].id == images[i - 1].id)
      throw std::runtime_error("duplicate image id: " + images[i].id);
  return images;
}

GroundTruth load_ground_truth(const std::filesystem::path& root) {
  const auto file = root / "ground_truth.jsonl";
  std::ifstream in(file);
  if (!in) throw std::runtime_error("missing ground truth file: " + file.string());
  GroundTruth gt;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    const auto id = j.at("id").get<std::string>();
    gt.group[id] = j.value("group", 0);
    std::vector<RegionRecord> regs;
    for (const auto& r : j.at("regions"))
      regs.push_back({r.at("attribute").get<int>(),
                      Rect{r.at("x").get<int>(), r.at("y").get<int>(),
                           r.at("w").get<int>(), r.at("h").get<int>()}});
    gt.regions[id] = std::move(regs);
  }
  return gt;
}

}  // namespace aesth
