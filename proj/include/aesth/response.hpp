#pragma once

#include "aesth/graphlet.hpp"
#include "aesth/image.hpp"
#include "aesth/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace aesth {

// One linear max-margin hyperplane per textual attribute (one-vs-rest,
// hinge loss, L2 regularization, solved in the dual by coordinate descent).
struct AttributeClassifier {
  MatXd weights;  // D x d
  VecXd bias;     // D

  int attribute_count() const { return static_cast<int>(weights.rows()); }
};

AttributeClassifier train_classifiers(const std::vector<VecXd>& embedded,
                                      const std::vector<std::vector<int>>& labels,
                                      int attribute_count, double C_reg = 1.0);

double decision_value(const AttributeClassifier& clf, const VecXd& y,
                      int attribute_id);
// Logistic response in (0,1).
double graphlet_response(const AttributeClassifier& clf, const VecXd& y,
                         int attribute_id);

// Patch maximizing the responses of the graphlets it contains; the global
// aesthlet (attribute_id == D) is the whole image.
struct Aesthlet {
  std::string image_id;
  int attribute_id = 0;
  Rect rect;
  double score = 0.0;      // selection score of the winning patch
  double mean_prob = 0.0;  // arithmetic mean response of contained graphlets
  Image patch;             // 64x64 crop
};

constexpr int kPatchSide = 64;

enum class PatchScore {
  // Sum over contained graphlets of log p minus the image-wide mean log
  // response: above-average graphlets attract the patch, below-average ones
  // repel it, so the argmax covers the responsive cluster tightly.
  kEvidence,
  kMean,     // mean log p over contained graphlets
  kProduct,  // sum of log p (the literal joint probability)
};

struct DetectOptions {
  int num_patches = 10000;
  std::uint64_t seed = 0;
  PatchScore score = PatchScore::kEvidence;
};

// Shared per-image patch sample: rects drawn on the 81-value relative size
// grid {0.10..0.90} and, per patch, the graphlets with >= 50% of their pixel
// footprint inside. Independent of the attribute, so detection for every
// attribute reuses one sample.
struct PatchSet {
  std::vector<Rect> rects;
  std::vector<std::vector<int>> contained;
  std::vector<double> footprint_fraction_unused;  // reserved
};

PatchSet sample_patches(const Image& img, const SuperpixelPyramid& pyramid,
                        const std::vector<Graphlet>& graphlets, int num_patches,
                        std::uint64_t seed);

std::optional<Aesthlet> detect_aesthlet(const Image& img, const PatchSet& patches,
                                        const std::vector<double>& probs,
                                        const std::string& image_id,
                                        int attribute_id,
                                        PatchScore score = PatchScore::kEvidence);

// Convenience form that samples patches itself.
std::optional<Aesthlet> detect_aesthlet(const Image& img,
                                        const SuperpixelPyramid& pyramid,
                                        const std::vector<Graphlet>& graphlets,
                                        const std::vector<double>& probs,
                                        const std::string& image_id,
                                        int attribute_id,
                                        const DetectOptions& opts);

Aesthlet global_aesthlet(const Image& img, const std::string& image_id,
                         int attribute_count);

// The sampled width/height grids (pixel values) for an image dimension.
std::vector<int> patch_size_grid(int dim);

}  // namespace aesth
