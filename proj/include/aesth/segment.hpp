#pragma once

#include "aesth/image.hpp"
#include "aesth/types.hpp"

#include <array>
#include <vector>

namespace aesth {

// One segmentation granularity. Every pixel is labeled, labels are compact
// [0, count), each superpixel is 4-connected, adjacency is the shared
// 4-neighbor boundary relation (symmetric, irreflexive).
struct SuperpixelLevel {
  ArrXXi labels;                            // H x W
  MatXd centers;                            // count x 5: (L, a, b, x, y)
  std::vector<std::vector<int>> adjacency;  // sorted neighbor ids

  int count() const { return static_cast<int>(centers.rows()); }
  int height() const { return static_cast<int>(labels.rows()); }
  int width() const { return static_cast<int>(labels.cols()); }
};

// Simple linear iterative clustering on the Lab image. Seeds on a regular
// grid perturbed to the lowest-gradient 3x3 neighbor; assignment within
// 2S x 2S windows under D = d_lab + (compactness/S) * d_xy; orphan components
// merged into the largest adjacent superpixel afterwards.
SuperpixelLevel slic(const Image& img, int k, double compactness = 10.0,
                     int iters = 10);

// Uniform rectangular cells with roughly k cells; used by the grid ablation.
SuperpixelLevel grid_segmentation(const Image& img, int k);

struct SuperpixelPyramid {
  std::array<SuperpixelLevel, 3> levels;  // fine, medium, coarse
};

SuperpixelPyramid build_pyramid(const Image& img,
                                std::array<int, 3> k_levels = {300, 100, 30},
                                double compactness = 10.0, int iters = 10,
                                bool grid_cells = false);

// Region descriptor rows: 9 color moments (mean, stddev, skewness per Lab
// channel) and a 128-dim gradient-orientation histogram over the region's
// bounding box resampled to 32x32 (4x4 cells, 8 unsigned bins, L2-normalized).
struct SuperpixelFeature {
  Eigen::Matrix<double, 9, 1> color;
  VecXd hog;  // 128
};

constexpr int kHogDim = 128;
constexpr int kColorMomentDim = 9;

std::vector<SuperpixelFeature> superpixel_features(const Image& img,
                                                   const SuperpixelLevel& level);

// HOG of an arbitrary grayscale patch resampled to 32x32 (helper shared with
// tests); zero vector when the patch has no gradient energy.
VecXd hog_descriptor(const ArrXXd& gray_patch);

}  // namespace aesth
