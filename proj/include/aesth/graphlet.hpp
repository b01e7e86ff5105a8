#pragma once

#include "aesth/segment.hpp"
#include "aesth/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace aesth {

constexpr int kMaxGraphletSize = 7;
// 7 vertex slots, each 9 color moments + 128 HOG + 7 adjacency columns.
constexpr int kGraphletVecDim = kMaxGraphletSize * (9 + kHogDim + kMaxGraphletSize);

// Connected induced subgraph of a superpixel adjacency graph, vertices in
// walk-visitation order, at most 7 of them.
struct Graphlet {
  std::string image_id;
  int level = 0;
  std::vector<int> vertices;
  MatXd color;               // t x 9
  MatXd texture;             // t x 128
  Eigen::MatrixXi topology;  // t x t, symmetric, zero diagonal

  int size() const { return static_cast<int>(vertices.size()); }
};

// Fixed-length layout: rows padded to 7, concatenated row-wise.
VecXd pack_graphlet(const MatXd& color, const MatXd& texture,
                    const Eigen::MatrixXi& topology);
void unpack_graphlet(const VecXd& v, int t, MatXd& color, MatXd& texture,
                     Eigen::MatrixXi& topology);
VecXd graphlet_vector(const Graphlet& g);

// Random-walk extraction over every pyramid level: uniform start, uniformly
// chosen unvisited neighbor, target size drawn in [1, max_size], stop when
// stuck; duplicate vertex sets dropped.
std::vector<Graphlet> extract_graphlets(
    const SuperpixelPyramid& pyramid,
    const std::array<std::vector<SuperpixelFeature>, 3>& features,
    const std::string& image_id, int walks_per_level, int max_size,
    std::uint64_t seed);

// Shared/different attribute mass between two attribute sets, both normalized
// by the total image count over all attributes. Sets must be sorted.
std::pair<double, double> semantic_similarity(const std::vector<int>& ci,
                                              const std::vector<int>& cj,
                                              const VecXd& n_counts);

struct EmbeddingOptions {
  int max_graphlets = 5000;  // W is built on at most this many graphlets
  double ridge = 1e-3;
  std::uint64_t seed = 0;
};

// Spectral embedding of the label-affinity graph plus an affine ridge
// projector from standardized graphlet vectors for out-of-sample points.
struct EmbeddingModel {
  int d = 0;
  MatXd coords;       // n_sub x d, orthonormal columns (bottom eigenvectors)
  VecXd eigenvalues;  // the d smallest
  MatXd projector;    // kGraphletVecDim x d
  VecXd offset;       // d
  VecXd mean, scale;  // standardization of the raw vectors
  std::vector<int> subsample;
  double fit_residual = 0.0;  // max in-sample row error of the projector
};

EmbeddingModel fit_embedding(const std::vector<VecXd>& raw_vecs,
                             const std::vector<std::vector<int>>& labels,
                             const VecXd& n_counts, int d,
                             const EmbeddingOptions& opts = {});

VecXd embed(const EmbeddingModel& model, const VecXd& raw_vec);
inline VecXd embed(const EmbeddingModel& model, const Graphlet& g) {
  return embed(model, graphlet_vector(g));
}

// Pairwise weight matrix w_ij = l_s - l_d and its Laplacian quadratic form;
// exposed so the embedding can be cross-checked directly.
MatXd affinity_matrix(const std::vector<std::vector<int>>& labels,
                      const VecXd& n_counts);
double laplacian_objective(const MatXd& W, const MatXd& Y);

}  // namespace aesth
