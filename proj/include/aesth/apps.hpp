#pragma once

#include "aesth/cnn.hpp"
#include "aesth/image.hpp"
#include "aesth/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace aesth {

struct Pca {
  VecXd mean;
  MatXd basis;  // dim x q, orthonormal columns

  int out_dim() const { return static_cast<int>(basis.cols()); }
  VecXd transform(const VecXd& v) const { return basis.transpose() * (v - mean); }
};

Pca fit_pca(const std::vector<VecXd>& samples, int q);

// Diagonal-covariance Gaussian mixture over PCA-reduced features, fit by EM
// with k-means++ initialization.
struct GmmModel {
  Pca pca;
  VecXd weights;                   // L, positive, sums to 1
  MatXd means;                     // L x q
  MatXd variances;                 // L x q, floored at 1e-6
  std::vector<double> loglik_trace;

  int components() const { return static_cast<int>(weights.size()); }
  double log_density(const VecXd& reduced) const;
  // log of max_l weight_l * N(x | mean_l, var_l)
  double log_max_component(const VecXd& reduced) const;
};

constexpr double kVarianceFloor = 1e-6;

GmmModel fit_gmm(const std::vector<VecXd>& features, int components = 5,
                 int max_iter = 100, std::uint64_t seed = 0, int pca_dim = 32);

void save_gmm(const std::filesystem::path& file, const GmmModel& model);
GmmModel load_gmm(const std::filesystem::path& file);

// Per-strip resampling weights for one image, normalized to sum 1 per axis.
struct GridWeights {
  VecXd col_w;  // one per column strip
  VecXd row_w;  // one per row strip
};

struct RetargetModels {
  const CnnModel<float>* cnn = nullptr;
  const GmmModel* gmm = nullptr;
  bool full_mixture = false;  // score grids by the whole mixture density
};

// Grid likelihood weights from the global-branch activation of each grid crop
// embedded in the zero-padded full feature layout.
GridWeights retarget_weights(const Image& img, const RetargetModels& models,
                             int grid_rows = 8, int grid_cols = 8);

// Integer strip extents summing exactly to `target` (largest remainder).
std::vector<int> apportion_lengths(const VecXd& weights, int target);

Image resample_strips(const Image& img, const std::vector<int>& col_widths,
                      const std::vector<int>& row_heights);

Image retarget(const Image& img, const RetargetModels& models, int out_w,
               int out_h, int grid_rows = 8, int grid_cols = 8);

// Kernel transfer score gamma in (0,1]: geometric mean of the per-training
// Gaussian kernels, or the raw product when `product` is set.
struct AestheticScore {
  double gamma = 0.0;
  VecXd kernels;  // per training feature
};

AestheticScore aesthetic_score(const VecXd& z, const std::vector<VecXd>& train,
                               double sigma, bool product = false);

double median_sigma(const std::vector<VecXd>& train);

struct DbEntry {
  std::string id;
  VecXd feature;
  double gamma = 0.0;
};

struct RetrievalResult {
  std::vector<std::string> ids;  // best first
  bool truncated = false;        // database smaller than the requested scope
};

// Ranks by |gamma difference|, then feature distance, then id.
RetrievalResult retrieve(const VecXd& query_feature, double query_gamma,
                         const std::vector<DbEntry>& database, int scope = 30);

}  // namespace aesth
