#include "aesth/graphlet.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace aesth {

VecXd pack_graphlet(const MatXd& color, const MatXd& texture,
                    const Eigen::MatrixXi& topology) {
  const int t = static_cast<int>(color.rows());
  if (t < 1 || t > kMaxGraphletSize)
    throw std::invalid_argument("graphlet size must be in [1,7]");
  if (texture.rows() != t || topology.rows() != t || topology.cols() != t)
    throw std::invalid_argument("inconsistent graphlet matrices");
  constexpr int row_len = 9 + kHogDim + kMaxGraphletSize;
  VecXd v = VecXd::Zero(kGraphletVecDim);
  for (int i = 0; i < t; ++i) {
    const int base = i * row_len;
    v.segment(base, 9) = color.row(i).transpose();
    v.segment(base + 9, kHogDim) = texture.row(i).transpose();
    for (int j = 0; j < t; ++j) v(base + 9 + kHogDim + j) = topology(i, j);
  }
  return v;
}

void unpack_graphlet(const VecXd& v, int t, MatXd& color, MatXd& texture,
                     Eigen::MatrixXi& topology) {
  if (v.size() != kGraphletVecDim)
    throw std::invalid_argument("bad graphlet vector length");
  constexpr int row_len = 9 + kHogDim + kMaxGraphletSize;
  color.resize(t, 9);
  texture.resize(t, kHogDim);
  topology.resize(t, t);
  for (int i = 0; i < t; ++i) {
    const int base = i * row_len;
    color.row(i) = v.segment(base, 9).transpose();
    texture.row(i) = v.segment(base + 9, kHogDim).transpose();
    for (int j = 0; j < t; ++j)
      topology(i, j) = static_cast<int>(v(base + 9 + kHogDim + j));
  }
}

VecXd graphlet_vector(const Graphlet& g) {
  return pack_graphlet(g.color, g.texture, g.topology);
}

std::vector<Graphlet> extract_graphlets(
    const SuperpixelPyramid& pyramid,
    const std::array<std::vector<SuperpixelFeature>, 3>& features,
    const std::string& image_id, int walks_per_level, int max_size,
    std::uint64_t seed) {
  if (max_size < 1 || max_size > kMaxGraphletSize)
    throw std::invalid_argument("max graphlet size must be in [1,7]");

  std::vector<Graphlet> out;
  for (int lv = 0; lv < 3; ++lv) {
    const SuperpixelLevel& level = pyramid.levels[lv];
    const int n = level.count();
    if (n == 0) continue;
    std::mt19937_64 rng(fnv1a(image_id, seed) + static_cast<std::uint64_t>(lv));
    std::set<std::vector<int>> seen;  // sorted vertex sets, per level
    for (int walk = 0; walk < walks_per_level; ++walk) {
      const int target =
          1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_size));
      std::vector<int> visited;
      std::vector<char> in_walk(n, 0);
      int cur = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
      visited.push_back(cur);
      in_walk[cur] = 1;
      while (static_cast<int>(visited.size()) < target) {
        std::vector<int> options;
        for (int nb : level.adjacency[cur])
          if (!in_walk[nb]) options.push_back(nb);
        if (options.empty()) break;  // stuck
        cur = options[rng() % options.size()];
        visited.push_back(cur);
        in_walk[cur] = 1;
      }
      std::vector<int> key = visited;
      std::sort(key.begin(), key.end());
      if (!seen.insert(key).second) continue;

      Graphlet g;
      g.image_id = image_id;
      g.level = lv;
      g.vertices = visited;
      const int t = g.size();
      g.color.resize(t, 9);
      g.texture.resize(t, kHogDim);
      g.topology = Eigen::MatrixXi::Zero(t, t);
      for (int i = 0; i < t; ++i) {
        g.color.row(i) = features[lv][g.vertices[i]].color.transpose();
        g.texture.row(i) = features[lv][g.vertices[i]].hog.transpose();
      }
      for (int i = 0; i < t; ++i)
        for (int j = i + 1; j < t; ++j) {
          const auto& adj = level.adjacency[g.vertices[i]];
          if (std::binary_search(adj.begin(), adj.end(), g.vertices[j])) {
            g.topology(i, j) = 1;
            g.topology(j, i) = 1;
          }
        }
      out.push_back(std::move(g));
    }
  }
  return out;
}

std::pair<double, double> semantic_similarity(const std::vector<int>& ci,
                                              const std::vector<int>& cj,
                                              const VecXd& n_counts) {
  const double total = n_counts.sum();
  if (n_counts.size() == 0 || total <= 0.0)
    throw std::invalid_argument("attribute counts are empty");
  auto check = [&](const std::vector<int>& c) {
    for (int a : c)
      if (a < 0 || a >= n_counts.size())
        throw std::invalid_argument("attribute id outside count vector");
  };
  check(ci);
  check(cj);
  double shared = 0.0, diff = 0.0;
  std::size_t i = 0, j = 0;
  while (i < ci.size() || j < cj.size()) {
    if (i < ci.size() && j < cj.size() && ci[i] == cj[j]) {
      shared += n_counts(ci[i]);
      ++i;
      ++j;
    } else if (j >= cj.size() || (i < ci.size() && ci[i] < cj[j])) {
      diff += n_counts(ci[i]);
      ++i;
    } else {
      diff += n_counts(cj[j]);
      ++j;
    }
  }
  return {shared / total, diff / total};
}

MatXd affinity_matrix(const std::vector<std::vector<int>>& labels,
                      const VecXd& n_counts) {
  const int n = static_cast<int>(labels.size());
  MatXd W(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const auto [ls, ld] = semantic_similarity(labels[i], labels[j], n_counts);
      W(i, j) = ls - ld;
      W(j, i) = W(i, j);
    }
  return W;
}

double laplacian_objective(const MatXd& W, const MatXd& Y) {
  double obj = 0.0;
  for (Eigen::Index i = 0; i < W.rows(); ++i)
    for (Eigen::Index j = 0; j < W.cols(); ++j)
      obj += (Y.row(i) - Y.row(j)).squaredNorm() * W(i, j);
  return obj;
}

EmbeddingModel fit_embedding(const std::vector<VecXd>& raw_vecs,
                             const std::vector<std::vector<int>>& labels,
                             const VecXd& n_counts, int d,
                             const EmbeddingOptions& opts) {
  const int n = static_cast<int>(raw_vecs.size());
  if (n != static_cast<int>(labels.size()))
    throw std::invalid_argument("labels must match graphlet count");
  if (n < 2) throw std::invalid_argument("need at least 2 graphlets");

  EmbeddingModel model;
  model.subsample.resize(n);
  std::iota(model.subsample.begin(), model.subsample.end(), 0);
  if (n > opts.max_graphlets) {
    std::mt19937_64 rng(opts.seed);
    std::shuffle(model.subsample.begin(), model.subsample.end(), rng);
    model.subsample.resize(opts.max_graphlets);
    std::sort(model.subsample.begin(), model.subsample.end());
  }
  const int ns = static_cast<int>(model.subsample.size());
  if (d < 1 || d >= ns)
    throw std::invalid_argument("embedding dimension must satisfy 1 <= d < n");
  model.d = d;

  std::vector<std::vector<int>> sub_labels(ns);
  for (int i = 0; i < ns; ++i) sub_labels[i] = labels[model.subsample[i]];
  const MatXd W = affinity_matrix(sub_labels, n_counts);
  if (!W.allFinite()) throw std::runtime_error("non-finite affinity weights");

  const MatXd L = MatXd(W.rowwise().sum().asDiagonal()) - W;
  Eigen::SelfAdjointEigenSolver<MatXd> eig(L);
  if (eig.info() != Eigen::Success)
    throw std::runtime_error("eigendecomposition of the Laplacian failed");
  model.coords = eig.eigenvectors().leftCols(d);  // ascending eigenvalues
  model.eigenvalues = eig.eigenvalues().head(d);

  // standardization over the subsample
  MatXd Z(ns, kGraphletVecDim);
  for (int i = 0; i < ns; ++i) {
    const VecXd& v = raw_vecs[model.subsample[i]];
    if (v.size() != kGraphletVecDim)
      throw std::invalid_argument("bad graphlet vector length");
    Z.row(i) = v.transpose();
  }
  model.mean = Z.colwise().mean().transpose();
  Z.rowwise() -= model.mean.transpose();
  model.scale = (Z.array().square().colwise().mean()).sqrt().transpose().matrix();
  for (Eigen::Index c = 0; c < model.scale.size(); ++c)
    if (model.scale(c) < 1e-12) model.scale(c) = 1.0;
  Z.array().rowwise() /= model.scale.transpose().array();

  // ridge projector with intercept; targets centered on their column means
  model.offset = model.coords.colwise().mean().transpose();
  const MatXd Yc = model.coords.rowwise() - model.offset.transpose();
  MatXd G = Z.transpose() * Z;
  G.diagonal().array() += opts.ridge;
  model.projector = G.ldlt().solve(Z.transpose() * Yc);

  const MatXd pred = (Z * model.projector).rowwise() + model.offset.transpose();
  model.fit_residual = (pred - model.coords).rowwise().norm().maxCoeff();
  return model;
}

VecXd embed(const EmbeddingModel& model, const VecXd& raw_vec) {
  if (raw_vec.size() != kGraphletVecDim)
    throw std::invalid_argument("bad graphlet vector length");
  const VecXd z = (raw_vec - model.mean).cwiseQuotient(model.scale);
  return model.projector.transpose() * z + model.offset;
}

}  // namespace aesth
