#include "aesth/apps.hpp"

#include "aesth/response.hpp"

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace aesth {

using nlohmann::json;

Pca fit_pca(const std::vector<VecXd>& samples, int q) {
  if (samples.empty()) throw std::invalid_argument("empty PCA sample set");
  const int n = static_cast<int>(samples.size());
  const Eigen::Index dim = samples[0].size();
  q = std::min<int>(q, static_cast<int>(std::min<Eigen::Index>(dim, n)));
  if (q < 1) throw std::invalid_argument("PCA dimension must be >= 1");

  Pca pca;
  pca.mean = VecXd::Zero(dim);
  for (const auto& s : samples) pca.mean += s;
  pca.mean /= n;

  MatXd C = MatXd::Zero(dim, dim);
  for (const auto& s : samples) {
    const VecXd d = s - pca.mean;
    C.selfadjointView<Eigen::Lower>().rankUpdate(d);
  }
  C = C.selfadjointView<Eigen::Lower>();
  C /= n;
  Eigen::SelfAdjointEigenSolver<MatXd> eig(C);
  pca.basis = eig.eigenvectors().rightCols(q).rowwise().reverse();
  return pca;
}

double GmmModel::log_density(const VecXd& x) const {
  VecXd logp(components());
  for (int l = 0; l < components(); ++l) {
    const auto m = means.row(l).transpose();
    const auto v = variances.row(l).transpose();
    const double quad = ((x - m).array().square() / v.array()).sum();
    const double logdet = v.array().log().sum();
    logp(l) = std::log(weights(l)) -
              0.5 * (quad + logdet + x.size() * std::log(2.0 * M_PI));
  }
  const double mx = logp.maxCoeff();
  return mx + std::log((logp.array() - mx).exp().sum());
}

double GmmModel::log_max_component(const VecXd& x) const {
  double best = -std::numeric_limits<double>::infinity();
  for (int l = 0; l < components(); ++l) {
    const auto m = means.row(l).transpose();
    const auto v = variances.row(l).transpose();
    const double quad = ((x - m).array().square() / v.array()).sum();
    const double logdet = v.array().log().sum();
    best = std::max(best, std::log(weights(l)) -
                              0.5 * (quad + logdet +
                                     x.size() * std::log(2.0 * M_PI)));
  }
  return best;
}

GmmModel fit_gmm(const std::vector<VecXd>& features, int components, int max_iter,
                 std::uint64_t seed, int pca_dim) {
  const int n = static_cast<int>(features.size());
  if (components < 1) throw std::invalid_argument("components must be >= 1");
  if (n < components)
    throw std::invalid_argument("fewer samples (" + std::to_string(n) +
                                ") than mixture components (" +
                                std::to_string(components) + ")");

  GmmModel model;
  model.pca = fit_pca(features, pca_dim);
  const int q = model.pca.out_dim();
  MatXd X(n, q);
  for (int i = 0; i < n; ++i) X.row(i) = model.pca.transform(features[i]).transpose();

  // k-means++ seeding
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> centers;
  centers.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(n)));
  VecXd d2 = (X.rowwise() - X.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<int>(centers.size()) < components) {
    const double total = d2.sum();
    int pick = 0;
    if (total <= 0.0) {
      pick = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
    } else {
      double r = unit(rng) * total;
      for (; pick < n - 1; ++pick) {
        r -= d2(pick);
        if (r <= 0) break;
      }
    }
    centers.push_back(pick);
    d2 = d2.cwiseMin((X.rowwise() - X.row(pick)).rowwise().squaredNorm());
  }

  const int L = components;
  model.means.resize(L, q);
  for (int l = 0; l < L; ++l) model.means.row(l) = X.row(centers[l]);
  model.weights = VecXd::Constant(L, 1.0 / L);
  VecXd global_var = ((X.rowwise() - X.colwise().mean()).array().square())
                         .colwise()
                         .mean()
                         .transpose()
                         .matrix();
  global_var = global_var.cwiseMax(kVarianceFloor);
  model.variances = global_var.transpose().replicate(L, 1);

  MatXd resp(n, L);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    // E step
    MatXd logp(n, L);
    for (int l = 0; l < L; ++l) {
      const auto m = model.means.row(l);
      const auto v = model.variances.row(l);
      const double logdet = v.array().log().sum();
      for (int i = 0; i < n; ++i) {
        const double quad = ((X.row(i) - m).array().square() / v.array()).sum();
        logp(i, l) = std::log(model.weights(l)) -
                     0.5 * (quad + logdet + q * std::log(2.0 * M_PI));
      }
    }
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      const double mx = logp.row(i).maxCoeff();
      const double lse = mx + std::log((logp.row(i).array() - mx).exp().sum());
      ll += lse;
      resp.row(i) = (logp.row(i).array() - lse).exp();
    }
    // the variance floor is a projection and can very slightly reduce the
    // likelihood; stop rather than record a decreasing trace
    if (!model.loglik_trace.empty() && ll < prev_ll) break;
    model.loglik_trace.push_back(ll);
    const bool converged =
        std::isfinite(prev_ll) && std::abs(ll - prev_ll) < 1e-9 * (1.0 + std::abs(ll));
    prev_ll = ll;

    // M step
    const VecXd nk = resp.colwise().sum().transpose().cwiseMax(1e-12);
    model.weights = nk / n;
    model.means = resp.transpose() * X;
    for (int l = 0; l < L; ++l) model.means.row(l) /= nk(l);
    for (int l = 0; l < L; ++l) {
      VecXd acc = VecXd::Zero(q);
      for (int i = 0; i < n; ++i)
        acc += resp(i, l) *
               (X.row(i) - model.means.row(l)).array().square().matrix().transpose();
      model.variances.row(l) = (acc / nk(l)).cwiseMax(kVarianceFloor).transpose();
    }
    if (converged) break;
  }
  return model;
}

void save_gmm(const std::filesystem::path& file, const GmmModel& model) {
  json j;
  j["format"] = "aesth.gmm";
  j["version"] = 1;
  auto mat = [](const MatXd& m) {
    std::vector<std::vector<double>> rows(m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      rows[i].resize(m.cols());
      for (Eigen::Index c = 0; c < m.cols(); ++c) rows[i][c] = m(i, c);
    }
    return rows;
  };
  j["weights"] = std::vector<double>(model.weights.data(),
                                     model.weights.data() + model.weights.size());
  j["means"] = mat(model.means);
  j["variances"] = mat(model.variances);
  j["loglik_trace"] = model.loglik_trace;
  j["pca_mean"] = std::vector<double>(model.pca.mean.data(),
                                      model.pca.mean.data() + model.pca.mean.size());
  j["pca_basis"] = mat(model.pca.basis);
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << j.dump(1) << "\n";
}

GmmModel load_gmm(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  json j;
  in >> j;
  if (j.value("format", "") != "aesth.gmm")
    throw std::runtime_error("not a mixture model file: " + file.string());
  GmmModel model;
  auto mat = [](const json& rows) {
    MatXd m(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(i, c) = rows[i][c].get<double>();
    return m;
  };
  const auto w = j.at("weights").get<std::vector<double>>();
  model.weights = Eigen::Map<const VecXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  model.means = mat(j.at("means"));
  model.variances = mat(j.at("variances"));
  model.loglik_trace = j.at("loglik_trace").get<std::vector<double>>();
  const auto pm = j.at("pca_mean").get<std::vector<double>>();
  model.pca.mean =
      Eigen::Map<const VecXd>(pm.data(), static_cast<Eigen::Index>(pm.size()));
  model.pca.basis = mat(j.at("pca_basis"));
  return model;
}

GridWeights retarget_weights(const Image& img, const RetargetModels& models,
                             int grid_rows, int grid_cols) {
  if (!models.cnn || !models.gmm)
    throw std::invalid_argument("retargeting needs both network and mixture models");
  if (grid_rows < 1 || grid_cols < 1)
    throw std::invalid_argument("grid must be at least 1x1");
  const int h = img.height(), w = img.width();
  const int global_branch = models.cnn->branches() - 1;
  const int units = models.cnn->branch_units();
  const Eigen::Index feat_dim =
      static_cast<Eigen::Index>(models.cnn->branches()) * units;

  MatXd logw(grid_rows, grid_cols);
  for (int r = 0; r < grid_rows; ++r) {
    const int y0 = r * h / grid_rows, y1 = (r + 1) * h / grid_rows;
    for (int c = 0; c < grid_cols; ++c) {
      const int x0 = c * w / grid_cols, x1 = (c + 1) * w / grid_cols;
      const Image cell = resize_bilinear(
          crop(img, Rect{x0, y0, x1 - x0, y1 - y0}), kPatchSide, kPatchSide);
      const auto fwd = models.cnn->forward(models.cnn->to_input({cell}));
      VecXd z = VecXd::Zero(feat_dim);
      z.segment(static_cast<Eigen::Index>(global_branch) * units, units) =
          fwd.branch_acts[global_branch].row(0).transpose().cast<double>();
      const VecXd zr = models.gmm->pca.transform(z);
      logw(r, c) = models.full_mixture ? models.gmm->log_density(zr)
                                       : models.gmm->log_max_component(zr);
    }
  }
  // normalization is scale invariant, so shift by the max before exponentiating
  const MatXd wgt = (logw.array() - logw.maxCoeff()).exp();

  GridWeights gw;
  gw.col_w = wgt.colwise().mean().transpose();
  gw.row_w = wgt.rowwise().mean();
  const double cs = gw.col_w.sum(), rs = gw.row_w.sum();
  if (cs <= 0 || rs <= 0) {
    gw.col_w = VecXd::Constant(grid_cols, 1.0 / grid_cols);
    gw.row_w = VecXd::Constant(grid_rows, 1.0 / grid_rows);
  } else {
    gw.col_w /= cs;
    gw.row_w /= rs;
  }
  return gw;
}

std::vector<int> apportion_lengths(const VecXd& weights, int target) {
  const int n = static_cast<int>(weights.size());
  std::vector<int> len(n, 0);
  std::vector<std::pair<double, int>> rem(n);
  int used = 0;
  for (int i = 0; i < n; ++i) {
    const double exact = target * weights(i);
    len[i] = static_cast<int>(std::floor(exact));
    rem[i] = {exact - len[i], i};
    used += len[i];
  }
  std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int k = 0; k < target - used; ++k) len[rem[k % n].second] += 1;
  return len;
}

namespace {

// 1-D bilinear resample of one strip range [s0,s1) to out_len pixels.
void resample_axis(const Image& in, Image& out, bool horizontal, int s0, int s1,
                   int o0, int out_len) {
  const int span = s1 - s0;
  if (out_len <= 0) return;
  const int other = horizontal ? in.height() : in.width();
  for (int o = 0; o < out_len; ++o) {
    double f = (o + 0.5) * span / out_len - 0.5 + s0;
    f = std::min(std::max(f, static_cast<double>(s0)),
                 static_cast<double>(s1 - 1));
    const int i0 = static_cast<int>(std::floor(f));
    const int i1 = std::min(i0 + 1, s1 - 1);
    const double t = f - i0;
    for (int p = 0; p < other; ++p)
      for (int c = 0; c < 3; ++c) {
        if (horizontal)
          out.ch[c](p, o0 + o) = static_cast<float>((1 - t) * in.ch[c](p, i0) +
                                                    t * in.ch[c](p, i1));
        else
          out.ch[c](o0 + o, p) = static_cast<float>((1 - t) * in.ch[c](i0, p) +
                                                    t * in.ch[c](i1, p));
      }
  }
}

}  // namespace

Image resample_strips(const Image& img, const std::vector<int>& col_widths,
                      const std::vector<int>& row_heights) {
  const int cols = static_cast<int>(col_widths.size());
  const int rows = static_cast<int>(row_heights.size());
  const int out_w = std::accumulate(col_widths.begin(), col_widths.end(), 0);
  const int out_h = std::accumulate(row_heights.begin(), row_heights.end(), 0);

  Image horiz(img.height(), out_w);
  int ox = 0;
  for (int c = 0; c < cols; ++c) {
    const int x0 = c * img.width() / cols, x1 = (c + 1) * img.width() / cols;
    resample_axis(img, horiz, true, x0, x1, ox, col_widths[c]);
    ox += col_widths[c];
  }
  Image out(out_h, out_w);
  int oy = 0;
  for (int r = 0; r < rows; ++r) {
    const int y0 = r * img.height() / rows, y1 = (r + 1) * img.height() / rows;
    resample_axis(horiz, out, false, y0, y1, oy, row_heights[r]);
    oy += row_heights[r];
  }
  return out;
}

Image retarget(const Image& img, const RetargetModels& models, int out_w,
               int out_h, int grid_rows, int grid_cols) {
  if (out_w < 1 || out_h < 1) throw std::invalid_argument("bad target size");
  if (out_w > img.width() || out_h > img.height())
    throw std::invalid_argument("target size exceeds the source image");
  const GridWeights gw = retarget_weights(img, models, grid_rows, grid_cols);
  return resample_strips(img, apportion_lengths(gw.col_w, out_w),
                         apportion_lengths(gw.row_w, out_h));
}

AestheticScore aesthetic_score(const VecXd& z, const std::vector<VecXd>& train,
                               double sigma, bool product) {
  if (train.empty()) throw std::invalid_argument("empty training feature set");
  if (sigma <= 0.0) throw std::invalid_argument("sigma must be positive");
  AestheticScore s;
  s.kernels.resize(static_cast<Eigen::Index>(train.size()));
  double sum_d2 = 0.0;
  for (std::size_t j = 0; j < train.size(); ++j) {
    const double d2 = (z - train[j]).squaredNorm();
    sum_d2 += d2;
    s.kernels(static_cast<Eigen::Index>(j)) = std::exp(-d2 / (2.0 * sigma * sigma));
  }
  const double scale = product ? 1.0 : static_cast<double>(train.size());
  s.gamma = std::exp(-sum_d2 / scale / (2.0 * sigma * sigma));
  return s;
}

double median_sigma(const std::vector<VecXd>& train) {
  std::vector<double> d;
  for (std::size_t i = 0; i < train.size(); ++i)
    for (std::size_t j = i + 1; j < train.size(); ++j)
      d.push_back((train[i] - train[j]).norm());
  if (d.empty()) return 1.0;
  std::sort(d.begin(), d.end());
  const double med = d[d.size() / 2];
  return med > 1e-12 ? med : 1.0;
}

RetrievalResult retrieve(const VecXd& query_feature, double query_gamma,
                         const std::vector<DbEntry>& database, int scope) {
  if (scope < 1) throw std::invalid_argument("scope must be >= 1");
  struct Ranked {
    double gamma_gap;
    double dist;
    const DbEntry* e;
  };
  std::vector<Ranked> ranked;
  ranked.reserve(database.size());
  for (const auto& e : database)
    ranked.push_back({std::abs(e.gamma - query_gamma),
                      (e.feature - query_feature).norm(), &e});
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.gamma_gap != b.gamma_gap) return a.gamma_gap < b.gamma_gap;
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.e->id < b.e->id;
  });
  RetrievalResult res;
  res.truncated = static_cast<int>(ranked.size()) < scope;
  const int take = std::min<int>(scope, static_cast<int>(ranked.size()));
  for (int i = 0; i < take; ++i) res.ids.push_back(ranked[i].e->id);
  return res;
}

}  // namespace aesth
