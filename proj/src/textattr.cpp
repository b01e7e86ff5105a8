#include "aesth/textattr.hpp"

#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace aesth {

using nlohmann::json;

int Vocabulary::index_of(const std::string& tag) const {
  if (index_.empty())
    for (int i = 0; i < size(); ++i) index_[tags[i]] = i;
  const auto it = index_.find(tag);
  return it == index_.end() ? -1 : it->second;
}

Vocabulary build_vocabulary(const std::vector<TaggedImage>& corpus, int M) {
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  if (M < 1) throw std::invalid_argument("M must be >= 1");
  std::map<std::string, long> freq;
  for (const auto& im : corpus)
    for (const auto& [tag, n] : im.tags) freq[tag] += n;
  if (static_cast<int>(freq.size()) < M)
    throw std::runtime_error("vocabulary needs " + std::to_string(M) +
                             " distinct tags, corpus has " +
                             std::to_string(freq.size()));
  std::vector<std::pair<std::string, long>> items(freq.begin(), freq.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary vocab;
  for (int i = 0; i < M; ++i) {
    vocab.tags.push_back(items[i].first);
    vocab.counts.push_back(items[i].second);
  }
  return vocab;
}

VecXd augmented_tf(const std::map<std::string, int>& tags, const Vocabulary& vocab) {
  VecXd alpha = VecXd::Zero(vocab.size());
  int max_f = 0;
  for (const auto& [tag, n] : tags)
    if (vocab.index_of(tag) >= 0) max_f = std::max(max_f, n);
  if (max_f == 0) return alpha;  // no vocabulary tag present
  for (const auto& [tag, n] : tags) {
    const int i = vocab.index_of(tag);
    if (i >= 0) alpha(i) = 0.5 + 0.5 * static_cast<double>(n) / max_f;
  }
  return alpha;
}

DocMatrix build_doc_matrix(const std::vector<TaggedImage>& corpus,
                           const Vocabulary& vocab) {
  DocMatrix docs;
  docs.X.resize(static_cast<Eigen::Index>(corpus.size()), vocab.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    docs.X.row(static_cast<Eigen::Index>(i)) =
        augmented_tf(corpus[i].tags, vocab).transpose();
    docs.row_ids.push_back(corpus[i].id);
  }
  return docs;
}

double sparse_lsa_objective(const MatXd& X, const MatXd& U, const MatXd& A,
                            double lambda) {
  return (X - U * A).squaredNorm() + lambda * A.cwiseAbs().sum();
}

long nnz(const MatXd& m) {
  long n = 0;
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      if (m(i, j) != 0.0) ++n;
  return n;
}

namespace {

MatXd soft_threshold(const MatXd& m, double t) {
  return m.unaryExpr([t](double v) {
    const double a = std::abs(v) - t;
    return a > 0.0 ? (v > 0.0 ? a : -a) : 0.0;
  });
}

}  // namespace

TextualAttributeModel fit_sparse_lsa(const DocMatrix& docs, int D, double lambda,
                                     int max_iter, double tol) {
  const MatXd& X = docs.X;
  const Eigen::Index N = X.rows(), M = X.cols();
  if (D < 1 || D >= std::min(N, M))
    throw std::invalid_argument("D must satisfy 1 <= D < min(N,M)");
  if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");

  Eigen::BDCSVD<MatXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VecXd& sv = svd.singularValues();
  const double rank_tol =
      std::max(N, M) * std::numeric_limits<double>::epsilon() * sv(0);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > rank_tol) ++rank;
  if (rank < D)
    throw std::runtime_error("document matrix is rank deficient: rank " +
                             std::to_string(rank) + " < D = " + std::to_string(D));

  TextualAttributeModel model;
  model.lambda = lambda;
  model.U = svd.matrixU().leftCols(D);

  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    // exact minimizer in A given orthonormal U: entrywise lasso
    model.A = soft_threshold(model.U.transpose() * X, lambda / 2.0);
    // exact minimizer in U given A: orthogonal Procrustes on X*A'
    const MatXd XAt = model.U.rows() ? X * model.A.transpose() : MatXd();
    if (XAt.norm() > 0.0) {
      Eigen::BDCSVD<MatXd> ps(XAt, Eigen::ComputeThinU | Eigen::ComputeThinV);
      model.U = ps.matrixU() * ps.matrixV().transpose();
    }
    const double obj = sparse_lsa_objective(X, model.U, model.A, lambda);
    model.loss_trace.push_back(obj);
    if (std::isfinite(prev) && std::abs(prev - obj) <= tol * std::max(1.0, prev))
      break;
    prev = obj;
  }
  return model;
}

VecXd attribute_scores(const TextualAttributeModel& model, const VecXd& alpha) {
  if (alpha.size() != model.A.cols())
    throw std::invalid_argument("alpha length does not match vocabulary size");
  return model.A * alpha;
}

std::vector<int> image_attributes(const TextualAttributeModel& model,
                                  const VecXd& alpha, double activation_threshold) {
  const VecXd s = attribute_scores(model, alpha);
  const double mx = s.cwiseAbs().maxCoeff();
  std::vector<int> active;
  if (mx == 0.0) return active;
  for (Eigen::Index d = 0; d < s.size(); ++d)
    if (std::abs(s(d)) > activation_threshold * mx) active.push_back(static_cast<int>(d));
  return active;
}

void save_textattr_model(const std::filesystem::path& file,
                         const TextualAttributeModel& model) {
  json j;
  j["format"] = "aesth.textattr";
  j["version"] = 1;
  j["lambda"] = model.lambda;
  j["loss_trace"] = model.loss_trace;
  j["vocab"] = {{"tags", model.vocab.tags}, {"counts", model.vocab.counts}};
  std::vector<std::vector<double>> u(model.U.rows());
  for (Eigen::Index i = 0; i < model.U.rows(); ++i) {
    u[i].resize(model.U.cols());
    for (Eigen::Index d = 0; d < model.U.cols(); ++d) u[i][d] = model.U(i, d);
  }
  j["U"] = u;
  json coo = json::array();
  for (Eigen::Index d = 0; d < model.A.rows(); ++d)
    for (Eigen::Index m = 0; m < model.A.cols(); ++m)
      if (model.A(d, m) != 0.0) coo.push_back({d, m, model.A(d, m)});
  j["A_rows"] = model.A.rows();
  j["A_cols"] = model.A.cols();
  j["A_coo"] = coo;
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << j.dump(1) << "\n";
}

TextualAttributeModel load_textattr_model(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  json j;
  in >> j;
  if (j.value("format", "") != "aesth.textattr")
    throw std::runtime_error("not a textattr model file: " + file.string());
  TextualAttributeModel model;
  model.lambda = j.at("lambda").get<double>();
  model.loss_trace = j.at("loss_trace").get<std::vector<double>>();
  model.vocab.tags = j.at("vocab").at("tags").get<std::vector<std::string>>();
  model.vocab.counts = j.at("vocab").at("counts").get<std::vector<long>>();
  const auto& u = j.at("U");
  const Eigen::Index n = static_cast<Eigen::Index>(u.size());
  const Eigen::Index d = n ? static_cast<Eigen::Index>(u[0].size()) : 0;
  model.U.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < d; ++k) model.U(i, k) = u[i][k].get<double>();
  model.A = MatXd::Zero(j.at("A_rows").get<Eigen::Index>(),
                        j.at("A_cols").get<Eigen::Index>());
  for (const auto& e : j.at("A_coo"))
    model.A(e[0].get<Eigen::Index>(), e[1].get<Eigen::Index>()) = e[2].get<double>();
  return model;
}

}  // namespace aesth
