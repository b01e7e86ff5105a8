#pragma once

#include "aesth/corpus.hpp"
#include "aesth/types.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace aesth {

// The M corpus-wide most frequent tags, descending frequency, ties broken
// lexicographically.
struct Vocabulary {
  std::vector<std::string> tags;
  std::vector<long> counts;

  int size() const { return static_cast<int>(tags.size()); }
  // -1 when the tag is out of vocabulary.
  int index_of(const std::string& tag) const;

 private:
  mutable std::map<std::string, int> index_;
};

Vocabulary build_vocabulary(const std::vector<TaggedImage>& corpus, int M);

// Augmented term frequency: 0 for absent tags, otherwise
// 0.5 + 0.5 * f / max_f with max over vocabulary tags present in the document.
VecXd augmented_tf(const std::map<std::string, int>& tags, const Vocabulary& vocab);

struct DocMatrix {
  MatXd X;  // N x M, entries in [0,1]
  std::vector<std::string> row_ids;

  int docs() const { return static_cast<int>(X.rows()); }
  int terms() const { return static_cast<int>(X.cols()); }
};

DocMatrix build_doc_matrix(const std::vector<TaggedImage>& corpus,
                           const Vocabulary& vocab);

// Rank-D factorization X ~ U*A with orthonormal U columns and entrywise-l1
// penalized A. Solved by exact alternating minimization: soft-thresholding for
// A, orthogonal Procrustes for U.
struct TextualAttributeModel {
  MatXd U;  // N x D, U'U = I
  MatXd A;  // D x M, sparse content after thresholding
  double lambda = 0.0;
  std::vector<double> loss_trace;  // objective after each iteration
  Vocabulary vocab;

  int attribute_count() const { return static_cast<int>(A.rows()); }
  int term_count() const { return static_cast<int>(A.cols()); }
};

TextualAttributeModel fit_sparse_lsa(const DocMatrix& docs, int D, double lambda,
                                     int max_iter = 100, double tol = 1e-7);

double sparse_lsa_objective(const MatXd& X, const MatXd& U, const MatXd& A,
                            double lambda);

long nnz(const MatXd& m);

// Active attributes of one document: indices whose |A*alpha| score exceeds
// activation_threshold times the largest score. Empty when alpha projects to 0.
std::vector<int> image_attributes(const TextualAttributeModel& model,
                                  const VecXd& alpha,
                                  double activation_threshold = 0.3);

VecXd attribute_scores(const TextualAttributeModel& model, const VecXd& alpha);

void save_textattr_model(const std::filesystem::path& file,
                         const TextualAttributeModel& model);
TextualAttributeModel load_textattr_model(const std::filesystem::path& file);

}  // namespace aesth
