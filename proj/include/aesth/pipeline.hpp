#pragma once

#include "aesth/corpus.hpp"
#include "aesth/textattr.hpp"
#include "aesth/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace aesth {

// Every pipeline tunable, one INI section per module. Serialized alongside
// each workspace for provenance; stage hashes cover only the keys a stage
// actually reads.
struct PipelineConfig {
  // [corpus]
  std::string corpus_source = "synthetic";  // synthetic | disk
  std::string corpus_path;                  // for disk corpora
  int corpus_num_images = 200;
  int corpus_width = 384;
  int corpus_height = 256;
  int corpus_attributes = 4;
  int corpus_tags_per_attribute = 6;
  double corpus_noise_rate = 0.0;
  int corpus_min_regions = 1;
  int corpus_max_regions = 3;
  std::uint64_t corpus_seed = 1;

  // [textattr]
  int vocab_size = 100;  // M
  int lsa_dim = 10;      // D
  double lsa_lambda = 0.1;
  int lsa_max_iter = 100;
  double lsa_tol = 1e-7;
  double activation_threshold = 0.3;

  // [segment]
  int k_fine = 300;
  int k_medium = 100;
  int k_coarse = 30;
  double compactness = 10.0;
  int slic_iters = 10;
  bool grid_pyramid = false;

  // [graphlet]
  int walks_per_level = 200;
  int max_graphlet_size = 7;
  std::uint64_t graphlet_seed = 7;

  // [embed]
  int embed_dim = 32;
  int embed_max_graphlets = 5000;
  double embed_ridge = 1e-3;
  std::uint64_t embed_seed = 9;

  // [svm]
  double svm_c = 1.0;

  // [detect]
  int num_patches = 10000;
  std::uint64_t patch_seed = 11;
  double min_quality = 0.6;
  std::string patch_score = "evidence";  // evidence | mean | product

  // [cnn]
  int cnn_epochs = 20;
  int cnn_batch = 32;
  double cnn_lr = 0.01;
  double cnn_momentum = 0.9;
  std::uint64_t cnn_seed = 13;
  bool cnn_augment = true;
  bool cnn_branch_fc = true;

  // [features]
  bool use_global = true;
  bool only_global = false;

  // [apps]
  int gmm_components = 5;
  int gmm_max_iter = 100;
  std::uint64_t gmm_seed = 17;
  int pca_dim = 32;
  double sigma = 0.0;  // 0 = median heuristic
  int retrieval_scope = 30;
  bool full_mixture = false;
  bool product_gamma = false;
  int grid_rows = 8;
  int grid_cols = 8;

  // [eval]
  int queries_per_group = 30;
  std::string pleasing_groups = "auto";  // auto = first half, or comma list

  void validate() const;
  // Canonical "section.key" -> value map (every field).
  std::map<std::string, std::string> entries() const;
  void set(const std::string& key, const std::string& value);

  static PipelineConfig load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  std::vector<int> pleasing_group_list() const;
};

struct StageArtifact {
  std::string stage;
  std::string content_hash;
  std::string config_hash;
  std::filesystem::path path;
  bool reused = false;
};

// Stages in execution order.
const std::vector<std::string>& stage_names();

// Runs one stage. Upstream artifacts must already exist in the workspace
// manifest (error naming the missing stage otherwise); a stage whose config
// hash and upstream content hashes are unchanged is a no-op.
StageArtifact run_stage(const std::string& name, const PipelineConfig& config,
                        const std::filesystem::path& workspace);

// Runs every stage in order through classify/retrieve and writes metrics.json.
std::map<std::string, StageArtifact> run_all(const PipelineConfig& config,
                                             const std::filesystem::path& workspace);

// Runs stages until `metric` is computable, then reads it.
// Metrics: accuracy, precision_at_30 (or precision_at_S), attribute_recovery,
// nnz_A.
double compute_metric(const std::string& metric, const PipelineConfig& config,
                      const std::filesystem::path& workspace);

struct SweepRow {
  std::string value;
  double metric = 0.0;
  long nnz_a = 0;
};

// One pipeline run per value in its own sub-workspace; returns the rows and
// writes <param>_sweep.csv under the workspace.
std::vector<SweepRow> sweep(const std::string& parameter,
                            const std::vector<std::string>& values,
                            const std::string& metric, PipelineConfig config,
                            const std::filesystem::path& workspace);

struct AblationResult {
  std::string component;
  double full_accuracy = 0.0;
  double variant_accuracy = 0.0;
  double full_precision = 0.0;
  double variant_precision = 0.0;
};

const std::vector<std::string>& ablation_components();
PipelineConfig ablation_config(const PipelineConfig& base,
                               const std::string& component);

// Paired run of the full pipeline and the reduced variant; deltas written to
// ablate_<component>.csv/json under the workspace.
AblationResult ablate(const std::string& component, const PipelineConfig& config,
                      const std::filesystem::path& workspace);

// Content hash (hex) of a file or directory tree.
std::string hash_path(const std::filesystem::path& p);

// ---------------------------------------------------------------------------
// artifact views shared with the CLI, tests and the acceptance suite

struct LsaArtifact {
  TextualAttributeModel model;
  std::map<std::string, std::vector<int>> assignments;  // image id -> attrs
  VecXd n_counts;                                       // images per attribute
  long nnz_a = 0;
};
LsaArtifact load_lsa_artifact(const std::filesystem::path& file);

struct AesthletRecord {
  std::string image_id;
  int attribute_id = 0;
  Rect rect;
  double score = 0.0;
  double mean_prob = 0.0;
};
std::vector<AesthletRecord> load_aesthlets_artifact(const std::filesystem::path& file);

struct ImageFeature {
  std::string id;
  VecXd vec;
  std::vector<bool> active;
};
std::vector<ImageFeature> load_features_artifact(const std::filesystem::path& file);

// Greedy matching from ground-truth attributes to model attributes by
// co-assignment counts, and the set-recovery score built on it.
std::map<int, int> match_attributes(
    const std::map<std::string, std::vector<int>>& assignments,
    const std::map<std::string, std::vector<RegionRecord>>& truth_regions,
    int num_true, int num_model);
double attribute_recovery_score(
    const std::map<std::string, std::vector<int>>& assignments,
    const std::map<std::string, std::vector<RegionRecord>>& truth_regions,
    int num_true, int num_model);

// Retarget one image (by corpus id or by file path) with the workspace models.
void retarget_cli(const PipelineConfig& config,
                  const std::filesystem::path& workspace, const std::string& image,
                  int out_w, int out_h, const std::filesystem::path& out_file);

// Rank database images against a query id; writes retrieval JSON to out_file.
void retrieve_cli(const PipelineConfig& config,
                  const std::filesystem::path& workspace, const std::string& query_id,
                  const std::filesystem::path& out_file);

}  // namespace aesth
