#include "aesth/pipeline.hpp"

#include "aesth/apps.hpp"
#include "aesth/cnn.hpp"
#include "aesth/graphlet.hpp"
#include "aesth/response.hpp"
#include "aesth/segment.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace aesth {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// configuration

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_u64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%" PRIu64, v);
  return buf;
}

struct FieldDef {
  std::string key;  // section.name
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("bad boolean value: " + v);
}

const std::vector<FieldDef>& field_defs() {
  static const std::vector<FieldDef> defs = [] {
    std::vector<FieldDef> d;
    auto add_int = [&d](const char* key, int PipelineConfig::* f) {
      d.push_back({key,
                   [f](const PipelineConfig& c) { return std::to_string(c.*f); },
                   [f](PipelineConfig& c, const std::string& v) { c.*f = std::stoi(v); }});
    };
    auto add_dbl = [&d](const char* key, double PipelineConfig::* f) {
      d.push_back({key, [f](const PipelineConfig& c) { return fmt_double(c.*f); },
                   [f](PipelineConfig& c, const std::string& v) { c.*f = std::stod(v); }});
    };
    auto add_u64 = [&d](const char* key, std::uint64_t PipelineConfig::* f) {
      d.push_back({key, [f](const PipelineConfig& c) { return fmt_u64(c.*f); },
                   [f](PipelineConfig& c, const std::string& v) { c.*f = std::stoull(v); }});
    };
    auto add_bool = [&d](const char* key, bool PipelineConfig::* f) {
      d.push_back({key,
                   [f](const PipelineConfig& c) { return (c.*f) ? "true" : "false"; },
                   [f](PipelineConfig& c, const std::string& v) { c.*f = parse_bool(v); }});
    };
    auto add_str = [&d](const char* key, std::string PipelineConfig::* f) {
      d.push_back({key, [f](const PipelineConfig& c) { return c.*f; },
                   [f](PipelineConfig& c, const std::string& v) { c.*f = v; }});
    };

    add_str("corpus.source", &PipelineConfig::corpus_source);
    add_str("corpus.path", &PipelineConfig::corpus_path);
    add_int("corpus.num_images", &PipelineConfig::corpus_num_images);
    add_int("corpus.width", &PipelineConfig::corpus_width);
    add_int("corpus.height", &PipelineConfig::corpus_height);
    add_int("corpus.attributes", &PipelineConfig::corpus_attributes);
    add_int("corpus.tags_per_attribute", &PipelineConfig::corpus_tags_per_attribute);
    add_dbl("corpus.noise_rate", &PipelineConfig::corpus_noise_rate);
    add_int("corpus.min_regions", &PipelineConfig::corpus_min_regions);
    add_int("corpus.max_regions", &PipelineConfig::corpus_max_regions);
    add_u64("corpus.seed", &PipelineConfig::corpus_seed);

    add_int("textattr.M", &PipelineConfig::vocab_size);
    add_int("textattr.D", &PipelineConfig::lsa_dim);
    add_dbl("textattr.lambda", &PipelineConfig::lsa_lambda);
    add_int("textattr.max_iter", &PipelineConfig::lsa_max_iter);
    add_dbl("textattr.tol", &PipelineConfig::lsa_tol);
    add_dbl("textattr.activation_threshold", &PipelineConfig::activation_threshold);

    add_int("segment.k_fine", &PipelineConfig::k_fine);
    add_int("segment.k_medium", &PipelineConfig::k_medium);
    add_int("segment.k_coarse", &PipelineConfig::k_coarse);
    add_dbl("segment.compactness", &PipelineConfig::compactness);
    add_int("segment.iters", &PipelineConfig::slic_iters);
    add_bool("segment.grid_pyramid", &PipelineConfig::grid_pyramid);

    add_int("graphlet.walks_per_level", &PipelineConfig::walks_per_level);
    add_int("graphlet.max_size", &PipelineConfig::max_graphlet_size);
    add_u64("graphlet.seed", &PipelineConfig::graphlet_seed);

    add_int("embed.dim", &PipelineConfig::embed_dim);
    add_int("embed.max_graphlets", &PipelineConfig::embed_max_graphlets);
    add_dbl("embed.ridge", &PipelineConfig::embed_ridge);
    add_u64("embed.seed", &PipelineConfig::embed_seed);

    add_dbl("svm.C", &PipelineConfig::svm_c);

    add_int("detect.num_patches", &PipelineConfig::num_patches);
    add_u64("detect.seed", &PipelineConfig::patch_seed);
    add_dbl("detect.min_quality", &PipelineConfig::min_quality);
    add_str("detect.score", &PipelineConfig::patch_score);

    add_int("cnn.epochs", &PipelineConfig::cnn_epochs);
    add_int("cnn.batch", &PipelineConfig::cnn_batch);
    add_dbl("cnn.lr", &PipelineConfig::cnn_lr);
    add_dbl("cnn.momentum", &PipelineConfig::cnn_momentum);
    add_u64("cnn.seed", &PipelineConfig::cnn_seed);
    add_bool("cnn.augment", &PipelineConfig::cnn_augment);
    add_bool("cnn.branch_fc", &PipelineConfig::cnn_branch_fc);

    add_bool("features.use_global", &PipelineConfig::use_global);
    add_bool("features.only_global", &PipelineConfig::only_global);

    add_int("apps.gmm_components", &PipelineConfig::gmm_components);
    add_int("apps.gmm_max_iter", &PipelineConfig::gmm_max_iter);
    add_u64("apps.gmm_seed", &PipelineConfig::gmm_seed);
    add_int("apps.pca_dim", &PipelineConfig::pca_dim);
    add_dbl("apps.sigma", &PipelineConfig::sigma);
    add_int("apps.S", &PipelineConfig::retrieval_scope);
    add_bool("apps.full_mixture", &PipelineConfig::full_mixture);
    add_bool("apps.product_gamma", &PipelineConfig::product_gamma);
    add_int("apps.grid_rows", &PipelineConfig::grid_rows);
    add_int("apps.grid_cols", &PipelineConfig::grid_cols);

    add_int("eval.queries_per_group", &PipelineConfig::queries_per_group);
    add_str("eval.pleasing_groups", &PipelineConfig::pleasing_groups);
    return d;
  }();
  return defs;
}

}  // namespace

void PipelineConfig::validate() const {
  if (corpus_source != "synthetic" && corpus_source != "disk")
    throw std::invalid_argument("corpus.source must be synthetic or disk");
  if (corpus_source == "disk" && corpus_path.empty())
    throw std::invalid_argument("corpus.path required for disk corpora");
  if (corpus_source == "synthetic") {
    if (corpus_attributes < 2)
      throw std::invalid_argument("corpus.attributes must be >= 2");
    if (corpus_num_images < 1)
      throw std::invalid_argument("corpus.num_images must be >= 1");
    if (corpus_noise_rate < 0 || corpus_noise_rate >= 1)
      throw std::invalid_argument("corpus.noise_rate must be in [0,1)");
    if (corpus_width < 64 || corpus_height < 64)
      throw std::invalid_argument("corpus images must be at least 64x64");
    if (corpus_min_regions < 1 || corpus_max_regions < corpus_min_regions)
      throw std::invalid_argument("bad corpus region count range");
  }
  if (vocab_size < 1) throw std::invalid_argument("textattr.M must be >= 1");
  if (lsa_dim < 1 || lsa_dim >= vocab_size)
    throw std::invalid_argument("textattr.D must satisfy 1 <= D < M");
  if (lsa_lambda < 0) throw std::invalid_argument("textattr.lambda must be >= 0");
  if (lsa_max_iter < 1) throw std::invalid_argument("textattr.max_iter must be >= 1");
  if (activation_threshold < 0 || activation_threshold > 1)
    throw std::invalid_argument("textattr.activation_threshold must be in [0,1]");
  if (!(k_fine > k_medium && k_medium > k_coarse && k_coarse >= 4))
    throw std::invalid_argument(
        "segment counts must satisfy fine > medium > coarse >= 4");
  if (slic_iters < 1) throw std::invalid_argument("segment.iters must be >= 1");
  if (walks_per_level < 1)
    throw std::invalid_argument("graphlet.walks_per_level must be >= 1");
  if (max_graphlet_size < 1 || max_graphlet_size > kMaxGraphletSize)
    throw std::invalid_argument("graphlet.max_size must be in [1,7]");
  if (embed_dim < 1) throw std::invalid_argument("embed.dim must be >= 1");
  if (embed_max_graphlets < 2)
    throw std::invalid_argument("embed.max_graphlets must be >= 2");
  if (svm_c <= 0) throw std::invalid_argument("svm.C must be positive");
  if (num_patches < 0) throw std::invalid_argument("detect.num_patches must be >= 0");
  if (patch_score != "evidence" && patch_score != "mean" && patch_score != "product")
    throw std::invalid_argument("detect.score must be evidence, mean or product");
  if (cnn_epochs < 0 || cnn_batch < 1)
    throw std::invalid_argument("bad cnn epoch/batch settings");
  if (gmm_components < 1)
    throw std::invalid_argument("apps.gmm_components must be >= 1");
  if (pca_dim < 1) throw std::invalid_argument("apps.pca_dim must be >= 1");
  if (sigma < 0) throw std::invalid_argument("apps.sigma must be >= 0");
  if (retrieval_scope < 1) throw std::invalid_argument("apps.S must be >= 1");
  if (grid_rows < 1 || grid_cols < 1)
    throw std::invalid_argument("retarget grid must be at least 1x1");
  if (queries_per_group < 1)
    throw std::invalid_argument("eval.queries_per_group must be >= 1");
}

std::map<std::string, std::string> PipelineConfig::entries() const {
  std::map<std::string, std::string> m;
  for (const auto& f : field_defs()) m[f.key] = f.get(*this);
  return m;
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
  // accept both the full section.key form and the bare field name
  for (const auto& f : field_defs())
    if (f.key == key || f.key.substr(f.key.find('.') + 1) == key) {
      f.set(*this, value);
      return;
    }
  throw std::invalid_argument("unknown configuration parameter: " + key);
}

PipelineConfig PipelineConfig::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read config file: " + file.string());
  PipelineConfig cfg;
  std::string line, section;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("bad config line " + std::to_string(lineno) + ": " +
                               line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    cfg.set(section.empty() ? key : section + "." + key, value);
  }
  return cfg;
}

void PipelineConfig::save(const fs::path& file) const {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write config file: " + file.string());
  std::string section;
  for (const auto& [key, value] : entries()) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << "\n";
      out << "[" << sec << "]\n";
      section = sec;
    }
    out << key.substr(dot + 1) << " = " << value << "\n";
  }
}

std::vector<int> PipelineConfig::pleasing_group_list() const {
  std::vector<int> groups;
  if (pleasing_groups == "auto") {
    for (int g = 0; g < (corpus_attributes + 1) / 2; ++g) groups.push_back(g);
    return groups;
  }
  std::stringstream ss(pleasing_groups);
  std::string tok;
  while (std::getline(ss, tok, ',')) groups.push_back(std::stoi(tok));
  if (groups.empty())
    throw std::invalid_argument("eval.pleasing_groups must name at least one group");
  return groups;
}

// ---------------------------------------------------------------------------
// hashing and artifact plumbing

std::string hash_path(const fs::path& p) {
  std::uint64_t h = 14695981039346656037ull;
  auto hash_file = [&h](const fs::path& f, const std::string& rel) {
    h = fnv1a(rel, h);
    std::ifstream in(f, std::ios::binary);
    if (!in) throw std::runtime_error("cannot hash " + f.string());
    char buf[1 << 16];
    while (in) {
      in.read(buf, sizeof(buf));
      h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
    }
  };
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) hash_file(f, fs::relative(f, p).generic_string());
  } else if (fs::is_regular_file(p)) {
    hash_file(p, p.filename().string());
  } else {
    throw std::runtime_error("artifact path does not exist: " + p.string());
  }
  return hash_hex(h);
}

namespace {

struct BinWriter {
  std::ofstream out;
  explicit BinWriter(const fs::path& f) : out(f, std::ios::binary) {
    if (!out) throw std::runtime_error("cannot write " + f.string());
  }
  void raw(const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u32(std::uint32_t v) { raw(&v, sizeof(v)); }
  void i32(std::int32_t v) { raw(&v, sizeof(v)); }
  void f64(double v) { raw(&v, sizeof(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void vecxd(const VecXd& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    raw(v.data(), sizeof(double) * v.size());
  }
  void mat(const MatXd& m) {
    u32(static_cast<std::uint32_t>(m.rows()));
    u32(static_cast<std::uint32_t>(m.cols()));
    raw(m.data(), sizeof(double) * m.size());
  }
  void vec_i32(const std::vector<int>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    raw(v.data(), v.size() * sizeof(int));
  }
};

struct BinReader {
  std::ifstream in;
  fs::path file;
  explicit BinReader(const fs::path& f) : in(f, std::ios::binary), file(f) {
    if (!in) throw std::runtime_error("cannot read " + f.string());
  }
  void raw(void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw std::runtime_error("truncated artifact: " + file.string());
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof(v));
    return v;
  }
  std::int32_t i32() {
    std::int32_t v;
    raw(&v, sizeof(v));
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof(v));
    return v;
  }
  std::string str() {
    std::string s(u32(), '\0');
    raw(s.data(), s.size());
    return s;
  }
  VecXd vecxd() {
    VecXd v(u32());
    raw(v.data(), sizeof(double) * v.size());
    return v;
  }
  MatXd mat() {
    const auto r = u32();
    const auto c = u32();
    MatXd m(r, c);
    raw(m.data(), sizeof(double) * m.size());
    return m;
  }
  std::vector<int> vec_i32() {
    std::vector<int> v(u32());
    raw(v.data(), v.size() * sizeof(int));
    return v;
  }
};

void check_magic(BinReader& r, const char* magic) {
  char buf[8];
  r.raw(buf, 8);
  if (std::string(buf, 8) != magic)
    throw std::runtime_error("unexpected artifact format in " + r.file.string());
}

// ---------------------------------------------------------------------------
// per-stage data carriers

struct SegImage {
  std::string id;
  SuperpixelPyramid pyramid;
  std::array<std::vector<SuperpixelFeature>, 3> features;
};

void write_segment(const fs::path& file, const std::vector<SegImage>& data) {
  BinWriter w(file);
  w.raw("AESEG001", 8);
  w.u32(static_cast<std::uint32_t>(data.size()));
  for (const auto& s : data) {
    w.str(s.id);
    for (int lv = 0; lv < 3; ++lv) {
      const auto& level = s.pyramid.levels[lv];
      w.u32(static_cast<std::uint32_t>(level.height()));
      w.u32(static_cast<std::uint32_t>(level.width()));
      w.raw(level.labels.data(), sizeof(int) * level.labels.size());
      w.mat(level.centers);
      w.u32(static_cast<std::uint32_t>(level.adjacency.size()));
      for (const auto& adj : level.adjacency) w.vec_i32(adj);
      w.u32(static_cast<std::uint32_t>(s.features[lv].size()));
      for (const auto& f : s.features[lv]) {
        w.raw(f.color.data(), sizeof(double) * 9);
        w.vecxd(f.hog);
      }
    }
  }
}

std::vector<SegImage> read_segment(const fs::path& file) {
  BinReader r(file);
  check_magic(r, "AESEG001");
  std::vector<SegImage> data(r.u32());
  for (auto& s : data) {
    s.id = r.str();
    for (int lv = 0; lv < 3; ++lv) {
      auto& level = s.pyramid.levels[lv];
      const auto h = r.u32();
      const auto w2 = r.u32();
      level.labels.resize(h, w2);
      r.raw(level.labels.data(), sizeof(int) * level.labels.size());
      level.centers = r.mat();
      level.adjacency.resize(r.u32());
      for (auto& adj : level.adjacency) adj = r.vec_i32();
      s.features[lv].resize(r.u32());
      for (auto& f : s.features[lv]) {
        r.raw(f.color.data(), sizeof(double) * 9);
        f.hog = r.vecxd();
      }
    }
  }
  return data;
}

struct GraphletRecord {
  int level = 0;
  std::vector<int> vertices;
};

struct GraphletsImage {
  std::string id;
  std::vector<GraphletRecord> graphlets;
};

void write_graphlets(const fs::path& file, const std::vector<GraphletsImage>& data) {
  BinWriter w(file);
  w.raw("AEGRL001", 8);
  w.u32(static_cast<std::uint32_t>(data.size()));
  for (const auto& g : data) {
    w.str(g.id);
    w.u32(static_cast<std::uint32_t>(g.graphlets.size()));
    for (const auto& rec : g.graphlets) {
      w.i32(rec.level);
      w.vec_i32(rec.vertices);
    }
  }
}

std::vector<GraphletsImage> read_graphlets(const fs::path& file) {
  BinReader r(file);
  check_magic(r, "AEGRL001");
  std::vector<GraphletsImage> data(r.u32());
  for (auto& g : data) {
    g.id = r.str();
    g.graphlets.resize(r.u32());
    for (auto& rec : g.graphlets) {
      rec.level = r.i32();
      rec.vertices = r.vec_i32();
    }
  }
  return data;
}

struct EmbedArtifact {
  int attribute_count = 0;
  EmbeddingModel model;
  std::vector<VecXd> embedded;          // graphlets-artifact order
  std::vector<std::vector<int>> labels;
  VecXd n_counts;
};

void write_embed(const fs::path& file, const EmbedArtifact& a) {
  BinWriter w(file);
  w.raw("AEEMB001", 8);
  w.i32(a.attribute_count);
  w.i32(a.model.d);
  w.vecxd(a.model.eigenvalues);
  w.mat(a.model.projector);
  w.vecxd(a.model.offset);
  w.vecxd(a.model.mean);
  w.vecxd(a.model.scale);
  w.vec_i32(a.model.subsample);
  w.f64(a.model.fit_residual);
  w.vecxd(a.n_counts);
  w.u32(static_cast<std::uint32_t>(a.embedded.size()));
  for (std::size_t i = 0; i < a.embedded.size(); ++i) {
    w.vecxd(a.embedded[i]);
    w.vec_i32(a.labels[i]);
  }
}

EmbedArtifact read_embed(const fs::path& file) {
  BinReader r(file);
  check_magic(r, "AEEMB001");
  EmbedArtifact a;
  a.attribute_count = r.i32();
  a.model.d = r.i32();
  a.model.eigenvalues = r.vecxd();
  a.model.projector = r.mat();
  a.model.offset = r.vecxd();
  a.model.mean = r.vecxd();
  a.model.scale = r.vecxd();
  a.model.subsample = r.vec_i32();
  a.model.fit_residual = r.f64();
  a.n_counts = r.vecxd();
  const auto n = r.u32();
  a.embedded.resize(n);
  a.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    a.embedded[i] = r.vecxd();
    a.labels[i] = r.vec_i32();
  }
  return a;
}

void write_features(const fs::path& file, const std::vector<ImageFeature>& feats) {
  BinWriter w(file);
  w.raw("AEFEA001", 8);
  w.u32(static_cast<std::uint32_t>(feats.size()));
  for (const auto& f : feats) {
    w.str(f.id);
    w.vecxd(f.vec);
    std::vector<int> m(f.active.begin(), f.active.end());
    w.vec_i32(m);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// public artifact views

LsaArtifact load_lsa_artifact(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  json j;
  in >> j;
  LsaArtifact a;
  a.model.lambda = j.at("lambda").get<double>();
  a.model.loss_trace = j.at("loss_trace").get<std::vector<double>>();
  a.model.vocab.tags = j.at("vocab").at("tags").get<std::vector<std::string>>();
  a.model.vocab.counts = j.at("vocab").at("counts").get<std::vector<long>>();
  {
    const auto& u = j.at("U");
    const Eigen::Index n = static_cast<Eigen::Index>(u.size());
    const Eigen::Index d = n ? static_cast<Eigen::Index>(u[0].size()) : 0;
    a.model.U.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < d; ++k) a.model.U(i, k) = u[i][k].get<double>();
  }
  a.model.A = MatXd::Zero(j.at("A_rows").get<Eigen::Index>(),
                          j.at("A_cols").get<Eigen::Index>());
  for (const auto& e : j.at("A_coo"))
    a.model.A(e[0].get<Eigen::Index>(), e[1].get<Eigen::Index>()) = e[2].get<double>();
  for (const auto& [id, attrs] : j.at("assignments").items())
    a.assignments[id] = attrs.get<std::vector<int>>();
  const auto nc = j.at("n_counts").get<std::vector<double>>();
  a.n_counts = Eigen::Map<const VecXd>(nc.data(), static_cast<Eigen::Index>(nc.size()));
  a.nnz_a = j.at("nnz").get<long>();
  return a;
}

std::vector<AesthletRecord> load_aesthlets_artifact(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  std::vector<AesthletRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    AesthletRecord rec;
    rec.image_id = j.at("image_id").get<std::string>();
    rec.attribute_id = j.at("attribute_id").get<int>();
    rec.rect = Rect{j.at("x").get<int>(), j.at("y").get<int>(), j.at("w").get<int>(),
                    j.at("h").get<int>()};
    rec.score = j.at("score").get<double>();
    rec.mean_prob = j.at("mean_prob").get<double>();
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<ImageFeature> load_features_artifact(const fs::path& file) {
  BinReader r(file);
  check_magic(r, "AEFEA001");
  std::vector<ImageFeature> feats(r.u32());
  for (auto& f : feats) {
    f.id = r.str();
    f.vec = r.vecxd();
    const auto m = r.vec_i32();
    f.active.assign(m.begin(), m.end());
  }
  return feats;
}

// ---------------------------------------------------------------------------
// attribute matching

std::map<int, int> match_attributes(
    const std::map<std::string, std::vector<int>>& assignments,
    const std::map<std::string, std::vector<RegionRecord>>& truth_regions,
    int num_true, int num_model) {
  MatXd counts = MatXd::Zero(num_true, num_model);
  for (const auto& [id, regions] : truth_regions) {
    const auto it = assignments.find(id);
    if (it == assignments.end()) continue;
    std::set<int> truth;
    for (const auto& r : regions) truth.insert(r.attribute_id);
    for (int g : truth)
      for (int d : it->second)
        if (g < num_true && d >= 0 && d < num_model) counts(g, d) += 1;
  }
  std::map<int, int> match;
  std::set<int> used;
  for (int step = 0; step < std::min(num_true, num_model); ++step) {
    int bg = -1, bd = -1;
    double best = -1;
    for (int g = 0; g < num_true; ++g) {
      if (match.count(g)) continue;
      for (int d = 0; d < num_model; ++d) {
        if (used.count(d)) continue;
        if (counts(g, d) > best) {
          best = counts(g, d);
          bg = g;
          bd = d;
        }
      }
    }
    if (bg < 0) break;
    match[bg] = bd;
    used.insert(bd);
  }
  return match;
}

double attribute_recovery_score(
    const std::map<std::string, std::vector<int>>& assignments,
    const std::map<std::string, std::vector<RegionRecord>>& truth_regions,
    int num_true, int num_model) {
  const auto match = match_attributes(assignments, truth_regions, num_true, num_model);
  std::map<int, int> inverse;  // model attr -> truth attr
  for (const auto& [g, d] : match) inverse[d] = g;

  double total = 0.0;
  int images = 0;
  for (const auto& [id, regions] : truth_regions) {
    const auto it = assignments.find(id);
    if (it == assignments.end()) continue;
    std::set<int> truth;
    for (const auto& r : regions) truth.insert(r.attribute_id);
    std::set<int> mapped;
    int spurious = 0;
    for (int d : it->second) {
      const auto inv = inverse.find(d);
      if (inv == inverse.end()) ++spurious;
      else mapped.insert(inv->second);
    }
    std::set<int> inter;
    std::set<int> uni = truth;
    for (int g : mapped) {
      if (truth.count(g)) inter.insert(g);
      uni.insert(g);
    }
    const double denom = static_cast<double>(uni.size() + spurious);
    total += denom > 0 ? inter.size() / denom : 1.0;
    ++images;
  }
  return images ? total / images : 0.0;
}

// ---------------------------------------------------------------------------
// stage registry

namespace {

struct StageDef {
  std::string name;
  std::vector<std::string> deps;
  std::vector<std::string> key_prefixes;
  std::string artifact;  // relative to workspace
};

const std::vector<StageDef>& stage_defs() {
  static const std::vector<StageDef> defs = {
      {"corpus", {}, {"corpus."}, "corpus"},
      {"build-vocab", {"corpus"}, {"textattr.M"}, "vocab.json"},
      {"fit-lsa",
       {"corpus", "build-vocab"},
       {"textattr.D", "textattr.lambda", "textattr.max_iter", "textattr.tol",
        "textattr.activation_threshold"},
       "lsa.json"},
      {"segment", {"corpus"}, {"segment."}, "segment.bin"},
      {"graphlets", {"segment"}, {"graphlet."}, "graphlets.bin"},
      {"embed", {"graphlets", "segment", "fit-lsa"}, {"embed."}, "embed.bin"},
      {"train-svm", {"embed"}, {"svm."}, "svm.json"},
      {"detect-aesthlets",
       {"train-svm", "embed", "graphlets", "segment", "corpus"},
       {"detect."},
       "aesthlets.jsonl"},
      {"train-cnn",
       {"detect-aesthlets", "corpus"},
       {"cnn.", "features.", "detect.min_quality", "textattr.D"},
       "cnn.bin"},
      {"extract-features",
       {"train-cnn", "detect-aesthlets", "corpus"},
       {"features.", "textattr.D"},
       "features.bin"},
      {"fit-gmm",
       {"extract-features", "corpus"},
       {"apps.gmm_components", "apps.gmm_max_iter", "apps.gmm_seed", "apps.pca_dim",
        "eval."},
       "gmm.json"},
      {"classify",
       {"extract-features", "corpus"},
       {"apps.sigma", "apps.product_gamma", "eval."},
       "classify_metrics.json"},
      {"retrieve",
       {"extract-features", "corpus"},
       {"apps.sigma", "apps.product_gamma", "apps.S", "eval."},
       "retrieve_metrics.json"},
  };
  return defs;
}

const StageDef& find_stage(const std::string& name) {
  for (const auto& s : stage_defs())
    if (s.name == name) return s;
  throw std::invalid_argument("unknown stage: " + name);
}

std::string stage_config_hash(const StageDef& stage, const PipelineConfig& config) {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& [key, value] : config.entries())
    for (const auto& prefix : stage.key_prefixes)
      if (key.rfind(prefix, 0) == 0) {
        h = fnv1a(key, h);
        h = fnv1a("=", h);
        h = fnv1a(value, h);
        break;
      }
  return hash_hex(h);
}

json load_manifest(const fs::path& workspace) {
  const auto file = workspace / "manifest.json";
  if (!fs::exists(file)) return json::object();
  std::ifstream in(file);
  json j;
  in >> j;
  return j;
}

void save_manifest(const fs::path& workspace, const json& manifest) {
  std::ofstream out(workspace / "manifest.json");
  out << manifest.dump(1) << "\n";
}

fs::path corpus_root(const fs::path& workspace, const PipelineConfig& config) {
  return config.corpus_source == "disk" ? fs::path(config.corpus_path)
                                        : workspace / "corpus";
}

fs::path artifact_path(const fs::path& workspace, const StageDef& stage,
                       const PipelineConfig& config) {
  if (stage.name == "corpus") return corpus_root(workspace, config);
  return workspace / stage.artifact;
}

// ---------------------------------------------------------------------------
// evaluation helpers

struct EvalSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> query_ids;
  std::map<std::string, int> group;
};

EvalSplit make_split(const GroundTruth& truth, int queries_per_group) {
  std::map<int, std::vector<std::string>> by_group;
  for (const auto& [id, g] : truth.group) by_group[g].push_back(id);
  EvalSplit split;
  split.group = truth.group;
  for (auto& [g, ids] : by_group) {
    std::sort(ids.begin(), ids.end());
    const int q = std::min<int>(queries_per_group,
                                std::max(0, static_cast<int>(ids.size()) - 1));
    for (std::size_t i = 0; i < ids.size(); ++i)
      (static_cast<int>(i) < q ? split.query_ids : split.train_ids).push_back(ids[i]);
  }
  std::sort(split.train_ids.begin(), split.train_ids.end());
  std::sort(split.query_ids.begin(), split.query_ids.end());
  return split;
}

std::map<std::string, const ImageFeature*> feature_index(
    const std::vector<ImageFeature>& feats) {
  std::map<std::string, const ImageFeature*> m;
  for (const auto& f : feats) m[f.id] = &f;
  return m;
}

std::vector<VecXd> pleasing_train_features(
    const PipelineConfig& config, const EvalSplit& split,
    const std::map<std::string, const ImageFeature*>& by_id) {
  const auto pleasing = config.pleasing_group_list();
  const std::set<int> pset(pleasing.begin(), pleasing.end());
  std::vector<VecXd> train;
  for (const auto& id : split.train_ids) {
    const auto git = split.group.find(id);
    if (git == split.group.end() || !pset.count(git->second)) continue;
    const auto fit = by_id.find(id);
    if (fit != by_id.end()) train.push_back(fit->second->vec);
  }
  if (train.empty())
    throw std::runtime_error("no pleasing-group training features available");
  return train;
}

double resolve_sigma(const PipelineConfig& config,
                     const std::vector<VecXd>& pleasing_train) {
  return config.sigma > 0 ? config.sigma : median_sigma(pleasing_train);
}

// ---------------------------------------------------------------------------
// stage bodies

std::vector<TaggedImage> load_stage_corpus(const fs::path& workspace,
                                           const PipelineConfig& config) {
  return load_corpus(corpus_root(workspace, config));
}

void stage_corpus(const PipelineConfig& config, const fs::path& workspace) {
  if (config.corpus_source == "disk") {
    if (!fs::exists(config.corpus_path))
      throw std::runtime_error("disk corpus not found: " + config.corpus_path);
    return;
  }
  SyntheticSpec spec = SyntheticSpec::basic(
      config.corpus_attributes, config.corpus_num_images, config.corpus_width,
      config.corpus_height, config.corpus_noise_rate,
      config.corpus_tags_per_attribute);
  spec.min_regions = config.corpus_min_regions;
  spec.max_regions = config.corpus_max_regions;
  const SyntheticCorpus corpus = generate_synthetic(spec, config.corpus_seed);
  const fs::path root = workspace / "corpus";
  fs::remove_all(root);
  save_corpus(root, corpus.images, &corpus.truth);
}

void stage_build_vocab(const PipelineConfig& config, const fs::path& workspace) {
  const auto corpus = load_stage_corpus(workspace, config);
  const Vocabulary vocab = build_vocabulary(corpus, config.vocab_size);
  json j;
  j["format"] = "aesth.vocab";
  j["tags"] = vocab.tags;
  j["counts"] = vocab.counts;
  std::ofstream out(workspace / "vocab.json");
  out << j.dump(1) << "\n";
}

Vocabulary load_vocab(const fs::path& workspace) {
  std::ifstream in(workspace / "vocab.json");
  if (!in) throw std::runtime_error("missing vocab.json");
  json j;
  in >> j;
  Vocabulary vocab;
  vocab.tags = j.at("tags").get<std::vector<std::string>>();
  vocab.counts = j.at("counts").get<std::vector<long>>();
  return vocab;
}

void stage_fit_lsa(const PipelineConfig& config, const fs::path& workspace) {
  const auto corpus = load_stage_corpus(workspace, config);
  const Vocabulary vocab = load_vocab(workspace);
  const DocMatrix docs = build_doc_matrix(corpus, vocab);
  TextualAttributeModel model = fit_sparse_lsa(docs, config.lsa_dim, config.lsa_lambda,
                                               config.lsa_max_iter, config.lsa_tol);
  model.vocab = vocab;

  json assignments = json::object();
  VecXd n_counts = VecXd::Zero(config.lsa_dim);
  for (int i = 0; i < docs.docs(); ++i) {
    const VecXd alpha = docs.X.row(i).transpose();
    const auto attrs = image_attributes(model, alpha, config.activation_threshold);
    assignments[docs.row_ids[i]] = attrs;
    for (int d : attrs) n_counts(d) += 1;
  }

  save_textattr_model(workspace / "lsa.json", model);
  std::ifstream in(workspace / "lsa.json");
  json j;
  in >> j;
  in.close();
  j["assignments"] = assignments;
  j["n_counts"] =
      std::vector<double>(n_counts.data(), n_counts.data() + n_counts.size());
  j["nnz"] = nnz(model.A);
  std::ofstream out(workspace / "lsa.json");
  out << j.dump(1) << "\n";
}

void stage_segment(const PipelineConfig& config, const fs::path& workspace) {
  const auto corpus = load_stage_corpus(workspace, config);
  std::vector<SegImage> data;
  data.reserve(corpus.size());
  for (const auto& im : corpus) {
    SegImage s;
    s.id = im.id;
    s.pyramid =
        build_pyramid(im.pixels, {config.k_fine, config.k_medium, config.k_coarse},
                      config.compactness, config.slic_iters, config.grid_pyramid);
    for (int lv = 0; lv < 3; ++lv)
      s.features[lv] = superpixel_features(im.pixels, s.pyramid.levels[lv]);
    data.push_back(std::move(s));
  }
  write_segment(workspace / "segment.bin", data);
}

void stage_graphlets(const PipelineConfig& config, const fs::path& workspace) {
  const auto seg = read_segment(workspace / "segment.bin");
  std::vector<GraphletsImage> out;
  out.reserve(seg.size());
  for (const auto& s : seg) {
    GraphletsImage gi;
    gi.id = s.id;
    const auto graphlets =
        extract_graphlets(s.pyramid, s.features, s.id, config.walks_per_level,
                          config.max_graphlet_size, config.graphlet_seed);
    for (const auto& g : graphlets) gi.graphlets.push_back({g.level, g.vertices});
    out.push_back(std::move(gi));
  }
  write_graphlets(workspace / "graphlets.bin", out);
}

VecXd materialize_vector(const SegImage& seg, const GraphletRecord& rec) {
  const int t = static_cast<int>(rec.vertices.size());
  MatXd color(t, 9);
  MatXd texture(t, kHogDim);
  Eigen::MatrixXi topo = Eigen::MatrixXi::Zero(t, t);
  const auto& level = seg.pyramid.levels[rec.level];
  for (int i = 0; i < t; ++i) {
    color.row(i) = seg.features[rec.level][rec.vertices[i]].color.transpose();
    texture.row(i) = seg.features[rec.level][rec.vertices[i]].hog.transpose();
  }
  for (int i = 0; i < t; ++i)
    for (int j = i + 1; j < t; ++j) {
      const auto& adj = level.adjacency[rec.vertices[i]];
      if (std::binary_search(adj.begin(), adj.end(), rec.vertices[j])) {
        topo(i, j) = 1;
        topo(j, i) = 1;
      }
    }
  return pack_graphlet(color, texture, topo);
}

void stage_embed(const PipelineConfig& config, const fs::path& workspace) {
  const auto seg = read_segment(workspace / "segment.bin");
  const auto gra = read_graphlets(workspace / "graphlets.bin");
  const auto lsa = load_lsa_artifact(workspace / "lsa.json");

  std::map<std::string, const SegImage*> seg_by_id;
  for (const auto& s : seg) seg_by_id[s.id] = &s;

  EmbedArtifact art;
  art.attribute_count = static_cast<int>(lsa.n_counts.size());
  art.n_counts = lsa.n_counts;
  if (art.n_counts.sum() <= 0)
    throw std::runtime_error(
        "no image received any textual attribute; lower "
        "textattr.activation_threshold");

  std::vector<VecXd> raw;
  std::vector<std::vector<int>> labels;
  for (const auto& gi : gra) {
    const auto* s = seg_by_id.at(gi.id);
    const auto ait = lsa.assignments.find(gi.id);
    const std::vector<int> img_attrs =
        ait == lsa.assignments.end() ? std::vector<int>{} : ait->second;
    for (const auto& rec : gi.graphlets) {
      raw.push_back(materialize_vector(*s, rec));
      labels.push_back(img_attrs);
    }
  }

  EmbeddingOptions opts;
  opts.max_graphlets = config.embed_max_graphlets;
  opts.ridge = config.embed_ridge;
  opts.seed = config.embed_seed;
  art.model = fit_embedding(raw, labels, art.n_counts, config.embed_dim, opts);
  art.labels = std::move(labels);
  art.embedded.reserve(raw.size());
  for (const auto& v : raw) art.embedded.push_back(embed(art.model, v));
  write_embed(workspace / "embed.bin", art);
}

void stage_train_svm(const PipelineConfig& config, const fs::path& workspace) {
  const auto art = read_embed(workspace / "embed.bin");
  const auto clf =
      train_classifiers(art.embedded, art.labels, art.attribute_count, config.svm_c);
  json j;
  j["format"] = "aesth.svm";
  std::vector<std::vector<double>> w(clf.weights.rows());
  for (Eigen::Index i = 0; i < clf.weights.rows(); ++i) {
    w[i].resize(clf.weights.cols());
    for (Eigen::Index c = 0; c < clf.weights.cols(); ++c) w[i][c] = clf.weights(i, c);
  }
  j["weights"] = w;
  j["bias"] = std::vector<double>(clf.bias.data(), clf.bias.data() + clf.bias.size());
  std::ofstream out(workspace / "svm.json");
  out << j.dump(1) << "\n";
}

AttributeClassifier load_svm(const fs::path& workspace) {
  std::ifstream in(workspace / "svm.json");
  if (!in) throw std::runtime_error("missing svm.json");
  json j;
  in >> j;
  AttributeClassifier clf;
  const auto& w = j.at("weights");
  clf.weights.resize(static_cast<Eigen::Index>(w.size()),
                     w.empty() ? 0 : static_cast<Eigen::Index>(w[0].size()));
  for (Eigen::Index i = 0; i < clf.weights.rows(); ++i)
    for (Eigen::Index c = 0; c < clf.weights.cols(); ++c)
      clf.weights(i, c) = w[i][c].get<double>();
  const auto b = j.at("bias").get<std::vector<double>>();
  clf.bias = Eigen::Map<const VecXd>(b.data(), static_cast<Eigen::Index>(b.size()));
  return clf;
}

PatchScore parse_score(const std::string& s) {
  if (s == "evidence") return PatchScore::kEvidence;
  if (s == "mean") return PatchScore::kMean;
  return PatchScore::kProduct;
}

void stage_detect(const PipelineConfig& config, const fs::path& workspace) {
  const auto corpus = load_stage_corpus(workspace, config);
  const auto seg = read_segment(workspace / "segment.bin");
  const auto gra = read_graphlets(workspace / "graphlets.bin");
  const auto art = read_embed(workspace / "embed.bin");
  const auto clf = load_svm(workspace);
  const PatchScore score_mode = parse_score(config.patch_score);

  std::map<std::string, const TaggedImage*> img_by_id;
  for (const auto& im : corpus) img_by_id[im.id] = &im;
  std::map<std::string, const SegImage*> seg_by_id;
  for (const auto& s : seg) seg_by_id[s.id] = &s;

  const fs::path crops = workspace / "aesthlet_crops";
  fs::remove_all(crops);
  fs::create_directories(crops);
  std::ofstream out(workspace / "aesthlets.jsonl");

  std::size_t offset = 0;  // cursor into the embed artifact
  for (const auto& gi : gra) {
    const auto& image = img_by_id.at(gi.id)->pixels;
    const auto* s = seg_by_id.at(gi.id);
    const std::size_t count = gi.graphlets.size();

    std::vector<Graphlet> gs(count);  // footprints need only level + vertices
    for (std::size_t k = 0; k < count; ++k) {
      gs[k].image_id = gi.id;
      gs[k].level = gi.graphlets[k].level;
      gs[k].vertices = gi.graphlets[k].vertices;
    }
    const PatchSet patches = sample_patches(image, s->pyramid, gs,
                                            config.num_patches,
                                            fnv1a(gi.id, config.patch_seed));

    for (int a = 0; a < art.attribute_count; ++a) {
      std::vector<double> probs(count);
      for (std::size_t k = 0; k < count; ++k)
        probs[k] = graphlet_response(clf, art.embedded[offset + k], a);
      const auto det = detect_aesthlet(image, patches, probs, gi.id, a, score_mode);
      if (!det) continue;
      json j;
      j["image_id"] = det->image_id;
      j["attribute_id"] = det->attribute_id;
      j["x"] = det->rect.x;
      j["y"] = det->rect.y;
      j["w"] = det->rect.w;
      j["h"] = det->rect.h;
      j["score"] = det->score;
      j["mean_prob"] = det->mean_prob;
      out << j.dump() << "\n";
      save_png(crops / (gi.id + "_attr" + std::to_string(a) + ".png"), det->patch);
    }
    offset += count;
  }
}

Image aesthlet_patch(const Image& image, const Rect& rect) {
  return resize_bilinear(crop(image, rect), kPatchSide, kPatchSide);
}

void stage_train_cnn(const PipelineConfig& config, const fs::path& workspace) {
  const auto corpus = load_stage_corpus(workspace, config);
  const auto recs = load_aesthlets_artifact(workspace / "aesthlets.jsonl");
  std::map<std::string, const TaggedImage*> img_by_id;
  for (const auto& im : corpus) img_by_id[im.id] = &im;

  const int D = config.lsa_dim;
  std::vector<TrainSample> samples;
  if (!config.only_global) {
    for (const auto& rec : recs) {
      if (rec.mean_prob < config.min_quality) continue;
      const auto it = img_by_id.find(rec.image_id);
      if (it == img_by_id.end()) continue;
      samples.push_back(
          {aesthlet_patch(it->second->pixels, rec.rect), rec.attribute_id});
    }
  }
  if (config.use_global || config.only_global) {
    for (const auto& im : corpus)
      samples.push_back({resize_bilinear(im.pixels, kPatchSide, kPatchSide), D});
  }
  if (samples.empty())
    throw std::runtime_error("no training patches survived the quality filter");

  CnnModel<float>::Config mc;
  mc.branches = D + 1;
  mc.branch_fc = config.cnn_branch_fc;
  mc.init_seed = config.cnn_seed;
  CnnModel<float> model(mc);

  TrainOptions opts;
  opts.epochs = config.cnn_epochs;
  opts.batch = config.cnn_batch;
  opts.lr = config.cnn_lr;
  opts.momentum = config.cnn_momentum;
  opts.seed = config.cnn_seed;
  opts.augment = config.cnn_augment;
  const auto history = train_cnn(model, samples, opts);

  save_cnn(workspace / "cnn.bin", model);
  std::ofstream loss(workspace / "cnn_loss.csv");
  loss << "epoch,mean_loss\n";
  for (std::size_t e = 0; e < history.size(); ++e)
    loss << e << "," << fmt_double(history[e]) << "\n";
}

void stage_extract_features(const PipelineConfig& config, const fs::path& workspace) {
  const auto corpus = load_stage_corpus(workspace, config);
  const auto recs = load_aesthlets_artifact(workspace / "aesthlets.jsonl");
  const auto model = load_cnn<float>(workspace / "cnn.bin");
  const int D = config.lsa_dim;

  std::map<std::string, std::map<int, Rect>> rects;
  for (const auto& rec : recs) rects[rec.image_id][rec.attribute_id] = rec.rect;

  std::vector<ImageFeature> feats;
  feats.reserve(corpus.size());
  for (const auto& im : corpus) {
    std::vector<std::optional<Image>> patches(D + 1);
    if (!config.only_global) {
      const auto it = rects.find(im.id);
      if (it != rects.end())
        for (const auto& [attr, rect] : it->second)
          patches[attr] = aesthlet_patch(im.pixels, rect);
    }
    if (config.use_global || config.only_global)
      patches[D] = resize_bilinear(im.pixels, kPatchSide, kPatchSide);
    const AestheticFeature f = extract_feature(model, patches);
    feats.push_back({im.id, f.vec, f.active});
  }
  write_features(workspace / "features.bin", feats);
}

void stage_fit_gmm(const PipelineConfig& config, const fs::path& workspace) {
  const auto feats = load_features_artifact(workspace / "features.bin");
  const auto truth = load_ground_truth(corpus_root(workspace, config));
  const auto split = make_split(truth, config.queries_per_group);
  const auto by_id = feature_index(feats);
  const auto train = pleasing_train_features(config, split, by_id);
  const GmmModel model = fit_gmm(train, config.gmm_components, config.gmm_max_iter,
                                 config.gmm_seed, config.pca_dim);
  save_gmm(workspace / "gmm.json", model);
}

void stage_classify(const PipelineConfig& config, const fs::path& workspace) {
  const auto feats = load_features_artifact(workspace / "features.bin");
  const auto truth = load_ground_truth(corpus_root(workspace, config));
  const auto split = make_split(truth, config.queries_per_group);
  const auto by_id = feature_index(feats);
  const auto train = pleasing_train_features(config, split, by_id);
  const double sigma = resolve_sigma(config, train);
  const auto pleasing = config.pleasing_group_list();
  const std::set<int> pset(pleasing.begin(), pleasing.end());

  json per_image = json::array();
  int correct = 0, total = 0;
  for (const auto& id : split.query_ids) {
    const auto fit = by_id.find(id);
    if (fit == by_id.end()) continue;
    const auto score =
        aesthetic_score(fit->second->vec, train, sigma, config.product_gamma);
    const bool truth_pleasing = pset.count(split.group.at(id)) > 0;
    const bool predicted = score.gamma > 0.5;
    correct += predicted == truth_pleasing;
    ++total;
    per_image.push_back({{"id", id},
                         {"gamma", score.gamma},
                         {"pleasing", truth_pleasing},
                         {"predicted", predicted}});
  }
  json j;
  j["accuracy"] = total ? static_cast<double>(correct) / total : 0.0;
  j["num_test"] = total;
  j["sigma"] = sigma;
  j["per_image"] = per_image;
  std::ofstream out(workspace / "classify_metrics.json");
  out << j.dump(1) << "\n";
  std::ofstream csv(workspace / "classify_metrics.csv");
  csv << "id,gamma,pleasing,predicted\n";
  for (const auto& row : per_image)
    csv << row["id"].get<std::string>() << ","
        << fmt_double(row["gamma"].get<double>()) << "," << row["pleasing"].get<bool>()
        << "," << row["predicted"].get<bool>() << "\n";
}

void stage_retrieve(const PipelineConfig& config, const fs::path& workspace) {
  const auto feats = load_features_artifact(workspace / "features.bin");
  const auto truth = load_ground_truth(corpus_root(workspace, config));
  const auto split = make_split(truth, config.queries_per_group);
  const auto by_id = feature_index(feats);
  const auto train = pleasing_train_features(config, split, by_id);
  const double sigma = resolve_sigma(config, train);

  std::vector<DbEntry> db;
  for (const auto& id : split.train_ids) {
    const auto fit = by_id.find(id);
    if (fit == by_id.end()) continue;
    db.push_back(
        {id, fit->second->vec,
         aesthetic_score(fit->second->vec, train, sigma, config.product_gamma).gamma});
  }

  std::map<int, std::pair<double, int>> per_group;
  double sum_precision = 0.0;
  int num_queries = 0;
  for (const auto& id : split.query_ids) {
    const auto fit = by_id.find(id);
    if (fit == by_id.end()) continue;
    const double gamma =
        aesthetic_score(fit->second->vec, train, sigma, config.product_gamma).gamma;
    const auto result = retrieve(fit->second->vec, gamma, db, config.retrieval_scope);
    const int qg = split.group.at(id);
    int relevant = 0;
    for (const auto& rid : result.ids) relevant += split.group.at(rid) == qg;
    const double prec =
        result.ids.empty() ? 0.0 : static_cast<double>(relevant) / result.ids.size();
    sum_precision += prec;
    per_group[qg].first += prec;
    per_group[qg].second += 1;
    ++num_queries;
  }
  json j;
  j["scope"] = config.retrieval_scope;
  j["num_queries"] = num_queries;
  j["precision"] = num_queries ? sum_precision / num_queries : 0.0;
  json groups = json::object();
  for (const auto& [g, acc] : per_group)
    groups[std::to_string(g)] = acc.second ? acc.first / acc.second : 0.0;
  j["per_group"] = groups;
  std::ofstream out(workspace / "retrieve_metrics.json");
  out << j.dump(1) << "\n";
  std::ofstream csv(workspace / "retrieve_metrics.csv");
  csv << "group,precision\n";
  for (const auto& [g, acc] : per_group)
    csv << g << "," << fmt_double(acc.second ? acc.first / acc.second : 0.0) << "\n";
}

void execute_stage(const std::string& name, const PipelineConfig& config,
                   const fs::path& workspace) {
  if (name == "corpus") stage_corpus(config, workspace);
  else if (name == "build-vocab") stage_build_vocab(config, workspace);
  else if (name == "fit-lsa") stage_fit_lsa(config, workspace);
  else if (name == "segment") stage_segment(config, workspace);
  else if (name == "graphlets") stage_graphlets(config, workspace);
  else if (name == "embed") stage_embed(config, workspace);
  else if (name == "train-svm") stage_train_svm(config, workspace);
  else if (name == "detect-aesthlets") stage_detect(config, workspace);
  else if (name == "train-cnn") stage_train_cnn(config, workspace);
  else if (name == "extract-features") stage_extract_features(config, workspace);
  else if (name == "fit-gmm") stage_fit_gmm(config, workspace);
  else if (name == "classify") stage_classify(config, workspace);
  else if (name == "retrieve") stage_retrieve(config, workspace);
  else throw std::invalid_argument("unknown stage: " + name);
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& s : stage_defs()) n.push_back(s.name);
    return n;
  }();
  return names;
}

StageArtifact run_stage(const std::string& name, const PipelineConfig& config,
                        const fs::path& workspace) {
  config.validate();
  const StageDef& stage = find_stage(name);
  fs::create_directories(workspace);
  config.save(workspace / "config_used.ini");

  json manifest = load_manifest(workspace);
  std::map<std::string, std::string> input_hashes;
  for (const auto& dep : stage.deps) {
    if (!manifest.contains(dep))
      throw std::runtime_error("stage '" + name +
                               "' is missing its upstream artifact from stage '" +
                               dep + "'");
    input_hashes[dep] = manifest[dep].at("content_hash").get<std::string>();
  }

  StageArtifact artifact;
  artifact.stage = name;
  artifact.config_hash = stage_config_hash(stage, config);
  artifact.path = artifact_path(workspace, stage, config);

  if (manifest.contains(name)) {
    const auto& entry = manifest[name];
    bool fresh = entry.value("config_hash", "") == artifact.config_hash;
    if (fresh)
      for (const auto& [dep, h] : input_hashes)
        if (entry.at("inputs").value(dep, "") != h) fresh = false;
    if (fresh && fs::exists(artifact.path) &&
        hash_path(artifact.path) == entry.value("content_hash", "")) {
      artifact.content_hash = entry.at("content_hash").get<std::string>();
      artifact.reused = true;
      return artifact;
    }
  }

  execute_stage(name, config, workspace);
  artifact.content_hash = hash_path(artifact.path);
  json entry;
  entry["config_hash"] = artifact.config_hash;
  entry["content_hash"] = artifact.content_hash;
  entry["path"] = artifact.path.generic_string();
  entry["inputs"] = input_hashes;
  manifest[name] = entry;
  save_manifest(workspace, manifest);
  return artifact;
}

std::map<std::string, StageArtifact> run_all(const PipelineConfig& config,
                                             const fs::path& workspace) {
  std::map<std::string, StageArtifact> artifacts;
  for (const auto& name : stage_names())
    artifacts[name] = run_stage(name, config, workspace);

  json metrics;
  {
    std::ifstream in(workspace / "classify_metrics.json");
    json c;
    in >> c;
    metrics["classification_accuracy"] = c.at("accuracy");
    metrics["num_test"] = c.at("num_test");
  }
  {
    std::ifstream in(workspace / "retrieve_metrics.json");
    json r;
    in >> r;
    metrics["retrieval_precision"] = r.at("precision");
    metrics["retrieval_scope"] = r.at("scope");
  }
  metrics["nnz_A"] = load_lsa_artifact(workspace / "lsa.json").nnz_a;
  std::ofstream out(workspace / "metrics.json");
  out << metrics.dump(1) << "\n";
  return artifacts;
}

namespace {

std::vector<std::string> stages_for_metric(const std::string& metric) {
  if (metric == "nnz_A" || metric == "attribute_recovery")
    return {"corpus", "build-vocab", "fit-lsa"};
  if (metric == "accuracy")
    return {"corpus", "build-vocab", "fit-lsa", "segment", "graphlets", "embed",
            "train-svm", "detect-aesthlets", "train-cnn", "extract-features",
            "classify"};
  if (metric == "precision_at_30" || metric == "precision_at_S" ||
      metric == "precision")
    return {"corpus", "build-vocab", "fit-lsa", "segment", "graphlets", "embed",
            "train-svm", "detect-aesthlets", "train-cnn", "extract-features",
            "retrieve"};
  throw std::invalid_argument("unknown metric: " + metric);
}

}  // namespace

double compute_metric(const std::string& metric, const PipelineConfig& config,
                      const fs::path& workspace) {
  for (const auto& s : stages_for_metric(metric)) run_stage(s, config, workspace);
  if (metric == "nnz_A")
    return static_cast<double>(load_lsa_artifact(workspace / "lsa.json").nnz_a);
  if (metric == "attribute_recovery") {
    const auto lsa = load_lsa_artifact(workspace / "lsa.json");
    const auto truth = load_ground_truth(corpus_root(workspace, config));
    return attribute_recovery_score(lsa.assignments, truth.regions,
                                    config.corpus_attributes, config.lsa_dim);
  }
  if (metric == "accuracy") {
    std::ifstream in(workspace / "classify_metrics.json");
    json j;
    in >> j;
    return j.at("accuracy").get<double>();
  }
  std::ifstream in(workspace / "retrieve_metrics.json");
  json j;
  in >> j;
  return j.at("precision").get<double>();
}

std::vector<SweepRow> sweep(const std::string& parameter,
                            const std::vector<std::string>& values,
                            const std::string& metric, PipelineConfig config,
                            const fs::path& workspace) {
  if (values.empty())
    throw std::invalid_argument("sweep needs a non-empty value list");
  stages_for_metric(metric);  // validates the metric name up front
  {
    PipelineConfig probe = config;
    probe.set(parameter, values.front());  // validates the parameter name
  }
  fs::create_directories(workspace);
  std::vector<SweepRow> rows;
  for (const auto& value : values) {
    PipelineConfig c = config;
    c.set(parameter, value);
    c.validate();
    const fs::path sub = workspace / ("sweep_" + parameter + "_" + value);
    SweepRow row;
    row.value = value;
    row.metric = compute_metric(metric, c, sub);
    row.nnz_a = load_lsa_artifact(sub / "lsa.json").nnz_a;
    rows.push_back(row);
  }
  std::ofstream csv(workspace / (parameter + "_sweep.csv"));
  csv << "value," << metric << ",nnz_A\n";
  for (const auto& row : rows)
    csv << row.value << "," << fmt_double(row.metric) << "," << row.nnz_a << "\n";
  return rows;
}

const std::vector<std::string>& ablation_components() {
  static const std::vector<std::string> components = {
      "no-sparsity", "grid-pyramid", "no-global-descriptor",
      "only-global-descriptor", "no-branch-fc"};
  return components;
}

PipelineConfig ablation_config(const PipelineConfig& base,
                               const std::string& component) {
  PipelineConfig c = base;
  if (component == "no-sparsity") c.lsa_lambda = 0.0;
  else if (component == "grid-pyramid") c.grid_pyramid = true;
  else if (component == "no-global-descriptor") c.use_global = false;
  else if (component == "only-global-descriptor") c.only_global = true;
  else if (component == "no-branch-fc") c.cnn_branch_fc = false;
  else throw std::invalid_argument("unknown ablation component: " + component);
  return c;
}

AblationResult ablate(const std::string& component, const PipelineConfig& config,
                      const fs::path& workspace) {
  const PipelineConfig variant = ablation_config(config, component);
  AblationResult res;
  res.component = component;
  res.full_accuracy = compute_metric("accuracy", config, workspace / "full");
  res.full_precision = compute_metric("precision", config, workspace / "full");
  res.variant_accuracy = compute_metric("accuracy", variant, workspace / component);
  res.variant_precision = compute_metric("precision", variant, workspace / component);

  json j;
  j["component"] = component;
  j["full"] = {{"accuracy", res.full_accuracy}, {"precision", res.full_precision}};
  j["variant"] = {{"accuracy", res.variant_accuracy},
                  {"precision", res.variant_precision}};
  j["delta"] = {{"accuracy", res.full_accuracy - res.variant_accuracy},
                {"precision", res.full_precision - res.variant_precision}};
  std::ofstream out(workspace / ("ablate_" + component + ".json"));
  out << j.dump(1) << "\n";
  std::ofstream csv(workspace / ("ablate_" + component + ".csv"));
  csv << "metric,full,variant,delta\n";
  csv << "accuracy," << fmt_double(res.full_accuracy) << ","
      << fmt_double(res.variant_accuracy) << ","
      << fmt_double(res.full_accuracy - res.variant_accuracy) << "\n";
  csv << "precision," << fmt_double(res.full_precision) << ","
      << fmt_double(res.variant_precision) << ","
      << fmt_double(res.full_precision - res.variant_precision) << "\n";
  return res;
}

void retarget_cli(const PipelineConfig& config, const fs::path& workspace,
                  const std::string& image, int out_w, int out_h,
                  const fs::path& out_file) {
  Image img;
  if (fs::exists(image)) {
    img = load_image(image);
  } else {
    const fs::path root = corpus_root(workspace, config);
    fs::path f = root / "images" / (image + ".png");
    if (!fs::exists(f)) f = root / "images" / (image + ".ppm");
    if (!fs::exists(f))
      throw std::runtime_error("image '" + image + "' not found on disk or in corpus");
    img = load_image(f);
  }
  const auto model = load_cnn<float>(workspace / "cnn.bin");
  const auto gmm = load_gmm(workspace / "gmm.json");
  const RetargetModels models{&model, &gmm, config.full_mixture};
  const Image out =
      retarget(img, models, out_w, out_h, config.grid_rows, config.grid_cols);
  save_image(out_file, out);
}

void retrieve_cli(const PipelineConfig& config, const fs::path& workspace,
                  const std::string& query_id, const fs::path& out_file) {
  const auto feats = load_features_artifact(workspace / "features.bin");
  const auto truth = load_ground_truth(corpus_root(workspace, config));
  const auto split = make_split(truth, config.queries_per_group);
  const auto by_id = feature_index(feats);
  const auto qit = by_id.find(query_id);
  if (qit == by_id.end())
    throw std::runtime_error("query id not found in features: " + query_id);
  const auto train = pleasing_train_features(config, split, by_id);
  const double sigma = resolve_sigma(config, train);

  std::vector<DbEntry> db;
  for (const auto& f : feats) {
    if (f.id == query_id) continue;
    db.push_back(
        {f.id, f.vec,
         aesthetic_score(f.vec, train, sigma, config.product_gamma).gamma});
  }
  const double qgamma =
      aesthetic_score(qit->second->vec, train, sigma, config.product_gamma).gamma;
  const auto result = retrieve(qit->second->vec, qgamma, db, config.retrieval_scope);

  json j;
  j["query"] = query_id;
  j["gamma"] = qgamma;
  j["truncated"] = result.truncated;
  json ranked = json::array();
  for (std::size_t i = 0; i < result.ids.size(); ++i) {
    const auto it = std::find_if(db.begin(), db.end(), [&](const DbEntry& d) {
      return d.id == result.ids[i];
    });
    ranked.push_back({{"rank", i + 1}, {"id", it->id}, {"gamma", it->gamma}});
  }
  j["results"] = ranked;
  std::ofstream out(out_file);
  out << j.dump(1) << "\n";
}

}  // namespace aesth
