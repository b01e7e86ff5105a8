#include "aesth/cnn.hpp"

#include <cstring>
#include <fstream>
#include <numeric>

namespace aesth {

Image jitter_flip(const Image& img, int dx, int dy, bool flip_h, bool flip_v) {
  const int h = img.height(), w = img.width();
  Image out(h, w, 0.f);
  for (int y = 0; y < h; ++y) {
    const int sy = y - dy;
    if (sy < 0 || sy >= h) continue;
    for (int x = 0; x < w; ++x) {
      const int sx = x - dx;
      if (sx < 0 || sx >= w) continue;
      for (int c = 0; c < 3; ++c) out.ch[c](y, x) = img.ch[c](sy, sx);
    }
  }
  if (flip_h)
    for (int c = 0; c < 3; ++c) out.ch[c] = out.ch[c].rowwise().reverse().eval();
  if (flip_v)
    for (int c = 0; c < 3; ++c) out.ch[c] = out.ch[c].colwise().reverse().eval();
  return out;
}

void channel_stats(const std::vector<TrainSample>& samples, VecXd& mean,
                   VecXd& std) {
  mean = VecXd::Zero(3);
  std = VecXd::Ones(3);
  if (samples.empty()) return;
  double count = 0;
  VecXd sum = VecXd::Zero(3), sum2 = VecXd::Zero(3);
  for (const auto& s : samples) {
    for (int c = 0; c < 3; ++c) {
      sum(c) += s.patch.ch[c].cast<double>().sum();
      sum2(c) += s.patch.ch[c].cast<double>().square().sum();
    }
    count += s.patch.ch[0].size();
  }
  mean = sum / count;
  for (int c = 0; c < 3; ++c) {
    const double var = sum2(c) / count - mean(c) * mean(c);
    std(c) = std::sqrt(std::max(var, 0.0));
    if (std(c) < 1e-6) std(c) = 1.0;
  }
}

namespace {

void write_i32(std::ostream& out, std::int32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::int32_t read_i32(std::istream& in) {
  std::int32_t v;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
double read_f64(std::istream& in) {
  double v;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

constexpr char kMagic[8] = {'A', 'E', 'S', 'H', 'C', 'N', 'N', '1'};

}  // namespace

template <class T>
void save_cnn(const std::filesystem::path& file, const CnnModel<T>& model) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out.write(kMagic, sizeof(kMagic));
  const auto& cfg = model.config();
  write_i32(out, cfg.branches);
  write_i32(out, cfg.input_side);
  write_i32(out, cfg.conv_filters);
  write_i32(out, cfg.fc1_units);
  write_i32(out, cfg.branch_units);
  write_i32(out, cfg.branch_fc ? 1 : 0);
  for (int c = 0; c < 3; ++c) write_f64(out, model.input_mean()(c));
  for (int c = 0; c < 3; ++c) write_f64(out, model.input_std()(c));
  const VecXd params = model.parameters();
  write_i32(out, static_cast<std::int32_t>(params.size()));
  out.write(reinterpret_cast<const char*>(params.data()),
            static_cast<std::streamsize>(sizeof(double) * params.size()));
}

template <class T>
CnnModel<T> load_cnn(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a network checkpoint: " + file.string());
  typename CnnModel<T>::Config cfg;
  cfg.branches = read_i32(in);
  cfg.input_side = read_i32(in);
  cfg.conv_filters = read_i32(in);
  cfg.fc1_units = read_i32(in);
  cfg.branch_units = read_i32(in);
  cfg.branch_fc = read_i32(in) != 0;
  CnnModel<T> model(cfg);
  for (int c = 0; c < 3; ++c) model.input_mean()(c) = static_cast<T>(read_f64(in));
  for (int c = 0; c < 3; ++c) model.input_std()(c) = static_cast<T>(read_f64(in));
  const std::int32_t n = read_i32(in);
  VecXd params(n);
  in.read(reinterpret_cast<char*>(params.data()),
          static_cast<std::streamsize>(sizeof(double) * params.size()));
  if (!in) throw std::runtime_error("truncated checkpoint: " + file.string());
  model.set_parameters(params);
  return model;
}

template void save_cnn<float>(const std::filesystem::path&, const CnnModel<float>&);
template void save_cnn<double>(const std::filesystem::path&, const CnnModel<double>&);
template CnnModel<float> load_cnn<float>(const std::filesystem::path&);
template CnnModel<double> load_cnn<double>(const std::filesystem::path&);

}  // namespace aesth
