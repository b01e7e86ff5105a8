#pragma once

#include "aesth/image.hpp"
#include "aesth/types.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace aesth {

// Minimal NCHW tensor.
template <class T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {}

  T& at(int in, int ic, int iy, int ix) {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  T at(int in, int ic, int iy, int ix) const {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
};

template <class T>
struct ConvSpec {
  int in_c = 3, out_c = 64, k = 5, stride = 1, pad = 2;
};

struct LrnSpec {
  int n = 5;
  double k = 2.0, alpha = 1e-4, beta = 0.75;
};

// Shared-trunk, branched network:
//   conv(5x5) -> ReLU -> maxpool(3,2) -> LRN -> FC -> ReLU
//   then per branch: FC(branch_units) -> ReLU -> logistic unit.
// With branch_fc=false every branch is a logistic unit straight on the trunk
// and the 128-dim slot activation is read from the trunk instead.
template <class T>
class CnnModel {
 public:
  struct Config {
    int branches = 11;
    int input_side = 64;
    int conv_filters = 64;
    int fc1_units = 1024;
    int branch_units = 128;
    bool branch_fc = true;
    std::uint64_t init_seed = 0;
  };

  struct Cache {
    int batch = 0;
    std::vector<MatX<T>> cols;       // im2col per sample
    std::vector<MatX<T>> conv_out;   // post-ReLU, out_c x (side^2)
    std::vector<Eigen::MatrixXi> pool_arg;
    std::vector<MatX<T>> pool_out;   // out_c x (pside^2)
    std::vector<MatX<T>> lrn_denom;  // k + alpha * window sum of squares
    std::vector<MatX<T>> lrn_out;
    MatX<T> flat;                    // B x trunk_in
    MatX<T> fc1_out;                 // post-ReLU, B x fc1_units
    std::vector<MatX<T>> branch_hidden;  // per branch, post-ReLU B x units
    MatX<T> logits;                  // B x branches
  };

  struct Forward {
    MatX<T> probs;                    // B x branches
    std::vector<MatX<T>> branch_acts; // per branch, B x branch_units
    Cache cache;
  };

  explicit CnnModel(const Config& cfg = {}) : cfg_(cfg) {
    if (cfg.branches < 1) throw std::invalid_argument("need at least one branch");
    conv_.in_c = 3;
    conv_.out_c = cfg.conv_filters;
    side_ = (cfg.input_side + 2 * conv_.pad - conv_.k) / conv_.stride + 1;
    if (side_ != cfg.input_side)
      throw std::logic_error("conv padding must preserve the spatial size");
    pside_ = (side_ - 3) / 2 + 1;
    if (cfg.input_side == 64 && pside_ != 31)
      throw std::logic_error("pool output for 64 px input must be 31");
    trunk_in_ = conv_.out_c * pside_ * pside_;

    std::mt19937_64 rng(cfg.init_seed);
    auto he = [&rng](MatX<T>& m, int fan_in) {
      std::normal_distribution<double> g(0.0, std::sqrt(2.0 / fan_in));
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<T>(g(rng));
    };
    conv_w_.resize(conv_.out_c, conv_.in_c * conv_.k * conv_.k);
    he(conv_w_, conv_.in_c * conv_.k * conv_.k);
    conv_b_ = VecX<T>::Zero(conv_.out_c);
    fc1_w_.resize(trunk_in_, cfg.fc1_units);
    he(fc1_w_, trunk_in_);
    fc1_b_ = VecX<T>::Zero(cfg.fc1_units);
    branch_w1_.resize(cfg.branches);
    branch_b1_.resize(cfg.branches);
    branch_w2_.resize(cfg.branches);
    branch_b2_.assign(cfg.branches, T(0));
    for (int b = 0; b < cfg.branches; ++b) {
      if (cfg.branch_fc) {
        branch_w1_[b].resize(cfg.fc1_units, cfg.branch_units);
        he(branch_w1_[b], cfg.fc1_units);
        branch_b1_[b] = VecX<T>::Zero(cfg.branch_units);
        branch_w2_[b].resize(cfg.branch_units, 1);
        he(branch_w2_[b], cfg.branch_units);
      } else {
        branch_w2_[b].resize(cfg.fc1_units, 1);
        he(branch_w2_[b], cfg.fc1_units);
      }
    }
    zero_grad();
    zero_velocity();
    input_mean_ = VecX<T>::Zero(3);
    input_std_ = VecX<T>::Ones(3);
  }

  const Config& config() const { return cfg_; }
  int branches() const { return cfg_.branches; }
  int branch_units() const { return cfg_.branch_units; }
  int pooled_side() const { return pside_; }

  VecX<T>& input_mean() { return input_mean_; }
  VecX<T>& input_std() { return input_std_; }
  const VecX<T>& input_mean() const { return input_mean_; }
  const VecX<T>& input_std() const { return input_std_; }

  // Channel-standardized NCHW tensor from 64x64 patches.
  Tensor<T> to_input(const std::vector<Image>& patches) const {
    const int s = cfg_.input_side;
    Tensor<T> t(static_cast<int>(patches.size()), 3, s, s);
    for (std::size_t i = 0; i < patches.size(); ++i) {
      if (patches[i].height() != s || patches[i].width() != s)
        throw std::invalid_argument("patch size does not match network input");
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < s; ++y)
          for (int x = 0; x < s; ++x)
            t.at(static_cast<int>(i), c, y, x) =
                (static_cast<T>(patches[i].ch[c](y, x)) - input_mean_(c)) /
                input_std_(c);
    }
    return t;
  }

  Forward forward(const Tensor<T>& x) const {
    if (x.c != 3 || x.h != cfg_.input_side || x.w != cfg_.input_side)
      throw std::invalid_argument("input tensor shape mismatch");
    const int B = x.n;
    Forward f;
    Cache& cc = f.cache;
    cc.batch = B;
    cc.cols.resize(B);
    cc.conv_out.resize(B);
    cc.pool_arg.resize(B);
    cc.pool_out.resize(B);
    cc.lrn_denom.resize(B);
    cc.lrn_out.resize(B);
    cc.flat.resize(B, trunk_in_);

    for (int i = 0; i < B; ++i) {
      cc.cols[i] = im2col(x, i);
      MatX<T> out = conv_w_ * cc.cols[i];
      out.colwise() += conv_b_;
      cc.conv_out[i] = out.cwiseMax(T(0));
      pool_forward(cc.conv_out[i], cc.pool_out[i], cc.pool_arg[i]);
      lrn_forward(cc.pool_out[i], cc.lrn_out[i], cc.lrn_denom[i]);
      // flatten channel-major
      for (int c = 0; c < conv_.out_c; ++c)
        for (int p = 0; p < pside_ * pside_; ++p)
          cc.flat(i, c * pside_ * pside_ + p) = cc.lrn_out[i](c, p);
    }

    MatX<T> z1 = cc.flat * fc1_w_;
    z1.rowwise() += fc1_b_.transpose();
    cc.fc1_out = z1.cwiseMax(T(0));

    cc.branch_hidden.resize(cfg_.branches);
    cc.logits.resize(B, cfg_.branches);
    f.branch_acts.resize(cfg_.branches);
    for (int b = 0; b < cfg_.branches; ++b) {
      if (cfg_.branch_fc) {
        MatX<T> zb = cc.fc1_out * branch_w1_[b];
        zb.rowwise() += branch_b1_[b].transpose();
        cc.branch_hidden[b] = zb.cwiseMax(T(0));
        cc.logits.col(b) =
            cc.branch_hidden[b] * branch_w2_[b] + MatX<T>::Constant(B, 1, branch_b2_[b]);
        f.branch_acts[b] = cc.branch_hidden[b];
      } else {
        cc.logits.col(b) =
            cc.fc1_out * branch_w2_[b] + MatX<T>::Constant(B, 1, branch_b2_[b]);
        f.branch_acts[b] = cc.fc1_out.leftCols(cfg_.branch_units);
      }
    }
    f.probs = cc.logits.unaryExpr([](T z) {
      return static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(z))));
    });
    return f;
  }

  // Summed binary cross entropy over present targets; gradients accumulate
  // into the layer grad buffers. mask(i,b) != 0 marks a present target.
  double backward(const Tensor<T>& x, const Cache& cc, const MatX<T>& targets,
                  const MatX<T>& mask) {
    const int B = cc.batch;
    if (targets.rows() != B || targets.cols() != cfg_.branches ||
        mask.rows() != B || mask.cols() != cfg_.branches)
      throw std::invalid_argument("target shape mismatch");

    double loss = 0.0;
    MatX<T> dlogits = MatX<T>::Zero(B, cfg_.branches);
    for (int i = 0; i < B; ++i)
      for (int b = 0; b < cfg_.branches; ++b) {
        if (mask(i, b) == T(0)) continue;
        const double z = cc.logits(i, b), t = targets(i, b);
        loss += std::max(z, 0.0) - t * z + std::log1p(std::exp(-std::abs(z)));
        dlogits(i, b) =
            static_cast<T>(1.0 / (1.0 + std::exp(-z)) - t);
      }

    MatX<T> dfc1 = MatX<T>::Zero(B, cfg_.fc1_units);
    for (int b = 0; b < cfg_.branches; ++b) {
      if (cfg_.branch_fc) {
        MatX<T> dh = dlogits.col(b) * branch_w2_[b].transpose();  // B x units
        g_branch_w2_[b] += cc.branch_hidden[b].transpose() * dlogits.col(b);
        g_branch_b2_[b] += dlogits.col(b).sum();
        dh = ((cc.branch_hidden[b].array() > T(0)).template cast<T>() * dh.array())
                 .matrix();
        g_branch_w1_[b] += cc.fc1_out.transpose() * dh;
        g_branch_b1_[b] += dh.colwise().sum().transpose();
        dfc1 += dh * branch_w1_[b].transpose();
      } else {
        g_branch_w2_[b] += cc.fc1_out.transpose() * dlogits.col(b);
        g_branch_b2_[b] += dlogits.col(b).sum();
        dfc1 += dlogits.col(b) * branch_w2_[b].transpose();
      }
    }

    dfc1 = ((cc.fc1_out.array() > T(0)).template cast<T>() * dfc1.array()).matrix();
    g_fc1_w_ += cc.flat.transpose() * dfc1;
    g_fc1_b_ += dfc1.colwise().sum().transpose();
    MatX<T> dflat = dfc1 * fc1_w_.transpose();  // B x trunk_in

    for (int i = 0; i < B; ++i) {
      MatX<T> dlrn(conv_.out_c, pside_ * pside_);
      for (int c = 0; c < conv_.out_c; ++c)
        for (int p = 0; p < pside_ * pside_; ++p)
          dlrn(c, p) = dflat(i, c * pside_ * pside_ + p);
      MatX<T> dpool;
      lrn_backward(cc.pool_out[i], cc.lrn_denom[i], dlrn, dpool);
      MatX<T> dconv = MatX<T>::Zero(conv_.out_c, side_ * side_);
      for (int c = 0; c < conv_.out_c; ++c)
        for (int p = 0; p < pside_ * pside_; ++p)
          dconv(c, cc.pool_arg[i](c, p)) += dpool(c, p);
      dconv =
          ((cc.conv_out[i].array() > T(0)).template cast<T>() * dconv.array()).matrix();
      g_conv_w_ += dconv * cc.cols[i].transpose();
      g_conv_b_ += dconv.rowwise().sum();
    }
    return loss;
  }

  void zero_grad() {
    g_conv_w_ = MatX<T>::Zero(conv_.out_c, conv_.in_c * conv_.k * conv_.k);
    g_conv_b_ = VecX<T>::Zero(conv_.out_c);
    g_fc1_w_ = MatX<T>::Zero(trunk_in_, cfg_.fc1_units);
    g_fc1_b_ = VecX<T>::Zero(cfg_.fc1_units);
    g_branch_w1_.assign(cfg_.branches, MatX<T>());
    g_branch_b1_.assign(cfg_.branches, VecX<T>());
    g_branch_w2_.assign(cfg_.branches, MatX<T>());
    g_branch_b2_.assign(cfg_.branches, T(0));
    for (int b = 0; b < cfg_.branches; ++b) {
      if (cfg_.branch_fc) {
        g_branch_w1_[b] = MatX<T>::Zero(cfg_.fc1_units, cfg_.branch_units);
        g_branch_b1_[b] = VecX<T>::Zero(cfg_.branch_units);
        g_branch_w2_[b] = MatX<T>::Zero(cfg_.branch_units, 1);
      } else {
        g_branch_w2_[b] = MatX<T>::Zero(cfg_.fc1_units, 1);
      }
    }
  }

  void zero_velocity() {
    v_conv_w_ = MatX<T>::Zero(conv_.out_c, conv_.in_c * conv_.k * conv_.k);
    v_conv_b_ = VecX<T>::Zero(conv_.out_c);
    v_fc1_w_ = MatX<T>::Zero(trunk_in_, cfg_.fc1_units);
    v_fc1_b_ = VecX<T>::Zero(cfg_.fc1_units);
    v_branch_w1_.assign(cfg_.branches, MatX<T>());
    v_branch_b1_.assign(cfg_.branches, VecX<T>());
    v_branch_w2_.assign(cfg_.branches, MatX<T>());
    v_branch_b2_.assign(cfg_.branches, T(0));
    for (int b = 0; b < cfg_.branches; ++b) {
      if (cfg_.branch_fc) {
        v_branch_w1_[b] = MatX<T>::Zero(cfg_.fc1_units, cfg_.branch_units);
        v_branch_b1_[b] = VecX<T>::Zero(cfg_.branch_units);
        v_branch_w2_[b] = MatX<T>::Zero(cfg_.branch_units, 1);
      } else {
        v_branch_w2_[b] = MatX<T>::Zero(cfg_.fc1_units, 1);
      }
    }
  }

  void sgd_step(T lr, T momentum) {
    auto upd = [lr, momentum](auto& w, auto& g, auto& v) {
      v = momentum * v - lr * g;
      w += v;
    };
    upd(conv_w_, g_conv_w_, v_conv_w_);
    upd(conv_b_, g_conv_b_, v_conv_b_);
    upd(fc1_w_, g_fc1_w_, v_fc1_w_);
    upd(fc1_b_, g_fc1_b_, v_fc1_b_);
    for (int b = 0; b < cfg_.branches; ++b) {
      if (cfg_.branch_fc) {
        upd(branch_w1_[b], g_branch_w1_[b], v_branch_w1_[b]);
        upd(branch_b1_[b], g_branch_b1_[b], v_branch_b1_[b]);
      }
      upd(branch_w2_[b], g_branch_w2_[b], v_branch_w2_[b]);
      v_branch_b2_[b] = momentum * v_branch_b2_[b] - lr * g_branch_b2_[b];
      branch_b2_[b] += v_branch_b2_[b];
    }
  }

  // Flat parameter copies, used by gradient checks and checkpoints.
  VecXd parameters() const {
    std::vector<double> p;
    visit_const([&p](const T* v, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) p.push_back(static_cast<double>(v[i]));
    });
    return Eigen::Map<VecXd>(p.data(), static_cast<Eigen::Index>(p.size()));
  }

  void set_parameters(const VecXd& p) {
    std::size_t off = 0;
    visit([&p, &off](T* v, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i)
        v[i] = static_cast<T>(p(static_cast<Eigen::Index>(off + i)));
      off += n;
    });
    if (off != static_cast<std::size_t>(p.size()))
      throw std::invalid_argument("parameter vector length mismatch");
  }

  VecXd gradients() const {
    std::vector<double> p;
    visit_grad_const([&p](const T* v, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) p.push_back(static_cast<double>(v[i]));
    });
    return Eigen::Map<VecXd>(p.data(), static_cast<Eigen::Index>(p.size()));
  }

  const LrnSpec& lrn() const { return lrn_; }

 private:
  template <class F>
  void visit(F&& f) {
    f(conv_w_.data(), conv_w_.size());
    f(conv_b_.data(), conv_b_.size());
    f(fc1_w_.data(), fc1_w_.size());
    f(fc1_b_.data(), fc1_b_.size());
    for (int b = 0; b < cfg_.branches; ++b) {
      if (cfg_.branch_fc) {
        f(branch_w1_[b].data(), branch_w1_[b].size());
        f(branch_b1_[b].data(), branch_b1_[b].size());
      }
      f(branch_w2_[b].data(), branch_w2_[b].size());
      f(&branch_b2_[b], 1);
    }
  }
  template <class F>
  void visit_const(F&& f) const {
    const_cast<CnnModel*>(this)->visit(
        [&f](T* v, std::size_t n) { f(const_cast<const T*>(v), n); });
  }
  template <class F>
  void visit_grad_const(F&& f) const {
    f(g_conv_w_.data(), g_conv_w_.size());
    f(g_conv_b_.data(), g_conv_b_.size());
    f(g_fc1_w_.data(), g_fc1_w_.size());
    f(g_fc1_b_.data(), g_fc1_b_.size());
    for (int b = 0; b < cfg_.branches; ++b) {
      if (cfg_.branch_fc) {
        f(g_branch_w1_[b].data(), g_branch_w1_[b].size());
        f(g_branch_b1_[b].data(), g_branch_b1_[b].size());
      }
      f(g_branch_w2_[b].data(), g_branch_w2_[b].size());
      f(&g_branch_b2_[b], 1);
    }
  }

  MatX<T> im2col(const Tensor<T>& x, int sample) const {
    const int s = cfg_.input_side, k = conv_.k, pad = conv_.pad;
    MatX<T> cols(conv_.in_c * k * k, side_ * side_);
    for (int oy = 0; oy < side_; ++oy)
      for (int ox = 0; ox < side_; ++ox) {
        const int col = oy * side_ + ox;
        int row = 0;
        for (int c = 0; c < conv_.in_c; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx, ++row) {
              const int iy = oy * conv_.stride + ky - pad;
              const int ix = ox * conv_.stride + kx - pad;
              cols(row, col) = (iy < 0 || iy >= s || ix < 0 || ix >= s)
                                   ? T(0)
                                   : x.at(sample, c, iy, ix);
            }
      }
    return cols;
  }

  void pool_forward(const MatX<T>& in, MatX<T>& out, Eigen::MatrixXi& arg) const {
    out.resize(conv_.out_c, pside_ * pside_);
    arg.resize(conv_.out_c, pside_ * pside_);
    for (int c = 0; c < conv_.out_c; ++c)
      for (int oy = 0; oy < pside_; ++oy)
        for (int ox = 0; ox < pside_; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          int besti = -1;
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 + ky, ix = ox * 2 + kx;
              if (iy >= side_ || ix >= side_) continue;
              const int idx = iy * side_ + ix;
              if (in(c, idx) > best) {
                best = in(c, idx);
                besti = idx;
              }
            }
          out(c, oy * pside_ + ox) = best;
          arg(c, oy * pside_ + ox) = besti;
        }
  }

  void lrn_forward(const MatX<T>& in, MatX<T>& out, MatX<T>& denom) const {
    const int C = static_cast<int>(in.rows());
    const int P = static_cast<int>(in.cols());
    out.resize(C, P);
    denom.resize(C, P);
    const int half = lrn_.n / 2;
    for (int p = 0; p < P; ++p)
      for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int j = std::max(0, c - half); j <= std::min(C - 1, c + half); ++j)
          s += static_cast<double>(in(j, p)) * in(j, p);
        const double d = lrn_.k + lrn_.alpha * s;
        denom(c, p) = static_cast<T>(d);
        out(c, p) = static_cast<T>(in(c, p) * std::pow(d, -lrn_.beta));
      }
  }

  void lrn_backward(const MatX<T>& in, const MatX<T>& denom, const MatX<T>& dout,
                    MatX<T>& din) const {
    const int C = static_cast<int>(in.rows());
    const int P = static_cast<int>(in.cols());
    din.resize(C, P);
    const int half = lrn_.n / 2;
    for (int p = 0; p < P; ++p) {
      for (int c = 0; c < C; ++c) {
        // d out_j / d in_c = delta_jc * d_j^-b - 2ab * in_j in_c d_j^-(b+1)
        double g = static_cast<double>(dout(c, p)) *
                   std::pow(static_cast<double>(denom(c, p)), -lrn_.beta);
        double corr = 0.0;
        for (int j = std::max(0, c - half); j <= std::min(C - 1, c + half); ++j)
          corr += static_cast<double>(dout(j, p)) * in(j, p) *
                  std::pow(static_cast<double>(denom(j, p)), -lrn_.beta - 1.0);
        g -= 2.0 * lrn_.alpha * lrn_.beta * static_cast<double>(in(c, p)) * corr;
        din(c, p) = static_cast<T>(g);
      }
    }
  }

  Config cfg_;
  ConvSpec<T> conv_;
  LrnSpec lrn_;
  int side_ = 0, pside_ = 0, trunk_in_ = 0;

  MatX<T> conv_w_;
  VecX<T> conv_b_;
  MatX<T> fc1_w_;
  VecX<T> fc1_b_;
  std::vector<MatX<T>> branch_w1_;
  std::vector<VecX<T>> branch_b1_;
  std::vector<MatX<T>> branch_w2_;
  std::vector<T> branch_b2_;

  MatX<T> g_conv_w_, g_fc1_w_;
  VecX<T> g_conv_b_, g_fc1_b_;
  std::vector<MatX<T>> g_branch_w1_, g_branch_w2_;
  std::vector<VecX<T>> g_branch_b1_;
  std::vector<T> g_branch_b2_;

  MatX<T> v_conv_w_, v_fc1_w_;
  VecX<T> v_conv_b_, v_fc1_b_;
  std::vector<MatX<T>> v_branch_w1_, v_branch_w2_;
  std::vector<VecX<T>> v_branch_b1_;
  std::vector<T> v_branch_b2_;

  VecX<T> input_mean_, input_std_;

  template <class U>
  friend void save_cnn(const std::filesystem::path&, const CnnModel<U>&);
  template <class U>
  friend CnnModel<U> load_cnn(const std::filesystem::path&);
};

struct TrainSample {
  Image patch;  // 64x64
  int attribute_id = 0;
};

struct TrainOptions {
  int epochs = 20;
  int batch = 32;
  double lr = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  bool augment = true;
};

// Shifts by (dx,dy) with zero padding then optional flips; the label is
// untouched by construction.
Image jitter_flip(const Image& img, int dx, int dy, bool flip_h, bool flip_v);

// Per-channel mean/std over all patch pixels.
void channel_stats(const std::vector<TrainSample>& samples, VecXd& mean, VecXd& std);

template <class T>
std::vector<double> train_cnn(CnnModel<T>& model,
                              const std::vector<TrainSample>& samples,
                              const TrainOptions& opts) {
  if (samples.empty()) throw std::invalid_argument("empty training set");
  for (const auto& s : samples)
    if (s.attribute_id < 0 || s.attribute_id >= model.branches())
      throw std::invalid_argument("attribute id exceeds branch count");

  {
    VecXd mean, std;
    channel_stats(samples, mean, std);
    model.input_mean() = mean.template cast<T>();
    model.input_std() = std.template cast<T>();
  }

  std::mt19937_64 rng(opts.seed);
  const int n = static_cast<int>(samples.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> history;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (int start = 0; start < n; start += opts.batch) {
      const int bs = std::min(opts.batch, n - start);
      std::vector<Image> patches(bs);
      std::vector<int> attrs(bs);
      for (int i = 0; i < bs; ++i) {
        const TrainSample& s = samples[order[start + i]];
        attrs[i] = s.attribute_id;
        if (opts.augment) {
          const int dx = static_cast<int>(rng() % 9) - 4;
          const int dy = static_cast<int>(rng() % 9) - 4;
          const bool fh = (rng() & 1) != 0;
          const bool fv = (rng() & 1) != 0;
          patches[i] = jitter_flip(s.patch, dx, dy, fh, fv);
        } else {
          patches[i] = s.patch;
        }
      }
      const Tensor<T> x = model.to_input(patches);
      auto fwd = model.forward(x);
      MatX<T> targets = MatX<T>::Zero(bs, model.branches());
      MatX<T> mask = MatX<T>::Zero(bs, model.branches());
      std::vector<char> in_batch(model.branches(), 0);
      for (int i = 0; i < bs; ++i) in_batch[attrs[i]] = 1;
      for (int i = 0; i < bs; ++i)
        for (int b = 0; b < model.branches(); ++b)
          if (in_batch[b]) {
            mask(i, b) = T(1);
            targets(i, b) = attrs[i] == b ? T(1) : T(0);
          }
      model.zero_grad();
      epoch_loss += model.backward(x, fwd.cache, targets, mask);
      model.sgd_step(static_cast<T>(opts.lr), static_cast<T>(opts.momentum));
    }
    history.push_back(epoch_loss / n);
  }
  return history;
}

// Fraction of samples whose own branch wins the argmax over branch
// probabilities (no augmentation).
template <class T>
double branch_accuracy(const CnnModel<T>& model,
                       const std::vector<TrainSample>& samples, int batch = 64) {
  const int n = static_cast<int>(samples.size());
  int correct = 0;
  for (int start = 0; start < n; start += batch) {
    const int bs = std::min(batch, n - start);
    std::vector<Image> patches(bs);
    for (int i = 0; i < bs; ++i) patches[i] = samples[start + i].patch;
    const auto fwd = model.forward(model.to_input(patches));
    for (int i = 0; i < bs; ++i) {
      Eigen::Index arg;
      fwd.probs.row(i).maxCoeff(&arg);
      if (static_cast<int>(arg) == samples[start + i].attribute_id) ++correct;
    }
  }
  return static_cast<double>(correct) / n;
}

// Concatenated per-attribute slot activations; absent slots stay zero.
struct AestheticFeature {
  VecXd vec;
  std::vector<bool> active;
};

template <class T>
AestheticFeature extract_feature(const CnnModel<T>& model,
                                 const std::vector<std::optional<Image>>& patches) {
  if (static_cast<int>(patches.size()) != model.branches())
    throw std::invalid_argument("need one (optional) patch per branch");
  AestheticFeature feat;
  feat.vec = VecXd::Zero(static_cast<Eigen::Index>(model.branches()) *
                         model.branch_units());
  feat.active.assign(model.branches(), false);
  for (int b = 0; b < model.branches(); ++b) {
    if (!patches[b]) continue;
    const auto fwd = model.forward(model.to_input({*patches[b]}));
    feat.vec.segment(static_cast<Eigen::Index>(b) * model.branch_units(),
                     model.branch_units()) =
        fwd.branch_acts[b].row(0).transpose().template cast<double>();
    feat.active[b] = true;
  }
  return feat;
}

template <class T>
void save_cnn(const std::filesystem::path& file, const CnnModel<T>& model);
template <class T>
CnnModel<T> load_cnn(const std::filesystem::path& file);

}  // namespace aesth
