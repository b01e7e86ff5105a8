#include "aesth/segment.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

namespace aesth {

namespace {

struct Center {
  double L, a, b, x, y;
};

// Connected components of the label map (4-connectivity).
struct Components {
  ArrXXi comp;  // component id per pixel
  std::vector<int> label;
  std::vector<int> size;
  std::vector<int> seed_pixel;  // raster index of first pixel
};

Components connected_components(const ArrXXi& labels) {
  const int h = static_cast<int>(labels.rows());
  const int w = static_cast<int>(labels.cols());
  Components cc;
  cc.comp = ArrXXi::Constant(h, w, -1);
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (cc.comp(y, x) >= 0) continue;
      const int id = static_cast<int>(cc.label.size());
      const int lab = labels(y, x);
      cc.label.push_back(lab);
      cc.size.push_back(0);
      cc.seed_pixel.push_back(y * w + x);
      queue.push_back({y, x});
      cc.comp(y, x) = id;
      while (!queue.empty()) {
        auto [cy, cx] = queue.front();
        queue.pop_front();
        ++cc.size[id];
        const int ny[4] = {cy - 1, cy + 1, cy, cy};
        const int nx[4] = {cx, cx, cx - 1, cx + 1};
        for (int i = 0; i < 4; ++i) {
          if (ny[i] < 0 || ny[i] >= h || nx[i] < 0 || nx[i] >= w) continue;
          if (cc.comp(ny[i], nx[i]) >= 0 || labels(ny[i], nx[i]) != lab) continue;
          cc.comp(ny[i], nx[i]) = id;
          queue.push_back({ny[i], nx[i]});
        }
      }
    }
  return cc;
}

// Merge every component that is not its label's largest into the largest
// adjacent surviving superpixel, then compact label ids.
void enforce_connectivity(ArrXXi& labels) {
  const int h = static_cast<int>(labels.rows());
  const int w = static_cast<int>(labels.cols());
  Components cc = connected_components(labels);
  const int ncomp = static_cast<int>(cc.label.size());

  std::map<int, int> anchor;  // label -> component kept for it
  for (int c = 0; c < ncomp; ++c) {
    auto it = anchor.find(cc.label[c]);
    if (it == anchor.end() || cc.size[c] > cc.size[it->second] ||
        (cc.size[c] == cc.size[it->second] && cc.seed_pixel[c] < cc.seed_pixel[it->second]))
      anchor[cc.label[c]] = c;
  }
  std::vector<bool> finalized(ncomp, false);
  std::vector<int> final_label(ncomp, -1);
  std::map<int, long> area;  // current pixel count per surviving label
  for (const auto& [lab, c] : anchor) {
    finalized[c] = true;
    final_label[c] = lab;
    area[lab] += cc.size[c];
  }

  // orphan components: attach to the largest adjacent finalized region,
  // sweeping until all are merged
  std::vector<int> pending;
  for (int c = 0; c < ncomp; ++c)
    if (!finalized[c]) pending.push_back(c);
  while (!pending.empty()) {
    bool progress = false;
    std::vector<int> next;
    for (int c : pending) {
      // find adjacent finalized labels of component c
      int best_label = -1;
      long best_area = -1;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          if (cc.comp(y, x) != c) continue;
          const int ny[4] = {y - 1, y + 1, y, y};
          const int nx[4] = {x, x, x - 1, x + 1};
          for (int i = 0; i < 4; ++i) {
            if (ny[i] < 0 || ny[i] >= h || nx[i] < 0 || nx[i] >= w) continue;
            const int oc = cc.comp(ny[i], nx[i]);
            if (oc == c || !finalized[oc]) continue;
            const int lab = final_label[oc];
            const long ar = area[lab];
            if (ar > best_area || (ar == best_area && lab < best_label)) {
              best_area = ar;
              best_label = lab;
            }
          }
        }
      if (best_label >= 0) {
        finalized[c] = true;
        final_label[c] = best_label;
        area[best_label] += cc.size[c];
        progress = true;
      } else {
        next.push_back(c);
      }
    }
    if (!progress && !next.empty()) {
      // isolated group of orphans (no finalized neighbor at all); promote the
      // largest to a surviving region and continue
      int c = next.front();
      for (int o : next)
        if (cc.size[o] > cc.size[c]) c = o;
      finalized[c] = true;
      final_label[c] = cc.label[c];
      area[final_label[c]] += cc.size[c];
      next.erase(std::find(next.begin(), next.end(), c));
    }
    pending = std::move(next);
  }

  // rewrite labels and compact ids in first-appearance (raster) order
  std::map<int, int> remap;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int lab = final_label[cc.comp(y, x)];
      auto it = remap.find(lab);
      if (it == remap.end()) it = remap.emplace(lab, static_cast<int>(remap.size())).first;
      labels(y, x) = it->second;
    }
}

void finish_level(SuperpixelLevel& level, const std::array<ArrXXd, 3>& lab) {
  const int h = level.height(), w = level.width();
  int n = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) n = std::max(n, level.labels(y, x) + 1);

  level.centers = MatXd::Zero(n, 5);
  VecXd counts = VecXd::Zero(n);
  std::vector<std::set<int>> adj(n);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int id = level.labels(y, x);
      level.centers(id, 0) += lab[0](y, x);
      level.centers(id, 1) += lab[1](y, x);
      level.centers(id, 2) += lab[2](y, x);
      level.centers(id, 3) += x;
      level.centers(id, 4) += y;
      counts(id) += 1;
      if (x + 1 < w && level.labels(y, x + 1) != id) {
        adj[id].insert(level.labels(y, x + 1));
        adj[level.labels(y, x + 1)].insert(id);
      }
      if (y + 1 < h && level.labels(y + 1, x) != id) {
        adj[id].insert(level.labels(y + 1, x));
        adj[level.labels(y + 1, x)].insert(id);
      }
    }
  for (int i = 0; i < n; ++i) level.centers.row(i) /= counts(i);
  level.adjacency.resize(n);
  for (int i = 0; i < n; ++i)
    level.adjacency[i] = std::vector<int>(adj[i].begin(), adj[i].end());
}

}  // namespace

SuperpixelLevel slic(const Image& img, int k, double compactness, int iters) {
  const int h = img.height(), w = img.width();
  if (k < 4 || static_cast<long>(k) > static_cast<long>(h) * w / 16)
    throw std::invalid_argument("slic: k out of range [4, H*W/16]");
  if (iters < 1) throw std::invalid_argument("slic: iters must be >= 1");

  const auto lab = to_lab(img);
  const double S = std::sqrt(static_cast<double>(h) * w / k);

  // seed grid, cell centers of an nx x ny partition close to k cells
  const int nx = std::max(1, static_cast<int>(std::lround(w / S)));
  const int ny = std::max(1, static_cast<int>(std::lround(h / S)));
  std::vector<Center> centers;
  ArrXXd grad(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
      const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
      double g = 0;
      for (int c = 0; c < 3; ++c) {
        const double dx = lab[c](y, xp) - lab[c](y, xm);
        const double dy = lab[c](yp, x) - lab[c](ym, x);
        g += dx * dx + dy * dy;
      }
      grad(y, x) = g;
    }
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      int cx = static_cast<int>((i + 0.5) * w / nx);
      int cy = static_cast<int>((j + 0.5) * h / ny);
      // perturb to the lowest-gradient 3x3 neighbor
      int bx = cx, by = cy;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int px = cx + dx, py = cy + dy;
          if (px < 0 || px >= w || py < 0 || py >= h) continue;
          if (grad(py, px) < grad(by, bx)) {
            bx = px;
            by = py;
          }
        }
      centers.push_back({lab[0](by, bx), lab[1](by, bx), lab[2](by, bx),
                         static_cast<double>(bx), static_cast<double>(by)});
    }

  ArrXXi labels(h, w);
  ArrXXd best(h, w);
  const double ratio = compactness / S;
  const int win = static_cast<int>(std::ceil(S));
  for (int it = 0; it < iters; ++it) {
    labels.setConstant(-1);
    best.setConstant(std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < centers.size(); ++c) {
      const Center& ct = centers[c];
      const int x0 = std::max(0, static_cast<int>(ct.x) - win);
      const int x1 = std::min(w - 1, static_cast<int>(ct.x) + win);
      const int y0 = std::max(0, static_cast<int>(ct.y) - win);
      const int y1 = std::min(h - 1, static_cast<int>(ct.y) + win);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double dl = lab[0](y, x) - ct.L;
          const double da = lab[1](y, x) - ct.a;
          const double db = lab[2](y, x) - ct.b;
          const double dxy = std::hypot(x - ct.x, y - ct.y);
          const double d = std::sqrt(dl * dl + da * da + db * db) + ratio * dxy;
          if (d < best(y, x)) {
            best(y, x) = d;
            labels(y, x) = static_cast<int>(c);
          }
        }
    }
    // any pixel outside all windows: assign to nearest center spatially
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (labels(y, x) < 0) {
          double bd = std::numeric_limits<double>::infinity();
          for (std::size_t c = 0; c < centers.size(); ++c) {
            const double d = std::hypot(x - centers[c].x, y - centers[c].y);
            if (d < bd) {
              bd = d;
              labels(y, x) = static_cast<int>(c);
            }
          }
        }
    // recompute centers
    std::vector<Center> acc(centers.size(), {0, 0, 0, 0, 0});
    std::vector<long> cnt(centers.size(), 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int id = labels(y, x);
        acc[id].L += lab[0](y, x);
        acc[id].a += lab[1](y, x);
        acc[id].b += lab[2](y, x);
        acc[id].x += x;
        acc[id].y += y;
        ++cnt[id];
      }
    for (std::size_t c = 0; c < centers.size(); ++c)
      if (cnt[c] > 0)
        centers[c] = {acc[c].L / cnt[c], acc[c].a / cnt[c], acc[c].b / cnt[c],
                      acc[c].x / cnt[c], acc[c].y / cnt[c]};
  }

  enforce_connectivity(labels);
  SuperpixelLevel level;
  level.labels = labels;
  finish_level(level, lab);
  return level;
}

SuperpixelLevel grid_segmentation(const Image& img, int k) {
  const int h = img.height(), w = img.width();
  if (k < 4 || static_cast<long>(k) > static_cast<long>(h) * w / 16)
    throw std::invalid_argument("grid_segmentation: k out of range [4, H*W/16]");
  const double S = std::sqrt(static_cast<double>(h) * w / k);
  const int nx = std::max(1, static_cast<int>(std::lround(w / S)));
  const int ny = std::max(1, static_cast<int>(std::lround(h / S)));
  SuperpixelLevel level;
  level.labels.resize(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int i = std::min(nx - 1, x * nx / w);
      const int j = std::min(ny - 1, y * ny / h);
      level.labels(y, x) = j * nx + i;
    }
  finish_level(level, to_lab(img));
  return level;
}

SuperpixelPyramid build_pyramid(const Image& img, std::array<int, 3> k_levels,
                                double compactness, int iters, bool grid_cells) {
  if (!(k_levels[0] > k_levels[1] && k_levels[1] > k_levels[2]))
    throw std::invalid_argument(
        "pyramid superpixel counts must be strictly decreasing fine > medium > coarse");
  SuperpixelPyramid pyr;
  for (int i = 0; i < 3; ++i)
    pyr.levels[i] = grid_cells ? grid_segmentation(img, k_levels[i])
                               : slic(img, k_levels[i], compactness, iters);
  return pyr;
}

VecXd hog_descriptor(const ArrXXd& gray_patch) {
  constexpr int kSide = 32, kCell = 8, kCells = kSide / kCell, kBins = 8;
  const int h = static_cast<int>(gray_patch.rows());
  const int w = static_cast<int>(gray_patch.cols());

  // resample to 32x32 (bilinear)
  ArrXXd p(kSide, kSide);
  for (int y = 0; y < kSide; ++y) {
    double fy = (y + 0.5) * h / kSide - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < kSide; ++x) {
      double fx = (x + 0.5) * w / kSide - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      p(y, x) = (1 - wy) * ((1 - wx) * gray_patch(y0, x0) + wx * gray_patch(y0, x1)) +
                wy * ((1 - wx) * gray_patch(y1, x0) + wx * gray_patch(y1, x1));
    }
  }

  VecXd hog = VecXd::Zero(kBins * kCells * kCells);
  const double pi = 3.14159265358979323846;
  for (int y = 0; y < kSide; ++y)
    for (int x = 0; x < kSide; ++x) {
      const int xm = std::max(x - 1, 0), xp = std::min(x + 1, kSide - 1);
      const int ym = std::max(y - 1, 0), yp = std::min(y + 1, kSide - 1);
      const double gx = p(y, xp) - p(y, xm);
      const double gy = p(yp, x) - p(ym, x);
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      double ang = std::atan2(gy, gx);  // unsigned orientation in [0,pi)
      if (ang < 0) ang += pi;
      if (ang >= pi) ang -= pi;
      const double pos = ang / pi * kBins - 0.5;  // soft vote between two bins
      int b0 = static_cast<int>(std::floor(pos));
      const double f = pos - b0;
      int b1 = b0 + 1;
      if (b0 < 0) b0 += kBins;
      if (b1 >= kBins) b1 -= kBins;
      const int cell = (y / kCell) * kCells + (x / kCell);
      hog(cell * kBins + b0) += mag * (1 - f);
      hog(cell * kBins + b1) += mag * f;
    }
  const double norm = hog.norm();
  if (norm > 1e-12) hog /= norm;
  else hog.setZero();
  return hog;
}

std::vector<SuperpixelFeature> superpixel_features(const Image& img,
                                                   const SuperpixelLevel& level) {
  const int h = level.height(), w = level.width();
  if (h != img.height() || w != img.width())
    throw std::invalid_argument("level does not match image size");
  const auto lab = to_lab(img);
  const ArrXXd gray = to_gray(img);
  const int n = level.count();

  struct Bounds {
    int x0 = std::numeric_limits<int>::max(), y0 = std::numeric_limits<int>::max();
    int x1 = -1, y1 = -1;
  };
  std::vector<Bounds> box(n);
  MatXd sum1 = MatXd::Zero(n, 3), sum2 = MatXd::Zero(n, 3), sum3 = MatXd::Zero(n, 3);
  VecXd cnt = VecXd::Zero(n);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int id = level.labels(y, x);
      for (int c = 0; c < 3; ++c) sum1(id, c) += lab[c](y, x);
      cnt(id) += 1;
      box[id].x0 = std::min(box[id].x0, x);
      box[id].y0 = std::min(box[id].y0, y);
      box[id].x1 = std::max(box[id].x1, x);
      box[id].y1 = std::max(box[id].y1, y);
    }
  MatXd mean(n, 3);
  for (int i = 0; i < n; ++i) mean.row(i) = sum1.row(i) / cnt(i);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int id = level.labels(y, x);
      for (int c = 0; c < 3; ++c) {
        const double d = lab[c](y, x) - mean(id, c);
        sum2(id, c) += d * d;
        sum3(id, c) += d * d * d;
      }
    }

  std::vector<SuperpixelFeature> feats(n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double var = sum2(i, c) / cnt(i);
      const double m3 = sum3(i, c) / cnt(i);
      feats[i].color(3 * c + 0) = mean(i, c);
      feats[i].color(3 * c + 1) = std::sqrt(var);
      feats[i].color(3 * c + 2) = std::cbrt(m3);  // signed cube root
    }
    const ArrXXd patch = gray.block(box[i].y0, box[i].x0, box[i].y1 - box[i].y0 + 1,
                                    box[i].x1 - box[i].x0 + 1);
    feats[i].hog = hog_descriptor(patch);
  }
  return feats;
}

}  // namespace aesth
