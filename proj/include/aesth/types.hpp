#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>

namespace aesth {

using Real = double;

template <class T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using ArrXX = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic>;

using MatXd = MatX<Real>;
using VecXd = VecX<Real>;
using MatXf = MatX<float>;
using VecXf = VecX<float>;
using ArrXXd = ArrXX<Real>;
using ArrXXf = ArrXX<float>;
using ArrXXi = ArrXX<int>;

// Axis-aligned pixel rectangle, [x, x+w) x [y, y+h).
struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  long long area() const { return static_cast<long long>(w) * h; }
  bool contains(int px, int py) const {
    return px >= x && px < x + w && py >= y && py < y + h;
  }
  bool operator==(const Rect&) const = default;
};

inline long long intersection_area(const Rect& a, const Rect& b) {
  const int x0 = std::max(a.x, b.x);
  const int y0 = std::max(a.y, b.y);
  const int x1 = std::min(a.x + a.w, b.x + b.w);
  const int y1 = std::min(a.y + a.h, b.y + b.h);
  if (x1 <= x0 || y1 <= y0) return 0;
  return static_cast<long long>(x1 - x0) * (y1 - y0);
}

inline double rect_iou(const Rect& a, const Rect& b) {
  const long long inter = intersection_area(a, b);
  const long long uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

// FNV-1a, used for content hashing and seed derivation.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s,
                           std::uint64_t h = 14695981039346656037ull) {
  return fnv1a(s.data(), s.size(), h);
}

std::string hash_hex(std::uint64_t h);

}  // namespace aesth
