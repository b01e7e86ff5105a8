#pragma once

#include "aesth/corpus.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace aesth::testutil {

inline TaggedImage make_tagged(const std::string& id,
                               const std::map<std::string, int>& tags, int h = 64,
                               int w = 64, float fill = 0.5f) {
  TaggedImage im;
  im.id = id;
  im.pixels = Image(h, w, fill);
  im.tags = tags;
  return im;
}

// Fresh directory under the build tree; wiped on construction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() / ("aesth_test_" + name);
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace aesth::testutil
