#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "cxr/feature_store.hpp"

namespace cxr::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("cxr-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<Record> random_records(std::size_t n, std::size_t dim, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<float> value(0.0f, 1.0f);
  std::bernoulli_distribution positive(0.3);
  std::vector<Record> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    records[i].meta.record_id = "r" + std::to_string(i);
    records[i].meta.label = positive(gen) ? Label::Positive : Label::Negative;
    records[i].meta.source = static_cast<Source>(i % 4);
    records[i].vector.resize(dim);
    for (auto& v : records[i].vector) v = value(gen);
  }
  return records;
}

inline Record make_record(std::string id, Label label, std::vector<float> v,
                          Source source = Source::Synthetic) {
  return {{std::move(id), label, source}, std::move(v)};
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace cxr::testing
