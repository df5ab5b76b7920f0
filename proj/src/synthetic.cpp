#include "cxr/synthetic.hpp"

#include <cmath>
#include <string>

#include "cxr/cv.hpp"
#include "cxr/error.hpp"

namespace cxr::synthetic {

namespace {

std::string synthetic_id(std::size_t i) { return "syn-" + std::to_string(i); }

}  // namespace

std::vector<Record> gaussian_blobs(const BlobSpec& spec) {
  if (spec.n == 0 || spec.dim == 0) throw Error("blob spec needs n > 0 and dim > 0");
  Rng rng(spec.seed);
  const double offset = spec.separation / std::sqrt(static_cast<double>(spec.dim));
  std::vector<Record> records;
  records.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    Record r;
    r.meta.record_id = synthetic_id(i);
    r.meta.source = Source::Synthetic;
    r.meta.label = rng.uniform() < spec.positive_fraction ? Label::Positive : Label::Negative;
    const double centre = is_positive(r.meta.label) ? offset : 0.0;
    r.vector.resize(spec.dim);
    for (auto& v : r.vector) v = static_cast<float>(centre + rng.normal());
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<Record> shuffle_labels(std::vector<Record> records, std::uint64_t seed) {
  std::vector<Label> labels;
  labels.reserve(records.size());
  for (const auto& r : records) labels.push_back(r.meta.label);
  Rng rng(seed);
  rng.shuffle(std::span<Label>(labels));
  for (std::size_t i = 0; i < records.size(); ++i) records[i].meta.label = labels[i];
  return records;
}

void write_random_store(const std::filesystem::path& path, std::size_t n, std::size_t dim,
                        std::uint64_t seed, double positive_fraction) {
  Rng rng(seed);
  StoreWriter writer(path, dim, "generator: synthetic standard-normal");
  std::vector<float> row(dim);
  RecordMeta meta;
  meta.source = Source::Synthetic;
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : row) v = static_cast<float>(rng.normal());
    meta.record_id = synthetic_id(i);
    meta.label = rng.uniform() < positive_fraction ? Label::Positive : Label::Negative;
    writer.append(meta, row);
  }
  writer.finish();
}

}  // namespace cxr::synthetic
