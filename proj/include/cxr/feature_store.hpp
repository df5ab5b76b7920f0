#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace cxr {

enum class Label : std::uint8_t { Negative = 0, Positive = 1 };

enum class Source : std::uint8_t { MimicCxr, CheXpert, ChestXray14, Synthetic };

std::string_view to_string(Source source);
/// Parses the sidecar spelling (`mimic-cxr`, `chexpert`, `chestxray14`, `synthetic`).
Source parse_source(std::string_view text);

inline bool is_positive(Label label) { return label == Label::Positive; }
inline Label flip(Label label) {
  return label == Label::Positive ? Label::Negative : Label::Positive;
}

struct RecordMeta {
  std::string record_id;
  Label label = Label::Negative;
  Source source = Source::Synthetic;

  bool operator==(const RecordMeta&) const = default;
};

struct Record {
  RecordMeta meta;
  std::vector<float> vector;
};

struct ClassCounts {
  std::size_t negative = 0;
  std::size_t positive = 0;
  std::size_t total() const { return negative + positive; }
};

/// Sidecar path for a vector file: `<path>.meta.csv`.
std::filesystem::path meta_path_for(const std::filesystem::path& vectors_path);

/// Read-only memory mapping of a whole file.
class MappedFile {
 public:
  MappedFile() = default;
  explicit MappedFile(const std::filesystem::path& path);
  ~MappedFile();

  MappedFile(MappedFile&& other) noexcept;
  MappedFile& operator=(MappedFile&& other) noexcept;
  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;

  std::span<const std::byte> bytes() const { return {data_, size_}; }

 private:
  void reset() noexcept;

  const std::byte* data_ = nullptr;
  std::size_t size_ = 0;
};

/// N x dim float32 feature matrix with per-row metadata. Opened stores are
/// backed by a private read-only mapping; in-memory stores own their buffer.
/// Immutable after construction and safe to share across threads.
class FeatureStore {
 public:
  static FeatureStore open(const std::filesystem::path& path);
  static FeatureStore in_memory(std::vector<Record> records);
  static FeatureStore in_memory(std::vector<float> values, std::size_t dim,
                                std::vector<RecordMeta> meta);

  FeatureStore(FeatureStore&&) noexcept = default;
  FeatureStore& operator=(FeatureStore&&) noexcept = default;

  std::size_t size() const { return meta_.size(); }
  std::size_t dim() const { return dim_; }

  /// Row `i` without copying. Throws cxr::Error when out of range.
  std::span<const float> vector(std::size_t i) const;
  std::span<const float> row(std::size_t i) const {
    return payload_.subspan(i * dim_, dim_);
  }
  std::span<const float> payload() const { return payload_; }

  const RecordMeta& meta(std::size_t i) const;
  const std::vector<RecordMeta>& metas() const { return meta_; }
  Label label(std::size_t i) const { return meta_[i].label; }
  std::vector<Label> labels() const;

  std::optional<std::size_t> find(std::string_view record_id) const;
  ClassCounts class_counts() const;

  /// Scans the payload for NaN/Inf. O(N*dim); not done on open.
  bool all_finite() const;

 private:
  FeatureStore() = default;
  void index_ids();

  MappedFile mapping_;
  std::vector<float> owned_;
  std::span<const float> payload_;
  std::size_t dim_ = 0;
  std::vector<RecordMeta> meta_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

/// Streaming writer for the `.cxrf` + sidecar pair. Rows are validated as
/// they are appended; the header's record count is patched on finish().
class StoreWriter {
 public:
  StoreWriter(const std::filesystem::path& path, std::size_t dim,
              std::string comment = {});
  ~StoreWriter();
  StoreWriter(const StoreWriter&) = delete;
  StoreWriter& operator=(const StoreWriter&) = delete;

  void append(const RecordMeta& meta, std::span<const float> vector);
  void finish();

  std::size_t count() const { return meta_.size(); }
  std::size_t dim() const { return dim_; }

 private:
  std::filesystem::path path_;
  std::size_t dim_;
  std::string comment_;
  std::ofstream out_;
  std::vector<RecordMeta> meta_;
  std::unordered_set<std::string> ids_;
  bool finished_ = false;
};

/// Writes `records` to `path` and `meta_path_for(path)`.
void write_store(std::span<const Record> records, const std::filesystem::path& path);

/// Reads a metadata sidecar. `#` lines are comments.
std::vector<RecordMeta> read_meta_csv(const std::filesystem::path& path);
void write_meta_csv(const std::filesystem::path& path, std::span<const RecordMeta> meta,
                    const std::string& comment = {});

/// Splits one CSV line, honouring double-quoted fields.
std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace cxr
