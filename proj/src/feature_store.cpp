#include "cxr/feature_store.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <sstream>
#include <utility>

#include "cxr/error.hpp"

namespace cxr {

static_assert(std::endian::native == std::endian::little,
              "the .cxrf payload is mapped directly and must be little-endian");

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'X', 'R', 'F', 'E', 'A', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderSize = 24;
constexpr std::string_view kMetaHeader = "row,record_id,label,source";

template <typename T>
T load_le(const std::byte* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  return value;
}

template <typename T>
void put_le(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string quoted = "\"";
  for (char c : field) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  quoted += '"';
  return quoted;
}

std::string_view trim_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

}  // namespace

std::string_view to_string(Source source) {
  switch (source) {
    case Source::MimicCxr: return "mimic-cxr";
    case Source::CheXpert: return "chexpert";
    case Source::ChestXray14: return "chestxray14";
    case Source::Synthetic: return "synthetic";
  }
  return "synthetic";
}

Source parse_source(std::string_view text) {
  if (text == "mimic-cxr") return Source::MimicCxr;
  if (text == "chexpert") return Source::CheXpert;
  if (text == "chestxray14") return Source::ChestXray14;
  if (text == "synthetic") return Source::Synthetic;
  throw Error("unknown source '" + std::string(text) + "'");
}

std::filesystem::path meta_path_for(const std::filesystem::path& vectors_path) {
  auto p = vectors_path;
  p += ".meta.csv";
  return p;
}

// ---------------------------------------------------------------------------
// MappedFile

MappedFile::MappedFile(const std::filesystem::path& path) {
  int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) {
    throw Error("cannot open " + path.string() + ": " + std::strerror(errno));
  }
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    int err = errno;
    ::close(fd);
    throw Error("cannot stat " + path.string() + ": " + std::strerror(err));
  }
  size_ = static_cast<std::size_t>(st.st_size);
  if (size_ > 0) {
    void* addr = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd, 0);
    if (addr == MAP_FAILED) {
      int err = errno;
      ::close(fd);
      throw Error("cannot map " + path.string() + ": " + std::strerror(err));
    }
    data_ = static_cast<const std::byte*>(addr);
  }
  ::close(fd);
}

MappedFile::~MappedFile() { reset(); }

MappedFile::MappedFile(MappedFile&& other) noexcept
    : data_(std::exchange(other.data_, nullptr)), size_(std::exchange(other.size_, 0)) {}

MappedFile& MappedFile::operator=(MappedFile&& other) noexcept {
  if (this != &other) {
    reset();
    data_ = std::exchange(other.data_, nullptr);
    size_ = std::exchange(other.size_, 0);
  }
  return *this;
}

void MappedFile::reset() noexcept {
  if (data_ != nullptr) {
    ::munmap(const_cast<std::byte*>(data_), size_);
  }
  data_ = nullptr;
  size_ = 0;
}

// ---------------------------------------------------------------------------
// Metadata sidecar

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted) throw Error("unterminated quoted field");
  fields.push_back(std::move(field));
  return fields;
}

std::vector<RecordMeta> read_meta_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open metadata " + path.string());

  std::vector<RecordMeta> meta;
  std::unordered_set<std::string> seen;
  bool have_header = false;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    auto line = trim_cr(raw);
    if (line.empty() || line.front() == '#') continue;
    if (!have_header) {
      if (line != kMetaHeader) {
        throw Error(path.string() + ": expected header '" + std::string(kMetaHeader) + "'");
      }
      have_header = true;
      continue;
    }
    auto where = [&] { return path.string() + ":" + std::to_string(line_no) + ": "; };
    std::vector<std::string> f;
    try {
      f = split_csv_line(line);
    } catch (const Error& e) {
      throw Error(where() + e.what());
    }
    if (f.size() != 4) throw Error(where() + "expected 4 fields");
    if (f[0] != std::to_string(meta.size())) {
      throw Error(where() + "row must be " + std::to_string(meta.size()));
    }
    if (f[1].empty()) throw Error(where() + "empty record_id");
    if (!seen.insert(f[1]).second) throw Error(where() + "duplicate record_id '" + f[1] + "'");
    RecordMeta m;
    m.record_id = f[1];
    if (f[2] == "0") {
      m.label = Label::Negative;
    } else if (f[2] == "1") {
      m.label = Label::Positive;
    } else {
      throw Error(where() + "label must be 0 or 1");
    }
    try {
      m.source = parse_source(f[3]);
    } catch (const Error& e) {
      throw Error(where() + e.what());
    }
    meta.push_back(std::move(m));
  }
  if (!have_header) throw Error(path.string() + ": missing header");
  return meta;
}

void write_meta_csv(const std::filesystem::path& path, std::span<const RecordMeta> meta,
                    const std::string& comment) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  if (!comment.empty()) {
    std::istringstream lines(comment);
    std::string line;
    while (std::getline(lines, line)) out << "# " << line << '\n';
  }
  out << kMetaHeader << '\n';
  for (std::size_t i = 0; i < meta.size(); ++i) {
    out << i << ',' << csv_quote(meta[i].record_id) << ',' << (is_positive(meta[i].label) ? 1 : 0)
        << ',' << to_string(meta[i].source) << '\n';
  }
  out.flush();
  if (!out) throw Error("I/O failure writing " + path.string());
}

// ---------------------------------------------------------------------------
// FeatureStore

FeatureStore FeatureStore::open(const std::filesystem::path& path) {
  FeatureStore store;
  store.mapping_ = MappedFile(path);
  auto bytes = store.mapping_.bytes();
  if (bytes.size() < kHeaderSize) {
    if (bytes.size() >= kMagic.size() &&
        std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
      throw Error("bad magic in " + path.string());
    }
    throw Error("truncated header in " + path.string());
  }
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw Error("bad magic in " + path.string());
  }
  auto version = load_le<std::uint32_t>(bytes.data() + 8);
  if (version != kVersion) {
    throw Error("unsupported version " + std::to_string(version) + " in " + path.string());
  }
  auto n = load_le<std::uint64_t>(bytes.data() + 12);
  auto dim = load_le<std::uint32_t>(bytes.data() + 20);
  if (n == 0 || dim == 0) throw Error("empty store in " + path.string());

  const std::size_t payload_bytes = bytes.size() - kHeaderSize;
  if (n > payload_bytes / (std::size_t{dim} * sizeof(float))) {
    throw Error("truncated payload in " + path.string());
  }
  const std::size_t expected = n * dim * sizeof(float);
  if (payload_bytes != expected) {
    throw Error("trailing bytes after payload in " + path.string());
  }
  store.dim_ = dim;
  store.payload_ = {reinterpret_cast<const float*>(bytes.data() + kHeaderSize),
                    static_cast<std::size_t>(n * dim)};

  store.meta_ = read_meta_csv(meta_path_for(path));
  if (store.meta_.size() != n) {
    throw Error("meta/vector count mismatch: " + std::to_string(store.meta_.size()) +
                " metadata rows vs " + std::to_string(n) + " vectors");
  }
  store.index_ids();
  return store;
}

FeatureStore FeatureStore::in_memory(std::vector<Record> records) {
  if (records.empty()) throw Error("empty store");
  const std::size_t dim = records.front().vector.size();
  std::vector<float> values;
  values.reserve(records.size() * dim);
  std::vector<RecordMeta> meta;
  meta.reserve(records.size());
  for (auto& r : records) {
    if (r.vector.size() != dim) throw Error("dimension mismatch");
    values.insert(values.end(), r.vector.begin(), r.vector.end());
    meta.push_back(std::move(r.meta));
  }
  return in_memory(std::move(values), dim, std::move(meta));
}

FeatureStore FeatureStore::in_memory(std::vector<float> values, std::size_t dim,
                                     std::vector<RecordMeta> meta) {
  if (meta.empty()) throw Error("empty store");
  if (dim == 0) throw Error("dimension must be positive");
  if (values.size() != meta.size() * dim) throw Error("meta/vector count mismatch");
  for (float v : values) {
    if (!std::isfinite(v)) throw Error("non-finite value");
  }
  FeatureStore store;
  store.owned_ = std::move(values);
  store.payload_ = store.owned_;
  store.dim_ = dim;
  store.meta_ = std::move(meta);
  store.index_ids();
  return store;
}

void FeatureStore::index_ids() {
  by_id_.reserve(meta_.size());
  for (std::size_t i = 0; i < meta_.size(); ++i) {
    if (meta_[i].record_id.empty()) throw Error("empty record_id at row " + std::to_string(i));
    if (!by_id_.emplace(meta_[i].record_id, i).second) {
      throw Error("duplicate record_id '" + meta_[i].record_id + "'");
    }
  }
}

std::span<const float> FeatureStore::vector(std::size_t i) const {
  if (i >= size()) {
    throw Error("index " + std::to_string(i) + " out of range [0, " + std::to_string(size()) + ")");
  }
  return row(i);
}

const RecordMeta& FeatureStore::meta(std::size_t i) const {
  if (i >= size()) {
    throw Error("index " + std::to_string(i) + " out of range [0, " + std::to_string(size()) + ")");
  }
  return meta_[i];
}

std::vector<Label> FeatureStore::labels() const {
  std::vector<Label> out;
  out.reserve(meta_.size());
  for (const auto& m : meta_) out.push_back(m.label);
  return out;
}

std::optional<std::size_t> FeatureStore::find(std::string_view record_id) const {
  auto it = by_id_.find(std::string(record_id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

ClassCounts FeatureStore::class_counts() const {
  ClassCounts counts;
  for (const auto& m : meta_) {
    if (is_positive(m.label)) {
      ++counts.positive;
    } else {
      ++counts.negative;
    }
  }
  return counts;
}

bool FeatureStore::all_finite() const {
  return std::all_of(payload_.begin(), payload_.end(), [](float v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Writing

StoreWriter::StoreWriter(const std::filesystem::path& path, std::size_t dim, std::string comment)
    : path_(path), dim_(dim), comment_(std::move(comment)) {
  if (dim_ == 0 || dim_ > UINT32_MAX) throw Error("dimension must be in [1, 2^32)");
  out_.open(path_, std::ios::binary | std::ios::trunc);
  if (!out_) throw Error("cannot write " + path_.string());
  out_.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out_, kVersion);
  put_le<std::uint64_t>(out_, 0);
  put_le<std::uint32_t>(out_, static_cast<std::uint32_t>(dim_));
  if (!out_) throw Error("I/O failure writing " + path_.string());
}

StoreWriter::~StoreWriter() {
  if (!finished_) {
    out_.close();
    std::error_code ignored;
    std::filesystem::remove(path_, ignored);
  }
}

void StoreWriter::append(const RecordMeta& meta, std::span<const float> vector) {
  if (finished_) throw Error("store already finished");
  if (vector.size() != dim_) {
    throw Error("dimension mismatch for '" + meta.record_id + "': expected " +
                std::to_string(dim_) + ", got " + std::to_string(vector.size()));
  }
  if (meta.record_id.empty()) throw Error("empty record_id");
  if (meta.record_id.find_first_of("\r\n") != std::string::npos) {
    throw Error("record_id contains a line break");
  }
  for (float v : vector) {
    if (!std::isfinite(v)) throw Error("non-finite value in '" + meta.record_id + "'");
  }
  if (!ids_.insert(meta.record_id).second) {
    throw Error("duplicate record_id '" + meta.record_id + "'");
  }
  out_.write(reinterpret_cast<const char*>(vector.data()),
             static_cast<std::streamsize>(vector.size_bytes()));
  if (!out_) throw Error("I/O failure writing " + path_.string());
  meta_.push_back(meta);
}

void StoreWriter::finish() {
  if (finished_) return;
  if (meta_.empty()) throw Error("empty store");
  out_.seekp(12);
  put_le<std::uint64_t>(out_, meta_.size());
  out_.flush();
  if (!out_) throw Error("I/O failure writing " + path_.string());
  out_.close();
  write_meta_csv(meta_path_for(path_), meta_, comment_);
  finished_ = true;
}

void write_store(std::span<const Record> records, const std::filesystem::path& path) {
  if (records.empty()) throw Error("empty store");
  const std::size_t dim = records.front().vector.size();
  for (const auto& r : records) {
    if (r.vector.size() != dim) throw Error("dimension mismatch for '" + r.meta.record_id + "'");
  }
  StoreWriter writer(path, dim);
  for (const auto& r : records) writer.append(r.meta, r.vector);
  writer.finish();
}

}  // namespace cxr
