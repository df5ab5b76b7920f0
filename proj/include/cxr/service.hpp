#pragma once

#include <condition_variable>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "cxr/feature_store.hpp"

namespace httplib {
class Server;
}

namespace cxr {

struct ServiceOptions {
  std::filesystem::path store_path;
  std::optional<std::filesystem::path> image_dir;
  /// Base URL of the feature extractor (POST {url}/extract); empty = none.
  std::string extractor_url;
  unsigned threads = 0;
  std::size_t default_k = 11;
};

struct HttpReply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Image bytes (possibly empty) plus the caller's handle; returns the vector.
/// Throws ExtractorError when the extractor cannot be reached or refuses.
using ExtractFn =
    std::function<std::vector<float>(std::string_view image_ref, const std::string& image_bytes)>;

class ExtractorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Calls `POST {base_url}/extract` with a multipart body holding `image_ref`
/// and, when non-empty, the image bytes as `image`.
ExtractFn http_extractor(std::string base_url);

/// HTTP query service over one read-only store. Handlers are plain member
/// functions so they can be exercised without a socket; mount() wires them
/// into an httplib server under /v1.
class QueryService {
 public:
  explicit QueryService(ServiceOptions options);
  ~QueryService();
  QueryService(const QueryService&) = delete;
  QueryService& operator=(const QueryService&) = delete;

  /// Opens options.store_path on a background thread; until it finishes
  /// every endpoint answers 503.
  void load_async();
  void load();
  /// Installs an already-open store.
  void attach(FeatureStore store);
  bool ready() const;
  /// Blocks until loading has finished (successfully or not).
  void wait_loaded() const;

  void set_extractor(ExtractFn extract) { extract_ = std::move(extract); }
  void set_request_log(std::ostream* log) { log_ = log; }

  HttpReply store_summary() const;
  HttpReply query(std::string_view body) const;
  HttpReply record(std::string_view record_id) const;
  HttpReply record_image(std::string_view record_id) const;

  void mount(httplib::Server& server);

 private:
  std::shared_ptr<const FeatureStore> current() const;
  std::optional<HttpReply> not_ready() const;
  std::optional<std::filesystem::path> image_path(std::string_view record_id) const;
  void log_request(const std::string& method, const std::string& path, int status,
                   double elapsed_ms) const;

  ServiceOptions options_;
  ExtractFn extract_;
  std::ostream* log_ = nullptr;
  mutable std::mutex log_mutex_;

  mutable std::mutex state_mutex_;
  mutable std::condition_variable loaded_cv_;
  std::shared_ptr<const FeatureStore> store_;
  std::string load_error_;
  bool loading_done_ = false;
  std::thread loader_;
};

}  // namespace cxr
