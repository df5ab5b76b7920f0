#include "cxr/service.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <memory>

#include "cxr/error.hpp"
#include "cxr/knn.hpp"
#include "cxr/vote.hpp"

#include "httplib.h"
#include "json.hpp"

namespace cxr {

namespace {

using json = nlohmann::ordered_json;

HttpReply json_reply(int status, const json& body) { return {status, body.dump(), "application/json"}; }

HttpReply error_reply(int status, std::string_view message) {
  json body;
  body["v"] = 1;
  body["error"] = message;
  return json_reply(status, body);
}

json meta_json(const RecordMeta& meta, std::size_t row) {
  json j;
  j["record_id"] = meta.record_id;
  j["row"] = row;
  j["label"] = is_positive(meta.label) ? 1 : 0;
  j["source"] = to_string(meta.source);
  return j;
}

std::string_view content_type_for(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".dcm") return "application/dicom";
  return "application/octet-stream";
}

std::optional<std::string> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Resolves `name` under `dir`, rejecting anything that escapes it.
std::optional<std::filesystem::path> contained_path(const std::filesystem::path& dir,
                                                    std::string_view name) {
  if (name.empty()) return std::nullopt;
  const std::filesystem::path rel(name);
  if (rel.is_absolute()) return std::nullopt;
  for (const auto& part : rel) {
    if (part == "..") return std::nullopt;
  }
  return dir / rel;
}

}  // namespace

ExtractFn http_extractor(std::string base_url) {
  return [base_url = std::move(base_url)](std::string_view image_ref,
                                          const std::string& image_bytes) {
    if (base_url.empty()) throw ExtractorError("extractor not configured (EXTRACTOR_URL)");
    // Split "scheme://host:port/prefix" into the client root and path prefix.
    std::string root = base_url;
    std::string prefix;
    const auto scheme = base_url.find("://");
    const auto slash = base_url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (slash != std::string::npos) {
      root = base_url.substr(0, slash);
      prefix = base_url.substr(slash);
      while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    }
    httplib::Client client(root);
    client.set_connection_timeout(5);
    client.set_read_timeout(60);

    httplib::MultipartFormDataItems items;
    items.push_back({"image_ref", std::string(image_ref), "", ""});
    if (!image_bytes.empty()) {
      items.push_back({"image", image_bytes, std::string(image_ref), "application/octet-stream"});
    }
    auto res = client.Post(prefix + "/extract", items);
    if (!res) {
      throw ExtractorError("extractor unreachable: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      throw ExtractorError("extractor returned HTTP " + std::to_string(res->status));
    }
    std::vector<float> vector;
    try {
      const auto body = nlohmann::json::parse(res->body);
      for (const auto& v : body.at("vector")) vector.push_back(v.get<float>());
    } catch (const std::exception& e) {
      throw ExtractorError(std::string("malformed extractor response: ") + e.what());
    }
    return vector;
  };
}

QueryService::QueryService(ServiceOptions options)
    : options_(std::move(options)), extract_(http_extractor(options_.extractor_url)) {}

QueryService::~QueryService() {
  if (loader_.joinable()) loader_.join();
}

void QueryService::load() {
  std::shared_ptr<const FeatureStore> store;
  std::string error;
  try {
    store = std::make_shared<const FeatureStore>(FeatureStore::open(options_.store_path));
  } catch (const std::exception& e) {
    error = e.what();
  }
  {
    std::lock_guard lock(state_mutex_);
    store_ = std::move(store);
    load_error_ = std::move(error);
    loading_done_ = true;
  }
  loaded_cv_.notify_all();
}

void QueryService::load_async() {
  loader_ = std::thread([this] { load(); });
}

void QueryService::attach(FeatureStore store) {
  {
    std::lock_guard lock(state_mutex_);
    store_ = std::make_shared<const FeatureStore>(std::move(store));
    load_error_.clear();
    loading_done_ = true;
  }
  loaded_cv_.notify_all();
}

bool QueryService::ready() const { return current() != nullptr; }

void QueryService::wait_loaded() const {
  std::unique_lock lock(state_mutex_);
  loaded_cv_.wait(lock, [this] { return loading_done_; });
}

std::shared_ptr<const FeatureStore> QueryService::current() const {
  std::lock_guard lock(state_mutex_);
  return store_;
}

std::optional<HttpReply> QueryService::not_ready() const {
  std::lock_guard lock(state_mutex_);
  if (store_) return std::nullopt;
  if (loading_done_ && !load_error_.empty()) {
    return error_reply(503, "store failed to load: " + load_error_);
  }
  return error_reply(503, "store loading");
}

HttpReply QueryService::store_summary() const {
  if (auto r = not_ready()) return *r;
  const auto store = current();
  const auto counts = store->class_counts();
  json body;
  body["v"] = 1;
  body["n_records"] = store->size();
  body["dim"] = store->dim();
  body["class_counts"] = {{"pos", counts.positive}, {"neg", counts.negative}};
  json sources = json::object();
  for (auto s : {Source::MimicCxr, Source::CheXpert, Source::ChestXray14, Source::Synthetic}) {
    std::size_t n = 0;
    for (const auto& m : store->metas()) n += m.source == s ? 1 : 0;
    if (n > 0) sources[std::string(to_string(s))] = n;
  }
  body["sources"] = std::move(sources);
  return json_reply(200, body);
}

HttpReply QueryService::query(std::string_view body_text) const {
  if (auto r = not_ready()) return *r;
  const auto started = std::chrono::steady_clock::now();
  const auto store = current();

  json request;
  try {
    request = json::parse(body_text);
  } catch (const std::exception&) {
    return error_reply(400, "request body is not valid JSON");
  }
  if (!request.is_object()) return error_reply(400, "request body must be a JSON object");
  if (request.contains("v") && request["v"] != 1) {
    return error_reply(400, "unsupported schema version");
  }

  const int sources = static_cast<int>(request.contains("vector")) +
                      static_cast<int>(request.contains("record_id")) +
                      static_cast<int>(request.contains("image_ref"));
  if (sources != 1) {
    return error_reply(400, "exactly one of vector, record_id, image_ref is required");
  }

  std::size_t k = options_.default_k;
  if (request.contains("k")) {
    const auto& jk = request["k"];
    if (!jk.is_number_integer() || jk.get<long long>() < 1) {
      return error_reply(422, "k must be a positive integer");
    }
    k = jk.get<std::size_t>();
  }
  bool exclude_self = false;
  if (request.contains("exclude_self")) {
    if (!request["exclude_self"].is_boolean()) {
      return error_reply(400, "exclude_self must be a boolean");
    }
    exclude_self = request["exclude_self"].get<bool>();
  }

  std::vector<float> owned;
  std::span<const float> query_vector;
  std::optional<std::size_t> self_row;

  if (request.contains("vector")) {
    const auto& jv = request["vector"];
    if (!jv.is_array()) return error_reply(400, "vector must be an array of numbers");
    owned.reserve(jv.size());
    for (const auto& v : jv) {
      if (!v.is_number()) return error_reply(400, "vector must be an array of numbers");
      const double d = v.get<double>();
      const auto f = static_cast<float>(d);
      if (!std::isfinite(f)) return error_reply(400, "vector entries must be finite");
      owned.push_back(f);
    }
    query_vector = owned;
  } else if (request.contains("record_id")) {
    if (!request["record_id"].is_string()) return error_reply(400, "record_id must be a string");
    const auto row = store->find(request["record_id"].get<std::string>());
    if (!row) return error_reply(404, "unknown record_id");
    self_row = *row;
    query_vector = store->row(*row);
  } else {
    if (!request["image_ref"].is_string()) return error_reply(400, "image_ref must be a string");
    const auto ref = request["image_ref"].get<std::string>();
    std::string bytes;
    if (options_.image_dir) {
      if (auto path = contained_path(*options_.image_dir, ref)) {
        if (auto content = read_file(*path)) bytes = std::move(*content);
      }
    }
    try {
      owned = extract_(ref, bytes);
    } catch (const ExtractorError& e) {
      return error_reply(502, e.what());
    }
    for (float f : owned) {
      if (!std::isfinite(f)) return error_reply(502, "extractor returned non-finite values");
    }
    query_vector = owned;
  }

  if (query_vector.size() != store->dim()) {
    return error_reply(422, "dimension mismatch: expected " + std::to_string(store->dim()) +
                                ", got " + std::to_string(query_vector.size()));
  }

  SearchParams params;
  params.k = k;
  params.threads = options_.threads;
  if (exclude_self && self_row) {
    auto filter = std::make_shared<RowFilter>(store->size());
    filter->add(*self_row);
    params.exclude = std::move(filter);
  }
  if (k > pool_size(*store, params)) {
    return error_reply(422, "k exceeds pool");
  }

  std::vector<Neighbor> hits;
  try {
    hits = top_k_search(*store, query_vector, params);
  } catch (const Error& e) {
    return error_reply(422, e.what());
  }
  const auto vote = majority_vote(hits);

  json response;
  response["v"] = 1;
  auto neighbors = json::array();
  for (std::size_t r = 0; r < hits.size(); ++r) {
    const auto& meta = store->meta(hits[r].index);
    json n;
    n["rank"] = r + 1;
    n["record_id"] = meta.record_id;
    n["dist2"] = hits[r].dist2;
    n["label"] = is_positive(meta.label) ? 1 : 0;
    n["source"] = to_string(meta.source);
    neighbors.push_back(std::move(n));
  }
  response["neighbors"] = std::move(neighbors);
  response["vote"] = {{"score", vote.score},
                      {"decision", vote.decision ? "positive" : "negative"},
                      {"k", vote.k},
                      {"positives", vote.positives}};
  response["timing_ms"] =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return json_reply(200, response);
}

std::optional<std::filesystem::path> QueryService::image_path(std::string_view record_id) const {
  if (!options_.image_dir) return std::nullopt;
  for (const char* ext : {".png", ".jpg", ".jpeg", ".dcm"}) {
    auto candidate = contained_path(*options_.image_dir, std::string(record_id) + ext);
    if (candidate && std::filesystem::is_regular_file(*candidate)) return candidate;
  }
  return std::nullopt;
}

HttpReply QueryService::record(std::string_view record_id) const {
  if (auto r = not_ready()) return *r;
  const auto store = current();
  const auto row = store->find(record_id);
  if (!row) return error_reply(404, "unknown record_id");
  json body = meta_json(store->meta(*row), *row);
  body["has_image"] = image_path(record_id).has_value();
  json out;
  out["v"] = 1;
  for (auto& [key, value] : body.items()) out[key] = value;
  return json_reply(200, out);
}

HttpReply QueryService::record_image(std::string_view record_id) const {
  if (auto r = not_ready()) return *r;
  const auto store = current();
  const auto row = store->find(record_id);
  if (!row) return error_reply(404, "unknown record_id");
  if (auto path = image_path(record_id)) {
    if (auto bytes = read_file(*path)) {
      return {200, std::move(*bytes), std::string(content_type_for(*path))};
    }
  }
  json body;
  body["v"] = 1;
  body["error"] = "no image for record";
  body["record"] = meta_json(store->meta(*row), *row);
  return json_reply(404, body);
}

void QueryService::log_request(const std::string& method, const std::string& path, int status,
                               double elapsed_ms) const {
  if (log_ == nullptr) return;
  json line;
  line["method"] = method;
  line["path"] = path;
  line["status"] = status;
  line["ms"] = elapsed_ms;
  std::lock_guard lock(log_mutex_);
  *log_ << line.dump() << '\n' << std::flush;
}

void QueryService::mount(httplib::Server& server) {
  auto send = [this](const httplib::Request& req, httplib::Response& res, HttpReply reply,
                     std::chrono::steady_clock::time_point started) {
    res.status = reply.status;
    res.set_content(std::move(reply.body), reply.content_type);
    log_request(req.method, req.path, reply.status,
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                          started)
                    .count());
  };

  server.Get("/v1/store", [this, send](const httplib::Request& req, httplib::Response& res) {
    const auto t0 = std::chrono::steady_clock::now();
    send(req, res, store_summary(), t0);
  });
  server.Post("/v1/query", [this, send](const httplib::Request& req, httplib::Response& res) {
    const auto t0 = std::chrono::steady_clock::now();
    send(req, res, query(req.body), t0);
  });
  server.Get(R"(/v1/record/(.+)/image)",
             [this, send](const httplib::Request& req, httplib::Response& res) {
               const auto t0 = std::chrono::steady_clock::now();
               send(req, res, record_image(req.matches[1].str()), t0);
             });
  server.Get(R"(/v1/record/(.+))", [this, send](const httplib::Request& req,
                                                httplib::Response& res) {
    const auto t0 = std::chrono::steady_clock::now();
    send(req, res, record(req.matches[1].str()), t0);
  });
}

}  // namespace cxr
