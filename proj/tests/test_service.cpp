#include <atomic>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"

#include "cxr/knn.hpp"
#include "cxr/service.hpp"
#include "cxr/vote.hpp"
#include "test_util.hpp"

using namespace cxr;
using cxr::testing::make_record;
using cxr::testing::random_records;
using cxr::testing::TempDir;
using nlohmann::json;

namespace {

std::vector<Record> fixture_records() {
  return {make_record("p0", Label::Negative, {0, 0}, Source::MimicCxr),
          make_record("p1", Label::Positive, {1, 0}, Source::CheXpert),
          make_record("p2", Label::Positive, {0, 2}, Source::CheXpert)};
}

json parse(const HttpReply& r) { return json::parse(r.body); }

// Runs an httplib server on an ephemeral loopback port for the scope.
class LiveServer {
 public:
  LiveServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LiveServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int port() const { return port_; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_CASE("endpoints answer 503 until the store is loaded") {
  QueryService svc({});
  CHECK_FALSE(svc.ready());
  CHECK(svc.store_summary().status == 503);
  CHECK(svc.query(R"({"vector":[0,0]})").status == 503);
  CHECK(svc.record("p0").status == 503);
  CHECK(svc.record_image("p0").status == 503);
  svc.attach(FeatureStore::in_memory(fixture_records()));
  CHECK(svc.ready());
  CHECK(svc.store_summary().status == 200);
}

TEST_CASE("background load of a store file, and a failing load") {
  TempDir dir;
  write_store(fixture_records(), dir / "s.cxrf");
  ServiceOptions options;
  options.store_path = dir / "s.cxrf";
  QueryService svc(options);
  svc.load_async();
  svc.wait_loaded();
  CHECK(svc.ready());

  options.store_path = dir / "missing.cxrf";
  QueryService broken(options);
  broken.load_async();
  broken.wait_loaded();
  const auto r = broken.store_summary();
  CHECK(r.status == 503);
  CHECK(parse(r)["error"].get<std::string>().find("failed to load") != std::string::npos);
}

TEST_CASE("store summary") {
  QueryService svc({});
  svc.attach(FeatureStore::in_memory(fixture_records()));
  const auto j = parse(svc.store_summary());
  CHECK(j["v"] == 1);
  CHECK(j["n_records"] == 3);
  CHECK(j["dim"] == 2);
  CHECK(j["class_counts"]["pos"] == 2);
  CHECK(j["class_counts"]["neg"] == 1);
  CHECK(j["sources"]["chexpert"] == 2);
  CHECK(j["sources"]["mimic-cxr"] == 1);
}

TEST_CASE("vector queries match the library search and vote") {
  const auto records = random_records(400, 6, 51);
  const auto store = FeatureStore::in_memory(records);
  QueryService svc({});
  svc.attach(FeatureStore::in_memory(records));
  for (const auto& q : random_records(20, 6, 52)) {
    json req;
    req["v"] = 1;
    req["vector"] = q.vector;
    req["k"] = 7;
    const auto reply = svc.query(req.dump());
    REQUIRE(reply.status == 200);
    const auto j = json::parse(reply.body);
    SearchParams params;
    params.k = 7;
    const auto hits = top_k_search(store, q.vector, params);
    const auto vote = majority_vote(hits);
    REQUIRE(j["neighbors"].size() == 7);
    for (std::size_t r = 0; r < 7; ++r) {
      const auto& n = j["neighbors"][r];
      CHECK(n["rank"] == r + 1);
      CHECK(n["record_id"] == store.meta(hits[r].index).record_id);
      CHECK(n["dist2"].get<float>() == hits[r].dist2);
      CHECK(n["label"] == (is_positive(hits[r].label) ? 1 : 0));
    }
    CHECK(j["vote"]["score"].get<double>() == vote.score);
    CHECK(j["vote"]["positives"] == vote.positives);
    CHECK(j["vote"]["k"] == 7);
    CHECK(j["vote"]["decision"] == (vote.decision ? "positive" : "negative"));
    CHECK(j["timing_ms"].get<double>() >= 0.0);
  }
}

TEST_CASE("record_id queries and self exclusion") {
  QueryService svc({});
  svc.attach(FeatureStore::in_memory(fixture_records()));
  auto j = parse(svc.query(R"({"record_id":"p1","k":1})"));
  CHECK(j["neighbors"][0]["record_id"] == "p1");
  CHECK(j["neighbors"][0]["dist2"] == 0.0);
  j = parse(svc.query(R"({"record_id":"p1","k":1,"exclude_self":true})"));
  CHECK(j["neighbors"][0]["record_id"] == "p0");
  CHECK(j["vote"]["decision"] == "negative");
  // Self exclusion shrinks the pool for record queries only.
  CHECK(svc.query(R"({"record_id":"p1","k":3,"exclude_self":true})").status == 422);
  CHECK(svc.query(R"({"vector":[1,0],"k":3,"exclude_self":true})").status == 200);
}

TEST_CASE("identical requests replay identically apart from timing") {
  QueryService svc({});
  svc.attach(FeatureStore::in_memory(random_records(300, 5, 60)));
  const std::string req = R"({"vector":[0.1,0.2,-0.3,0.4,0.0],"k":11})";
  auto a = parse(svc.query(req));
  auto b = parse(svc.query(req));
  a.erase("timing_ms");
  b.erase("timing_ms");
  CHECK(a == b);
}

TEST_CASE("query validation status codes") {
  QueryService svc({});
  svc.attach(FeatureStore::in_memory(fixture_records()));
  CHECK(svc.query("{not json").status == 400);
  CHECK(svc.query("[1,2]").status == 400);
  CHECK(svc.query("{}").status == 400);
  CHECK(svc.query(R"({"vector":[0,0],"record_id":"p0"})").status == 400);
  CHECK(svc.query(R"({"vector":[0,"a"]})").status == 400);
  CHECK(svc.query(R"({"vector":[0,1e300]})").status == 400);
  CHECK(svc.query(R"({"vector":[0,0],"exclude_self":"yes"})").status == 400);
  CHECK(svc.query(R"({"v":2,"vector":[0,0]})").status == 400);
  CHECK(svc.query(R"({"vector":[0,0,0],"k":1})").status == 422);
  CHECK(svc.query(R"({"vector":[0,0],"k":0})").status == 422);
  CHECK(svc.query(R"({"vector":[0,0],"k":-2})").status == 422);
  CHECK(svc.query(R"({"vector":[0,0],"k":1.5})").status == 422);
  const auto big = svc.query(R"({"vector":[0,0],"k":4})");
  CHECK(big.status == 422);
  CHECK(parse(big)["error"] == "k exceeds pool");
  CHECK(svc.query(R"({"record_id":"nope"})").status == 404);
  CHECK(svc.query(R"({"vector":[0,0],"k":3})").status == 200);
}

TEST_CASE("image_ref queries go through the extractor") {
  TempDir dir;
  std::ofstream(dir / "scan1.png", std::ios::binary) << "PNGDATA";
  ServiceOptions options;
  options.image_dir = dir.path();
  QueryService svc(options);
  svc.attach(FeatureStore::in_memory(fixture_records()));

  std::string seen_ref, seen_bytes;
  svc.set_extractor([&](std::string_view ref, const std::string& bytes) {
    seen_ref = std::string(ref);
    seen_bytes = bytes;
    return std::vector<float>{0.9f, 0.1f};
  });
  auto reply = svc.query(R"({"image_ref":"scan1.png","k":1})");
  REQUIRE(reply.status == 200);
  CHECK(parse(reply)["neighbors"][0]["record_id"] == "p1");
  CHECK(seen_ref == "scan1.png");
  CHECK(seen_bytes == "PNGDATA");

  // Unknown files and escaping paths are passed through as bare references.
  CHECK(svc.query(R"({"image_ref":"../etc/passwd","k":1})").status == 200);
  CHECK(seen_bytes.empty());

  svc.set_extractor([](std::string_view, const std::string&) -> std::vector<float> {
    throw ExtractorError("down");
  });
  CHECK(svc.query(R"({"image_ref":"scan1.png"})").status == 502);
  svc.set_extractor(
      [](std::string_view, const std::string&) { return std::vector<float>{1.0f, 2.0f, 3.0f}; });
  CHECK(svc.query(R"({"image_ref":"scan1.png","k":1})").status == 422);
}

TEST_CASE("without an extractor URL image_ref queries fail with 502") {
  QueryService svc({});
  svc.attach(FeatureStore::in_memory(fixture_records()));
  CHECK(svc.query(R"({"image_ref":"x.png"})").status == 502);
}

TEST_CASE("http_extractor speaks multipart to a live extractor") {
  LiveServer extractor;
  std::string got_ref, got_image;
  extractor.server().Post("/extract", [&](const httplib::Request& req, httplib::Response& res) {
    got_ref = req.get_file_value("image_ref").content;
    if (req.has_file("image")) got_image = req.get_file_value("image").content;
    res.set_content(R"({"vector":[0.5,1.5]})", "application/json");
  });
  extractor.server().Post("/broken/extract", [](const httplib::Request&, httplib::Response& res) {
    res.status = 500;
  });

  auto fn = http_extractor(extractor.url());
  CHECK(fn("a.png", "BYTES") == std::vector<float>{0.5f, 1.5f});
  CHECK(got_ref == "a.png");
  CHECK(got_image == "BYTES");
  CHECK_THROWS_AS(http_extractor(extractor.url() + "/broken")("a.png", ""), ExtractorError);
  CHECK_THROWS_AS(http_extractor("")("a.png", ""), ExtractorError);
  CHECK_THROWS_AS(http_extractor("http://127.0.0.1:1")("a.png", ""), ExtractorError);
}

TEST_CASE("record metadata and images") {
  TempDir dir;
  // Smallest valid PNG: 1x1 grey pixel.
  const unsigned char png[] = {
      0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48,
      0x44, 0x52, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x00, 0x00, 0x00,
      0x00, 0x3a, 0x7e, 0x9b, 0x55, 0x00, 0x00, 0x00, 0x0a, 0x49, 0x44, 0x41, 0x54, 0x78,
      0x9c, 0x63, 0x68, 0x00, 0x00, 0x00, 0x82, 0x00, 0x81, 0x77, 0xcd, 0x72, 0xb6, 0x00,
      0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82};
  const std::string png_bytes(reinterpret_cast<const char*>(png), sizeof(png));
  std::ofstream(dir / "p1.png", std::ios::binary) << png_bytes;
  ServiceOptions options;
  options.image_dir = dir.path();
  QueryService svc(options);
  svc.attach(FeatureStore::in_memory(fixture_records()));

  auto j = parse(svc.record("p1"));
  CHECK(j["record_id"] == "p1");
  CHECK(j["label"] == 1);
  CHECK(j["source"] == "chexpert");
  CHECK(j["has_image"] == true);
  CHECK(parse(svc.record("p0"))["has_image"] == false);
  CHECK(svc.record("zzz").status == 404);

  const auto img = svc.record_image("p1");
  CHECK(img.status == 200);
  CHECK(img.content_type == "image/png");
  CHECK(img.body == png_bytes);
  const auto missing = svc.record_image("p0");
  CHECK(missing.status == 404);
  CHECK(parse(missing)["record"]["record_id"] == "p0");
  CHECK(svc.record_image("zzz").status == 404);
}

TEST_CASE("HTTP round trip with request logging") {
  TempDir dir;
  std::ofstream(dir / "p1.png", std::ios::binary) << "img";
  ServiceOptions options;
  options.image_dir = dir.path();
  QueryService svc(options);
  std::ostringstream log;
  svc.set_request_log(&log);
  LiveServer live;
  svc.mount(live.server());
  httplib::Client client(live.url());

  auto res = client.Get("/v1/store");
  REQUIRE(res);
  CHECK(res->status == 503);

  svc.attach(FeatureStore::in_memory(fixture_records()));
  res = client.Get("/v1/store");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["n_records"] == 3);

  res = client.Post("/v1/query", R"({"vector":[0.6,0],"k":2})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  const auto j = json::parse(res->body);
  CHECK(j["neighbors"][0]["record_id"] == "p1");
  CHECK(j["neighbors"][1]["record_id"] == "p0");
  CHECK(j["vote"]["score"] == 0.5);

  res = client.Post("/v1/query", "{", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);

  res = client.Get("/v1/record/p1");
  REQUIRE(res);
  CHECK(json::parse(res->body)["row"] == 1);
  res = client.Get("/v1/record/p1/image");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->body == "img");

  std::istringstream lines(log.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto entry = json::parse(line);
    CHECK(entry.contains("method"));
    CHECK(entry.contains("status"));
    CHECK(entry.contains("ms"));
    ++n;
  }
  CHECK(n == 6);
}
