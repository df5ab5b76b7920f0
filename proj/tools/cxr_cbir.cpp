// cxr-cbir: build feature stores, run k-NN image search, cross-validate
// image search against the Random Forest baseline, and serve queries.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"

#include "cxr/error.hpp"
#include "cxr/experiment.hpp"
#include "cxr/feature_store.hpp"
#include "cxr/forest.hpp"
#include "cxr/knn.hpp"
#include "cxr/metrics.hpp"
#include "cxr/service.hpp"
#include "cxr/synthetic.hpp"
#include "cxr/vote.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitDomain = 2;

// ---------------------------------------------------------------------------
// Input parsing helpers

std::vector<std::string> split_tokens(const std::string& line) {
  std::vector<std::string> out;
  std::string token;
  for (char c : line) {
    if (c == ',' || c == ';' || std::isspace(static_cast<unsigned char>(c))) {
      if (!token.empty()) out.push_back(std::move(token));
      token.clear();
    } else {
      token += c;
    }
  }
  if (!token.empty()) out.push_back(std::move(token));
  return out;
}

double parse_number(const std::string& token, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(token, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != token.size() || !std::isfinite(v)) {
    throw cxr::Error(where + ": cannot parse '" + token + "' as a number");
  }
  return v;
}

std::vector<float> parse_vector_text(const std::string& text, const std::string& where) {
  std::vector<float> v;
  for (const auto& t : split_tokens(text)) v.push_back(static_cast<float>(parse_number(t, where)));
  return v;
}

/// Numbers from a file. With `column`, the first non-comment line is a CSV
/// header and only that column is read; otherwise every token must be numeric.
std::vector<double> read_sample(const fs::path& path, const std::string& column) {
  std::ifstream in(path);
  if (!in) throw cxr::Error("cannot open " + path.string());
  std::vector<double> values;
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::size_t> col_index;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (!column.empty()) {
      auto fields = cxr::split_csv_line(line);
      if (!col_index) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
          if (fields[i] == column) col_index = i;
        }
        if (!col_index) throw cxr::Error(where + ": no column named '" + column + "'");
        continue;
      }
      if (*col_index >= fields.size()) throw cxr::Error(where + ": missing column");
      values.push_back(parse_number(fields[*col_index], where));
    } else {
      for (const auto& t : split_tokens(line)) values.push_back(parse_number(t, where));
    }
  }
  return values;
}

/// Build manifest: CSV with a header naming at least `record_id` and `label`;
/// `source` is optional (defaults to synthetic), `row` is ignored.
std::vector<cxr::RecordMeta> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw cxr::Error("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::size_t> id_col, label_col, source_col;
  bool have_header = false;
  std::vector<cxr::RecordMeta> rows;
  std::unordered_set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    std::vector<std::string> f;
    try {
      f = cxr::split_csv_line(line);
    } catch (const cxr::Error& e) {
      throw cxr::Error(where + ": " + e.what());
    }
    if (!have_header) {
      for (std::size_t i = 0; i < f.size(); ++i) {
        if (f[i] == "record_id") id_col = i;
        if (f[i] == "label") label_col = i;
        if (f[i] == "source") source_col = i;
      }
      if (!id_col || !label_col) {
        throw cxr::Error(where + ": header must name record_id and label columns");
      }
      have_header = true;
      continue;
    }
    const std::size_t need = std::max({*id_col, *label_col, source_col.value_or(0)}) + 1;
    if (f.size() < need) throw cxr::Error(where + ": too few fields");
    cxr::RecordMeta m;
    m.record_id = f[*id_col];
    if (m.record_id.empty()) throw cxr::Error(where + ": empty record_id");
    if (!seen.insert(m.record_id).second) {
      throw cxr::Error(where + ": duplicate record_id '" + m.record_id + "'");
    }
    if (f[*label_col] == "1") {
      m.label = cxr::Label::Positive;
    } else if (f[*label_col] == "0") {
      m.label = cxr::Label::Negative;
    } else {
      throw cxr::Error(where + ": label must be 0 or 1");
    }
    m.source = source_col ? cxr::parse_source(f[*source_col]) : cxr::Source::Synthetic;
    rows.push_back(std::move(m));
  }
  if (!have_header) throw cxr::Error(path.string() + ": empty manifest");
  return rows;
}

std::vector<float> read_raw_floats(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw cxr::Error("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % sizeof(float) != 0) {
    throw cxr::Error(path.string() + ": size is not a multiple of 4 bytes");
  }
  std::vector<float> v(bytes.size() / sizeof(float));
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

std::string fmt_double(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string decision_text(bool positive) { return positive ? "positive" : "negative"; }

std::string read_all(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw cxr::Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Subcommands

struct BuildArgs {
  std::string meta;
  std::string vectors;
  std::string out;
  std::size_t dim = 0;
  std::string comment;
};

int cmd_build(const BuildArgs& a) {
  const auto manifest = read_manifest(a.meta);
  if (manifest.empty()) throw cxr::Error("empty store");
  const fs::path vin(a.vectors);

  std::unique_ptr<cxr::StoreWriter> writer;
  auto append = [&](const cxr::RecordMeta& m, std::span<const float> v) {
    if (!writer) writer = std::make_unique<cxr::StoreWriter>(a.out, v.size(), a.comment);
    writer->append(m, v);
  };

  if (fs::is_directory(vin)) {
    for (const auto& m : manifest) {
      const auto raw = vin / (m.record_id + ".f32");
      const auto txt = vin / (m.record_id + ".txt");
      if (fs::exists(raw)) {
        append(m, read_raw_floats(raw));
      } else if (fs::exists(txt)) {
        append(m, parse_vector_text(read_all(txt), txt.string()));
      } else {
        throw cxr::Error("no vector file for '" + m.record_id + "' in " + vin.string());
      }
    }
  } else if (vin.extension() == ".f32" || vin.extension() == ".bin") {
    if (a.dim == 0) throw cxr::Error("--dim is required for raw float32 vector files");
    const auto all = read_raw_floats(vin);
    if (all.size() % a.dim != 0 || all.size() / a.dim != manifest.size()) {
      throw cxr::Error("count mismatch: " + std::to_string(manifest.size()) +
                       " manifest rows vs " + std::to_string(all.size() / a.dim) + " vectors");
    }
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      append(manifest[i], std::span<const float>(all).subspan(i * a.dim, a.dim));
    }
  } else {
    std::ifstream in(vin);
    if (!in) throw cxr::Error("cannot open " + vin.string());
    std::string line;
    std::size_t i = 0, line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      if (i >= manifest.size()) {
        throw cxr::Error("count mismatch: more vectors than manifest rows (" +
                         std::to_string(manifest.size()) + ")");
      }
      append(manifest[i], parse_vector_text(line, vin.string() + ":" + std::to_string(line_no)));
      ++i;
    }
    if (i != manifest.size()) {
      throw cxr::Error("count mismatch: " + std::to_string(manifest.size()) +
                       " manifest rows vs " + std::to_string(i) + " vectors");
    }
  }
  writer->finish();

  std::size_t pos = 0;
  for (const auto& m : manifest) pos += cxr::is_positive(m.label) ? 1 : 0;
  std::cout << "n_records " << writer->count() << "\n"
            << "dim " << writer->dim() << "\n"
            << "positive " << pos << "\n"
            << "negative " << manifest.size() - pos << "\n"
            << "total " << manifest.size() << "\n";
  return 0;
}

struct QueryArgs {
  std::string store;
  std::string vector;
  std::string vector_file;
  std::string record_id;
  std::size_t k = 11;
  bool exclude_self = false;
  bool as_json = false;
  unsigned threads = 0;
};

int cmd_query(const QueryArgs& a) {
  const auto store = cxr::FeatureStore::open(a.store);
  const int sources =
      !a.vector.empty() + !a.vector_file.empty() + !a.record_id.empty();
  if (sources != 1) throw CLI::ValidationError("exactly one of --vector, --vector-file, --record-id");

  std::vector<float> owned;
  std::span<const float> query;
  cxr::SearchParams params;
  params.k = a.k;
  params.threads = a.threads;
  if (!a.record_id.empty()) {
    const auto row = store.find(a.record_id);
    if (!row) throw cxr::Error("unknown record_id '" + a.record_id + "'");
    query = store.row(*row);
    if (a.exclude_self) {
      auto filter = std::make_shared<cxr::RowFilter>(store.size());
      filter->add(*row);
      params.exclude = std::move(filter);
    }
  } else {
    const auto text = a.vector.empty() ? read_all(a.vector_file) : a.vector;
    const auto raw_file = !a.vector_file.empty() && fs::path(a.vector_file).extension() == ".f32";
    owned = raw_file ? read_raw_floats(a.vector_file) : parse_vector_text(text, "query vector");
    query = owned;
  }

  const auto hits = cxr::top_k_search(store, query, params);
  const auto vote = cxr::majority_vote(hits);

  if (a.as_json) {
    json out;
    out["v"] = 1;
    out["config"] = {{"store", a.store}, {"k", a.k}, {"exclude_self", a.exclude_self}};
    auto neighbors = json::array();
    for (std::size_t r = 0; r < hits.size(); ++r) {
      const auto& m = store.meta(hits[r].index);
      neighbors.push_back({{"rank", r + 1},
                           {"record_id", m.record_id},
                           {"dist2", hits[r].dist2},
                           {"label", cxr::is_positive(m.label) ? 1 : 0},
                           {"source", cxr::to_string(m.source)}});
    }
    out["neighbors"] = std::move(neighbors);
    out["vote"] = {{"score", vote.score},
                   {"decision", decision_text(vote.decision)},
                   {"k", vote.k},
                   {"positives", vote.positives}};
    std::cout << out.dump(2) << "\n";
    return 0;
  }

  std::cout << std::left << std::setw(6) << "rank" << std::setw(28) << "record_id"
            << std::setw(16) << "dist2" << "label\n";
  for (std::size_t r = 0; r < hits.size(); ++r) {
    const auto& m = store.meta(hits[r].index);
    std::cout << std::left << std::setw(6) << r + 1 << std::setw(28) << m.record_id
              << std::setw(16) << fmt_double(hits[r].dist2, 8)
              << (cxr::is_positive(m.label) ? 1 : 0) << "\n";
  }
  std::cout << "score " << vote.positives << "/" << vote.k << " = " << fmt_double(vote.score, 6)
            << "\ndecision " << decision_text(vote.decision) << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string store;
  std::string method = "image_search";
  std::size_t k = 11;
  std::size_t trees = 11;
  std::size_t folds = 10;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string dataset_id;
  bool as_json = false;
  bool stratify = false;
  bool exclude_self = true;
  unsigned threads = 0;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const auto store = cxr::FeatureStore::open(a.store);
  cxr::ExperimentConfig config;
  config.method = cxr::parse_method(a.method);
  config.param = config.method == cxr::Method::ImageSearch ? a.k : a.trees;
  config.folds = a.folds;
  config.seed = a.seed;
  config.stratified = a.stratify;
  config.exclude_self = a.exclude_self;
  config.threads = a.threads;
  config.dataset_id = a.dataset_id.empty() ? fs::path(a.store).stem().string() : a.dataset_id;

  const auto report = cxr::run_experiment(store, config);
  const auto doc = cxr::to_json(report);

  if (!a.out_dir.empty()) {
    fs::create_directories(a.out_dir);
    const auto tag = std::string(cxr::to_string(config.method)) +
                     (config.method == cxr::Method::ImageSearch ? "_k" : "_t") +
                     std::to_string(config.param);
    {
      std::ofstream out(fs::path(a.out_dir) / ("report_" + tag + ".json"), std::ios::trunc);
      if (!out) throw cxr::Error("cannot write report in " + a.out_dir);
      out << doc.dump(2) << "\n";
    }
    for (const auto& fold : report.per_fold) {
      std::ostringstream name;
      name << "roc_" << tag << "_fold" << std::setw(2) << std::setfill('0') << fold.fold_id
           << ".csv";
      cxr::write_roc_csv(fs::path(a.out_dir) / name.str(), fold.roc);
    }
  }

  if (a.as_json) {
    std::cout << doc.dump(2) << "\n";
  } else {
    for (const auto& fold : report.per_fold) {
      std::cout << "fold " << std::setw(2) << fold.fold_id << "  auc "
                << std::fixed << std::setprecision(5) << fold.auc << "\n";
    }
    std::cout << "mean_auc " << std::fixed << std::setprecision(5) << report.mean_auc << "\n";
  }
  return 0;
}

struct TTestArgs {
  std::string a, b, a_col, b_col;
  bool as_json = false;
};

int cmd_ttest(const TTestArgs& args) {
  const auto a = read_sample(args.a, args.a_col);
  const auto b = read_sample(args.b, args.b_col);
  const auto r = cxr::welch_ttest(a, b);
  if (args.as_json) {
    json out;
    out["t"] = r.t_stat;
    out["dof"] = r.dof;
    out["p"] = r.p_value;
    out["mean_a"] = cxr::mean(a);
    out["mean_b"] = cxr::mean(b);
    std::cout << out.dump(2) << "\n";
  } else {
    std::cout << "t " << fmt_double(r.t_stat, 10) << "\n"
              << "dof " << fmt_double(r.dof, 10) << "\n"
              << "p " << fmt_double(r.p_value, 6) << "\n";
  }
  return 0;
}

struct RfTrainArgs {
  std::string store, out;
  std::size_t trees = 11;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

int cmd_rf_train(const RfTrainArgs& a) {
  const auto store = cxr::FeatureStore::open(a.store);
  cxr::ForestParams params;
  params.trees = a.trees;
  params.seed = a.seed;
  params.threads = a.threads;
  const auto labels = store.labels();
  const auto model = cxr::train_forest(cxr::FeatureMatrix::of(store), labels, params);
  cxr::save_forest(model, a.out);
  std::size_t nodes = 0;
  for (const auto& t : model.trees) nodes += t.nodes().size();
  std::cout << "trees " << model.trees.size() << "\nnodes " << nodes << "\nseed " << model.seed
            << "\n";
  return 0;
}

struct RfPredictArgs {
  std::string model, store, record_id, vector;
  bool as_json = false;
};

int cmd_rf_predict(const RfPredictArgs& a) {
  const auto model = cxr::load_forest(a.model);
  std::vector<float> owned;
  std::span<const float> x;
  std::optional<cxr::FeatureStore> store;
  if (!a.record_id.empty()) {
    if (a.store.empty()) throw CLI::ValidationError("--record-id needs --store");
    store.emplace(cxr::FeatureStore::open(a.store));
    const auto row = store->find(a.record_id);
    if (!row) throw cxr::Error("unknown record_id '" + a.record_id + "'");
    x = store->row(*row);
  } else if (!a.vector.empty()) {
    owned = parse_vector_text(a.vector, "vector");
    x = owned;
  } else {
    throw CLI::ValidationError("one of --record-id or --vector is required");
  }
  const double p = cxr::predict_proba(model, x);
  if (a.as_json) {
    std::cout << json{{"proba", p}, {"decision", decision_text(p > 0.5)}}.dump(2) << "\n";
  } else {
    std::cout << "proba " << fmt_double(p, 6) << "\n";
  }
  return 0;
}

struct ServeArgs {
  std::string store, image_dir, host = "0.0.0.0";
  int port = 8080;
  std::size_t k = 11;
  unsigned threads = 0;
};

httplib::Server* g_server = nullptr;

int cmd_serve(const ServeArgs& a) {
  cxr::ServiceOptions options;
  options.store_path = a.store;
  if (!a.image_dir.empty()) options.image_dir = a.image_dir;
  if (const char* url = std::getenv("EXTRACTOR_URL")) options.extractor_url = url;
  options.threads = a.threads;
  options.default_k = a.k;

  cxr::QueryService service(options);
  service.set_request_log(&std::cerr);
  httplib::Server server;
  service.mount(server);
  service.load_async();

  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cerr << "listening on " << a.host << ":" << a.port << "\n";
  if (!server.listen(a.host, a.port)) {
    throw cxr::Error("cannot listen on " + a.host + ":" + std::to_string(a.port));
  }
  g_server = nullptr;
  return 0;
}

struct SynthArgs {
  std::string out;
  std::size_t n = 1000;
  std::size_t dim = 32;
  double separation = 4.0;
  double positive_fraction = 0.5;
  std::uint64_t seed = 0;
  bool shuffle_labels = false;
  bool random = false;
};

int cmd_synth(const SynthArgs& a) {
  if (a.random) {
    cxr::synthetic::write_random_store(a.out, a.n, a.dim, a.seed, a.positive_fraction);
  } else {
    cxr::synthetic::BlobSpec spec;
    spec.n = a.n;
    spec.dim = a.dim;
    spec.separation = a.separation;
    spec.positive_fraction = a.positive_fraction;
    spec.seed = a.seed;
    auto records = cxr::synthetic::gaussian_blobs(spec);
    if (a.shuffle_labels) {
      records = cxr::synthetic::shuffle_labels(std::move(records), a.seed + 1);
    }
    cxr::write_store(records, a.out);
  }
  const auto store = cxr::FeatureStore::open(a.out);
  const auto counts = store.class_counts();
  std::cout << "n_records " << store.size() << "\ndim " << store.dim() << "\npositive "
            << counts.positive << "\nnegative " << counts.negative << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Content-based chest X-ray retrieval: k-NN search, voting and evaluation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value configuration file (flags take precedence)");

  BuildArgs build;
  auto* build_cmd = app.add_subcommand("build", "Build a .cxrf store from a manifest and vectors");
  build_cmd->add_option("--meta", build.meta, "Manifest CSV (record_id,label[,source])")->required();
  build_cmd->add_option("--vectors", build.vectors,
                        "Text file (one vector per line), raw .f32 file, or directory")
      ->required();
  build_cmd->add_option("--out", build.out, "Output .cxrf path")->required();
  build_cmd->add_option("--dim", build.dim, "Dimension for raw .f32 input");
  build_cmd->add_option("--comment", build.comment, "Comment recorded in the metadata sidecar");

  QueryArgs query;
  auto* query_cmd = app.add_subcommand("query", "Top-K search and majority vote for one query");
  query_cmd->add_option("--store", query.store)->required();
  query_cmd->add_option("--vector", query.vector, "Inline comma-separated vector");
  query_cmd->add_option("--vector-file", query.vector_file, "Text or raw .f32 vector file");
  query_cmd->add_option("--record-id", query.record_id, "Use a stored record as the query");
  query_cmd->add_option("--k", query.k)->default_val(11)->check(CLI::PositiveNumber);
  query_cmd->add_flag("--exclude-self", query.exclude_self,
                      "Drop the query record itself from the pool");
  query_cmd->add_flag("--json", query.as_json);
  query_cmd->add_option("--threads", query.threads);

  EvaluateArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "k-fold cross-validation with ROC/AUC report");
  eval_cmd->add_option("--store", eval.store)->required();
  eval_cmd->add_option("--method", eval.method, "image_search | rf")->default_val("image_search");
  eval_cmd->add_option("--k", eval.k, "Neighbors for image search")->default_val(11)
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--trees", eval.trees, "Trees for the forest")->default_val(11)
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--folds", eval.folds)->default_val(10);
  eval_cmd->add_option("--seed", eval.seed)->default_val(0);
  eval_cmd->add_option("--out-dir", eval.out_dir, "Directory for report JSON and ROC CSVs");
  eval_cmd->add_option("--dataset-id", eval.dataset_id);
  eval_cmd->add_flag("--json", eval.as_json);
  eval_cmd->add_flag("--stratify", eval.stratify, "Stratified instead of uniform folds");
  eval_cmd->add_flag("--exclude-self,!--no-exclude-self", eval.exclude_self,
                     "Mask the validation fold from the search pool (default on)");
  eval_cmd->add_option("--threads", eval.threads);

  TTestArgs tt;
  auto* tt_cmd = app.add_subcommand("ttest", "Welch two-sample two-tailed t-test");
  tt_cmd->add_option("a", tt.a, "First sample file")->required();
  tt_cmd->add_option("b", tt.b, "Second sample file")->required();
  tt_cmd->add_option("--a-col", tt.a_col, "Column of a headed CSV to read from the first file");
  tt_cmd->add_option("--b-col", tt.b_col, "Column of a headed CSV to read from the second file");
  tt_cmd->add_flag("--json", tt.as_json);

  RfTrainArgs rft;
  auto* rft_cmd = app.add_subcommand("rf-train", "Train the Random Forest baseline on a store");
  rft_cmd->add_option("--store", rft.store)->required();
  rft_cmd->add_option("--out", rft.out)->required();
  rft_cmd->add_option("--trees", rft.trees)->default_val(11)->check(CLI::PositiveNumber);
  rft_cmd->add_option("--seed", rft.seed)->default_val(0);
  rft_cmd->add_option("--threads", rft.threads);

  RfPredictArgs rfp;
  auto* rfp_cmd = app.add_subcommand("rf-predict", "Score one vector with a saved forest");
  rfp_cmd->add_option("--model", rfp.model)->required();
  rfp_cmd->add_option("--store", rfp.store);
  rfp_cmd->add_option("--record-id", rfp.record_id);
  rfp_cmd->add_option("--vector", rfp.vector);
  rfp_cmd->add_flag("--json", rfp.as_json);

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP query service over a store");
  serve_cmd->add_option("--store", serve.store)->required();
  serve_cmd->add_option("--port", serve.port)->default_val(8080);
  serve_cmd->add_option("--host", serve.host)->default_val("0.0.0.0");
  serve_cmd->add_option("--image-dir", serve.image_dir);
  serve_cmd->add_option("--k", serve.k, "Default K")->default_val(11);
  serve_cmd->add_option("--threads", serve.threads);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic two-class store");
  synth_cmd->add_option("--out", synth.out)->required();
  synth_cmd->add_option("--n", synth.n)->default_val(1000);
  synth_cmd->add_option("--dim", synth.dim)->default_val(32);
  synth_cmd->add_option("--separation", synth.separation, "Mean distance in sigmas")
      ->default_val(4.0);
  synth_cmd->add_option("--positive-fraction", synth.positive_fraction)->default_val(0.5);
  synth_cmd->add_option("--seed", synth.seed)->default_val(0);
  synth_cmd->add_flag("--shuffle-labels", synth.shuffle_labels);
  synth_cmd->add_flag("--random", synth.random, "Stream standard-normal rows (large stores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*build_cmd) return cmd_build(build);
    if (*query_cmd) return cmd_query(query);
    if (*eval_cmd) return cmd_evaluate(eval);
    if (*tt_cmd) return cmd_ttest(tt);
    if (*rft_cmd) return cmd_rf_train(rft);
    if (*rfp_cmd) return cmd_rf_predict(rfp);
    if (*serve_cmd) return cmd_serve(serve);
    if (*synth_cmd) return cmd_synth(synth);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDomain;
  }
  return kExitUsage;
}
