#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmdiag/lexicon.hpp"
#include "lmdiag/pipeline.hpp"
#include "lmdiag/synthetic.hpp"
#include "lmdiag/trajectory_store.hpp"
#include "lmdiag/util.hpp"

namespace fs = std::filesystem;
using namespace lmdiag;
using nlohmann::json;

namespace {

const fs::path kRepo = fs::path(LMDIAG_REPO_ROOT);
const fs::path kDemoDataset = kRepo / "data" / "fixtures" / "demo_dataset";
const fs::path kLexiconPath = kRepo / "data" / "lexicons" / "default_lexicon.json";

template <typename F>
std::optional<errc> thrown_code(F&& f) {
  try {
    f();
  } catch (const lmdiag::error& e) {
    return e.code();
  }
  return std::nullopt;
}

fs::path scratch_dir(const std::string& leaf) {
  fs::path d = fs::temp_directory_path() / "lmdiag_pipeline_tests" / leaf;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// An --out target that must not exist yet.
fs::path out_path(const fs::path& base, const std::string& leaf) {
  fs::path p = base / leaf;
  fs::remove_all(p);
  return p;
}

pipeline::RunConfig demo_config() {
  json j = json::parse(util::slurp(kRepo / "data" / "fixtures" / "demo_run_config.json"));
  auto cfg = pipeline::run_config_from_json(j);
  cfg.dataset_dir = kDemoDataset;
  cfg.lexicon_path = kLexiconPath;
  cfg.stats.seed = 20250816;
  return cfg;
}

// A small dataset exercising every optional channel: full logits, response
// words and one hidden layer, two conditions for the cross-slice stages.
fs::path channels_dataset() {
  static fs::path dir = [] {
    synthetic::DatasetSpec spec;
    spec.seed = 31;
    spec.vocabulary_size = 24;
    spec.payload = "full";
    spec.emit_words = true;
    spec.emit_hidden = true;
    spec.hidden_dim = 4;
    spec.hidden_layer_tag = "L1";
    for (std::string id : {"alpha", "beta"}) {
      synthetic::ConditionSpec c;
      c.condition_id = id;
      c.model_id = "m-" + id;
      c.attack_id = "atk";
      c.n_harmful = 12;
      c.n_benign_af = 8;
      c.n_benign_ff = 6;
      c.target_asr = 0.5;
      c.t_steps = 8;
      c.success = {2.0, 0.4, 1.5, 0.3, {6, 8, 0.8}};
      c.failure = {0.8, 0.4, -1.2, 0.3, {2, 4, 0.0}};
      c.benign_af = {3.5, 0.5, 2.0, 0.4, {1, 8, 1.0}};
      c.benign_ff = {7.0, 0.5, 3.0, 0.4, {1, 8, 1.0}};
      spec.conditions.push_back(std::move(c));
    }
    fs::path d = scratch_dir("channels_dataset");
    synthetic::generate_to_dir(spec, d);
    return d;
  }();
  return dir;
}

std::string file_bytes(const fs::path& p) { return util::slurp(p); }

bool bundles_identical(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> rel;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), a));
  std::sort(rel.begin(), rel.end());
  for (const auto& r : rel) {
    if (!fs::exists(b / r)) return false;
    if (file_bytes(a / r) != file_bytes(b / r)) return false;
  }
  std::size_t count_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) ++count_b;
  return count_b == rel.size();
}

}  // namespace

TEST_CASE("run config parsing applies defaults and rejects gaps") {
  json j = {{"dataset_dir", "ds"}, {"lexicon_path", "lx"}};
  auto cfg = pipeline::run_config_from_json(j);
  CHECK(cfg.windows == std::vector<int>{1, 3, 5});
  CHECK(cfg.horizon == 64);
  CHECK(cfg.n_confirm == 1);
  CHECK(cfg.lms.k_agg == 10);
  CHECK(cfg.lexicon_variant == "original");

  CHECK(thrown_code([] { pipeline::run_config_from_json(json{{"lexicon_path", "lx"}}); }) ==
        errc::invalid_config);
  CHECK(thrown_code([] { pipeline::run_config_from_json(json::array()); }) ==
        errc::invalid_config);
  CHECK(thrown_code([&] {
          json bad = j;
          bad["lms"] = {{"variant", "bogus"}};
          pipeline::run_config_from_json(bad);
        }) == errc::invalid_config);
}

TEST_CASE("run bundle is byte-stable across reruns, paths and worker counts") {
  fs::path base = scratch_dir("stability");
  pipeline::RunConfig cfg = demo_config();

  auto r1 = pipeline::run_pipeline(cfg, out_path(base, "b1"));
  auto r2 = pipeline::run_pipeline(cfg, out_path(base, "b2"));
  CHECK(r1.config_hash == r2.config_hash);
  CHECK(r1.dataset_hash == r2.dataset_hash);
  CHECK(bundles_identical(base / "b1", base / "b2"));

  // A copied dataset under a different absolute path, analyzed with a
  // different worker count, must yield the same hashes and the same bytes.
  fs::path copy = base / "dataset_copy";
  fs::copy(kDemoDataset, copy, fs::copy_options::recursive);
  pipeline::RunConfig moved = cfg;
  moved.dataset_dir = copy;
  moved.workers = 4;
  auto r3 = pipeline::run_pipeline(moved, out_path(base, "b3"));
  CHECK(r3.config_hash == r1.config_hash);
  CHECK(r3.dataset_hash == r1.dataset_hash);
  CHECK(bundles_identical(base / "b1", base / "b3"));

  SUBCASE("the expected reports are all present") {
    for (const char* name :
         {"per_record_summary.csv", "condition_report.csv", "condition_report.json",
          "auc_pooled.csv", "auc_by_condition.csv", "decomposition_auc.csv", "control_auc.csv",
          "drp_pairs.csv", "probe_report.csv", "learned_baseline.csv", "icc_report.csv",
          "alignment.csv", "alignment.json", "methods.json"}) {
      CAPTURE(name);
      CHECK(std::find(r1.files.begin(), r1.files.end(), name) != r1.files.end());
      CHECK(fs::exists(base / "b1" / name));
    }
    CHECK(fs::exists(base / "b1" / "plots" / "demoA_di.csv"));
  }

  SUBCASE("csv reports open with the provenance comment") {
    std::string expect = "# " + pipeline::provenance_line(r1.config_hash, r1.dataset_hash,
                                                          cfg.stats.seed) + "\r\n";
    for (const char* name : {"per_record_summary.csv", "condition_report.csv"}) {
      std::string head = file_bytes(base / "b1" / name).substr(0, expect.size());
      CHECK(head == expect);
    }
  }

  SUBCASE("methods.json echoes the lexicon identity") {
    json methods = json::parse(file_bytes(base / "b1" / "methods.json"));
    lexicon::Lexicon lx = lexicon::load_lexicon(kLexiconPath);
    CHECK(methods.at("lexicon").at("name").get<std::string>() == lx.name);
    CHECK(methods.at("lexicon").at("content_hash").get<std::string>() ==
          util::hex64(util::fnv1a(lexicon::lexicon_to_json(lx).dump())));
    CHECK(methods.at("provenance").at("config_hash").get<std::string>() == r1.config_hash);
    CHECK(methods.at("config").contains("stats"));
    CHECK_FALSE(methods.at("config").contains("dataset_dir"));
  }

  SUBCASE("a different seed moves the config hash") {
    pipeline::RunConfig reseeded = cfg;
    reseeded.stats.seed = 1;
    auto r4 = pipeline::run_pipeline(reseeded, out_path(base, "b4"));
    CHECK(r4.config_hash != r1.config_hash);
  }
}

TEST_CASE("run rejects bad targets and bad filters without output") {
  fs::path base = scratch_dir("failures");
  pipeline::RunConfig cfg = demo_config();

  SUBCASE("non-empty output directory") {
    fs::path out = base / "occupied";
    fs::create_directories(out);
    util::spit(out / "keep.txt", "x");
    CHECK(thrown_code([&] { pipeline::run_pipeline(cfg, out); }) == errc::io_error);
    CHECK(file_bytes(out / "keep.txt") == "x");
  }

  SUBCASE("filter matching nothing") {
    cfg.condition_filter = {"zzz"};
    fs::path out = out_path(base, "no_match");
    CHECK(thrown_code([&] { pipeline::run_pipeline(cfg, out); }) == errc::invalid_config);
    CHECK_FALSE(fs::exists(out));
  }

  SUBCASE("halt window beyond the horizon") {
    cfg.horizon = 3;  // default rules use w = 5
    CHECK(thrown_code([&] { pipeline::run_pipeline(cfg, out_path(base, "short")); }) ==
          errc::horizon_too_short);
  }

  SUBCASE("unknown lexicon variant") {
    cfg.lexicon_variant = "nonexistent";
    fs::path out = out_path(base, "variant");
    CHECK(thrown_code([&] { pipeline::run_pipeline(cfg, out); }).has_value());
    CHECK_FALSE(fs::exists(out));
  }
}

TEST_CASE("a condition with an empty role pool is named in the error") {
  synthetic::DatasetSpec spec;
  spec.seed = 5;
  synthetic::ConditionSpec c;
  c.condition_id = "lonely";
  c.model_id = "m";
  c.attack_id = "a";
  c.n_harmful = 4;
  c.n_benign_af = 0;  // required by the calibration stage
  c.n_benign_ff = 2;
  c.target_asr = 0.5;
  c.t_steps = 6;
  spec.conditions.push_back(c);
  fs::path ds = scratch_dir("empty_role_ds");
  synthetic::generate_to_dir(spec, ds);

  pipeline::RunConfig cfg = demo_config();
  cfg.dataset_dir = ds;
  std::string message;
  try {
    pipeline::run_pipeline(cfg, out_path(ds.parent_path(), "empty_role_out"));
  } catch (const lmdiag::error& e) {
    CHECK(e.code() == errc::invalid_spec);
    message = e.what();
  }
  CHECK(message.find("lonely") != std::string::npos);
}

TEST_CASE("condition filters narrow the report") {
  fs::path base = scratch_dir("filter");
  pipeline::RunConfig cfg = demo_config();
  cfg.condition_filter = {"demoB"};
  auto r = pipeline::run_pipeline(cfg, out_path(base, "only_b"));

  std::string report = file_bytes(base / "only_b" / "condition_report.csv");
  CHECK(report.find("demoB+di") != std::string::npos);
  CHECK(report.find("demoA+di") == std::string::npos);
  CHECK(report.find("demoA+gcg") == std::string::npos);
  json methods = json::parse(file_bytes(base / "only_b" / "methods.json"));
  CHECK(methods.at("n_conditions").get<int>() == 1);
}

TEST_CASE("ingest_check summarizes the dataset") {
  auto rep = pipeline::ingest_check(kDemoDataset, kSchemaVersion);
  CHECK(rep.schema_version == "1");
  CHECK(rep.n_conditions == 3);
  CHECK(rep.n_records == 120);
  DatasetHandle h = ingest(kDemoDataset);
  CHECK(rep.dataset_hash == util::hex64(h.content_hash));
}

TEST_CASE("subcommand back ends write their reports") {
  fs::path ds = channels_dataset();
  fs::path base = scratch_dir("subcommands");

  SUBCASE("truncation sweep") {
    pipeline::TruncateConfig cfg;
    cfg.dataset_dir = ds;
    cfg.lexicon_path = kLexiconPath;
    cfg.k_values = {5, 12, 24};
    pipeline::run_truncate_sim(cfg, out_path(base, "trunc"), 3);
    std::string csv = file_bytes(base / "trunc" / "truncation_report.csv");
    CHECK(csv.rfind("# config=", 0) == 0);
    CHECK(csv.find("k_vocab") != std::string::npos);
  }

  SUBCASE("probe simulation") {
    pipeline::ProbeConfig cfg;
    cfg.dataset_dir = ds;
    cfg.lexicon_path = kLexiconPath;
    cfg.horizon = 8;
    pipeline::run_probe(cfg, out_path(base, "probe"), 3);
    std::string csv = file_bytes(base / "probe" / "probe_report.csv");
    CHECK(csv.rfind("# config=", 0) == 0);
    CHECK(csv.find("(all)") != std::string::npos);
  }

  SUBCASE("alignment report") {
    pipeline::AlignConfig cfg;
    cfg.dataset_dir = ds;
    cfg.lexicon_path = kLexiconPath;
    cfg.early_window = 5;
    cfg.max_lag = 3;
    pipeline::run_align(cfg, out_path(base, "align"), 3);
    CHECK(fs::exists(base / "align" / "alignment.csv"));
    json rep = json::parse(file_bytes(base / "align" / "alignment.json"));
    CHECK(rep.contains("provenance"));
  }

  SUBCASE("lexicon induction and transfer") {
    pipeline::InduceConfig cfg;
    cfg.dataset_dir = ds;
    cfg.induction.min_count = 2;
    cfg.slice_by = "condition";
    pipeline::run_induce_lexicon(cfg, out_path(base, "induce"));
    json rep = json::parse(file_bytes(base / "induce" / "induced_lexicons.json"));
    CHECK(rep.at("slices").size() == 2);
    CHECK(fs::exists(base / "induce" / "transfer_matrix.csv"));
  }
}

TEST_CASE("the command line front end round-trips synth and run") {
  fs::path base = scratch_dir("cli");
  const std::string cli = LMDIAG_CLI_PATH;
  REQUIRE(fs::exists(cli));

  auto shell = [&](const std::string& args, const std::string& log) {
    std::string cmd = cli + " " + args + " > " + (base / log).string() + " 2>&1";
    return std::system(cmd.c_str());
  };

  synthetic::DatasetSpec spec;
  spec.seed = 0;  // overridden by --seed
  synthetic::ConditionSpec c;
  c.condition_id = "cli0";
  c.model_id = "m";
  c.attack_id = "a";
  c.n_harmful = 8;
  c.n_benign_af = 4;
  c.n_benign_ff = 4;
  c.target_asr = 0.5;
  c.t_steps = 6;
  spec.conditions.push_back(c);
  util::spit(base / "spec.json", synthetic::spec_to_json(spec).dump(2));

  fs::path ds = base / "dataset";
  int rc = shell("synth --config " + (base / "spec.json").string() + " --out " + ds.string() +
                     " --seed 11",
                 "synth.log");
  REQUIRE(rc == 0);
  CHECK(fs::exists(ds / "manifest.json"));
  CHECK(fs::exists(ds / "ground_truth.json"));

  json run_cfg = {{"dataset_dir", ds.string()},
                  {"lexicon_path", kLexiconPath.string()},
                  {"horizon", 6},
                  {"stats", {{"b_resamples", 200}}}};
  util::spit(base / "run.json", run_cfg.dump(2));

  fs::path bundle = base / "bundle";
  rc = shell("run --config " + (base / "run.json").string() + " --out " + bundle.string() +
                 " --seed 11 --conditions cli0",
             "run.log");
  REQUIRE(rc == 0);
  CHECK(fs::exists(bundle / "methods.json"));
  CHECK(fs::exists(bundle / "condition_report.csv"));

  SUBCASE("ingest-check prints a summary") {
    json icfg = {{"dataset_dir", ds.string()}};
    util::spit(base / "ingest.json", icfg.dump());
    rc = shell("ingest-check --config " + (base / "ingest.json").string() + " --out " +
                   (base / "ingest_out").string() + " --seed 1",
               "ingest.log");
    REQUIRE(rc == 0);
    json rep = json::parse(file_bytes(base / "ingest_out" / "ingest_report.json"));
    CHECK(rep.at("n_records").get<int>() == 16);
  }

  SUBCASE("a failed run leaves no partial bundle") {
    fs::path nope = base / "no_bundle";
    rc = shell("run --config " + (base / "run.json").string() + " --out " + nope.string() +
                   " --seed 11 --conditions zzz",
               "fail.log");
    CHECK(rc != 0);
    CHECK_FALSE(fs::exists(nope));
    std::string log = file_bytes(base / "fail.log");
    CHECK(log.find("InvalidConfig") != std::string::npos);
  }

  SUBCASE("a bad config is rejected") {
    util::spit(base / "bad.json", "{\"lexicon_path\": \"x\"}");
    rc = shell("run --config " + (base / "bad.json").string() + " --out " +
                   (base / "bad_out").string() + " --seed 1",
               "bad.log");
    CHECK(rc != 0);
    CHECK_FALSE(fs::exists(base / "bad_out"));
  }
}
