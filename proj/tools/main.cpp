// Command-line front end. Every subcommand reads a JSON config, writes its
// reports under --out, and exits nonzero without leaving partial output when
// anything fails.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "lmdiag/pipeline.hpp"
#include "lmdiag/synthetic.hpp"
#include "lmdiag/trajectory_store.hpp"
#include "lmdiag/util.hpp"

namespace {

using nlohmann::json;

struct CommonArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config, "JSON config file")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--out", args.out, "output directory (must not exist non-empty)")->required();
  sub->add_option("--seed", args.seed, "random seed")->required();
}

json load_config(const std::string& path) {
  return json::parse(lmdiag::util::slurp(path));
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t comma = s.find(',', start);
    if (comma == std::string::npos) {
      if (start < s.size()) out.push_back(s.substr(start));
      break;
    }
    if (comma > start) out.push_back(s.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"decoding-time logit margin diagnostics"};
  app.require_subcommand(1);

  CommonArgs ingest_args, run_args, synth_args, induce_args, trunc_args, probe_args, align_args;
  std::string conditions;

  auto* sub_ingest = app.add_subcommand("ingest-check", "validate a dataset and print a summary");
  add_common(sub_ingest, ingest_args);
  auto* sub_run = app.add_subcommand("run", "full analysis bundle");
  add_common(sub_run, run_args);
  sub_run->add_option("--conditions", conditions,
                      "comma-separated condition id substrings to keep");
  auto* sub_synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(sub_synth, synth_args);
  auto* sub_induce = app.add_subcommand("induce-lexicon", "log-odds lexicon induction");
  add_common(sub_induce, induce_args);
  auto* sub_trunc = app.add_subcommand("truncate-sim", "vocabulary truncation sweep");
  add_common(sub_trunc, trunc_args);
  auto* sub_probe = app.add_subcommand("probe", "halt-rule intervention simulation");
  add_common(sub_probe, probe_args);
  auto* sub_align = app.add_subcommand("align", "hidden-state alignment report");
  add_common(sub_align, align_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sub_ingest->parsed()) {
      json cfg = load_config(ingest_args.config);
      std::string schema = cfg.value("schema_version", lmdiag::kSchemaVersion);
      auto rep = lmdiag::pipeline::ingest_check(cfg.value("dataset_dir", std::string()), schema);
      json out;
      out["schema_version"] = rep.schema_version;
      out["dataset_hash"] = rep.dataset_hash;
      out["n_conditions"] = rep.n_conditions;
      out["n_records"] = rep.n_records;
      out["notes"] = rep.notes;
      out["seed"] = ingest_args.seed;
      lmdiag::util::bundle_writer bundle;
      bundle.add("ingest_report.json", out.dump(2) + "\n");
      bundle.commit(ingest_args.out);
      std::cout << out.dump(2) << "\n";
    } else if (sub_run->parsed()) {
      auto cfg = lmdiag::pipeline::run_config_from_json(load_config(run_args.config));
      cfg.stats.seed = run_args.seed;
      if (!conditions.empty()) cfg.condition_filter = split_commas(conditions);
      auto result = lmdiag::pipeline::run_pipeline(cfg, run_args.out);
      std::cout << "wrote " << result.files.size() << " files to " << result.out_dir.string()
                << "\nconfig=" << result.config_hash << " dataset=" << result.dataset_hash
                << "\n";
    } else if (sub_synth->parsed()) {
      auto spec = lmdiag::synthetic::spec_from_json(load_config(synth_args.config));
      spec.seed = synth_args.seed;
      lmdiag::synthetic::generate_to_dir(spec, synth_args.out);
      std::cout << "wrote dataset to " << synth_args.out << "\n";
    } else if (sub_induce->parsed()) {
      auto cfg = lmdiag::pipeline::induce_config_from_json(load_config(induce_args.config));
      cfg.stats.seed = induce_args.seed;
      lmdiag::pipeline::run_induce_lexicon(cfg, induce_args.out);
      std::cout << "wrote induction report to " << induce_args.out << "\n";
    } else if (sub_trunc->parsed()) {
      auto cfg = lmdiag::pipeline::truncate_config_from_json(load_config(trunc_args.config));
      lmdiag::pipeline::run_truncate_sim(cfg, trunc_args.out, trunc_args.seed);
      std::cout << "wrote truncation report to " << trunc_args.out << "\n";
    } else if (sub_probe->parsed()) {
      auto cfg = lmdiag::pipeline::probe_config_from_json(load_config(probe_args.config));
      lmdiag::pipeline::run_probe(cfg, probe_args.out, probe_args.seed);
      std::cout << "wrote probe report to " << probe_args.out << "\n";
    } else if (sub_align->parsed()) {
      auto cfg = lmdiag::pipeline::align_config_from_json(load_config(align_args.config));
      lmdiag::pipeline::run_align(cfg, align_args.out, align_args.seed);
      std::cout << "wrote alignment report to " << align_args.out << "\n";
    }
  } catch (const lmdiag::error& e) {
    std::cerr << "error [" << lmdiag::errc_name(e.code()) << "] " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error " << e.what() << "\n";
    return 1;
  }
  return 0;
}
