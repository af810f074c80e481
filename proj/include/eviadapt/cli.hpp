#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eviadapt/checkpoint.hpp"
#include "eviadapt/config.hpp"
#include "eviadapt/evaluation.hpp"
#include "eviadapt/pipeline.hpp"

namespace eviadapt::cli {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

/// Environment variable naming the default output root.
inline constexpr const char* kOutEnv = "EVIADAPT_OUT";

namespace detail {

struct Invocation {
  std::string subcommand;
  std::string config_file;
  std::string preset = "benchmark";
  std::string out;
  std::string checkpoint;
  std::string cmapss_dir;
  std::string source_id = "FD001";
  std::string target_id = "FD002";
  std::string quantile_sets = "[[0.25,0.5],[0.5,0.75],[0.25,0.75]]";
  std::map<std::string, std::string> flags;  // config key -> raw value
};

inline std::filesystem::path out_dir(const Invocation& inv) {
  if (!inv.out.empty()) return inv.out;
  const char* root = std::getenv(kOutEnv);
  return std::filesystem::path(root && *root ? root : "eviadapt-out") / inv.subcommand;
}

inline AdaptConfig resolve(const Invocation& inv, const std::optional<AdaptConfig>& base = std::nullopt) {
  AdaptConfig defaults;
  if (base) {
    defaults = *base;
  } else if (inv.preset == "benchmark") {
    defaults = benchmark_config();
  } else if (inv.preset != "full") {
    throw UsageError("unknown preset '" + inv.preset + "' (expected benchmark or full)");
  }
  std::optional<json> file;
  if (!inv.config_file.empty()) file = read_json_file(inv.config_file);
  std::vector<std::pair<std::string, std::string>> overrides(inv.flags.begin(), inv.flags.end());
  return resolve_config(defaults, file ? &*file : nullptr, overrides);
}

inline void report_eval(std::ostream& out, const std::string& what, const Evaluation& e) {
  out << what << ": rmse " << eviadapt::detail::num(e.rmse, 6) << ", score "
      << eviadapt::detail::num(e.score, 6) << " over " << e.predictions.size() << " predictions\n";
}

inline void print_records(std::ostream& out, const std::vector<ResultRecord>& records) {
  for (const auto& r : records)
    out << r.scenario << ' ' << r.variant << ": mean rmse " << eviadapt::detail::num(r.mean_rmse(), 6)
        << ", mean score " << eviadapt::detail::num(r.mean_score(), 6) << '\n';
}

inline int cmd_generate(const Invocation& inv, std::ostream& out) {
  const AdaptConfig c = resolve(inv);
  const auto dir = out_dir(inv);
  save_bundle(make_synthetic_bundle(c), dir);
  write_config(c, dir / "config.json");
  out << "wrote synthetic datasets to " << dir.string() << '\n';
  return kOk;
}

inline int cmd_ingest(const Invocation& inv, std::ostream& out) {
  if (inv.cmapss_dir.empty()) throw UsageError("ingest needs --cmapss-dir");
  AdaptConfig c = resolve(inv);
  const auto dir = out_dir(inv);
  const DataBundle b = make_cmapss_bundle(inv.cmapss_dir, inv.source_id, inv.cmapss_dir, inv.target_id, c);
  save_bundle(b, dir);
  c.data_dir = dir.string();
  c.encoder.input_channels = b.source.channels();
  write_config(c, dir / "config.json");
  out << "ingested " << inv.source_id << " (" << b.source.units.size() << " units, " << b.source.size()
      << " windows) -> " << inv.target_id << " (" << b.target_train.size() << " truncated windows, "
      << b.target_test.units.size() << " test units) into " << dir.string() << '\n';
  return kOk;
}

inline int cmd_pretrain(const Invocation& inv, std::ostream& out) {
  const AdaptConfig c = resolve(inv);
  const auto dir = out_dir(inv);
  std::filesystem::create_directories(dir);
  write_config(c, dir / "config.json");
  const DataBundle b = build_bundle(c);
  ModelCheckpoint ck{c, 0, {}, {}, std::nullopt};
  const auto path = dir / "pretrained.ckpt";
  PretrainResult r;
  try {
    r = pretrain(b.source, c, c.seed, PretrainObjective::Evidential,
                 [&](const SourceModel& m, std::size_t epoch) {
                   ck.source_encoder = m.encoder;
                   ck.head = m.head;
                   ck.step = epoch;
                 });
  } catch (const NumericalError&) {
    if (ck.step > 0) save_checkpoint(ck, dir / "last_good.ckpt");
    throw;
  }
  ck.source_encoder = r.model.encoder;
  ck.head = r.model.head;
  save_checkpoint(ck, path);
  eviadapt::detail::write_history(dir / "pretrain_loss.csv", r.loss_history);
  out << "pretrained " << c.pretrain_epochs << " epochs, final loss "
      << eviadapt::detail::num(r.loss_history.empty() ? 0.0 : r.loss_history.back(), 6) << "; wrote "
      << path.string() << '\n';
  return kOk;
}

inline int cmd_adapt(const Invocation& inv, std::ostream& out) {
  if (inv.checkpoint.empty()) throw UsageError("adapt needs --checkpoint");
  const ModelCheckpoint base = load_checkpoint(inv.checkpoint);
  const AdaptConfig c = resolve(inv, base.config);
  if (c.encoder.input_channels != base.config.encoder.input_channels ||
      c.encoder.layers != base.config.encoder.layers ||
      c.encoder.hidden_size != base.config.encoder.hidden_size || !(c.quantile_set == base.config.quantile_set)) {
    throw UsageError("encoder shape or quantile set differs from the checkpoint");
  }
  const auto dir = out_dir(inv);
  std::filesystem::create_directories(dir);
  write_config(c, dir / "config.json");
  const DataBundle b = build_bundle(c);
  const SourceModel model{base.source_encoder, base.head};
  AdaptResult r = adapt(model, b.source, b.target_train, c, c.seed);
  ModelCheckpoint ck{c, c.adapt_iterations, base.source_encoder, base.head, r.target_encoder};
  save_checkpoint(ck, dir / "adapted.ckpt");
  eviadapt::detail::write_history(dir / "adapt_loss.csv", r.loss_history);
  export_partition(r.source_partition, dir / "source_stages.csv");
  export_partition(r.target_partition, dir / "target_stages.csv");
  out << variant_name(c.variant) << " adaptation, " << c.adapt_iterations << " iterations; "
      << r.target_partition.summary() << "; wrote " << (dir / "adapted.ckpt").string() << '\n';
  return kOk;
}

inline int cmd_evaluate(const Invocation& inv, std::ostream& out) {
  if (inv.checkpoint.empty()) throw UsageError("evaluate needs --checkpoint");
  const ModelCheckpoint ck = load_checkpoint(inv.checkpoint);
  const AdaptConfig c = resolve(inv, ck.config);
  const auto dir = out_dir(inv);
  std::filesystem::create_directories(dir);
  write_config(c, dir / "config.json");
  const DataBundle b = build_bundle(c);
  const LstmEncoder& enc = ck.target_encoder ? *ck.target_encoder : ck.source_encoder;
  const Evaluation e = evaluate_model(enc, ck.head, b.target_test, c.effective_label_scale());
  const std::string variant = ck.target_encoder ? variant_name(c.variant) : "Source-EVI";
  ResultRecord rec{b.scenario(), variant, {c.seed}, {e.rmse}, {e.score}, "config.json", {}};
  emit_report({rec}, dir);
  eviadapt::detail::write_predictions(dir / "predictions.csv", e);
  report_eval(out, variant + " on " + b.target_test.name, e);
  return kOk;
}

inline int cmd_ablate(const Invocation& inv, std::ostream& out) {
  const AdaptConfig c = resolve(inv);
  const auto dir = out_dir(inv);
  const auto res = run_experiment(build_bundle(c), c, {Variant::SUnc, Variant::GUnc, Variant::GFea}, dir);
  print_records(out, res.records);
  out << "wrote " << (dir / "results.csv").string() << '\n';
  return kOk;
}

inline int cmd_sweep(const Invocation& inv, std::ostream& out) {
  const AdaptConfig c = resolve(inv);
  const json sets = json::parse(inv.quantile_sets, nullptr, false);
  const auto is_set = [](const json& s) {
    return s.is_array() && std::all_of(s.begin(), s.end(), [](const json& q) { return q.is_number(); });
  };
  if (sets.is_discarded() || !sets.is_array() || sets.empty() || !std::all_of(sets.begin(), sets.end(), is_set)) {
    throw UsageError("--quantile-sets must be a JSON list of lists of numbers");
  }
  const auto dir = out_dir(inv);
  std::filesystem::create_directories(dir);
  write_config(c, dir / "config.json");
  const DataBundle data = build_bundle(c);
  std::vector<ResultRecord> all;
  for (const auto& s : sets) {
    AdaptConfig qc = c;
    qc.quantile_set = QuantileSet(s.get<std::vector<double>>());
    std::string tag = "q";
    for (double q : qc.quantile_set.values()) tag += "-" + eviadapt::detail::num(q, 4);
    const auto res = run_experiment(data, qc, {qc.variant}, dir / tag);
    for (auto r : res.records) {
      r.variant = tag + " " + r.variant;
      r.config_ref = tag + "/config.json";
      all.push_back(std::move(r));
    }
  }
  emit_report(all, dir);
  print_records(out, all);
  return kOk;
}

}  // namespace detail

/// Parses argv and runs one subcommand. Errors are reported on `err` and mapped
/// to exit codes: 1 usage, 2 data, 3 numerical failure.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  detail::Invocation inv;
  CLI::App app{"Evidential domain adaptation for remaining-useful-life prediction", "eviadapt"};
  app.require_subcommand(1, 1);
  app.add_option("--config", inv.config_file, "JSON config file");
  app.add_option("--preset", inv.preset, "defaults to start from: benchmark or full");
  app.add_option("--out", inv.out, std::string("output directory (default: $") + kOutEnv + "/<subcommand>)");
  for (const auto& key : config_keys()) {
    app.add_option_function<std::string>(
           "--" + key, [&inv, key](const std::string& v) { inv.flags[key] = v; }, "config field " + key)
        ->group("Config fields");
  }

  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"ingest", "convert a C-MAPSS source/target pair into dataset files"},
      {"generate", "write the synthetic two-domain datasets"},
      {"pretrain", "train the source encoder and evidential predictor"},
      {"adapt", "adapt a target encoder from a pretrained checkpoint"},
      {"evaluate", "score a checkpoint on the target test split"},
      {"sweep", "run the experiment over several quantile sets"},
      {"ablate", "compare S-Unc, G-Unc and G-Fea from shared pretrained models"},
  };
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->fallthrough();
    sub->callback([&inv, name = std::string(s.name)] { inv.subcommand = name; });
    const std::string n = s.name;
    if (n == "adapt" || n == "evaluate") sub->add_option("--checkpoint", inv.checkpoint, "checkpoint file")->required();
    if (n == "ingest") {
      sub->add_option("--cmapss-dir", inv.cmapss_dir, "directory with train_/test_/RUL_ files")->required();
      sub->add_option("--source-id", inv.source_id, "source subset, e.g. FD001");
      sub->add_option("--target-id", inv.target_id, "target subset, e.g. FD002");
    }
    if (n == "sweep") sub->add_option("--quantile-sets", inv.quantile_sets, "JSON list of quantile sets");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (inv.subcommand == "ingest") return detail::cmd_ingest(inv, out);
    if (inv.subcommand == "generate") return detail::cmd_generate(inv, out);
    if (inv.subcommand == "pretrain") return detail::cmd_pretrain(inv, out);
    if (inv.subcommand == "adapt") return detail::cmd_adapt(inv, out);
    if (inv.subcommand == "evaluate") return detail::cmd_evaluate(inv, out);
    if (inv.subcommand == "sweep") return detail::cmd_sweep(inv, out);
    if (inv.subcommand == "ablate") return detail::cmd_ablate(inv, out);
    err << "usage error: unknown subcommand\n" << app.help();
    return kUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  }
}

}  // namespace eviadapt::cli
