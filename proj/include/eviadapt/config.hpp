#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "eviadapt/data.hpp"
#include "eviadapt/encoder.hpp"
#include "eviadapt/evidential_head.hpp"
#include "eviadapt/losses.hpp"
#include "eviadapt/staging.hpp"

namespace eviadapt {

using json = nlohmann::ordered_json;

enum class Variant { SUnc, GUnc, GFea };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::SUnc: return "S-Unc";
    case Variant::GUnc: return "G-Unc";
    case Variant::GFea: return "G-Fea";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "S-Unc") return Variant::SUnc;
  if (s == "G-Unc") return Variant::GUnc;
  if (s == "G-Fea") return Variant::GFea;
  throw UsageError("unknown variant '" + s + "' (expected S-Unc, G-Unc or G-Fea)");
}

/// One synthetic domain: degradation exponent and operating-condition offset.
struct SyntheticDomain {
  double exponent = 1.0;
  double offset = 0.0;
};

struct SyntheticSpec {
  int units = 20;
  int test_units = 20;
  int sensors = 6;
  int life_min = 80;
  int life_max = 140;
  double noise = 0.02;
  std::uint64_t seed = 1;  // data seed, independent of the model seed
  SyntheticDomain source{1.0, 0.0};
  SyntheticDomain target{2.0, 0.5};
};

/// Every tunable of a run. JSON keys mirror the field names in kebab-case.
struct AdaptConfig {
  QuantileSet quantile_set;
  double lambda = 0.01;
  KernelSpec kernel;
  EncoderConfig encoder;
  std::size_t batch_size = 256;
  double pretrain_lr = 1e-3;
  double adapt_lr = 5e-5;
  std::size_t pretrain_epochs = 100;
  std::size_t adapt_iterations = 2000;
  long long seed = 0;
  Variant variant = Variant::SUnc;
  PhiParse phi_parse = PhiParse::Literal;
  double keep_fraction = 0.6;

  std::vector<long long> seeds;  // empty: just `seed`
  double rul_cap = 130.0;
  std::size_t window_length = 30;
  std::size_t stride = 1;
  bool adapt_dropout = true;
  double label_scale = 0.0;  // <= 0: rul-cap
  StageThresholds stages;
  std::string data_dir;      // empty: generate the synthetic benchmark in memory
  bool source_rmse_baseline = false;
  SyntheticSpec synthetic;

  double effective_label_scale() const { return label_scale > 0.0 ? label_scale : rul_cap; }
  std::vector<long long> seed_list() const { return seeds.empty() ? std::vector<long long>{seed} : seeds; }

  void validate() const {
    encoder.validate();
    if (!(adapt_lr > 0.0)) throw UsageError("adapt-lr must be positive");
    if (!(pretrain_lr > 0.0)) throw UsageError("pretrain-lr must be positive");
    if (batch_size < 2) throw UsageError("batch-size must be >= 2");
    if (!(lambda >= 0.0)) throw UsageError("lambda must be >= 0");
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw UsageError("keep-fraction must lie in (0, 1]");
    if (kernel.kind == KernelKind::GaussianRbf && !kernel.median_heuristic() && !(kernel.bandwidth > 0.0))
      throw UsageError("kernel.bandwidth must be positive");
    if (window_length < 1 || stride < 1) throw UsageError("window-length and stride must be >= 1");
    if (!(rul_cap > 0.0)) throw UsageError("rul-cap must be positive");
  }
};

namespace detail {

inline const char* kernel_kind_name(KernelKind k) {
  return k == KernelKind::Linear ? "linear" : "gaussian-rbf";
}

inline json domain_json(const SyntheticDomain& d) { return {{"exponent", d.exponent}, {"offset", d.offset}}; }

inline SyntheticDomain domain_from(const json& j) {
  return {j.at("exponent").get<double>(), j.at("offset").get<double>()};
}

}  // namespace detail

inline json to_json(const AdaptConfig& c) {
  json j;
  j["quantile-set"] = c.quantile_set.values();
  j["lambda"] = c.lambda;
  j["kernel"] = {{"kind", detail::kernel_kind_name(c.kernel.kind)},
                 {"bandwidth", c.kernel.median_heuristic() ? json("median") : json(c.kernel.bandwidth)}};
  j["encoder"] = {{"input-channels", c.encoder.input_channels},
                  {"layers", c.encoder.layers},
                  {"hidden-size", c.encoder.hidden_size},
                  {"dropout-rate", c.encoder.dropout_rate}};
  j["batch-size"] = c.batch_size;
  j["pretrain-lr"] = c.pretrain_lr;
  j["adapt-lr"] = c.adapt_lr;
  j["pretrain-epochs"] = c.pretrain_epochs;
  j["adapt-iterations"] = c.adapt_iterations;
  j["seed"] = c.seed;
  j["variant"] = variant_name(c.variant);
  j["phi-parse"] = c.phi_parse == PhiParse::Literal ? "literal" : "grouped";
  j["keep-fraction"] = c.keep_fraction;
  j["seeds"] = c.seeds;
  j["rul-cap"] = c.rul_cap;
  j["window-length"] = c.window_length;
  j["stride"] = c.stride;
  j["adapt-dropout"] = c.adapt_dropout;
  j["label-scale"] = c.label_scale;
  j["stages"] = {{"source", c.stages.source}, {"target", c.stages.target}};
  j["data-dir"] = c.data_dir;
  j["source-rmse-baseline"] = c.source_rmse_baseline;
  const auto& s = c.synthetic;
  j["synthetic"] = {{"units", s.units},       {"test-units", s.test_units}, {"sensors", s.sensors},
                    {"life-min", s.life_min}, {"life-max", s.life_max},     {"noise", s.noise},
                    {"seed", s.seed},         {"source", detail::domain_json(s.source)},
                    {"target", detail::domain_json(s.target)}};
  return j;
}

/// Strict parse: every key of a full config must be present (merge onto defaults first).
inline AdaptConfig config_from_json(const json& j) {
  try {
    AdaptConfig c;
    c.quantile_set = QuantileSet(j.at("quantile-set").get<std::vector<double>>());
    c.lambda = j.at("lambda").get<double>();
    const auto& k = j.at("kernel");
    const std::string kind = k.at("kind").get<std::string>();
    if (kind == "linear") {
      c.kernel = KernelSpec::linear();
    } else if (kind == "gaussian-rbf") {
      const auto& bw = k.at("bandwidth");
      if (bw.is_string()) {
        if (bw.get<std::string>() != "median") throw UsageError("kernel.bandwidth must be a number or \"median\"");
        c.kernel = KernelSpec::rbf_median();
      } else {
        c.kernel = KernelSpec::rbf(bw.get<double>());
      }
    } else {
      throw UsageError("unknown kernel.kind '" + kind + "'");
    }
    const auto& e = j.at("encoder");
    c.encoder.input_channels = e.at("input-channels").get<std::size_t>();
    c.encoder.layers = e.at("layers").get<std::size_t>();
    c.encoder.hidden_size = e.at("hidden-size").get<std::size_t>();
    c.encoder.dropout_rate = e.at("dropout-rate").get<double>();
    c.batch_size = j.at("batch-size").get<std::size_t>();
    c.pretrain_lr = j.at("pretrain-lr").get<double>();
    c.adapt_lr = j.at("adapt-lr").get<double>();
    c.pretrain_epochs = j.at("pretrain-epochs").get<std::size_t>();
    c.adapt_iterations = j.at("adapt-iterations").get<std::size_t>();
    c.seed = j.at("seed").get<long long>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    const std::string phi = j.at("phi-parse").get<std::string>();
    if (phi != "literal" && phi != "grouped") throw UsageError("phi-parse must be literal or grouped");
    c.phi_parse = phi == "literal" ? PhiParse::Literal : PhiParse::Grouped;
    c.keep_fraction = j.at("keep-fraction").get<double>();
    c.seeds = j.at("seeds").get<std::vector<long long>>();
    c.rul_cap = j.at("rul-cap").get<double>();
    c.window_length = j.at("window-length").get<std::size_t>();
    c.stride = j.at("stride").get<std::size_t>();
    c.adapt_dropout = j.at("adapt-dropout").get<bool>();
    c.label_scale = j.at("label-scale").get<double>();
    c.stages.source = j.at("stages").at("source").get<std::vector<double>>();
    c.stages.target = j.at("stages").at("target").get<std::vector<double>>();
    c.data_dir = j.at("data-dir").get<std::string>();
    c.source_rmse_baseline = j.at("source-rmse-baseline").get<bool>();
    const auto& s = j.at("synthetic");
    c.synthetic.units = s.at("units").get<int>();
    c.synthetic.test_units = s.at("test-units").get<int>();
    c.synthetic.sensors = s.at("sensors").get<int>();
    c.synthetic.life_min = s.at("life-min").get<int>();
    c.synthetic.life_max = s.at("life-max").get<int>();
    c.synthetic.noise = s.at("noise").get<double>();
    c.synthetic.seed = s.at("seed").get<std::uint64_t>();
    c.synthetic.source = detail::domain_from(s.at("source"));
    c.synthetic.target = detail::domain_from(s.at("target"));
    c.validate();
    return c;
  } catch (const json::exception& ex) {
    throw UsageError(std::string("bad config: ") + ex.what());
  }
}

namespace detail {

// Flattened key ("encoder.hidden-size") -> JSON pointer ("/encoder/hidden-size").
inline json::json_pointer pointer_for(const std::string& key) {
  std::string p = "/";
  for (char ch : key) p += ch == '.' ? '/' : ch;
  return json::json_pointer(p);
}

inline std::set<std::string> leaf_keys(const json& j, const std::string& prefix = "") {
  std::set<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string k = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      auto sub = leaf_keys(*it, k);
      keys.insert(sub.begin(), sub.end());
    } else {
      keys.insert(k);
    }
  }
  return keys;
}

inline void merge_checked(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw UsageError("config section '" + prefix + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string k = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw UsageError("unknown config key '" + k + "'");
    if (base[it.key()].is_object()) {
      merge_checked(base[it.key()], *it, k);
    } else {
      base[it.key()] = *it;
    }
  }
}

}  // namespace detail

/// Every leaf key a config accepts, dot-separated.
inline std::set<std::string> config_keys() { return detail::leaf_keys(to_json(AdaptConfig{})); }

/// Defaults, then `file` (when given), then `key=value` overrides.
/// Override values are read as JSON when they parse, as plain strings otherwise.
inline AdaptConfig resolve_config(const AdaptConfig& defaults, const json* file,
                                  const std::vector<std::pair<std::string, std::string>>& overrides) {
  json j = to_json(defaults);
  if (file) detail::merge_checked(j, *file, "");
  const auto keys = detail::leaf_keys(j);
  for (const auto& [key, raw] : overrides) {
    if (!keys.count(key)) throw UsageError("unknown config key '" + key + "'");
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    j[detail::pointer_for(key)] = value;
  }
  return config_from_json(j);
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw UsageError("config file " + path.string() + " is not valid JSON");
  return j;
}

inline void write_config(const AdaptConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
}

/// Small desk-scale setup used by the synthetic end-to-end benchmark.
inline AdaptConfig benchmark_config() {
  AdaptConfig c;
  c.encoder = {6, 1, 16, 0.0};
  c.batch_size = 64;
  c.pretrain_epochs = 20;
  c.adapt_iterations = 300;
  c.adapt_lr = 1e-4;
  c.seeds = {1, 2, 3, 4, 5};
  return c;
}

}  // namespace eviadapt
