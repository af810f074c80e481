#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "eviadapt/checkpoint.hpp"
#include "eviadapt/config.hpp"
#include "eviadapt/data.hpp"
#include "eviadapt/encoder.hpp"
#include "eviadapt/evaluation.hpp"
#include "eviadapt/evidential_head.hpp"
#include "eviadapt/losses.hpp"
#include "eviadapt/optim.hpp"
#include "eviadapt/staging.hpp"

namespace eviadapt {

// ---------------------------------------------------------------------------
// Data bundles

/// Labeled source, unlabeled truncated target and labeled target test split.
struct DataBundle {
  DomainDataset source;
  DomainDataset target_train;
  DomainDataset target_test;

  std::string scenario() const { return source.name + "->" + target_train.name; }
};

/// Two-domain synthetic benchmark. Both domains share sensor baselines and
/// gains; they differ in degradation exponent and offset. The target training
/// split is truncated, the target test split holds separately drawn complete units.
inline DataBundle make_synthetic_bundle(const AdaptConfig& c) {
  const auto& s = c.synthetic;
  auto base = [&](const std::string& name, const SyntheticDomain& d, int units) {
    SyntheticConfig g;
    g.name = name;
    g.units = units;
    g.sensors = s.sensors;
    g.life_min = s.life_min;
    g.life_max = s.life_max;
    g.exponent = d.exponent;
    g.offset = d.offset;
    g.noise = s.noise;
    g.plant_seed = s.seed;
    g.rul_cap = c.rul_cap;
    g.window_length = c.window_length;
    g.stride = c.stride;
    return g;
  };
  DataBundle b;
  b.source = generate_synthetic(base("syn-source", s.source, s.units), s.seed * 4 + 1);
  b.target_train = truncate_target(generate_synthetic(base("syn-target", s.target, s.units), s.seed * 4 + 2),
                                   c.keep_fraction);
  b.target_test = generate_synthetic(base("syn-target-test", s.target, s.test_units), s.seed * 4 + 3);
  b.target_test.normalization = b.target_train.normalization;
  return b;
}

/// Source train split of one C-MAPSS subset against another subset's train (truncated) and test splits.
inline DataBundle make_cmapss_bundle(const std::filesystem::path& source_dir, const std::string& source_id,
                                     const std::filesystem::path& target_dir, const std::string& target_id,
                                     const AdaptConfig& c) {
  CmapssOptions opt;
  opt.rul_cap = c.rul_cap;
  opt.window_length = c.window_length;
  opt.stride = c.stride;
  auto src = load_cmapss(source_dir / ("train_" + source_id + ".txt"), {}, {}, opt, source_id);
  auto tgt = load_cmapss(target_dir / ("train_" + target_id + ".txt"),
                         target_dir / ("test_" + target_id + ".txt"),
                         target_dir / ("RUL_" + target_id + ".txt"), opt, target_id);
  DataBundle b;
  b.source = std::move(src.first);
  b.source.name = source_id;
  b.target_train = truncate_target(tgt.first, c.keep_fraction);
  b.target_train.name = target_id;
  b.target_test = std::move(tgt.second);
  b.target_test.normalization = b.target_train.normalization;
  return b;
}

inline void save_bundle(const DataBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  export_dataset(b.source, dir / "source.csv");
  export_dataset(b.target_train, dir / "target_train.csv");
  export_dataset(b.target_test, dir / "target_test.csv");
}

inline DataBundle load_bundle(const std::filesystem::path& dir) {
  DataBundle b;
  b.source = import_dataset(dir / "source.csv");
  b.target_train = import_dataset(dir / "target_train.csv");
  b.target_test = import_dataset(dir / "target_test.csv");
  return b;
}

inline DataBundle build_bundle(const AdaptConfig& c) {
  return c.data_dir.empty() ? make_synthetic_bundle(c) : load_bundle(c.data_dir);
}

// ---------------------------------------------------------------------------
// Training

struct SourceModel {
  LstmEncoder encoder;
  EvidentialHead head;
};

enum class PretrainObjective { Evidential, SquaredError };

struct PretrainResult {
  SourceModel model;
  std::vector<double> loss_history;  // epoch means
};

namespace detail {

inline std::mt19937_64 stream(long long seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint64_t>(seed) & 0xffffffffu,
                    static_cast<std::uint64_t>(seed) >> 32, a & 0xffffffffu, a >> 32, b};
  return std::mt19937_64(seq);
}

inline void check_channels(const AdaptConfig& c, const DomainDataset& ds) {
  if (ds.channels() != c.encoder.input_channels) {
    throw UsageError("dataset '" + ds.name + "' has " + std::to_string(ds.channels()) +
                     " channels but encoder.input-channels is " +
                     std::to_string(c.encoder.input_channels));
  }
  if (ds.window_length != c.window_length) {
    throw UsageError("dataset '" + ds.name + "' uses window length " +
                     std::to_string(ds.window_length) + ", config says " + std::to_string(c.window_length));
  }
}

// n draws from pool: without replacement when the pool is large enough, with replacement otherwise.
inline std::vector<std::size_t> draw(const std::vector<std::size_t>& pool, std::size_t n,
                                     std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  out.reserve(n);
  if (pool.size() >= n) {
    std::vector<std::size_t> p = pool;
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> d(i, p.size() - 1);
      std::swap(p[i], p[d(rng)]);
      out.push_back(p[i]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
    for (std::size_t i = 0; i < n; ++i) out.push_back(pool[d(rng)]);
  }
  return out;
}

inline Matrix gather(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(m.row_span(rows[r]).begin(), m.cols(), out.row_span(r).begin());
  return out;
}

}  // namespace detail

using EpochHook = std::function<void(const SourceModel&, std::size_t epoch)>;

/// Trains E_S and R with Adam. Each epoch visits the source windows once in a
/// seeded shuffled order. Labels are divided by the config's label scale.
/// A non-finite loss aborts; `on_epoch` has seen the last good state by then.
inline PretrainResult pretrain(const DomainDataset& source, const AdaptConfig& c, long long seed,
                               PretrainObjective objective = PretrainObjective::Evidential,
                               const EpochHook& on_epoch = {}) {
  c.validate();
  detail::check_channels(c, source);
  if (!source.labeled()) throw DataError("source dataset '" + source.name + "' is unlabeled");
  if (source.size() == 0) throw DataError("source dataset '" + source.name + "' has no windows");

  PretrainResult r{{LstmEncoder(c.encoder, detail::stream(seed, 1)()),
                    EvidentialHead(c.encoder.hidden_size, c.quantile_set, detail::stream(seed, 2)())},
                   {}};
  std::vector<ad::Parameter*> params = r.model.encoder.parameter_ptrs();
  for (auto* p : r.model.head.parameter_ptrs()) params.push_back(p);
  Adam adam(params, c.pretrain_lr);
  std::mt19937_64 rng = detail::stream(seed, 3);
  const double scale = c.effective_label_scale();

  std::vector<std::size_t> order(source.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < c.pretrain_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += c.batch_size) {
      const std::span<const std::size_t> ids(order.data() + begin,
                                             std::min(c.batch_size, order.size() - begin));
      std::vector<double> y;
      y.reserve(ids.size());
      for (std::size_t i : ids) y.push_back(source.label(i) / scale);

      ad::Tape tape;
      ad::Var f = r.model.encoder.forward(tape, source.time_major(ids), Mode::Train, &rng);
      EvidentialVars out = r.model.head.forward(tape, f);
      ad::Var loss;
      try {
        if (objective == PretrainObjective::Evidential) {
          loss = pretrain_loss(out, y, c.quantile_set, c.lambda, c.phi_parse);
        } else {
          ad::Var pred = ad::scale(ad::sum_cols(out.gamma), 1.0 / static_cast<double>(c.quantile_set.size()));
          loss = ad::mean(ad::square(pred - tape.constant(Matrix::column(y))));
        }
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " (pretraining epoch " + std::to_string(epoch + 1) +
                             "; last good state is from epoch " + std::to_string(epoch) + ")");
      }
      if (!std::isfinite(loss.item())) {
        throw NumericalError("non-finite pretraining loss at epoch " + std::to_string(epoch + 1));
      }
      tape.backward(loss);
      adam.step();
      total += loss.item();
      ++batches;
    }
    r.loss_history.push_back(total / static_cast<double>(batches));
    if (on_epoch) on_epoch(r.model, epoch + 1);
  }
  return r;
}

/// Window pools the alignment loss compares, one pair per matched stage.
/// S-Unc pairs source stages 1, 2 with target stages 1, 2 (source stage 3 is
/// never used); the global variants use every window of each domain.
/// An empty pool aborts with both partitions' stage sizes.
inline std::pair<std::vector<std::vector<std::size_t>>, std::vector<std::vector<std::size_t>>>
alignment_pools(Variant variant, const StagePartition& source, const StagePartition& target) {
  std::vector<std::vector<std::size_t>> sp, tp;
  if (variant == Variant::SUnc) {
    for (int stage : {1, 2}) {
      sp.push_back(source.pool(stage));
      tp.push_back(target.pool(stage));
    }
  } else {
    sp.emplace_back();
    tp.emplace_back();
    for (const auto& a : source.assignments) sp[0].push_back(a.window);
    for (const auto& a : target.assignments) tp[0].push_back(a.window);
  }
  for (std::size_t n = 0; n < sp.size(); ++n) {
    if (sp[n].empty() || tp[n].empty()) {
      throw DataError("stage " + std::to_string(n + 1) + " pool is empty in the " +
                      (tp[n].empty() ? "target" : "source") + " domain (" + source.summary() + "; " +
                      target.summary() + ")");
    }
  }
  return {std::move(sp), std::move(tp)};
}

struct AdaptResult {
  LstmEncoder target_encoder;
  std::vector<double> loss_history;  // alignment loss per iteration
  std::vector<double> pseudo_labels;
  StagePartition source_partition;
  StagePartition target_partition;
};

/// Stage-aware adaptation of a clone of E_S with E_S and R frozen. Pseudo-labels,
/// partitions and the source side (triples or features, eval mode) are computed
/// once; each iteration draws batch-size/2 windows per stage per domain.
inline AdaptResult adapt(const SourceModel& model, const DomainDataset& source,
                         const DomainDataset& target, const AdaptConfig& c, long long seed) {
  c.validate();
  detail::check_channels(c, source);
  detail::check_channels(c, target);
  if (target.size() == 0) throw DataError("target dataset '" + target.name + "' has no windows");

  AdaptResult r;
  r.target_encoder = model.encoder.clone();

  std::vector<std::size_t> all_target(target.size()), all_source(source.size());
  for (std::size_t i = 0; i < all_target.size(); ++i) all_target[i] = i;
  for (std::size_t i = 0; i < all_source.size(); ++i) all_source[i] = i;

  r.pseudo_labels = predict_rul(model.encoder, model.head, target, all_target, c.effective_label_scale());
  r.source_partition = segment_source(source, c.stages.source);
  r.target_partition = segment_target(target, r.pseudo_labels, c.stages.target);

  const auto [source_pools, target_pools] =
      alignment_pools(c.variant, r.source_partition, r.target_partition);
  // Source side never changes during adaptation.
  Matrix source_side;
  if (c.variant == Variant::GFea) {
    for (std::size_t begin = 0; begin < all_source.size(); begin += 256) {
      const std::span<const std::size_t> ids(all_source.data() + begin,
                                             std::min<std::size_t>(256, all_source.size() - begin));
      ad::Tape tape;
      const Matrix f = model.encoder.forward_frozen(tape, source.time_major(ids), Mode::Eval).value();
      if (begin == 0) source_side = Matrix(all_source.size(), f.cols());
      for (std::size_t k = 0; k < ids.size(); ++k)
        std::copy_n(f.row_span(k).begin(), f.cols(), source_side.row_span(begin + k).begin());
    }
  } else {
    source_side = predict_outputs(model.encoder, model.head, source, all_source).triples();
  }

  Adam adam(r.target_encoder.parameter_ptrs(), c.adapt_lr);
  const std::size_t per_stage = std::max<std::size_t>(c.batch_size / 2, 1);
  const Mode mode = c.adapt_dropout ? Mode::Train : Mode::Eval;

  for (std::size_t it = 0; it < c.adapt_iterations; ++it) {
    std::mt19937_64 rng = detail::stream(seed, 0xADA, it);
    ad::Tape tape;
    std::vector<ad::Var> src, tgt;
    for (std::size_t n = 0; n < source_pools.size(); ++n) {
      const auto s_ids = detail::draw(source_pools[n], per_stage, rng);
      const auto t_ids = detail::draw(target_pools[n], per_stage, rng);
      src.push_back(tape.constant(detail::gather(source_side, s_ids)));
      ad::Var f = r.target_encoder.forward(tape, target.time_major(t_ids), mode, &rng);
      tgt.push_back(c.variant == Variant::GFea ? f : model.head.forward_frozen(tape, f).triples());
    }
    ad::Var loss = c.variant == Variant::GFea ? feature_mmd_loss(src[0], tgt[0], c.kernel)
                                              : sea_loss(src, tgt, c.kernel);
    if (!std::isfinite(loss.item())) {
      throw NumericalError("non-finite alignment loss at iteration " + std::to_string(it + 1));
    }
    r.loss_history.push_back(loss.item());
    tape.backward(loss);
    adam.step();
  }
  return r;
}

// ---------------------------------------------------------------------------
// Experiments

struct AdaptRun {
  Variant variant = Variant::SUnc;
  Evaluation evaluation;
  std::vector<double> loss_history;
  bool frozen_intact = true;
};

struct SeedRun {
  long long seed = 0;
  std::vector<double> pretrain_history;
  Evaluation source_evi;
  std::optional<Evaluation> source_rmse;
  std::vector<AdaptRun> adapted;
};

struct ExperimentResult {
  std::vector<ResultRecord> records;
  std::vector<SeedRun> runs;
  std::vector<std::filesystem::path> files;
};

namespace detail {

inline void write_history(const std::filesystem::path& path, const std::vector<double>& h) {
  auto out = open_out(path);
  out << "step,loss\n";
  for (std::size_t i = 0; i < h.size(); ++i) out << i + 1 << ',' << num(h[i], 17) << '\n';
}

inline void write_predictions(const std::filesystem::path& path, const Evaluation& e) {
  auto out = open_out(path);
  out << "unit,cycle,predicted,label\n";
  for (const auto& p : e.predictions)
    out << p.id.unit << ',' << p.id.cycle << ',' << num(p.predicted, 17) << ',' << num(p.label, 17) << '\n';
}

}  // namespace detail

/// Pretrain once per seed, score the source model on the target test split
/// (Source-EVI), then adapt and score every requested variant from that same
/// pretrained model. Everything is written under `out_dir`; on failure the
/// partial records are still reported and a FAILED marker names the error.
inline ExperimentResult run_experiment(const DataBundle& data, const AdaptConfig& config,
                                       const std::vector<Variant>& variants,
                                       const std::filesystem::path& out_dir) {
  config.validate();
  std::filesystem::create_directories(out_dir);
  std::filesystem::remove(out_dir / "FAILED");
  write_config(config, out_dir / "config.json");

  ExperimentResult res;
  const std::string scenario = data.scenario();
  ResultRecord evi{scenario, "Source-EVI", {}, {}, {}, "config.json", {}};
  ResultRecord mse{scenario, "Source-RMSE", {}, {}, {}, "config.json", {}};
  std::vector<ResultRecord> adapted;
  for (Variant v : variants) adapted.push_back({scenario, variant_name(v), {}, {}, {}, "config.json", {}});

  auto collect = [&] {
    std::vector<ResultRecord> recs;
    if (!mse.rmse.empty()) recs.push_back(mse);
    if (!evi.rmse.empty()) recs.push_back(evi);
    for (const auto& a : adapted)
      if (!a.rmse.empty()) recs.push_back(a);
    return recs;
  };

  try {
    const double scale = config.effective_label_scale();
    for (long long seed : config.seed_list()) {
      SeedRun run;
      run.seed = seed;
      const auto seed_dir = out_dir / ("seed-" + std::to_string(seed));
      std::filesystem::create_directories(seed_dir);
      AdaptConfig seeded = config;
      seeded.seed = seed;

      ModelCheckpoint ck{seeded, 0, {}, {}, std::nullopt};
      PretrainResult pre;
      try {
        pre = pretrain(data.source, seeded, seed, PretrainObjective::Evidential,
                       [&](const SourceModel& m, std::size_t epoch) {
                         ck.source_encoder = m.encoder;
                         ck.head = m.head;
                         ck.step = epoch;
                       });
      } catch (const NumericalError&) {
        if (ck.step > 0) save_checkpoint(ck, seed_dir / "pretrained.last-good.ckpt");
        throw;
      }
      ck.source_encoder = pre.model.encoder;
      ck.head = pre.model.head;
      save_checkpoint(ck, seed_dir / "pretrained.ckpt");
      detail::write_history(seed_dir / "pretrain_loss.csv", pre.loss_history);
      run.pretrain_history = pre.loss_history;

      run.source_evi = evaluate_model(pre.model.encoder, pre.model.head, data.target_test, scale);
      evi.seeds.push_back(seed);
      evi.rmse.push_back(run.source_evi.rmse);
      evi.score.push_back(run.source_evi.score);
      if (evi.curves.empty()) evi.curves.push_back({"pretrain", pre.loss_history});

      if (config.source_rmse_baseline) {
        PretrainResult plain = pretrain(data.source, seeded, seed, PretrainObjective::SquaredError);
        run.source_rmse = evaluate_model(plain.model.encoder, plain.model.head, data.target_test, scale);
        mse.seeds.push_back(seed);
        mse.rmse.push_back(run.source_rmse->rmse);
        mse.score.push_back(run.source_rmse->score);
      }

      const auto enc_sum = parameter_checksum(pre.model.encoder.parameters());
      const auto head_sum = parameter_checksum(pre.model.head.parameters());
      for (std::size_t k = 0; k < variants.size(); ++k) {
        AdaptConfig vc = seeded;
        vc.variant = variants[k];
        AdaptResult ar = adapt(pre.model, data.source, data.target_train, vc, seed);
        AdaptRun a;
        a.variant = variants[k];
        a.loss_history = ar.loss_history;
        a.frozen_intact = parameter_checksum(pre.model.encoder.parameters()) == enc_sum &&
                          parameter_checksum(pre.model.head.parameters()) == head_sum;
        a.evaluation = evaluate_model(ar.target_encoder, pre.model.head, data.target_test, scale);

        const std::string tag = variant_name(variants[k]);
        ModelCheckpoint vck{vc, vc.adapt_iterations, pre.model.encoder, pre.model.head, ar.target_encoder};
        save_checkpoint(vck, seed_dir / (tag + ".ckpt"));
        detail::write_history(seed_dir / (tag + "_loss.csv"), ar.loss_history);
        detail::write_predictions(seed_dir / (tag + "_predictions.csv"), a.evaluation);
        export_partition(ar.target_partition, seed_dir / (tag + "_target_stages.csv"));

        adapted[k].seeds.push_back(seed);
        adapted[k].rmse.push_back(a.evaluation.rmse);
        adapted[k].score.push_back(a.evaluation.score);
        if (adapted[k].curves.empty()) adapted[k].curves.push_back({"alignment", ar.loss_history});
        run.adapted.push_back(std::move(a));
      }
      detail::write_predictions(seed_dir / "Source-EVI_predictions.csv", run.source_evi);
      res.runs.push_back(std::move(run));
    }
  } catch (const std::exception& e) {
    {
      std::ofstream marker(out_dir / "FAILED");
      marker << e.what() << '\n';
    }
    const auto partial = collect();
    if (!partial.empty()) emit_report(partial, out_dir);
    throw;
  }
  res.records = collect();
  res.files = emit_report(res.records, out_dir);
  return res;
}

}  // namespace eviadapt
