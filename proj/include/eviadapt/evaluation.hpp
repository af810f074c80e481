#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "eviadapt/data.hpp"
#include "eviadapt/encoder.hpp"
#include "eviadapt/evidential_head.hpp"

namespace eviadapt {

namespace detail {
inline void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": " + std::to_string(a) + " predictions vs " +
                     std::to_string(b) + " labels");
  }
}
}  // namespace detail

inline double rmse(std::span<const double> pred, std::span<const double> label) {
  detail::check_lengths(pred.size(), label.size(), "rmse");
  if (pred.empty()) throw UsageError("rmse of an empty set");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - label[i]) * (pred[i] - label[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

/// Asymmetric prognostics score: early errors decay with 13, late ones with 10.
inline double score(std::span<const double> pred, std::span<const double> label) {
  detail::check_lengths(pred.size(), label.size(), "score");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - label[i];
    s += d < 0.0 ? std::exp(-d / 13.0) - 1.0 : std::exp(d / 10.0) - 1.0;
  }
  return s;
}

/// Eval-mode point RUL for the given windows, in label units (gamma mean times label_scale).
/// Windows are pushed through the encoder in chunks to bound tape size.
inline std::vector<double> predict_rul(const LstmEncoder& encoder, const EvidentialHead& head,
                                       const DomainDataset& ds, std::span<const std::size_t> ids,
                                       double label_scale = 1.0, std::size_t chunk = 256) {
  std::vector<double> out;
  out.reserve(ids.size());
  for (std::size_t begin = 0; begin < ids.size(); begin += chunk) {
    const auto part = ids.subspan(begin, std::min(chunk, ids.size() - begin));
    ad::Tape tape;
    ad::Var f = encoder.forward_frozen(tape, ds.time_major(part), Mode::Eval);
    for (double y : point_rul(head.forward_frozen(tape, f).values())) out.push_back(y * label_scale);
  }
  return out;
}

/// Eval-mode evidential outputs for the given windows, stacked in order.
inline EvidentialOutput predict_outputs(const LstmEncoder& encoder, const EvidentialHead& head,
                                        const DomainDataset& ds, std::span<const std::size_t> ids,
                                        std::size_t chunk = 256) {
  const std::size_t k = head.quantile_count();
  EvidentialOutput all{Matrix(ids.size(), k), Matrix(ids.size(), k), Matrix(ids.size(), k),
                       Matrix(ids.size(), k)};
  for (std::size_t begin = 0; begin < ids.size(); begin += chunk) {
    const auto part = ids.subspan(begin, std::min(chunk, ids.size() - begin));
    ad::Tape tape;
    ad::Var f = encoder.forward_frozen(tape, ds.time_major(part), Mode::Eval);
    const EvidentialOutput o = head.forward_frozen(tape, f).values();
    for (std::size_t r = 0; r < part.size(); ++r)
      for (std::size_t c = 0; c < k; ++c) {
        all.gamma(begin + r, c) = o.gamma(r, c);
        all.nu(begin + r, c) = o.nu(r, c);
        all.alpha(begin + r, c) = o.alpha(r, c);
        all.beta(begin + r, c) = o.beta(r, c);
      }
  }
  return all;
}

struct Prediction {
  SampleId id;
  double predicted = 0.0;
  double label = 0.0;
};

struct Evaluation {
  double rmse = 0.0;
  double score = 0.0;
  std::vector<Prediction> predictions;
};

/// Scores a labeled dataset under its evaluation protocol (every window, or the
/// last window of each unit for C-MAPSS-style test splits).
inline Evaluation evaluate_model(const LstmEncoder& encoder, const EvidentialHead& head,
                                 const DomainDataset& ds, double label_scale = 1.0) {
  if (!ds.labeled()) throw DataError("evaluation dataset '" + ds.name + "' is unlabeled");
  const auto ids = ds.evaluation_ids();
  if (ids.empty()) throw DataError("evaluation dataset '" + ds.name + "' has no windows");
  const auto pred = predict_rul(encoder, head, ds, ids, label_scale);
  Evaluation e;
  std::vector<double> labels;
  labels.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    labels.push_back(ds.label(ids[i]));
    e.predictions.push_back({ds.sample_id(ids[i]), pred[i], labels.back()});
  }
  e.rmse = rmse(pred, labels);
  e.score = score(pred, labels);
  return e;
}

// ---------------------------------------------------------------------------
// Records and reports

struct ResultRecord {
  std::string scenario;  // "source->target"
  std::string variant;   // may be empty
  std::vector<long long> seeds;
  std::vector<double> rmse;
  std::vector<double> score;
  std::string config_ref;
  /// Optional named loss curves for plotting (first seed's histories).
  std::vector<std::pair<std::string, std::vector<double>>> curves;

  static double mean(const std::vector<double>& v) {
    if (v.empty()) return std::nan("");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  }
  double mean_rmse() const { return mean(rmse); }
  double mean_score() const { return mean(score); }
};

namespace detail {

inline std::string num(double v, int digits = 10) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string file_safe(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return s;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

// Minimal line/bar chart writer.
struct Svg {
  double w = 640, h = 400, left = 60, right = 20, top = 40, bottom = 50;
  std::string body;

  void text(double x, double y, const std::string& s, const char* anchor = "middle",
            int size = 12) {
    body += "<text x=\"" + fixed(x, 1) + "\" y=\"" + fixed(y, 1) + "\" font-size=\"" +
            std::to_string(size) + "\" text-anchor=\"" + anchor + "\">" + s + "</text>\n";
  }
  void line(double x1, double y1, double x2, double y2, const char* stroke = "#000") {
    body += "<line x1=\"" + fixed(x1, 1) + "\" y1=\"" + fixed(y1, 1) + "\" x2=\"" + fixed(x2, 1) +
            "\" y2=\"" + fixed(y2, 1) + "\" stroke=\"" + stroke + "\"/>\n";
  }
  std::string str() const {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(w, 0) + "\" height=\"" +
           fixed(h, 0) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n" + body +
           "</svg>\n";
  }
};

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  return colors[i % 6];
}

inline std::string bar_chart(const std::string& title, const std::vector<std::string>& names,
                             const std::vector<double>& values) {
  Svg s;
  s.text(s.w / 2, 24, title, "middle", 14);
  const double x0 = s.left, x1 = s.w - s.right, y0 = s.h - s.bottom, y1 = s.top;
  double vmax = 0.0;
  for (double v : values)
    if (std::isfinite(v)) vmax = std::max(vmax, v);
  if (vmax <= 0.0) vmax = 1.0;
  s.line(x0, y0, x1, y0);
  s.line(x0, y0, x0, y1);
  s.text(x0 - 6, y1 + 4, num(vmax, 4), "end");
  s.text(x0 - 6, y0 + 4, "0", "end");
  const double slot = (x1 - x0) / static_cast<double>(std::max<std::size_t>(values.size(), 1));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::isfinite(values[i]) ? std::max(values[i], 0.0) : 0.0;
    const double bh = (y0 - y1) * v / vmax;
    const double bx = x0 + slot * static_cast<double>(i) + slot * 0.15;
    s.body += "<rect x=\"" + fixed(bx, 1) + "\" y=\"" + fixed(y0 - bh, 1) + "\" width=\"" +
              fixed(slot * 0.7, 1) + "\" height=\"" + fixed(bh, 1) + "\" fill=\"" + palette(i) +
              "\"/>\n";
    s.text(bx + slot * 0.35, y0 + 16, names[i]);
    s.text(bx + slot * 0.35, y0 - bh - 4, num(values[i], 4));
  }
  return s.str();
}

inline std::string line_chart(const std::string& title,
                              const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  Svg s;
  s.text(s.w / 2, 24, title, "middle", 14);
  const double x0 = s.left, x1 = s.w - s.right - 120, y0 = s.h - s.bottom, y1 = s.top;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t n = 1;
  for (const auto& [name, v] : series) {
    n = std::max(n, v.size());
    for (double x : v)
      if (std::isfinite(x)) lo = std::min(lo, x), hi = std::max(hi, x);
  }
  if (!(hi > lo)) hi = lo + 1.0;
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  s.line(x0, y0, x1, y0);
  s.line(x0, y0, x0, y1);
  s.text(x0 - 6, y1 + 4, num(hi, 4), "end");
  s.text(x0 - 6, y0 + 4, num(lo, 4), "end");
  s.text((x0 + x1) / 2, y0 + 30, "step");
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& v = series[k].second;
    std::string pts;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v[i])) continue;
      const double x = x0 + (x1 - x0) * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(n - 1, 1));
      const double y = y0 - (y0 - y1) * (v[i] - lo) / (hi - lo);
      pts += fixed(x, 1) + "," + fixed(y, 1) + " ";
    }
    s.body += "<polyline fill=\"none\" stroke=\"" + std::string(palette(k)) + "\" points=\"" + pts +
              "\"/>\n";
    s.text(x1 + 10, y1 + 16.0 * static_cast<double>(k + 1), series[k].first, "start");
  }
  return s.str();
}

}  // namespace detail

/// Writes results.csv (per-seed rows plus one "mean" row per record), a
/// markdown comparison table (rows = variant, columns = scenarios + Avg.) and
/// per-scenario SVG plots. Returns the written paths.
inline std::vector<std::filesystem::path> emit_report(const std::vector<ResultRecord>& records,
                                                      const std::filesystem::path& dir) {
  if (records.empty()) throw UsageError("emit_report needs at least one record");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw DataError("cannot create output directory " + dir.string());
  }
  std::vector<std::filesystem::path> paths;

  const auto csv_path = dir / "results.csv";
  {
    auto out = detail::open_out(csv_path);
    out << "scenario,variant,seed,rmse,score\n";
    for (const auto& r : records) {
      for (std::size_t i = 0; i < r.rmse.size(); ++i) {
        out << r.scenario << ',' << r.variant << ','
            << (i < r.seeds.size() ? std::to_string(r.seeds[i]) : std::string()) << ','
            << detail::num(r.rmse[i]) << ',' << detail::num(i < r.score.size() ? r.score[i] : std::nan(""))
            << '\n';
      }
      out << r.scenario << ',' << r.variant << ",mean," << detail::num(r.mean_rmse()) << ','
          << detail::num(r.mean_score()) << '\n';
    }
  }
  paths.push_back(csv_path);

  // Ordered by first appearance so reruns give identical files.
  std::vector<std::string> scenarios, variants;
  for (const auto& r : records) {
    if (std::find(scenarios.begin(), scenarios.end(), r.scenario) == scenarios.end())
      scenarios.push_back(r.scenario);
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end())
      variants.push_back(r.variant);
  }
  const bool show_variant =
      std::any_of(variants.begin(), variants.end(), [](const std::string& v) { return !v.empty(); });

  const auto table_path = dir / "comparison.md";
  {
    auto out = detail::open_out(table_path);
    for (const char* metric : {"RMSE", "Score"}) {
      const bool is_rmse = metric[0] == 'R';
      out << "## " << metric << "\n\n|";
      if (show_variant) out << " variant |";
      for (const auto& s : scenarios) out << ' ' << s << " |";
      out << " Avg. |\n|";
      if (show_variant) out << "---|";
      for (std::size_t i = 0; i <= scenarios.size(); ++i) out << "---|";
      out << '\n';
      for (const auto& v : variants) {
        out << '|';
        if (show_variant) out << ' ' << v << " |";
        double total = 0.0;
        std::size_t count = 0;
        for (const auto& s : scenarios) {
          auto it = std::find_if(records.begin(), records.end(), [&](const ResultRecord& r) {
            return r.scenario == s && r.variant == v;
          });
          if (it == records.end()) {
            out << " - |";
            continue;
          }
          const double m = is_rmse ? it->mean_rmse() : it->mean_score();
          out << ' ' << detail::fixed(m, 2) << " |";
          total += m;
          ++count;
        }
        out << ' ' << (count ? detail::fixed(total / static_cast<double>(count), 2) : "-") << " |\n";
      }
      out << '\n';
    }
  }
  paths.push_back(table_path);

  for (const auto& s : scenarios) {
    std::vector<std::string> names;
    std::vector<double> rm, sc;
    std::vector<std::pair<std::string, std::vector<double>>> curves;
    for (const auto& r : records) {
      if (r.scenario != s) continue;
      names.push_back(r.variant.empty() ? "model" : r.variant);
      rm.push_back(r.mean_rmse());
      sc.push_back(r.mean_score());
      for (const auto& c : r.curves)
        curves.push_back({(r.variant.empty() ? "" : r.variant + " ") + c.first, c.second});
    }
    const std::string stem = detail::file_safe(s);
    const auto rp = dir / (stem + "_rmse.svg");
    detail::open_out(rp) << detail::bar_chart(s + " RMSE", names, rm);
    paths.push_back(rp);
    const auto sp = dir / (stem + "_score.svg");
    detail::open_out(sp) << detail::bar_chart(s + " Score", names, sc);
    paths.push_back(sp);
    if (!curves.empty()) {
      const auto lp = dir / (stem + "_loss.svg");
      detail::open_out(lp) << detail::line_chart(s + " loss", curves);
      paths.push_back(lp);
    }
  }
  return paths;
}

}  // namespace eviadapt
