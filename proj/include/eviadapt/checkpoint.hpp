#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "eviadapt/config.hpp"
#include "eviadapt/encoder.hpp"
#include "eviadapt/evidential_head.hpp"

namespace eviadapt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Pretrained source encoder and predictor, optionally with an adapted target encoder.
struct ModelCheckpoint {
  AdaptConfig config;
  std::uint64_t step = 0;
  LstmEncoder source_encoder;
  EvidentialHead head;
  std::optional<LstmEncoder> target_encoder;
};

/// 64-bit FNV-1a over the raw bytes of every parameter value, in order.
inline std::uint64_t parameter_checksum(const std::vector<ad::Parameter>& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : params)
    for (double v : p.value.data()) {
      unsigned char b[sizeof v];
      std::memcpy(b, &v, sizeof v);
      for (unsigned char x : b) h = (h ^ x) * 1099511628211ull;
    }
  return h;
}

namespace detail {

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError(path + ": truncated checkpoint");
  return v;
}

inline void put_params(std::ostream& out, const std::vector<ad::Parameter>& params) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint64_t>(out, p.value.rows());
    put<std::uint64_t>(out, p.value.cols());
    out.write(reinterpret_cast<const char*>(p.value.data().data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
}

// Reads a parameter block into `params`, which must already have the right names and shapes.
// Returns false for an empty block.
inline bool get_params(std::istream& in, std::vector<ad::Parameter>& params, const std::string& path) {
  const auto count = get<std::uint32_t>(in, path);
  if (count == 0) return false;
  if (count != params.size()) {
    throw DataError(path + ": checkpoint has " + std::to_string(count) + " tensors, model expects " +
                    std::to_string(params.size()));
  }
  for (auto& p : params) {
    std::string name(get<std::uint32_t>(in, path), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto rows = get<std::uint64_t>(in, path);
    const auto cols = get<std::uint64_t>(in, path);
    if (name != p.name || rows != p.value.rows() || cols != p.value.cols()) {
      throw DataError(path + ": tensor '" + name + "' does not match model tensor '" + p.name + "' " +
                      p.value.shape_string());
    }
    in.read(reinterpret_cast<char*>(p.value.data().data()),
            static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    if (!in) throw DataError(path + ": truncated checkpoint");
  }
  return true;
}

}  // namespace detail

inline void save_checkpoint(const ModelCheckpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write("EVIA", 4);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = to_json(ck.config).dump();
  detail::put<std::uint64_t>(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  detail::put<std::uint64_t>(out, ck.step);
  detail::put_params(out, ck.source_encoder.parameters());
  detail::put_params(out, ck.head.parameters());
  if (ck.target_encoder) {
    detail::put_params(out, ck.target_encoder->parameters());
  } else {
    detail::put<std::uint32_t>(out, 0);
  }
  if (!out) throw DataError("write failed for " + path.string());
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string p = path.string();
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "EVIA", 4) != 0) throw DataError(p + ": not a checkpoint file");
  const auto version = detail::get<std::uint32_t>(in, p);
  if (version != kCheckpointVersion) {
    throw DataError(p + ": checkpoint format version " + std::to_string(version) +
                    ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  std::string cfg(detail::get<std::uint64_t>(in, p), '\0');
  in.read(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  if (!in) throw DataError(p + ": truncated checkpoint");
  const json j = json::parse(cfg, nullptr, false);
  if (j.is_discarded()) throw DataError(p + ": corrupt config snapshot");

  ModelCheckpoint ck;
  ck.config = config_from_json(j);
  ck.step = detail::get<std::uint64_t>(in, p);
  ck.source_encoder = LstmEncoder::zeros(ck.config.encoder);
  ck.head = EvidentialHead::zeros(ck.config.encoder.hidden_size, ck.config.quantile_set);
  detail::get_params(in, ck.source_encoder.parameters(), p);
  detail::get_params(in, ck.head.parameters(), p);
  LstmEncoder target = LstmEncoder::zeros(ck.config.encoder);
  if (detail::get_params(in, target.parameters(), p)) ck.target_encoder = std::move(target);
  return ck;
}

}  // namespace eviadapt
