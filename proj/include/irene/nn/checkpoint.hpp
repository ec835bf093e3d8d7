#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "irene/nn/optim.hpp"
#include "irene/util/io.hpp"

namespace irene::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint layout assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'I', 'R', 'N', 'C', 'K', 'P', 'T', '1'};

/// Layout: 8-byte magic, u64 header length, JSON header (caller metadata, step, parameter names
/// and shapes), then for each parameter in header order its values, first and second moments as
/// raw little-endian doubles.
inline std::string encode_checkpoint(const ParameterStore& store, const nlohmann::json& meta) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& e : store.entries())
    params.push_back({{"name", e.name}, {"rows", e.tensor.rows()}, {"cols", e.tensor.cols()}});
  const std::string header =
      nlohmann::json{{"format", 1}, {"meta", meta}, {"step", store.step()}, {"params", params}}.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint64_t len = header.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += header;
  auto put = [&](const Mat& m) { out.append(reinterpret_cast<const char*>(m.data()), sizeof(double) * m.size()); };
  for (const auto& e : store.entries()) {
    put(e.tensor.value());
    put(e.m);
    put(e.v);
  }
  return out;
}

struct Checkpoint {
  nlohmann::json meta;
  ParameterStore store;
};

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw CheckpointError("not a checkpoint file (bad magic)");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof len);
  if (16 + len > bytes.size()) throw CheckpointError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const std::exception& ex) {
    throw CheckpointError(std::string("bad checkpoint header: ") + ex.what());
  }
  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  std::size_t at = 16 + len;
  auto take = [&](Index rows, Index cols) {
    Mat m(rows, cols);
    const std::size_t n = sizeof(double) * static_cast<std::size_t>(m.size());
    if (at + n > bytes.size()) throw CheckpointError("truncated checkpoint payload");
    std::memcpy(m.data(), bytes.data() + at, n);
    at += n;
    return m;
  };
  for (const auto& p : header.at("params")) {
    const Index r = p.at("rows").get<Index>(), c = p.at("cols").get<Index>();
    ck.store.add(p.at("name").get<std::string>(), take(r, c));
    auto& e = ck.store.entries().back();
    e.m = take(r, c);
    e.v = take(r, c);
  }
  if (at != bytes.size()) throw CheckpointError("trailing bytes after checkpoint payload");
  ck.store.set_step(header.at("step").get<std::int64_t>());
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store,
                            const nlohmann::json& meta) {
  util::atomic_write(path, encode_checkpoint(store, meta));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(util::read_file(path));
}

/// Overwrites values, moments and step of `dst` from a checkpoint with identical layout.
inline void restore(ParameterStore& dst, const ParameterStore& src) {
  if (dst.size() != src.size()) throw CheckpointError("checkpoint parameter count does not match the model");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto& d = dst.entries()[i];
    const auto& s = src.entries()[i];
    if (d.name != s.name || d.tensor.rows() != s.tensor.rows() || d.tensor.cols() != s.tensor.cols())
      throw CheckpointError("checkpoint parameter \"" + s.name + "\" does not match model parameter \"" + d.name + "\"");
    d.tensor.mutable_value() = s.tensor.value();
    d.m = s.m;
    d.v = s.v;
    d.tensor.zero_grad();
  }
  dst.set_step(src.step());
}

}  // namespace irene::nn
