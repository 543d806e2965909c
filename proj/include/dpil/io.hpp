#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "dpil/random.hpp"

namespace dpil {

using Json = nlohmann::json;

/// Writes `contents` to `path` via a sibling temp file and rename, so readers
/// never observe a partially written file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) { return Json(v).dump(); }

inline std::string content_hash(std::string_view bytes) {
  Fnv1a h;
  h.update(bytes);
  return hex64(h.digest());
}

/// Versioned model container shared by denoiser and policy checkpoints.
inline constexpr int kCheckpointVersion = 1;

inline Json make_checkpoint(std::string_view kind, Json body, std::uint64_t seed) {
  return Json{{"format", "dpil-checkpoint"},
              {"version", kCheckpointVersion},
              {"kind", kind},
              {"seed_lineage", {seed}},
              {"body", std::move(body)}};
}

inline const Json& checkpoint_body(const Json& ckpt, std::string_view kind) {
  if (!ckpt.is_object() || ckpt.value("format", "") != "dpil-checkpoint")
    throw std::runtime_error("not a dpil checkpoint");
  if (ckpt.at("version").get<int>() != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version");
  if (ckpt.at("kind").get<std::string>() != kind)
    throw std::runtime_error("checkpoint kind mismatch: expected " + std::string(kind) + ", got " +
                             ckpt.at("kind").get<std::string>());
  return ckpt.at("body");
}

}  // namespace dpil
