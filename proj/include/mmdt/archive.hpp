#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>

#include "mmdt/params.hpp"

namespace mmdt {

inline constexpr char kArchiveMagic[8] = {'M', 'M', 'D', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kArchiveVersion = 1;

/// One stored tensor; the dtype is kept so f32 and f64 payloads round-trip bit-exactly.
using StoredTensor = std::variant<Tensor<float>, Tensor<double>>;

struct Archive {
  std::map<std::string, StoredTensor> tensors;
  std::map<std::string, std::string> metadata;

  template <typename S>
  void put(const NamedTensors<S>& state, const std::string& prefix = "") {
    for (const auto& [k, v] : state) tensors.insert_or_assign(prefix + k, v);
  }
  /// Tensors under `prefix` (stripped), converted to S.
  template <typename S>
  NamedTensors<S> get(const std::string& prefix = "") const {
    NamedTensors<S> out;
    for (const auto& [k, v] : tensors) {
      if (k.rfind(prefix, 0) != 0) continue;
      std::visit([&](const auto& t) { out.emplace(k.substr(prefix.size()), t.template cast<S>()); }, v);
    }
    return out;
  }
  const std::string& meta(const std::string& key) const;
};

/// Layout: magic, u32 version, u32 count, entries (u32-length name, u8 dtype, u8 rank,
/// u32 dims, payload), then u32-length "key=value\n" metadata text. All little-endian.
void save_archive(const Archive& archive, const std::filesystem::path& path);
/// Throws CorruptArchiveError (with byte offset) on bad magic, version, or truncation.
Archive load_archive(const std::filesystem::path& path);

template <typename S>
void save_checkpoint(const NamedTensors<S>& params, const std::filesystem::path& path,
                     const std::map<std::string, std::string>& metadata = {}) {
  Archive a;
  a.put(params);
  a.metadata = metadata;
  save_archive(a, path);
}

inline NamedTensors<float> load_checkpoint(const std::filesystem::path& path) {
  return load_archive(path).get<float>();
}

}  // namespace mmdt
