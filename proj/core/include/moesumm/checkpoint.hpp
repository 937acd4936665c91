#pragma once

// Binary checkpoint plus JSON sidecar.
//
// Layout (little-endian): "MOES", u32 version, u32 tensor count, then per
// tensor: u32 name length, name bytes, u8 rank, u64 dims, f64 values.
// The sidecar `<path>.json` holds the model config, provenance and vocabulary.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moesumm/corpus.hpp"
#include "moesumm/transformer.hpp"

namespace moesumm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedValues {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor>& tensors);
std::vector<NamedValues> decode_tensors(const std::vector<std::uint8_t>& bytes);

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

struct CheckpointData {
  TransformerParams params;
  nlohmann::json provenance = nlohmann::json::object();
  std::optional<Vocabulary> vocab;
};

void save_checkpoint(const std::filesystem::path& path, const TransformerParams& params,
                     const nlohmann::json& provenance, const Vocabulary* vocab);
/// Rebuilds the parameter layout from the sidecar config and fills it from
/// the binary file; any missing, extra or mis-shaped tensor is rejected.
CheckpointData load_checkpoint(const std::filesystem::path& path);

/// Deterministic digest of a file's bytes (FNV-1a, hex).
std::string file_digest(const std::filesystem::path& path);

}  // namespace moesumm
