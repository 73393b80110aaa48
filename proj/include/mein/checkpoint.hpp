#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "mein/params.hpp"

namespace mein {

enum class StageTag : std::uint32_t { kExpert = 1, kImitators = 2, kMixture = 3 };

std::string_view stage_name(StageTag tag);

enum class CheckpointErrorKind {
  kIo,
  kNotACheckpoint,
  kVersion,
  kTruncated,
  kShape,
  kMissing,
  kStage,
};

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  StageTag stage = StageTag::kExpert;
  std::string config_text;
  ParamList tensors;  // constants; names as written

  const Tensor* find(std::string_view name) const;
};

// Layout, little-endian:
//   "MEINCKPT" | u32 version | u32 stage | u64 n, config bytes[n]
//   u32 count | count x (u32 n, name bytes[n] | u32 rank | u64 dims[rank] | u64 offset)
//   u64 floats | f32 data[floats]
// Offsets count floats from the start of the data block.
void save_checkpoint(const std::filesystem::path& path, StageTag stage, const ParamList& params,
                     const std::string& config_text);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads and checks the stage tag; a wrong tag throws kStage naming the
/// stage that was expected.
Checkpoint load_checkpoint(const std::filesystem::path& path, StageTag expected);

/// Copies stored values into each destination tensor by name. Missing names
/// and shape differences throw kMissing / kShape.
void restore(const Checkpoint& checkpoint, const ParamList& destination);

}  // namespace mein
