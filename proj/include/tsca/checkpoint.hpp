#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "tsca/augment.hpp"
#include "tsca/encoder.hpp"
#include "tsca/train_config.hpp"

#include <nlohmann/json.hpp>

namespace tsca {

/// Trained parameters plus provenance. On disk:
///   bytes 0..4   magic "TSCA1"
///   bytes 5..8   header length, 32-bit little-endian unsigned
///   header       UTF-8 JSON: tensor table (shape + byte offset into the
///                payload, in payload order), config echo, seed, epochs,
///                final loss
///   payload      raw float32 little-endian tensor data, column-major,
///                contiguous in header order
struct Checkpoint {
  EncoderParamsT<float> params;
  TrainConfig train;
  CropResizeConfig aug;
  std::uint64_t seed = 0;
  int epochs_run = 0;
  double final_loss = 0.0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// The JSON header that save_checkpoint writes (for inspection tools).
nlohmann::ordered_json checkpoint_header(const Checkpoint& ckpt);

}  // namespace tsca
