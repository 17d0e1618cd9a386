#pragma once

#include <cstdint>
#include <random>

#include "tsca/common.hpp"

namespace tsca {

/// The crop-then-resize transformation family: a contiguous window whose
/// length is a uniform fraction of the input, stretched back to out_len.
struct CropResizeConfig {
  double scale_min = 0.7;
  double scale_max = 0.8;
  int out_len = 512;

  void validate() const;
};

/// One sampled transformation: window fraction and integer start offset.
struct CropDraw {
  double fraction = 1.0;
  int start = 0;
};

/// Window length in samples for an input of in_len.
int crop_length(const CropDraw& draw, int in_len);

/// fraction ~ Uniform[scale_min, scale_max], start uniform over all valid
/// offsets. Deterministic for a fixed rng state.
CropDraw sample_crop(std::mt19937_64& rng, const CropResizeConfig& cfg, int in_len);

/// Extracts the window and linearly resizes it to out_len samples.
Eigen::VectorXd apply_crop_resize(const CropDraw& draw,
                                  const Eigen::Ref<const Eigen::VectorXd>& series,
                                  int out_len);

}  // namespace tsca
