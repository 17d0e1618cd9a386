#include "tsca/augment.hpp"

#include <cmath>

#include "tsca/dataio.hpp"

namespace tsca {

void CropResizeConfig::validate() const {
  if (!(scale_min > 0.0) || scale_min > scale_max || scale_max > 1.0)
    throw ArgumentError("CropResizeConfig: need 0 < scale_min <= scale_max <= 1");
  if (out_len < 2) throw ArgumentError("CropResizeConfig: out_len must be >= 2");
}

int crop_length(const CropDraw& draw, int in_len) {
  return static_cast<int>(std::llround(draw.fraction * static_cast<double>(in_len)));
}

CropDraw sample_crop(std::mt19937_64& rng, const CropResizeConfig& cfg, int in_len) {
  cfg.validate();
  if (in_len < 2) throw ArgumentError("sample_crop: in_len must be >= 2");
  CropDraw draw;
  draw.fraction = std::uniform_real_distribution<double>(cfg.scale_min, cfg.scale_max)(rng);
  int len = crop_length(draw, in_len);
  if (len > in_len) len = in_len;
  draw.start = std::uniform_int_distribution<int>(0, in_len - len)(rng);
  return draw;
}

Eigen::VectorXd apply_crop_resize(const CropDraw& draw,
                                  const Eigen::Ref<const Eigen::VectorXd>& series,
                                  int out_len) {
  const int n = static_cast<int>(series.size());
  const int len = std::min(crop_length(draw, n), n);
  if (len < 2) throw ArgumentError("apply_crop_resize: window shorter than 2 samples");
  if (draw.start < 0 || draw.start + len > n)
    throw ArgumentError("apply_crop_resize: window out of bounds");
  return resample_linear(series.segment(draw.start, len), out_len);
}

}  // namespace tsca
