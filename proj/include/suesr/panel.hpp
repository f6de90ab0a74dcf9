#pragma once

#include <optional>
#include <string>

#include "suesr/tensor.hpp"
#include "suesr/uncertainty.hpp"

namespace suesr {

inline constexpr int kPanelGutter = 4;
inline constexpr int kPanelCaptionHeight = 24;

/// "PSNR 27.31 dB  SSIM 0.812", with "inf" for identical images.
std::string panel_caption(double psnr_db, double ssim_value);

/// Side-by-side comparison LR | SR | HR [| heatmap] on a white canvas with
/// 4 px gutters and a caption strip reporting PSNR/SSIM of SR against HR.
/// LR is enlarged by pixel replication to the SR height.
RgbImage emit_panel(const Tensor& lr, const Tensor& sr, const Tensor& hr,
                    const std::optional<RgbImage>& heatmap = std::nullopt);

}  // namespace suesr
