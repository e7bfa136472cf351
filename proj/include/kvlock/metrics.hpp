#pragma once

#include "kvlock/mask_pipeline.hpp"

namespace kvlock {

// Background-restricted fidelity between two videos; mask=0 marks background.
// PSNR uses MAX = 1.0 and returns +inf for identical inputs. SSIM uses 8x8
// sliding windows with the default stabilizers; windows that touch any
// foreground pixel are dropped.
double background_psnr(const Video& a, const Video& b, const PixelMask& mask);
double background_ssim(const Video& a, const Video& b, const PixelMask& mask);

} // namespace kvlock
