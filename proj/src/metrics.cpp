#include "kvlock/metrics.hpp"

#include <cmath>
#include <limits>

namespace kvlock {

namespace {

void check_shapes(const Video& a, const Video& b, const PixelMask& mask) {
    if (a.f != b.f || a.h != b.h || a.w != b.w) throw ConfigError("metrics: video shape mismatch");
    if (a.f != mask.f || a.h != mask.h || a.w != mask.w) {
        throw ConfigError("metrics: mask shape mismatch");
    }
}

} // namespace

double background_psnr(const Video& a, const Video& b, const PixelMask& mask) {
    check_shapes(a, b, mask);
    double mse = 0.0;
    std::size_t count = 0;
    for (int f = 0; f < a.f; ++f) {
        for (int y = 0; y < a.h; ++y) {
            for (int x = 0; x < a.w; ++x) {
                if (mask.at(f, y, x)) continue;
                for (int c = 0; c < 3; ++c) {
                    const double d = a.at(c, f, y, x) - b.at(c, f, y, x);
                    mse += d * d;
                    ++count;
                }
            }
        }
    }
    if (count == 0) throw ConfigError("background_psnr: mask leaves no background pixels");
    mse /= static_cast<double>(count);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse); // MAX = 1.0 by the encoder contract
}

double background_ssim(const Video& a, const Video& b, const PixelMask& mask) {
    check_shapes(a, b, mask);
    constexpr int kWin = 8;
    constexpr double kC1 = 0.01 * 0.01; // (K1 * L)^2 with L = 1
    constexpr double kC2 = 0.03 * 0.03;

    double total = 0.0;
    std::size_t windows = 0;
    for (int f = 0; f < a.f; ++f) {
        for (int y = 0; y + kWin <= a.h; ++y) {
            for (int x = 0; x + kWin <= a.w; ++x) {
                bool background = true;
                for (int dy = 0; dy < kWin && background; ++dy) {
                    for (int dx = 0; dx < kWin && background; ++dx) {
                        if (mask.at(f, y + dy, x + dx)) background = false;
                    }
                }
                if (!background) continue; // windows touching foreground are dropped

                for (int c = 0; c < 3; ++c) {
                    double ma = 0.0, mb = 0.0;
                    for (int dy = 0; dy < kWin; ++dy) {
                        for (int dx = 0; dx < kWin; ++dx) {
                            ma += a.at(c, f, y + dy, x + dx);
                            mb += b.at(c, f, y + dy, x + dx);
                        }
                    }
                    const double n = kWin * kWin;
                    ma /= n;
                    mb /= n;
                    double va = 0.0, vb = 0.0, cov = 0.0;
                    for (int dy = 0; dy < kWin; ++dy) {
                        for (int dx = 0; dx < kWin; ++dx) {
                            const double da = a.at(c, f, y + dy, x + dx) - ma;
                            const double db = b.at(c, f, y + dy, x + dx) - mb;
                            va += da * da;
                            vb += db * db;
                            cov += da * db;
                        }
                    }
                    va /= n - 1.0;
                    vb /= n - 1.0;
                    cov /= n - 1.0;
                    const double ssim = ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
                                        ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
                    total += ssim;
                    ++windows;
                }
            }
        }
    }
    if (windows == 0) {
        throw ConfigError("background_ssim: no fully-background 8x8 window exists");
    }
    return total / static_cast<double>(windows);
}

} // namespace kvlock
