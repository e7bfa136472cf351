#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "kvlock/tensor.hpp"

namespace kvlock {

// Compression ratio (s_t, s_h, s_w) and patch size (p_t, p_h, p_w).
using Triple = std::array<int, 3>;

inline constexpr Triple kCompression{4, 8, 8};
inline constexpr Triple kPatchSize{1, 2, 2};
inline constexpr int kLatentChannels = 16;

// Per-frame binary edit mask, (F, H, W), entries 0/1.
struct PixelMask {
    int f = 0, h = 0, w = 0;
    std::vector<uint8_t> v;

    PixelMask() = default;
    PixelMask(int f_, int h_, int w_, uint8_t fill = 0)
        : f(f_), h(h_), w(w_), v(static_cast<std::size_t>(f_) * h_ * w_, fill) {}
    uint8_t& at(int fi, int yi, int xi) {
        return v[(static_cast<std::size_t>(fi) * h + yi) * w + xi];
    }
    uint8_t at(int fi, int yi, int xi) const {
        return v[(static_cast<std::size_t>(fi) * h + yi) * w + xi];
    }
};

// Latent-space mask, (1, T, h, w).
struct LatentMask {
    int t = 0, h = 0, w = 0;
    std::vector<uint8_t> v;

    LatentMask() = default;
    LatentMask(int t_, int h_, int w_, uint8_t fill = 0)
        : t(t_), h(h_), w(w_), v(static_cast<std::size_t>(t_) * h_ * w_, fill) {}
    uint8_t& at(int ti, int yi, int xi) {
        return v[(static_cast<std::size_t>(ti) * h + yi) * w + xi];
    }
    uint8_t at(int ti, int yi, int xi) const {
        return v[(static_cast<std::size_t>(ti) * h + yi) * w + xi];
    }
};

// Token-space mask; 1 = editable foreground, 0 = locked background.
struct TokenMask {
    std::vector<uint8_t> v;
    std::size_t size() const { return v.size(); }
};

// RGB video (3, F, H, W), channel-major, values nominally in [0, 1].
struct Video {
    int f = 0, h = 0, w = 0;
    std::vector<double> v;

    Video() = default;
    Video(int f_, int h_, int w_, double fill = 0.0)
        : f(f_), h(h_), w(w_), v(3ull * f_ * h_ * w_, fill) {}
    double& at(int ci, int fi, int yi, int xi) {
        return v[((static_cast<std::size_t>(ci) * f + fi) * h + yi) * w + xi];
    }
    double at(int ci, int fi, int yi, int xi) const {
        return v[((static_cast<std::size_t>(ci) * f + fi) * h + yi) * w + xi];
    }
};

// Number of latent temporal slices for F frames: frame 0 alone, then windows
// of s_t, with a short final window when the frames do not tile evenly.
int latent_frames(int f, int s_t);

// Frame range [begin, end) covered by latent slice ti.
std::pair<int, int> temporal_window(int ti, int f, int s_t);

// Max over each temporal window, then spatial max-pool by (s_h, s_w).
LatentMask aggregate_temporal(const PixelMask& mask, const Triple& s);

// 3-D max-pool with kernel = stride = p, flattened temporal-major then
// row-major spatial. m_token[i] = 1 iff token i covers >= 1 masked cell.
TokenMask project_to_tokens(const LatentMask& lmask, const Triple& p);

// Deterministic VAE stand-in: average-pool over the Eq.-style temporal
// windows and (s_h, s_w) spatial blocks, then a fixed seeded orthonormal
// lift from 3 to kLatentChannels channels of the centered RGB values.
Latent toy_encode(const Video& video, const Triple& s);

// Inverse of toy_encode up to block averaging: orthonormal projection back to
// RGB, nearest-neighbor upsample over the same windows, clamp to [0, 1].
Video toy_decode(const Latent& z, const Triple& s, int frames);

// Binary raster formats, little-endian:
//   KVLMASK1: magic(8) F,H,W u32, then F*H*W bytes in {0,1}
//   KVLVID1f: magic(8) F,H,W u32, then 3*F*H*W f32 channel-major
void save_mask(const PixelMask& mask, const std::filesystem::path& path);
PixelMask load_mask(const std::filesystem::path& path);
void save_video(const Video& video, const std::filesystem::path& path);
Video load_video(const std::filesystem::path& path);

} // namespace kvlock
