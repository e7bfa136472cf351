#include "kvlock/mask_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kvlock/binio.hpp"
#include "kvlock/rng.hpp"

namespace kvlock {

namespace {

void check_spatial_divisible(int h, int w, int sh, int sw, const char* what) {
    if (h % sh != 0 || w % sw != 0) {
        throw ConfigError(std::string(what) + ": spatial dims (" + std::to_string(h) + "," +
                          std::to_string(w) + ") not divisible by (" + std::to_string(sh) + "," +
                          std::to_string(sw) + ")");
    }
}

// Fixed orthonormal 3 -> kLatentChannels lift shared by every run.
const Matrix& channel_lift() {
    static const Matrix lift = [] {
        std::mt19937_64 rng(0x6b766c6f636b3031ull); // dedicated constant seed
        Matrix a(kLatentChannels, 3);
        std::normal_distribution<double> dist(0.0, 1.0);
        for (auto& x : a.v) x = dist(rng);
        // Gram-Schmidt on the three columns.
        for (int c = 0; c < 3; ++c) {
            for (int p = 0; p < c; ++p) {
                double dot = 0.0;
                for (int r = 0; r < kLatentChannels; ++r) dot += a.at(r, c) * a.at(r, p);
                for (int r = 0; r < kLatentChannels; ++r) a.at(r, c) -= dot * a.at(r, p);
            }
            double norm = 0.0;
            for (int r = 0; r < kLatentChannels; ++r) norm += a.at(r, c) * a.at(r, c);
            norm = std::sqrt(norm);
            for (int r = 0; r < kLatentChannels; ++r) a.at(r, c) /= norm;
        }
        return a;
    }();
    return lift;
}

} // namespace

int latent_frames(int f, int s_t) {
    if (f < 1) throw ConfigError("latent_frames: need F >= 1");
    if (f == 1) return 1;
    return 1 + (f - 2) / s_t + 1;
}

std::pair<int, int> temporal_window(int ti, int f, int s_t) {
    if (ti == 0) return {0, 1};
    const int begin = 1 + (ti - 1) * s_t;
    return {begin, std::min(begin + s_t, f)};
}

LatentMask aggregate_temporal(const PixelMask& mask, const Triple& s) {
    check_spatial_divisible(mask.h, mask.w, s[1], s[2], "aggregate_temporal");
    const int lt = latent_frames(mask.f, s[0]);
    const int lh = mask.h / s[1];
    const int lw = mask.w / s[2];
    LatentMask out(lt, lh, lw);
    for (int ti = 0; ti < lt; ++ti) {
        const auto [fb, fe] = temporal_window(ti, mask.f, s[0]);
        for (int yi = 0; yi < lh; ++yi) {
            for (int xi = 0; xi < lw; ++xi) {
                uint8_t m = 0;
                for (int fi = fb; fi < fe && !m; ++fi) {
                    for (int dy = 0; dy < s[1] && !m; ++dy) {
                        for (int dx = 0; dx < s[2] && !m; ++dx) {
                            m = mask.at(fi, yi * s[1] + dy, xi * s[2] + dx);
                        }
                    }
                }
                out.at(ti, yi, xi) = m;
            }
        }
    }
    return out;
}

TokenMask project_to_tokens(const LatentMask& lmask, const Triple& p) {
    if (lmask.t % p[0] != 0) {
        throw ConfigError("project_to_tokens: T not divisible by patch_t");
    }
    check_spatial_divisible(lmask.h, lmask.w, p[1], p[2], "project_to_tokens");
    const int gt = lmask.t / p[0];
    const int gh = lmask.h / p[1];
    const int gw = lmask.w / p[2];
    TokenMask out;
    out.v.assign(static_cast<std::size_t>(gt) * gh * gw, 0);
    std::size_t i = 0;
    for (int ti = 0; ti < gt; ++ti) {
        for (int yi = 0; yi < gh; ++yi) {
            for (int xi = 0; xi < gw; ++xi, ++i) {
                uint8_t m = 0;
                for (int dt = 0; dt < p[0] && !m; ++dt) {
                    for (int dy = 0; dy < p[1] && !m; ++dy) {
                        for (int dx = 0; dx < p[2] && !m; ++dx) {
                            m = lmask.at(ti * p[0] + dt, yi * p[1] + dy, xi * p[2] + dx);
                        }
                    }
                }
                out.v[i] = m;
            }
        }
    }
    return out;
}

Latent toy_encode(const Video& video, const Triple& s) {
    check_spatial_divisible(video.h, video.w, s[1], s[2], "toy_encode");
    const int lt = latent_frames(video.f, s[0]);
    const int lh = video.h / s[1];
    const int lw = video.w / s[2];
    const Matrix& lift = channel_lift();

    Latent z(kLatentChannels, lt, lh, lw);
    for (int ti = 0; ti < lt; ++ti) {
        const auto [fb, fe] = temporal_window(ti, video.f, s[0]);
        const double inv_n = 1.0 / (static_cast<double>(fe - fb) * s[1] * s[2]);
        for (int yi = 0; yi < lh; ++yi) {
            for (int xi = 0; xi < lw; ++xi) {
                double rgb[3];
                for (int c = 0; c < 3; ++c) {
                    double acc = 0.0;
                    for (int fi = fb; fi < fe; ++fi) {
                        for (int dy = 0; dy < s[1]; ++dy) {
                            for (int dx = 0; dx < s[2]; ++dx) {
                                acc += video.at(c, fi, yi * s[1] + dy, xi * s[2] + dx);
                            }
                        }
                    }
                    rgb[c] = acc * inv_n;
                }
                for (int ch = 0; ch < kLatentChannels; ++ch) {
                    z.at(ch, ti, yi, xi) = lift.at(ch, 0) * rgb[0] + lift.at(ch, 1) * rgb[1] +
                                           lift.at(ch, 2) * rgb[2];
                }
            }
        }
    }
    return z;
}

Video toy_decode(const Latent& z, const Triple& s, int frames) {
    if (z.c != kLatentChannels) {
        throw ConfigError("toy_decode: expected " + std::to_string(kLatentChannels) +
                          " channels, got " + std::to_string(z.c));
    }
    if (latent_frames(frames, s[0]) != z.t) {
        throw ConfigError("toy_decode: frame count " + std::to_string(frames) +
                          " inconsistent with latent T=" + std::to_string(z.t));
    }
    const Matrix& lift = channel_lift();
    Video out(frames, z.h * s[1], z.w * s[2]);
    for (int ti = 0; ti < z.t; ++ti) {
        const auto [fb, fe] = temporal_window(ti, frames, s[0]);
        for (int yi = 0; yi < z.h; ++yi) {
            for (int xi = 0; xi < z.w; ++xi) {
                for (int c = 0; c < 3; ++c) {
                    double dot = 0.0;
                    for (int ch = 0; ch < kLatentChannels; ++ch) {
                        dot += lift.at(ch, c) * z.at(ch, ti, yi, xi);
                    }
                    const double val = std::clamp(dot, 0.0, 1.0);
                    for (int fi = fb; fi < fe; ++fi) {
                        for (int dy = 0; dy < s[1]; ++dy) {
                            for (int dx = 0; dx < s[2]; ++dx) {
                                out.at(c, fi, yi * s[1] + dy, xi * s[2] + dx) = val;
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

void save_mask(const PixelMask& mask, const std::filesystem::path& path) {
    binio::Writer w(path);
    w.magic("KVLMASK1");
    w.u32(static_cast<uint32_t>(mask.f));
    w.u32(static_cast<uint32_t>(mask.h));
    w.u32(static_cast<uint32_t>(mask.w));
    w.bytes(mask.v.data(), mask.v.size());
    w.close();
}

PixelMask load_mask(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.expect_magic("KVLMASK1");
    PixelMask mask;
    mask.f = static_cast<int>(r.u32());
    mask.h = static_cast<int>(r.u32());
    mask.w = static_cast<int>(r.u32());
    if (mask.f < 1 || mask.h < 1 || mask.w < 1) {
        throw IntegrityError("bad mask dimensions in " + path.string());
    }
    mask.v.resize(static_cast<std::size_t>(mask.f) * mask.h * mask.w);
    r.bytes(mask.v.data(), mask.v.size());
    r.expect_eof();
    for (uint8_t b : mask.v) {
        if (b > 1) throw IntegrityError("mask bytes must be 0/1: " + path.string());
    }
    return mask;
}

void save_video(const Video& video, const std::filesystem::path& path) {
    binio::Writer w(path);
    w.magic("KVLVID1f");
    w.u32(static_cast<uint32_t>(video.f));
    w.u32(static_cast<uint32_t>(video.h));
    w.u32(static_cast<uint32_t>(video.w));
    w.f32s(video.v.data(), video.v.size());
    w.close();
}

Video load_video(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.expect_magic("KVLVID1f");
    Video video;
    video.f = static_cast<int>(r.u32());
    video.h = static_cast<int>(r.u32());
    video.w = static_cast<int>(r.u32());
    if (video.f < 1 || video.h < 1 || video.w < 1) {
        throw IntegrityError("bad video dimensions in " + path.string());
    }
    video.v.resize(3ull * video.f * video.h * video.w);
    r.f32s(video.v.data(), video.v.size());
    r.expect_eof();
    return video;
}

} // namespace kvlock
