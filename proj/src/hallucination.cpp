#include "kvlock/hallucination.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

namespace kvlock {

std::vector<double> masked_reduce(std::span<const Latent> batch, const LatentMask& lmask) {
    if (batch.empty()) throw ConfigError("masked_reduce: empty batch");
    const Latent& first = batch.front();
    if (first.t != lmask.t || first.h != lmask.h || first.w != lmask.w) {
        throw ConfigError("masked_reduce: mask (" + std::to_string(lmask.t) + "," +
                          std::to_string(lmask.h) + "," + std::to_string(lmask.w) +
                          ") does not broadcast over latent");
    }
    const bool degenerate =
        std::all_of(lmask.v.begin(), lmask.v.end(), [](uint8_t m) { return m == 0; });
    if (degenerate) {
        static bool warned = false;
        if (!warned) {
            std::cerr << "warning: all-zero mask in masked_reduce; variance signal is empty\n";
            warned = true;
        }
    }

    std::vector<double> out(first.size(), 0.0);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const std::size_t plane = lmask.v.size();
    for (const Latent& x : batch) {
        require_same_shape(first, x, "masked_reduce");
        for (int c = 0; c < x.c; ++c) {
            const std::size_t off = static_cast<std::size_t>(c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                if (lmask.v[i]) out[off + i] += x.v[off + i] * inv_b;
            }
        }
    }
    return out;
}

std::vector<std::size_t> mask_support(const LatentMask& lmask, int channels) {
    std::vector<std::size_t> support;
    const std::size_t plane = lmask.v.size();
    for (int c = 0; c < channels; ++c) {
        const std::size_t off = static_cast<std::size_t>(c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            if (lmask.v[i]) support.push_back(off + i);
        }
    }
    return support;
}

TrajectoryWindow::TrajectoryWindow(int window, std::size_t vec_len)
    : TrajectoryWindow(window, vec_len, [vec_len] {
          std::vector<std::size_t> all(vec_len);
          std::iota(all.begin(), all.end(), std::size_t{0});
          return all;
      }()) {}

TrajectoryWindow::TrajectoryWindow(int window, std::size_t vec_len,
                                   std::vector<std::size_t> support)
    : window_(window), vec_len_(vec_len), support_(std::move(support)) {
    if (window_ < 2) throw ConfigError("TrajectoryWindow: window must be >= 2");
    for (std::size_t idx : support_) {
        if (idx >= vec_len_) throw ConfigError("TrajectoryWindow: support index out of range");
    }
    ring_.assign(static_cast<std::size_t>(window_) * support_.size(), 0.0);
    sum_.assign(support_.size(), 0.0);
    sum_sq_.assign(support_.size(), 0.0);
}

std::optional<double> TrajectoryWindow::push(std::span<const double> vec) {
    if (vec.size() != vec_len_) {
        throw ConfigError("TrajectoryWindow: vector length " + std::to_string(vec.size()) +
                          " != " + std::to_string(vec_len_));
    }
    double* slot = ring_.data() + static_cast<std::size_t>(head_) * support_.size();
    const bool evict = count_ >= window_;
    for (std::size_t j = 0; j < support_.size(); ++j) {
        const double x = vec[support_[j]];
        if (evict) {
            const double old = slot[j];
            sum_[j] -= old;
            sum_sq_[j] -= old * old;
        }
        slot[j] = x;
        sum_[j] += x;
        sum_sq_[j] += x * x;
    }
    head_ = (head_ + 1) % window_;
    if (count_ < window_) ++count_;
    return variance();
}

std::optional<double> TrajectoryWindow::variance() const {
    if (count_ < window_) return std::nullopt;
    if (support_.empty()) return 0.0;
    const double w = static_cast<double>(window_);
    double acc = 0.0;
    for (std::size_t j = 0; j < support_.size(); ++j) {
        const double var = (sum_sq_[j] - sum_[j] * sum_[j] / w) / (w - 1.0);
        acc += std::max(var, 0.0);
    }
    return acc / static_cast<double>(support_.size());
}

double fusion_rate(std::optional<double> sigma2, const DetectorConfig& cfg, bool in_window) {
    if (!sigma2.has_value() || !in_window) return 0.0;
    return std::clamp(*sigma2 / cfg.tau, 0.0, 1.0);
}

bool hallucination_flag(std::optional<double> sigma2, const DetectorConfig& cfg, bool in_window) {
    return sigma2.has_value() && in_window && *sigma2 > cfg.tau;
}

double hal_metric(const std::vector<std::vector<double>>& trace) {
    if (trace.size() < 2) throw ConfigError("hal_metric: trace needs >= 2 entries");
    const std::size_t len = trace.front().size();
    for (const auto& v : trace) {
        if (v.size() != len) throw ConfigError("hal_metric: ragged trace");
    }
    if (len == 0) return 0.0;
    const double n = static_cast<double>(trace.size());
    double acc = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
        double mean = 0.0;
        for (const auto& v : trace) mean += v[j];
        mean /= n;
        double var = 0.0;
        for (const auto& v : trace) {
            const double d = v[j] - mean;
            var += d * d;
        }
        acc += var / n; // population denominator: the trace length
    }
    return acc / static_cast<double>(len);
}

double hal_metric_latents(const std::vector<Latent>& trace) {
    if (trace.size() < 2) throw ConfigError("hal_metric: trace needs >= 2 entries");
    std::vector<std::vector<double>> flat;
    flat.reserve(trace.size());
    for (const Latent& x : trace) flat.push_back(x.v);
    return hal_metric(flat);
}

} // namespace kvlock
