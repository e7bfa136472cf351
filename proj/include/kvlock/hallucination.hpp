#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "kvlock/mask_pipeline.hpp"
#include "kvlock/tensor.hpp"

namespace kvlock {

struct DetectorConfig {
    double tau = 0.01; // hallucination threshold
    int kappa = 20;    // detection window: final kappa sampling steps
    int window = 10;   // sliding-window size W
};

// Masked batch-wise mean: (1/B) sum_b flatten(x0_hat_b * mask), mask
// broadcast over channels. An all-zero mask yields the zero vector and a
// one-time stderr warning.
std::vector<double> masked_reduce(std::span<const Latent> batch, const LatentMask& lmask);

// Flattened-latent indices covered by the mask (all channels); the variance
// of a window of masked vectors is averaged over exactly these elements.
std::vector<std::size_t> mask_support(const LatentMask& lmask, int channels);

// Ring buffer of the last W masked x0_hat vectors. Keeps running per-element
// sums so each push is O(support); the direct recomputation lives in tests.
// Variance is the per-element sample variance over the window (denominator
// W-1) averaged over the support, undefined until W vectors arrived.
class TrajectoryWindow {
public:
    TrajectoryWindow(int window, std::size_t vec_len);
    TrajectoryWindow(int window, std::size_t vec_len, std::vector<std::size_t> support);

    std::optional<double> push(std::span<const double> vec);
    std::optional<double> variance() const;

    bool full() const { return count_ >= window_; }
    int count() const { return count_; }
    int window() const { return window_; }

private:
    int window_;
    std::size_t vec_len_;
    std::vector<std::size_t> support_;
    std::vector<double> ring_;  // window_ * support.size(), support-restricted
    std::vector<double> sum_, sum_sq_;
    int head_ = 0;
    int count_ = 0;
};

// alpha_k = clamp(sigma2 / tau, 0, 1) inside the active window, 0 before the
// window fills or outside the final kappa steps.
double fusion_rate(std::optional<double> sigma2, const DetectorConfig& cfg, bool in_window);

bool hallucination_flag(std::optional<double> sigma2, const DetectorConfig& cfg, bool in_window);

// Trajectory-variance score of a recorded x0_hat trace: per-element variance
// with population denominator (the trace length), reduced to a scalar mean.
double hal_metric(const std::vector<std::vector<double>>& trace);
double hal_metric_latents(const std::vector<Latent>& trace);

} // namespace kvlock
