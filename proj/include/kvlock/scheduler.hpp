#pragma once

#include <vector>

#include "kvlock/tensor.hpp"

namespace kvlock {

// Discrete DDPM noise schedule plus the subsampled K-step sampling grid.
//
// Train timesteps t run 1..t_train; vectors are indexed t-1. sampling_steps
// holds the K timesteps in denoising order (strictly decreasing). Reverse
// steps operate on the subsampled grid with effective per-step alphas
// alpha_step[k] = alpha_bar(t_k) / alpha_bar(t_{k+1}) (last step closes to
// alpha_bar = 1), the standard respacing rule.
struct NoiseSchedule {
    int t_train = 0;
    std::vector<double> betas;       // beta_t, t = 1..t_train
    std::vector<double> alphas;      // 1 - beta_t
    std::vector<double> alpha_bars;  // cumulative product of alphas
    std::vector<int> sampling_steps; // denoising order, size K

    int num_steps() const { return static_cast<int>(sampling_steps.size()); }

    double alpha_bar(int t) const;           // t in [1, t_train]
    int step_timestep(int step_index) const; // step_index in [1, K]

    // Effective coefficients for reverse step k -> k+1 on the sampling grid.
    double step_alpha(int step_index) const;
    double step_beta(int step_index) const { return 1.0 - step_alpha(step_index); }
    double step_sigma(int step_index) const; // sigma_k^2 = beta_k (ancestral)

    // sqrt(abar_t) x0 + sqrt(1-abar_t) eps
    Latent forward_noise(const Latent& x0, int t, const Latent& eps) const;
    double forward_noise(double x0, int t, double eps) const;

    // (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t); refuses abar_t = 0.
    Latent predict_x0(const Latent& x_t, int t, const Latent& eps_hat) const;
    double predict_x0(double x_t, int t, double eps_hat) const;

    // Ancestral update at sampling step k (1-based, denoising order):
    // mu + sigma_k * noise, with mu from the predicted-noise mean formula.
    // The caller passes zero noise at the final step.
    Latent reverse_step(const Latent& x_t, int step_index, const Latent& eps_hat,
                        const Latent& noise) const;
    double reverse_step(double x_t, int step_index, double eps_hat, double noise) const;

    uint64_t hash() const;
};

// Linear beta schedule over t_train steps with K sampling steps evenly
// strided over [1, t_train].
NoiseSchedule make_schedule(int t_train, double beta_min, double beta_max, int k_steps);

} // namespace kvlock
