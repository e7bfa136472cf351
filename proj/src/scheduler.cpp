#include "kvlock/scheduler.hpp"

#include <cmath>
#include <string>

#include "kvlock/rng.hpp"

namespace kvlock {

namespace {

void check_timestep(const NoiseSchedule& s, int t) {
    if (t < 1 || t > s.t_train) {
        throw ConfigError("timestep " + std::to_string(t) + " outside [1, " +
                          std::to_string(s.t_train) + "]");
    }
}

void check_step_index(const NoiseSchedule& s, int k) {
    if (k < 1 || k > s.num_steps()) {
        throw ConfigError("sampling step " + std::to_string(k) + " outside [1, " +
                          std::to_string(s.num_steps()) + "]");
    }
}

} // namespace

double NoiseSchedule::alpha_bar(int t) const {
    check_timestep(*this, t);
    return alpha_bars[t - 1];
}

int NoiseSchedule::step_timestep(int step_index) const {
    check_step_index(*this, step_index);
    return sampling_steps[step_index - 1];
}

double NoiseSchedule::step_alpha(int step_index) const {
    check_step_index(*this, step_index);
    const double ab_cur = alpha_bar(sampling_steps[step_index - 1]);
    const double ab_prev = step_index == num_steps()
                               ? 1.0
                               : alpha_bar(sampling_steps[step_index]);
    return ab_cur / ab_prev;
}

double NoiseSchedule::step_sigma(int step_index) const {
    return std::sqrt(step_beta(step_index));
}

double NoiseSchedule::forward_noise(double x0, int t, double eps) const {
    const double ab = alpha_bar(t);
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Latent NoiseSchedule::forward_noise(const Latent& x0, int t, const Latent& eps) const {
    require_same_shape(x0, eps, "forward_noise");
    const double ab = alpha_bar(t);
    const double sa = std::sqrt(ab);
    const double sb = std::sqrt(1.0 - ab);
    Latent out = x0;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = sa * x0.v[i] + sb * eps.v[i];
    return out;
}

double NoiseSchedule::predict_x0(double x_t, int t, double eps_hat) const {
    const double ab = alpha_bar(t);
    if (ab <= 0.0) throw NumericError("predict_x0: alpha_bar is zero at t=" + std::to_string(t));
    return (x_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
}

Latent NoiseSchedule::predict_x0(const Latent& x_t, int t, const Latent& eps_hat) const {
    require_same_shape(x_t, eps_hat, "predict_x0");
    const double ab = alpha_bar(t);
    if (ab <= 0.0) throw NumericError("predict_x0: alpha_bar is zero at t=" + std::to_string(t));
    const double inv = 1.0 / std::sqrt(ab);
    const double sb = std::sqrt(1.0 - ab);
    Latent out = x_t;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = (x_t.v[i] - sb * eps_hat.v[i]) * inv;
    return out;
}

double NoiseSchedule::reverse_step(double x_t, int step_index, double eps_hat,
                                   double noise) const {
    const int t = step_timestep(step_index);
    const double a = step_alpha(step_index);
    const double ab = alpha_bar(t);
    const double mu = (x_t - (1.0 - a) / std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(a);
    return mu + step_sigma(step_index) * noise;
}

Latent NoiseSchedule::reverse_step(const Latent& x_t, int step_index, const Latent& eps_hat,
                                   const Latent& noise) const {
    require_same_shape(x_t, eps_hat, "reverse_step");
    require_same_shape(x_t, noise, "reverse_step");
    const int t = step_timestep(step_index);
    const double a = step_alpha(step_index);
    const double ab = alpha_bar(t);
    const double coef = (1.0 - a) / std::sqrt(1.0 - ab);
    const double inv = 1.0 / std::sqrt(a);
    const double sigma = step_sigma(step_index);
    Latent out = x_t;
    for (std::size_t i = 0; i < out.v.size(); ++i) {
        out.v[i] = (x_t.v[i] - coef * eps_hat.v[i]) * inv + sigma * noise.v[i];
    }
    return out;
}

uint64_t NoiseSchedule::hash() const {
    uint64_t h = fnv1a64("KVLSCHED");
    h = fnv1a64(&t_train, sizeof(t_train), h);
    h = fnv1a64(betas.data(), betas.size() * sizeof(double), h);
    h = fnv1a64(sampling_steps.data(), sampling_steps.size() * sizeof(int), h);
    return h;
}

NoiseSchedule make_schedule(int t_train, double beta_min, double beta_max, int k_steps) {
    if (t_train < 1) throw ConfigError("make_schedule: t_train must be >= 1");
    if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
        throw ConfigError("make_schedule: need 0 < beta_min <= beta_max < 1");
    }
    if (k_steps < 1 || k_steps > t_train) {
        throw ConfigError("make_schedule: need 1 <= K <= t_train");
    }

    NoiseSchedule s;
    s.t_train = t_train;
    s.betas.resize(t_train);
    s.alphas.resize(t_train);
    s.alpha_bars.resize(t_train);
    double cum = 1.0;
    for (int t = 0; t < t_train; ++t) {
        const double frac = t_train == 1 ? 0.0 : static_cast<double>(t) / (t_train - 1);
        s.betas[t] = beta_min + (beta_max - beta_min) * frac;
        s.alphas[t] = 1.0 - s.betas[t];
        cum *= s.alphas[t];
        s.alpha_bars[t] = cum;
    }

    // Evenly strided sampling grid; t_j = floor(j * T / K) lands on T exactly
    // and stays strictly increasing for K <= T.
    s.sampling_steps.resize(k_steps);
    for (int j = 1; j <= k_steps; ++j) {
        s.sampling_steps[k_steps - j] =
            static_cast<int>((static_cast<long long>(j) * t_train) / k_steps);
    }
    return s;
}

} // namespace kvlock
