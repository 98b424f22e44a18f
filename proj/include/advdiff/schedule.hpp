#pragma once

#include <vector>

namespace advdiff {

/// Discrete DDPM noise schedule. Tables are indexed by step k in [0, T];
/// entry 0 is the clean state (beta 0, alpha 1, alpha_bar 1).
class NoiseSchedule {
public:
    static constexpr int kDefaultSteps = 1000;
    static constexpr double kDefaultBetaStart = 1e-4;
    static constexpr double kDefaultBetaEnd = 0.02;

    /// Linear betas from beta_start to beta_end inclusive.
    static NoiseSchedule linear(int num_steps = kDefaultSteps, double beta_start = kDefaultBetaStart,
                                double beta_end = kDefaultBetaEnd);

    int num_steps() const { return num_steps_; }
    double beta_start() const { return beta_start_; }
    double beta_end() const { return beta_end_; }

    double beta(int k) const { return betas_.at(k); }
    double alpha(int k) const { return alphas_.at(k); }
    double alpha_bar(int k) const { return alpha_bars_.at(k); }

    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& alphas() const { return alphas_; }
    const std::vector<double>& alpha_bars() const { return alpha_bars_; }

    friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;

private:
    int num_steps_ = 0;
    double beta_start_ = 0.0;
    double beta_end_ = 0.0;
    std::vector<double> betas_, alphas_, alpha_bars_;
};

/// Continuous noise level t in [0,1] to step index round(t*T), clamped.
int fraction_to_step(double t, const NoiseSchedule& schedule);

}  // namespace advdiff
