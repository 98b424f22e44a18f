#include "advdiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "advdiff/error.hpp"

namespace advdiff {

NoiseSchedule NoiseSchedule::linear(int num_steps, double beta_start, double beta_end) {
    if (num_steps < 1) throw InvalidArgument("schedule: num_steps must be >= 1, got " + std::to_string(num_steps));
    if (!(beta_start > 0.0 && beta_start < 1.0) || !(beta_end > 0.0 && beta_end < 1.0))
        throw InvalidArgument("schedule: betas must lie in (0,1)");
    if (beta_start > beta_end) throw InvalidArgument("schedule: beta_start > beta_end");

    NoiseSchedule s;
    s.num_steps_ = num_steps;
    s.beta_start_ = beta_start;
    s.beta_end_ = beta_end;
    s.betas_.resize(num_steps + 1);
    s.alphas_.resize(num_steps + 1);
    s.alpha_bars_.resize(num_steps + 1);
    s.betas_[0] = 0.0;
    s.alphas_[0] = 1.0;
    s.alpha_bars_[0] = 1.0;
    for (int k = 1; k <= num_steps; ++k) {
        const double frac = num_steps == 1 ? 0.0 : static_cast<double>(k - 1) / (num_steps - 1);
        s.betas_[k] = beta_start + (beta_end - beta_start) * frac;
        s.alphas_[k] = 1.0 - s.betas_[k];
        s.alpha_bars_[k] = s.alpha_bars_[k - 1] * s.alphas_[k];
    }
    s.betas_[num_steps] = num_steps == 1 ? beta_start : beta_end;
    s.alphas_[num_steps] = 1.0 - s.betas_[num_steps];
    s.alpha_bars_[num_steps] = s.alpha_bars_[num_steps - 1] * s.alphas_[num_steps];
    return s;
}

int fraction_to_step(double t, const NoiseSchedule& schedule) {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("noise fraction must lie in [0,1]");
    const long k = std::lround(t * schedule.num_steps());
    return static_cast<int>(std::clamp<long>(k, 0, schedule.num_steps()));
}

}  // namespace advdiff
