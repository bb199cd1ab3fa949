#pragma once

#include <array>

namespace mdmrl {

/// Per-step decoding controls: remask ratio, sampling temperature, remask
/// temperature, and guidance scale.
struct ScheduleAction {
    double remask_ratio = 0.0;  // in [0, 1]
    double tau_sample = 1.0;    // > 0
    double tau_remask = 1.0;    // > 0
    double cfg_scale = 1.0;     // >= 0

    std::array<double, 4> as_array() const {
        return {remask_ratio, tau_sample, tau_remask, cfg_scale};
    }
    static ScheduleAction from_array(const std::array<double, 4>& a) {
        return ScheduleAction{a[0], a[1], a[2], a[3]};
    }
    bool operator==(const ScheduleAction& o) const {
        return remask_ratio == o.remask_ratio && tau_sample == o.tau_sample &&
               tau_remask == o.tau_remask && cfg_scale == o.cfg_scale;
    }
};

/// Temperatures below this floor sample greedily.
inline constexpr double kTemperatureFloor = 1e-3;

inline double effective_temperature(double tau) {
    return tau < kTemperatureFloor ? kTemperatureFloor : tau;
}

} // namespace mdmrl
