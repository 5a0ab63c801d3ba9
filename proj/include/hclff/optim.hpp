#pragma once

#include <cmath>
#include <cstdint>

#include "hclff/tensor.hpp"

namespace hclff {

template <class R>
struct AdamState {
    Tensor<R> first_moment;
    Tensor<R> second_moment;
    std::int64_t step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    double weight_decay = 0.0;
    bool decoupled_decay = true;

    AdamState() = default;
    explicit AdamState(const std::vector<std::size_t>& param_shape)
        : first_moment(param_shape), second_moment(param_shape) {}

    void validate(const Tensor<R>& param) const {
        if (first_moment.shape != param.shape || second_moment.shape != param.shape)
            throw argument_error("adam: moment shapes do not match parameter " + shape_to_str(param.shape));
        if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
            throw argument_error("adam: betas must lie in [0,1)");
        if (!(eps_adam > 0)) throw argument_error("adam: eps must be positive");
    }
};

// One Adam update with bias correction. Weight decay is decoupled by default
// (added to the step, not the moment-tracked gradient); set
// state.decoupled_decay = false for the coupled form.
template <class R>
void adam_step(Tensor<R>& param, const Tensor<R>& grad, AdamState<R>& state, double lr) {
    state.validate(param);
    if (!param.same_shape(grad)) throw argument_error("adam: grad shape mismatch");
    if (!(lr >= 0)) throw argument_error("adam: negative learning rate");
    check_finite(grad, "adam grad");

    state.step_count += 1;
    const R b1 = static_cast<R>(state.beta1);
    const R b2 = static_cast<R>(state.beta2);
    const R eps = static_cast<R>(state.eps_adam);
    const R wd = static_cast<R>(state.weight_decay);
    const R step = static_cast<R>(lr);
    const R corr1 = static_cast<R>(1.0 - std::pow(state.beta1, static_cast<double>(state.step_count)));
    const R corr2 = static_cast<R>(1.0 - std::pow(state.beta2, static_cast<double>(state.step_count)));

    for (std::size_t i = 0; i < param.numel(); ++i) {
        R g = grad.data[i];
        if (wd != R(0) && !state.decoupled_decay) g += wd * param.data[i];
        R& m = state.first_moment.data[i];
        R& v = state.second_moment.data[i];
        m = b1 * m + (R(1) - b1) * g;
        v = b2 * v + (R(1) - b2) * g * g;
        const R mhat = m / corr1;
        const R vhat = v / corr2;
        R update = step * mhat / (std::sqrt(vhat) + eps);
        if (wd != R(0) && state.decoupled_decay) update += step * wd * param.data[i];
        param.data[i] -= update;
    }
}

// ---------------------------------------------------------------------------
// Learning-rate and contrastive-temperature schedules.
// ---------------------------------------------------------------------------

struct ScheduleConfig {
    double lr_init = 8e-2;
    double lr_min = 2e-4;
    int total_epochs = 150;
    double tau_start = 0.8;
    double tau_warm = 0.2;
    double tau_end = 0.08;
    int warmup_epochs = 100;

    void validate() const {
        if (total_epochs < 1) throw argument_error("schedule: total_epochs must be positive");
        if (lr_min > lr_init) throw argument_error("schedule: lr_min exceeds lr_init");
        if (!(tau_end <= tau_warm && tau_warm <= tau_start))
            throw argument_error("schedule: need tau_end <= tau_warm <= tau_start");
        if (warmup_epochs < 0 || warmup_epochs > total_epochs)
            throw argument_error("schedule: warmup_epochs out of range");
    }
};

inline void check_epoch(int epoch, const ScheduleConfig& cfg) {
    cfg.validate();
    if (epoch < 0 || epoch >= cfg.total_epochs)
        throw argument_error("schedule: epoch " + std::to_string(epoch) + " outside [0," +
                             std::to_string(cfg.total_epochs) + ")");
}

// Cosine annealing from lr_init at epoch 0 to lr_min at the last epoch.
inline double cosine_lr(int epoch, const ScheduleConfig& cfg) {
    check_epoch(epoch, cfg);
    if (cfg.total_epochs == 1) return cfg.lr_init;
    const double t = static_cast<double>(epoch) / static_cast<double>(cfg.total_epochs - 1);
    return cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
}

// Linear warm from tau_start to tau_warm over the first warmup_epochs epochs,
// then cosine decay from tau_warm to tau_end at the last epoch.
inline double tau_schedule(int epoch, const ScheduleConfig& cfg) {
    check_epoch(epoch, cfg);
    if (epoch < cfg.warmup_epochs)
        return cfg.tau_start +
               (cfg.tau_warm - cfg.tau_start) * static_cast<double>(epoch) / static_cast<double>(cfg.warmup_epochs);
    const int span = cfg.total_epochs - 1 - cfg.warmup_epochs;
    if (span <= 0) return epoch == cfg.warmup_epochs ? cfg.tau_warm : cfg.tau_end;
    const double t = static_cast<double>(epoch - cfg.warmup_epochs) / static_cast<double>(span);
    return cfg.tau_end + 0.5 * (cfg.tau_warm - cfg.tau_end) * (1.0 + std::cos(3.14159265358979323846 * t));
}

}  // namespace hclff
