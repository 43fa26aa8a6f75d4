// Optimizers (SGD with momentum and a plateau learning-rate schedule, Adam)
// and the batch-size-1 training loop that drives them.
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "vseg/layers.hpp"
#include "vseg/tensor.hpp"
#include "vseg/unet.hpp"

namespace vseg {

/// Per-tensor optimizer slots mirroring a network's parameter shapes.
struct ParamSlots {
    std::vector<Tensor4> weights;
    std::vector<std::vector<float>> biases;

    static ParamSlots zeros_like(const UNetParams& params);
};

struct SgdState {
    double lr = 0.1;
    double momentum = 0.9;
    double min_lr = 1e-5;
    ParamSlots velocity;

    // Plateau schedule: decay lr by 10x after `patience` consecutive loss
    // windows whose mean fails to improve on the best mean by rel_threshold.
    int window = 1000;
    int patience = 3;
    double rel_threshold = 1e-4;
    double best_window_mean = 0.0;
    bool has_best = false;
    int bad_windows = 0;

    static SgdState init(const UNetParams& params, double lr = 0.1,
                         double momentum = 0.9);
};

struct AdamState {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;
    ParamSlots m;
    ParamSlots v;

    static AdamState init(const UNetParams& params, double lr = 0.001);
};

/// v <- momentum * v + g;  w <- w - lr * v.
void sgd_step(SgdState& state, UNetParams& params, const UNetGrads& grads);

/// Standard bias-corrected Adam update.
void adam_step(AdamState& state, UNetParams& params, const UNetGrads& grads);

/// Consume one completed loss window (length state.window, oldest first) and
/// decay the learning rate if the window mean has stopped improving. The
/// very first window only establishes the baseline.
void plateau_update(SgdState& state, std::span<const double> recent_losses);

struct TrainLoopConfig {
    std::int64_t max_iterations = 110000;
    int batch_size = 1;  // fixed; validated, no gradient accumulation
    std::int64_t loss_log_interval = 1;
    std::int64_t checkpoint_interval = 0;  // 0 = only on completion
    std::uint64_t seed = 0;

    void validate() const;
};

/// One network input with its one-hot target, ready for the loop.
struct TrainSample {
    Tensor4 image;   // (1, 1, h, w)
    Tensor4 onehot;  // (1, 2, h, w)
};

struct LossSample {
    std::int64_t iteration = 0;
    double loss = 0.0;
    double lr = 0.0;
};

using LossTrace = std::vector<LossSample>;

/// Optimizer facade for the training loop. `observe_loss` feeds the plateau
/// schedule; it is a no-op for Adam.
class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(UNetParams& params, const UNetGrads& grads) = 0;
    virtual void observe_loss(double loss) {}
    virtual double lr() const = 0;
};

class SgdOptimizer final : public Optimizer {
public:
    explicit SgdOptimizer(SgdState state) : state_(std::move(state)) {}
    void step(UNetParams& params, const UNetGrads& grads) override;
    void observe_loss(double loss) override;
    double lr() const override { return state_.lr; }
    const SgdState& state() const { return state_; }

private:
    SgdState state_;
    std::vector<double> window_losses_;
};

class AdamOptimizer final : public Optimizer {
public:
    explicit AdamOptimizer(AdamState state) : state_(std::move(state)) {}
    void step(UNetParams& params, const UNetGrads& grads) override;
    double lr() const override { return state_.lr; }
    const AdamState& state() const { return state_; }

private:
    AdamState state_;
};

/// Visits (iteration, params) at every checkpoint_interval and once after
/// the final iteration.
using CheckpointHook = std::function<void(std::int64_t, const UNetParams&)>;

/// Run max_iterations single-sample steps over seeded shuffled epochs.
/// Returns the loss trace sampled at loss_log_interval.
LossTrace train(UNetParams& params, std::span<const TrainSample> dataset,
                Optimizer& opt, const TrainLoopConfig& cfg,
                const CheckpointHook& checkpoint = nullptr);

}  // namespace vseg
