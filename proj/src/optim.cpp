#include "vseg/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vseg/common.hpp"

namespace vseg {

ParamSlots ParamSlots::zeros_like(const UNetParams& params) {
    ParamSlots s;
    s.weights.reserve(params.layers.size());
    s.biases.reserve(params.layers.size());
    for (const ConvParams& layer : params.layers) {
        s.weights.emplace_back(layer.weights.shape);
        s.biases.emplace_back(layer.bias.size(), 0.0f);
    }
    return s;
}

SgdState SgdState::init(const UNetParams& params, double lr, double momentum) {
    SgdState s;
    s.lr = lr;
    s.momentum = momentum;
    s.velocity = ParamSlots::zeros_like(params);
    return s;
}

AdamState AdamState::init(const UNetParams& params, double lr) {
    AdamState s;
    s.lr = lr;
    s.m = ParamSlots::zeros_like(params);
    s.v = ParamSlots::zeros_like(params);
    return s;
}

namespace {

void check_slot_shapes(const ParamSlots& slots, const UNetParams& params,
                       const UNetGrads& grads, const char* who) {
    if (slots.weights.size() != params.layers.size() ||
        grads.size() != params.layers.size())
        throw ShapeError(std::string(who) + ": layer counts disagree (state " +
                         std::to_string(slots.weights.size()) + ", params " +
                         std::to_string(params.layers.size()) + ", grads " +
                         std::to_string(grads.size()) + ")");
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        if (!(slots.weights[i].shape == params.layers[i].weights.shape) ||
            !(grads[i].dweights.shape == params.layers[i].weights.shape) ||
            slots.biases[i].size() != params.layers[i].bias.size() ||
            grads[i].dbias.size() != params.layers[i].bias.size())
            throw ShapeError(std::string(who) + ": shape mismatch at layer " +
                             std::to_string(i) + " (params " +
                             params.layers[i].weights.shape.str() + ", grads " +
                             grads[i].dweights.shape.str() + ")");
    }
}

}  // namespace

void sgd_step(SgdState& state, UNetParams& params, const UNetGrads& grads) {
    check_slot_shapes(state.velocity, params, grads, "sgd_step");
    const float lr = static_cast<float>(state.lr);
    const float mu = static_cast<float>(state.momentum);
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        float* v = state.velocity.weights[i].data.data();
        float* w = params.layers[i].weights.data.data();
        const float* g = grads[i].dweights.data.data();
        const std::size_t n = params.layers[i].weights.size();
        for (std::size_t k = 0; k < n; ++k) {
            v[k] = mu * v[k] + g[k];
            w[k] -= lr * v[k];
        }
        float* vb = state.velocity.biases[i].data();
        float* b = params.layers[i].bias.data();
        const float* gb = grads[i].dbias.data();
        for (std::size_t k = 0; k < params.layers[i].bias.size(); ++k) {
            vb[k] = mu * vb[k] + gb[k];
            b[k] -= lr * vb[k];
        }
    }
}

void adam_step(AdamState& state, UNetParams& params, const UNetGrads& grads) {
    check_slot_shapes(state.m, params, grads, "adam_step");
    state.t += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    const float b1 = static_cast<float>(state.beta1);
    const float b2 = static_cast<float>(state.beta2);

    const auto update = [&](float* m, float* v, float* w, const float* g, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) {
            m[k] = b1 * m[k] + (1.0f - b1) * g[k];
            v[k] = b2 * v[k] + (1.0f - b2) * g[k] * g[k];
            const double mhat = m[k] / c1;
            const double vhat = v[k] / c2;
            w[k] -= static_cast<float>(state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    };

    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        update(state.m.weights[i].data.data(), state.v.weights[i].data.data(),
               params.layers[i].weights.data.data(), grads[i].dweights.data.data(),
               params.layers[i].weights.size());
        update(state.m.biases[i].data(), state.v.biases[i].data(),
               params.layers[i].bias.data(), grads[i].dbias.data(),
               params.layers[i].bias.size());
    }
}

void plateau_update(SgdState& state, std::span<const double> recent_losses) {
    if (recent_losses.empty()) return;
    const double mean = std::accumulate(recent_losses.begin(), recent_losses.end(), 0.0) /
                        static_cast<double>(recent_losses.size());
    if (!state.has_best) {
        state.best_window_mean = mean;
        state.has_best = true;
        return;
    }
    if (mean < state.best_window_mean * (1.0 - state.rel_threshold)) {
        state.best_window_mean = mean;
        state.bad_windows = 0;
        return;
    }
    if (++state.bad_windows >= state.patience) {
        state.lr = std::max(state.lr * 0.1, state.min_lr);
        state.bad_windows = 0;
    }
}

void SgdOptimizer::step(UNetParams& params, const UNetGrads& grads) {
    sgd_step(state_, params, grads);
}

void SgdOptimizer::observe_loss(double loss) {
    window_losses_.push_back(loss);
    if (window_losses_.size() >= static_cast<std::size_t>(state_.window)) {
        plateau_update(state_, window_losses_);
        window_losses_.clear();
    }
}

void AdamOptimizer::step(UNetParams& params, const UNetGrads& grads) {
    adam_step(state_, params, grads);
}

void TrainLoopConfig::validate() const {
    if (max_iterations < 0)
        throw ConfigError("train: max_iterations must be non-negative");
    if (batch_size != 1)
        throw ConfigError("train: batch_size is fixed at 1 (no accumulation), got " +
                          std::to_string(batch_size));
    if (loss_log_interval < 1)
        throw ConfigError("train: loss_log_interval must be at least 1");
    if (checkpoint_interval < 0)
        throw ConfigError("train: checkpoint_interval must be non-negative");
}

LossTrace train(UNetParams& params, std::span<const TrainSample> dataset,
                Optimizer& opt, const TrainLoopConfig& cfg,
                const CheckpointHook& checkpoint) {
    cfg.validate();
    if (dataset.empty()) throw ConfigError("train: dataset is empty");
    for (const TrainSample& s : dataset) {
        s.image.require_shape({1, 1, s.image.shape.h, s.image.shape.w}, "train sample image");
        s.onehot.require_shape({1, 2, s.image.shape.h, s.image.shape.w}, "train sample target");
    }

    auto rng = substream_rng(cfg.seed, "train.shuffle");
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    LossTrace trace;
    for (std::int64_t iter = 0; iter < cfg.max_iterations; ++iter) {
        const std::size_t pos = static_cast<std::size_t>(iter) % dataset.size();
        if (pos == 0) std::shuffle(order.begin(), order.end(), rng);
        const TrainSample& sample = dataset[order[pos]];

        UNetForwardResult fwd = unet_forward(params, sample.image);
        CeLoss ce = cross_entropy_loss(fwd.probs, sample.onehot);
        UNetGrads grads = unet_backward(params, fwd.cache, ce.grad_logits);
        opt.step(params, grads);
        opt.observe_loss(ce.loss);

        if (iter % cfg.loss_log_interval == 0)
            trace.push_back({iter, ce.loss, opt.lr()});
        if (checkpoint && cfg.checkpoint_interval > 0 &&
            (iter + 1) % cfg.checkpoint_interval == 0)
            checkpoint(iter + 1, params);
    }
    if (checkpoint) checkpoint(cfg.max_iterations, params);
    return trace;
}

}  // namespace vseg
