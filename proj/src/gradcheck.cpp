#include "vseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "vseg/layers.hpp"
#include "vseg/unet.hpp"

namespace vseg {

Tensor4 uniform_tensor(Shape4 shape, std::mt19937_64& rng, float lo, float hi) {
    Tensor4 t(shape);
    std::uniform_real_distribution<float> dist(lo, hi);
    for (float& v : t.data) v = dist(rng);
    return t;
}

double max_fd_rel_err_at(std::span<float> x, std::span<const float> grad,
                         const std::function<double()>& f,
                         std::span<const std::size_t> indices, double step) {
    double scale = 1.0;
    for (float g : grad) scale = std::max(scale, static_cast<double>(std::fabs(g)));

    double worst = 0.0;
    for (std::size_t i : indices) {
        const float saved = x[i];
        x[i] = static_cast<float>(saved + step);
        const double up = f();
        x[i] = static_cast<float>(saved - step);
        const double down = f();
        x[i] = saved;
        const double fd = (up - down) / (2.0 * step);
        worst = std::max(worst, std::fabs(fd - grad[i]) / scale);
    }
    return worst;
}

double max_fd_rel_err(std::span<float> x, std::span<const float> grad,
                      const std::function<double()>& f, double step) {
    std::vector<std::size_t> all(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) all[i] = i;
    return max_fd_rel_err_at(x, grad, f, all, step);
}

bool GradCheckReport::all_passed() const {
    return std::all_of(results.begin(), results.end(),
                       [](const GradCheckResult& r) { return r.passed; });
}

GradCheckReport run_gradchecks(const std::vector<GradCheckCase>& cases) {
    GradCheckReport report;
    for (const GradCheckCase& c : cases) {
        GradCheckResult r;
        r.name = c.name;
        r.tolerance = c.tolerance;
        r.max_rel_err = c.run();
        r.passed = r.max_rel_err <= c.tolerance;
        report.results.push_back(std::move(r));
    }
    return report;
}

namespace {

// Random weighting makes the probe objective sensitive to every output
// element; a plain sum would hide sign-symmetric errors.
struct Weighting {
    std::vector<float> w;
    explicit Weighting(std::size_t n, std::mt19937_64& rng) {
        std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
        w.resize(n);
        for (float& v : w) v = dist(rng);
    }
    double operator()(const Tensor4& t) const {
        double s = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) s += static_cast<double>(w[i]) * t.data[i];
        return s;
    }
    Tensor4 as_out_grad(Shape4 shape) const {
        Tensor4 g(shape);
        std::copy(w.begin(), w.end(), g.data.begin());
        return g;
    }
};

double conv_case(std::uint64_t seed, int pad, int k, bool wrt_input) {
    auto rng = substream_rng(seed, "gradcheck.conv", pad * 16 + k * 2 + wrt_input);
    Tensor4 x = uniform_tensor({2, 3, 4, 4}, rng);
    ConvParams p;
    p.weights = uniform_tensor({2, 3, k, k}, rng);
    p.bias = {0.3f, -0.2f};
    p.pad = pad;

    Tensor4 out = conv2d_forward(x, p);
    Weighting obj(out.size(), rng);
    LayerGrad lg = conv2d_backward(x, p, obj.as_out_grad(out.shape));

    const auto f = [&] { return obj(conv2d_forward(x, p)); };
    if (wrt_input)
        return max_fd_rel_err(x.data, lg.input_grad.data, f);
    double e = max_fd_rel_err(p.weights.data, lg.param_grad.dweights.data, f);
    e = std::max(e, max_fd_rel_err(p.bias, lg.param_grad.dbias, f));
    return e;
}

double pool_case(std::uint64_t seed) {
    auto rng = substream_rng(seed, "gradcheck.pool");
    // Distinct values keep the argmax stable under the +-1e-3 probes.
    Tensor4 x({1, 2, 4, 4});
    std::vector<std::size_t> order(x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i)
        x.data[order[i]] = static_cast<float>(i) * 0.05f - 0.8f;

    PoolResult pr = maxpool2_forward(x);
    Weighting obj(pr.out.size(), rng);
    Tensor4 dx = maxpool2_backward(pr.argmax, obj.as_out_grad(pr.out.shape));
    const auto f = [&] { return obj(maxpool2_forward(x).out); };
    return max_fd_rel_err(x.data, dx.data, f);
}

double deconv_case(std::uint64_t seed, bool wrt_input) {
    auto rng = substream_rng(seed, "gradcheck.deconv", wrt_input);
    Tensor4 x = uniform_tensor({1, 3, 3, 4}, rng);
    ConvParams p;
    p.weights = uniform_tensor({2, 3, 2, 2}, rng);
    p.bias = {0.1f, -0.4f};
    p.stride = 2;

    Tensor4 out = deconv2_forward(x, p);
    Weighting obj(out.size(), rng);
    LayerGrad lg = deconv2_backward(x, p, obj.as_out_grad(out.shape));

    const auto f = [&] { return obj(deconv2_forward(x, p)); };
    if (wrt_input)
        return max_fd_rel_err(x.data, lg.input_grad.data, f);
    double e = max_fd_rel_err(p.weights.data, lg.param_grad.dweights.data, f);
    e = std::max(e, max_fd_rel_err(p.bias, lg.param_grad.dbias, f));
    return e;
}

double relu_case(std::uint64_t seed) {
    auto rng = substream_rng(seed, "gradcheck.relu");
    // Keep values away from the kink at 0, where the subgradient is one-sided.
    Tensor4 x = uniform_tensor({2, 2, 3, 3}, rng);
    for (float& v : x.data)
        if (std::fabs(v) < 0.05f) v = v < 0 ? -0.05f : 0.05f;

    Tensor4 out = relu_forward(x);
    Weighting obj(out.size(), rng);
    Tensor4 dx = relu_backward(x, obj.as_out_grad(x.shape));
    const auto f = [&] { return obj(relu_forward(x)); };
    return max_fd_rel_err(x.data, dx.data, f);
}

double softmax_ce_case(std::uint64_t seed) {
    auto rng = substream_rng(seed, "gradcheck.softmax_ce");
    Tensor4 logits = uniform_tensor({1, 2, 4, 4}, rng, -2.0f, 2.0f);
    Tensor4 onehot({1, 2, 4, 4});
    std::uniform_int_distribution<int> coin(0, 1);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            const int c = coin(rng);
            onehot.at(0, c, y, x) = 1.0f;
        }

    CeLoss ce = cross_entropy_loss(softmax_channels(logits), onehot);
    const auto f = [&] {
        return cross_entropy_loss(softmax_channels(logits), onehot).loss;
    };
    return max_fd_rel_err(logits.data, ce.grad_logits.data, f);
}

double concat_case(std::uint64_t seed) {
    auto rng = substream_rng(seed, "gradcheck.concat");
    Tensor4 a = uniform_tensor({1, 2, 3, 3}, rng);
    Tensor4 b = uniform_tensor({1, 3, 3, 3}, rng);
    Tensor4 out = concat_channels(a, b);
    Weighting obj(out.size(), rng);
    auto [ga, gb] = split_channels(obj.as_out_grad(out.shape), a.shape.c);

    const auto f = [&] { return obj(concat_channels(a, b)); };
    double e = max_fd_rel_err(a.data, ga.data, f);
    e = std::max(e, max_fd_rel_err(b.data, gb.data, f));
    return e;
}

double whole_network_case(std::uint64_t seed) {
    auto rng = substream_rng(seed, "gradcheck.network");
    UNetSpec spec{.depth = 2, .base_features = 2};
    UNetParams P = unet_build(spec, seed);

    Tensor4 x = uniform_tensor({1, 1, 16, 16}, rng, 0.0f, 1.0f);
    Tensor4 onehot({1, 2, 16, 16});
    std::uniform_int_distribution<int> coin(0, 1);
    for (int yy = 0; yy < 16; ++yy)
        for (int xx = 0; xx < 16; ++xx) onehot.at(0, coin(rng), yy, xx) = 1.0f;

    UNetForwardResult fwd = unet_forward(P, x);
    CeLoss ce = cross_entropy_loss(fwd.probs, onehot);
    UNetGrads grads = unet_backward(P, fwd.cache, ce.grad_logits);

    const auto loss = [&] {
        return cross_entropy_loss(unet_predict(P, x), onehot).loss;
    };

    // 20 random weight elements spread over all layers.
    double worst = 0.0;
    std::uniform_int_distribution<std::size_t> layer_pick(0, P.layers.size() - 1);
    for (int probe = 0; probe < 20; ++probe) {
        const std::size_t li = layer_pick(rng);
        Tensor4& w = P.layers[li].weights;
        std::uniform_int_distribution<std::size_t> elem_pick(0, w.size() - 1);
        const std::size_t ei = elem_pick(rng);
        const std::size_t idx[1] = {ei};
        worst = std::max(worst, max_fd_rel_err_at(w.data, grads[li].dweights.data, loss, idx));
    }
    return worst;
}

}  // namespace

std::vector<GradCheckCase> standard_gradcheck_cases(std::uint64_t seed) {
    std::vector<GradCheckCase> cases;
    cases.push_back({"conv3x3_pad1_input", 1e-3, [=] { return conv_case(seed, 1, 3, true); }});
    cases.push_back({"conv3x3_pad1_params", 1e-3, [=] { return conv_case(seed, 1, 3, false); }});
    cases.push_back({"conv3x3_pad0_input", 1e-3, [=] { return conv_case(seed, 0, 3, true); }});
    cases.push_back({"conv1x1_params", 1e-3, [=] { return conv_case(seed, 0, 1, false); }});
    cases.push_back({"maxpool2", 1e-3, [=] { return pool_case(seed); }});
    cases.push_back({"deconv2_input", 1e-3, [=] { return deconv_case(seed, true); }});
    cases.push_back({"deconv2_params", 1e-3, [=] { return deconv_case(seed, false); }});
    cases.push_back({"relu", 1e-3, [=] { return relu_case(seed); }});
    cases.push_back({"softmax_cross_entropy", 1e-3, [=] { return softmax_ce_case(seed); }});
    cases.push_back({"concat_split", 1e-3, [=] { return concat_case(seed); }});
    cases.push_back({"unet_16x16_depth2", 1e-2, [=] { return whole_network_case(seed); }});
    return cases;
}

}  // namespace vseg
