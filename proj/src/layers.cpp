#include "vseg/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace vseg {

bool Tensor4::all_finite() const {
    for (float v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor4::require_shape(const Shape4& s, const char* what) const {
    if (!(shape == s))
        throw ShapeError(std::string(what) + ": expected shape " + s.str() +
                         ", got " + shape.str());
}

namespace {

// Valid output range [lo, hi] such that o*stride + k - pad stays inside
// [0, extent-1].
inline void valid_range(int out_extent, int in_extent, int k, int pad, int stride,
                        int& lo, int& hi) {
    lo = (pad - k <= 0) ? 0 : (pad - k + stride - 1) / stride;
    int m = in_extent - 1 - k + pad;
    hi = (m < 0) ? -1 : std::min(out_extent - 1, m / stride);
}

void check_conv_shapes(const Tensor4& x, const ConvParams& p, const char* op) {
    if (x.shape.c != p.in_channels())
        throw ShapeError(std::string(op) + ": input shape " + x.shape.str() +
                         " has " + std::to_string(x.shape.c) +
                         " channels but weights " + p.weights.shape.str() + " expect " +
                         std::to_string(p.in_channels()));
    if (p.kh() != p.kw())
        throw ShapeError(std::string(op) + ": non-square kernel " + p.weights.shape.str());
    if (static_cast<int>(p.bias.size()) != p.out_channels())
        throw ShapeError(std::string(op) + ": bias length " + std::to_string(p.bias.size()) +
                         " does not match " + std::to_string(p.out_channels()) +
                         " output channels");
}

}  // namespace

Tensor4 conv2d_forward(const Tensor4& x, const ConvParams& p) {
    check_conv_shapes(x, p, "conv2d_forward");
    if (p.stride < 1) throw ValidationError("conv2d_forward: stride must be positive");
    if (p.pad < 0) throw ValidationError("conv2d_forward: negative padding");

    const int k = p.kh(), pad = p.pad, stride = p.stride;
    const int hin = x.shape.h, win = x.shape.w;
    const int hnum = hin + 2 * pad - k, wnum = win + 2 * pad - k;
    if (hnum < 0 || wnum < 0 || hnum % stride != 0 || wnum % stride != 0)
        throw ShapeError("conv2d_forward: kernel " + p.weights.shape.str() +
                         " with pad " + std::to_string(pad) + " stride " +
                         std::to_string(stride) + " does not tile input " + x.shape.str());
    const int hout = hnum / stride + 1, wout = wnum / stride + 1;

    Tensor4 out({x.shape.n, p.out_channels(), hout, wout});
    for (int n = 0; n < x.shape.n; ++n) {
        for (int oc = 0; oc < p.out_channels(); ++oc) {
            float* op_ = out.plane(n, oc);
            std::fill(op_, op_ + static_cast<std::size_t>(hout) * wout, p.bias[oc]);
            for (int ic = 0; ic < x.shape.c; ++ic) {
                const float* ip = x.plane(n, ic);
                const float* wp = p.weights.plane(oc, ic);
                for (int ky = 0; ky < k; ++ky) {
                    int oy_lo, oy_hi;
                    valid_range(hout, hin, ky, pad, stride, oy_lo, oy_hi);
                    for (int kx = 0; kx < k; ++kx) {
                        const float wv = wp[ky * k + kx];
                        int ox_lo, ox_hi;
                        valid_range(wout, win, kx, pad, stride, ox_lo, ox_hi);
                        const int off = kx - pad;
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const float* irow = ip + static_cast<std::size_t>(oy * stride + ky - pad) * win;
                            float* orow = op_ + static_cast<std::size_t>(oy) * wout;
                            if (stride == 1) {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                    orow[ox] += wv * irow[ox + off];
                            } else {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                    orow[ox] += wv * irow[ox * stride + off];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

LayerGrad conv2d_backward(const Tensor4& x, const ConvParams& p, const Tensor4& out_grad) {
    check_conv_shapes(x, p, "conv2d_backward");
    const int k = p.kh(), pad = p.pad, stride = p.stride;
    const int hin = x.shape.h, win = x.shape.w;
    const int hout = (hin + 2 * pad - k) / stride + 1;
    const int wout = (win + 2 * pad - k) / stride + 1;
    out_grad.require_shape({x.shape.n, p.out_channels(), hout, wout}, "conv2d_backward: out_grad");

    LayerGrad g;
    g.input_grad = Tensor4(x.shape);
    g.param_grad.dweights = Tensor4(p.weights.shape);
    g.param_grad.dbias.assign(p.bias.size(), 0.0f);

    for (int oc = 0; oc < p.out_channels(); ++oc) {
        double acc = 0.0;
        for (int n = 0; n < x.shape.n; ++n) {
            const float* gp = out_grad.plane(n, oc);
            for (std::size_t i = 0; i < static_cast<std::size_t>(hout) * wout; ++i) acc += gp[i];
        }
        g.param_grad.dbias[oc] = static_cast<float>(acc);
    }

    for (int n = 0; n < x.shape.n; ++n) {
        for (int oc = 0; oc < p.out_channels(); ++oc) {
            const float* gp = out_grad.plane(n, oc);
            for (int ic = 0; ic < x.shape.c; ++ic) {
                const float* ip = x.plane(n, ic);
                float* dip = g.input_grad.plane(n, ic);
                const float* wp = p.weights.plane(oc, ic);
                float* dwp = g.param_grad.dweights.plane(oc, ic);
                for (int ky = 0; ky < k; ++ky) {
                    int oy_lo, oy_hi;
                    valid_range(hout, hin, ky, pad, stride, oy_lo, oy_hi);
                    for (int kx = 0; kx < k; ++kx) {
                        const float wv = wp[ky * k + kx];
                        int ox_lo, ox_hi;
                        valid_range(wout, win, kx, pad, stride, ox_lo, ox_hi);
                        const int off = kx - pad;
                        double wacc = 0.0;
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const std::size_t irow = static_cast<std::size_t>(oy * stride + ky - pad) * win;
                            const float* grow = gp + static_cast<std::size_t>(oy) * wout;
                            const float* xrow = ip + irow;
                            float* dxrow = dip + irow;
                            if (stride == 1) {
                                double rowacc = 0.0;
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                    rowacc += static_cast<double>(grow[ox]) * xrow[ox + off];
                                    dxrow[ox + off] += wv * grow[ox];
                                }
                                wacc += rowacc;
                            } else {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                    wacc += static_cast<double>(grow[ox]) * xrow[ox * stride + off];
                                    dxrow[ox * stride + off] += wv * grow[ox];
                                }
                            }
                        }
                        dwp[ky * k + kx] += static_cast<float>(wacc);
                    }
                }
            }
        }
    }
    return g;
}

PoolResult maxpool2_forward(const Tensor4& x) {
    if (x.shape.h % 2 != 0 || x.shape.w % 2 != 0)
        throw ShapeError("maxpool2_forward: odd spatial dims in " + x.shape.str());
    const int hout = x.shape.h / 2, wout = x.shape.w / 2;

    PoolResult r;
    r.out = Tensor4({x.shape.n, x.shape.c, hout, wout});
    r.argmax.in_shape = x.shape;
    r.argmax.out_shape = r.out.shape;
    r.argmax.index.resize(r.out.size());

    std::size_t o = 0;
    for (int n = 0; n < x.shape.n; ++n) {
        for (int c = 0; c < x.shape.c; ++c) {
            const float* ip = x.plane(n, c);
            const std::size_t base = x.index(n, c, 0, 0);
            for (int oy = 0; oy < hout; ++oy) {
                for (int ox = 0; ox < wout; ++ox, ++o) {
                    // Ties keep the first element in row-major scan order.
                    std::size_t best = static_cast<std::size_t>(2 * oy) * x.shape.w + 2 * ox;
                    float bv = ip[best];
                    const std::size_t cands[3] = {best + 1, best + x.shape.w, best + x.shape.w + 1};
                    for (std::size_t cand : cands) {
                        if (ip[cand] > bv) {
                            bv = ip[cand];
                            best = cand;
                        }
                    }
                    r.out.data[o] = bv;
                    r.argmax.index[o] = static_cast<std::int32_t>(base + best);
                }
            }
        }
    }
    return r;
}

Tensor4 maxpool2_backward(const ArgmaxMap& argmax, const Tensor4& out_grad) {
    out_grad.require_shape(argmax.out_shape, "maxpool2_backward: out_grad");
    Tensor4 dx(argmax.in_shape);
    for (std::size_t o = 0; o < out_grad.size(); ++o)
        dx.data[argmax.index[o]] += out_grad.data[o];
    return dx;
}

Tensor4 deconv2_forward(const Tensor4& x, const ConvParams& p) {
    check_conv_shapes(x, p, "deconv2_forward");
    if (p.kh() != 2 || p.stride != 2 || p.pad != 0)
        throw ShapeError("deconv2_forward: requires 2x2 kernel, stride 2, no padding; got " +
                         p.weights.shape.str());
    const int h = x.shape.h, w = x.shape.w;
    Tensor4 out({x.shape.n, p.out_channels(), 2 * h, 2 * w});
    for (int n = 0; n < x.shape.n; ++n) {
        for (int oc = 0; oc < p.out_channels(); ++oc) {
            float* op_ = out.plane(n, oc);
            std::fill(op_, op_ + static_cast<std::size_t>(4) * h * w, p.bias[oc]);
            for (int ic = 0; ic < x.shape.c; ++ic) {
                const float* ip = x.plane(n, ic);
                const float* wp = p.weights.plane(oc, ic);
                for (int ky = 0; ky < 2; ++ky) {
                    for (int kx = 0; kx < 2; ++kx) {
                        const float wv = wp[ky * 2 + kx];
                        for (int iy = 0; iy < h; ++iy) {
                            const float* irow = ip + static_cast<std::size_t>(iy) * w;
                            float* orow = op_ + static_cast<std::size_t>(2 * iy + ky) * 2 * w + kx;
                            for (int ix = 0; ix < w; ++ix)
                                orow[2 * ix] += wv * irow[ix];
                        }
                    }
                }
            }
        }
    }
    return out;
}

LayerGrad deconv2_backward(const Tensor4& x, const ConvParams& p, const Tensor4& out_grad) {
    check_conv_shapes(x, p, "deconv2_backward");
    const int h = x.shape.h, w = x.shape.w;
    out_grad.require_shape({x.shape.n, p.out_channels(), 2 * h, 2 * w}, "deconv2_backward: out_grad");

    LayerGrad g;
    g.input_grad = Tensor4(x.shape);
    g.param_grad.dweights = Tensor4(p.weights.shape);
    g.param_grad.dbias.assign(p.bias.size(), 0.0f);

    for (int oc = 0; oc < p.out_channels(); ++oc) {
        double acc = 0.0;
        for (int n = 0; n < x.shape.n; ++n) {
            const float* gp = out_grad.plane(n, oc);
            for (std::size_t i = 0; i < static_cast<std::size_t>(4) * h * w; ++i) acc += gp[i];
        }
        g.param_grad.dbias[oc] = static_cast<float>(acc);
    }

    for (int n = 0; n < x.shape.n; ++n) {
        for (int oc = 0; oc < p.out_channels(); ++oc) {
            const float* gp = out_grad.plane(n, oc);
            for (int ic = 0; ic < x.shape.c; ++ic) {
                const float* ip = x.plane(n, ic);
                float* dip = g.input_grad.plane(n, ic);
                const float* wp = p.weights.plane(oc, ic);
                float* dwp = g.param_grad.dweights.plane(oc, ic);
                for (int ky = 0; ky < 2; ++ky) {
                    for (int kx = 0; kx < 2; ++kx) {
                        const float wv = wp[ky * 2 + kx];
                        double wacc = 0.0;
                        for (int iy = 0; iy < h; ++iy) {
                            const float* grow = gp + static_cast<std::size_t>(2 * iy + ky) * 2 * w + kx;
                            const float* xrow = ip + static_cast<std::size_t>(iy) * w;
                            float* dxrow = dip + static_cast<std::size_t>(iy) * w;
                            for (int ix = 0; ix < w; ++ix) {
                                const float gv = grow[2 * ix];
                                wacc += static_cast<double>(gv) * xrow[ix];
                                dxrow[ix] += wv * gv;
                            }
                        }
                        dwp[ky * 2 + kx] += static_cast<float>(wacc);
                    }
                }
            }
        }
    }
    return g;
}

Tensor4 relu_forward(const Tensor4& x) {
    Tensor4 out(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i)
        out.data[i] = x.data[i] > 0.0f ? x.data[i] : 0.0f;
    return out;
}

Tensor4 relu_backward(const Tensor4& x, const Tensor4& out_grad) {
    out_grad.require_shape(x.shape, "relu_backward: out_grad");
    Tensor4 dx(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i)
        dx.data[i] = x.data[i] > 0.0f ? out_grad.data[i] : 0.0f;
    return dx;
}

Tensor4 softmax_channels(const Tensor4& x) {
    if (x.shape.c < 2)
        throw ShapeError("softmax_channels: needs at least 2 channels, got " + x.shape.str());
    Tensor4 out(x.shape);
    const std::size_t plane = static_cast<std::size_t>(x.shape.h) * x.shape.w;
    for (int n = 0; n < x.shape.n; ++n) {
        const float* ip = x.plane(n, 0);
        float* op_ = out.plane(n, 0);
        for (std::size_t px = 0; px < plane; ++px) {
            float m = ip[px];
            for (int c = 1; c < x.shape.c; ++c)
                m = std::max(m, ip[c * plane + px]);
            double sum = 0.0;
            for (int c = 0; c < x.shape.c; ++c) {
                const float e = std::exp(ip[c * plane + px] - m);
                op_[c * plane + px] = e;
                sum += e;
            }
            const float inv = static_cast<float>(1.0 / sum);
            for (int c = 0; c < x.shape.c; ++c)
                op_[c * plane + px] *= inv;
        }
    }
    return out;
}

CeLoss cross_entropy_loss(const Tensor4& probs, const Tensor4& onehot) {
    onehot.require_shape(probs.shape, "cross_entropy_loss: ground truth");
    const std::size_t plane = static_cast<std::size_t>(probs.shape.h) * probs.shape.w;

    CeLoss r;
    r.grad_logits = Tensor4(probs.shape);
    double loss = 0.0;
    for (int n = 0; n < probs.shape.n; ++n) {
        const float* pp = probs.plane(n, 0);
        const float* gp = onehot.plane(n, 0);
        float* dp = r.grad_logits.plane(n, 0);
        for (std::size_t px = 0; px < plane; ++px) {
            float gsum = 0.0f;
            for (int c = 0; c < probs.shape.c; ++c) {
                const float g = gp[c * plane + px];
                if (g != 0.0f && g != 1.0f)
                    throw ValidationError("cross_entropy_loss: ground truth is not one-hot (value " +
                                          std::to_string(g) + ")");
                gsum += g;
                if (g == 1.0f)
                    loss -= std::log(std::max(static_cast<double>(pp[c * plane + px]), 1e-12));
                dp[c * plane + px] = pp[c * plane + px] - g;
            }
            if (gsum != 1.0f)
                throw ValidationError("cross_entropy_loss: ground truth channel sum is " +
                                      std::to_string(gsum) + ", expected exactly 1");
        }
    }
    r.loss = loss;
    return r;
}

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
    if (a.shape.n != b.shape.n || a.shape.h != b.shape.h || a.shape.w != b.shape.w)
        throw ShapeError("concat_channels: spatial/batch mismatch between " + a.shape.str() +
                         " and " + b.shape.str());
    Tensor4 out({a.shape.n, a.shape.c + b.shape.c, a.shape.h, a.shape.w});
    const std::size_t plane = static_cast<std::size_t>(a.shape.h) * a.shape.w;
    for (int n = 0; n < a.shape.n; ++n) {
        if (a.shape.c > 0)
            std::memcpy(out.plane(n, 0), a.plane(n, 0), a.shape.c * plane * sizeof(float));
        if (b.shape.c > 0)
            std::memcpy(out.plane(n, a.shape.c), b.plane(n, 0), b.shape.c * plane * sizeof(float));
    }
    return out;
}

std::pair<Tensor4, Tensor4> split_channels(const Tensor4& g, int c_first) {
    if (c_first < 0 || c_first > g.shape.c)
        throw ShapeError("split_channels: cannot take " + std::to_string(c_first) +
                         " channels from " + g.shape.str());
    Tensor4 a({g.shape.n, c_first, g.shape.h, g.shape.w});
    Tensor4 b({g.shape.n, g.shape.c - c_first, g.shape.h, g.shape.w});
    const std::size_t plane = static_cast<std::size_t>(g.shape.h) * g.shape.w;
    for (int n = 0; n < g.shape.n; ++n) {
        if (c_first > 0)
            std::memcpy(a.plane(n, 0), g.plane(n, 0), c_first * plane * sizeof(float));
        if (b.shape.c > 0)
            std::memcpy(b.plane(n, 0), g.plane(n, c_first), b.shape.c * plane * sizeof(float));
    }
    return {std::move(a), std::move(b)};
}

}  // namespace vseg
