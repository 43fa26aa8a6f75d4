#include "vseg/unet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

namespace vseg {

int UNetSpec::features_at(int level) const {
    long f = static_cast<long>(base_features) << level;
    return static_cast<int>(std::min(f, static_cast<long>(feature_cap)));
}

void UNetSpec::validate() const {
    if (depth < 1) throw ConfigError("UNetSpec: depth must be at least 1");
    if (base_features < 1) throw ConfigError("UNetSpec: base_features must be positive");
    if (in_channels != 1) throw ConfigError("UNetSpec: in_channels must be 1");
    if (out_channels != 2) throw ConfigError("UNetSpec: out_channels must be 2");
    if (feature_cap < base_features)
        throw ConfigError("UNetSpec: feature_cap below base_features");
}

namespace {

struct LayerPlan {
    std::string name;
    int in_c, out_c, k;
    bool relu;
    bool deconv;
};

std::vector<LayerPlan> layer_plan(const UNetSpec& s) {
    std::vector<LayerPlan> plan;
    plan.reserve(s.param_count());
    for (int L = 0; L < s.depth; ++L) {
        const int in_c = (L == 0) ? s.in_channels : s.features_at(L - 1);
        const int f = s.features_at(L);
        plan.push_back({"enc" + std::to_string(L) + ".conv1", in_c, f, 3, true, false});
        plan.push_back({"enc" + std::to_string(L) + ".conv2", f, f, 3, true, false});
    }
    const int fb = s.features_at(s.depth);
    plan.push_back({"bottleneck.conv1", s.features_at(s.depth - 1), fb, 3, true, false});
    plan.push_back({"bottleneck.conv2", fb, fb, 3, true, false});
    for (int L = s.depth - 1; L >= 0; --L) {
        const int f = s.features_at(L);
        const int f_below = s.features_at(L + 1);
        plan.push_back({"dec" + std::to_string(L) + ".up", f_below, f, 2, false, true});
        plan.push_back({"dec" + std::to_string(L) + ".conv1", 2 * f, f, 3, true, false});
        plan.push_back({"dec" + std::to_string(L) + ".conv2", f, f, 3, true, false});
    }
    plan.push_back({"out", s.features_at(0), s.out_channels, 1, false, false});
    return plan;
}

}  // namespace

std::vector<std::string> unet_param_names(const UNetSpec& spec) {
    std::vector<std::string> names;
    for (const LayerPlan& lp : layer_plan(spec)) {
        names.push_back(lp.name + ".w");
        names.push_back(lp.name + ".b");
    }
    return names;
}

UNetParams unet_build(const UNetSpec& spec, std::uint64_t seed) {
    spec.validate();
    auto rng = substream_rng(seed, "unet.init");

    UNetParams P;
    P.spec = spec;
    for (const LayerPlan& lp : layer_plan(spec)) {
        ConvParams cp;
        cp.weights = Tensor4({lp.out_c, lp.in_c, lp.k, lp.k});
        cp.bias.assign(lp.out_c, 0.0f);
        cp.stride = lp.deconv ? 2 : 1;
        cp.pad = (lp.k == 3) ? 1 : 0;
        const double stddev = std::sqrt(2.0 / (static_cast<double>(lp.in_c) * lp.k * lp.k));
        std::normal_distribution<double> dist(0.0, stddev);
        for (float& w : cp.weights.data) w = static_cast<float>(dist(rng));
        P.layers.push_back(std::move(cp));
    }
    return P;
}

namespace {

void check_input(const UNetSpec& s, const Tensor4& x) {
    if (x.shape.c != s.in_channels)
        throw ShapeError("unet_forward: input " + x.shape.str() + " must have " +
                         std::to_string(s.in_channels) + " channel(s)");
    const int div = 1 << s.depth;
    if (x.shape.h <= 0 || x.shape.w <= 0 || x.shape.h % div != 0 || x.shape.w % div != 0)
        throw ShapeError("unet_forward: spatial dims of " + x.shape.str() +
                         " must be positive multiples of " + std::to_string(div));
}

}  // namespace

UNetForwardResult unet_forward(const UNetParams& P, const Tensor4& x) {
    const UNetSpec& s = P.spec;
    check_input(s, x);

    UNetForwardResult r;
    UNetCache& cache = r.cache;
    const int nparams = s.param_count();
    cache.inputs.resize(nparams);
    cache.pre_act.resize(nparams);
    cache.pools.resize(s.depth);
    cache.skip_channels.assign(s.depth, 0);

    auto conv_relu = [&](Tensor4 t, int i) {
        cache.inputs[i] = std::move(t);
        cache.pre_act[i] = conv2d_forward(cache.inputs[i], P.layers[i]);
        return relu_forward(cache.pre_act[i]);
    };

    int i = 0;
    Tensor4 t = x;
    std::vector<Tensor4> enc_out(s.depth);
    for (int L = 0; L < s.depth; ++L) {
        t = conv_relu(std::move(t), i++);
        t = conv_relu(std::move(t), i++);
        enc_out[L] = t;
        PoolResult pr = maxpool2_forward(t);
        cache.pools[L] = std::move(pr.argmax);
        t = std::move(pr.out);
    }
    t = conv_relu(std::move(t), i++);
    t = conv_relu(std::move(t), i++);
    for (int L = s.depth - 1; L >= 0; --L) {
        cache.inputs[i] = std::move(t);
        Tensor4 up = deconv2_forward(cache.inputs[i], P.layers[i]);
        ++i;
        cache.skip_channels[L] = enc_out[L].shape.c;
        t = concat_channels(enc_out[L], up);
        enc_out[L] = Tensor4();  // release skip copy
        t = conv_relu(std::move(t), i++);
        t = conv_relu(std::move(t), i++);
    }
    cache.inputs[i] = std::move(t);
    Tensor4 logits = conv2d_forward(cache.inputs[i], P.layers[i]);
    r.probs = softmax_channels(logits);
    return r;
}

Tensor4 unet_predict(const UNetParams& P, const Tensor4& x) {
    // Cache-free path: same computation, transient intermediates only.
    const UNetSpec& s = P.spec;
    check_input(s, x);
    int i = 0;
    Tensor4 t = x;
    std::vector<Tensor4> enc_out(s.depth);
    for (int L = 0; L < s.depth; ++L) {
        t = relu_forward(conv2d_forward(t, P.layers[i++]));
        t = relu_forward(conv2d_forward(t, P.layers[i++]));
        enc_out[L] = t;
        t = maxpool2_forward(t).out;
    }
    t = relu_forward(conv2d_forward(t, P.layers[i++]));
    t = relu_forward(conv2d_forward(t, P.layers[i++]));
    for (int L = s.depth - 1; L >= 0; --L) {
        Tensor4 up = deconv2_forward(t, P.layers[i++]);
        t = concat_channels(enc_out[L], up);
        enc_out[L] = Tensor4();
        t = relu_forward(conv2d_forward(t, P.layers[i++]));
        t = relu_forward(conv2d_forward(t, P.layers[i++]));
    }
    return softmax_channels(conv2d_forward(t, P.layers[i]));
}

UNetGrads unet_backward(const UNetParams& P, const UNetCache& cache,
                        const Tensor4& grad_logits) {
    const UNetSpec& s = P.spec;
    const int nparams = s.param_count();
    if (static_cast<int>(cache.inputs.size()) != nparams ||
        static_cast<int>(cache.pools.size()) != s.depth)
        throw UsageError("unet_backward: cache does not match this architecture");
    for (int i = 0; i < nparams; ++i) {
        if (cache.inputs[i].shape.c != P.layers[i].in_channels())
            throw UsageError("unet_backward: stale cache (layer " + std::to_string(i) +
                             " input " + cache.inputs[i].shape.str() + " vs weights " +
                             P.layers[i].weights.shape.str() + ")");
    }

    UNetGrads grads(nparams);
    int i = nparams - 1;

    auto conv_back = [&](const Tensor4& g, bool through_relu) {
        LayerGrad lg;
        if (through_relu) {
            const Tensor4 masked = relu_backward(cache.pre_act[i], g);
            lg = conv2d_backward(cache.inputs[i], P.layers[i], masked);
        } else {
            lg = conv2d_backward(cache.inputs[i], P.layers[i], g);
        }
        grads[i] = std::move(lg.param_grad);
        --i;
        return std::move(lg.input_grad);
    };

    Tensor4 t = conv_back(grad_logits, false);  // final 1x1 conv

    std::vector<Tensor4> skip_grads(s.depth);
    for (int L = 0; L < s.depth; ++L) {
        t = conv_back(t, true);
        t = conv_back(t, true);
        auto [skip_g, up_g] = split_channels(t, cache.skip_channels[L]);
        skip_grads[L] = std::move(skip_g);
        LayerGrad dg = deconv2_backward(cache.inputs[i], P.layers[i], up_g);
        grads[i] = std::move(dg.param_grad);
        --i;
        t = std::move(dg.input_grad);
    }

    t = conv_back(t, true);  // bottleneck
    t = conv_back(t, true);

    for (int L = s.depth - 1; L >= 0; --L) {
        t = maxpool2_backward(cache.pools[L], t);
        for (std::size_t j = 0; j < t.size(); ++j) t.data[j] += skip_grads[L].data[j];
        t = conv_back(t, true);
        t = conv_back(t, true);
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

constexpr char kMagic[4] = {'U', 'N', 'E', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

void write_i32(std::ostream& os, std::int32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw IoError("checkpoint truncated");
    return v;
}

std::int32_t read_i32(std::istream& is) {
    return static_cast<std::int32_t>(read_u32(is));
}

void write_record(std::ostream& os, const std::string& name,
                  const std::vector<std::uint32_t>& dims, const float* payload,
                  std::size_t count) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(dims.size()));
    for (std::uint32_t d : dims) write_u32(os, d);
    os.write(reinterpret_cast<const char*>(payload),
             static_cast<std::streamsize>(count * sizeof(float)));
}

struct Record {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> payload;
};

Record read_record(std::istream& is) {
    Record r;
    const std::uint32_t name_len = read_u32(is);
    if (name_len > 4096) throw FormatError("checkpoint: implausible tensor name length");
    r.name.resize(name_len);
    is.read(r.name.data(), name_len);
    const std::uint32_t rank = read_u32(is);
    if (rank > 4) throw FormatError("checkpoint: tensor rank " + std::to_string(rank) +
                                    " out of range");
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        r.dims.push_back(read_u32(is));
        count *= r.dims.back();
    }
    if (count > (1ull << 31)) throw FormatError("checkpoint: implausible tensor size");
    r.payload.resize(count);
    is.read(reinterpret_cast<char*>(r.payload.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!is) throw IoError("checkpoint truncated");
    return r;
}

}  // namespace

void unet_save(const UNetParams& P, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_i32(os, P.spec.depth);
    write_i32(os, P.spec.base_features);
    write_i32(os, P.spec.in_channels);
    write_i32(os, P.spec.out_channels);
    write_i32(os, P.spec.feature_cap);
    const std::vector<std::string> names = unet_param_names(P.spec);
    write_u32(os, static_cast<std::uint32_t>(names.size()));
    for (std::size_t i = 0; i < P.layers.size(); ++i) {
        const ConvParams& cp = P.layers[i];
        const Shape4& ws = cp.weights.shape;
        write_record(os, names[2 * i],
                     {static_cast<std::uint32_t>(ws.n), static_cast<std::uint32_t>(ws.c),
                      static_cast<std::uint32_t>(ws.h), static_cast<std::uint32_t>(ws.w)},
                     cp.weights.data.data(), cp.weights.size());
        write_record(os, names[2 * i + 1], {static_cast<std::uint32_t>(cp.bias.size())},
                     cp.bias.data(), cp.bias.size());
    }
    if (!os) throw IoError("write failure on checkpoint: " + path.string());
}

namespace {

UNetParams load_impl(const std::filesystem::path& path, const UNetSpec* expect) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("not a checkpoint file (bad magic): " + path.string());
    const std::uint32_t version = read_u32(is);
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));

    UNetSpec spec;
    spec.depth = read_i32(is);
    spec.base_features = read_i32(is);
    spec.in_channels = read_i32(is);
    spec.out_channels = read_i32(is);
    spec.feature_cap = read_i32(is);
    spec.validate();

    const std::uint32_t n_records = read_u32(is);
    const std::vector<std::string> names =
        expect ? unet_param_names(*expect) : unet_param_names(spec);

    std::vector<Record> records;
    records.reserve(n_records);
    for (std::uint32_t i = 0; i < n_records; ++i) records.push_back(read_record(is));

    // Compare the common prefix first so a mismatch names a concrete tensor
    // rather than just reporting diverging record counts.
    // Shapes implied by the expected architecture (file's own spec otherwise).
    UNetParams ref = unet_build(expect ? *expect : spec, 0);

    UNetParams P;
    P.spec = ref.spec;
    P.layers = std::move(ref.layers);
    const std::size_t common = std::min<std::size_t>(P.layers.size(), records.size() / 2);
    for (std::size_t i = 0; i < common; ++i) {
        Record& w = records[2 * i];
        Record& b = records[2 * i + 1];
        ConvParams& cp = P.layers[i];
        const Shape4& ws = cp.weights.shape;
        const std::vector<std::uint32_t> want_w = {
            static_cast<std::uint32_t>(ws.n), static_cast<std::uint32_t>(ws.c),
            static_cast<std::uint32_t>(ws.h), static_cast<std::uint32_t>(ws.w)};
        if (w.name != names[2 * i] || w.dims != want_w)
            throw ShapeError("checkpoint tensor '" + w.name + "' does not match expected '" +
                             names[2 * i] + "' of shape " + ws.str());
        if (b.name != names[2 * i + 1] || b.dims.size() != 1 ||
            b.dims[0] != cp.bias.size())
            throw ShapeError("checkpoint tensor '" + b.name + "' does not match expected '" +
                             names[2 * i + 1] + "' of length " + std::to_string(cp.bias.size()));
        cp.weights.data = std::move(w.payload);
        cp.bias = std::move(b.payload);
    }
    if (records.size() != names.size()) {
        const std::string& tensor = records.size() < names.size()
                                        ? names[records.size()]
                                        : records[names.size()].name;
        throw ShapeError("checkpoint has " + std::to_string(records.size()) +
                         " tensors, expected " + std::to_string(names.size()) +
                         "; first difference at '" + tensor + "'");
    }
    return P;
}

}  // namespace

UNetParams unet_load(const std::filesystem::path& path) { return load_impl(path, nullptr); }

UNetParams unet_load(const std::filesystem::path& path, const UNetSpec& expect) {
    return load_impl(path, &expect);
}

}  // namespace vseg
