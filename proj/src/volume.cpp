#include "vseg/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

namespace vseg {

static_assert(std::endian::native == std::endian::little,
              "bundle payloads are written as native little-endian words");

namespace {

using nlohmann::json;

template <typename T>
void check_grid(const Grid3<T>& v, const char* who) {
    if (v.nx < 1 || v.ny < 1 || v.nz < 1)
        throw ValidationError(std::string(who) + ": dims must be positive");
    for (double s : v.spacing_mm)
        if (!(s > 0.0))
            throw ValidationError(std::string(who) + ": spacing must be positive");
    if (v.voxels.size() != static_cast<std::size_t>(v.nx) * v.ny * v.nz)
        throw ValidationError(std::string(who) + ": voxel count does not match dims");
}

template <typename T>
void write_bundle_impl(const Grid3<T>& v, const std::filesystem::path& dir,
                       const char* dtype) {
    check_grid(v, "write_bundle");
    std::filesystem::create_directories(dir);
    json meta;
    meta["dims"] = {v.nx, v.ny, v.nz};
    meta["spacing_mm"] = {v.spacing_mm[0], v.spacing_mm[1], v.spacing_mm[2]};
    meta["dtype"] = dtype;
    {
        std::ofstream os(dir / "meta.json");
        if (!os) throw IoError("cannot write " + (dir / "meta.json").string());
        os << meta.dump(2) << "\n";
    }
    std::ofstream os(dir / "voxels.raw", std::ios::binary);
    if (!os) throw IoError("cannot write " + (dir / "voxels.raw").string());
    os.write(reinterpret_cast<const char*>(v.voxels.data()),
             static_cast<std::streamsize>(v.voxels.size() * sizeof(T)));
    if (!os) throw IoError("write failure on " + (dir / "voxels.raw").string());
}

json load_meta(const std::filesystem::path& dir) {
    const std::filesystem::path meta_path = dir / "meta.json";
    std::ifstream is(meta_path);
    if (!is) throw FormatError("bundle is missing meta.json: " + meta_path.string());
    json meta;
    try {
        is >> meta;
    } catch (const json::exception& e) {
        throw FormatError("malformed meta.json in " + dir.string() + ": " + e.what());
    }
    return meta;
}

template <typename T>
Grid3<T> read_bundle_impl(const std::filesystem::path& dir, const char* want_dtype) {
    const json meta = load_meta(dir);
    if (!meta.contains("dims") || !meta.contains("spacing_mm") || !meta.contains("dtype"))
        throw FormatError("meta.json must define dims, spacing_mm and dtype: " +
                          dir.string());
    const std::string dtype = meta["dtype"].get<std::string>();
    if (dtype != "i16" && dtype != "u8")
        throw FormatError("unknown bundle dtype '" + dtype + "' in " + dir.string());
    if (dtype != want_dtype)
        throw FormatError("bundle " + dir.string() + " has dtype '" + dtype +
                          "', expected '" + want_dtype + "'");

    const auto dims = meta["dims"].get<std::vector<int>>();
    const auto spacing = meta["spacing_mm"].get<std::vector<double>>();
    if (dims.size() != 3 || spacing.size() != 3)
        throw FormatError("dims and spacing_mm must have 3 entries: " + dir.string());
    for (double s : spacing)
        if (!(s > 0.0))
            throw ValidationError("bundle spacing must be positive: " + dir.string());
    for (int d : dims)
        if (d < 1) throw FormatError("bundle dims must be positive: " + dir.string());

    Grid3<T> v(dims[0], dims[1], dims[2], {spacing[0], spacing[1], spacing[2]});
    const std::filesystem::path raw_path = dir / "voxels.raw";
    std::ifstream is(raw_path, std::ios::binary);
    if (!is) throw FormatError("bundle is missing voxels.raw: " + raw_path.string());
    const std::size_t want_bytes = v.voxels.size() * sizeof(T);
    is.read(reinterpret_cast<char*>(v.voxels.data()),
            static_cast<std::streamsize>(want_bytes));
    if (static_cast<std::size_t>(is.gcount()) != want_bytes)
        throw FormatError("voxels.raw holds " + std::to_string(is.gcount()) +
                          " bytes but dims promise " + std::to_string(want_bytes) +
                          ": " + raw_path.string());
    is.peek();
    if (!is.eof())
        throw FormatError("voxels.raw is longer than dims promise: " + raw_path.string());

    if constexpr (std::is_same_v<T, std::uint8_t>) {
        for (std::uint8_t b : v.voxels)
            if (b > 1)
                throw FormatError("mask bundle contains non-binary voxel value " +
                                  std::to_string(b) + ": " + dir.string());
    }
    return v;
}

}  // namespace

void write_bundle(const ImageVolume& v, const std::filesystem::path& dir) {
    write_bundle_impl(v, dir, "i16");
}

void write_bundle(const MaskVolume& v, const std::filesystem::path& dir) {
    for (std::uint8_t b : v.voxels)
        if (b > 1) throw ValidationError("mask volumes must be {0,1}-valued");
    write_bundle_impl(v, dir, "u8");
}

ImageVolume read_image_bundle(const std::filesystem::path& dir) {
    return read_bundle_impl<std::int16_t>(dir, "i16");
}

MaskVolume read_mask_bundle(const std::filesystem::path& dir) {
    return read_bundle_impl<std::uint8_t>(dir, "u8");
}

std::string bundle_dtype(const std::filesystem::path& dir) {
    const json meta = load_meta(dir);
    if (!meta.contains("dtype"))
        throw FormatError("meta.json has no dtype: " + dir.string());
    return meta["dtype"].get<std::string>();
}

namespace {

void check_target_spacing(double tx, double ty) {
    if (!(tx > 0.0) || !(ty > 0.0))
        throw ValidationError("resample: target spacing must be positive, got (" +
                              std::to_string(tx) + ", " + std::to_string(ty) + ")");
}

int resampled_extent(int n, double s, double target) {
    return std::max(1, static_cast<int>(std::lround(n * s / target)));
}

}  // namespace

ImageVolume resample_xy(const ImageVolume& v, double target_sx, double target_sy) {
    check_grid(v, "resample_xy");
    check_target_spacing(target_sx, target_sy);
    const int onx = resampled_extent(v.nx, v.spacing_mm[0], target_sx);
    const int ony = resampled_extent(v.ny, v.spacing_mm[1], target_sy);
    ImageVolume out(onx, ony, v.nz, {target_sx, target_sy, v.spacing_mm[2]});

    const double rx = target_sx / v.spacing_mm[0];  // output px -> input px
    const double ry = target_sy / v.spacing_mm[1];
    for (int z = 0; z < v.nz; ++z) {
        for (int oy = 0; oy < ony; ++oy) {
            const double fy = std::clamp(oy * ry, 0.0, static_cast<double>(v.ny - 1));
            const int y0 = static_cast<int>(fy);
            const int y1 = std::min(y0 + 1, v.ny - 1);
            const double wy = fy - y0;
            for (int ox = 0; ox < onx; ++ox) {
                const double fx = std::clamp(ox * rx, 0.0, static_cast<double>(v.nx - 1));
                const int x0 = static_cast<int>(fx);
                const int x1 = std::min(x0 + 1, v.nx - 1);
                const double wx = fx - x0;
                const double top = (1.0 - wx) * v.at(x0, y0, z) + wx * v.at(x1, y0, z);
                const double bot = (1.0 - wx) * v.at(x0, y1, z) + wx * v.at(x1, y1, z);
                const double val = (1.0 - wy) * top + wy * bot;
                out.at(ox, oy, z) = static_cast<std::int16_t>(std::lround(val));
            }
        }
    }
    return out;
}

MaskVolume resample_mask_xy(const MaskVolume& v, double target_sx, double target_sy) {
    check_grid(v, "resample_mask_xy");
    check_target_spacing(target_sx, target_sy);
    const int onx = resampled_extent(v.nx, v.spacing_mm[0], target_sx);
    const int ony = resampled_extent(v.ny, v.spacing_mm[1], target_sy);
    MaskVolume out(onx, ony, v.nz, {target_sx, target_sy, v.spacing_mm[2]});

    const double rx = target_sx / v.spacing_mm[0];
    const double ry = target_sy / v.spacing_mm[1];
    for (int z = 0; z < v.nz; ++z)
        for (int oy = 0; oy < ony; ++oy) {
            const int sy = std::clamp(static_cast<int>(std::lround(oy * ry)), 0, v.ny - 1);
            for (int ox = 0; ox < onx; ++ox) {
                const int sx = std::clamp(static_cast<int>(std::lround(ox * rx)), 0, v.nx - 1);
                out.at(ox, oy, z) = v.at(sx, sy, z) ? 1 : 0;
            }
        }
    return out;
}

float normalize_intensity(float v, float lo, float hi) {
    if (!(lo < hi))
        throw ValidationError("normalize_intensity: window lo must be below hi, got [" +
                              std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return std::clamp((v - lo) / (hi - lo), 0.0f, 1.0f);
}

void normalize_intensity(std::vector<float>& vals, float lo, float hi) {
    if (!(lo < hi))
        throw ValidationError("normalize_intensity: window lo must be below hi, got [" +
                              std::to_string(lo) + ", " + std::to_string(hi) + "]");
    const float scale = 1.0f / (hi - lo);
    for (float& v : vals) v = std::clamp((v - lo) * scale, 0.0f, 1.0f);
}

std::vector<SlicePair> extract_slice_pairs(const ImageVolume& image,
                                           const MaskVolume& mask,
                                           const std::string& subject) {
    check_grid(image, "extract_slice_pairs");
    check_grid(mask, "extract_slice_pairs");
    if (image.nx != mask.nx || image.ny != mask.ny || image.nz != mask.nz)
        throw ShapeError("extract_slice_pairs: image and mask dims disagree");

    std::vector<SlicePair> pairs;
    pairs.reserve(image.nz);
    const std::size_t plane = static_cast<std::size_t>(image.nx) * image.ny;
    for (int z = 0; z < image.nz; ++z) {
        SlicePair p;
        p.h = image.ny;
        p.w = image.nx;
        p.subject = subject;
        p.slice_index = z;
        p.image.resize(plane);
        p.label.resize(plane);
        for (std::size_t i = 0; i < plane; ++i) {
            p.image[i] = static_cast<float>(image.voxels[z * plane + i]);
            p.label[i] = mask.voxels[z * plane + i];
        }
        pairs.push_back(std::move(p));
    }
    return pairs;
}

double PhantomSpec::radius_at(int z) const {
    const double zf = n_slices > 1 ? static_cast<double>(z) / (n_slices - 1) : 0.5;
    const double u = (zf - bulge_center) / bulge_sigma;
    return base_radius + bulge_amplitude * std::exp(-0.5 * u * u);
}

void PhantomSpec::validate() const {
    if (n_slices < 1 || width < 1 || height < 1)
        throw ValidationError("phantom: dims must be positive");
    for (double s : spacing_mm)
        if (!(s > 0.0)) throw ValidationError("phantom: spacing must be positive");
    if (!(base_radius > 0.0))
        throw ValidationError("phantom: base_radius must be positive");
    if (bulge_amplitude < 0.0)
        throw ValidationError("phantom: bulge_amplitude must be non-negative");
    if (!(bulge_sigma > 0.0))
        throw ValidationError("phantom: bulge_sigma must be positive");
    if (!(noise_sd >= 0.0))
        throw ValidationError("phantom: noise_sd must be non-negative");
    if (!(a > 0.0)) throw ValidationError("phantom: contrast slope a must be positive");

    const double cx = (width - 1) / 2.0 + dx;
    const double cy = (height - 1) / 2.0 + dy;
    for (int z = 0; z < n_slices; ++z) {
        const double r = radius_at(z);
        if (cx - r < 0.0 || cx + r > width - 1 || cy - r < 0.0 || cy + r > height - 1)
            throw ValidationError(
                "phantom: disc of radius " + std::to_string(r) + " at slice " +
                std::to_string(z) + " exceeds the " + std::to_string(width) + "x" +
                std::to_string(height) + " slice bounds");
    }
}

Phantom make_phantom(const PhantomSpec& spec) {
    spec.validate();
    Phantom ph;
    ph.image = ImageVolume(spec.width, spec.height, spec.n_slices, spec.spacing_mm);
    ph.mask = MaskVolume(spec.width, spec.height, spec.n_slices, spec.spacing_mm);

    auto rng = substream_rng(spec.seed, "phantom.noise");
    std::normal_distribution<double> noise(0.0, spec.noise_sd);
    const double cx = (spec.width - 1) / 2.0 + spec.dx;
    const double cy = (spec.height - 1) / 2.0 + spec.dy;

    for (int z = 0; z < spec.n_slices; ++z) {
        const double r2 = spec.radius_at(z) * spec.radius_at(z);
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x) {
                const bool fg =
                    (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r2;
                const double level = fg ? spec.aorta_level : spec.background_level;
                double v = spec.a * level + spec.b;
                if (spec.noise_sd > 0.0) v += noise(rng);
                v = std::clamp(v, -32768.0, 32767.0);
                ph.image.at(x, y, z) = static_cast<std::int16_t>(std::lround(v));
                ph.mask.at(x, y, z) = fg ? 1 : 0;
            }
    }
    return ph;
}

namespace {

PhantomSpec phantom_spec_from_json(const json& j, const std::string& where) {
    if (!j.is_object())
        throw ConfigError("phantom spec must be a JSON object: " + where);
    PhantomSpec s;
    const auto geti = [&](const char* k, int& out) {
        if (j.contains(k)) out = j.at(k).get<int>();
    };
    const auto getd = [&](const char* k, double& out) {
        if (j.contains(k)) out = j.at(k).get<double>();
    };
    geti("n_slices", s.n_slices);
    geti("width", s.width);
    geti("height", s.height);
    if (j.contains("spacing_mm")) {
        const auto sp = j.at("spacing_mm").get<std::vector<double>>();
        if (sp.size() != 3)
            throw ConfigError("phantom spacing_mm needs 3 entries: " + where);
        s.spacing_mm = {sp[0], sp[1], sp[2]};
    }
    getd("base_radius", s.base_radius);
    getd("bulge_amplitude", s.bulge_amplitude);
    getd("bulge_center", s.bulge_center);
    getd("bulge_sigma", s.bulge_sigma);
    getd("background_level", s.background_level);
    getd("aorta_level", s.aorta_level);
    getd("noise_sd", s.noise_sd);
    getd("a", s.a);
    getd("b", s.b);
    getd("dx", s.dx);
    getd("dy", s.dy);
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();

    static const char* known[] = {
        "n_slices", "width", "height", "spacing_mm", "base_radius",
        "bulge_amplitude", "bulge_center", "bulge_sigma", "background_level",
        "aorta_level", "noise_sd", "a", "b", "dx", "dy", "seed"};
    for (const auto& [key, _] : j.items()) {
        if (std::none_of(std::begin(known), std::end(known),
                         [&](const char* k) { return key == k; }))
            throw ConfigError("unknown phantom spec key '" + key + "' in " + where);
    }
    return s;
}

}  // namespace

PhantomSpec phantom_spec_from_json_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open phantom spec: " + path.string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed phantom spec JSON " + path.string() + ": " + e.what());
    }
    return phantom_spec_from_json(j, path.string());
}

PhantomSpec phantom_spec_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed phantom spec JSON: ") + e.what());
    }
    return phantom_spec_from_json(j, "<inline>");
}

}  // namespace vseg
