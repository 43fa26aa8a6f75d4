#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "vseg/common.hpp"
#include "vseg/volume.hpp"

using namespace vseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& stem)
        : path(fs::temp_directory_path() / ("vseg_vol_" + stem)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ImageVolume random_image(int nx, int ny, int nz, std::uint64_t seed) {
    ImageVolume v(nx, ny, nz, {1.0, 1.0, 1.0});
    auto rng = substream_rng(seed, "test.volume.random");
    std::uniform_int_distribution<int> d(-1000, 1500);
    for (auto& x : v.voxels) x = static_cast<std::int16_t>(d(rng));
    return v;
}

}  // namespace

TEST_CASE("image bundle round trip is bit-exact") {
    TempDir tmp("roundtrip");
    ImageVolume v = random_image(8, 8, 4, 1);
    v.spacing_mm = {0.7, 0.9, 1.25};
    write_bundle(v, tmp.path / "vol");
    ImageVolume r = read_image_bundle(tmp.path / "vol");
    CHECK(r.nx == 8);
    CHECK(r.spacing_mm == v.spacing_mm);
    CHECK(r.voxels == v.voxels);
}

TEST_CASE("mask bundle round trip and binary enforcement") {
    TempDir tmp("mask");
    MaskVolume m(4, 3, 2, {1, 1, 1});
    m.at(1, 1, 0) = 1;
    m.at(3, 2, 1) = 1;
    write_bundle(m, tmp.path / "mask");
    MaskVolume r = read_mask_bundle(tmp.path / "mask");
    CHECK(r.voxels == m.voxels);

    m.at(0, 0, 0) = 2;
    CHECK_THROWS_AS(write_bundle(m, tmp.path / "bad"), ValidationError);
}

TEST_CASE("bundle error paths") {
    TempDir tmp("badbundle");
    ImageVolume v = random_image(4, 4, 2, 2);
    write_bundle(v, tmp.path / "vol");

    SUBCASE("payload shorter than dims promise") {
        fs::resize_file(tmp.path / "vol" / "voxels.raw", 10);
        CHECK_THROWS_AS(read_image_bundle(tmp.path / "vol"), FormatError);
    }
    SUBCASE("payload longer than dims promise") {
        std::ofstream os(tmp.path / "vol" / "voxels.raw",
                         std::ios::binary | std::ios::app);
        os.put(0);
        os.close();
        CHECK_THROWS_AS(read_image_bundle(tmp.path / "vol"), FormatError);
    }
    SUBCASE("zero spacing in metadata") {
        std::ofstream os(tmp.path / "vol" / "meta.json");
        os << R"({"dims":[4,4,2],"spacing_mm":[0.0,1.0,1.0],"dtype":"i16"})";
        os.close();
        CHECK_THROWS_AS(read_image_bundle(tmp.path / "vol"), ValidationError);
    }
    SUBCASE("unknown dtype") {
        std::ofstream os(tmp.path / "vol" / "meta.json");
        os << R"({"dims":[4,4,2],"spacing_mm":[1.0,1.0,1.0],"dtype":"f32"})";
        os.close();
        CHECK_THROWS_AS(read_image_bundle(tmp.path / "vol"), FormatError);
    }
    SUBCASE("declared dtype disagrees with the reader") {
        CHECK_THROWS_AS(read_mask_bundle(tmp.path / "vol"), FormatError);
        CHECK(bundle_dtype(tmp.path / "vol") == "i16");
    }
    SUBCASE("missing meta.json") {
        fs::create_directories(tmp.path / "empty");
        CHECK_THROWS_AS(read_image_bundle(tmp.path / "empty"), FormatError);
    }
    SUBCASE("mask payload with a non-binary voxel") {
        std::ofstream os(tmp.path / "vol" / "meta.json");
        os << R"({"dims":[4,4,2],"spacing_mm":[1.0,1.0,1.0],"dtype":"u8"})";
        os.close();
        std::ofstream raw(tmp.path / "vol" / "voxels.raw", std::ios::binary);
        std::vector<std::uint8_t> bytes(32, 0);
        bytes[5] = 7;
        raw.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
        raw.close();
        CHECK_THROWS_AS(read_mask_bundle(tmp.path / "vol"), FormatError);
    }
}

TEST_CASE("resampling at the existing spacing is the identity") {
    ImageVolume v = random_image(8, 6, 3, 3);
    v.spacing_mm = {0.645, 0.645, 1.0};
    ImageVolume r = resample_xy(v, 0.645, 0.645);
    CHECK(r.nx == v.nx);
    CHECK(r.ny == v.ny);
    CHECK(r.voxels == v.voxels);
}

TEST_CASE("resampling a constant slice stays constant at any spacing") {
    ImageVolume v(5, 5, 2, {0.9, 0.9, 1.0});
    for (auto& x : v.voxels) x = 123;
    ImageVolume r = resample_xy(v, 0.645, 0.645);
    CHECK(r.nx == 7);  // round(5 * 0.9 / 0.645)
    for (auto x : r.voxels) CHECK(x == 123);
}

TEST_CASE("bilinear midpoint of [0, 10] is 5") {
    ImageVolume v(2, 1, 1, {1.0, 1.0, 1.0});
    v.voxels = {0, 10};
    ImageVolume r = resample_xy(v, 0.5, 1.0);
    REQUIRE(r.nx == 4);
    CHECK(r.at(0, 0, 0) == 0);
    CHECK(r.at(1, 0, 0) == 5);   // physical x = 0.5 mm
    CHECK(r.at(2, 0, 0) == 10);
}

TEST_CASE("resampling rejects non-positive target spacing") {
    ImageVolume v = random_image(4, 4, 1, 4);
    CHECK_THROWS_AS(resample_xy(v, 0.0, 1.0), ValidationError);
    CHECK_THROWS_AS(resample_xy(v, 1.0, -0.5), ValidationError);
}

TEST_CASE("mask resampling stays binary and tracks the grid geometry") {
    MaskVolume m(6, 6, 2, {1.0, 1.0, 1.0});
    for (int y = 2; y < 5; ++y)
        for (int x = 2; x < 5; ++x) m.at(x, y, 0) = 1;
    MaskVolume r = resample_mask_xy(m, 0.5, 0.5);
    CHECK(r.nx == 12);
    for (auto v : r.voxels) CHECK(v <= 1);
    // Nearest-neighbor at double resolution reproduces each source pixel 4x.
    std::size_t src = 0, dst = 0;
    for (auto v : m.voxels) src += v;
    for (auto v : r.voxels) dst += v;
    CHECK(dst == 4 * src);
}

TEST_CASE("intensity normalization maps the window onto [0, 1]") {
    CHECK(normalize_intensity(-100.0f) == 0.0f);
    CHECK(normalize_intensity(500.0f) == 1.0f);
    CHECK(normalize_intensity(200.0f) == doctest::Approx(0.5));
    CHECK(normalize_intensity(-4000.0f) == 0.0f);   // clamp below
    CHECK(normalize_intensity(30000.0f) == 1.0f);   // clamp above
    CHECK_THROWS_AS(normalize_intensity(0.0f, 10.0f, 10.0f), ValidationError);

    std::vector<float> vals = {-100.0f, 200.0f, 500.0f, 1e6f};
    normalize_intensity(vals);
    CHECK(vals[0] == 0.0f);
    CHECK(vals[1] == doctest::Approx(0.5));
    CHECK(vals[2] == 1.0f);
    CHECK(vals[3] == 1.0f);
}

TEST_CASE("slice extraction preserves geometry and provenance") {
    PhantomSpec spec;
    spec.n_slices = 4;
    spec.noise_sd = 0.0;
    Phantom ph = make_phantom(spec);
    const auto pairs = extract_slice_pairs(ph.image, ph.mask, "subjA");
    REQUIRE(pairs.size() == 4);
    CHECK(pairs[2].subject == "subjA");
    CHECK(pairs[2].slice_index == 2);
    CHECK(pairs[2].h == 64);
    CHECK(pairs[2].w == 64);
    CHECK(pairs[2].image[64 * 32 + 32] == doctest::Approx(300.0));
    CHECK(pairs[2].label[64 * 32 + 32] == 1);

    MaskVolume wrong(3, 3, 3, {1, 1, 1});
    CHECK_THROWS_AS(extract_slice_pairs(ph.image, wrong, "x"), ShapeError);
}

TEST_CASE("noiseless phantom foreground is exactly the aorta level") {
    PhantomSpec spec;
    spec.noise_sd = 0.0;
    Phantom ph = make_phantom(spec);
    for (std::size_t i = 0; i < ph.mask.size(); ++i) {
        if (ph.mask.voxels[i])
            CHECK(ph.image.voxels[i] == 300);
        else
            CHECK(ph.image.voxels[i] == 0);
    }
}

TEST_CASE("contrast parameters shift the noiseless phantom linearly") {
    PhantomSpec spec;
    spec.noise_sd = 0.0;
    spec.a = 1.15;
    spec.b = -60.0;
    Phantom ph = make_phantom(spec);
    for (std::size_t i = 0; i < ph.mask.size(); ++i) {
        const int want = ph.mask.voxels[i] ? 285 : -60;  // 1.15*300-60, 1.15*0-60
        CHECK(ph.image.voxels[i] == want);
    }
}

TEST_CASE("phantom generation is seed-deterministic") {
    PhantomSpec spec;
    spec.seed = 42;
    Phantom a = make_phantom(spec);
    Phantom b = make_phantom(spec);
    CHECK(a.image.voxels == b.image.voxels);
    CHECK(a.mask.voxels == b.mask.voxels);

    spec.seed = 43;
    Phantom c = make_phantom(spec);
    CHECK(a.image.voxels != c.image.voxels);
    CHECK(a.mask.voxels == c.mask.voxels);  // mask is noiseless, seed-free
}

TEST_CASE("phantom mask equals the per-slice rasterization pixel count") {
    PhantomSpec spec;
    spec.dx = 5.0;
    spec.dy = -3.0;
    Phantom ph = make_phantom(spec);
    const double cx = (spec.width - 1) / 2.0 + spec.dx;
    const double cy = (spec.height - 1) / 2.0 + spec.dy;
    for (int z = 0; z < spec.n_slices; ++z) {
        std::size_t expect = 0;
        const double r2 = spec.radius_at(z) * spec.radius_at(z);
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x)
                if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r2) ++expect;
        std::size_t got = 0;
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x) got += ph.mask.at(x, y, z);
        CHECK(got == expect);
        CHECK(got > 0);
    }
}

TEST_CASE("phantom foreground is one 26-connected component") {
    PhantomSpec spec;
    spec.dx = 8.0;
    Phantom ph = make_phantom(spec);
    std::size_t total = 0;
    for (auto v : ph.mask.voxels) total += v;
    const auto comp = oracle::largest_component_bfs(ph.mask.voxels, spec.width,
                                                    spec.height, spec.n_slices, 1);
    CHECK(comp.size() == total);
}

TEST_CASE("a disc pushed past the slice border is rejected") {
    PhantomSpec spec;
    spec.dx = 30.0;  // center at 61.5, radius >= 8 exceeds width 64
    CHECK_THROWS_AS(make_phantom(spec), ValidationError);

    PhantomSpec tall;
    tall.bulge_amplitude = 40.0;  // bulge alone exceeds the slice
    CHECK_THROWS_AS(make_phantom(tall), ValidationError);
}

TEST_CASE("phantom spec JSON parsing") {
    const PhantomSpec s = phantom_spec_from_json_text(
        R"({"n_slices": 8, "width": 32, "height": 32, "base_radius": 5.0,
            "bulge_amplitude": 3.0, "noise_sd": 10.0, "a": 1.1, "b": -20,
            "dx": 2.5, "seed": 7})");
    CHECK(s.n_slices == 8);
    CHECK(s.width == 32);
    CHECK(s.base_radius == 5.0);
    CHECK(s.a == doctest::Approx(1.1));
    CHECK(s.dx == 2.5);
    CHECK(s.seed == 7);
    CHECK(s.bulge_center == 0.5);  // default retained

    CHECK_THROWS_AS(phantom_spec_from_json_text(R"({"radius": 5})"), ConfigError);
    CHECK_THROWS_AS(phantom_spec_from_json_text("[1,2]"), ConfigError);
}
