#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "oracles.hpp"
#include "vseg/augment.hpp"
#include "vseg/common.hpp"

using namespace vseg;

namespace {

SlicePair make_slice(int w, int h, float fill = 0.0f) {
    SlicePair s;
    s.w = w;
    s.h = h;
    s.subject = "subj";
    s.slice_index = 3;
    s.image.assign(static_cast<std::size_t>(w) * h, fill);
    s.label.assign(static_cast<std::size_t>(w) * h, 0);
    return s;
}

SlicePair ramp_slice(int n) {
    SlicePair s = make_slice(n, n);
    for (std::size_t i = 0; i < s.image.size(); ++i)
        s.image[i] = static_cast<float>(i);
    return s;
}

std::size_t label_sum(const SlicePair& s) {
    std::size_t n = 0;
    for (auto v : s.label) n += v;
    return n;
}

}  // namespace

TEST_CASE("gray map identity and closed-form application") {
    SlicePair s = make_slice(4, 4, 100.0f);
    SlicePair id = apply_gray(s, {1.0, 0.0});
    CHECK(id.image == s.image);

    SlicePair shifted = apply_gray(s, {1.2, -10.0});
    for (float v : shifted.image) CHECK(v == doctest::Approx(110.0));
    CHECK(shifted.label == s.label);  // labels never gray-mapped
}

TEST_CASE("gray map clamps to the representable intensity range") {
    SlicePair s = make_slice(2, 2, 100.0f);
    SlicePair hi = apply_gray(s, {1.0, 1e6});
    for (float v : hi.image) CHECK(v == kIntensityMax);
    SlicePair lo = apply_gray(s, {1.0, -1e6});
    for (float v : lo.image) CHECK(v == kIntensityMin);
}

TEST_CASE("gray map requires a positive slope") {
    SlicePair s = make_slice(2, 2);
    CHECK_THROWS_AS(apply_gray(s, {0.0, 0.0}), ValidationError);
    CHECK_THROWS_AS(apply_gray(s, {-1.0, 0.0}), ValidationError);
}

TEST_CASE("window enumeration matches the closed-form counts") {
    const WindowGrid grid{.window = 512, .stride = 64};
    SUBCASE("512x512 has exactly one window") {
        const auto w = enumerate_windows(512, 512, grid);
        REQUIRE(w.size() == 1);
        CHECK(w[0] == std::array<int, 2>{0, 0});
    }
    SUBCASE("640x640 has 3x3 windows") {
        CHECK(enumerate_windows(640, 640, grid).size() == 9);
    }
    SUBCASE("576x512 has 2x1 windows") {
        const auto w = enumerate_windows(576, 512, grid);
        REQUIRE(w.size() == 2);
        CHECK(w[0] == std::array<int, 2>{0, 0});
        CHECK(w[1] == std::array<int, 2>{64, 0});
    }
    SUBCASE("too-small extent reports the required minimum") {
        try {
            enumerate_windows(448, 512, grid);
            FAIL("expected ValidationError");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("512") != std::string::npos);
        }
    }
}

TEST_CASE("window enumeration equals brute force on 50 seeded geometries") {
    auto rng = substream_rng(61, "test.windows.brute");
    std::uniform_int_distribution<int> extent(16, 200);
    std::uniform_int_distribution<int> wsz(8, 16);
    std::uniform_int_distribution<int> stride(1, 24);
    for (int c = 0; c < 50; ++c) {
        const WindowGrid grid{.window = wsz(rng), .stride = stride(rng)};
        const int w = std::max(extent(rng), grid.window);
        const int h = std::max(extent(rng), grid.window);
        const auto got = enumerate_windows(w, h, grid);
        const auto want = oracle::window_origins_brute(h, w, grid.window, grid.stride);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i][0] == want[i][1]);  // oracle stores (oy, ox)
            CHECK(got[i][1] == want[i][0]);
        }
    }
}

TEST_CASE("window cropping copies the exact sub-rectangle") {
    SlicePair s = ramp_slice(6);
    s.label[2 * 6 + 3] = 1;
    SlicePair c = crop_window(s, 2, 1, 3);
    CHECK(c.w == 3);
    CHECK(c.image[0] == 1 * 6 + 2);
    CHECK(c.image[8] == 3 * 6 + 4);
    CHECK(c.label[1 * 3 + 1] == 1);  // (3,2) global -> (1,1) local
    CHECK(label_sum(c) == 1);
    CHECK_THROWS_AS(crop_window(s, 5, 5, 3), ValidationError);
}

TEST_CASE("gray variant list is identity-first, seeded, in range") {
    AugPolicy p;
    p.seed = 5;
    const auto maps = gray_variants(p);
    REQUIRE(maps.size() == 8);
    CHECK(maps[0].a == 1.0);
    CHECK(maps[0].b == 0.0);
    for (std::size_t i = 1; i < maps.size(); ++i) {
        CHECK(maps[i].a >= 0.8);
        CHECK(maps[i].a <= 1.2);
        CHECK(maps[i].b >= -100.0);
        CHECK(maps[i].b <= 100.0);
    }
    const auto again = gray_variants(p);
    for (std::size_t i = 0; i < maps.size(); ++i) {
        CHECK(maps[i].a == again[i].a);
        CHECK(maps[i].b == again[i].b);
    }
    p.seed = 6;
    const auto other = gray_variants(p);
    CHECK(other[1].a != maps[1].a);
}

TEST_CASE("gray-and-translate expansion counts follow the product formula") {
    AugPolicy p;
    p.grid = {.window = 512, .stride = 64};
    SUBCASE("single-window slice gives 8 pairs") {
        const auto out = expand_gt(make_slice(512, 512), p);
        CHECK(out.size() == 8);
    }
    SUBCASE("640x640 gives 72 pairs") {
        const auto out = expand_gt(make_slice(640, 640), p);
        CHECK(out.size() == 72);
    }
}

TEST_CASE("first expanded pair is the untouched plain crop") {
    AugPolicy p;
    p.grid = {.window = 8, .stride = 4};
    SlicePair s = ramp_slice(16);
    const auto out = expand_gt(s, p);
    REQUIRE(out.size() == 8 * 9);
    const SlicePair plain = crop_window(s, 0, 0, 8);
    CHECK(out[0].image == plain.image);
    CHECK(out[0].label == plain.label);
    CHECK(out[0].descriptor.substr(0, 7) == "gt:a=1,");
}

TEST_CASE("expanded labels are windowed but never gray-mapped") {
    AugPolicy p;
    p.grid = {.window = 8, .stride = 8};
    SlicePair s = make_slice(16, 16, 100.0f);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) s.label[y * 16 + x] = (x < 8) ? 1 : 0;

    const auto out = expand_gt(s, p);
    REQUIRE(out.size() == 8 * 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::size_t expect = (i % 2 == 0) ? 64 : 0;  // left vs right column
        CHECK(label_sum(out[i]) == expect);
        for (auto v : out[i].label) CHECK(v <= 1);
    }
}

TEST_CASE("expansion descriptors carry the gray and window parameters") {
    AugPolicy p;
    p.grid = {.window = 8, .stride = 8};
    const auto out = expand_gt(make_slice(16, 16), p);
    CHECK(out[0].descriptor == "gt:a=1,b=0,w=(0,0)");
    CHECK(out[1].descriptor == "gt:a=1,b=0,w=(8,0)");
    CHECK(out[4].descriptor.substr(0, 5) == "gt:a=");
    CHECK(out[4].descriptor.find(",w=(0,0)") != std::string::npos);
}

TEST_CASE("rotation-mirror variants of a constant slice are identical") {
    AugPolicy p{.kind = AugKind::RotateMirror};
    const auto out = expand_rm(make_slice(8, 8, 42.0f), p);
    REQUIRE(out.size() == 8);
    for (const auto& v : out) {
        CHECK(v.image == out[0].image);
        CHECK(v.label == out[0].label);
    }
}

TEST_CASE("every rotation-mirror variant has an inverse in the group") {
    SlicePair s = ramp_slice(5);
    for (int k = 0; k < 8; ++k) {
        const SlicePair t = rm_variant(s, k);
        bool recovered = false;
        for (int k2 = 0; k2 < 8 && !recovered; ++k2)
            recovered = rm_variant(t, k2).image == s.image;
        CAPTURE(k);
        CHECK(recovered);
    }
}

TEST_CASE("rotation-mirror on an asymmetric L matches the index-map oracle") {
    SlicePair s = make_slice(5, 5);
    s.label[0 * 5 + 0] = 1;
    s.label[1 * 5 + 0] = 1;
    s.label[1 * 5 + 1] = 1;  // L shape, no symmetry
    for (std::size_t i = 0; i < s.image.size(); ++i)
        s.image[i] = static_cast<float>(i);

    AugPolicy p{.kind = AugKind::RotateMirror};
    const auto out = expand_rm(s, p);

    std::set<std::vector<std::uint8_t>> got;
    for (const auto& v : out) {
        CHECK(label_sum(v) == 3);  // foreground count preserved
        got.insert(v.label);
    }
    CHECK(got.size() == 8);  // all distinct for an asymmetric shape

    std::set<std::vector<std::uint8_t>> want;
    for (int k = 0; k < 8; ++k) {
        std::vector<std::uint8_t> lbl(25, 0);
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 5; ++x) {
                const auto [dy, dx] = oracle::dihedral_dest(k, y, x, 5);
                lbl[dy * 5 + dx] = s.label[y * 5 + x];
            }
        want.insert(lbl);
    }
    CHECK(got == want);
}

TEST_CASE("rotation-mirror requires square slices") {
    AugPolicy p{.kind = AugKind::RotateMirror};
    CHECK_THROWS_AS(expand_rm(make_slice(8, 6), p), ValidationError);
    CHECK_THROWS_AS(rm_variant(make_slice(8, 6), 1), ValidationError);
}

TEST_CASE("policy kind and expansion function must agree") {
    CHECK_THROWS_AS(expand_gt(make_slice(8, 8), AugPolicy{.kind = AugKind::RotateMirror}),
                    ValidationError);
    AugPolicy gt;
    gt.grid = {.window = 8, .stride = 8};
    CHECK_THROWS_AS(expand_rm(make_slice(8, 8), gt), ValidationError);
    CHECK(expand(make_slice(8, 8), gt).size() == 8);
}

TEST_CASE("expansions are deterministic and order-stable") {
    AugPolicy p;
    p.grid = {.window = 8, .stride = 4};
    p.seed = 17;
    SlicePair s = ramp_slice(16);
    const auto a = expand_gt(s, p);
    const auto b = expand_gt(s, p);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].image == b[i].image);
        CHECK(a[i].descriptor == b[i].descriptor);
    }
}
