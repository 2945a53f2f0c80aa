#include <doctest.h>

#include <climits>
#include <random>
#include <set>

#include "ssmi/replace.hpp"

using namespace ssmi;

namespace {

TargetRegion make_region(int w, int h, const std::vector<std::pair<int, int>>& px) {
    TargetRegion r;
    r.label = 1;
    r.pixels = PixelMask(w, h);
    r.bbox = BBox{h, -1, w, -1};
    for (const auto& [x, y] : px) {
        r.pixels.set(x, y);
        r.bbox.top = std::min(r.bbox.top, y);
        r.bbox.bottom = std::max(r.bbox.bottom, y);
        r.bbox.left = std::min(r.bbox.left, x);
        r.bbox.right = std::max(r.bbox.right, x);
    }
    return r;
}

TargetRegion rect_region(int w, int h, int x0, int y0, int x1, int y1) {
    std::vector<std::pair<int, int>> px;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) px.push_back({x, y});
    return make_region(w, h, px);
}

// exhaustive nearest-background scan: min Chebyshev distance, then
// smallest (row, col)
std::uint32_t nearest_oracle(const PixelMask& region, int tx, int ty) {
    int best_d = INT_MAX;
    std::uint32_t best = 0;
    for (int y = 0; y < region.height(); ++y) {
        for (int x = 0; x < region.width(); ++x) {
            if (region.test(x, y)) continue;
            const int d = std::max(std::abs(x - tx), std::abs(y - ty));
            if (d < best_d) {
                best_d = d;
                best = static_cast<std::uint32_t>(y) * region.width() + x;
            }
        }
    }
    REQUIRE(best_d != INT_MAX);
    return best;
}

ImageBuffer random_image(std::mt19937_64& rng, int w, int h, int c) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<double> px(static_cast<std::size_t>(w) * h * c);
    for (double& v : px) v = uni(rng);
    return ImageBuffer::from_data(w, h, c, std::move(px));
}

} // namespace

TEST_CASE("plan: 100-pixel region, step 4, epsilon 0.25 gives 25 pairs") {
    const ImageBuffer img(20, 20, 1, 0.5);
    const TargetRegion region = rect_region(20, 20, 5, 5, 14, 14); // 10x10
    const ReplacementPlan plan = plan_replacement(img, region, 4, 0.25);
    CHECK(plan.pairs.size() == 25);
    CHECK(static_cast<double>(plan.pairs.size()) / 100.0 == 0.25);
}

TEST_CASE("plan: step larger than the region selects only index 0") {
    const ImageBuffer img(8, 8, 1, 0.5);
    const TargetRegion region = rect_region(8, 8, 2, 2, 4, 4); // 9 pixels
    const ReplacementPlan plan = plan_replacement(img, region, 1000, 0.5);
    REQUIRE(plan.pairs.size() == 1);
    CHECK(plan.pairs[0].first == 2u * 8u + 2u); // first region pixel in scan order
}

TEST_CASE("plan: border region forces sources to the open side") {
    // region fills all columns except the rightmost one
    const ImageBuffer img(6, 4, 1, 0.5);
    const TargetRegion region = rect_region(6, 4, 0, 0, 4, 3);
    const ReplacementPlan plan = plan_replacement(img, region, 3, 1.0);
    REQUIRE(!plan.pairs.empty());
    for (const auto& [t, s] : plan.pairs) {
        CHECK(static_cast<int>(s) % 6 == 5); // background column
        const int ty = static_cast<int>(t) / 6, tx = static_cast<int>(t) % 6;
        CHECK(s == nearest_oracle(region.pixels, tx, ty));
    }
}

TEST_CASE("plan: nearest-background matches the exhaustive oracle") {
    std::mt19937_64 rng(41);
    for (int i = 0; i < 40; ++i) {
        std::uniform_int_distribution<int> dim(4, 12);
        const int w = dim(rng), h = dim(rng);
        std::uniform_int_distribution<int> px(0, w - 1), py(0, h - 1);
        const int x0 = px(rng), y0 = py(rng);
        const int x1 = std::min(w - 1, x0 + px(rng) / 2);
        const int y1 = std::min(h - 1, y0 + py(rng) / 2);
        const TargetRegion region = rect_region(w, h, x0, y0, x1, y1);
        if (region.pixels.count() == static_cast<std::size_t>(w) * h) continue;
        const ImageBuffer img(w, h, 1, 0.5);
        const ReplacementPlan plan = plan_replacement(img, region, 2, 1.0);
        for (const auto& [t, s] : plan.pairs) {
            const int ty = static_cast<int>(t) / w, tx = static_cast<int>(t) % w;
            CHECK(s == nearest_oracle(region.pixels, tx, ty));
        }
    }
}

TEST_CASE("plan: invariants hold on random fixtures") {
    std::mt19937_64 rng(42);
    for (int i = 0; i < 30; ++i) {
        std::uniform_int_distribution<int> dim(5, 14);
        const int w = dim(rng), h = dim(rng);
        std::vector<std::pair<int, int>> px;
        std::uniform_int_distribution<int> coin(0, 3);
        for (int y = 1; y < h - 1; ++y)
            for (int x = 1; x < w - 1; ++x)
                if (coin(rng) == 0) px.push_back({x, y});
        if (px.empty()) continue;
        const TargetRegion region = make_region(w, h, px);
        std::uniform_int_distribution<int> sdist(1, 5);
        const int step = sdist(rng);
        const double eps = 0.05 + 0.95 * std::uniform_real_distribution<double>()(rng);
        const ReplacementPlan plan =
            plan_replacement(ImageBuffer(w, h, 3, 0.2), region, step, eps);

        CHECK(static_cast<double>(plan.pairs.size()) <=
              eps * static_cast<double>(region.pixels.count()));
        std::set<std::uint32_t> targets;
        for (const auto& [t, s] : plan.pairs) {
            CHECK(region.pixels.test(static_cast<int>(t) % w, static_cast<int>(t) / w));
            CHECK(!region.pixels.test(static_cast<int>(s) % w, static_cast<int>(s) / w));
            CHECK(targets.insert(t).second); // distinct targets
        }
    }
}

TEST_CASE("plan: determinism") {
    const ImageBuffer img(10, 10, 3, 0.3);
    const TargetRegion region = rect_region(10, 10, 2, 3, 7, 8);
    const ReplacementPlan a = plan_replacement(img, region, 3, 0.5);
    const ReplacementPlan b = plan_replacement(img, region, 3, 0.5);
    CHECK(a.pairs == b.pairs);
}

TEST_CASE("plan: argument validation") {
    const ImageBuffer img(4, 4, 1, 0.5);
    const TargetRegion region = rect_region(4, 4, 1, 1, 2, 2);
    CHECK_THROWS_AS(plan_replacement(img, region, 0, 0.25), DomainError);
    CHECK_THROWS_AS(plan_replacement(img, region, 1, 0.0), DomainError);
    CHECK_THROWS_AS(plan_replacement(img, region, 1, 1.5), DomainError);

    const TargetRegion everything = rect_region(4, 4, 0, 0, 3, 3);
    CHECK_THROWS_AS(plan_replacement(img, everything, 1, 1.0), Error);
}

TEST_CASE("apply: empty plan is the identity") {
    std::mt19937_64 rng(43);
    const ImageBuffer img = random_image(rng, 6, 5, 3);
    ReplacementPlan plan;
    plan.width = 6;
    plan.height = 5;
    CHECK(apply_replacement(img, plan) == img);
}

TEST_CASE("apply: single pair copies the full channel vector") {
    std::mt19937_64 rng(44);
    const ImageBuffer img = random_image(rng, 5, 5, 3);
    ReplacementPlan plan;
    plan.width = plan.height = 5;
    plan.pairs = {{7, 13}};
    const ImageBuffer out = apply_replacement(img, plan);
    for (int ch = 0; ch < 3; ++ch)
        CHECK(out.data()[7 * 3 + ch] == img.data()[13 * 3 + ch]);
    for (std::size_t i = 0; i < out.value_count(); ++i)
        if (i / 3 != 7) CHECK(out.data()[i] == img.data()[i]);
}

TEST_CASE("apply: two-tone 8x8 fixture matches the hand-simulated result") {
    // left half dark, right half bright; region is the left 4 columns,
    // step 5 picks region scan indices 0,5,10,... => row-major positions
    std::vector<double> px(64, 0.0);
    for (int y = 0; y < 8; ++y)
        for (int x = 4; x < 8; ++x) px[y * 8 + x] = 1.0;
    const ImageBuffer img = ImageBuffer::from_data(8, 8, 1, px);
    const TargetRegion region = rect_region(8, 8, 0, 0, 3, 7); // 32 pixels
    const ReplacementPlan plan = plan_replacement(img, region, 5, 0.25);
    REQUIRE(plan.pairs.size() == 7); // ceil(32/5) = 7 <= floor(0.25*32) = 8

    // hand simulation: region scan order is (x, y) = (0,0),(1,0),(2,0),(3,0),(0,1)...
    // picks indices 0,5,10,15,20,25,30 -> (0,0),(1,1),(2,2),(3,3),(0,5),(1,6),(2,7);
    // sources sit in column 4, on the lowest row of the winning Chebyshev ring
    const std::vector<std::pair<int, int>> expect_targets = {
        {0, 0}, {1, 1}, {2, 2}, {3, 3}, {0, 5}, {1, 6}, {2, 7}};
    const std::vector<std::uint32_t> expect_sources = {4, 4, 4, 20, 12, 28, 44};
    for (std::size_t i = 0; i < plan.pairs.size(); ++i) {
        const auto [x, y] = expect_targets[i];
        CHECK(plan.pairs[i].first == static_cast<std::uint32_t>(y * 8 + x));
        CHECK(plan.pairs[i].second == expect_sources[i]);
    }
    const ImageBuffer out = apply_replacement(img, plan);
    std::vector<double> want = px;
    for (const auto& [x, y] : expect_targets) want[y * 8 + x] = 1.0;
    for (std::size_t i = 0; i < 64; ++i) CHECK(out.data()[i] == want[i]);
}

TEST_CASE("apply: locality and idempotence") {
    std::mt19937_64 rng(45);
    const ImageBuffer img = random_image(rng, 9, 9, 3);
    const TargetRegion region = rect_region(9, 9, 2, 2, 6, 6);
    const ReplacementPlan plan = plan_replacement(img, region, 2, 0.25);
    const ImageBuffer once = apply_replacement(img, plan);
    for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 9; ++x)
            if (!region.pixels.test(x, y))
                for (int ch = 0; ch < 3; ++ch)
                    CHECK(once.at(x, y, ch) == img.at(x, y, ch));
    CHECK(apply_replacement(once, plan) == once);
}

TEST_CASE("apply: dimension mismatch is rejected") {
    ReplacementPlan plan;
    plan.width = 4;
    plan.height = 4;
    CHECK_THROWS_AS(apply_replacement(ImageBuffer(5, 4, 1), plan), DomainError);
}

TEST_CASE("plan JSON round trip") {
    const ImageBuffer img(10, 10, 1, 0.5);
    const TargetRegion region = rect_region(10, 10, 3, 3, 7, 7);
    const ReplacementPlan plan = plan_replacement(img, region, 3, 0.4);
    const ReplacementPlan back = plan_from_json(plan_to_json(plan));
    CHECK(back.width == plan.width);
    CHECK(back.height == plan.height);
    CHECK(back.step == plan.step);
    CHECK(back.epsilon == plan.epsilon);
    CHECK(back.pairs == plan.pairs);
}
