#include "ssmi/replace.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace ssmi {

using nlohmann::json;

namespace {

// Nearest non-region pixel by growing Chebyshev rings. Rows are scanned
// top to bottom and columns left to right, so the first hit in a ring
// is the lexicographically smallest (row, col) at that distance.
std::uint32_t nearest_background(const PixelMask& region, int tx, int ty) {
    const int w = region.width(), h = region.height();
    const int max_d = std::max(std::max(tx, w - 1 - tx), std::max(ty, h - 1 - ty));
    for (int d = 1; d <= max_d; ++d) {
        for (int y = ty - d; y <= ty + d; ++y) {
            if (y < 0 || y >= h) continue;
            if (y == ty - d || y == ty + d) {
                for (int x = tx - d; x <= tx + d; ++x) {
                    if (x < 0 || x >= w) continue;
                    if (!region.test(x, y))
                        return static_cast<std::uint32_t>(y) * w + x;
                }
            } else {
                for (int x : {tx - d, tx + d}) {
                    if (x < 0 || x >= w) continue;
                    if (!region.test(x, y))
                        return static_cast<std::uint32_t>(y) * w + x;
                }
            }
        }
    }
    throw Error("no background available: region covers the whole image");
}

} // namespace

ReplacementPlan plan_replacement(const ImageBuffer& img,
                                 const TargetRegion& region, int step,
                                 double epsilon) {
    if (step < 1) throw DomainError("step must be a positive integer");
    if (!(epsilon > 0.0) || epsilon > 1.0)
        throw DomainError("epsilon must lie in (0, 1]");
    if (region.pixels.width() != img.width() ||
        region.pixels.height() != img.height())
        throw DomainError("region mask does not match image dimensions");

    std::vector<std::uint32_t> region_pixels;
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            if (region.pixels.test(x, y))
                region_pixels.push_back(
                    static_cast<std::uint32_t>(y) * img.width() + x);
    if (region_pixels.empty()) throw DomainError("region is empty");
    if (region_pixels.size() == img.pixel_count())
        throw Error("no background available: region covers the whole image");

    const auto max_pairs = static_cast<std::size_t>(
        std::floor(epsilon * static_cast<double>(region_pixels.size())));

    ReplacementPlan plan;
    plan.width = img.width();
    plan.height = img.height();
    plan.step = step;
    plan.epsilon = epsilon;
    for (std::size_t i = 0; i < region_pixels.size() && plan.pairs.size() < max_pairs;
         i += static_cast<std::size_t>(step)) {
        const std::uint32_t t = region_pixels[i];
        const int ty = static_cast<int>(t) / img.width();
        const int tx = static_cast<int>(t) % img.width();
        plan.pairs.emplace_back(t, nearest_background(region.pixels, tx, ty));
    }
    return plan;
}

ImageBuffer apply_replacement(const ImageBuffer& img,
                              const ReplacementPlan& plan) {
    if (plan.width != img.width() || plan.height != img.height())
        throw DomainError("plan was built for different image dimensions");
    std::vector<double> out(img.data().begin(), img.data().end());
    const int c = img.channels();
    for (const auto& [target, source] : plan.pairs) {
        for (int ch = 0; ch < c; ++ch)
            out[static_cast<std::size_t>(target) * c + ch] =
                img.data()[static_cast<std::size_t>(source) * c + ch];
    }
    return ImageBuffer::from_data(img.width(), img.height(), c, std::move(out));
}

std::string plan_to_json(const ReplacementPlan& plan) {
    json doc{{"version", 1},
             {"width", plan.width},
             {"height", plan.height},
             {"step", plan.step},
             {"epsilon", plan.epsilon}};
    auto& pairs = doc["pairs"] = json::array();
    for (const auto& [t, s] : plan.pairs)
        pairs.push_back(json::array({t, s}));
    return doc.dump(2);
}

ReplacementPlan plan_from_json(std::string_view json_bytes) {
    json doc;
    try {
        doc = json::parse(json_bytes);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("plan JSON parse error: ") + e.what(),
                          e.byte);
    }
    ReplacementPlan plan;
    plan.width = doc.at("width").get<int>();
    plan.height = doc.at("height").get<int>();
    plan.step = doc.at("step").get<int>();
    plan.epsilon = doc.at("epsilon").get<double>();
    for (const auto& p : doc.at("pairs"))
        plan.pairs.emplace_back(p.at(0).get<std::uint32_t>(),
                                p.at(1).get<std::uint32_t>());
    return plan;
}

} // namespace ssmi
