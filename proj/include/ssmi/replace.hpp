#ifndef SSMI_REPLACE_HPP
#define SSMI_REPLACE_HPP

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ssmi/image.hpp"
#include "ssmi/segmask.hpp"

namespace ssmi {

// Which target pixels get overwritten and where their replacement
// values come from. Indices are linear row-major pixel indices.
struct ReplacementPlan {
    int width = 0, height = 0;
    int step = 1;
    double epsilon = 0.25;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs; // (target, source)
};

// Selects every step-th region pixel in row-major scan order, truncated
// so that |pairs| / |region| <= epsilon, and pairs each with its nearest
// background pixel (Chebyshev rings, ties to smallest (row, col)).
ReplacementPlan plan_replacement(const ImageBuffer& img,
                                 const TargetRegion& region, int step,
                                 double epsilon);

// Copies each source pixel's full channel vector onto its target pixel;
// everything else is bit-identical to the input.
ImageBuffer apply_replacement(const ImageBuffer& img,
                              const ReplacementPlan& plan);

std::string plan_to_json(const ReplacementPlan& plan);
ReplacementPlan plan_from_json(std::string_view json_bytes);

} // namespace ssmi

#endif
