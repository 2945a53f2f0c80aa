#ifndef SSMI_PERTURB_HPP
#define SSMI_PERTURB_HPP

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ssmi/image.hpp"
#include "ssmi/segmask.hpp"

namespace ssmi {

enum class Orientation { Horizontal, Vertical };

// Non-overlapping bands over one axis of an image: column bands for
// Vertical, row bands for Horizontal.
struct StripeMask {
    Orientation orientation = Orientation::Vertical;
    int thickness = 1;        // band extent along the offset axis
    std::vector<int> offsets; // strictly increasing starting positions
    int width = 0, height = 0;

    bool covers(int x, int y) const;
};

// Vertical bands of width m and horizontal bands of height n. The
// stride applies to the vertical mask; the horizontal mask's stride is
// scaled proportionally (stride*n/m, at least n). Bands are clipped at
// the image edge.
std::pair<StripeMask, StripeMask> build_stripe_masks(int width, int height,
                                                     int n, int m, int stride);

enum class ExtractMode {
    Delta, // R = stripe-masked (Sstar - baseline); composition adds
    Copy,  // R = stripe-masked raw Sstar values; composition pastes
};

struct Perturbation {
    Grid values;                // zero outside active
    PixelMask active;           // union of both stripe masks
    StripeMask vertical, horizontal;
    ExtractMode mode = ExtractMode::Delta;
    double eta = 0.0;           // L2 budget
    double prescale_l2 = 0.0;   // ||R||_2 before budget projection
    double scale = 1.0;         // min(1, eta/prescale_l2)
    int anchor_label = 0;       // label of the region this targets, 0 if unset
};

// Stripe-masks the difference (or raw values) and projects onto the L2
// ball of radius eta by uniform scaling.
Perturbation extract_perturbation(const ImageBuffer& sstar,
                                  const ImageBuffer& baseline,
                                  const StripeMask& vertical,
                                  const StripeMask& horizontal, double eta,
                                  ExtractMode mode = ExtractMode::Delta);

// Applies the perturbation inside the window [top+i, bottom] x
// [left+j, right] (clipped to the bbox and the image); pixels outside
// window-and-stripes are bit-identical to base.
ImageBuffer compose_adversarial(const ImageBuffer& base, const Perturbation& r,
                                const TargetRegion& region, int offset_i,
                                int offset_j);

struct PerturbationReport {
    double l2 = 0.0;
    double linf = 0.0;
    std::size_t changed_pixels = 0;
    double changed_ratio = 0.0;
    ImageBuffer heat; // per-pixel max-channel |diff|, normalized to peak

    PerturbationReport(int w, int h) : heat(w, h, 1, 0.0) {}
};

PerturbationReport perturbation_report(const ImageBuffer& original,
                                       const ImageBuffer& adversarial);

// Signed-delta 16-bit PNG pair (<base>_pos.png / <base>_neg.png) plus
// <base>.json manifest carrying masks, offsets, eta and mode.
void save_perturbation(const Perturbation& r,
                       const std::filesystem::path& base_path);
Perturbation load_perturbation(const std::filesystem::path& base_path);

} // namespace ssmi

#endif
