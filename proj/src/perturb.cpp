#include "ssmi/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "ssmi/image_io.hpp"

namespace ssmi {

using nlohmann::json;

bool StripeMask::covers(int x, int y) const {
    const int pos = (orientation == Orientation::Vertical) ? x : y;
    // offsets are sorted; find the band starting at or before pos
    auto it = std::upper_bound(offsets.begin(), offsets.end(), pos);
    if (it == offsets.begin()) return false;
    return pos < *(it - 1) + thickness;
}

std::pair<StripeMask, StripeMask> build_stripe_masks(int width, int height,
                                                     int n, int m, int stride) {
    if (width < 1 || height < 1) throw DomainError("image dims must be positive");
    if (n < 1 || m < 1) throw DomainError("band sizes n, m must be >= 1");
    if (stride < m)
        throw DomainError("stride " + std::to_string(stride) +
                          " smaller than band width " + std::to_string(m) +
                          " would overlap stripes");

    StripeMask vertical;
    vertical.orientation = Orientation::Vertical;
    vertical.thickness = m;
    vertical.width = width;
    vertical.height = height;
    for (int s = 0; s < width; s += stride) vertical.offsets.push_back(s);

    const int h_stride = std::max(
        n, static_cast<int>(std::llround(static_cast<double>(stride) * n / m)));
    StripeMask horizontal;
    horizontal.orientation = Orientation::Horizontal;
    horizontal.thickness = n;
    horizontal.width = width;
    horizontal.height = height;
    for (int s = 0; s < height; s += h_stride) horizontal.offsets.push_back(s);

    return {vertical, horizontal};
}

Perturbation extract_perturbation(const ImageBuffer& sstar,
                                  const ImageBuffer& baseline,
                                  const StripeMask& vertical,
                                  const StripeMask& horizontal, double eta,
                                  ExtractMode mode) {
    if (!sstar.same_shape(baseline))
        throw DomainError("reconstructed sample and baseline dims differ");
    if (vertical.width != sstar.width() || vertical.height != sstar.height() ||
        horizontal.width != sstar.width() || horizontal.height != sstar.height())
        throw DomainError("stripe masks were built for different dims");
    if (eta < 0.0) throw DomainError("eta must be non-negative");

    Perturbation r;
    r.values = Grid(sstar.width(), sstar.height(), sstar.channels(), 0.0);
    r.active = PixelMask(sstar.width(), sstar.height());
    r.vertical = vertical;
    r.horizontal = horizontal;
    r.mode = mode;
    r.eta = eta;

    double sq = 0.0;
    for (int y = 0; y < sstar.height(); ++y) {
        for (int x = 0; x < sstar.width(); ++x) {
            if (!vertical.covers(x, y) && !horizontal.covers(x, y)) continue;
            r.active.set(x, y);
            for (int c = 0; c < sstar.channels(); ++c) {
                const double v = (mode == ExtractMode::Delta)
                                     ? sstar.at(x, y, c) - baseline.at(x, y, c)
                                     : sstar.at(x, y, c);
                r.values.at(x, y, c) = v;
                sq += v * v;
            }
        }
    }
    r.prescale_l2 = std::sqrt(sq);
    r.scale = (r.prescale_l2 > eta && r.prescale_l2 > 0.0)
                  ? eta / r.prescale_l2
                  : 1.0;
    if (r.scale != 1.0)
        for (double& v : r.values.data) v *= r.scale;
    return r;
}

ImageBuffer compose_adversarial(const ImageBuffer& base, const Perturbation& r,
                                const TargetRegion& region, int offset_i,
                                int offset_j) {
    if (r.values.width != base.width() || r.values.height != base.height() ||
        r.values.channels != base.channels())
        throw DomainError("perturbation dims do not match base image");
    if (region.pixels.width() != base.width() ||
        region.pixels.height() != base.height())
        throw DomainError("region mask dims do not match base image");

    const int row0 = std::max({0, region.bbox.top, region.bbox.top + offset_i});
    const int row1 = std::min(region.bbox.bottom, base.height() - 1);
    const int col0 = std::max({0, region.bbox.left, region.bbox.left + offset_j});
    const int col1 = std::min(region.bbox.right, base.width() - 1);
    if (row0 > row1 || col0 > col1)
        throw DomainError("empty application: offset pushes the window outside "
                          "the region");

    ImageBuffer out = base;
    for (int y = row0; y <= row1; ++y) {
        for (int x = col0; x <= col1; ++x) {
            if (!r.active.test(x, y)) continue;
            for (int c = 0; c < base.channels(); ++c) {
                const double v = (r.mode == ExtractMode::Delta)
                                     ? base.at(x, y, c) + r.values.at(x, y, c)
                                     : r.values.at(x, y, c);
                out.set(x, y, c, v);
            }
        }
    }
    return out;
}

PerturbationReport perturbation_report(const ImageBuffer& original,
                                       const ImageBuffer& adversarial) {
    if (!original.same_shape(adversarial))
        throw DomainError("image dims differ");
    PerturbationReport rep(original.width(), original.height());
    double sq = 0.0;
    double peak = 0.0;
    std::vector<double> pixel_max(original.pixel_count(), 0.0);
    for (int y = 0; y < original.height(); ++y) {
        for (int x = 0; x < original.width(); ++x) {
            double m = 0.0;
            for (int c = 0; c < original.channels(); ++c) {
                const double d =
                    adversarial.at(x, y, c) - original.at(x, y, c);
                sq += d * d;
                m = std::max(m, std::abs(d));
            }
            pixel_max[static_cast<std::size_t>(y) * original.width() + x] = m;
            if (m > 0.0) ++rep.changed_pixels;
            rep.linf = std::max(rep.linf, m);
            peak = std::max(peak, m);
        }
    }
    rep.l2 = std::sqrt(sq);
    rep.changed_ratio = static_cast<double>(rep.changed_pixels) /
                        static_cast<double>(original.pixel_count());
    if (peak > 0.0)
        for (int y = 0; y < original.height(); ++y)
            for (int x = 0; x < original.width(); ++x)
                rep.heat.set(x, y, 0,
                             pixel_max[static_cast<std::size_t>(y) * original.width() + x] /
                                 peak);
    return rep;
}

namespace {

json stripe_to_json(const StripeMask& m) {
    return json{{"orientation",
                 m.orientation == Orientation::Vertical ? "vertical" : "horizontal"},
                {"thickness", m.thickness},
                {"offsets", m.offsets},
                {"width", m.width},
                {"height", m.height}};
}

StripeMask stripe_from_json(const json& j) {
    StripeMask m;
    m.orientation = (j.at("orientation").get<std::string>() == "vertical")
                        ? Orientation::Vertical
                        : Orientation::Horizontal;
    m.thickness = j.at("thickness").get<int>();
    m.offsets = j.at("offsets").get<std::vector<int>>();
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    return m;
}

} // namespace

void save_perturbation(const Perturbation& r,
                       const std::filesystem::path& base_path) {
    Grid pos(r.values.width, r.values.height, r.values.channels, 0.0);
    Grid neg = pos;
    for (std::size_t i = 0; i < r.values.data.size(); ++i) {
        const double v = r.values.data[i];
        if (v >= 0.0)
            pos.data[i] = v;
        else
            neg.data[i] = -v;
    }
    const std::string base = base_path.string();
    save_png16(pos, base + "_pos.png");
    save_png16(neg, base + "_neg.png");

    json doc{{"version", 1},
             {"mode", r.mode == ExtractMode::Delta ? "delta" : "copy"},
             {"eta", r.eta},
             {"prescale_l2", r.prescale_l2},
             {"scale", r.scale},
             {"anchor_label", r.anchor_label},
             {"channels", r.values.channels},
             {"masks", json{{"vertical", stripe_to_json(r.vertical)},
                            {"horizontal", stripe_to_json(r.horizontal)}}},
             {"files", json{{"positive", base_path.filename().string() + "_pos.png"},
                            {"negative", base_path.filename().string() + "_neg.png"}}}};
    std::ofstream out(base + ".json");
    if (!out) throw FormatError("cannot open " + base + ".json for writing");
    out << doc.dump(2) << "\n";
}

Perturbation load_perturbation(const std::filesystem::path& base_path) {
    const std::string base = base_path.string();
    std::ifstream in(base + ".json");
    if (!in) throw FormatError("cannot open " + base + ".json");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError("perturbation manifest parse error: " +
                              std::string(e.what()),
                          e.byte);
    }

    Perturbation r;
    r.mode = (doc.at("mode").get<std::string>() == "delta") ? ExtractMode::Delta
                                                            : ExtractMode::Copy;
    r.eta = doc.at("eta").get<double>();
    r.prescale_l2 = doc.at("prescale_l2").get<double>();
    r.scale = doc.at("scale").get<double>();
    r.anchor_label = doc.value("anchor_label", 0);
    r.vertical = stripe_from_json(doc.at("masks").at("vertical"));
    r.horizontal = stripe_from_json(doc.at("masks").at("horizontal"));

    const Grid pos = load_png16(base + "_pos.png");
    const Grid neg = load_png16(base + "_neg.png");
    if (!pos.same_shape(neg)) throw ValidationError("delta pair shapes differ");
    r.values = Grid(pos.width, pos.height, pos.channels, 0.0);
    for (std::size_t i = 0; i < pos.data.size(); ++i)
        r.values.data[i] = pos.data[i] - neg.data[i];

    r.active = PixelMask(pos.width, pos.height);
    for (int y = 0; y < pos.height; ++y)
        for (int x = 0; x < pos.width; ++x)
            if (r.vertical.covers(x, y) || r.horizontal.covers(x, y))
                r.active.set(x, y);
    return r;
}

} // namespace ssmi
