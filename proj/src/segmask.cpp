#include "ssmi/segmask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

namespace ssmi {

using nlohmann::json;

Rgb class_color(int class_id) {
    if (class_id < 0 || class_id > 255)
        throw DomainError("class id out of palette range: " +
                          std::to_string(class_id));
    // standard VOC colormap bit-reversal generator
    unsigned r = 0, g = 0, b = 0;
    unsigned id = static_cast<unsigned>(class_id);
    for (int shift = 7; id != 0; --shift) {
        r |= ((id >> 0) & 1u) << shift;
        g |= ((id >> 1) & 1u) << shift;
        b |= ((id >> 2) & 1u) << shift;
        id >>= 3;
    }
    return Rgb{static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
               static_cast<std::uint8_t>(b)};
}

PixelMask::PixelMask(int width, int height) : width_(width), height_(height) {
    if (width < 1 || height < 1)
        throw DomainError("mask dimensions must be positive");
    bits_.assign(static_cast<std::size_t>(width) * height, 0);
}

std::size_t PixelMask::count() const {
    return static_cast<std::size_t>(
        std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

SegmentationMask::SegmentationMask(int width, int height,
                                   std::vector<int> class_ids,
                                   std::map<int, Rgb> palette)
    : width_(width), height_(height), class_ids_(std::move(class_ids)),
      palette_(std::move(palette)) {
    if (width < 1 || height < 1)
        throw DomainError("mask dimensions must be positive");
    if (class_ids_.size() != static_cast<std::size_t>(width) * height)
        throw DomainError("class grid length does not match dimensions");
    std::set<int> present;
    for (int id : class_ids_) {
        if (id < 0) throw DomainError("negative class id in grid");
        if (id != 0) present.insert(id);
    }
    for (int id : present)
        if (!palette_.contains(id))
            throw ValidationError("class id " + std::to_string(id) +
                                  " present in grid but missing from palette");
    std::set<Rgb> colors;
    for (const auto& [id, color] : palette_) {
        if (!colors.insert(color).second)
            throw ValidationError("palette is not injective");
    }
}

// --------------------------------------------------------------- COCO

std::vector<const CocoAnnotation*> CocoDataset::annotations_for(int image_id) const {
    std::vector<const CocoAnnotation*> out;
    for (const auto& a : annotations)
        if (a.image_id == image_id) out.push_back(&a);
    return out;
}

std::optional<int> CocoDataset::image_id_for_file(const std::string& file_name) const {
    for (const auto& [id, info] : images)
        if (info.file_name == file_name) return id;
    return std::nullopt;
}

CocoDataset parse_coco_annotations(std::string_view json_bytes) {
    json doc;
    try {
        doc = json::parse(json_bytes);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("COCO JSON parse error: ") + e.what(),
                          e.byte);
    }
    if (!doc.is_object())
        throw FormatError("COCO document is not a JSON object");
    for (const char* key : {"images", "annotations", "categories"})
        if (!doc.contains(key) || !doc[key].is_array())
            throw ValidationError(std::string("missing or non-array '") + key +
                                  "' section");

    CocoDataset ds;
    for (const auto& im : doc["images"]) {
        CocoImageInfo info;
        info.id = im.at("id").get<int>();
        info.width = im.value("width", 0);
        info.height = im.value("height", 0);
        info.file_name = im.value("file_name", std::string{});
        ds.images[info.id] = std::move(info);
    }
    for (const auto& cat : doc["categories"]) {
        ds.categories[cat.at("id").get<int>()] =
            cat.value("name", std::string{});
    }

    std::vector<int> missing_images;
    std::size_t record = 0;
    for (const auto& ann : doc["annotations"]) {
        CocoAnnotation a;
        a.id = ann.value("id", static_cast<long long>(record));
        a.image_id = ann.at("image_id").get<int>();
        a.category_id = ann.at("category_id").get<int>();
        if (ann.contains("bbox")) {
            const auto& bb = ann["bbox"];
            if (!bb.is_array() || bb.size() != 4)
                throw ValidationError("annotation record " +
                                      std::to_string(record) +
                                      ": bbox must have 4 entries");
            for (int i = 0; i < 4; ++i) a.bbox[i] = bb[i].get<double>();
        }
        a.area = ann.value("area", 0.0);
        if (ann.contains("segmentation")) {
            const auto& seg = ann["segmentation"];
            if (seg.is_object())
                throw ValidationError(
                    "annotation record " + std::to_string(record) +
                    ": unsupported segmentation encoding (RLE)");
            if (!seg.is_array())
                throw ValidationError("annotation record " +
                                      std::to_string(record) +
                                      ": segmentation must be a polygon list");
            for (const auto& poly : seg) {
                if (!poly.is_array())
                    throw ValidationError(
                        "annotation record " + std::to_string(record) +
                        ": unsupported segmentation encoding (RLE)");
                std::vector<double> flat;
                flat.reserve(poly.size());
                for (const auto& v : poly) flat.push_back(v.get<double>());
                if (flat.size() < 6 || flat.size() % 2 != 0)
                    throw ValidationError("annotation record " +
                                          std::to_string(record) +
                                          ": polygon needs >= 3 (x,y) vertices");
                a.polygons.push_back(std::move(flat));
            }
        }
        if (!ds.images.contains(a.image_id))
            missing_images.push_back(a.image_id);
        ds.annotations.push_back(std::move(a));
        ++record;
    }
    if (!missing_images.empty()) {
        std::string ids;
        for (int id : missing_images)
            ids += (ids.empty() ? "" : ", ") + std::to_string(id);
        throw ValidationError(
            "annotations reference image ids missing from 'images': " + ids);
    }
    return ds;
}

std::string serialize_coco_annotations(const CocoDataset& ds) {
    json doc;
    doc["images"] = json::array();
    for (const auto& [id, info] : ds.images) {
        json im{{"id", id},
                {"width", info.width},
                {"height", info.height},
                {"file_name", info.file_name}};
        doc["images"].push_back(std::move(im));
    }
    doc["categories"] = json::array();
    for (const auto& [id, name] : ds.categories)
        doc["categories"].push_back(json{{"id", id}, {"name", name}});
    doc["annotations"] = json::array();
    for (const auto& a : ds.annotations) {
        json ann{{"id", a.id},
                 {"image_id", a.image_id},
                 {"category_id", a.category_id},
                 {"bbox", a.bbox},
                 {"area", a.area}};
        ann["segmentation"] = a.polygons;
        doc["annotations"].push_back(std::move(ann));
    }
    return doc.dump(2);
}

// --------------------------------------------------------- rasterizer

PixelMask rasterize_polygon(const std::vector<double>& polygon_xy, int width,
                            int height) {
    if (polygon_xy.size() < 6 || polygon_xy.size() % 2 != 0)
        throw DomainError("polygon needs at least 3 (x,y) vertices");
    PixelMask mask(width, height);
    const std::size_t n = polygon_xy.size() / 2;

    std::vector<double> crossings;
    for (int y = 0; y < height; ++y) {
        const double cy = y + 0.5;
        crossings.clear();
        for (std::size_t v = 0; v < n; ++v) {
            const double x1 = polygon_xy[2 * v], y1 = polygon_xy[2 * v + 1];
            const std::size_t w = (v + 1) % n;
            const double x2 = polygon_xy[2 * w], y2 = polygon_xy[2 * w + 1];
            if (y1 == y2) continue;
            // half-open span so a vertex on the scanline counts once
            const bool spans = (y1 <= cy && cy < y2) || (y2 <= cy && cy < y1);
            if (!spans) continue;
            crossings.push_back(x1 + (cy - y1) * (x2 - x1) / (y2 - y1));
        }
        std::sort(crossings.begin(), crossings.end());
        for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
            const int x_begin =
                std::max(0, static_cast<int>(std::ceil(crossings[k] - 0.5)));
            const int x_end = std::min(
                width - 1,
                static_cast<int>(std::ceil(crossings[k + 1] - 0.5)) - 1);
            for (int x = x_begin; x <= x_end; ++x) mask.set(x, y);
        }
    }
    return mask;
}

namespace {

std::map<int, Rgb> make_palette(const std::set<int>& class_ids,
                                const std::map<int, Rgb>& override_map) {
    std::map<int, Rgb> palette;
    for (int id : class_ids) {
        auto it = override_map.find(id);
        palette[id] = (it != override_map.end()) ? it->second : class_color(id);
    }
    return palette;
}

} // namespace

SegmentationMask build_mask_from_coco(const CocoDataset& ds, int image_id,
                                      const std::map<int, Rgb>& palette_override) {
    auto it = ds.images.find(image_id);
    if (it == ds.images.end())
        throw NotFoundError("image id " + std::to_string(image_id) +
                            " not in dataset");
    const int w = it->second.width;
    const int h = it->second.height;
    if (w < 1 || h < 1)
        throw ValidationError("image " + std::to_string(image_id) +
                              " has no usable width/height");

    std::vector<int> grid(static_cast<std::size_t>(w) * h, 0);
    std::set<int> present;
    for (const CocoAnnotation* ann : ds.annotations_for(image_id)) {
        for (const auto& poly : ann->polygons) {
            const PixelMask m = rasterize_polygon(poly, w, h);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    if (m.test(x, y))
                        grid[static_cast<std::size_t>(y) * w + x] =
                            ann->category_id;
        }
        present.insert(ann->category_id);
    }
    return SegmentationMask(w, h, std::move(grid),
                            make_palette(present, palette_override));
}

SegmentationMask mask_from_painted(const ImageBuffer& painted,
                                   const std::map<int, Rgb>& palette_override,
                                   int max_class_id) {
    if (painted.channels() != 3)
        throw DomainError("painted mask must be a 3-channel image");

    std::map<Rgb, int> color_to_id;
    for (int id = 1; id <= max_class_id; ++id) {
        auto it = palette_override.find(id);
        const Rgb c = (it != palette_override.end()) ? it->second : class_color(id);
        color_to_id.emplace(c, id);
    }

    const int w = painted.width(), h = painted.height();
    std::vector<int> grid(static_cast<std::size_t>(w) * h, 0);
    std::set<int> present;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const Rgb c{static_cast<std::uint8_t>(std::lround(painted.at(x, y, 0) * 255.0)),
                        static_cast<std::uint8_t>(std::lround(painted.at(x, y, 1) * 255.0)),
                        static_cast<std::uint8_t>(std::lround(painted.at(x, y, 2) * 255.0))};
            if (c == Rgb{0, 0, 0}) continue;
            auto it = color_to_id.find(c);
            if (it == color_to_id.end())
                throw ValidationError(
                    "painted mask pixel (" + std::to_string(x) + "," +
                    std::to_string(y) + ") color (" + std::to_string(c.r) + "," +
                    std::to_string(c.g) + "," + std::to_string(c.b) +
                    ") is not in the palette");
            grid[static_cast<std::size_t>(y) * w + x] = it->second;
            present.insert(it->second);
        }
    }
    return SegmentationMask(w, h, std::move(grid),
                            make_palette(present, palette_override));
}

ImageBuffer paint_mask(const SegmentationMask& mask) {
    ImageBuffer img(mask.width(), mask.height(), 3, 0.0);
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            const int id = mask.class_at(x, y);
            if (id == 0) continue;
            const Rgb c = mask.palette().at(id);
            img.set(x, y, 0, c.r / 255.0);
            img.set(x, y, 1, c.g / 255.0);
            img.set(x, y, 2, c.b / 255.0);
        }
    }
    return img;
}

ImageBuffer classid_image(const SegmentationMask& mask) {
    ImageBuffer img(mask.width(), mask.height(), 1, 0.0);
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            img.set(x, y, 0, mask.class_at(x, y) / 255.0);
    return img;
}

namespace {

TargetRegion region_from_mask(int label, PixelMask pixels) {
    TargetRegion region;
    region.label = label;
    region.bbox = BBox{pixels.height(), -1, pixels.width(), -1};
    for (int y = 0; y < pixels.height(); ++y) {
        for (int x = 0; x < pixels.width(); ++x) {
            if (!pixels.test(x, y)) continue;
            region.bbox.top = std::min(region.bbox.top, y);
            region.bbox.bottom = std::max(region.bbox.bottom, y);
            region.bbox.left = std::min(region.bbox.left, x);
            region.bbox.right = std::max(region.bbox.right, x);
        }
    }
    region.pixels = std::move(pixels);
    return region;
}

} // namespace

TargetRegion locate_target(const SegmentationMask& mask, int label) {
    if (label <= 0)
        throw DomainError("target label must be a non-background class id");
    PixelMask pixels(mask.width(), mask.height());
    bool any = false;
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            if (mask.class_at(x, y) == label) {
                pixels.set(x, y);
                any = true;
            }
        }
    }
    if (!any)
        throw NotFoundError("target not found: label " + std::to_string(label) +
                            " absent from mask");
    return region_from_mask(label, std::move(pixels));
}

std::vector<TargetRegion> locate_instances(const SegmentationMask& mask, int label) {
    const TargetRegion whole = locate_target(mask, label);
    const int w = mask.width(), h = mask.height();
    std::vector<int> component(static_cast<std::size_t>(w) * h, -1);
    int next = 0;
    std::vector<std::pair<int, int>> stack;
    for (int y0 = 0; y0 < h; ++y0) {
        for (int x0 = 0; x0 < w; ++x0) {
            if (!whole.pixels.test(x0, y0) ||
                component[static_cast<std::size_t>(y0) * w + x0] >= 0)
                continue;
            const int comp = next++;
            stack.push_back({x0, y0});
            component[static_cast<std::size_t>(y0) * w + x0] = comp;
            while (!stack.empty()) {
                auto [x, y] = stack.back();
                stack.pop_back();
                constexpr int dx[4] = {1, -1, 0, 0};
                constexpr int dy[4] = {0, 0, 1, -1};
                for (int d = 0; d < 4; ++d) {
                    const int nx = x + dx[d], ny = y + dy[d];
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                    auto& slot = component[static_cast<std::size_t>(ny) * w + nx];
                    if (slot >= 0 || !whole.pixels.test(nx, ny)) continue;
                    slot = comp;
                    stack.push_back({nx, ny});
                }
            }
        }
    }
    std::vector<TargetRegion> regions;
    for (int c = 0; c < next; ++c) {
        PixelMask pixels(w, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (component[static_cast<std::size_t>(y) * w + x] == c)
                    pixels.set(x, y);
        regions.push_back(region_from_mask(label, std::move(pixels)));
    }
    return regions;
}

} // namespace ssmi
