#ifndef SSMI_SEGMASK_HPP
#define SSMI_SEGMASK_HPP

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ssmi/image.hpp"

namespace ssmi {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    auto operator<=>(const Rgb&) const = default;
};

// VOC-style colormap: distinct color per class id, id 0 = black.
Rgb class_color(int class_id);

// Bitset over a width x height pixel grid.
class PixelMask {
public:
    PixelMask() = default;
    PixelMask(int width, int height);

    int width() const { return width_; }
    int height() const { return height_; }
    bool test(int x, int y) const { return bits_[idx(x, y)] != 0; }
    void set(int x, int y, bool v = true) { bits_[idx(x, y)] = v ? 1 : 0; }
    std::size_t count() const;
    bool empty() const { return count() == 0; }
    bool operator==(const PixelMask&) const = default;

private:
    std::size_t idx(int x, int y) const {
        return static_cast<std::size_t>(y) * width_ + x;
    }
    int width_ = 0, height_ = 0;
    std::vector<std::uint8_t> bits_;
};

// Inclusive pixel bounding box.
struct BBox {
    int top = 0, bottom = 0, left = 0, right = 0;
    bool operator==(const BBox&) const = default;
};

// A located object: its label, exact pixel set and tight bounding box.
struct TargetRegion {
    int label = 0;
    PixelMask pixels;
    BBox bbox;
};

// Per-image class-id grid plus the palette used to paint it.
class SegmentationMask {
public:
    SegmentationMask(int width, int height, std::vector<int> class_ids,
                     std::map<int, Rgb> palette);

    int width() const { return width_; }
    int height() const { return height_; }
    int class_at(int x, int y) const {
        return class_ids_[static_cast<std::size_t>(y) * width_ + x];
    }
    const std::map<int, Rgb>& palette() const { return palette_; }

private:
    int width_, height_;
    std::vector<int> class_ids_;
    std::map<int, Rgb> palette_;
};

// --------------------------------------------------------------- COCO

struct CocoImageInfo {
    int id = 0;
    int width = 0, height = 0;
    std::string file_name;
};

struct CocoAnnotation {
    long long id = 0;
    int image_id = 0;
    int category_id = 0;
    std::vector<std::vector<double>> polygons; // flat x0,y0,x1,y1,... lists
    std::array<double, 4> bbox{};              // x, y, width, height
    double area = 0.0;                         // 0 when absent from the file
};

struct CocoDataset {
    std::map<int, CocoImageInfo> images;
    std::map<int, std::string> categories;
    std::vector<CocoAnnotation> annotations;

    std::vector<const CocoAnnotation*> annotations_for(int image_id) const;
    std::optional<int> image_id_for_file(const std::string& file_name) const;
};

// Parses the images/annotations/categories subset of a COCO annotation
// document. Polygon segmentation only; RLE is rejected explicitly.
CocoDataset parse_coco_annotations(std::string_view json_bytes);

// Inverse of parse_coco_annotations for the parsed subset.
std::string serialize_coco_annotations(const CocoDataset& ds);

// Even-odd scanline fill with the pixel-center inclusion rule; the
// result is clipped to the image bounds. Vertices are flat x,y pairs.
PixelMask rasterize_polygon(const std::vector<double>& polygon_xy, int width,
                            int height);

// Rasterizes one image's annotations into a class-id grid. Later
// annotations paint over earlier ones. Palette defaults to class_color
// per category id; entries in palette_override win.
SegmentationMask build_mask_from_coco(const CocoDataset& ds, int image_id,
                                      const std::map<int, Rgb>& palette_override = {});

// Class-id grid from an externally painted mask image. Every pixel must
// be black (background) or an exact palette color.
SegmentationMask mask_from_painted(const ImageBuffer& painted,
                                   const std::map<int, Rgb>& palette_override = {},
                                   int max_class_id = 255);

// RGB image with each pixel in its class's palette color, background black.
ImageBuffer paint_mask(const SegmentationMask& mask);

// 1-channel image holding class ids scaled by 1/255, for PGM debug dumps.
ImageBuffer classid_image(const SegmentationMask& mask);

// All pixels labelled `label` as one region with a tight bbox.
// Throws NotFoundError when the label is absent.
TargetRegion locate_target(const SegmentationMask& mask, int label);

// Same, but split into 4-connected components, one region each.
std::vector<TargetRegion> locate_instances(const SegmentationMask& mask, int label);

} // namespace ssmi

#endif
