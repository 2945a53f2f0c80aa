#ifndef SSMI_EVALHARNESS_HPP
#define SSMI_EVALHARNESS_HPP

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ssmi/errors.hpp"
#include "ssmi/segmask.hpp"

namespace ssmi {

// One detector output record, COCO results convention: bbox is
// (x, y, width, height) in pixels.
struct Detection {
    int image_id = 0;
    int category_id = 0;
    std::array<double, 4> bbox{};
    double score = 0.0;
};

class DetectionSet {
public:
    DetectionSet() = default;
    explicit DetectionSet(std::vector<Detection> detections);

    const std::map<int, std::vector<Detection>>& by_image() const {
        return by_image_;
    }
    std::size_t size() const { return total_; }
    std::vector<int> image_ids() const;

    // detections for one image, empty when the id is unknown
    const std::vector<Detection>& image(int image_id) const;

private:
    std::map<int, std::vector<Detection>> by_image_;
    std::size_t total_ = 0;
};

// COCO results JSON: array of {image_id, category_id, bbox, score}.
// Structural problems throw FormatError; bad field values throw
// ValidationError listing the offending record indices.
DetectionSet parse_detections(std::string_view json_bytes);
std::string serialize_detections(const DetectionSet& set);

int count_bboxes(const DetectionSet& set, double threshold);

struct DiffReport {
    long long bbox_count_origin = 0;
    long long bbox_count_adv = 0;
    long long new_labels = 0;
    long long disappeared_labels = 0;

    struct PerImage {
        int image_id = 0;
        long long origin_count = 0;
        long long adv_count = 0;
        long long new_labels = 0;
        long long disappeared_labels = 0;
    };
    std::vector<PerImage> per_image;
};

// Per-image category multiset difference above the score threshold.
DiffReport diff_labels(const DetectionSet& origin, const DetectionSet& adv,
                       double threshold);

double iou(const std::array<double, 4>& a, const std::array<double, 4>& b);

struct GroundTruthBox {
    int image_id = 0;
    int category_id = 0;
    std::array<double, 4> bbox{};
    double area = 0.0; // falls back to bbox area when the file had none
};

std::vector<GroundTruthBox> ground_truth_from_coco(const CocoDataset& ds);

// 101-point interpolated AP at one IoU threshold, averaged over the
// categories that have ground truth. Categories with detections but no
// ground truth are skipped (reported via EvalReport.skipped_categories).
double compute_ap(const DetectionSet& dets,
                  const std::vector<GroundTruthBox>& gt, double iou_threshold);

struct EvalReport {
    double map = 0.0;  // mean AP over IoU 0.50:0.05:0.95
    double ap50 = 0.0;
    double ap75 = 0.0;
    double ar = 0.0;   // mean recall over the IoU grid, <=100 dets/image
    std::map<int, double> per_category_ap; // averaged over the IoU grid
    std::optional<double> ap_small, ap_medium, ap_large;
    std::vector<int> skipped_categories;
};

EvalReport compute_map(const DetectionSet& dets,
                       const std::vector<GroundTruthBox>& gt);

std::string diff_report_to_json(const DiffReport& report);
std::string eval_report_to_json(const EvalReport& report);

// Plain-text table: one row per metric, origin vs adversarial columns.
std::string diff_report_table(const DiffReport& report);

} // namespace ssmi

#endif
