#include "ssmi/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

namespace ssmi {

using nlohmann::json;

DetectionSet::DetectionSet(std::vector<Detection> detections) {
    for (auto& d : detections) {
        by_image_[d.image_id].push_back(d);
        ++total_;
    }
}

std::vector<int> DetectionSet::image_ids() const {
    std::vector<int> ids;
    ids.reserve(by_image_.size());
    for (const auto& [id, _] : by_image_) ids.push_back(id);
    return ids;
}

const std::vector<Detection>& DetectionSet::image(int image_id) const {
    static const std::vector<Detection> empty;
    auto it = by_image_.find(image_id);
    return it == by_image_.end() ? empty : it->second;
}

DetectionSet parse_detections(std::string_view json_bytes) {
    json doc;
    try {
        doc = json::parse(json_bytes);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("results JSON parse error: ") + e.what(),
                          e.byte);
    }
    if (!doc.is_array())
        throw FormatError("results document must be a JSON array");

    std::vector<Detection> dets;
    std::vector<std::string> offenders;
    std::size_t record = 0;
    for (const auto& rec : doc) {
        auto complain = [&](const std::string& why) {
            if (offenders.size() < 10)
                offenders.push_back("record " + std::to_string(record) + ": " + why);
        };
        Detection d;
        if (!rec.is_object() || !rec.contains("image_id") ||
            !rec.contains("category_id") || !rec.contains("bbox") ||
            !rec.contains("score")) {
            complain("missing image_id/category_id/bbox/score field");
            ++record;
            continue;
        }
        d.image_id = rec["image_id"].get<int>();
        d.category_id = rec["category_id"].get<int>();
        const auto& bb = rec["bbox"];
        if (!bb.is_array() || bb.size() != 4) {
            complain("bbox must have 4 entries");
            ++record;
            continue;
        }
        for (int i = 0; i < 4; ++i) d.bbox[i] = bb[i].get<double>();
        d.score = rec["score"].get<double>();
        if (d.bbox[2] <= 0.0 || d.bbox[3] <= 0.0)
            complain("non-positive bbox width/height");
        else if (d.score < 0.0 || d.score > 1.0)
            complain("score outside [0,1]");
        else
            dets.push_back(d);
        ++record;
    }
    if (!offenders.empty()) {
        std::string msg = "invalid detection records: ";
        for (std::size_t i = 0; i < offenders.size(); ++i)
            msg += (i ? "; " : "") + offenders[i];
        throw ValidationError(msg);
    }
    return DetectionSet(std::move(dets));
}

std::string serialize_detections(const DetectionSet& set) {
    json arr = json::array();
    for (const auto& [image_id, dets] : set.by_image()) {
        for (const auto& d : dets) {
            arr.push_back(json{{"image_id", d.image_id},
                               {"category_id", d.category_id},
                               {"bbox", d.bbox},
                               {"score", d.score}});
        }
    }
    return arr.dump(2);
}

int count_bboxes(const DetectionSet& set, double threshold) {
    if (threshold < 0.0 || threshold > 1.0)
        throw DomainError("threshold must lie in [0,1]");
    int count = 0;
    for (const auto& [_, dets] : set.by_image())
        for (const auto& d : dets)
            if (d.score >= threshold) ++count;
    return count;
}

DiffReport diff_labels(const DetectionSet& origin, const DetectionSet& adv,
                       double threshold) {
    std::vector<int> ids;
    for (int id : origin.image_ids()) ids.push_back(id);
    for (int id : adv.image_ids()) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

    DiffReport report;
    for (int id : ids) {
        std::map<int, long long> origin_counts, adv_counts;
        long long o_total = 0, a_total = 0;
        for (const auto& d : origin.image(id))
            if (d.score >= threshold) { ++origin_counts[d.category_id]; ++o_total; }
        for (const auto& d : adv.image(id))
            if (d.score >= threshold) { ++adv_counts[d.category_id]; ++a_total; }

        DiffReport::PerImage row;
        row.image_id = id;
        row.origin_count = o_total;
        row.adv_count = a_total;
        std::map<int, long long> cats;
        for (const auto& [c, n] : origin_counts) cats[c] += 0;
        for (const auto& [c, n] : adv_counts) cats[c] += 0;
        for (const auto& [c, _] : cats) {
            const long long delta = adv_counts[c] - origin_counts[c];
            if (delta > 0)
                row.new_labels += delta;
            else
                row.disappeared_labels -= delta;
        }
        report.bbox_count_origin += o_total;
        report.bbox_count_adv += a_total;
        report.new_labels += row.new_labels;
        report.disappeared_labels += row.disappeared_labels;
        report.per_image.push_back(row);
    }
    return report;
}

double iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
    const double ax1 = a[0], ay1 = a[1], ax2 = a[0] + a[2], ay2 = a[1] + a[3];
    const double bx1 = b[0], by1 = b[1], bx2 = b[0] + b[2], by2 = b[1] + b[3];
    const double iw = std::min(ax2, bx2) - std::max(ax1, bx1);
    const double ih = std::min(ay2, by2) - std::max(ay1, by1);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a[2] * a[3] + b[2] * b[3] - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<GroundTruthBox> ground_truth_from_coco(const CocoDataset& ds) {
    std::vector<GroundTruthBox> out;
    for (const auto& ann : ds.annotations) {
        GroundTruthBox box;
        box.image_id = ann.image_id;
        box.category_id = ann.category_id;
        box.bbox = ann.bbox;
        box.area = ann.area > 0.0 ? ann.area : ann.bbox[2] * ann.bbox[3];
        out.push_back(box);
    }
    return out;
}

namespace {

struct AreaRange {
    double lo = 0.0;
    double hi = 1e10;
    bool contains(double area) const { return area >= lo && area <= hi; }
};

struct CategoryMatch {
    std::vector<bool> tp;  // per considered detection, in score order
    long long gt_count = 0; // ground truth inside the area range
};

// Greedy score-ordered matching of one category's detections against
// its ground truth. Ground truth outside the area range is ignored:
// matching it neither scores nor counts, and unmatched detections
// outside the range are dropped rather than counted as false positives.
CategoryMatch match_category(std::vector<Detection> dets,
                             const std::vector<GroundTruthBox>& gts,
                             double iou_threshold, int max_per_image,
                             const AreaRange& range) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) {
                         return a.score > b.score;
                     });
    if (max_per_image > 0) {
        std::map<int, int> seen;
        std::vector<Detection> kept;
        for (const auto& d : dets)
            if (seen[d.image_id]++ < max_per_image) kept.push_back(d);
        dets = std::move(kept);
    }

    std::map<int, std::vector<std::size_t>> gt_by_image;
    std::vector<bool> gt_matched(gts.size(), false);
    std::vector<bool> gt_ignored(gts.size(), false);
    CategoryMatch result;
    for (std::size_t g = 0; g < gts.size(); ++g) {
        gt_by_image[gts[g].image_id].push_back(g);
        gt_ignored[g] = !range.contains(gts[g].area);
        if (!gt_ignored[g]) ++result.gt_count;
    }

    for (const auto& d : dets) {
        const auto it = gt_by_image.find(d.image_id);
        std::size_t best = SIZE_MAX;
        double best_iou = iou_threshold;
        bool best_ignored = false;
        if (it != gt_by_image.end()) {
            // regular ground truth first, ignored only as a fallback
            for (const bool want_ignored : {false, true}) {
                for (const std::size_t g : it->second) {
                    if (gt_matched[g] || gt_ignored[g] != want_ignored) continue;
                    const double v = iou(d.bbox, gts[g].bbox);
                    if (v >= best_iou && (best == SIZE_MAX || v > best_iou)) {
                        best_iou = v;
                        best = g;
                        best_ignored = want_ignored;
                    }
                }
                if (best != SIZE_MAX) break;
            }
        }
        if (best != SIZE_MAX) {
            gt_matched[best] = true;
            if (!best_ignored) result.tp.push_back(true);
            // match to ignored ground truth: detection dropped entirely
        } else {
            const double det_area = d.bbox[2] * d.bbox[3];
            if (range.contains(det_area)) result.tp.push_back(false);
            // out-of-range unmatched detection: dropped
        }
    }
    return result;
}

double ap_from_match(const CategoryMatch& m) {
    if (m.gt_count == 0) return -1.0;
    long long tp = 0, fp = 0;
    std::vector<double> precision, recall;
    for (const bool hit : m.tp) {
        if (hit) ++tp; else ++fp;
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(m.gt_count));
    }
    double ap = 0.0;
    for (int i = 0; i <= 100; ++i) {
        const double r = i / 100.0;
        double p = 0.0;
        for (std::size_t k = 0; k < precision.size(); ++k)
            if (recall[k] >= r) p = std::max(p, precision[k]);
        ap += p;
    }
    return ap / 101.0;
}

double recall_from_match(const CategoryMatch& m) {
    if (m.gt_count == 0) return -1.0;
    long long tp = 0;
    for (const bool hit : m.tp) tp += hit ? 1 : 0;
    return static_cast<double>(tp) / static_cast<double>(m.gt_count);
}

struct CategoryData {
    std::vector<Detection> dets;
    std::vector<GroundTruthBox> gts;
};

std::map<int, CategoryData> group_by_category(const DetectionSet& dets,
                                              const std::vector<GroundTruthBox>& gt) {
    std::map<int, CategoryData> cats;
    for (const auto& g : gt) cats[g.category_id].gts.push_back(g);
    for (const auto& [_, list] : dets.by_image())
        for (const auto& d : list) cats[d.category_id].dets.push_back(d);
    return cats;
}

} // namespace

double compute_ap(const DetectionSet& dets,
                  const std::vector<GroundTruthBox>& gt, double iou_threshold) {
    const auto cats = group_by_category(dets, gt);
    double sum = 0.0;
    int counted = 0;
    for (const auto& [cat, data] : cats) {
        if (data.gts.empty()) continue; // no ground truth: skipped
        const auto m = match_category(data.dets, data.gts, iou_threshold, 0,
                                      AreaRange{});
        const double ap = ap_from_match(m);
        sum += ap;
        ++counted;
    }
    if (counted == 0)
        throw ValidationError("no category has ground truth to evaluate");
    return sum / counted;
}

EvalReport compute_map(const DetectionSet& dets,
                       const std::vector<GroundTruthBox>& gt) {
    const auto cats = group_by_category(dets, gt);
    EvalReport report;
    for (const auto& [cat, data] : cats)
        if (data.gts.empty()) report.skipped_categories.push_back(cat);

    const AreaRange all{};
    const AreaRange small{0.0, 32.0 * 32.0};
    const AreaRange medium{32.0 * 32.0, 96.0 * 96.0};
    const AreaRange large{96.0 * 96.0, 1e10};

    double map_sum = 0.0, ar_sum = 0.0;
    double small_sum = 0.0, medium_sum = 0.0, large_sum = 0.0;
    int small_n = 0, medium_n = 0, large_n = 0;
    std::map<int, double> cat_sum;

    for (int i = 0; i < 10; ++i) {
        const double thr = 0.5 + 0.05 * i;
        double ap_acc = 0.0, ar_acc = 0.0;
        int counted = 0;
        for (const auto& [cat, data] : cats) {
            if (data.gts.empty()) continue;
            const auto m = match_category(data.dets, data.gts, thr, 0, all);
            const double ap = ap_from_match(m);
            ap_acc += ap;
            cat_sum[cat] += ap;
            const auto mr = match_category(data.dets, data.gts, thr, 100, all);
            ar_acc += recall_from_match(mr);
            ++counted;
        }
        if (counted == 0)
            throw ValidationError("no category has ground truth to evaluate");
        const double ap_mean = ap_acc / counted;
        map_sum += ap_mean;
        ar_sum += ar_acc / counted;
        if (i == 0) report.ap50 = ap_mean;
        if (i == 5) report.ap75 = ap_mean;

        for (const auto& [rng, sum_ptr, n_ptr] :
             {std::tuple{&small, &small_sum, &small_n},
              std::tuple{&medium, &medium_sum, &medium_n},
              std::tuple{&large, &large_sum, &large_n}}) {
            double acc = 0.0;
            int n = 0;
            for (const auto& [cat, data] : cats) {
                if (data.gts.empty()) continue;
                const auto m = match_category(data.dets, data.gts, thr, 0, *rng);
                const double ap = ap_from_match(m);
                if (ap >= 0.0) { acc += ap; ++n; }
            }
            if (n > 0) { *sum_ptr += acc / n; ++*n_ptr; }
        }
    }

    report.map = map_sum / 10.0;
    report.ar = ar_sum / 10.0;
    for (auto& [cat, sum] : cat_sum) report.per_category_ap[cat] = sum / 10.0;
    if (small_n > 0) report.ap_small = small_sum / small_n;
    if (medium_n > 0) report.ap_medium = medium_sum / medium_n;
    if (large_n > 0) report.ap_large = large_sum / large_n;
    return report;
}

std::string diff_report_to_json(const DiffReport& report) {
    json doc{{"bbox_count_origin", report.bbox_count_origin},
             {"bbox_count_adv", report.bbox_count_adv},
             {"new_labels", report.new_labels},
             {"disappeared_labels", report.disappeared_labels}};
    auto& per = doc["per_image"] = json::array();
    for (const auto& row : report.per_image)
        per.push_back(json{{"image_id", row.image_id},
                           {"origin_count", row.origin_count},
                           {"adv_count", row.adv_count},
                           {"new_labels", row.new_labels},
                           {"disappeared_labels", row.disappeared_labels}});
    return doc.dump(2);
}

std::string eval_report_to_json(const EvalReport& report) {
    json doc{{"bbox_mAP", report.map},
             {"bbox_mAP_50", report.ap50},
             {"bbox_mAP_75", report.ap75},
             {"AR_100", report.ar}};
    if (report.ap_small) doc["bbox_mAP_S"] = *report.ap_small;
    if (report.ap_medium) doc["bbox_mAP_M"] = *report.ap_medium;
    if (report.ap_large) doc["bbox_mAP_L"] = *report.ap_large;
    auto& per = doc["per_category_ap"] = json::object();
    for (const auto& [cat, ap] : report.per_category_ap)
        per[std::to_string(cat)] = ap;
    doc["skipped_categories"] = report.skipped_categories;
    return doc.dump(2);
}

std::string diff_report_table(const DiffReport& report) {
    char line[128];
    std::string out;
    std::snprintf(line, sizeof line, "%-28s %14s %14s\n", "Metric", "Origin",
                  "Adversarial");
    out += line;
    std::snprintf(line, sizeof line, "%-28s %14lld %14lld\n",
                  "Number of bounding boxes", report.bbox_count_origin,
                  report.bbox_count_adv);
    out += line;
    std::snprintf(line, sizeof line, "%-28s %14s %14lld\n",
                  "Number of new labels", "-", report.new_labels);
    out += line;
    std::snprintf(line, sizeof line, "%-28s %14s %14lld\n",
                  "Number of disappearing labels", "-",
                  report.disappeared_labels);
    out += line;
    return out;
}

} // namespace ssmi
