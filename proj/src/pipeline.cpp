#include "ssmi/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

#include "ssmi/image_io.hpp"
#include "ssmi/perturb.hpp"
#include "ssmi/replace.hpp"
#include "ssmi/sha256.hpp"

namespace ssmi {

using nlohmann::json;
namespace fs = std::filesystem;

void AttackConfig::validate() const {
    if (inputs.empty()) throw DomainError("config: no input images");
    if (coco_json.empty() == painted_mask.empty())
        throw DomainError("config: exactly one of coco-json or painted-mask "
                          "must be set");
    if (target_label < 1) throw DomainError("config: target-label must be >= 1");
    if (recon_label < 0)
        throw DomainError("config: recon-label is required (the class the "
                          "reconstruction drives toward)");
    if (step < 1) throw DomainError("config: step must be >= 1");
    if (!(epsilon > 0.0) || epsilon > 1.0)
        throw DomainError("config: epsilon must lie in (0,1]");
    inversion_config().validate();
    if (update_rule != "momentum" && update_rule != "literal")
        throw DomainError("config: update-rule must be momentum or literal");
    if (n < 1 || m < 1) throw DomainError("config: n and m must be >= 1");
    if (stride != 0 && stride < m)
        throw DomainError("config: stride must be 0 (auto) or >= m");
    if (eta < 0.0) throw DomainError("config: eta must be non-negative");
    if (extract_mode != "delta" && extract_mode != "copy")
        throw DomainError("config: extract-mode must be delta or copy");
    if (out_dir.empty()) throw DomainError("config: out-dir is required");
    if (threads < 0) throw DomainError("config: threads must be >= 0");
}

int AttackConfig::effective_stride() const {
    if (stride != 0) return stride;
    return whole_object ? m : 2 * m;
}

InversionConfig AttackConfig::inversion_config() const {
    InversionConfig cfg;
    cfg.lambda1 = lambda1;
    cfg.lambda2 = lambda2;
    cfg.alpha = alpha;
    cfg.beta = beta;
    cfg.max_iters = max_iters;
    cfg.target_prob = target_prob;
    cfg.update_rule =
        (update_rule == "literal") ? UpdateRule::Literal : UpdateRule::Momentum;
    return cfg;
}

namespace {

json config_json(const AttackConfig& c) {
    return json{{"version", 1},
                {"inputs", c.inputs},
                {"coco-json", c.coco_json},
                {"painted-mask", c.painted_mask},
                {"coco-image-id", c.coco_image_id},
                {"target-label", c.target_label},
                {"recon-label", c.recon_label},
                {"step", c.step},
                {"epsilon", c.epsilon},
                {"lambda1", c.lambda1},
                {"lambda2", c.lambda2},
                {"alpha", c.alpha},
                {"beta", c.beta},
                {"max-iters", c.max_iters},
                {"target-prob", c.target_prob},
                {"update-rule", c.update_rule},
                {"n", c.n},
                {"m", c.m},
                {"stride", c.stride},
                {"effective-stride", c.effective_stride()},
                {"offset-i", c.offset_i},
                {"offset-j", c.offset_j},
                {"eta", c.eta},
                {"extract-mode", c.extract_mode},
                {"whole-object", c.whole_object},
                {"out-dir", c.out_dir},
                {"seed", c.seed},
                {"threads", c.threads}};
}

} // namespace

std::string AttackConfig::to_json() const { return config_json(*this).dump(2); }

AttackConfig AttackConfig::from_json(std::string_view json_bytes) {
    json doc;
    try {
        doc = json::parse(json_bytes);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("config parse error: ") + e.what(), e.byte);
    }
    if (!doc.is_object()) throw DomainError("config must be a JSON object");
    if (doc.value("version", 0) != 1)
        throw DomainError("config: unsupported or missing schema version");

    AttackConfig c;
    static const std::set<std::string> known = {
        "version",   "inputs",     "coco-json",    "painted-mask",
        "coco-image-id", "target-label", "recon-label", "step",
        "epsilon",   "lambda1",    "lambda2",      "alpha",
        "beta",      "max-iters",  "target-prob",  "update-rule",
        "n",         "m",          "stride",       "effective-stride",
        "offset-i",  "offset-j",   "eta",          "extract-mode",
        "whole-object", "out-dir", "seed",         "threads"};
    for (const auto& [key, _] : doc.items())
        if (!known.contains(key))
            throw DomainError("config: unknown key '" + key + "'");

    c.inputs = doc.value("inputs", c.inputs);
    c.coco_json = doc.value("coco-json", c.coco_json);
    c.painted_mask = doc.value("painted-mask", c.painted_mask);
    c.coco_image_id = doc.value("coco-image-id", c.coco_image_id);
    c.target_label = doc.value("target-label", c.target_label);
    c.recon_label = doc.value("recon-label", c.recon_label);
    c.step = doc.value("step", c.step);
    c.epsilon = doc.value("epsilon", c.epsilon);
    c.lambda1 = doc.value("lambda1", c.lambda1);
    c.lambda2 = doc.value("lambda2", c.lambda2);
    c.alpha = doc.value("alpha", c.alpha);
    c.beta = doc.value("beta", c.beta);
    c.max_iters = doc.value("max-iters", c.max_iters);
    c.target_prob = doc.value("target-prob", c.target_prob);
    c.update_rule = doc.value("update-rule", c.update_rule);
    c.n = doc.value("n", c.n);
    c.m = doc.value("m", c.m);
    c.stride = doc.value("stride", c.stride);
    c.offset_i = doc.value("offset-i", c.offset_i);
    c.offset_j = doc.value("offset-j", c.offset_j);
    c.eta = doc.value("eta", c.eta);
    c.extract_mode = doc.value("extract-mode", c.extract_mode);
    c.whole_object = doc.value("whole-object", c.whole_object);
    c.out_dir = doc.value("out-dir", c.out_dir);
    c.seed = doc.value("seed", c.seed);
    c.threads = doc.value("threads", c.threads);
    return c;
}

std::string StageError::to_json() const {
    json doc{{"stage", stage_}, {"message", message_}};
    doc["file"] = file_.empty() ? json(nullptr) : json(file_);
    doc["record"] = record_ < 0 ? json(nullptr) : json(record_);
    return doc.dump(2);
}

bool AttackOutcome::all_ok() const {
    return std::all_of(images.begin(), images.end(),
                       [](const ImageOutcome& o) { return o.ok; });
}

namespace {

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out << content;
    if (!out) throw FormatError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// wraps a stage body so failures carry the stage name + file context
template <typename Fn>
auto stage(const std::string& name, const std::string& file, Fn&& fn) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(name, e.what(), file);
    }
}

SegmentationMask mask_for_input(const AttackConfig& cfg, const fs::path& input,
                                const CocoDataset* coco) {
    if (coco) {
        int image_id = cfg.coco_image_id;
        if (image_id < 0) {
            const auto found = coco->image_id_for_file(input.filename().string());
            if (!found)
                throw StageError("mask",
                                 "file name '" + input.filename().string() +
                                     "' not found in COCO images",
                                 cfg.coco_json);
            image_id = *found;
        }
        return stage("mask", cfg.coco_json,
                     [&] { return build_mask_from_coco(*coco, image_id); });
    }
    fs::path mask_path = cfg.painted_mask;
    if (fs::is_directory(mask_path))
        mask_path /= input.stem().string() + ".png";
    return stage("mask", mask_path.string(), [&] {
        return mask_from_painted(load_image(mask_path));
    });
}

struct BundlePaths {
    fs::path dir;
    fs::path xadv, plan, csv, perturbation_base, manifest, error;
};

BundlePaths bundle_paths(const fs::path& dir) {
    return BundlePaths{dir,
                       dir / "xadv.png",
                       dir / "replacement_plan.json",
                       dir / "reconstruction.csv",
                       dir / "delta" / "perturbation",
                       dir / "run_manifest.json",
                       dir / "error.json"};
}

ImageOutcome attack_one(const AttackConfig& cfg, const fs::path& input,
                        const fs::path& bundle_dir, const Classifier& cls,
                        const CocoDataset* coco) {
    ImageOutcome outcome;
    outcome.input = input.string();
    outcome.bundle_dir = bundle_dir;
    const BundlePaths paths = bundle_paths(bundle_dir);

    try {
        fs::create_directories(bundle_dir);

        const ImageBuffer original = stage("load", input.string(),
                                           [&] { return load_image(input); });
        const SegmentationMask mask = mask_for_input(cfg, input, coco);
        if (mask.width() != original.width() || mask.height() != original.height())
            throw StageError("mask", "mask dimensions do not match the image",
                             input.string());

        const TargetRegion region = stage("locate", input.string(), [&] {
            return locate_target(mask, cfg.target_label);
        });

        const ReplacementPlan plan = stage("replace", input.string(), [&] {
            return plan_replacement(original, region, cfg.step, cfg.epsilon);
        });
        const ImageBuffer replaced = apply_replacement(original, plan);
        write_text(paths.plan, plan_to_json(plan));

        const ReconstructionState recon = stage("reconstruct", input.string(), [&] {
            return reconstruct(cls, cfg.recon_label, cfg.inversion_config(),
                               original.width(), original.height(),
                               original.channels());
        });
        write_text(paths.csv, trajectory_csv(recon));
        outcome.final_target_prob = recon.prob_history.back();
        outcome.iterations = recon.iter;

        const ImageBuffer xadv = stage("perturb", input.string(), [&] {
            const auto [vertical, horizontal] = build_stripe_masks(
                original.width(), original.height(), cfg.n, cfg.m,
                cfg.effective_stride());
            const ExtractMode mode =
                (cfg.whole_object || cfg.extract_mode == "copy")
                    ? ExtractMode::Copy
                    : ExtractMode::Delta;
            Perturbation r = extract_perturbation(recon.sample, replaced,
                                                  vertical, horizontal,
                                                  cfg.eta, mode);
            r.anchor_label = region.label;
            fs::create_directories(paths.perturbation_base.parent_path());
            save_perturbation(r, paths.perturbation_base);
            return compose_adversarial(replaced, r, region, cfg.offset_i,
                                       cfg.offset_j);
        });
        save_image(xadv, paths.xadv);

        // content hashes over everything written so far
        json artifacts = json::object();
        for (const fs::path& p :
             {paths.xadv, paths.plan, paths.csv,
              fs::path(paths.perturbation_base.string() + ".json"),
              fs::path(paths.perturbation_base.string() + "_pos.png"),
              fs::path(paths.perturbation_base.string() + "_neg.png")}) {
            const std::string rel = fs::relative(p, bundle_dir).string();
            const std::string digest = sha256_file_hex(p);
            artifacts[rel] = digest;
            outcome.hashes[rel] = digest;
        }
        json manifest{{"version", 1},
                      {"input", input.filename().string()},
                      {"input-sha256", sha256_file_hex(input)},
                      {"config", config_json(cfg)},
                      {"seed", cfg.seed},
                      {"artifacts", artifacts},
                      {"reconstruction",
                       json{{"iterations", recon.iter},
                            {"final-target-prob", recon.prob_history.back()},
                            {"final-loss", recon.loss_history.back()}}}};
        write_text(paths.manifest, manifest.dump(2) + "\n");
        outcome.ok = true;
    } catch (const StageError& e) {
        write_text(paths.error, e.to_json() + "\n");
        outcome.error_stage = e.stage();
        outcome.error_message = e.message();
    } catch (const Error& e) {
        const StageError wrapped("attack", e.what(), input.string());
        write_text(paths.error, wrapped.to_json() + "\n");
        outcome.error_stage = "attack";
        outcome.error_message = e.what();
    }
    return outcome;
}

} // namespace

AttackOutcome run_attack(const AttackConfig& cfg, const Classifier* classifier) {
    cfg.validate();
    for (const auto& in : cfg.inputs)
        if (!fs::exists(in))
            throw StageError("load", "input file does not exist", in);
    if (!cfg.coco_json.empty() && !fs::exists(cfg.coco_json))
        throw StageError("annotations", "annotation file does not exist",
                         cfg.coco_json);
    if (!cfg.painted_mask.empty() && !fs::exists(cfg.painted_mask))
        throw StageError("mask", "painted mask path does not exist",
                         cfg.painted_mask);

    std::optional<CocoDataset> coco;
    if (!cfg.coco_json.empty())
        coco = stage("annotations", cfg.coco_json, [&] {
            return parse_coco_annotations(read_text(cfg.coco_json));
        });

    std::optional<ToyClassifier> owned;
    if (!classifier) {
        owned = ToyClassifier::train_builtin(cfg.seed);
        classifier = &*owned;
    }

    AttackOutcome outcome;
    if (owned) outcome.classifier_heldout_accuracy = owned->train_stats().heldout_accuracy;
    fs::create_directories(cfg.out_dir);

    // one bundle directory per input, de-duplicated by stem
    std::vector<fs::path> bundle_dirs;
    std::set<std::string> used;
    for (const auto& in : cfg.inputs) {
        std::string name = fs::path(in).stem().string();
        int suffix = 2;
        while (!used.insert(name).second)
            name = fs::path(in).stem().string() + "_" + std::to_string(suffix++);
        bundle_dirs.push_back(fs::path(cfg.out_dir) / name);
    }

    outcome.images.resize(cfg.inputs.size());
    std::atomic<std::size_t> next{0};
    std::mutex progress_mutex;
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t workers =
        std::min<std::size_t>(cfg.threads > 0 ? cfg.threads : hw,
                              cfg.inputs.size());

    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cfg.inputs.size()) break;
            ImageOutcome result = attack_one(cfg, cfg.inputs[i], bundle_dirs[i],
                                             *classifier, coco ? &*coco : nullptr);
            {
                std::lock_guard lock(progress_mutex);
                outcome.images[i] = std::move(result);
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    return outcome;
}

EvalOutcome run_eval(const fs::path& origin_dump, const fs::path& adv_dump,
                     const fs::path& gt_path, double threshold,
                     const fs::path& out_dir) {
    const DetectionSet origin = stage("parse-origin", origin_dump.string(), [&] {
        return parse_detections(read_text(origin_dump));
    });
    const DetectionSet adv = stage("parse-adv", adv_dump.string(), [&] {
        return parse_detections(read_text(adv_dump));
    });
    const CocoDataset gt_ds = stage("parse-gt", gt_path.string(), [&] {
        return parse_coco_annotations(read_text(gt_path));
    });

    EvalOutcome out;
    // ids present in only one dump are excluded from the comparison
    std::set<int> origin_ids, adv_ids;
    for (int id : origin.image_ids()) origin_ids.insert(id);
    for (int id : adv.image_ids()) adv_ids.insert(id);
    std::set<int> shared;
    for (int id : origin_ids)
        if (adv_ids.contains(id)) shared.insert(id);
    for (int id : origin_ids)
        if (!shared.contains(id)) out.orphan_image_ids.push_back(id);
    for (int id : adv_ids)
        if (!shared.contains(id)) out.orphan_image_ids.push_back(id);
    std::sort(out.orphan_image_ids.begin(), out.orphan_image_ids.end());

    auto restrict = [&](const DetectionSet& set) {
        std::vector<Detection> kept;
        for (const auto& [id, dets] : set.by_image())
            if (shared.contains(id))
                kept.insert(kept.end(), dets.begin(), dets.end());
        return DetectionSet(std::move(kept));
    };
    const DetectionSet origin_shared =
        out.orphan_image_ids.empty() ? origin : restrict(origin);
    const DetectionSet adv_shared =
        out.orphan_image_ids.empty() ? adv : restrict(adv);

    std::vector<GroundTruthBox> gt = ground_truth_from_coco(gt_ds);
    if (!out.orphan_image_ids.empty()) {
        std::erase_if(gt, [&](const GroundTruthBox& b) {
            return !shared.contains(b.image_id);
        });
    }

    out.diff = stage("diff", origin_dump.string(), [&] {
        return diff_labels(origin_shared, adv_shared, threshold);
    });
    out.origin_eval = stage("eval-origin", origin_dump.string(), [&] {
        return compute_map(origin_shared, gt);
    });
    out.adv_eval = stage("eval-adv", adv_dump.string(), [&] {
        return compute_map(adv_shared, gt);
    });

    fs::create_directories(out_dir);
    write_text(out_dir / "diff_report.json", diff_report_to_json(out.diff) + "\n");
    json eval_doc{
        {"origin", json::parse(eval_report_to_json(out.origin_eval))},
        {"adversarial", json::parse(eval_report_to_json(out.adv_eval))},
        {"orphan_image_ids", out.orphan_image_ids}};
    write_text(out_dir / "eval_report.json", eval_doc.dump(2) + "\n");
    write_text(out_dir / "report.txt", diff_report_table(out.diff));
    return out;
}

ReconstructOutcome run_reconstruct(const AttackConfig& cfg, int width,
                                   int height, int channels,
                                   const Classifier* classifier) {
    if (cfg.out_dir.empty()) throw DomainError("config: out-dir is required");
    std::optional<ToyClassifier> owned;
    if (!classifier) {
        owned = ToyClassifier::train_builtin(cfg.seed);
        classifier = &*owned;
    }
    if (cfg.recon_label < 0 || cfg.recon_label >= classifier->num_classes())
        throw StageError("reconstruct",
                         "recon-label " + std::to_string(cfg.recon_label) +
                             " out of range for a " +
                             std::to_string(classifier->num_classes()) +
                             "-class classifier");

    ReconstructOutcome out{
        stage("reconstruct", "", [&] {
            return reconstruct(*classifier, cfg.recon_label,
                               cfg.inversion_config(), width, height, channels);
        }),
        {},
        {}};
    fs::create_directories(cfg.out_dir);
    out.csv_path = fs::path(cfg.out_dir) / "reconstruction.csv";
    out.sample_path = fs::path(cfg.out_dir) / "sample.png";
    write_text(out.csv_path, trajectory_csv(out.state));
    save_image(out.state.sample, out.sample_path);
    return out;
}

SegmaskOutcome run_segmask(const AttackConfig& cfg) {
    if (cfg.out_dir.empty()) throw DomainError("config: out-dir is required");
    if (cfg.coco_json.empty() == cfg.painted_mask.empty())
        throw DomainError("config: exactly one of coco-json or painted-mask "
                          "must be set");

    std::optional<SegmentationMask> mask;
    if (!cfg.coco_json.empty()) {
        const CocoDataset ds = stage("annotations", cfg.coco_json, [&] {
            return parse_coco_annotations(read_text(cfg.coco_json));
        });
        int image_id = cfg.coco_image_id;
        if (image_id < 0) {
            if (ds.images.size() != 1)
                throw StageError("mask",
                                 "coco-image-id required when the dataset has "
                                 "multiple images",
                                 cfg.coco_json);
            image_id = ds.images.begin()->first;
        }
        mask = stage("mask", cfg.coco_json,
                     [&] { return build_mask_from_coco(ds, image_id); });
    } else {
        mask = stage("mask", cfg.painted_mask, [&] {
            return mask_from_painted(load_image(cfg.painted_mask));
        });
    }

    SegmaskOutcome out;
    if (cfg.target_label > 0) {
        const TargetRegion region = stage("locate", "", [&] {
            return locate_target(*mask, cfg.target_label);
        });
        out.target_bbox = region.bbox;
    }
    fs::create_directories(cfg.out_dir);
    out.painted_path = fs::path(cfg.out_dir) / "painted.png";
    out.classid_path = fs::path(cfg.out_dir) / "classids.pgm";
    save_image(paint_mask(*mask), out.painted_path);
    save_image(classid_image(*mask), out.classid_path);
    return out;
}

} // namespace ssmi
