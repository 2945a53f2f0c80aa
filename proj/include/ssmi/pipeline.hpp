#ifndef SSMI_PIPELINE_HPP
#define SSMI_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssmi/evalharness.hpp"
#include "ssmi/inversion.hpp"

namespace ssmi {

// Everything a full attack run needs; flag > config file > default.
struct AttackConfig {
    std::vector<std::string> inputs;

    // annotation source: exactly one of the two
    std::string coco_json;
    std::string painted_mask; // file, or directory holding <stem>.png
    int coco_image_id = -1;   // -1: resolve by file name

    int target_label = -1; // class id to make disappear
    int recon_label = -1;  // classifier class driving the reconstruction

    // replacement
    int step = 4;
    double epsilon = 0.25;

    // inversion
    double lambda1 = 0.5;
    double lambda2 = 0.5;
    double alpha = 0.1;
    double beta = 0.01;
    int max_iters = 500;
    double target_prob = 0.9;
    std::string update_rule = "momentum"; // or "literal"

    // perturbation
    int n = 1;
    int m = 10;
    int stride = 0; // 0: auto, 2*m (or m when whole_object)
    int offset_i = 0;
    int offset_j = 0;
    double eta = 5.0;
    std::string extract_mode = "delta"; // or "copy"
    bool whole_object = false;          // full-cover stripes + copy mode

    std::string out_dir;
    std::uint64_t seed = 0;
    int threads = 0; // 0: hardware concurrency

    void validate() const;
    int effective_stride() const;
    InversionConfig inversion_config() const;

    std::string to_json() const;
    // Parses a config file; unknown keys are rejected.
    static AttackConfig from_json(std::string_view json_bytes);
};

// Module errors annotated with the pipeline stage and file they hit.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& message,
               std::string file = {}, long long record = -1)
        : Error(stage + ": " + message), stage_(std::move(stage)),
          message_(message), file_(std::move(file)), record_(record) {}

    const std::string& stage() const { return stage_; }
    const std::string& message() const { return message_; }
    const std::string& file() const { return file_; }
    long long record() const { return record_; }
    std::string to_json() const;

private:
    std::string stage_;
    std::string message_;
    std::string file_;
    long long record_;
};

struct ImageOutcome {
    std::string input;
    std::filesystem::path bundle_dir;
    bool ok = false;
    std::string error_stage;
    std::string error_message;
    // artifact name -> sha256, as recorded in the run manifest
    std::map<std::string, std::string> hashes;
    double final_target_prob = 0.0;
    int iterations = 0;
};

struct AttackOutcome {
    std::vector<ImageOutcome> images;
    double classifier_heldout_accuracy = 0.0;
    bool all_ok() const;
};

// Runs locate -> replace -> reconstruct -> extract/compose for every
// input, writing one artifact bundle per image under cfg.out_dir.
// A pre-trained classifier may be supplied to skip training.
AttackOutcome run_attack(const AttackConfig& cfg,
                         const Classifier* classifier = nullptr);

struct EvalOutcome {
    DiffReport diff;
    EvalReport origin_eval;
    EvalReport adv_eval;
    std::vector<int> orphan_image_ids; // present in only one dump
};

// Diffs two detector dumps against ground truth and writes
// diff_report.json, eval_report.json and report.txt to out_dir.
EvalOutcome run_eval(const std::filesystem::path& origin_dump,
                     const std::filesystem::path& adv_dump,
                     const std::filesystem::path& gt_path, double threshold,
                     const std::filesystem::path& out_dir);

struct ReconstructOutcome {
    ReconstructionState state;
    std::filesystem::path csv_path;
    std::filesystem::path sample_path;
};

// Stage-isolated reconstruction: trains (or loads) the classifier and
// inverts one class, writing the trajectory CSV and the sample image.
ReconstructOutcome run_reconstruct(const AttackConfig& cfg, int width,
                                   int height, int channels,
                                   const Classifier* classifier = nullptr);

struct SegmaskOutcome {
    std::filesystem::path painted_path;
    std::filesystem::path classid_path;
    std::optional<BBox> target_bbox;
};

// Stage-isolated mask build: parses the annotation source and writes the
// painted PNG plus the class-id PGM; locates target_label when set.
SegmaskOutcome run_segmask(const AttackConfig& cfg);

} // namespace ssmi

#endif
