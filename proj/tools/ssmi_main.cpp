// ssmi: adversarial example toolkit for object detectors.
// Subcommands: attack, eval, reconstruct, segmask, gradcheck.
// Exit codes: 0 success, 1 stage error, 2 config/usage error.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssmi/image_io.hpp"
#include "ssmi/pipeline.hpp"

using namespace ssmi;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitStageError = 1;
constexpr int kExitUsage = 2;

std::string read_file_or_die(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DomainError("cannot open config file " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void print_stage_error(const StageError& e) {
    std::cerr << e.to_json() << "\n";
}

struct AttackCli {
    AttackConfig cfg;
    std::string config_path;

    void add_options(CLI::App& app) {
        app.add_option("--config", config_path, "JSON config file (flags override it)");
        app.add_option("-i,--input", inputs, "input image(s)");
        app.add_option("--coco-json", coco_json, "COCO annotation JSON");
        app.add_option("--painted-mask", painted_mask, "painted mask PNG (file or dir)");
        app.add_option("--coco-image-id", coco_image_id, "image id override");
        app.add_option("--target-label", target_label, "class id to attack");
        app.add_option("--recon-label", recon_label, "classifier class for reconstruction");
        app.add_option("--step", step, "replacement decimation step");
        app.add_option("--epsilon", epsilon, "replacement ratio ceiling");
        app.add_option("--lambda1", lambda1, "momentum gradient weight");
        app.add_option("--lambda2", lambda2, "momentum history weight");
        app.add_option("--alpha", alpha, "sample decay");
        app.add_option("--beta", beta, "step scale");
        app.add_option("--max-iters", max_iters, "inversion iteration cap");
        app.add_option("--target-prob", target_prob, "inversion stopping probability");
        app.add_option("--update-rule", update_rule, "momentum | literal");
        app.add_option("-n", n, "horizontal band thickness");
        app.add_option("-m", m, "vertical band width");
        app.add_option("--stride", stride, "stripe stride (0 = auto)");
        app.add_option("--offset-i", offset_i, "window row offset");
        app.add_option("--offset-j", offset_j, "window column offset");
        app.add_option("--eta", eta, "perturbation L2 budget");
        app.add_option("--extract-mode", extract_mode, "delta | copy");
        app.add_flag("--whole-object", whole_object, "full-cover stripes + copy mode");
        app.add_option("-o,--out-dir", out_dir, "output directory");
        app.add_option("--seed", seed, "global RNG seed");
        app.add_option("--threads", threads, "parallel image workers (0 = auto)");
    }

    // flag > config file > default
    AttackConfig resolve(const CLI::App& app) {
        if (!config_path.empty())
            cfg = AttackConfig::from_json(read_file_or_die(config_path));
        auto used = [&](const std::string& name) { return app.count(name) > 0; };
        if (used("--input")) cfg.inputs = inputs;
        if (used("--coco-json")) cfg.coco_json = coco_json;
        if (used("--painted-mask")) cfg.painted_mask = painted_mask;
        if (used("--coco-image-id")) cfg.coco_image_id = coco_image_id;
        if (used("--target-label")) cfg.target_label = target_label;
        if (used("--recon-label")) cfg.recon_label = recon_label;
        if (used("--step")) cfg.step = step;
        if (used("--epsilon")) cfg.epsilon = epsilon;
        if (used("--lambda1")) cfg.lambda1 = lambda1;
        if (used("--lambda2")) cfg.lambda2 = lambda2;
        if (used("--alpha")) cfg.alpha = alpha;
        if (used("--beta")) cfg.beta = beta;
        if (used("--max-iters")) cfg.max_iters = max_iters;
        if (used("--target-prob")) cfg.target_prob = target_prob;
        if (used("--update-rule")) cfg.update_rule = update_rule;
        if (used("-n")) cfg.n = n;
        if (used("-m")) cfg.m = m;
        if (used("--stride")) cfg.stride = stride;
        if (used("--offset-i")) cfg.offset_i = offset_i;
        if (used("--offset-j")) cfg.offset_j = offset_j;
        if (used("--eta")) cfg.eta = eta;
        if (used("--extract-mode")) cfg.extract_mode = extract_mode;
        if (whole_object) cfg.whole_object = true;
        if (used("--out-dir")) cfg.out_dir = out_dir;
        if (used("--seed")) cfg.seed = seed;
        if (used("--threads")) cfg.threads = threads;
        return cfg;
    }

private:
    std::vector<std::string> inputs;
    std::string coco_json, painted_mask, update_rule, extract_mode, out_dir;
    int coco_image_id = -1, target_label = -1, recon_label = -1;
    int step = 4, max_iters = 500, n = 1, m = 10, stride = 0;
    int offset_i = 0, offset_j = 0, threads = 0;
    double epsilon = 0.25, lambda1 = 0.5, lambda2 = 0.5, alpha = 0.1,
           beta = 0.01, target_prob = 0.9, eta = 5.0;
    std::uint64_t seed = 0;
    bool whole_object = false;
};

int cmd_attack(const AttackConfig& cfg) {
    const AttackOutcome outcome = run_attack(cfg);
    for (const auto& img : outcome.images) {
        if (img.ok) {
            std::printf("%s: ok (target prob %.4f after %d iterations) -> %s\n",
                        img.input.c_str(), img.final_target_prob,
                        img.iterations, img.bundle_dir.string().c_str());
        } else {
            std::printf("%s: FAILED at stage %s: %s\n", img.input.c_str(),
                        img.error_stage.c_str(), img.error_message.c_str());
        }
    }
    if (!outcome.all_ok()) {
        for (const auto& img : outcome.images)
            if (!img.ok)
                print_stage_error(StageError(img.error_stage, img.error_message,
                                             img.input));
        return kExitStageError;
    }
    return kExitOk;
}

int cmd_eval(const std::string& origin, const std::string& adv,
             const std::string& gt, double threshold,
             const std::string& out_dir) {
    const EvalOutcome outcome = run_eval(origin, adv, gt, threshold, out_dir);
    if (!outcome.orphan_image_ids.empty()) {
        std::cerr << "warning: image ids present in only one dump:";
        for (int id : outcome.orphan_image_ids) std::cerr << " " << id;
        std::cerr << " (metrics computed on the intersection)\n";
    }
    std::printf("%s", diff_report_table(outcome.diff).c_str());
    std::printf("bbox_mAP origin %.4f -> adversarial %.4f\n",
                outcome.origin_eval.map, outcome.adv_eval.map);
    std::printf("AR_100   origin %.4f -> adversarial %.4f\n",
                outcome.origin_eval.ar, outcome.adv_eval.ar);
    return kExitOk;
}

int cmd_reconstruct(const AttackConfig& cfg, int size, const std::string& weights) {
    const ReconstructOutcome outcome =
        run_reconstruct(cfg, size, size, ToyClassifier::kImageChannels);
    if (!weights.empty()) {
        const ToyClassifier net = ToyClassifier::train_builtin(cfg.seed);
        net.save_weights(weights);
    }
    std::printf("class %d: target prob %.4f after %d iterations -> %s\n",
                cfg.recon_label, outcome.state.prob_history.back(),
                outcome.state.iter, outcome.csv_path.string().c_str());
    return kExitOk;
}

int cmd_segmask(const AttackConfig& cfg) {
    const SegmaskOutcome outcome = run_segmask(cfg);
    std::printf("painted mask -> %s\n", outcome.painted_path.string().c_str());
    std::printf("class ids    -> %s\n", outcome.classid_path.string().c_str());
    if (outcome.target_bbox)
        std::printf("target %d bbox: top %d bottom %d left %d right %d\n",
                    cfg.target_label, outcome.target_bbox->top,
                    outcome.target_bbox->bottom, outcome.target_bbox->left,
                    outcome.target_bbox->right);
    return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, int probes) {
    const ToyClassifier toy = ToyClassifier::train_builtin(seed);
    const auto toy_report =
        gradient_check(toy, probes, ToyClassifier::kImageSize,
                       ToyClassifier::kImageSize, ToyClassifier::kImageChannels,
                       seed + 1);
    const LinearSoftmaxClassifier linear(3, 8, 8, 1, seed);
    const auto linear_report = gradient_check(linear, probes, 8, 8, 1, seed + 2);

    json doc{{"toy",
              json{{"probes", toy_report.probes},
                   {"max_rel_error", toy_report.max_rel_error},
                   {"mean_rel_error", toy_report.mean_rel_error},
                   {"tolerance", 1e-3}}},
             {"linear_softmax",
              json{{"probes", linear_report.probes},
                   {"max_rel_error", linear_report.max_rel_error},
                   {"mean_rel_error", linear_report.mean_rel_error},
                   {"tolerance", 1e-6}}}};
    std::cout << doc.dump(2) << "\n";
    const bool ok = toy_report.max_rel_error <= 1e-3 &&
                    linear_report.max_rel_error <= 1e-6;
    return ok ? kExitOk : kExitStageError;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"black-box adversarial example toolkit for object detectors"};
    app.require_subcommand(1);

    AttackCli attack_cli;
    CLI::App* attack = app.add_subcommand("attack", "run the full pipeline");
    attack_cli.add_options(*attack);

    CLI::App* eval = app.add_subcommand("eval", "diff detector dumps and score them");
    std::string origin_dump, adv_dump, gt_path, eval_out = "eval_out";
    double threshold = 0.3;
    eval->add_option("--origin", origin_dump, "origin detections JSON")->required();
    eval->add_option("--adv", adv_dump, "adversarial detections JSON")->required();
    eval->add_option("--gt", gt_path, "COCO ground-truth JSON")->required();
    eval->add_option("--threshold", threshold, "score threshold for counting");
    eval->add_option("-o,--out-dir", eval_out, "output directory");

    AttackCli recon_cli;
    CLI::App* recon = app.add_subcommand("reconstruct", "inversion stage only");
    recon_cli.add_options(*recon);
    int recon_size = ToyClassifier::kImageSize;
    std::string weights_base;
    recon->add_option("--size", recon_size, "reconstruction image size");
    recon->add_option("--save-weights", weights_base,
                      "also dump classifier weights to <base>.bin/.json");

    AttackCli segmask_cli;
    CLI::App* segmask = app.add_subcommand("segmask", "mask stage only");
    segmask_cli.add_options(*segmask);

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "gradient contract check");
    std::uint64_t gc_seed = 0;
    int gc_probes = 64;
    gradcheck->add_option("--seed", gc_seed, "classifier training seed");
    gradcheck->add_option("--probes", gc_probes, "finite-difference probes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*attack) return cmd_attack(attack_cli.resolve(*attack));
        if (*eval) return cmd_eval(origin_dump, adv_dump, gt_path, threshold, eval_out);
        if (*recon) return cmd_reconstruct(recon_cli.resolve(*recon), recon_size, weights_base);
        if (*segmask) return cmd_segmask(segmask_cli.resolve(*segmask));
        if (*gradcheck) return cmd_gradcheck(gc_seed, gc_probes);
    } catch (const StageError& e) {
        print_stage_error(e);
        return kExitStageError;
    } catch (const DomainError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        print_stage_error(StageError("run", e.what()));
        return kExitStageError;
    }
    return kExitUsage;
}
