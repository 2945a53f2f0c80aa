// Acceptance suite: runs every gate criterion and prints one PASS/FAIL
// line each. Exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "ssmi/evalharness.hpp"
#include "ssmi/image_io.hpp"
#include "ssmi/perturb.hpp"
#include "ssmi/pipeline.hpp"
#include "ssmi/replace.hpp"

using namespace ssmi;
namespace fs = std::filesystem;

namespace {

std::string g_cli;
int g_failures = 0;

#define REQ(cond)                                                              \
    do {                                                                       \
        if (!(cond))                                                           \
            throw std::runtime_error(std::string("requirement failed: ") +     \
                                     #cond + " (line " +                       \
                                     std::to_string(__LINE__) + ")");          \
    } while (0)

void criterion(int idx, const std::string& name,
               const std::function<void()>& body) {
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    try {
        body();
        const double secs =
            std::chrono::duration<double>(clock::now() - start).count();
        std::printf("PASS  criterion %2d: %s (%.2fs)\n", idx, name.c_str(), secs);
    } catch (const std::exception& e) {
        std::printf("FAIL  criterion %2d: %s -- %s\n", idx, name.c_str(), e.what());
        ++g_failures;
    }
    std::fflush(stdout);
}

fs::path temp_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() /
                         ("ssmi-accept-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQ(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const ToyClassifier& toy() {
    static const ToyClassifier net = ToyClassifier::train_builtin(0);
    return net;
}

// ---------------------------------------------------------------- 1

double bilinear_matrix_oracle(const CornerQuad& q, double a, double b) {
    const double left0 = (q.a2 - a) * q.f11 + (a - q.a1) * q.f21;
    const double left1 = (q.a2 - a) * q.f12 + (a - q.a1) * q.f22;
    return (left0 * (q.b2 - b) + left1 * (b - q.b1)) /
           ((q.a2 - q.a1) * (q.b2 - q.b1));
}

void numeric_kernels_vs_oracles() {
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(1001);
    std::uniform_real_distribution<double> uni(-2.0, 2.0);
    std::uniform_real_distribution<double> frac(0.0, 1.0);

    for (int i = 0; i < 120; ++i) {
        const double a1 = uni(rng), b1 = uni(rng);
        const CornerQuad q(a1, a1 + 0.1 + std::abs(uni(rng)), b1,
                           b1 + 0.1 + std::abs(uni(rng)), uni(rng), uni(rng),
                           uni(rng), uni(rng));
        const double a = q.a1 + frac(rng) * (q.a2 - q.a1);
        const double b = q.b1 + frac(rng) * (q.b2 - q.b1);
        REQ(std::abs(bilinear_interpolate(q, a, b) -
                     bilinear_matrix_oracle(q, a, b)) <= 1e-12);
    }

    std::uniform_real_distribution<double> pix(0.0, 1.0);
    for (int i = 0; i < 110; ++i) {
        std::uniform_int_distribution<int> dim(1, 6), fac(1, 4);
        const int w = dim(rng), h = dim(rng), f = fac(rng);
        std::vector<double> px(static_cast<std::size_t>(w) * h);
        for (double& v : px) v = pix(rng);
        const ImageBuffer img = ImageBuffer::from_data(w, h, 1, px);
        const ImageBuffer up = upsample(img, f);
        auto src = [](int dst, int dd, int sd) {
            return (dd == 1 || sd == 1) ? 0.0
                                        : static_cast<double>(dst) * (sd - 1) / (dd - 1);
        };
        for (int y = 0; y < up.height(); ++y)
            for (int x = 0; x < up.width(); ++x) {
                const double sx = src(x, up.width(), w), sy = src(y, up.height(), h);
                const int x0 = std::min(static_cast<int>(std::floor(sx)), w - 1);
                const int y0 = std::min(static_cast<int>(std::floor(sy)), h - 1);
                const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
                const double fx = sx - x0, fy = sy - y0;
                const double want =
                    (1 - fy) * ((1 - fx) * img.at(x0, y0, 0) + fx * img.at(x1, y0, 0)) +
                    fy * ((1 - fx) * img.at(x0, y1, 0) + fx * img.at(x1, y1, 0));
                REQ(std::abs(up.at(x, y, 0) - want) <= 1e-12);
            }
    }

    std::uniform_real_distribution<double> tapv(-1.0, 1.0);
    for (int i = 0; i < 110; ++i) {
        std::uniform_int_distribution<int> dim(3, 9), sdist(1, 3);
        const int w = dim(rng), h = dim(rng);
        const int c = (rng() & 1u) ? 3 : 1;
        std::uniform_int_distribution<int> kdist(1, std::min(w, h));
        const int k = kdist(rng), stride = sdist(rng);
        Grid in(w, h, c);
        for (double& v : in.data) v = tapv(rng);
        std::vector<double> taps(static_cast<std::size_t>(k) * k);
        for (double& v : taps) v = tapv(rng);
        const Grid got = conv2d(in, Kernel(k, taps), stride);
        const int ow = (w - k) / stride + 1, oh = (h - k) / stride + 1;
        REQ(got.width == ow && got.height == oh);
        for (int oi = 0; oi < oh; ++oi)
            for (int oj = 0; oj < ow; ++oj) {
                double acc = 0.0;
                for (int di = 0; di < k; ++di)
                    for (int dj = 0; dj < k; ++dj)
                        for (int ch = 0; ch < c; ++ch)
                            acc += in.at(stride * oj + dj, stride * oi + di, ch) *
                                   taps[static_cast<std::size_t>(di) * k + dj];
                REQ(std::abs(got.at(oj, oi) - acc) <= 1e-12);
            }
    }

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    REQ(secs < 5.0);
}

// ---------------------------------------------------------------- 2

void tv_exactness() {
    REQ(total_variation(Grid(5, 4, 1, 3.25)) == 0.0);
    Grid g(2, 2, 1);
    g.at(0, 0) = 0.0;
    g.at(1, 0) = 1.0;
    g.at(0, 1) = 2.0;
    g.at(1, 1) = 3.0;
    REQ(total_variation(g) == 6.0);

    std::mt19937_64 rng(1002);
    std::uniform_real_distribution<double> uni(-2.0, 2.0);
    for (int i = 0; i < 100; ++i) {
        std::uniform_int_distribution<int> dim(1, 8);
        Grid v(dim(rng), dim(rng), 1);
        for (double& x : v.data) x = uni(rng);
        const double tv = total_variation(v);
        REQ(tv >= 0.0);
        const double s = uni(rng), c = uni(rng);
        Grid scaled = v, shifted = v;
        for (double& x : scaled.data) x *= s;
        for (double& x : shifted.data) x += c;
        REQ(std::abs(total_variation(scaled) - std::abs(s) * tv) <= 1e-9);
        REQ(std::abs(total_variation(shifted) - tv) <= 1e-9);
    }
}

// ---------------------------------------------------------------- 3

void gradient_contract() {
    const auto toy_report =
        gradient_check(toy(), 64, ToyClassifier::kImageSize,
                       ToyClassifier::kImageSize, ToyClassifier::kImageChannels, 7);
    REQ(toy_report.probes >= 50);
    REQ(toy_report.max_rel_error <= 1e-3);

    const LinearSoftmaxClassifier linear(4, 6, 5, 3, 123);
    const auto linear_report = gradient_check(linear, 64, 6, 5, 3, 8);
    REQ(linear_report.max_rel_error <= 1e-6);
}

// ---------------------------------------------------------------- 4

void momentum_algebra() {
    std::mt19937_64 rng(1004);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    InversionConfig degenerate;
    degenerate.lambda1 = 1.0;
    degenerate.lambda2 = 0.0;
    Grid v(4, 3, 1), g(4, 3, 1);
    for (double& x : v.data) x = uni(rng);
    for (double& x : g.data) x = uni(rng);
    const Grid out = momentum_update(v, g, degenerate);
    for (std::size_t i = 0; i < g.data.size(); ++i) REQ(out.data[i] == g.data[i]);

    const InversionConfig half; // lambda1 = lambda2 = 0.5
    Grid acc(4, 3, 1, 0.0);
    acc = momentum_update(acc, g, half);
    acc = momentum_update(acc, g, half);
    for (std::size_t i = 0; i < g.data.size(); ++i)
        REQ(acc.data[i] == 0.75 * g.data[i]);
}

// ---------------------------------------------------------------- 5

void inversion_gate() {
    const auto start = std::chrono::steady_clock::now();
    const ToyClassifier net = ToyClassifier::train_builtin(0);
    REQ(net.train_stats().heldout_accuracy >= 0.95);
    for (int target = 0; target < ToyClassifier::kClasses; ++target) {
        InversionConfig cfg; // paper hyperparameters are the defaults
        REQ(cfg.lambda1 == 0.5 && cfg.lambda2 == 0.5);
        REQ(cfg.alpha == 0.1 && cfg.beta == 0.01);
        const ReconstructionState state =
            reconstruct(net, target, cfg, ToyClassifier::kImageSize,
                        ToyClassifier::kImageSize, ToyClassifier::kImageChannels);
        REQ(state.iter <= 500);
        REQ(state.prob_history.back() >= 0.9);
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    REQ(secs < 60.0);
}

// ---------------------------------------------------------------- 6

void replacement_invariants() {
    std::mt19937_64 rng(1006);
    int checked = 0;
    while (checked < 20) {
        std::uniform_int_distribution<int> dim(6, 16);
        const int w = dim(rng), h = dim(rng);
        TargetRegion region;
        region.label = 1;
        region.pixels = PixelMask(w, h);
        std::uniform_int_distribution<int> coin(0, 2);
        int top = h, bottom = -1, left = w, right = -1;
        for (int y = 1; y < h - 1; ++y)
            for (int x = 1; x < w - 1; ++x)
                if (coin(rng) == 0) {
                    region.pixels.set(x, y);
                    top = std::min(top, y);
                    bottom = std::max(bottom, y);
                    left = std::min(left, x);
                    right = std::max(right, x);
                }
        if (region.pixels.empty()) continue;
        region.bbox = BBox{top, bottom, left, right};
        ++checked;

        std::uniform_real_distribution<double> pix(0.0, 1.0);
        std::vector<double> px(static_cast<std::size_t>(w) * h * 3);
        for (double& v : px) v = pix(rng);
        const ImageBuffer img = ImageBuffer::from_data(w, h, 3, px);

        const ReplacementPlan plan = plan_replacement(img, region, 4, 0.25);
        REQ(static_cast<double>(plan.pairs.size()) <=
            0.25 * static_cast<double>(region.pixels.count()));
        for (const auto& [t, s] : plan.pairs) {
            REQ(region.pixels.test(static_cast<int>(t) % w, static_cast<int>(t) / w));
            REQ(!region.pixels.test(static_cast<int>(s) % w, static_cast<int>(s) / w));
        }
        const ImageBuffer out = apply_replacement(img, plan);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (!region.pixels.test(x, y))
                    for (int c = 0; c < 3; ++c)
                        REQ(out.at(x, y, c) == img.at(x, y, c));
    }
}

// ---------------------------------------------------------------- 7

void composition_invariants() {
    std::mt19937_64 rng(1007);
    std::uniform_real_distribution<double> pix(0.0, 1.0);
    for (int i = 0; i < 20; ++i) {
        const int w = 18, h = 14;
        std::vector<double> a(static_cast<std::size_t>(w) * h * 3),
            b(static_cast<std::size_t>(w) * h * 3);
        for (double& v : a) v = pix(rng);
        for (double& v : b) v = pix(rng);
        const ImageBuffer base = ImageBuffer::from_data(w, h, 3, a);
        const ImageBuffer sstar = ImageBuffer::from_data(w, h, 3, b);
        const auto [vm, hm] = build_stripe_masks(w, h, 1, 4, 8);
        const double eta = 0.25 + pix(rng);
        const Perturbation r = extract_perturbation(sstar, base, vm, hm, eta);

        double l2 = 0.0;
        for (double x : r.values.data) l2 += x * x;
        REQ(std::sqrt(l2) <= eta + 1e-12); // pre-clamp delta meets the budget

        TargetRegion region;
        region.label = 1;
        region.pixels = PixelMask(w, h);
        for (int y = 2; y <= h - 3; ++y)
            for (int x = 3; x <= w - 2; ++x) region.pixels.set(x, y);
        region.bbox = BBox{2, h - 3, 3, w - 2};

        const ImageBuffer out = compose_adversarial(base, r, region, 1, 1);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c)
                    if (out.at(x, y, c) != base.at(x, y, c)) {
                        REQ(r.active.test(x, y));
                        REQ(y >= region.bbox.top + 1 && y <= region.bbox.bottom);
                        REQ(x >= region.bbox.left + 1 && x <= region.bbox.right);
                    }

        // zero perturbation: bit-exact identity
        const Perturbation zero = extract_perturbation(base, base, vm, hm, eta);
        REQ(compose_adversarial(base, zero, region, 0, 0) == base);
    }
}

// ---------------------------------------------------------------- 8

void evaluation_oracles() {
    std::mt19937_64 rng(1008);
    std::uniform_int_distribution<int> count(0, 6), cat(1, 4);
    std::uniform_real_distribution<double> coord(0.0, 40.0), score(0.0, 1.0);
    auto random_dump = [&] {
        std::vector<Detection> dets;
        for (int img = 1; img <= 5; ++img) {
            const int k = count(rng);
            for (int i = 0; i < k; ++i)
                dets.push_back(Detection{img, cat(rng),
                                         {coord(rng), coord(rng), 2.0, 2.0},
                                         score(rng)});
        }
        return DetectionSet(std::move(dets));
    };

    for (int i = 0; i < 100; ++i) {
        const DetectionSet a = random_dump(), b = random_dump();
        const DiffReport rep = diff_labels(a, b, 0.3);

        long long added = 0, removed = 0;
        std::set<int> ids;
        for (int id : a.image_ids()) ids.insert(id);
        for (int id : b.image_ids()) ids.insert(id);
        for (int id : ids) {
            std::multiset<int> ma, mb;
            for (const auto& d : a.image(id))
                if (d.score >= 0.3) ma.insert(d.category_id);
            for (const auto& d : b.image(id))
                if (d.score >= 0.3) mb.insert(d.category_id);
            std::set<int> cats(ma.begin(), ma.end());
            cats.insert(mb.begin(), mb.end());
            for (int c : cats) {
                const long long ca = static_cast<long long>(ma.count(c));
                const long long cb = static_cast<long long>(mb.count(c));
                added += std::max(0LL, cb - ca);
                removed += std::max(0LL, ca - cb);
            }
        }
        REQ(rep.new_labels == added);
        REQ(rep.disappeared_labels == removed);
        REQ(rep.new_labels - rep.disappeared_labels ==
            rep.bbox_count_adv - rep.bbox_count_origin);
        for (const auto& row : rep.per_image)
            REQ(row.new_labels - row.disappeared_labels ==
                row.adv_count - row.origin_count);
    }

    // AP fixture: FP at 0.9 + TP at 0.8 over a single ground truth
    std::vector<GroundTruthBox> truth(1);
    truth[0].image_id = 1;
    truth[0].category_id = 7;
    truth[0].bbox = {0, 0, 10, 10};
    truth[0].area = 100.0;
    const DetectionSet dets(std::vector<Detection>{
        Detection{1, 7, {40, 40, 5, 5}, 0.9}, Detection{1, 7, {0, 0, 10, 10}, 0.8}});
    REQ(std::abs(compute_ap(dets, truth, 0.5) - 0.5) <= 1e-9);

    // perfect detector
    std::vector<GroundTruthBox> truth2;
    std::vector<Detection> perfect;
    for (int img = 1; img <= 3; ++img)
        for (int c = 1; c <= 2; ++c) {
            GroundTruthBox g;
            g.image_id = img;
            g.category_id = c;
            g.bbox = {10.0 * img, 10.0 * c, 6, 6};
            g.area = 36.0;
            truth2.push_back(g);
            perfect.push_back(Detection{img, c, g.bbox, 0.95});
        }
    const EvalReport rep = compute_map(DetectionSet(perfect), truth2);
    REQ(std::abs(rep.map - 1.0) <= 1e-9);
    REQ(std::abs(rep.ar - 1.0) <= 1e-9);
}

// ---------------------------------------------------------------- 9

int shell(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    REQ(status != -1);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void pipeline_determinism() {
    REQ(!g_cli.empty());
    const fs::path dir = temp_dir("determinism");

    ImageBuffer img(24, 20, 3, 0.0);
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 24; ++x) {
            img.set(x, y, 0, 0.2 + 0.6 * x / 23.0);
            img.set(x, y, 1, 0.5);
            img.set(x, y, 2, 0.2 + 0.6 * y / 19.0);
        }
    save_image(img, dir / "scene.png");

    std::vector<int> grid(24 * 20, 0);
    for (int y = 3; y <= 9; ++y)
        for (int x = 2; x <= 10; ++x) grid[y * 24 + x] = 7;
    const SegmentationMask mask(24, 20, grid, {{7, class_color(7)}});
    save_image(paint_mask(mask), dir / "mask.png");

    nlohmann::json cfg{{"version", 1},
                       {"inputs", {(dir / "scene.png").string()}},
                       {"painted-mask", (dir / "mask.png").string()},
                       {"target-label", 7},
                       {"recon-label", 1},
                       {"out-dir", "bundle"},
                       {"seed", 11}};
    std::ofstream(dir / "cfg.json") << cfg.dump(2);

    const std::string invoke = "cd " + dir.string() + " && " + g_cli +
                               " attack --config cfg.json > run.log 2>&1";
    REQ(shell(invoke) == 0);
    fs::rename(dir / "bundle", dir / "bundle_first");
    REQ(shell(invoke) == 0);

    std::size_t compared = 0;
    for (const auto& entry : fs::recursive_directory_iterator(dir / "bundle_first")) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), dir / "bundle_first");
        REQ(fs::exists(dir / "bundle" / rel));
        REQ(slurp(entry.path()) == slurp(dir / "bundle" / rel));
        ++compared;
    }
    REQ(compared >= 5);
}

// ---------------------------------------------------------------- 10

void format_fidelity() {
    const std::string coco = slurp(fs::path(SSMI_FIXTURE_DIR) / "coco_two_images.json");
    const CocoDataset a = parse_coco_annotations(coco);
    const CocoDataset b = parse_coco_annotations(serialize_coco_annotations(a));
    REQ(a.images.size() == b.images.size());
    for (const auto& [id, info] : a.images) {
        REQ(b.images.at(id).width == info.width);
        REQ(b.images.at(id).height == info.height);
        REQ(b.images.at(id).file_name == info.file_name);
    }
    REQ(a.categories == b.categories);
    REQ(a.annotations.size() == b.annotations.size());
    for (std::size_t i = 0; i < a.annotations.size(); ++i) {
        REQ(a.annotations[i].id == b.annotations[i].id);
        REQ(a.annotations[i].image_id == b.annotations[i].image_id);
        REQ(a.annotations[i].category_id == b.annotations[i].category_id);
        REQ(a.annotations[i].bbox == b.annotations[i].bbox);
        REQ(a.annotations[i].area == b.annotations[i].area);
        REQ(a.annotations[i].polygons == b.annotations[i].polygons);
    }

    const char* results = R"([
      {"image_id": 1, "category_id": 7, "bbox": [2.5, 3.25, 8.0, 6.0], "score": 0.875},
      {"image_id": 1, "category_id": 9, "bbox": [14.0, 10.0, 6.0, 6.0], "score": 0.5},
      {"image_id": 2, "category_id": 7, "bbox": [5.0, 5.0, 10.0, 8.0], "score": 0.125}
    ])";
    const DetectionSet x = parse_detections(results);
    const DetectionSet y = parse_detections(serialize_detections(x));
    REQ(x.size() == y.size());
    for (int id : x.image_ids()) {
        const auto& dx = x.image(id);
        const auto& dy = y.image(id);
        REQ(dx.size() == dy.size());
        for (std::size_t i = 0; i < dx.size(); ++i) {
            REQ(dx[i].category_id == dy[i].category_id);
            REQ(dx[i].bbox == dy[i].bbox);
            REQ(dx[i].score == dy[i].score);
        }
    }
}

} // namespace

int main(int argc, char** argv) {
    if (argc > 1) g_cli = argv[1];

    criterion(1, "numeric kernels match brute-force oracles (<= 1e-12, < 5s)",
              numeric_kernels_vs_oracles);
    criterion(2, "total variation exactness and scaling/translation laws",
              tv_exactness);
    criterion(3, "gradient contract: toy <= 1e-3, linear-softmax <= 1e-6",
              gradient_contract);
    criterion(4, "momentum algebra: degeneracy and 0.75g recurrence",
              momentum_algebra);
    criterion(5, "end-to-end inversion reaches prob >= 0.9 for all 3 classes",
              inversion_gate);
    criterion(6, "replacement ratio/background/locality invariants",
              replacement_invariants);
    criterion(7, "composition support and L2 budget invariants",
              composition_invariants);
    criterion(8, "evaluation metrics match independent oracles",
              evaluation_oracles);
    criterion(9, "attack pipeline is byte-deterministic per config+seed",
              pipeline_determinism);
    criterion(10, "COCO annotation and results formats round-trip losslessly",
              format_fidelity);

    if (g_failures > 0) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
