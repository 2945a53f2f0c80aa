#include "ssmi/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>

#include <json.hpp>

namespace ssmi {

using nlohmann::json;

double inversion_loss(const std::vector<double>& probs, int target) {
    if (target < 0 || static_cast<std::size_t>(target) >= probs.size())
        throw DomainError("target class " + std::to_string(target) +
                          " out of range for " + std::to_string(probs.size()) +
                          " classes");
    return 1.0 - probs[static_cast<std::size_t>(target)];
}

void InversionConfig::validate() const {
    if (lambda1 < 0.0 || lambda1 > 1.0 || lambda2 < 0.0 || lambda2 > 1.0)
        throw DomainError("lambda weights must lie in [0,1]");
    if (std::abs(lambda1 + lambda2 - 1.0) > 1e-9)
        throw DomainError("lambda1 + lambda2 must equal 1");
    if (alpha < 0.0 || alpha >= 1.0)
        throw DomainError("alpha must lie in [0,1)");
    if (beta < 0.0) throw DomainError("beta must be non-negative");
    if (max_iters < 0) throw DomainError("max_iters must be non-negative");
    if (!(target_prob > 0.0) || target_prob > 1.0)
        throw DomainError("target_prob must lie in (0,1]");
}

Grid momentum_update(const Grid& v, const Grid& grad, const InversionConfig& cfg) {
    if (!v.same_shape(grad))
        throw DomainError("momentum and gradient shapes differ");
    Grid out = v;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = cfg.lambda1 * grad.data[i] + cfg.lambda2 * v.data[i];
    return out;
}

double total_variation(const Grid& v) {
    double tv = 0.0;
    for (int c = 0; c < v.channels; ++c) {
        for (int y = 0; y < v.height; ++y) {
            for (int x = 0; x < v.width; ++x) {
                const double here = v.at(x, y, c);
                if (y + 1 < v.height) tv += std::abs(v.at(x, y + 1, c) - here);
                if (x + 1 < v.width) tv += std::abs(v.at(x + 1, y, c) - here);
            }
        }
    }
    return tv;
}

ReconstructionState reconstruct(const Classifier& cls, int target,
                                const InversionConfig& cfg, int width,
                                int height, int channels) {
    cfg.validate();
    if (target < 0 || target >= cls.num_classes())
        throw DomainError("target class out of range");

    ReconstructionState state(width, height, channels);
    for (;;) {
        const std::vector<double> probs = cls.forward(state.sample);
        const double p = probs[static_cast<std::size_t>(target)];
        state.loss_history.push_back(inversion_loss(probs, target));
        state.prob_history.push_back(p);
        state.tv_history.push_back(total_variation(state.sample.to_grid()));
        if (p >= cfg.target_prob) break;
        if (state.iter >= cfg.max_iters) break;

        const Grid grad = cls.input_gradient(state.sample, target);
        for (double g : grad.data) {
            if (!std::isfinite(g))
                throw ReconstructionAborted(
                    "non-finite gradient at iteration " +
                        std::to_string(state.iter),
                    state);
        }
        state.momentum = momentum_update(state.momentum, grad, cfg);

        std::vector<double> next(state.sample.data().begin(),
                                 state.sample.data().end());
        if (cfg.update_rule == UpdateRule::Momentum) {
            for (std::size_t i = 0; i < next.size(); ++i)
                next[i] = (1.0 - cfg.alpha) * next[i] -
                          cfg.beta * state.momentum.data[i];
        } else {
            const double tv = cfg.beta * total_variation(state.momentum);
            for (double& s : next) s = (1.0 - cfg.alpha) * s + tv;
        }
        state.sample = ImageBuffer::from_data(width, height, channels,
                                              std::move(next));
        ++state.iter;
    }
    return state;
}

std::string trajectory_csv(const ReconstructionState& state) {
    std::string out = "iteration,loss,target_prob,tv\n";
    char line[128];
    for (std::size_t i = 0; i < state.loss_history.size(); ++i) {
        std::snprintf(line, sizeof line, "%zu,%.12g,%.12g,%.12g\n", i,
                      state.loss_history[i], state.prob_history[i],
                      state.tv_history[i]);
        out += line;
    }
    return out;
}

GradientCheckReport gradient_check(const Classifier& cls, int probe_count,
                                   int width, int height, int channels,
                                   std::uint64_t seed, double fd_step) {
    if (probe_count < 1) throw DomainError("probe count must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::uniform_int_distribution<int> pick_x(0, width - 1);
    std::uniform_int_distribution<int> pick_y(0, height - 1);
    std::uniform_int_distribution<int> pick_c(0, channels - 1);
    std::uniform_int_distribution<int> pick_t(0, cls.num_classes() - 1);

    GradientCheckReport report;
    report.probes = probe_count;
    double sum = 0.0;
    for (int p = 0; p < probe_count; ++p) {
        std::vector<double> values(
            static_cast<std::size_t>(width) * height * channels);
        for (double& v : values) v = uni(rng);
        // keep the probe off the clamp boundary so +/- h stays in range
        for (double& v : values) v = 0.05 + 0.9 * v;
        const ImageBuffer img =
            ImageBuffer::from_data(width, height, channels, values);

        const int x = pick_x(rng), y = pick_y(rng), c = pick_c(rng);
        const int target = pick_t(rng);

        const Grid analytic = cls.input_gradient(img, target);

        auto probe_loss = [&](double delta) {
            std::vector<double> shifted = values;
            shifted[img.index(x, y, c)] += delta;
            const ImageBuffer probe =
                ImageBuffer::from_data(width, height, channels, shifted);
            return inversion_loss(cls.forward(probe), target);
        };
        const double numeric =
            (probe_loss(fd_step) - probe_loss(-fd_step)) / (2.0 * fd_step);
        const double a = analytic.at(x, y, c);
        const double rel = std::abs(a - numeric) /
                           std::max({std::abs(a), std::abs(numeric), 1e-6});
        report.max_rel_error = std::max(report.max_rel_error, rel);
        sum += rel;
    }
    report.mean_rel_error = sum / probe_count;
    return report;
}

// ------------------------------------------------- LinearSoftmaxClassifier

namespace {

std::vector<double> softmax(const std::vector<double>& logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

} // namespace

LinearSoftmaxClassifier::LinearSoftmaxClassifier(int num_classes, int width,
                                                 int height, int channels,
                                                 std::uint64_t seed)
    : num_classes_(num_classes), width_(width), height_(height),
      channels_(channels) {
    if (num_classes < 2) throw DomainError("need at least 2 classes");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> norm(0.0, 1.0);
    const std::size_t dim = static_cast<std::size_t>(width) * height * channels;
    weights_.resize(static_cast<std::size_t>(num_classes) * dim);
    bias_.resize(static_cast<std::size_t>(num_classes));
    for (double& w : weights_) w = norm(rng);
    for (double& b : bias_) b = 0.1 * norm(rng);
}

std::vector<double> LinearSoftmaxClassifier::forward(const ImageBuffer& img) const {
    const std::size_t dim =
        static_cast<std::size_t>(width_) * height_ * channels_;
    if (img.value_count() != dim)
        throw DomainError("image shape does not match classifier input");
    std::vector<double> logits(bias_);
    for (int k = 0; k < num_classes_; ++k) {
        const double* row = weights_.data() + static_cast<std::size_t>(k) * dim;
        double acc = 0.0;
        for (std::size_t i = 0; i < dim; ++i) acc += row[i] * img.data()[i];
        logits[static_cast<std::size_t>(k)] += acc;
    }
    return softmax(logits);
}

Grid LinearSoftmaxClassifier::input_gradient(const ImageBuffer& img,
                                             int target) const {
    const std::vector<double> p = forward(img);
    if (target < 0 || target >= num_classes_)
        throw DomainError("target class out of range");
    const std::size_t dim =
        static_cast<std::size_t>(width_) * height_ * channels_;
    // d(1-p_t)/dx_j = -p_t * (W_tj - sum_k p_k W_kj)
    Grid g(width_, height_, channels_);
    const double pt = p[static_cast<std::size_t>(target)];
    for (std::size_t j = 0; j < dim; ++j) {
        double mix = 0.0;
        for (int k = 0; k < num_classes_; ++k)
            mix += p[static_cast<std::size_t>(k)] *
                   weights_[static_cast<std::size_t>(k) * dim + j];
        g.data[j] = -pt * (weights_[static_cast<std::size_t>(target) * dim + j] - mix);
    }
    return g;
}

// ----------------------------------------------------------- ToyClassifier

namespace {

constexpr double kLogitGain = 24.0;
constexpr int kConvStride = 2;
constexpr int kTrainPerClass = 100;
constexpr int kTestPerClass = 50;
constexpr int kEpochs = 40;
constexpr double kLearningRate = 0.15;

double relu(double z) { return z > 0.0 ? z : 0.0; }
// derivative taken as 1 at exactly 0 so the all-zero start state is not dead
double relu_prime(double z) { return z >= 0.0 ? 1.0 : 0.0; }

} // namespace

struct ToyClassifier::ForwardCache {
    int out_w = 0, out_h = 0;
    std::vector<double> pre;    // filters x out_h x out_w, pre-activation
    std::vector<double> pooled; // filters
    std::vector<double> probs;  // kClasses
};

ToyClassifier::ToyClassifier(int kernel, int filters, int stride,
                             std::vector<double> conv,
                             std::vector<double> dense)
    : kernel_(kernel), filters_(filters), stride_(stride),
      conv_(std::move(conv)), dense_(std::move(dense)) {
    if (kernel_ < 1 || filters_ < 1 || stride_ < 1)
        throw DomainError("bad classifier geometry");
    if (conv_.size() != static_cast<std::size_t>(filters_) * kernel_ * kernel_)
        throw DomainError("conv weight count mismatch");
    if (dense_.size() != static_cast<std::size_t>(kClasses) * filters_)
        throw DomainError("dense weight count mismatch");
}

void ToyClassifier::run_forward(const ImageBuffer& img, ForwardCache& cache) const {
    if (img.width() < kernel_ || img.height() < kernel_)
        throw DomainError("image smaller than the conv kernel");
    const Grid input = img.to_grid();
    cache.out_w = (img.width() - kernel_) / stride_ + 1;
    cache.out_h = (img.height() - kernel_) / stride_ + 1;
    const std::size_t cells =
        static_cast<std::size_t>(cache.out_w) * cache.out_h;
    cache.pre.assign(static_cast<std::size_t>(filters_) * cells, 0.0);
    cache.pooled.assign(static_cast<std::size_t>(filters_), 0.0);

    for (int f = 0; f < filters_; ++f) {
        const Kernel k(kernel_,
                       {conv_.begin() + static_cast<std::ptrdiff_t>(f) * kernel_ * kernel_,
                        conv_.begin() + static_cast<std::ptrdiff_t>(f + 1) * kernel_ * kernel_});
        const Grid z = conv2d(input, k, stride_);
        double pool = 0.0;
        for (std::size_t i = 0; i < cells; ++i) {
            cache.pre[static_cast<std::size_t>(f) * cells + i] = z.data[i];
            pool += relu(z.data[i]);
        }
        cache.pooled[static_cast<std::size_t>(f)] =
            pool / static_cast<double>(cells);
    }

    std::vector<double> logits(kClasses, 0.0);
    for (int k = 0; k < kClasses; ++k)
        for (int f = 0; f < filters_; ++f)
            logits[static_cast<std::size_t>(k)] +=
                dense_[static_cast<std::size_t>(k) * filters_ + f] *
                cache.pooled[static_cast<std::size_t>(f)];
    cache.probs = softmax(logits);
}

std::vector<double> ToyClassifier::forward(const ImageBuffer& img) const {
    ForwardCache cache;
    run_forward(img, cache);
    return cache.probs;
}

Grid ToyClassifier::input_gradient(const ImageBuffer& img, int target) const {
    if (target < 0 || target >= kClasses)
        throw DomainError("target class out of range");
    ForwardCache cache;
    run_forward(img, cache);

    // d(1-p_t)/dlogit_k = p_t * (p_k - [k==t])
    std::vector<double> dlogits(kClasses);
    const double pt = cache.probs[static_cast<std::size_t>(target)];
    for (int k = 0; k < kClasses; ++k)
        dlogits[static_cast<std::size_t>(k)] =
            pt * (cache.probs[static_cast<std::size_t>(k)] -
                  (k == target ? 1.0 : 0.0));

    const std::size_t cells =
        static_cast<std::size_t>(cache.out_w) * cache.out_h;
    Grid grad(img.width(), img.height(), img.channels(), 0.0);
    std::vector<double> plane(static_cast<std::size_t>(img.width()) * img.height(), 0.0);

    for (int f = 0; f < filters_; ++f) {
        double dpool = 0.0;
        for (int k = 0; k < kClasses; ++k)
            dpool += dlogits[static_cast<std::size_t>(k)] *
                     dense_[static_cast<std::size_t>(k) * filters_ + f];
        const double dcell = dpool / static_cast<double>(cells);
        const double* kw =
            conv_.data() + static_cast<std::size_t>(f) * kernel_ * kernel_;
        const double* pre = cache.pre.data() + static_cast<std::size_t>(f) * cells;
        for (int i = 0; i < cache.out_h; ++i) {
            for (int j = 0; j < cache.out_w; ++j) {
                const double dz =
                    dcell * relu_prime(pre[static_cast<std::size_t>(i) * cache.out_w + j]);
                if (dz == 0.0) continue;
                for (int di = 0; di < kernel_; ++di)
                    for (int dj = 0; dj < kernel_; ++dj)
                        plane[static_cast<std::size_t>(stride_ * i + di) *
                                  img.width() +
                              (stride_ * j + dj)] +=
                            dz * kw[static_cast<std::size_t>(di) * kernel_ + dj];
            }
        }
    }
    // the kernel is shared across channels, so each channel sees the same slope
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < img.channels(); ++c)
                grad.at(x, y, c) = plane[static_cast<std::size_t>(y) * img.width() + x];
    return grad;
}

// ----------------------------------------------------------- toy dataset

std::vector<ShapeSample> synth_shape_dataset(int per_class, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> noise(0.0, 0.12);
    std::uniform_real_distribution<double> tint(0.65, 1.0);
    std::uniform_real_distribution<double> jitter(-0.05, 0.05);
    const int sz = ToyClassifier::kImageSize;

    std::vector<ShapeSample> out;
    for (int label = 0; label < ToyClassifier::kClasses; ++label) {
        for (int i = 0; i < per_class; ++i) {
            std::vector<double> px(static_cast<std::size_t>(sz) * sz * 3);
            for (double& v : px) v = noise(rng);
            const double cr = tint(rng), cg = tint(rng), cb = tint(rng);

            auto paint = [&](int x, int y) {
                const std::size_t base = (static_cast<std::size_t>(y) * sz + x) * 3;
                px[base + 0] = clamp01(cr + jitter(rng));
                px[base + 1] = clamp01(cg + jitter(rng));
                px[base + 2] = clamp01(cb + jitter(rng));
            };

            if (label == 0) { // filled square
                std::uniform_int_distribution<int> side_dist(6, 11);
                const int side = side_dist(rng);
                std::uniform_int_distribution<int> pos(0, sz - side);
                const int ox = pos(rng), oy = pos(rng);
                for (int y = oy; y < oy + side; ++y)
                    for (int x = ox; x < ox + side; ++x) paint(x, y);
            } else if (label == 1) { // filled disc
                std::uniform_int_distribution<int> rad_dist(3, 5);
                const int r = rad_dist(rng);
                std::uniform_int_distribution<int> pos(r, sz - 1 - r);
                const int cx = pos(rng), cy = pos(rng);
                for (int y = 0; y < sz; ++y)
                    for (int x = 0; x < sz; ++x)
                        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
                            paint(x, y);
            } else { // stripes
                std::uniform_int_distribution<int> band_dist(2, 3);
                const int band = band_dist(rng);
                std::uniform_int_distribution<int> phase_dist(0, 2 * band - 1);
                const int phase = phase_dist(rng);
                const bool horizontal = (rng() & 1u) != 0;
                for (int y = 0; y < sz; ++y)
                    for (int x = 0; x < sz; ++x)
                        if ((((horizontal ? y : x) + phase) / band) % 2 == 0)
                            paint(x, y);
            }
            out.push_back({ImageBuffer::from_data(sz, sz, 3, std::move(px)), label});
        }
    }
    return out;
}

ToyClassifier ToyClassifier::train_builtin(std::uint64_t seed, double logit_gain) {
    if (logit_gain <= 0.0) logit_gain = kLogitGain;
    const int kernel = 3, filters = 8, stride = kConvStride;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> init(0.0, 0.3);

    std::vector<double> conv(static_cast<std::size_t>(filters) * kernel * kernel);
    std::vector<double> dense(static_cast<std::size_t>(kClasses) * filters);
    for (double& w : conv) w = init(rng);
    for (double& w : dense) w = init(rng);

    auto train = synth_shape_dataset(kTrainPerClass, seed ^ 0x5eedd5eaull);
    const auto test = synth_shape_dataset(kTestPerClass, seed ^ 0x7e57da7aull);

    ToyClassifier net(kernel, filters, stride, conv, dense);
    const int out_dim = (kImageSize - kernel) / stride + 1;
    const std::size_t cells =
        static_cast<std::size_t>(out_dim) * out_dim;

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    ForwardCache cache;
    for (int epoch = 0; epoch < kEpochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (const std::size_t idx : order) {
            const ShapeSample& sample = train[idx];
            net.run_forward(sample.image, cache);

            std::vector<double> dlogits(kClasses);
            for (int k = 0; k < kClasses; ++k)
                dlogits[static_cast<std::size_t>(k)] =
                    cache.probs[static_cast<std::size_t>(k)] -
                    (k == sample.label ? 1.0 : 0.0);

            // channel-summed input plane feeds every filter
            std::vector<double> xsum(static_cast<std::size_t>(kImageSize) * kImageSize, 0.0);
            for (int y = 0; y < kImageSize; ++y)
                for (int x = 0; x < kImageSize; ++x)
                    for (int c = 0; c < kImageChannels; ++c)
                        xsum[static_cast<std::size_t>(y) * kImageSize + x] +=
                            sample.image.at(x, y, c);

            std::vector<double> dconv(net.conv_.size(), 0.0);
            std::vector<double> ddense(net.dense_.size(), 0.0);
            for (int k = 0; k < kClasses; ++k)
                for (int f = 0; f < filters; ++f)
                    ddense[static_cast<std::size_t>(k) * filters + f] =
                        dlogits[static_cast<std::size_t>(k)] *
                        cache.pooled[static_cast<std::size_t>(f)];

            for (int f = 0; f < filters; ++f) {
                double dpool = 0.0;
                for (int k = 0; k < kClasses; ++k)
                    dpool += dlogits[static_cast<std::size_t>(k)] *
                             net.dense_[static_cast<std::size_t>(k) * filters + f];
                const double dcell = dpool / static_cast<double>(cells);
                const double* pre = cache.pre.data() + static_cast<std::size_t>(f) * cells;
                double* df = dconv.data() + static_cast<std::size_t>(f) * kernel * kernel;
                for (int i = 0; i < out_dim; ++i) {
                    for (int j = 0; j < out_dim; ++j) {
                        const double dz =
                            dcell * relu_prime(pre[static_cast<std::size_t>(i) * out_dim + j]);
                        if (dz == 0.0) continue;
                        for (int di = 0; di < kernel; ++di)
                            for (int dj = 0; dj < kernel; ++dj)
                                df[static_cast<std::size_t>(di) * kernel + dj] +=
                                    dz * xsum[static_cast<std::size_t>(stride * i + di) *
                                                  kImageSize +
                                              (stride * j + dj)];
                    }
                }
            }

            for (std::size_t i = 0; i < net.conv_.size(); ++i)
                net.conv_[i] -= kLearningRate * dconv[i];
            for (std::size_t i = 0; i < net.dense_.size(); ++i)
                net.dense_[i] -= kLearningRate * ddense[i];
        }
    }

    auto accuracy = [&](const std::vector<ShapeSample>& set) {
        int hit = 0;
        for (const auto& s : set) {
            const auto p = net.forward(s.image);
            const int pred = static_cast<int>(
                std::max_element(p.begin(), p.end()) - p.begin());
            if (pred == s.label) ++hit;
        }
        return static_cast<double>(hit) / static_cast<double>(set.size());
    };
    net.stats_.train_accuracy = accuracy(train);
    net.stats_.heldout_accuracy = accuracy(test);
    net.stats_.epochs = kEpochs;

    // sharpen logits; argmax (and therefore accuracy) is unchanged, but
    // inversion gradients become strong enough for the small step sizes
    for (double& w : net.dense_) w *= logit_gain;
    return net;
}

// ------------------------------------------------------ weight serialization

void ToyClassifier::save_weights(const std::filesystem::path& base_path) const {
    const std::filesystem::path bin = base_path.string() + ".bin";
    const std::filesystem::path manifest = base_path.string() + ".json";

    std::ofstream out(bin, std::ios::binary);
    if (!out) throw FormatError("cannot open " + bin.string() + " for writing");
    auto dump = [&](const std::vector<double>& v) {
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    dump(conv_);
    dump(dense_);
    if (!out) throw FormatError("write failed for " + bin.string());
    out.close();

    json doc{{"version", 1},
             {"dtype", "float64-le"},
             {"kernel", kernel_},
             {"filters", filters_},
             {"stride", stride_},
             {"classes", kClasses},
             {"tensors",
              json::array({json{{"name", "conv"},
                                {"shape", {filters_, kernel_, kernel_}},
                                {"offset", 0}},
                           json{{"name", "dense"},
                                {"shape", {kClasses, filters_}},
                                {"offset", conv_.size()}}})},
             {"heldout_accuracy", stats_.heldout_accuracy}};
    std::ofstream mout(manifest);
    if (!mout) throw FormatError("cannot open " + manifest.string());
    mout << doc.dump(2) << "\n";
}

ToyClassifier ToyClassifier::load_weights(const std::filesystem::path& base_path) {
    const std::filesystem::path bin = base_path.string() + ".bin";
    const std::filesystem::path manifest = base_path.string() + ".json";

    std::ifstream min(manifest);
    if (!min) throw FormatError("cannot open " + manifest.string());
    json doc;
    try {
        doc = json::parse(min);
    } catch (const json::parse_error& e) {
        throw FormatError("weight manifest parse error: " + std::string(e.what()),
                          e.byte);
    }
    const int kernel = doc.at("kernel").get<int>();
    const int filters = doc.at("filters").get<int>();
    const int stride = doc.value("stride", 1);

    std::ifstream in(bin, std::ios::binary);
    if (!in) throw FormatError("cannot open " + bin.string());
    std::vector<double> conv(static_cast<std::size_t>(filters) * kernel * kernel);
    std::vector<double> dense(static_cast<std::size_t>(kClasses) * filters);
    in.read(reinterpret_cast<char*>(conv.data()),
            static_cast<std::streamsize>(conv.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(dense.data()),
            static_cast<std::streamsize>(dense.size() * sizeof(double)));
    if (!in)
        throw FormatError(bin.string() + ": truncated weight file",
                          static_cast<std::size_t>(in.gcount()));
    ToyClassifier net(kernel, filters, stride, std::move(conv), std::move(dense));
    net.stats_.heldout_accuracy = doc.value("heldout_accuracy", 0.0);
    return net;
}

} // namespace ssmi
