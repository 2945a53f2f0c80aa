#ifndef SSMI_INVERSION_HPP
#define SSMI_INVERSION_HPP

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "ssmi/image.hpp"

namespace ssmi {

// A classifier exposed only through its forward pass and the gradient
// of the inversion loss with respect to the input pixels.
class Classifier {
public:
    virtual ~Classifier() = default;
    virtual int num_classes() const = 0;
    // probability simplex over the classes
    virtual std::vector<double> forward(const ImageBuffer& img) const = 0;
    // d(1 - p[target]) / d pixel, same shape as the image
    virtual Grid input_gradient(const ImageBuffer& img, int target) const = 0;
};

double inversion_loss(const std::vector<double>& probs, int target);

enum class UpdateRule {
    Momentum, // S <- clamp01((1-alpha)*S - beta*V)
    Literal,  // S <- clamp01((1-alpha)*S + beta*TV(V)), scalar broadcast
};

struct InversionConfig {
    double lambda1 = 0.5;
    double lambda2 = 0.5;
    double alpha = 0.1;
    double beta = 0.01;
    int max_iters = 500;
    double target_prob = 0.9;
    UpdateRule update_rule = UpdateRule::Momentum;

    void validate() const;
};

// V <- lambda1 * grad + lambda2 * V, elementwise.
Grid momentum_update(const Grid& v, const Grid& grad, const InversionConfig& cfg);

// Sum over channels of |V[i+1,j]-V[i,j]| + |V[i,j+1]-V[i,j]|, edge
// terms skipped.
double total_variation(const Grid& v);

struct ReconstructionState {
    ImageBuffer sample;                  // S
    Grid momentum;                       // V
    int iter = 0;                        // update steps performed
    std::vector<double> loss_history;    // 1 - p[target] per visit
    std::vector<double> prob_history;    // p[target] per visit
    std::vector<double> tv_history;      // TV(S) per visit, smoothness diagnostic

    ReconstructionState(int w, int h, int c)
        : sample(w, h, c, 0.0), momentum(w, h, c, 0.0) {}
};

// Thrown when a non-finite gradient aborts the loop; carries the last
// finite state.
class ReconstructionAborted : public NumericError {
public:
    ReconstructionAborted(const std::string& msg, ReconstructionState state)
        : NumericError(msg), state_(std::move(state)) {}
    const ReconstructionState& state() const { return state_; }

private:
    ReconstructionState state_;
};

// Ascends p[target] from an all-zero image until it reaches
// cfg.target_prob or max_iters updates have been applied.
ReconstructionState reconstruct(const Classifier& cls, int target,
                                const InversionConfig& cfg, int width,
                                int height, int channels);

std::string trajectory_csv(const ReconstructionState& state);

struct GradientCheckReport {
    int probes = 0;
    double max_rel_error = 0.0;
    double mean_rel_error = 0.0;
};

// Compares input_gradient against central finite differences of
// inversion_loss(forward(.)) at random pixels of random images.
GradientCheckReport gradient_check(const Classifier& cls, int probe_count,
                                   int width, int height, int channels,
                                   std::uint64_t seed = 7,
                                   double fd_step = 1e-4);

// Reference classifier with a closed-form gradient: softmax over one
// dense layer on the flattened pixels.
class LinearSoftmaxClassifier : public Classifier {
public:
    LinearSoftmaxClassifier(int num_classes, int width, int height,
                            int channels, std::uint64_t seed);

    int num_classes() const override { return num_classes_; }
    std::vector<double> forward(const ImageBuffer& img) const override;
    Grid input_gradient(const ImageBuffer& img, int target) const override;

private:
    int num_classes_, width_, height_, channels_;
    std::vector<double> weights_; // num_classes x (w*h*c)
    std::vector<double> bias_;
};

// Small conv net: one conv layer + ReLU + global average pool + dense +
// softmax, trained by SGD on a built-in synthetic 3-class 16x16 shape
// dataset (squares / discs / stripes). Bias-free so the all-zero image
// maps to the uniform simplex.
class ToyClassifier : public Classifier {
public:
    struct TrainStats {
        double train_accuracy = 0.0;
        double heldout_accuracy = 0.0;
        int epochs = 0;
    };

    static constexpr int kClasses = 3;
    static constexpr int kImageSize = 16;
    static constexpr int kImageChannels = 3;

    // Deterministic for a given seed: dataset synthesis, weight init and
    // the SGD schedule all derive from it. logit_gain <= 0 selects the
    // built-in default.
    static ToyClassifier train_builtin(std::uint64_t seed, double logit_gain = 0.0);

    int num_classes() const override { return kClasses; }
    std::vector<double> forward(const ImageBuffer& img) const override;
    Grid input_gradient(const ImageBuffer& img, int target) const override;

    const TrainStats& train_stats() const { return stats_; }

    // flat binary tensor file + JSON shape manifest
    void save_weights(const std::filesystem::path& base_path) const;
    static ToyClassifier load_weights(const std::filesystem::path& base_path);

    ToyClassifier(int kernel, int filters, int stride, std::vector<double> conv,
                  std::vector<double> dense);

private:
    struct ForwardCache;
    void run_forward(const ImageBuffer& img, ForwardCache& cache) const;

    int kernel_ = 3;
    int filters_ = 8;
    int stride_ = 2;
    std::vector<double> conv_;  // filters x kernel x kernel, shared across channels
    std::vector<double> dense_; // kClasses x filters
    TrainStats stats_;
};

// Synthetic shape dataset used to train ToyClassifier; exposed for tests.
struct ShapeSample {
    ImageBuffer image;
    int label;
};
std::vector<ShapeSample> synth_shape_dataset(int per_class, std::uint64_t seed);

} // namespace ssmi

#endif
