#include <doctest.h>

#include <cmath>
#include <random>
#include <unistd.h>

#include "ssmi/inversion.hpp"

using namespace ssmi;

namespace {

const ToyClassifier& shared_toy() {
    static const ToyClassifier net = ToyClassifier::train_builtin(0);
    return net;
}

// forward is always uniform; gradient always zero
class UniformClassifier : public Classifier {
public:
    explicit UniformClassifier(int k) : k_(k) {}
    int num_classes() const override { return k_; }
    std::vector<double> forward(const ImageBuffer&) const override {
        return std::vector<double>(k_, 1.0 / k_);
    }
    Grid input_gradient(const ImageBuffer& img, int) const override {
        return Grid(img.width(), img.height(), img.channels(), 0.0);
    }

private:
    int k_;
};

// produces NaN gradients after a fixed number of calls
class PoisonedClassifier : public Classifier {
public:
    explicit PoisonedClassifier(int healthy_calls) : healthy_(healthy_calls) {}
    int num_classes() const override { return 2; }
    std::vector<double> forward(const ImageBuffer&) const override {
        return {0.6, 0.4};
    }
    Grid input_gradient(const ImageBuffer& img, int) const override {
        Grid g(img.width(), img.height(), img.channels(), -0.01);
        if (calls_++ >= healthy_) g.data[0] = std::nan("");
        return g;
    }

private:
    int healthy_;
    mutable int calls_ = 0;
};

// zero gradients everywhere: must fail the gradient check
class BrokenGradientClassifier : public Classifier {
public:
    int num_classes() const override { return 3; }
    std::vector<double> forward(const ImageBuffer& img) const override {
        // some non-constant function of the pixels
        double s = 0.0;
        for (double v : img.data()) s += v;
        const double z = std::tanh(s / 10.0);
        return {0.25 + 0.25 * z, 0.25, 0.5 - 0.25 * z};
    }
    Grid input_gradient(const ImageBuffer& img, int) const override {
        return Grid(img.width(), img.height(), img.channels(), 0.0);
    }
};

InversionConfig defaults() { return InversionConfig{}; }

} // namespace

TEST_CASE("inversion loss") {
    CHECK(inversion_loss({0.0, 1.0}, 1) == 0.0);
    CHECK(inversion_loss({1.0, 0.0}, 1) == 1.0);
    CHECK(inversion_loss({0.7, 0.3}, 1) == doctest::Approx(0.7));
    CHECK_THROWS_AS(inversion_loss({0.5, 0.5}, 2), DomainError);
    CHECK_THROWS_AS(inversion_loss({0.5, 0.5}, -1), DomainError);
}

TEST_CASE("config validation") {
    InversionConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.lambda1 = 0.7;
    CHECK_THROWS_AS(cfg.validate(), DomainError); // lambda1 + lambda2 != 1
    cfg.lambda2 = 0.3;
    CHECK_NOTHROW(cfg.validate());
    cfg.alpha = 1.0;
    CHECK_THROWS_AS(cfg.validate(), DomainError);
    cfg.alpha = 0.1;
    cfg.target_prob = 0.0;
    CHECK_THROWS_AS(cfg.validate(), DomainError);
}

TEST_CASE("momentum: lambda2 = 0 degenerates to scaled gradient") {
    InversionConfig cfg;
    cfg.lambda1 = 1.0;
    cfg.lambda2 = 0.0;
    Grid v(3, 2, 1, 0.5), g(3, 2, 1);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = 0.1 * (double)i;
    const Grid out = momentum_update(v, g, cfg);
    for (std::size_t i = 0; i < g.data.size(); ++i)
        CHECK(out.data[i] == cfg.lambda1 * g.data[i]);
}

TEST_CASE("momentum: zero inputs stay zero") {
    const Grid v(2, 2, 1, 0.0), g(2, 2, 1, 0.0);
    for (double x : momentum_update(v, g, defaults()).data) CHECK(x == 0.0);
}

TEST_CASE("momentum: two constant steps give 0.75 g") {
    Grid v(4, 4, 3, 0.0), g(4, 4, 3, 0.0);
    std::mt19937_64 rng(51);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (double& x : g.data) x = uni(rng);
    const InversionConfig cfg; // lambda1 = lambda2 = 0.5
    v = momentum_update(v, g, cfg);
    v = momentum_update(v, g, cfg);
    for (std::size_t i = 0; i < g.data.size(); ++i)
        CHECK(v.data[i] == 0.75 * g.data[i]);
}

TEST_CASE("momentum: linear in both arguments") {
    std::mt19937_64 rng(52);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    Grid v(3, 3, 1), g(3, 3, 1);
    for (double& x : v.data) x = uni(rng);
    for (double& x : g.data) x = uni(rng);
    const double s = 2.5;
    Grid vs = v, gs = g;
    for (double& x : vs.data) x *= s;
    for (double& x : gs.data) x *= s;
    const Grid base = momentum_update(v, g, defaults());
    const Grid scaled = momentum_update(vs, gs, defaults());
    for (std::size_t i = 0; i < base.data.size(); ++i)
        CHECK(scaled.data[i] == doctest::Approx(s * base.data[i]).epsilon(1e-12));
}

TEST_CASE("momentum: shape mismatch is rejected") {
    CHECK_THROWS_AS(momentum_update(Grid(2, 2, 1), Grid(3, 2, 1), defaults()),
                    DomainError);
}

TEST_CASE("total variation: exact values") {
    CHECK(total_variation(Grid(4, 4, 1, 2.5)) == 0.0);
    Grid g(2, 2, 1);
    g.at(0, 0) = 0.0;
    g.at(1, 0) = 1.0;
    g.at(0, 1) = 2.0;
    g.at(1, 1) = 3.0;
    CHECK(total_variation(g) == 6.0);
    CHECK(total_variation(Grid(1, 1, 1, 0.7)) == 0.0);
}

TEST_CASE("total variation: channels sum independently") {
    Grid g(2, 2, 2, 0.0);
    // channel 0 is the 0,1,2,3 ramp; channel 1 constant
    g.at(0, 0, 0) = 0.0;
    g.at(1, 0, 0) = 1.0;
    g.at(0, 1, 0) = 2.0;
    g.at(1, 1, 0) = 3.0;
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) g.at(x, y, 1) = 4.0;
    CHECK(total_variation(g) == 6.0);
}

TEST_CASE("total variation: scaling, translation, non-negativity") {
    std::mt19937_64 rng(53);
    std::uniform_real_distribution<double> uni(-2.0, 2.0);
    for (int i = 0; i < 100; ++i) {
        std::uniform_int_distribution<int> dim(1, 7);
        Grid g(dim(rng), dim(rng), 1);
        for (double& x : g.data) x = uni(rng);
        const double tv = total_variation(g);
        CHECK(tv >= 0.0);

        const double s = uni(rng);
        Grid scaled = g;
        for (double& x : scaled.data) x *= s;
        CHECK(total_variation(scaled) ==
              doctest::Approx(std::abs(s) * tv).epsilon(1e-12));

        const double c = uni(rng);
        Grid shifted = g;
        for (double& x : shifted.data) x += c;
        CHECK(total_variation(shifted) == doctest::Approx(tv).epsilon(1e-12));
    }
}

TEST_CASE("reconstruct: uniform classifier exits at iteration 0") {
    const UniformClassifier cls(4);
    InversionConfig cfg;
    cfg.target_prob = 0.25; // already met by the uniform simplex
    const ReconstructionState state = reconstruct(cls, 1, cfg, 8, 8, 3);
    CHECK(state.iter == 0);
    for (double v : state.sample.data()) CHECK(v == 0.0);
    for (double v : state.momentum.data) CHECK(v == 0.0);
    REQUIRE(state.loss_history.size() == 1);
    CHECK(state.loss_history[0] == doctest::Approx(0.75));
}

TEST_CASE("reconstruct: max_iters = 0 returns the initial state") {
    const UniformClassifier cls(4);
    InversionConfig cfg;
    cfg.max_iters = 0;
    cfg.target_prob = 0.9;
    const ReconstructionState state = reconstruct(cls, 0, cfg, 4, 4, 1);
    CHECK(state.iter == 0);
    for (double v : state.sample.data()) CHECK(v == 0.0);
}

TEST_CASE("reconstruct: plain gradient descent degeneracy") {
    // lambda1 = 1, lambda2 = 0, alpha = 0 must match S <- S - beta * grad
    const LinearSoftmaxClassifier cls(3, 4, 4, 1, 99);
    InversionConfig cfg;
    cfg.lambda1 = 1.0;
    cfg.lambda2 = 0.0;
    cfg.alpha = 0.0;
    cfg.beta = 0.05;
    cfg.max_iters = 5;
    cfg.target_prob = 1.0; // never met by this classifier
    const ReconstructionState state = reconstruct(cls, 2, cfg, 4, 4, 1);

    ImageBuffer s(4, 4, 1, 0.0);
    for (int it = 0; it < 5; ++it) {
        const Grid grad = cls.input_gradient(s, 2);
        std::vector<double> next(s.data().begin(), s.data().end());
        for (std::size_t i = 0; i < next.size(); ++i)
            next[i] -= cfg.beta * grad.data[i];
        s = ImageBuffer::from_data(4, 4, 1, next);
    }
    CHECK(state.iter == 5);
    for (std::size_t i = 0; i < s.value_count(); ++i)
        CHECK(state.sample.data()[i] == s.data()[i]);
}

TEST_CASE("reconstruct: toy classifier reaches 0.9 for every class") {
    const ToyClassifier& net = shared_toy();
    for (int target = 0; target < ToyClassifier::kClasses; ++target) {
        const ReconstructionState state =
            reconstruct(net, target, InversionConfig{}, ToyClassifier::kImageSize,
                        ToyClassifier::kImageSize, ToyClassifier::kImageChannels);
        CAPTURE(target);
        CHECK(state.prob_history.back() >= 0.9);
        CHECK(state.iter <= 500);
        // loss falls from its starting value
        CHECK(state.loss_history.back() < state.loss_history.front());
        // every intermediate sample stayed inside [0,1]
        for (double v : state.sample.data()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("reconstruct: literal update rule broadcasts a scalar") {
    const LinearSoftmaxClassifier cls(3, 4, 4, 1, 7);
    InversionConfig cfg;
    cfg.update_rule = UpdateRule::Literal;
    cfg.max_iters = 3;
    cfg.target_prob = 1.0;
    const ReconstructionState state = reconstruct(cls, 0, cfg, 4, 4, 1);
    CHECK(state.iter == 3);
    // scalar broadcast keeps the sample spatially constant
    const double first = state.sample.data()[0];
    for (double v : state.sample.data()) CHECK(v == doctest::Approx(first));
}

TEST_CASE("reconstruct: non-finite gradient aborts with the last finite state") {
    const PoisonedClassifier cls(3);
    InversionConfig cfg;
    cfg.max_iters = 10;
    cfg.target_prob = 1.0;
    try {
        reconstruct(cls, 0, cfg, 4, 4, 1);
        FAIL("expected ReconstructionAborted");
    } catch (const ReconstructionAborted& e) {
        CHECK(e.state().iter == 3);
        for (double v : e.state().sample.data()) CHECK(std::isfinite(v));
        for (double v : e.state().momentum.data) CHECK(std::isfinite(v));
    }
}

TEST_CASE("trajectory CSV shape") {
    const UniformClassifier cls(2);
    InversionConfig cfg;
    cfg.max_iters = 0;
    const std::string csv = trajectory_csv(reconstruct(cls, 0, cfg, 2, 2, 1));
    CHECK(csv.rfind("iteration,loss,target_prob,tv\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
}

TEST_CASE("gradient check: toy classifier within 1e-3") {
    const auto report =
        gradient_check(shared_toy(), 64, ToyClassifier::kImageSize,
                       ToyClassifier::kImageSize, ToyClassifier::kImageChannels, 7);
    CHECK(report.probes == 64);
    CHECK(report.max_rel_error <= 1e-3);
}

TEST_CASE("gradient check: linear-softmax control within 1e-6") {
    const LinearSoftmaxClassifier cls(4, 6, 5, 3, 123);
    const auto report = gradient_check(cls, 64, 6, 5, 3, 8);
    CHECK(report.max_rel_error <= 1e-6);
}

TEST_CASE("gradient check: zero-gradient classifier fails") {
    const BrokenGradientClassifier cls;
    const auto report = gradient_check(cls, 32, 6, 6, 1, 9);
    CHECK(report.max_rel_error > 1e-3);
}

TEST_CASE("toy classifier: simplex output and held-out accuracy gate") {
    const ToyClassifier& net = shared_toy();
    CHECK(net.train_stats().heldout_accuracy >= 0.95);

    std::mt19937_64 rng(54);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int i = 0; i < 20; ++i) {
        std::vector<double> px(16 * 16 * 3);
        for (double& v : px) v = uni(rng);
        const auto p = net.forward(ImageBuffer::from_data(16, 16, 3, px));
        REQUIRE(p.size() == 3);
        double sum = 0.0;
        for (double v : p) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
}

TEST_CASE("toy classifier: weights round-trip through the tensor file") {
    const ToyClassifier& net = shared_toy();
    const auto dir = std::filesystem::temp_directory_path() /
                     ("ssmi-weights-" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    net.save_weights(dir / "toy");
    const ToyClassifier back = ToyClassifier::load_weights(dir / "toy");

    std::mt19937_64 rng(55);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<double> px(16 * 16 * 3);
    for (double& v : px) v = uni(rng);
    const ImageBuffer img = ImageBuffer::from_data(16, 16, 3, px);
    CHECK(net.forward(img) == back.forward(img));
}

TEST_CASE("synthetic dataset is reproducible per seed") {
    const auto a = synth_shape_dataset(5, 42);
    const auto b = synth_shape_dataset(5, 42);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].label == b[i].label);
        CHECK(a[i].image == b[i].image);
    }
}
