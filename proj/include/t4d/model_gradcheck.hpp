#pragma once

#include <limits>

#include "t4d/gradcheck.hpp"
#include "t4d/models.hpp"
#include "t4d/nn_ops.hpp"

namespace t4d {

// Smallest |relu input| across a recorded forward pass. Finite differences
// need a locally smooth loss; a relu pre-activation within the probe radius
// of zero invalidates the test point (the difference quotient measures an
// average of two slopes, not the derivative).
inline double min_relu_input(Tape<double>& tape) {
    double min_abs = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < tape.size(); ++i) {
        const auto& node = tape.node(static_cast<int>(i));
        if (node.op != "relu") continue;
        const Tensor<double>& x = tape.value(node.inputs[0]);
        for (std::int64_t j = 0; j < x.numel(); ++j)
            min_abs = std::min(min_abs, std::abs(static_cast<double>(x[j])));
    }
    return min_abs;
}

struct ModelGradCheck {
    GradCheckReport report;
    std::uint64_t data_salt = 0;  // times the probe data was re-drawn
    double kink_margin = 0.0;
};

// End-to-end 64-bit gradient check of one model instance: softmax
// cross-entropy loss on a fixed two-sample batch, train-mode forward, every
// trainable parameter probed. Probe data is re-drawn deterministically until
// no relu input sits inside the kink guard band; a wrong backward rule fails
// at every probe point, so the search cannot mask real defects.
inline ModelGradCheck gradcheck_model(const ModelSpec& spec, const GradCheckOptions& options = {},
                                      std::uint64_t data_seed = 0xABCDEF) {
    Model<double> model = Model<double>::build(spec);
    const std::vector<int> labels{0, 1};

    constexpr double kKinkGuard = 2e-5;
    ModelGradCheck result;
    Tensor<double> crop;
    for (std::uint64_t salt = 0;; ++salt) {
        Rng rng((spec.seed + salt) ^ data_seed);
        crop = rand_normal<double>(rng, {2, 1, spec.input_extent, spec.input_extent,
                                         spec.input_extent, spec.crop_length});
        Tape<double> tape;
        (void)model.forward(tape, crop, true);
        result.kink_margin = min_relu_input(tape);
        result.data_salt = salt;
        if (result.kink_margin >= kKinkGuard) break;
        if (salt >= 50) throw NumericError("gradcheck: no well-conditioned probe point found");
    }

    GradCheckProblem<double> problem;
    for (auto& p : model.params)
        if (p.trainable) problem.params.push_back({p.name, &p.value});
    problem.loss = [&]() {
        Tape<double> tape;
        const int logits = model.forward(tape, crop, true);
        return tape.value(softmax_cross_entropy(tape, logits, labels))[0];
    };
    problem.grads = [&]() {
        Tape<double> tape;
        std::vector<int> leaves;
        const int logits = model.forward(tape, crop, true, &leaves);
        tape.backward(softmax_cross_entropy(tape, logits, labels));
        std::vector<Tensor<double>> grads;
        for (std::size_t i = 0; i < model.params.size(); ++i)
            if (model.params[i].trainable) grads.push_back(tape.grad(leaves[i]));
        return grads;
    };
    result.report = gradcheck(problem, options);
    return result;
}

// Micro-scale spec shared by the gradcheck tool and the verification suite.
inline ModelSpec micro_gradcheck_spec(Variant variant, int extent = 6, int frames = 3,
                                      std::uint64_t seed = 2024) {
    ModelSpec spec;
    spec.variant = variant;
    spec.initial_filters = 4;
    spec.growth = 2;
    spec.layers_per_block = 2;
    spec.blocks = 2;
    spec.gru_hidden = 2;
    spec.kernel = 3;
    spec.input_extent = extent;
    spec.crop_length = frames;
    spec.seed = seed;
    return spec;
}

}  // namespace t4d
