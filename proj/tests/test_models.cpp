#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "t4d/models.hpp"

using namespace t4d;

namespace {

ModelSpec micro_spec(Variant v) {
    ModelSpec spec;
    spec.variant = v;
    spec.initial_filters = 4;
    spec.growth = 2;
    spec.layers_per_block = 2;
    spec.blocks = 2;
    spec.gru_hidden = 2;
    spec.kernel = 3;
    spec.input_extent = 6;
    spec.crop_length = 3;
    spec.seed = 77;
    return spec;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    REQUIRE(a.same_shape(b));
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return worst;
}

// Independent closed-form walk over the dense-core layer shapes. Convs carry
// no bias while batch norm is enabled; the head always has one.
std::int64_t expected_param_count(const ModelSpec& spec, int input_channels) {
    const int rank = spec.variant == Variant::Cnn4d ? 4 : 3;
    std::int64_t kernel_numel = 1;
    for (int d = 0; d < rank; ++d) kernel_numel *= spec.kernel;
    const std::int64_t bias = spec.batch_norm ? 0 : 1;

    std::int64_t total = 0;
    if (spec.variant == Variant::ConvGruCnn3d) {
        const std::int64_t k3 = static_cast<std::int64_t>(spec.kernel) * spec.kernel * spec.kernel;
        const std::int64_t ch = spec.gru_hidden;
        total += 3 * (ch * 1 * k3) + 3 * (ch * ch * k3) + 6 * ch;  // six convs, six biases
    }
    std::int64_t c = input_channels;
    total += spec.initial_filters * c * kernel_numel + bias * spec.initial_filters;
    c = spec.initial_filters;
    for (int b = 1; b <= spec.blocks; ++b) {
        for (int l = 1; l <= spec.layers_per_block; ++l) {
            if (spec.batch_norm) total += 2 * c;
            total += spec.growth * c * kernel_numel + bias * spec.growth;
            c += spec.growth;
        }
        if (b != spec.blocks) {
            const std::int64_t compressed =
                static_cast<std::int64_t>(static_cast<double>(c) * spec.compression);
            if (spec.batch_norm) total += 2 * c;
            total += compressed * c + bias * compressed;  // 1-kernel conv
            c = compressed;
        }
    }
    total += c * 2 + 2;  // head
    return total;
}

}  // namespace

TEST_CASE("stack_time_as_channels") {
    SUBCASE("time steps become channels in order") {
        Tensor<double> x({1, 1, 2, 2, 2, 15});
        const auto y = stack_time_as_channels(x);
        CHECK(y.shape() == Shape{1, 15, 2, 2, 2});
    }
    SUBCASE("T=1 keeps the volume untouched") {
        Rng rng(3);
        auto x = rand_normal<double>(rng, {2, 1, 3, 3, 3, 1});
        const auto y = stack_time_as_channels(x);
        CHECK(y.shape() == Shape{2, 1, 3, 3, 3});
        CHECK(y.buffer() == x.buffer());
    }
    SUBCASE("a marker voxel lands in exactly its channel") {
        Tensor<double> x = Tensor<double>::zeros({1, 1, 2, 2, 2, 9});
        x(0, 0, 1, 0, 1, 7) = 42.0;
        const auto y = stack_time_as_channels(x);
        for (std::int64_t c = 0; c < 9; ++c)
            CHECK(y(0, c, 1, 0, 1) == (c == 7 ? 42.0 : 0.0));
    }
    SUBCASE("multi-channel input is rejected") {
        CHECK_THROWS_AS(stack_time_as_channels(Tensor<double>::zeros({1, 2, 2, 2, 2, 3})),
                        ShapeError);
    }
}

TEST_CASE("mean_std_volumes") {
    SUBCASE("constant series") {
        auto x = Tensor<double>::full({1, 1, 2, 2, 2, 7}, 3.25);
        const auto y = mean_std_volumes(x);
        CHECK(y.shape() == Shape{1, 2, 2, 2, 2});
        CHECK(y(0, 0, 0, 0, 0) == 3.25);
        CHECK(y(0, 1, 0, 0, 0) == 0.0);
    }
    SUBCASE("two-point series") {
        Tensor<double> x({1, 1, 1, 1, 1, 2});
        x[0] = 1.0;
        x[1] = 3.0;
        const auto y = mean_std_volumes(x);
        CHECK(y(0, 0, 0, 0, 0) == doctest::Approx(2.0));
        CHECK(y(0, 1, 0, 0, 0) == doctest::Approx(1.0));
    }
    SUBCASE("moments ignore time order") {
        Rng rng(5);
        auto x = rand_normal<double>(rng, {1, 1, 3, 3, 3, 8});
        Tensor<double> permuted = x;
        const std::int64_t frames = 8;
        for (std::int64_t v = 0; v < x.numel() / frames; ++v)
            for (std::int64_t t = 0; t < frames / 2; ++t)
                std::swap(permuted[v * frames + t], permuted[v * frames + frames - 1 - t]);
        CHECK(max_abs_diff(mean_std_volumes(x), mean_std_volumes(permuted)) <= 1e-12);
    }
}

TEST_CASE("build") {
    SUBCASE("every variant maps a crop batch to [N,2] logits") {
        for (Variant v :
             {Variant::Cnn3dTc, Variant::Cnn3dMs, Variant::ConvGruCnn3d, Variant::Cnn4d}) {
            auto model = Model<float>::build(micro_spec(v));
            Rng rng(1);
            const auto crop = rand_normal<float>(rng, {10, 1, 6, 6, 6, 3});
            const auto logits = model.predict(crop);
            CHECK(logits.shape() == Shape{10, 2});
            for (std::int64_t i = 0; i < logits.numel(); ++i)
                CHECK(std::isfinite(static_cast<double>(logits[i])));
        }
    }
    SUBCASE("identical seeds give bitwise-identical parameters") {
        const auto a = Model<double>::build(micro_spec(Variant::ConvGruCnn3d));
        const auto b = Model<double>::build(micro_spec(Variant::ConvGruCnn3d));
        REQUIRE(a.params.size() == b.params.size());
        for (std::size_t i = 0; i < a.params.size(); ++i) {
            CHECK(a.params[i].name == b.params[i].name);
            CHECK(a.params[i].value == b.params[i].value);
        }
    }
    SUBCASE("parameter count equals the shape-walk oracle") {
        ModelSpec defaults;  // CNN3D-MS with library defaults
        defaults.variant = Variant::Cnn3dMs;
        auto model = Model<float>::build(defaults);
        CHECK(model.parameter_count() == expected_param_count(defaults, 2));
        CHECK(model.parameter_count() == 142482);

        for (Variant v :
             {Variant::Cnn3dTc, Variant::Cnn3dMs, Variant::ConvGruCnn3d, Variant::Cnn4d}) {
            const ModelSpec spec = micro_spec(v);
            auto m = Model<float>::build(spec);
            const int in_ch = m.layers_input_channels();
            CHECK(m.parameter_count() == expected_param_count(spec, in_ch));
        }
    }
    SUBCASE("invalid specs are rejected") {
        ModelSpec bad = micro_spec(Variant::Cnn3dMs);
        bad.blocks = 0;
        CHECK_THROWS_AS(Model<float>::build(bad), ConfigError);
        bad = micro_spec(Variant::Cnn3dMs);
        bad.compression = 0.0;
        CHECK_THROWS_AS(Model<float>::build(bad), ConfigError);
        bad = micro_spec(Variant::Cnn3dMs);
        bad.kernel = 2;
        CHECK_THROWS_AS(Model<float>::build(bad), ConfigError);
    }
}

TEST_CASE("layer list structure") {
    SUBCASE("dense connectivity arithmetic") {
        for (Variant v :
             {Variant::Cnn3dTc, Variant::Cnn3dMs, Variant::ConvGruCnn3d, Variant::Cnn4d}) {
            ModelSpec spec = micro_spec(v);
            spec.layers_per_block = 5;
            spec.blocks = 2;
            const auto model = Model<float>::build(spec);
            int block_in = spec.initial_filters;
            for (int b = 1; b <= spec.blocks; ++b) {
                int layer = 1;
                for (const auto& l : model.layers) {
                    if (l.kind != LayerKind::Conv || l.block != b) continue;
                    CHECK(l.layer == layer);
                    CHECK(l.in_channels == block_in + (layer - 1) * spec.growth);
                    CHECK(l.out_channels == spec.growth);
                    ++layer;
                }
                CHECK(layer == spec.layers_per_block + 1);
                const int block_out = block_in + spec.layers_per_block * spec.growth;
                if (b != spec.blocks)
                    block_in = static_cast<int>(block_out * spec.compression);
            }
        }
    }
    SUBCASE("variant separation") {
        auto count_kind = [](const Model<float>& m, LayerKind kind, int rank = 0) {
            int n = 0;
            for (const auto& l : m.layers)
                if (l.kind == kind && (rank == 0 || l.rank == rank)) ++n;
            return n;
        };
        const auto tc = Model<float>::build(micro_spec(Variant::Cnn3dTc));
        const auto ms = Model<float>::build(micro_spec(Variant::Cnn3dMs));
        const auto gru = Model<float>::build(micro_spec(Variant::ConvGruCnn3d));
        const auto c4d = Model<float>::build(micro_spec(Variant::Cnn4d));

        CHECK(count_kind(tc, LayerKind::ConvGru) == 0);
        CHECK(count_kind(ms, LayerKind::ConvGru) == 0);
        CHECK(count_kind(c4d, LayerKind::ConvGru) == 0);
        CHECK(count_kind(gru, LayerKind::ConvGru) == 1);

        CHECK(count_kind(tc, LayerKind::Conv, 4) == 0);
        CHECK(count_kind(ms, LayerKind::Conv, 4) == 0);
        CHECK(count_kind(gru, LayerKind::Conv, 4) == 0);
        CHECK(count_kind(c4d, LayerKind::Conv, 3) == 0);
        CHECK(count_kind(c4d, LayerKind::Conv, 4) > 0);

        // all four share the same head
        for (const auto* m : {&tc, &ms, &gru, &c4d}) {
            const auto& layers = m->layers;
            REQUIRE(layers.size() >= 2);
            CHECK(layers[layers.size() - 2].kind == LayerKind::GlobalAvgPool);
            CHECK(layers.back().kind == LayerKind::FullyConnected);
            CHECK(layers.back().out_channels == 2);
        }
    }
}

TEST_CASE("forward behavior") {
    SUBCASE("eval mode is deterministic") {
        auto model = Model<double>::build(micro_spec(Variant::Cnn3dTc));
        Rng rng(8);
        const auto crop = rand_normal<double>(rng, {2, 1, 6, 6, 6, 3});
        CHECK(model.predict(crop) == model.predict(crop));
    }
    SUBCASE("crop shape is policed") {
        auto model = Model<float>::build(micro_spec(Variant::Cnn3dMs));
        CHECK_THROWS_AS(model.predict(Tensor<float>::zeros({1, 1, 5, 6, 6, 3})), ShapeError);
        CHECK_THROWS_AS(model.predict(Tensor<float>::zeros({1, 1, 6, 6, 6, 4})), ShapeError);
        CHECK_THROWS_AS(model.predict(Tensor<float>::zeros({1, 2, 6, 6, 6, 3})), ShapeError);
    }
    SUBCASE("CNN3D-MS logits are invariant to time permutation") {
        auto model = Model<double>::build(micro_spec(Variant::Cnn3dMs));
        Rng rng(9);
        const auto crop = rand_normal<double>(rng, {1, 1, 6, 6, 6, 3});
        Tensor<double> permuted = crop;
        const std::int64_t frames = 3;
        for (std::int64_t v = 0; v < crop.numel() / frames; ++v)
            std::swap(permuted[v * frames + 0], permuted[v * frames + 2]);
        CHECK(max_abs_diff(model.predict(crop), model.predict(permuted)) <= 1e-9);
    }
    SUBCASE("CNN4D logits change under time permutation") {
        auto model = Model<double>::build(micro_spec(Variant::Cnn4d));
        Rng rng(10);
        const auto crop = rand_normal<double>(rng, {1, 1, 6, 6, 6, 3});
        Tensor<double> permuted = crop;
        const std::int64_t frames = 3;
        for (std::int64_t v = 0; v < crop.numel() / frames; ++v)
            std::swap(permuted[v * frames + 0], permuted[v * frames + 2]);
        CHECK(max_abs_diff(model.predict(crop), model.predict(permuted)) > 1e-6);
    }
    SUBCASE("train mode updates running stats, eval mode does not") {
        auto model = Model<float>::build(micro_spec(Variant::Cnn3dMs));
        REQUIRE(!model.bn_stats.empty());
        Rng rng(11);
        const auto crop = rand_normal<float>(rng, {2, 1, 6, 6, 6, 3});
        const auto before = model.bn_stats[0].second.mean;
        (void)model.predict(crop);
        CHECK(model.bn_stats[0].second.mean == before);
        Tape<float> tape;
        (void)model.forward(tape, crop, true);
        CHECK(!(model.bn_stats[0].second.mean == before));
    }
}
