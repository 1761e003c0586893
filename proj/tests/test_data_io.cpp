#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "t4d/dataset.hpp"
#include "t4d/preprocess.hpp"
#include "t4d/synth.hpp"
#include "t4d/t4df.hpp"

using namespace t4d;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("t4d_test_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

// Full complex-DFT bandpass oracle, an independent route to the same
// projection: transform, zero bins outside [lo, hi], inverse transform.
template <typename T>
Tensor<T> bandpass_oracle(const Tensor<T>& image, double period, double lo, double hi) {
    const std::int64_t frames = image.extent(image.rank() - 1);
    const std::int64_t voxels = image.numel() / frames;
    Tensor<T> out(image.shape());
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (std::int64_t v = 0; v < voxels; ++v) {
        const T* in = image.data() + v * frames;
        std::vector<std::complex<double>> spectrum(static_cast<std::size_t>(frames));
        for (std::int64_t k = 0; k < frames; ++k) {
            std::complex<double> acc(0.0, 0.0);
            for (std::int64_t t = 0; t < frames; ++t)
                acc += static_cast<double>(in[t]) *
                       std::exp(std::complex<double>(0.0, -two_pi * k * t / frames));
            const std::int64_t folded = std::min(k, frames - k);
            const double f = static_cast<double>(folded) / (static_cast<double>(frames) * period);
            spectrum[static_cast<std::size_t>(k)] =
                (f >= lo - 1e-12 && f <= hi + 1e-12) ? acc : std::complex<double>(0.0, 0.0);
        }
        for (std::int64_t t = 0; t < frames; ++t) {
            std::complex<double> acc(0.0, 0.0);
            for (std::int64_t k = 0; k < frames; ++k)
                acc += spectrum[static_cast<std::size_t>(k)] *
                       std::exp(std::complex<double>(0.0, two_pi * k * t / frames));
            out.data()[v * frames + t] = static_cast<T>(acc.real() / static_cast<double>(frames));
        }
    }
    return out;
}

template <typename T>
double rms(const Tensor<T>& t) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < t.numel(); ++i)
        acc += static_cast<double>(t[i]) * static_cast<double>(t[i]);
    return std::sqrt(acc / static_cast<double>(t.numel()));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    REQUIRE(a.same_shape(b));
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return worst;
}

Tensor<double> sine_image(double freq, double period, std::int64_t frames) {
    Tensor<double> img({1, 1, 2, 2, 1, frames});
    for (std::int64_t v = 0; v < 4; ++v)
        for (std::int64_t t = 0; t < frames; ++t)
            img[v * frames + t] =
                std::sin(2.0 * 3.14159265358979323846 * freq * static_cast<double>(t) * period +
                         0.3 * static_cast<double>(v));
    return img;
}

std::vector<char> read_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("t4df container") {
    TempDir dir("t4df");
    SUBCASE("round trip is bitwise for both dtypes") {
        Rng rng(1);
        const auto f32 = rand_normal<float>(rng, {3, 4, 2});
        save_tensor(dir.file("a.t4df"), f32);
        CHECK(load_tensor_as<float>(dir.file("a.t4df")) == f32);

        const auto f64 = rand_normal<double>(rng, {2, 2, 2, 2, 2, 2});
        save_tensor(dir.file("b.t4df"), f64);
        CHECK(load_tensor_as<double>(dir.file("b.t4df")) == f64);

        const T4dfHeader header = read_tensor_header(dir.file("b.t4df"));
        CHECK(header.dtype == DType::F64);
        CHECK(header.extents == Shape{2, 2, 2, 2, 2, 2});
    }
    SUBCASE("f32 file loads losslessly as f64") {
        Rng rng(2);
        const auto f32 = rand_normal<float>(rng, {5});
        save_tensor(dir.file("c.t4df"), f32);
        const auto up = load_tensor_as<double>(dir.file("c.t4df"));
        for (std::int64_t i = 0; i < 5; ++i) CHECK(up[i] == static_cast<double>(f32[i]));
    }
    SUBCASE("error kinds are distinct") {
        const auto t = Tensor<float>::full({4}, 1.0f);
        save_tensor(dir.file("good.t4df"), t);
        auto bytes = read_bytes(dir.file("good.t4df"));

        auto write_variant = [&](const std::string& name, auto mutate) {
            auto copy = bytes;
            mutate(copy);
            std::ofstream os(dir.file(name), std::ios::binary);
            os.write(copy.data(), static_cast<std::streamsize>(copy.size()));
        };
        write_variant("magic.t4df", [](std::vector<char>& b) { b[0] = 'X'; });
        write_variant("version.t4df", [](std::vector<char>& b) { b[4] = 9; });
        write_variant("dtype.t4df", [](std::vector<char>& b) { b[5] = 7; });
        write_variant("trunc.t4df", [](std::vector<char>& b) { b.resize(b.size() - 4); });

        auto kind_of = [&](const std::string& name) {
            try {
                (void)load_tensor(dir.file(name));
            } catch (const IoError& e) {
                return e.kind();
            }
            FAIL("expected IoError");
            return IoError::Kind::Open;
        };
        CHECK(kind_of("magic.t4df") == IoError::Kind::BadMagic);
        CHECK(kind_of("version.t4df") == IoError::Kind::BadVersion);
        CHECK(kind_of("dtype.t4df") == IoError::Kind::BadDtype);
        CHECK(kind_of("trunc.t4df") == IoError::Kind::Truncated);
        CHECK(kind_of("missing.t4df") == IoError::Kind::Open);
    }
}

TEST_CASE("manifest") {
    TempDir dir("manifest");
    SUBCASE("round trip is lossless") {
        Manifest m;
        m.image_shape = {16, 16, 16, 64};
        m.sampling_period = 2.0;
        m.entries = {{"a.t4df", "sub-0000", 0, Split::Train},
                     {"b.t4df", "sub-0001", 1, Split::Val},
                     {"c.t4df", "sub-0002", 1, Split::Test}};
        save_manifest(m, dir.file("manifest.tsv"));
        const Manifest loaded = load_manifest(dir.file("manifest.tsv"));
        CHECK(loaded.image_shape == m.image_shape);
        CHECK(loaded.sampling_period == m.sampling_period);
        REQUIRE(loaded.entries.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(loaded.entries[i].path == m.entries[i].path);
            CHECK(loaded.entries[i].subject == m.entries[i].subject);
            CHECK(loaded.entries[i].label == m.entries[i].label);
            CHECK(loaded.entries[i].split == m.entries[i].split);
        }
        const auto counts = loaded.counts(Split::Val);
        CHECK(counts.total == 1);
        CHECK(counts.class1 == 1);
    }
    SUBCASE("violations are rejected") {
        std::ofstream(dir.file("dup.tsv")) << "@shape\t4 4 4 8\n@period\t2\n"
                                           << "a.t4df\tsub-0\t0\ttrain\n"
                                           << "b.t4df\tsub-0\t1\ttrain\n";
        CHECK_THROWS_AS(load_manifest(dir.file("dup.tsv")), IoError);
        std::ofstream(dir.file("label.tsv")) << "@shape\t4 4 4 8\n@period\t2\n"
                                             << "a.t4df\tsub-0\t3\ttrain\n";
        CHECK_THROWS_AS(load_manifest(dir.file("label.tsv")), IoError);
        std::ofstream(dir.file("split.tsv")) << "@shape\t4 4 4 8\n@period\t2\n"
                                             << "a.t4df\tsub-0\t1\tholdout\n";
        CHECK_THROWS_AS(load_manifest(dir.file("split.tsv")), IoError);
        std::ofstream(dir.file("fields.tsv")) << "@shape\t4 4 4 8\n@period\t2\n"
                                              << "a.t4df\tsub-0\t1\n";
        CHECK_THROWS_AS(load_manifest(dir.file("fields.tsv")), IoError);
    }
}

TEST_CASE("bandpass_filter") {
    const double period = 2.0;
    SUBCASE("constant series is annihilated") {
        const auto img = Tensor<double>::full({1, 1, 2, 2, 2, 32}, 5.0);
        const auto out = bandpass_filter(img, period);
        for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(std::abs(out[i]) < 1e-6 * 5.0);
    }
    SUBCASE("in-band sine survives, out-of-band sine dies") {
        // 176 frames: 0.05 Hz falls between bins; the leakage the brick-wall
        // filter can remove is under 1% of the amplitude.
        const auto in_band = sine_image(0.05, period, 176);
        const auto kept = bandpass_filter(in_band, period);
        CHECK(rms(kept) / rms(in_band) > 0.99);
        CHECK(rms(kept) / rms(in_band) < 1.01);

        // 180 frames put both test tones on exact bins (0.05 Hz -> bin 18,
        // 0.2 Hz -> bin 72), so rejection is total up to rounding.
        const auto aligned_in = sine_image(0.05, period, 180);
        const auto aligned_kept = bandpass_filter(aligned_in, period);
        CHECK(rms(aligned_kept) / rms(aligned_in) > 0.999);
        CHECK(rms(aligned_kept) / rms(aligned_in) < 1.001);

        const auto out_band = sine_image(0.2, period, 180);
        const auto removed = bandpass_filter(out_band, period);
        CHECK(rms(removed) / rms(out_band) < 0.01);
    }
    SUBCASE("matches the complex-DFT oracle") {
        Rng rng(33);
        const auto img = rand_normal<double>(rng, {1, 1, 2, 2, 2, 50});
        const auto mine = bandpass_filter(img, period);
        const auto oracle = bandpass_oracle(img, period, 0.01, 0.1);
        CHECK(max_abs_diff(mine, oracle) <= 1e-9);
    }
    SUBCASE("projection: applying twice equals applying once") {
        Rng rng(34);
        const auto img = rand_normal<double>(rng, {1, 1, 2, 2, 2, 64});
        const auto once = bandpass_filter(img, period);
        const auto twice = bandpass_filter(once, period);
        CHECK(max_abs_diff(once, twice) <= 1e-6 * std::max(1.0, rms(once)));
    }
    SUBCASE("linearity") {
        Rng rng(35);
        const auto a = rand_normal<double>(rng, {1, 1, 2, 2, 2, 48});
        const auto b = rand_normal<double>(rng, {1, 1, 2, 2, 2, 48});
        const double s = 2.75;
        const auto lhs = bandpass_filter(add(scale(a, s), b), period);
        const auto rhs = add(scale(bandpass_filter(a, period), s), bandpass_filter(b, period));
        CHECK(max_abs_diff(lhs, rhs) <= 1e-6);
    }
    SUBCASE("bad bands are rejected") {
        const auto img = Tensor<double>::zeros({1, 1, 1, 1, 1, 32});
        CHECK_THROWS_AS(bandpass_filter(img, period, 0.1, 0.01), ShapeError);
        CHECK_THROWS_AS(bandpass_filter(img, period, 0.01, 0.3), ShapeError);
        CHECK_THROWS_AS(bandpass_filter(img, 0.0, 0.01, 0.1), ShapeError);
    }
}

TEST_CASE("downsample_spatial") {
    SUBCASE("constant image stays constant") {
        const auto img = Tensor<double>::full({1, 1, 4, 4, 4, 3}, 1.5);
        const auto out = downsample_spatial(img, {2, 2, 2});
        CHECK(out.shape() == Shape{1, 1, 2, 2, 2, 3});
        for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 1.5);
    }
    SUBCASE("factor-2 block mean") {
        Tensor<double> img({1, 1, 2, 2, 2, 1});
        for (std::int64_t i = 0; i < 8; ++i) img[i] = static_cast<double>(i + 1);
        const auto out = downsample_spatial(img, {2, 2, 2});
        CHECK(out.numel() == 1);
        CHECK(out[0] == doctest::Approx(4.5));
    }
    SUBCASE("indivisible extents are an error") {
        CHECK_THROWS_AS(downsample_spatial(Tensor<double>::zeros({1, 1, 5, 4, 4, 2}), {2, 2, 2}),
                        ShapeError);
        CHECK_THROWS_AS(downsample_spatial(Tensor<double>::zeros({1, 1, 4, 4, 4, 2}), {0, 2, 2}),
                        ShapeError);
    }
}

TEST_CASE("temporal crops") {
    SUBCASE("window equal to the sequence uses the whole sequence") {
        Rng rng(41);
        const auto img = rand_normal<double>(rng, {1, 1, 2, 2, 2, 15});
        Rng crop_rng(1);
        CHECK(random_temporal_crop(img, crop_rng, 15) == img);
    }
    SUBCASE("too-short sequences are an error") {
        const auto img = Tensor<double>::zeros({1, 1, 2, 2, 2, 10});
        Rng rng(1);
        CHECK_THROWS_AS(random_temporal_crop(img, rng, 15), ShapeError);
        CHECK_THROWS_AS(sliding_window_starts(10, 15, 1), ShapeError);
    }
    SUBCASE("start coverage over many draws") {
        const auto img = Tensor<float>::zeros({1, 1, 2, 2, 2, 176});
        Rng rng(7);
        std::vector<int> hits(162, 0);
        for (int i = 0; i < 10000; ++i) {
            std::int64_t start = -1;
            (void)random_temporal_crop(img, rng, 15, &start);
            REQUIRE(start >= 0);
            REQUIRE(start <= 161);
            ++hits[static_cast<std::size_t>(start)];
        }
        for (int h : hits) CHECK(h > 0);
    }
    SUBCASE("fixed seed reproduces the start sequence") {
        const auto img = Tensor<float>::zeros({1, 1, 2, 2, 2, 64});
        Rng a(9), b(9);
        for (int i = 0; i < 32; ++i) {
            std::int64_t sa = -1, sb = -1;
            (void)random_temporal_crop(img, a, 15, &sa);
            (void)random_temporal_crop(img, b, 15, &sb);
            CHECK(sa == sb);
        }
    }
    SUBCASE("sliding-window counts") {
        CHECK(sliding_window_starts(176, 15, 1).size() == 162);
        CHECK(sliding_window_starts(176, 15, 15).size() == 11);
        CHECK(sliding_window_starts(176, 15, 8).size() == 21);
        CHECK(sliding_window_starts(15, 15, 1).size() == 1);
    }
    SUBCASE("every sliding crop equals the direct tensor crop") {
        Rng rng(42);
        const auto img = rand_normal<double>(rng, {1, 1, 2, 2, 2, 40});
        const auto crops = sliding_window_crops(img, 15, 8);
        const auto starts = sliding_window_starts(40, 15, 8);
        REQUIRE(crops.size() == starts.size());
        for (std::size_t i = 0; i < crops.size(); ++i) {
            const auto direct =
                crop(img, {0, 0, 0, 0, 0, starts[i]}, {0, 0, 0, 0, 0, 40 - starts[i] - 15});
            CHECK(crops[i] == direct);
        }
    }
}

TEST_CASE("synthetic generator") {
    SynthConfig small;
    small.train_per_class = 2;
    small.val_per_class = 1;
    small.test_per_class = 1;
    small.extent = 8;
    small.frames = 32;
    small.seed = 5;

    SUBCASE("same seed, byte-identical dataset") {
        TempDir a("synth_a"), b("synth_b");
        (void)generate_synthetic(small, a.path.string());
        (void)generate_synthetic(small, b.path.string());
        for (const auto& entry : fs::directory_iterator(a.path)) {
            const auto name = entry.path().filename().string();
            CHECK(read_bytes(entry.path().string()) == read_bytes((b.path / name).string()));
        }
    }
    SUBCASE("balanced splits and loadable dataset") {
        TempDir dir("synth_load");
        (void)generate_synthetic(small, dir.path.string());
        const auto data = load_dataset<float>(dir.file("manifest.tsv"));
        CHECK(data.records.size() == 8);
        for (Split s : {Split::Train, Split::Val, Split::Test}) {
            const auto counts = data.manifest.counts(s);
            CHECK(counts.class0 == counts.class1);
        }
        CHECK(data.records[0].image.shape() == Shape{1, 1, 8, 8, 8, 32});
    }
    SUBCASE("amplitude mode separates in-region variance by the margin") {
        TempDir dir("synth_margin");
        const auto summary = generate_synthetic(small, dir.path.string());
        CHECK(summary.margin_met);
        CHECK(summary.class1_region_variance - summary.class0_region_variance >= summary.margin);
    }
    SUBCASE("zero amplitude makes the classes indistinguishable") {
        TempDir dir("synth_flat");
        SynthConfig flat = small;
        flat.amplitude = 0.0;
        const auto summary = generate_synthetic(flat, dir.path.string());
        // noise floor: in-region variance estimates differ by far less than
        // one noise variance
        CHECK(std::abs(summary.class1_region_variance - summary.class0_region_variance) < 0.1);
    }
    SUBCASE("temporal-shape mode hides the class from variance statistics") {
        TempDir dir("synth_shape");
        SynthConfig shape = small;
        shape.mode = SignalMode::TemporalShape;
        const auto summary = generate_synthetic(shape, dir.path.string());
        const double scale = shape.amplitude * shape.amplitude;
        CHECK(std::abs(summary.class1_region_variance - summary.class0_region_variance) <
              0.1 * scale);
    }
    SUBCASE("invalid config is rejected") {
        SynthConfig bad = small;
        bad.train_per_class = 0;
        TempDir dir("synth_bad");
        CHECK_THROWS_AS(generate_synthetic(bad, dir.path.string()), ConfigError);
    }
}
