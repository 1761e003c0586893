#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "t4d/rng.hpp"
#include "t4d/tensor.hpp"

namespace t4d {

// Ideal (brick-wall) Fourier bandpass along the last axis. Frequency bin k
// of a length-T series sampled every `period` seconds sits at k/(T*period)
// Hz; bins with lo <= f <= hi (both cutoffs inclusive) are kept, everything
// else -- including DC -- is zeroed, and the series is resynthesized from
// the kept bins. The operation is a linear projection: applying it twice
// equals applying it once.
template <typename T>
Tensor<T> bandpass_filter(const Tensor<T>& image, double period, double lo = 0.01,
                          double hi = 0.1) {
    if (period <= 0.0) throw ShapeError("bandpass: sampling period must be positive");
    if (lo >= hi) throw ShapeError("bandpass: lo must be below hi");
    if (lo < 0.0) throw ShapeError("bandpass: lo must be >= 0");
    const double nyquist = 0.5 / period;
    if (hi > nyquist + 1e-12)
        throw ShapeError("bandpass: hi above Nyquist frequency " + std::to_string(nyquist));
    const std::int64_t frames = image.extent(image.rank() - 1);
    if (frames < 4) throw ShapeError("bandpass: need at least 4 time points");

    const double window = static_cast<double>(frames) * period;  // seconds
    // Inclusive bin range, with a small tolerance so exact-cutoff bins are kept.
    std::int64_t k_lo = static_cast<std::int64_t>(std::ceil(lo * window - 1e-9));
    std::int64_t k_hi = static_cast<std::int64_t>(std::floor(hi * window + 1e-9));
    if (k_lo < 0) k_lo = 0;
    if (k_hi > frames / 2) k_hi = frames / 2;

    Tensor<T> out = Tensor<T>::zeros(image.shape());
    if (k_lo > k_hi) return out;  // nothing inside the band

    const std::int64_t bins = k_hi - k_lo + 1;
    std::vector<double> cos_tab(static_cast<std::size_t>(bins * frames));
    std::vector<double> sin_tab(static_cast<std::size_t>(bins * frames));
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (std::int64_t b = 0; b < bins; ++b) {
        const double w = two_pi * static_cast<double>(k_lo + b) / static_cast<double>(frames);
        for (std::int64_t t = 0; t < frames; ++t) {
            cos_tab[static_cast<std::size_t>(b * frames + t)] = std::cos(w * static_cast<double>(t));
            sin_tab[static_cast<std::size_t>(b * frames + t)] = std::sin(w * static_cast<double>(t));
        }
    }

    const std::int64_t voxels = image.numel() / frames;
    std::vector<double> series(static_cast<std::size_t>(frames));
    for (std::int64_t v = 0; v < voxels; ++v) {
        const T* in = image.data() + v * frames;
        T* o = out.data() + v * frames;
        std::fill(series.begin(), series.end(), 0.0);
        for (std::int64_t b = 0; b < bins; ++b) {
            const std::int64_t k = k_lo + b;
            const double* ct = cos_tab.data() + b * frames;
            const double* st = sin_tab.data() + b * frames;
            double a = 0.0, bc = 0.0;
            for (std::int64_t t = 0; t < frames; ++t) {
                a += static_cast<double>(in[t]) * ct[t];
                bc += static_cast<double>(in[t]) * st[t];
            }
            // Real resynthesis; conjugate-pair bins double, DC and Nyquist do not.
            const double weight =
                (k == 0 || (frames % 2 == 0 && k == frames / 2)) ? 1.0 : 2.0;
            const double norm = weight / static_cast<double>(frames);
            for (std::int64_t t = 0; t < frames; ++t)
                series[static_cast<std::size_t>(t)] += norm * (a * ct[t] + bc * st[t]);
        }
        for (std::int64_t t = 0; t < frames; ++t) o[t] = static_cast<T>(series[static_cast<std::size_t>(t)]);
    }
    return out;
}

// Block-average spatial downsampling of [N,C,X,Y,Z,T] images; each spatial
// extent must be divisible by its factor.
template <typename T>
Tensor<T> downsample_spatial(const Tensor<T>& image, const std::array<int, 3>& factor) {
    if (image.rank() != 6) throw ShapeError("downsample_spatial: expects [N,C,X,Y,Z,T]");
    for (int d = 0; d < 3; ++d) {
        if (factor[static_cast<std::size_t>(d)] < 1)
            throw ShapeError("downsample_spatial: factors must be >= 1");
        if (image.extent(2 + d) % factor[static_cast<std::size_t>(d)] != 0)
            throw ShapeError("downsample_spatial: extent " + std::to_string(image.extent(2 + d)) +
                             " not divisible by factor " +
                             std::to_string(factor[static_cast<std::size_t>(d)]) + " on axis " +
                             std::to_string(d) + "; crop or pad beforehand");
    }
    const std::int64_t n = image.extent(0), c = image.extent(1);
    const std::int64_t ox = image.extent(2) / factor[0];
    const std::int64_t oy = image.extent(3) / factor[1];
    const std::int64_t oz = image.extent(4) / factor[2];
    const std::int64_t frames = image.extent(5);
    Tensor<T> out({n, c, ox, oy, oz, frames});
    const double inv = 1.0 / static_cast<double>(factor[0] * factor[1] * factor[2]);
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t x = 0; x < ox; ++x)
                for (std::int64_t y = 0; y < oy; ++y)
                    for (std::int64_t z = 0; z < oz; ++z)
                        for (std::int64_t t = 0; t < frames; ++t) {
                            double acc = 0.0;
                            for (int fx = 0; fx < factor[0]; ++fx)
                                for (int fy = 0; fy < factor[1]; ++fy)
                                    for (int fz = 0; fz < factor[2]; ++fz)
                                        acc += static_cast<double>(
                                            image(b, ch, x * factor[0] + fx, y * factor[1] + fy,
                                                  z * factor[2] + fz, t));
                            out(b, ch, x, y, z, t) = static_cast<T>(acc * inv);
                        }
    return out;
}

// Contiguous temporal window [start, start+length) of a [N,C,X,Y,Z,T] image.
template <typename T>
Tensor<T> crop_time(const Tensor<T>& image, std::int64_t start, std::int64_t length) {
    if (image.rank() != 6) throw ShapeError("crop_time: expects [N,C,X,Y,Z,T]");
    const std::int64_t frames = image.extent(5);
    if (start < 0 || length < 1 || start + length > frames)
        throw ShapeError("crop_time: window [" + std::to_string(start) + "," +
                         std::to_string(start + length) + ") outside 0.." + std::to_string(frames));
    return crop(image, {0, 0, 0, 0, 0, start}, {0, 0, 0, 0, 0, frames - start - length});
}

// Start index uniform over [0, T-w]; deterministic given the generator state.
template <typename T>
Tensor<T> random_temporal_crop(const Tensor<T>& image, Rng& rng, std::int64_t window,
                               std::int64_t* start_out = nullptr) {
    const std::int64_t frames = image.extent(image.rank() - 1);
    if (frames < window)
        throw ShapeError("random_temporal_crop: sequence length " + std::to_string(frames) +
                         " shorter than window " + std::to_string(window));
    const std::int64_t start =
        static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(frames - window + 1)));
    if (start_out != nullptr) *start_out = start;
    return crop_time(image, start, window);
}

// Window starts 0, s, 2s, ... while start+w <= T; count floor((T-w)/s)+1.
inline std::vector<std::int64_t> sliding_window_starts(std::int64_t frames, std::int64_t window,
                                                       std::int64_t stride) {
    if (window < 1 || stride < 1) throw ShapeError("sliding_window: window and stride must be >= 1");
    if (frames < window)
        throw ShapeError("sliding_window: sequence length " + std::to_string(frames) +
                         " shorter than window " + std::to_string(window));
    std::vector<std::int64_t> starts;
    for (std::int64_t s = 0; s + window <= frames; s += stride) starts.push_back(s);
    return starts;
}

template <typename T>
std::vector<Tensor<T>> sliding_window_crops(const Tensor<T>& image, std::int64_t window,
                                            std::int64_t stride) {
    const std::int64_t frames = image.extent(image.rank() - 1);
    std::vector<Tensor<T>> crops;
    for (std::int64_t s : sliding_window_starts(frames, window, stride))
        crops.push_back(crop_time(image, s, window));
    return crops;
}

}  // namespace t4d
