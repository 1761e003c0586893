#pragma once

#include <array>
#include <cstring>
#include <memory>
#include <type_traits>
#include <vector>

#include "t4d/autodiff.hpp"
#include "t4d/tensor.hpp"

namespace t4d {

// Convolution descriptor for spatial rank 3 (X,Y,Z) or 4 (X,Y,Z,T).
// Convention is cross-correlation (no kernel flip); the brute-force oracle
// used by the tests follows the same convention.
struct ConvSpec {
    int rank = 3;
    int in_channels = 1;
    int out_channels = 1;
    std::array<int, 4> kernel{1, 1, 1, 1};
    std::array<int, 4> stride{1, 1, 1, 1};
    std::array<int, 4> pad{0, 0, 0, 0};
    bool bias = true;

    static ConvSpec isotropic(int rank, int cin, int cout, int k, int s, int p, bool bias) {
        ConvSpec spec;
        spec.rank = rank;
        spec.in_channels = cin;
        spec.out_channels = cout;
        for (int d = 0; d < rank; ++d) {
            spec.kernel[static_cast<std::size_t>(d)] = k;
            spec.stride[static_cast<std::size_t>(d)] = s;
            spec.pad[static_cast<std::size_t>(d)] = p;
        }
        spec.bias = bias;
        return spec;
    }

    void validate() const {
        if (rank != 3 && rank != 4) throw ShapeError("ConvSpec: rank must be 3 or 4");
        if (in_channels < 1 || out_channels < 1) throw ShapeError("ConvSpec: channels must be >= 1");
        for (int d = 0; d < rank; ++d) {
            const auto i = static_cast<std::size_t>(d);
            if (kernel[i] < 1) throw ShapeError("ConvSpec: kernel extents must be >= 1");
            if (stride[i] < 1) throw ShapeError("ConvSpec: strides must be >= 1");
            if (pad[i] < 0) throw ShapeError("ConvSpec: padding must be >= 0");
        }
    }

    std::int64_t out_extent(std::int64_t in, int axis) const {
        const auto i = static_cast<std::size_t>(axis);
        const std::int64_t span = in + 2 * pad[i] - kernel[i];
        if (span < 0) return 0;  // kernel larger than the padded input
        return span / stride[i] + 1;
    }

    Shape weight_shape() const {
        Shape s{out_channels, in_channels};
        for (int d = 0; d < rank; ++d) s.push_back(kernel[static_cast<std::size_t>(d)]);
        return s;
    }
};

enum class ConvPath { Direct, Im2col };

namespace detail {

// Unified geometry: rank-3 convolutions run as rank 4 with a trailing unit
// axis, which leaves the contiguous layout untouched.
struct ConvGeom {
    std::int64_t batch = 0, cin = 0, cout = 0;
    std::array<std::int64_t, 4> in{1, 1, 1, 1}, out{1, 1, 1, 1};
    std::array<std::int64_t, 4> k{1, 1, 1, 1}, s{1, 1, 1, 1}, p{0, 0, 0, 0};
    std::int64_t in_voxels = 1, out_voxels = 1, kernel_numel = 1, patch_rows = 1;
};

template <typename T>
ConvGeom conv_geom(const ConvSpec& spec, const Tensor<T>& x, const Tensor<T>& w,
                   const Tensor<T>* b) {
    spec.validate();
    if (x.rank() != spec.rank + 2)
        throw ShapeError("conv: input rank " + std::to_string(x.rank()) + " does not match spec rank " +
                         std::to_string(spec.rank));
    if (w.shape() != spec.weight_shape())
        throw ShapeError("conv: weight shape " + shape_str(w.shape()) + " does not match spec " +
                         shape_str(spec.weight_shape()));
    if (x.extent(1) != spec.in_channels)
        throw ShapeError("conv: input has " + std::to_string(x.extent(1)) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
    if (spec.bias) {
        if (b == nullptr || b->rank() != 1 || b->extent(0) != spec.out_channels)
            throw ShapeError("conv: bias must have shape [out_channels]");
    } else if (b != nullptr) {
        throw ShapeError("conv: spec declares no bias but one was provided");
    }

    ConvGeom g;
    g.batch = x.extent(0);
    g.cin = spec.in_channels;
    g.cout = spec.out_channels;
    for (int d = 0; d < spec.rank; ++d) {
        const auto i = static_cast<std::size_t>(d);
        g.in[i] = x.extent(2 + d);
        g.k[i] = spec.kernel[i];
        g.s[i] = spec.stride[i];
        g.p[i] = spec.pad[i];
        g.out[i] = spec.out_extent(g.in[i], d);
        if (g.out[i] < 1)
            throw ShapeError("conv: output extent < 1 on axis " + std::to_string(d));
    }
    g.in_voxels = g.in[0] * g.in[1] * g.in[2] * g.in[3];
    g.out_voxels = g.out[0] * g.out[1] * g.out[2] * g.out[3];
    g.kernel_numel = g.k[0] * g.k[1] * g.k[2] * g.k[3];
    g.patch_rows = g.cin * g.kernel_numel;
    return g;
}

inline Shape conv_out_shape(const ConvSpec& spec, const ConvGeom& g) {
    Shape s{g.batch, g.cout};
    for (int d = 0; d < spec.rank; ++d) s.push_back(g.out[static_cast<std::size_t>(d)]);
    return s;
}

// Patch matrix for one sample: rows = cin*kx*ky*kz*kt, cols = out voxels.
template <typename T>
void im2col_sample(const T* x_sample, const ConvGeom& g, T* cols) {
    const std::int64_t ix_s = g.in[1] * g.in[2] * g.in[3];
    const std::int64_t iy_s = g.in[2] * g.in[3];
    const std::int64_t iz_s = g.in[3];
    std::int64_t row = 0;
    for (std::int64_t ci = 0; ci < g.cin; ++ci) {
        const T* xc = x_sample + ci * g.in_voxels;
        for (std::int64_t kx = 0; kx < g.k[0]; ++kx)
        for (std::int64_t ky = 0; ky < g.k[1]; ++ky)
        for (std::int64_t kz = 0; kz < g.k[2]; ++kz)
        for (std::int64_t kt = 0; kt < g.k[3]; ++kt, ++row) {
            T* out_row = cols + row * g.out_voxels;
            std::int64_t col = 0;
            for (std::int64_t ox = 0; ox < g.out[0]; ++ox) {
                const std::int64_t ix = ox * g.s[0] - g.p[0] + kx;
                const bool x_ok = ix >= 0 && ix < g.in[0];
                for (std::int64_t oy = 0; oy < g.out[1]; ++oy) {
                    const std::int64_t iy = oy * g.s[1] - g.p[1] + ky;
                    const bool y_ok = x_ok && iy >= 0 && iy < g.in[1];
                    for (std::int64_t oz = 0; oz < g.out[2]; ++oz) {
                        const std::int64_t iz = oz * g.s[2] - g.p[2] + kz;
                        const bool z_ok = y_ok && iz >= 0 && iz < g.in[2];
                        const T* base = xc + ix * ix_s + iy * iy_s + iz * iz_s;
                        for (std::int64_t ot = 0; ot < g.out[3]; ++ot, ++col) {
                            const std::int64_t it = ot * g.s[3] - g.p[3] + kt;
                            out_row[col] = (z_ok && it >= 0 && it < g.in[3]) ? base[it] : T(0);
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add of a patch-layout gradient back onto one input sample.
template <typename T>
void col2im_sample(const T* cols, const ConvGeom& g, T* dx_sample) {
    const std::int64_t ix_s = g.in[1] * g.in[2] * g.in[3];
    const std::int64_t iy_s = g.in[2] * g.in[3];
    const std::int64_t iz_s = g.in[3];
    std::int64_t row = 0;
    for (std::int64_t ci = 0; ci < g.cin; ++ci) {
        T* xc = dx_sample + ci * g.in_voxels;
        for (std::int64_t kx = 0; kx < g.k[0]; ++kx)
        for (std::int64_t ky = 0; ky < g.k[1]; ++ky)
        for (std::int64_t kz = 0; kz < g.k[2]; ++kz)
        for (std::int64_t kt = 0; kt < g.k[3]; ++kt, ++row) {
            const T* in_row = cols + row * g.out_voxels;
            std::int64_t col = 0;
            for (std::int64_t ox = 0; ox < g.out[0]; ++ox) {
                const std::int64_t ix = ox * g.s[0] - g.p[0] + kx;
                const bool x_ok = ix >= 0 && ix < g.in[0];
                for (std::int64_t oy = 0; oy < g.out[1]; ++oy) {
                    const std::int64_t iy = oy * g.s[1] - g.p[1] + ky;
                    const bool y_ok = x_ok && iy >= 0 && iy < g.in[1];
                    for (std::int64_t oz = 0; oz < g.out[2]; ++oz) {
                        const std::int64_t iz = oz * g.s[2] - g.p[2] + kz;
                        const bool z_ok = y_ok && iz >= 0 && iz < g.in[2];
                        T* base = xc + ix * ix_s + iy * iy_s + iz * iz_s;
                        for (std::int64_t ot = 0; ot < g.out[3]; ++ot, ++col) {
                            const std::int64_t it = ot * g.s[3] - g.p[3] + kt;
                            if (z_ok && it >= 0 && it < g.in[3]) base[it] += in_row[col];
                        }
                    }
                }
            }
        }
    }
}

// c[M,N] = a[M,K]*b[K,N] (+ bias[m]), double accumulation, written row-wise.
template <typename T>
void mm_into(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n,
             const T* bias) {
    std::vector<double> acc(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), bias ? static_cast<double>(bias[i]) : 0.0);
        const T* arow = a + i * k;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const double av = static_cast<double>(arow[kk]);
            if (av == 0.0) continue;
            const T* brow = b + kk * n;
            for (std::int64_t j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += av * static_cast<double>(brow[j]);
        }
        T* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = static_cast<T>(acc[static_cast<std::size_t>(j)]);
    }
}

// acc[M,N] += a[M,K]*b[N,K]^T, accumulator supplied by the caller.
template <typename T>
void mm_nt_acc(const T* a, const T* b, double* acc, std::int64_t m, std::int64_t k,
               std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        double* crow = acc + i * n;
        for (std::int64_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            double sum = 0.0;
            for (std::int64_t kk = 0; kk < k; ++kk)
                sum += static_cast<double>(arow[kk]) * static_cast<double>(brow[kk]);
            crow[j] += sum;
        }
    }
}

// c[M,N] = a[K,M]^T*b[K,N], double accumulation per output row.
template <typename T>
void mm_tn_into(const T* a, const T* b, T* c, std::int64_t k, std::int64_t m, std::int64_t n) {
    std::vector<double> acc(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const double av = static_cast<double>(a[kk * m + i]);
            if (av == 0.0) continue;
            const T* brow = b + kk * n;
            for (std::int64_t j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += av * static_cast<double>(brow[j]);
        }
        T* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = static_cast<T>(acc[static_cast<std::size_t>(j)]);
    }
}

}  // namespace detail

// Forward convolution. The direct path is the nested-loop reference; the
// im2col path lowers each sample to a patch matrix and multiplies. Both
// paths accumulate in double and must agree within rounding.
template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w,
                       const std::type_identity_t<Tensor<T>>* b, const ConvSpec& spec,
                       ConvPath path = ConvPath::Im2col) {
    const detail::ConvGeom g = detail::conv_geom(spec, x, w, b);
    Tensor<T> out(detail::conv_out_shape(spec, g));

    if (path == ConvPath::Direct) {
        const std::int64_t ix_s = g.in[1] * g.in[2] * g.in[3];
        const std::int64_t iy_s = g.in[2] * g.in[3];
        const std::int64_t iz_s = g.in[3];
        T* o = out.data();
        for (std::int64_t n = 0; n < g.batch; ++n) {
            const T* xs = x.data() + n * g.cin * g.in_voxels;
            for (std::int64_t co = 0; co < g.cout; ++co) {
                const T* wc = w.data() + co * g.cin * g.kernel_numel;
                const double bias = b ? static_cast<double>((*b)[co]) : 0.0;
                for (std::int64_t ox = 0; ox < g.out[0]; ++ox)
                for (std::int64_t oy = 0; oy < g.out[1]; ++oy)
                for (std::int64_t oz = 0; oz < g.out[2]; ++oz)
                for (std::int64_t ot = 0; ot < g.out[3]; ++ot) {
                    double acc = bias;
                    const T* wk = wc;
                    for (std::int64_t ci = 0; ci < g.cin; ++ci) {
                        const T* xc = xs + ci * g.in_voxels;
                        for (std::int64_t kx = 0; kx < g.k[0]; ++kx)
                        for (std::int64_t ky = 0; ky < g.k[1]; ++ky)
                        for (std::int64_t kz = 0; kz < g.k[2]; ++kz)
                        for (std::int64_t kt = 0; kt < g.k[3]; ++kt, ++wk) {
                            const std::int64_t ix = ox * g.s[0] - g.p[0] + kx;
                            const std::int64_t iy = oy * g.s[1] - g.p[1] + ky;
                            const std::int64_t iz = oz * g.s[2] - g.p[2] + kz;
                            const std::int64_t it = ot * g.s[3] - g.p[3] + kt;
                            if (ix < 0 || ix >= g.in[0] || iy < 0 || iy >= g.in[1] || iz < 0 ||
                                iz >= g.in[2] || it < 0 || it >= g.in[3])
                                continue;
                            acc += static_cast<double>(xc[ix * ix_s + iy * iy_s + iz * iz_s + it]) *
                                   static_cast<double>(*wk);
                        }
                    }
                    *o++ = static_cast<T>(acc);
                }
            }
        }
        return out;
    }

    std::vector<T> cols(static_cast<std::size_t>(g.patch_rows * g.out_voxels));
    for (std::int64_t n = 0; n < g.batch; ++n) {
        detail::im2col_sample(x.data() + n * g.cin * g.in_voxels, g, cols.data());
        detail::mm_into(w.data(), cols.data(), out.data() + n * g.cout * g.out_voxels, g.cout,
                        g.patch_rows, g.out_voxels, b ? b->data() : nullptr);
    }
    return out;
}

template <typename T>
struct ConvGrads {
    Tensor<T> dx;  // empty when not requested
    Tensor<T> dw;
    Tensor<T> db;  // empty when the spec has no bias
};

template <typename T>
ConvGrads<T> conv_backward(const Tensor<T>& upstream, const Tensor<T>& x, const Tensor<T>& w,
                           const ConvSpec& spec, bool want_dx = true, bool want_dw = true) {
    // Bias presence follows the spec; the bias value itself does not enter
    // any gradient, so it is not needed here.
    Tensor<T> dummy_bias({spec.out_channels});
    const detail::ConvGeom g = detail::conv_geom(spec, x, w, spec.bias ? &dummy_bias : nullptr);
    if (upstream.shape() != detail::conv_out_shape(spec, g))
        throw ShapeError("conv_backward: upstream shape " + shape_str(upstream.shape()) +
                         " does not match forward output");

    ConvGrads<T> grads;
    if (want_dx) grads.dx = Tensor<T>::zeros(x.shape());
    if (want_dw) grads.dw = Tensor<T>::zeros(w.shape());

    std::vector<double> dw_acc;
    if (want_dw) dw_acc.assign(static_cast<std::size_t>(w.numel()), 0.0);
    std::vector<T> cols(static_cast<std::size_t>(g.patch_rows * g.out_voxels));

    for (std::int64_t n = 0; n < g.batch; ++n) {
        const T* up_n = upstream.data() + n * g.cout * g.out_voxels;
        if (want_dw) {
            detail::im2col_sample(x.data() + n * g.cin * g.in_voxels, g, cols.data());
            detail::mm_nt_acc(up_n, cols.data(), dw_acc.data(), g.cout, g.out_voxels,
                              g.patch_rows);
        }
        if (want_dx) {
            detail::mm_tn_into(w.data(), up_n, cols.data(), g.cout, g.patch_rows, g.out_voxels);
            detail::col2im_sample(cols.data(), g, grads.dx.data() + n * g.cin * g.in_voxels);
        }
    }
    if (want_dw)
        for (std::int64_t i = 0; i < w.numel(); ++i)
            grads.dw[i] = static_cast<T>(dw_acc[static_cast<std::size_t>(i)]);

    if (spec.bias) {
        grads.db = Tensor<T>::zeros({spec.out_channels});
        for (std::int64_t co = 0; co < g.cout; ++co) {
            double acc = 0.0;
            for (std::int64_t n = 0; n < g.batch; ++n) {
                const T* up = upstream.data() + (n * g.cout + co) * g.out_voxels;
                for (std::int64_t i = 0; i < g.out_voxels; ++i) acc += static_cast<double>(up[i]);
            }
            grads.db[co] = static_cast<T>(acc);
        }
    }
    return grads;
}

// Mean pooling with isotropic window/stride over all spatial (and temporal)
// axes. Windows tile with floor semantics; a trailing remainder that does
// not fill a window is dropped.
template <typename T>
Tensor<T> avg_pool_forward(const Tensor<T>& x, int rank, int window, int stride) {
    if (rank != 3 && rank != 4) throw ShapeError("avg_pool: rank must be 3 or 4");
    if (x.rank() != rank + 2) throw ShapeError("avg_pool: input rank does not match");
    if (window < 1 || stride < 1) throw ShapeError("avg_pool: window and stride must be >= 1");

    std::array<std::int64_t, 4> in{1, 1, 1, 1}, out{1, 1, 1, 1};
    for (int d = 0; d < rank; ++d) {
        in[static_cast<std::size_t>(d)] = x.extent(2 + d);
        if (window > in[static_cast<std::size_t>(d)])
            throw ShapeError("avg_pool: window exceeds extent on axis " + std::to_string(d));
        out[static_cast<std::size_t>(d)] = (in[static_cast<std::size_t>(d)] - window) / stride + 1;
    }
    const std::int64_t batch = x.extent(0), channels = x.extent(1);
    Shape out_shape{batch, channels};
    for (int d = 0; d < rank; ++d) out_shape.push_back(out[static_cast<std::size_t>(d)]);
    Tensor<T> y(out_shape);

    const std::int64_t ix_s = in[1] * in[2] * in[3];
    const std::int64_t iy_s = in[2] * in[3];
    const std::int64_t iz_s = in[3];
    const std::int64_t in_voxels = in[0] * ix_s;
    const std::array<std::int64_t, 4> win{window, window, window, rank == 4 ? window : 1};
    const std::array<std::int64_t, 4> str{stride, stride, stride, rank == 4 ? stride : 1};
    const double count = static_cast<double>(win[0] * win[1] * win[2] * win[3]);

    T* o = y.data();
    for (std::int64_t nc = 0; nc < batch * channels; ++nc) {
        const T* xs = x.data() + nc * in_voxels;
        for (std::int64_t ox = 0; ox < out[0]; ++ox)
        for (std::int64_t oy = 0; oy < out[1]; ++oy)
        for (std::int64_t oz = 0; oz < out[2]; ++oz)
        for (std::int64_t ot = 0; ot < out[3]; ++ot) {
            double acc = 0.0;
            for (std::int64_t wx = 0; wx < win[0]; ++wx)
            for (std::int64_t wy = 0; wy < win[1]; ++wy)
            for (std::int64_t wz = 0; wz < win[2]; ++wz)
            for (std::int64_t wt = 0; wt < win[3]; ++wt)
                acc += static_cast<double>(xs[(ox * str[0] + wx) * ix_s + (oy * str[1] + wy) * iy_s +
                                              (oz * str[2] + wz) * iz_s + (ot * str[3] + wt)]);
            *o++ = static_cast<T>(acc / count);
        }
    }
    return y;
}

template <typename T>
Tensor<T> avg_pool_backward(const Tensor<T>& upstream, const Shape& x_shape, int rank, int window,
                            int stride) {
    Tensor<T> dx = Tensor<T>::zeros(x_shape);
    std::array<std::int64_t, 4> in{1, 1, 1, 1}, out{1, 1, 1, 1};
    for (int d = 0; d < rank; ++d) {
        in[static_cast<std::size_t>(d)] = x_shape[static_cast<std::size_t>(2 + d)];
        out[static_cast<std::size_t>(d)] = (in[static_cast<std::size_t>(d)] - window) / stride + 1;
    }
    const std::int64_t ix_s = in[1] * in[2] * in[3];
    const std::int64_t iy_s = in[2] * in[3];
    const std::int64_t iz_s = in[3];
    const std::int64_t in_voxels = in[0] * ix_s;
    const std::array<std::int64_t, 4> win{window, window, window, rank == 4 ? window : 1};
    const std::array<std::int64_t, 4> str{stride, stride, stride, rank == 4 ? stride : 1};
    const T inv_count = static_cast<T>(1.0 / static_cast<double>(win[0] * win[1] * win[2] * win[3]));

    const std::int64_t batch_channels = x_shape[0] * x_shape[1];
    const T* up = upstream.data();
    for (std::int64_t nc = 0; nc < batch_channels; ++nc) {
        T* dxs = dx.data() + nc * in_voxels;
        for (std::int64_t ox = 0; ox < out[0]; ++ox)
        for (std::int64_t oy = 0; oy < out[1]; ++oy)
        for (std::int64_t oz = 0; oz < out[2]; ++oz)
        for (std::int64_t ot = 0; ot < out[3]; ++ot) {
            const T g = *up++ * inv_count;
            for (std::int64_t wx = 0; wx < win[0]; ++wx)
            for (std::int64_t wy = 0; wy < win[1]; ++wy)
            for (std::int64_t wz = 0; wz < win[2]; ++wz)
            for (std::int64_t wt = 0; wt < win[3]; ++wt)
                dxs[(ox * str[0] + wx) * ix_s + (oy * str[1] + wy) * iy_s +
                    (oz * str[2] + wz) * iz_s + (ot * str[3] + wt)] += g;
        }
    }
    return dx;
}

// Mean over every non-batch, non-channel axis: [N,C,spatial...] -> [N,C].
template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& x) {
    if (x.rank() < 3) throw ShapeError("global_avg_pool: input must have spatial axes");
    const std::int64_t batch = x.extent(0), channels = x.extent(1);
    const std::int64_t voxels = x.numel() / (batch * channels);
    Tensor<T> y({batch, channels});
    const T* in = x.data();
    for (std::int64_t nc = 0; nc < batch * channels; ++nc) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < voxels; ++i) acc += static_cast<double>(in[nc * voxels + i]);
        y[nc] = static_cast<T>(acc / static_cast<double>(voxels));
    }
    return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& upstream, const Shape& x_shape) {
    Tensor<T> dx(x_shape);
    const std::int64_t batch = x_shape[0], channels = x_shape[1];
    std::int64_t voxels = 1;
    for (std::size_t d = 2; d < x_shape.size(); ++d) voxels *= x_shape[d];
    const T inv = static_cast<T>(1.0 / static_cast<double>(voxels));
    for (std::int64_t nc = 0; nc < batch * channels; ++nc) {
        const T g = upstream[nc] * inv;
        T* out = dx.data() + nc * voxels;
        for (std::int64_t i = 0; i < voxels; ++i) out[i] = g;
    }
    return dx;
}

template <typename T>
struct BatchNormRunning {
    Tensor<T> mean;
    Tensor<T> var;
};

template <typename T>
struct BatchNormCache {
    Tensor<T> xhat;        // normalized input (train mode)
    std::vector<double> inv_std;  // per channel
    bool training = true;
};

// Normalizes over all non-channel axes. Train mode uses batch statistics
// (population variance) and updates the running estimates with momentum;
// eval mode applies the running estimates.
template <typename T>
Tensor<T> batch_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             BatchNormRunning<T>* running, bool training, double eps,
                             double momentum, BatchNormCache<T>* cache = nullptr) {
    if (x.rank() < 2) throw ShapeError("batch_norm: input needs a channel axis");
    const std::int64_t channels = x.extent(1);
    if (gamma.numel() != channels || beta.numel() != channels)
        throw ShapeError("batch_norm: gamma/beta must have one entry per channel (" +
                         std::to_string(channels) + ")");
    const std::int64_t batch = x.extent(0);
    const std::int64_t voxels = x.numel() / (batch * channels);
    const std::int64_t m = batch * voxels;  // samples per channel

    std::vector<double> mean(static_cast<std::size_t>(channels), 0.0);
    std::vector<double> var(static_cast<std::size_t>(channels), 0.0);
    if (training) {
        for (std::int64_t c = 0; c < channels; ++c) {
            double acc = 0.0;
            for (std::int64_t n = 0; n < batch; ++n) {
                const T* base = x.data() + (n * channels + c) * voxels;
                for (std::int64_t i = 0; i < voxels; ++i) acc += static_cast<double>(base[i]);
            }
            const double mu = acc / static_cast<double>(m);
            double sq = 0.0;
            for (std::int64_t n = 0; n < batch; ++n) {
                const T* base = x.data() + (n * channels + c) * voxels;
                for (std::int64_t i = 0; i < voxels; ++i) {
                    const double d = static_cast<double>(base[i]) - mu;
                    sq += d * d;
                }
            }
            mean[static_cast<std::size_t>(c)] = mu;
            var[static_cast<std::size_t>(c)] = sq / static_cast<double>(m);
        }
        if (running != nullptr) {
            for (std::int64_t c = 0; c < channels; ++c) {
                running->mean[c] = static_cast<T>((1.0 - momentum) * static_cast<double>(running->mean[c]) +
                                                  momentum * mean[static_cast<std::size_t>(c)]);
                running->var[c] = static_cast<T>((1.0 - momentum) * static_cast<double>(running->var[c]) +
                                                 momentum * var[static_cast<std::size_t>(c)]);
            }
        }
    } else {
        if (running == nullptr) throw ShapeError("batch_norm: eval mode requires running stats");
        for (std::int64_t c = 0; c < channels; ++c) {
            mean[static_cast<std::size_t>(c)] = static_cast<double>(running->mean[c]);
            var[static_cast<std::size_t>(c)] = static_cast<double>(running->var[c]);
        }
    }

    Tensor<T> y(x.shape());
    if (cache != nullptr) {
        cache->training = training;
        cache->xhat = Tensor<T>(x.shape());
        cache->inv_std.assign(static_cast<std::size_t>(channels), 0.0);
    }
    for (std::int64_t c = 0; c < channels; ++c) {
        const double inv_std = 1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + eps);
        if (cache != nullptr) cache->inv_std[static_cast<std::size_t>(c)] = inv_std;
        const double mu = mean[static_cast<std::size_t>(c)];
        const double gc = static_cast<double>(gamma[c]);
        const double bc = static_cast<double>(beta[c]);
        for (std::int64_t n = 0; n < batch; ++n) {
            const T* in = x.data() + (n * channels + c) * voxels;
            T* out = y.data() + (n * channels + c) * voxels;
            T* xh = cache ? cache->xhat.data() + (n * channels + c) * voxels : nullptr;
            for (std::int64_t i = 0; i < voxels; ++i) {
                const double norm = (static_cast<double>(in[i]) - mu) * inv_std;
                if (xh) xh[i] = static_cast<T>(norm);
                out[i] = static_cast<T>(gc * norm + bc);
            }
        }
    }
    return y;
}

template <typename T>
struct BatchNormGrads {
    Tensor<T> dx, dgamma, dbeta;
};

template <typename T>
BatchNormGrads<T> batch_norm_backward(const Tensor<T>& upstream, const Tensor<T>& gamma,
                                      const BatchNormCache<T>& cache) {
    const Shape& shape = upstream.shape();
    const std::int64_t batch = shape[0], channels = shape[1];
    const std::int64_t voxels = upstream.numel() / (batch * channels);
    const std::int64_t m = batch * voxels;

    BatchNormGrads<T> g;
    g.dx = Tensor<T>(shape);
    g.dgamma = Tensor<T>::zeros({channels});
    g.dbeta = Tensor<T>::zeros({channels});

    for (std::int64_t c = 0; c < channels; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::int64_t n = 0; n < batch; ++n) {
            const T* dy = upstream.data() + (n * channels + c) * voxels;
            const T* xh = cache.xhat.data() + (n * channels + c) * voxels;
            for (std::int64_t i = 0; i < voxels; ++i) {
                sum_dy += static_cast<double>(dy[i]);
                sum_dy_xhat += static_cast<double>(dy[i]) * static_cast<double>(xh[i]);
            }
        }
        g.dgamma[c] = static_cast<T>(sum_dy_xhat);
        g.dbeta[c] = static_cast<T>(sum_dy);

        const double gc = static_cast<double>(gamma[c]);
        const double inv_std = cache.inv_std[static_cast<std::size_t>(c)];
        for (std::int64_t n = 0; n < batch; ++n) {
            const T* dy = upstream.data() + (n * channels + c) * voxels;
            const T* xh = cache.xhat.data() + (n * channels + c) * voxels;
            T* dx = g.dx.data() + (n * channels + c) * voxels;
            for (std::int64_t i = 0; i < voxels; ++i) {
                if (cache.training) {
                    // Fused train-mode rule: statistics depend on x.
                    const double term = static_cast<double>(m) * static_cast<double>(dy[i]) - sum_dy -
                                        static_cast<double>(xh[i]) * sum_dy_xhat;
                    dx[i] = static_cast<T>(gc * inv_std * term / static_cast<double>(m));
                } else {
                    dx[i] = static_cast<T>(gc * inv_std * static_cast<double>(dy[i]));
                }
            }
        }
    }
    return g;
}

// x[N,F] * w[F,out] + b[out].
template <typename T>
Tensor<T> fully_connected_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
        throw ShapeError("fully_connected: expects x[N,F], w[F,out], b[out]");
    if (x.extent(1) != w.extent(0) || w.extent(1) != b.extent(0))
        throw ShapeError("fully_connected: feature extents mismatch, x " + shape_str(x.shape()) +
                         ", w " + shape_str(w.shape()));
    Tensor<T> y = matmul(x, w);
    for (std::int64_t n = 0; n < y.extent(0); ++n)
        for (std::int64_t j = 0; j < y.extent(1); ++j) y(n, j) += b[j];
    return y;
}

// Row-wise softmax with max-subtraction; shared by the loss and by
// evaluation-time probability averaging.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax: expects rank-2 logits");
    Tensor<T> p(logits.shape());
    const std::int64_t n = logits.extent(0), k = logits.extent(1);
    for (std::int64_t i = 0; i < n; ++i) {
        const T* row = logits.data() + i * k;
        T* out = p.data() + i * k;
        double mx = static_cast<double>(row[0]);
        for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double denom = 0.0;
        for (std::int64_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
        for (std::int64_t j = 0; j < k; ++j)
            out[j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - mx) / denom);
    }
    return p;
}

template <typename T>
struct SoftmaxCrossEntropy {
    double loss = 0.0;
    Tensor<T> probs;
    Tensor<T> dlogits;  // gradient of the mean loss w.r.t. logits
};

// Mean over the batch of -ln softmax(logits)[label]; gradient is
// (softmax - onehot) / N.
template <typename T>
SoftmaxCrossEntropy<T> softmax_cross_entropy(const Tensor<T>& logits,
                                             const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: expects rank-2 logits");
    const std::int64_t n = logits.extent(0), k = logits.extent(1);
    if (static_cast<std::int64_t>(labels.size()) != n)
        throw ShapeError("softmax_cross_entropy: one label per row required");

    SoftmaxCrossEntropy<T> result;
    result.probs = softmax_rows(logits);
    result.dlogits = Tensor<T>(logits.shape());
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const int label = labels[static_cast<std::size_t>(i)];
        if (label < 0 || label >= k)
            throw ShapeError("softmax_cross_entropy: label " + std::to_string(label) +
                             " out of range [0," + std::to_string(k) + ")");
        const T* row = logits.data() + i * k;
        double mx = static_cast<double>(row[0]);
        for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double denom = 0.0;
        for (std::int64_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
        total += std::log(denom) - (static_cast<double>(row[label]) - mx);
        for (std::int64_t j = 0; j < k; ++j) {
            const double p = static_cast<double>(result.probs(i, j));
            result.dlogits(i, j) =
                static_cast<T>((p - (j == label ? 1.0 : 0.0)) / static_cast<double>(n));
        }
    }
    result.loss = total / static_cast<double>(n);
    return result;
}

// ---------------------------------------------------------------------------
// Tape integration
// ---------------------------------------------------------------------------

template <typename T>
typename Tape<T>::NodeId conv(Tape<T>& tape, typename Tape<T>::NodeId x,
                              typename Tape<T>::NodeId w, typename Tape<T>::NodeId b,
                              ConvSpec spec, ConvPath path = ConvPath::Im2col) {
    const Tensor<T>* bias = (b >= 0) ? &tape.value(b) : nullptr;
    Tensor<T> out = conv_forward(tape.value(x), tape.value(w), bias, spec, path);
    std::vector<typename Tape<T>::NodeId> inputs{x, w};
    if (b >= 0) inputs.push_back(b);
    return tape.emplace("conv", inputs, std::move(out), [x, w, b, spec](Tape<T>& t, int id) {
        const bool want_dx = t.requires_grad(x);
        const bool want_dw = t.requires_grad(w);
        ConvGrads<T> grads =
            conv_backward(t.grad(id), t.value(x), t.value(w), spec, want_dx, want_dw);
        if (want_dx) t.accumulate(x, grads.dx);
        if (want_dw) t.accumulate(w, grads.dw);
        if (b >= 0 && t.requires_grad(b)) t.accumulate(b, grads.db);
    });
}

template <typename T>
typename Tape<T>::NodeId avg_pool(Tape<T>& tape, typename Tape<T>::NodeId x, int rank, int window,
                                  int stride) {
    Tensor<T> out = avg_pool_forward(tape.value(x), rank, window, stride);
    return tape.emplace("avg_pool", {x}, std::move(out),
                        [x, rank, window, stride](Tape<T>& t, int id) {
                            if (!t.requires_grad(x)) return;
                            t.accumulate(x, avg_pool_backward(t.grad(id), t.value(x).shape(), rank,
                                                              window, stride));
                        });
}

template <typename T>
typename Tape<T>::NodeId global_avg_pool(Tape<T>& tape, typename Tape<T>::NodeId x) {
    Tensor<T> out = global_avg_pool_forward(tape.value(x));
    return tape.emplace("global_avg_pool", {x}, std::move(out), [x](Tape<T>& t, int id) {
        if (!t.requires_grad(x)) return;
        t.accumulate(x, global_avg_pool_backward(t.grad(id), t.value(x).shape()));
    });
}

template <typename T>
typename Tape<T>::NodeId batch_norm(Tape<T>& tape, typename Tape<T>::NodeId x,
                                    typename Tape<T>::NodeId gamma, typename Tape<T>::NodeId beta,
                                    BatchNormRunning<T>* running, bool training, double eps,
                                    double momentum) {
    auto cache = std::make_shared<BatchNormCache<T>>();
    Tensor<T> out = batch_norm_forward(tape.value(x), tape.value(gamma), tape.value(beta), running,
                                       training, eps, momentum, cache.get());
    return tape.emplace("batch_norm", {x, gamma, beta}, std::move(out),
                        [x, gamma, beta, cache](Tape<T>& t, int id) {
                            BatchNormGrads<T> g =
                                batch_norm_backward(t.grad(id), t.value(gamma), *cache);
                            if (t.requires_grad(x)) t.accumulate(x, g.dx);
                            if (t.requires_grad(gamma)) t.accumulate(gamma, g.dgamma);
                            if (t.requires_grad(beta)) t.accumulate(beta, g.dbeta);
                        });
}

template <typename T>
typename Tape<T>::NodeId fully_connected(Tape<T>& tape, typename Tape<T>::NodeId x,
                                         typename Tape<T>::NodeId w, typename Tape<T>::NodeId b) {
    Tensor<T> out = fully_connected_forward(tape.value(x), tape.value(w), tape.value(b));
    return tape.emplace("fully_connected", {x, w, b}, std::move(out), [x, w, b](Tape<T>& t, int id) {
        const Tensor<T>& g = t.grad(id);
        if (t.requires_grad(x)) t.accumulate(x, detail::mm_nt(g, t.value(w)));
        if (t.requires_grad(w)) t.accumulate(w, detail::mm_tn(t.value(x), g));
        if (t.requires_grad(b)) {
            Tensor<T> db = Tensor<T>::zeros(t.value(b).shape());
            for (std::int64_t n = 0; n < g.extent(0); ++n)
                for (std::int64_t j = 0; j < g.extent(1); ++j) db[j] += g(n, j);
            t.accumulate(b, db);
        }
    });
}

template <typename T>
typename Tape<T>::NodeId softmax_cross_entropy(Tape<T>& tape, typename Tape<T>::NodeId logits,
                                               std::vector<int> labels) {
    auto ce = std::make_shared<SoftmaxCrossEntropy<T>>(
        softmax_cross_entropy(tape.value(logits), labels));
    Tensor<T> loss({1});
    loss[0] = static_cast<T>(ce->loss);
    return tape.emplace("softmax_cross_entropy", {logits}, std::move(loss),
                        [logits, ce](Tape<T>& t, int id) {
                            if (!t.requires_grad(logits)) return;
                            t.accumulate(logits, scale(ce->dlogits, t.grad(id)[0]));
                        });
}

}  // namespace t4d
