#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "t4d/errors.hpp"
#include "t4d/rng.hpp"

namespace t4d {

using Shape = std::vector<std::int64_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

constexpr int kMaxRank = 6;

// Dense N-dimensional array, rank 1..6, contiguous C-order storage that the
// tensor always owns (no views). Canonical axis order across the library is
// N, C, X, Y, Z, T; lower-rank tensors use the subset each operation
// documents. All free functions below are pure: inputs are never mutated.
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>, "Tensor supports float and double");

  public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        validate_shape(shape_);
        compute_strides();
        data_.assign(static_cast<std::size_t>(numel_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape(shape_);
        compute_strides();
        if (static_cast<std::int64_t>(data_.size()) != numel_) {
            throw ShapeError("from_data: buffer holds " + std::to_string(data_.size()) +
                             " elements, shape " + shape_str(shape_) + " needs " +
                             std::to_string(numel_));
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
    static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
    static Tensor from_data(Shape shape, std::vector<T> data) {
        return Tensor(std::move(shape), std::move(data));
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const { return numel_; }
    std::int64_t extent(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
    const Shape& shape() const { return shape_; }
    const Shape& strides() const { return strides_; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& buffer() { return data_; }
    const std::vector<T>& buffer() const { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    template <typename... Idx>
    T& operator()(Idx... idx) {
        return data_[static_cast<std::size_t>(offset(idx...))];
    }
    template <typename... Idx>
    const T& operator()(Idx... idx) const {
        return data_[static_cast<std::size_t>(offset(idx...))];
    }

    template <typename... Idx>
    std::int64_t offset(Idx... idx) const {
        static_assert(sizeof...(Idx) >= 1 && sizeof...(Idx) <= kMaxRank);
        const std::int64_t ix[] = {static_cast<std::int64_t>(idx)...};
        std::int64_t off = 0;
        for (std::size_t d = 0; d < sizeof...(Idx); ++d) off += ix[d] * strides_[d];
        return off;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

    Tensor reshaped(Shape new_shape) const {
        Tensor out(std::move(new_shape));
        if (out.numel() != numel_)
            throw ShapeError("reshape: element count mismatch " + shape_str(shape_) + " -> " +
                             shape_str(out.shape()));
        out.data_ = data_;
        return out;
    }

  private:
    static void validate_shape(const Shape& s) {
        if (s.empty() || s.size() > kMaxRank)
            throw ShapeError("tensor rank must be 1.." + std::to_string(kMaxRank) + ", got shape " +
                             shape_str(s));
        for (auto e : s)
            if (e < 1) throw ShapeError("tensor extents must be >= 1, got shape " + shape_str(s));
    }

    void compute_strides() {
        strides_.assign(shape_.size(), 1);
        numel_ = 1;
        for (int d = static_cast<int>(shape_.size()) - 1; d >= 0; --d) {
            strides_[static_cast<std::size_t>(d)] = numel_;
            numel_ *= shape_[static_cast<std::size_t>(d)];
        }
    }

    Shape shape_;
    Shape strides_;
    std::int64_t numel_ = 0;
    std::vector<T> data_;
};

namespace detail {
template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& a, F f) {
    Tensor<T> out(a.shape());
    const T* in = a.data();
    T* o = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) o[i] = f(in[i]);
    return out;
}

template <typename T, typename F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f) {
    check_same_shape(a, b, op);
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* o = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) o[i] = f(pa[i], pb[i]);
    return out;
}
}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::zip(a, b, "add", [](T x, T y) { return x + y; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::zip(a, b, "sub", [](T x, T y) { return x - y; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::zip(a, b, "mul", [](T x, T y) { return x * y; });
}

// The only broadcast in the library: multiply by a scalar.
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    return detail::map(a, [s](T x) { return x * s; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::map(a, [](T x) { return x > T(0) ? x : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::map(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
    return detail::map(a, [](T x) { return std::tanh(x); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return detail::map(a, [](T x) { return std::exp(x); });
}

template <typename T>
Tensor<T> ln(const Tensor<T>& a) {
    return detail::map(a, [](T x) { return std::log(x); });
}

// C = A(M,K) * B(K,N). Accumulation runs in double for both element types;
// the sum is rounded to T once per output element. This keeps the direct and
// im2col convolution paths numerically close and is documented behavior.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::int64_t m = a.extent(0), k = a.extent(1);
    const std::int64_t k2 = b.extent(0), n = b.extent(1);
    if (k != k2)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));

    Tensor<T> c({m, n});
    std::vector<double> acc(static_cast<std::size_t>(n));
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
    for (std::int64_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const double aik = static_cast<double>(pa[i * k + kk]);
            const T* brow = pb + kk * n;
            for (std::int64_t j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += aik * static_cast<double>(brow[j]);
        }
        for (std::int64_t j = 0; j < n; ++j) pc[i * n + j] = static_cast<T>(acc[static_cast<std::size_t>(j)]);
    }
    return c;
}

enum class Reduce { Sum, Mean, StdPopulation, Max };

// Removes `axis` from the shape; rank-1 input reduces to shape [1].
// StdPopulation divides by the axis length (population form).
template <typename T>
Tensor<T> reduce(Reduce op, const Tensor<T>& a, int axis) {
    if (axis < 0 || axis >= a.rank())
        throw ShapeError("reduce: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(a.shape()));
    const std::int64_t extent = a.extent(axis);
    const std::int64_t stride = a.strides()[static_cast<std::size_t>(axis)];

    Shape out_shape;
    for (int d = 0; d < a.rank(); ++d)
        if (d != axis) out_shape.push_back(a.extent(d));
    if (out_shape.empty()) out_shape.push_back(1);

    Tensor<T> out(out_shape);
    const std::int64_t outer = [&] {
        std::int64_t p = 1;
        for (int d = 0; d < axis; ++d) p *= a.extent(d);
        return p;
    }();
    const std::int64_t inner = stride;

    const T* in = a.data();
    T* o = out.data();
    std::int64_t oi = 0;
    for (std::int64_t u = 0; u < outer; ++u) {
        for (std::int64_t v = 0; v < inner; ++v, ++oi) {
            const T* base = in + u * extent * inner + v;
            double acc = 0.0;
            switch (op) {
                case Reduce::Sum:
                case Reduce::Mean:
                    for (std::int64_t e = 0; e < extent; ++e) acc += static_cast<double>(base[e * stride]);
                    o[oi] = static_cast<T>(op == Reduce::Mean ? acc / static_cast<double>(extent) : acc);
                    break;
                case Reduce::StdPopulation: {
                    for (std::int64_t e = 0; e < extent; ++e) acc += static_cast<double>(base[e * stride]);
                    const double mean = acc / static_cast<double>(extent);
                    double sq = 0.0;
                    for (std::int64_t e = 0; e < extent; ++e) {
                        const double d = static_cast<double>(base[e * stride]) - mean;
                        sq += d * d;
                    }
                    o[oi] = static_cast<T>(std::sqrt(sq / static_cast<double>(extent)));
                    break;
                }
                case Reduce::Max: {
                    T best = base[0];
                    for (std::int64_t e = 1; e < extent; ++e) best = std::max(best, base[e * stride]);
                    o[oi] = best;
                    break;
                }
            }
        }
    }
    return out;
}

// Zero padding, `lo`/`hi` elements per axis.
template <typename T>
Tensor<T> pad(const Tensor<T>& a, const std::vector<std::int64_t>& lo,
              const std::vector<std::int64_t>& hi) {
    const auto r = static_cast<std::size_t>(a.rank());
    if (lo.size() != r || hi.size() != r) throw ShapeError("pad: lo/hi must list one amount per axis");
    Shape out_shape(r);
    for (std::size_t d = 0; d < r; ++d) {
        if (lo[d] < 0 || hi[d] < 0) throw ShapeError("pad: amounts must be >= 0");
        out_shape[d] = a.extent(static_cast<int>(d)) + lo[d] + hi[d];
    }
    Tensor<T> out(out_shape);
    Shape idx(r, 0);
    const T* in = a.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        std::int64_t off = 0;
        for (std::size_t d = 0; d < r; ++d) off += (idx[d] + lo[d]) * out.strides()[d];
        out[off] = in[i];
        for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
            if (++idx[static_cast<std::size_t>(d)] < a.extent(d)) break;
            idx[static_cast<std::size_t>(d)] = 0;
        }
    }
    return out;
}

// Removes `lo`/`hi` elements per axis; the exact inverse of pad on the
// interior region.
template <typename T>
Tensor<T> crop(const Tensor<T>& a, const std::vector<std::int64_t>& lo,
               const std::vector<std::int64_t>& hi) {
    const auto r = static_cast<std::size_t>(a.rank());
    if (lo.size() != r || hi.size() != r) throw ShapeError("crop: lo/hi must list one amount per axis");
    Shape out_shape(r);
    for (std::size_t d = 0; d < r; ++d) {
        if (lo[d] < 0 || hi[d] < 0) throw ShapeError("crop: amounts must be >= 0");
        out_shape[d] = a.extent(static_cast<int>(d)) - lo[d] - hi[d];
        if (out_shape[d] < 1)
            throw ShapeError("crop: axis " + std::to_string(d) + " would shrink below 1 element");
    }
    Tensor<T> out(out_shape);
    Shape idx(r, 0);
    T* o = out.data();
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        std::int64_t off = 0;
        for (std::size_t d = 0; d < r; ++d) off += (idx[d] + lo[d]) * a.strides()[d];
        o[i] = a[off];
        for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
            if (++idx[static_cast<std::size_t>(d)] < out_shape[d]) break;
            idx[static_cast<std::size_t>(d)] = 0;
        }
    }
    return out;
}

// Deterministic given the generator state. Normals are drawn in double and
// rounded once to T, so the f32 and f64 streams agree up to rounding.
template <typename T>
Tensor<T> rand_normal(Rng& rng, Shape shape, double mean = 0.0, double stddev = 1.0) {
    if (stddev < 0.0) throw ShapeError("rand_normal: stddev must be >= 0");
    Tensor<T> out(std::move(shape));
    T* o = out.data();
    for (std::int64_t i = 0; i < out.numel(); ++i)
        o[i] = static_cast<T>(rng.normal(mean, stddev));
    return out;
}

}  // namespace t4d
