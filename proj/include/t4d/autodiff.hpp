#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "t4d/tensor.hpp"

namespace t4d {

namespace detail {

// C = A * B^T with double accumulation, shapes (M,K)x(N,K) -> (M,N).
template <typename T>
Tensor<T> mm_nt(const Tensor<T>& a, const Tensor<T>& b) {
    const std::int64_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
    if (b.extent(1) != k) throw ShapeError("mm_nt: inner extents differ");
    Tensor<T> c({m, n});
    for (std::int64_t i = 0; i < m; ++i) {
        const T* arow = a.data() + i * k;
        for (std::int64_t j = 0; j < n; ++j) {
            const T* brow = b.data() + j * k;
            double acc = 0.0;
            for (std::int64_t kk = 0; kk < k; ++kk)
                acc += static_cast<double>(arow[kk]) * static_cast<double>(brow[kk]);
            c(i, j) = static_cast<T>(acc);
        }
    }
    return c;
}

// C = A^T * B with double accumulation, shapes (K,M)x(K,N) -> (M,N).
template <typename T>
Tensor<T> mm_tn(const Tensor<T>& a, const Tensor<T>& b) {
    const std::int64_t k = a.extent(0), m = a.extent(1), n = b.extent(1);
    if (b.extent(0) != k) throw ShapeError("mm_tn: inner extents differ");
    Tensor<T> c({m, n});
    std::vector<double> acc(static_cast<std::size_t>(m * n), 0.0);
    for (std::int64_t kk = 0; kk < k; ++kk) {
        const T* arow = a.data() + kk * m;
        const T* brow = b.data() + kk * n;
        for (std::int64_t i = 0; i < m; ++i) {
            const double av = static_cast<double>(arow[i]);
            double* crow = acc.data() + i * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * static_cast<double>(brow[j]);
        }
    }
    for (std::int64_t i = 0; i < m * n; ++i) c[i] = static_cast<T>(acc[static_cast<std::size_t>(i)]);
    return c;
}

}  // namespace detail

// Reverse-mode tape. A tape records one forward pass as a topologically
// ordered node list and is rebuilt for every optimization step; parameters
// live outside the tape and enter as leaves. Gradients accumulate by
// addition into zero-initialized buffers, so a value used along several
// paths (shared weights, dense-block concats) receives the sum of all path
// contributions. zero_grad() resets between repeated backward calls.
template <typename T>
class Tape {
  public:
    using NodeId = int;

    struct Node {
        std::string op;
        std::vector<NodeId> inputs;
        Tensor<T> value;
        Tensor<T> grad;  // empty until first accumulation
        bool requires_grad = false;
        std::function<void(Tape&, NodeId)> backprop;
    };

    NodeId leaf(Tensor<T> value, bool requires_grad) {
        Node n;
        n.op = "leaf";
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    // Registration point for operation headers (convolution, pooling, ...):
    // `backprop` reads grad(id) and accumulates into the inputs' buffers.
    NodeId emplace(std::string op, std::vector<NodeId> inputs, Tensor<T> value,
                   std::function<void(Tape&, NodeId)> backprop) {
        Node n;
        n.op = std::move(op);
        n.inputs = std::move(inputs);
        n.value = std::move(value);
        n.backprop = std::move(backprop);
        for (NodeId in : n.inputs) n.requires_grad = n.requires_grad || node(in).requires_grad;
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    std::size_t size() const { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
    const Tensor<T>& value(NodeId id) const { return node(id).value; }
    bool requires_grad(NodeId id) const { return node(id).requires_grad; }

    // Gradient buffer, allocated as zeros on first touch. Valid to read after
    // backward(); a parameter unreachable from the loss keeps all-zero grads.
    Tensor<T>& grad(NodeId id) {
        Node& n = nodes_.at(static_cast<std::size_t>(id));
        if (n.grad.numel() == 0) n.grad = Tensor<T>::zeros(n.value.shape());
        return n.grad;
    }

    void accumulate(NodeId id, const Tensor<T>& contribution) {
        Tensor<T>& g = grad(id);
        detail::check_same_shape(g, contribution, "grad accumulate");
        T* dst = g.data();
        const T* src = contribution.data();
        for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
    }

    void zero_grad() {
        for (Node& n : nodes_)
            if (n.grad.numel() != 0) std::fill(n.grad.buffer().begin(), n.grad.buffer().end(), T(0));
    }

    // Seeds d(loss)/d(loss) = 1 and walks the tape in reverse creation order,
    // which is a valid topological order by construction.
    void backward(NodeId loss) {
        if (loss < 0 || static_cast<std::size_t>(loss) >= nodes_.size())
            throw ShapeError("backward: invalid loss node id");
        if (value(loss).numel() != 1)
            throw ShapeError("backward: loss must be scalar (shape [1]), got " +
                             shape_str(value(loss).shape()));
        grad(loss)[0] += T(1);
        for (NodeId id = loss; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.requires_grad || !n.backprop || n.grad.numel() == 0) continue;
            n.backprop(*this, id);
        }
    }

    // --- elementwise / structural ops -------------------------------------

    NodeId add(NodeId a, NodeId b) {
        return emplace("add", {a, b}, t4d::add(value(a), value(b)), [a, b](Tape& t, NodeId id) {
            const Tensor<T>& g = t.grad(id);
            if (t.requires_grad(a)) t.accumulate(a, g);
            if (t.requires_grad(b)) t.accumulate(b, g);
        });
    }

    NodeId sub(NodeId a, NodeId b) {
        return emplace("sub", {a, b}, t4d::sub(value(a), value(b)), [a, b](Tape& t, NodeId id) {
            const Tensor<T>& g = t.grad(id);
            if (t.requires_grad(a)) t.accumulate(a, g);
            if (t.requires_grad(b)) t.accumulate(b, scale(g, T(-1)));
        });
    }

    NodeId mul(NodeId a, NodeId b) {
        return emplace("mul", {a, b}, t4d::mul(value(a), value(b)), [a, b](Tape& t, NodeId id) {
            const Tensor<T>& g = t.grad(id);
            if (t.requires_grad(a)) t.accumulate(a, t4d::mul(g, t.value(b)));
            if (t.requires_grad(b)) t.accumulate(b, t4d::mul(g, t.value(a)));
        });
    }

    // Elementwise s*x + o.
    NodeId affine(NodeId a, T s, T o) {
        Tensor<T> v = detail::map(value(a), [s, o](T x) { return s * x + o; });
        return emplace("affine", {a}, std::move(v), [a, s](Tape& t, NodeId id) {
            if (t.requires_grad(a)) t.accumulate(a, scale(t.grad(id), s));
        });
    }

    NodeId relu(NodeId a) {
        return unary("relu", a, t4d::relu(value(a)),
                     [](T x, T) { return x > T(0) ? T(1) : T(0); });
    }

    NodeId sigmoid(NodeId a) {
        return unary("sigmoid", a, t4d::sigmoid(value(a)),
                     [](T, T y) { return y * (T(1) - y); });
    }

    NodeId tanh(NodeId a) {
        return unary("tanh", a, t4d::tanh(value(a)), [](T, T y) { return T(1) - y * y; });
    }

    NodeId exp(NodeId a) {
        return unary("exp", a, t4d::exp(value(a)), [](T, T y) { return y; });
    }

    NodeId ln(NodeId a) {
        return unary("ln", a, t4d::ln(value(a)), [](T x, T) { return T(1) / x; });
    }

    NodeId sum(NodeId a) {
        double acc = 0.0;
        const Tensor<T>& v = value(a);
        for (std::int64_t i = 0; i < v.numel(); ++i) acc += static_cast<double>(v[i]);
        Tensor<T> out({1});
        out[0] = static_cast<T>(acc);
        return emplace("sum", {a}, std::move(out), [a](Tape& t, NodeId id) {
            if (!t.requires_grad(a)) return;
            const T g = t.grad(id)[0];
            Tensor<T>& ga = t.grad(a);
            for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
        });
    }

    NodeId matmul(NodeId a, NodeId b) {
        return emplace("matmul", {a, b}, t4d::matmul(value(a), value(b)),
                       [a, b](Tape& t, NodeId id) {
                           const Tensor<T>& g = t.grad(id);
                           if (t.requires_grad(a)) t.accumulate(a, detail::mm_nt(g, t.value(b)));
                           if (t.requires_grad(b)) t.accumulate(b, detail::mm_tn(t.value(a), g));
                       });
    }

    // Concatenation along the channel axis (axis 1); inputs must agree on
    // every other extent. Backward slices the gradient back apart.
    NodeId concat_channels(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw ShapeError("concat_channels: no inputs");
        const Tensor<T>& first = value(parts[0]);
        if (first.rank() < 2) throw ShapeError("concat_channels: inputs need a channel axis");
        Shape out_shape = first.shape();
        std::int64_t channels = 0;
        for (NodeId p : parts) {
            const Tensor<T>& v = value(p);
            if (v.rank() != first.rank())
                throw ShapeError("concat_channels: rank mismatch");
            for (int d = 0; d < v.rank(); ++d)
                if (d != 1 && v.extent(d) != first.extent(d))
                    throw ShapeError("concat_channels: extent mismatch on axis " + std::to_string(d));
            channels += v.extent(1);
        }
        out_shape[1] = channels;

        Tensor<T> out(out_shape);
        const std::int64_t batch = first.extent(0);
        const std::int64_t inner = first.strides()[1];  // elements per channel slab
        std::int64_t chan_off = 0;
        for (NodeId p : parts) {
            const Tensor<T>& v = value(p);
            const std::int64_t c = v.extent(1);
            for (std::int64_t n = 0; n < batch; ++n) {
                const T* src = v.data() + n * c * inner;
                T* dst = out.data() + (n * channels + chan_off) * inner;
                std::copy(src, src + c * inner, dst);
            }
            chan_off += c;
        }

        std::vector<NodeId> ins = parts;
        return emplace("concat", ins, std::move(out), [ins, channels, inner, batch](Tape& t, NodeId id) {
            const Tensor<T>& g = t.grad(id);
            std::int64_t off = 0;
            for (NodeId p : ins) {
                const std::int64_t c = t.value(p).extent(1);
                if (t.requires_grad(p)) {
                    Tensor<T>& gp = t.grad(p);
                    for (std::int64_t n = 0; n < batch; ++n) {
                        const T* src = g.data() + (n * channels + off) * inner;
                        T* dst = gp.data() + n * c * inner;
                        for (std::int64_t i = 0; i < c * inner; ++i) dst[i] += src[i];
                    }
                }
                off += c;
            }
        });
    }

  private:
    template <typename DF>
    NodeId unary(const char* op, NodeId a, Tensor<T> val, DF df) {
        return emplace(op, {a}, std::move(val), [a, df](Tape& t, NodeId id) {
            if (!t.requires_grad(a)) return;
            const Tensor<T>& g = t.grad(id);
            const Tensor<T>& x = t.value(a);
            const Tensor<T>& y = t.value(id);
            Tensor<T>& ga = t.grad(a);
            for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * df(x[i], y[i]);
        });
    }

    std::vector<Node> nodes_;
};

}  // namespace t4d
