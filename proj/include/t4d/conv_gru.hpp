#pragma once

#include <vector>

#include "t4d/nn_ops.hpp"

namespace t4d {

// Gated recurrent cell whose gate transforms are 3D convolutions. All gate
// convolutions preserve spatial extents (stride 1, pad (k-1)/2, odd k), so
// the hidden state keeps shape [N,Ch,X,Y,Z] across steps. Gate convention:
//
//   z   = sigmoid(Wz*x + Uz*h_prev + bz)
//   r   = sigmoid(Wr*x + Ur*h_prev + br)
//   hc  = tanh(Wh*x + Uh*(r . h_prev) + bh)
//   h_t = (1-z) . h_prev + z . hc
//
// i.e. z gates toward the candidate; z -> 0 keeps the previous state. Each
// of the six convolutions carries its own bias (two per gate).
template <typename T>
struct ConvGruCell {
    int in_channels = 1;
    int hidden_channels = 1;
    int kernel = 3;

    Tensor<T> wz, uz, wr, ur, wh, uh;
    Tensor<T> bwz, buz, bwr, bur, bwh, buh;

    static ConvGruCell init(Rng& rng, int in_channels, int hidden_channels, int kernel) {
        if (kernel < 1 || kernel % 2 == 0)
            throw ShapeError("ConvGruCell: gate kernel must be odd so extents are preserved");
        if (in_channels < 1 || hidden_channels < 1)
            throw ShapeError("ConvGruCell: channel counts must be >= 1");
        ConvGruCell cell;
        cell.in_channels = in_channels;
        cell.hidden_channels = hidden_channels;
        cell.kernel = kernel;

        const std::int64_t k3 = static_cast<std::int64_t>(kernel) * kernel * kernel;
        auto he = [&](int cin, int cout) {
            const double stddev = std::sqrt(2.0 / static_cast<double>(cin * k3));
            return rand_normal<T>(rng, {cout, cin, kernel, kernel, kernel}, 0.0, stddev);
        };
        cell.wz = he(in_channels, hidden_channels);
        cell.uz = he(hidden_channels, hidden_channels);
        cell.wr = he(in_channels, hidden_channels);
        cell.ur = he(hidden_channels, hidden_channels);
        cell.wh = he(in_channels, hidden_channels);
        cell.uh = he(hidden_channels, hidden_channels);
        for (Tensor<T>* b : {&cell.bwz, &cell.buz, &cell.bwr, &cell.bur, &cell.bwh, &cell.buh})
            *b = Tensor<T>::zeros({hidden_channels});
        return cell;
    }

    ConvSpec input_spec() const {
        return ConvSpec::isotropic(3, in_channels, hidden_channels, kernel, 1, (kernel - 1) / 2,
                                   true);
    }
    ConvSpec hidden_spec() const {
        return ConvSpec::isotropic(3, hidden_channels, hidden_channels, kernel, 1, (kernel - 1) / 2,
                                   true);
    }
};

// Tape leaf ids for one cell; built once per forward pass.
struct ConvGruLeafIds {
    int wz = -1, uz = -1, wr = -1, ur = -1, wh = -1, uh = -1;
    int bwz = -1, buz = -1, bwr = -1, bur = -1, bwh = -1, buh = -1;
    int in_channels = 0, hidden_channels = 0, kernel = 3;
};

template <typename T>
ConvGruLeafIds leaf_cell(Tape<T>& tape, const ConvGruCell<T>& cell, bool trainable) {
    ConvGruLeafIds ids;
    ids.in_channels = cell.in_channels;
    ids.hidden_channels = cell.hidden_channels;
    ids.kernel = cell.kernel;
    ids.wz = tape.leaf(cell.wz, trainable);
    ids.uz = tape.leaf(cell.uz, trainable);
    ids.wr = tape.leaf(cell.wr, trainable);
    ids.ur = tape.leaf(cell.ur, trainable);
    ids.wh = tape.leaf(cell.wh, trainable);
    ids.uh = tape.leaf(cell.uh, trainable);
    ids.bwz = tape.leaf(cell.bwz, trainable);
    ids.buz = tape.leaf(cell.buz, trainable);
    ids.bwr = tape.leaf(cell.bwr, trainable);
    ids.bur = tape.leaf(cell.bur, trainable);
    ids.bwh = tape.leaf(cell.bwh, trainable);
    ids.buh = tape.leaf(cell.buh, trainable);
    return ids;
}

// One recurrence step on the tape; x_t is [N,Ci,X,Y,Z], h_prev [N,Ch,X,Y,Z].
template <typename T>
int gru_step(Tape<T>& tape, const ConvGruLeafIds& ids, int x_t, int h_prev) {
    const Tensor<T>& xv = tape.value(x_t);
    const Tensor<T>& hv = tape.value(h_prev);
    if (xv.rank() != 5 || hv.rank() != 5)
        throw ShapeError("gru_step: expects rank-5 [N,C,X,Y,Z] tensors");
    for (int d : {0, 2, 3, 4})
        if (xv.extent(d) != hv.extent(d))
            throw ShapeError("gru_step: x and h_prev extents differ on axis " + std::to_string(d));

    const ConvSpec in_spec =
        ConvSpec::isotropic(3, ids.in_channels, ids.hidden_channels, ids.kernel, 1,
                            (ids.kernel - 1) / 2, true);
    const ConvSpec hid_spec =
        ConvSpec::isotropic(3, ids.hidden_channels, ids.hidden_channels, ids.kernel, 1,
                            (ids.kernel - 1) / 2, true);

    const int z = tape.sigmoid(
        tape.add(conv(tape, x_t, ids.wz, ids.bwz, in_spec), conv(tape, h_prev, ids.uz, ids.buz, hid_spec)));
    const int r = tape.sigmoid(
        tape.add(conv(tape, x_t, ids.wr, ids.bwr, in_spec), conv(tape, h_prev, ids.ur, ids.bur, hid_spec)));
    const int gated = tape.mul(r, h_prev);
    const int hc = tape.tanh(
        tape.add(conv(tape, x_t, ids.wh, ids.bwh, in_spec), conv(tape, gated, ids.uh, ids.buh, hid_spec)));
    // h_t = (1-z).h_prev + z.hc
    return tape.add(tape.mul(tape.affine(z, T(-1), T(1)), h_prev), tape.mul(z, hc));
}

// Folds gru_step over t = 0..T-1 in ascending order and returns the final
// hidden state only. h0 is zeros (not learned). The input volume sequence is
// sliced outside the tape; per-step inputs enter as constant leaves.
template <typename T>
int gru_sequence(Tape<T>& tape, const ConvGruLeafIds& ids, const Tensor<T>& x) {
    if (x.rank() != 6) throw ShapeError("gru_sequence: expects [N,Ci,X,Y,Z,T]");
    if (x.extent(1) != ids.in_channels)
        throw ShapeError("gru_sequence: input has " + std::to_string(x.extent(1)) +
                         " channels, cell expects " + std::to_string(ids.in_channels));
    const std::int64_t steps = x.extent(5);

    int h = tape.leaf(
        Tensor<T>::zeros({x.extent(0), ids.hidden_channels, x.extent(2), x.extent(3), x.extent(4)}),
        false);
    for (std::int64_t t = 0; t < steps; ++t) {
        Tensor<T> x_t = crop(x, {0, 0, 0, 0, 0, t}, {0, 0, 0, 0, 0, steps - 1 - t})
                            .reshaped({x.extent(0), x.extent(1), x.extent(2), x.extent(3), x.extent(4)});
        const int x_id = tape.leaf(std::move(x_t), false);
        h = gru_step(tape, ids, x_id, h);
    }
    return h;
}

// Forward-only conveniences used by tests and tools.
template <typename T>
Tensor<T> gru_step(const ConvGruCell<T>& cell, const Tensor<T>& x_t, const Tensor<T>& h_prev) {
    Tape<T> tape;
    const ConvGruLeafIds ids = leaf_cell(tape, cell, false);
    const int x_id = tape.leaf(x_t, false);
    const int h_id = tape.leaf(h_prev, false);
    return tape.value(gru_step(tape, ids, x_id, h_id));
}

template <typename T>
Tensor<T> gru_sequence(const ConvGruCell<T>& cell, const Tensor<T>& x) {
    Tape<T> tape;
    const ConvGruLeafIds ids = leaf_cell(tape, cell, false);
    return tape.value(gru_sequence(tape, ids, x));
}

}  // namespace t4d
