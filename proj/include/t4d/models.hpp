#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "t4d/conv_gru.hpp"
#include "t4d/nn_ops.hpp"

namespace t4d {

enum class Variant { Cnn3dTc, Cnn3dMs, ConvGruCnn3d, Cnn4d };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Cnn3dTc: return "cnn3d-tc";
        case Variant::Cnn3dMs: return "cnn3d-ms";
        case Variant::ConvGruCnn3d: return "convgru-cnn3d";
        case Variant::Cnn4d: return "cnn4d";
    }
    return "?";
}

inline Variant parse_variant(const std::string& name) {
    if (name == "cnn3d-tc") return Variant::Cnn3dTc;
    if (name == "cnn3d-ms") return Variant::Cnn3dMs;
    if (name == "convgru-cnn3d") return Variant::ConvGruCnn3d;
    if (name == "cnn4d") return Variant::Cnn4d;
    throw ConfigError("unknown variant '" + name +
                      "' (valid: cnn3d-tc, cnn3d-ms, convgru-cnn3d, cnn4d)");
}

// Declarative architecture description. All four variants share the dense
// core: one initial convolution, `blocks` dense blocks of `layers_per_block`
// composite layers (batch_norm -> relu -> conv, growth channels each), a
// compressing transition (1-kernel conv + window-2/stride-2 mean pool) after
// every block but the last, then global average pooling into a two-way
// fully connected head.
struct ModelSpec {
    Variant variant = Variant::Cnn3dMs;
    int initial_filters = 16;
    int growth = 8;
    int layers_per_block = 5;
    int blocks = 3;
    double compression = 0.5;
    bool batch_norm = true;
    int gru_hidden = 16;   // convgru-cnn3d only
    int kernel = 3;        // odd; used by the initial and dense convolutions
    int initial_stride = 1;
    int input_extent = 32;  // cubic spatial extent of the crop
    int crop_length = 15;   // temporal extent of the crop
    std::uint64_t seed = 1234;

    void validate() const {
        if (blocks < 1) throw ConfigError("ModelSpec: blocks must be >= 1");
        if (layers_per_block < 1) throw ConfigError("ModelSpec: layers_per_block must be >= 1");
        if (compression <= 0.0 || compression > 1.0)
            throw ConfigError("ModelSpec: compression must be in (0, 1]");
        if (initial_filters < 1 || growth < 1) throw ConfigError("ModelSpec: channel counts must be >= 1");
        if (kernel < 1 || kernel % 2 == 0)
            throw ConfigError("ModelSpec: kernel must be odd so dense concatenation extents match");
        if (initial_stride < 1) throw ConfigError("ModelSpec: initial_stride must be >= 1");
        if (gru_hidden < 1) throw ConfigError("ModelSpec: gru_hidden must be >= 1");
        if (input_extent < 1 || crop_length < 1)
            throw ConfigError("ModelSpec: input extents must be >= 1");
    }

    std::string to_text() const {
        std::ostringstream os;
        os << "variant=" << variant_name(variant) << "\n"
           << "initial_filters=" << initial_filters << "\n"
           << "growth=" << growth << "\n"
           << "layers_per_block=" << layers_per_block << "\n"
           << "blocks=" << blocks << "\n"
           << "compression=" << compression << "\n"
           << "batch_norm=" << (batch_norm ? 1 : 0) << "\n"
           << "gru_hidden=" << gru_hidden << "\n"
           << "kernel=" << kernel << "\n"
           << "initial_stride=" << initial_stride << "\n"
           << "input_extent=" << input_extent << "\n"
           << "crop_length=" << crop_length << "\n"
           << "seed=" << seed << "\n";
        return os.str();
    }

    static ModelSpec from_text(const std::string& text) {
        ModelSpec spec;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError("ModelSpec: bad line '" + line + "'");
            const std::string key = line.substr(0, eq);
            const std::string val = line.substr(eq + 1);
            if (key == "variant") spec.variant = parse_variant(val);
            else if (key == "initial_filters") spec.initial_filters = std::stoi(val);
            else if (key == "growth") spec.growth = std::stoi(val);
            else if (key == "layers_per_block") spec.layers_per_block = std::stoi(val);
            else if (key == "blocks") spec.blocks = std::stoi(val);
            else if (key == "compression") spec.compression = std::stod(val);
            else if (key == "batch_norm") spec.batch_norm = val != "0";
            else if (key == "gru_hidden") spec.gru_hidden = std::stoi(val);
            else if (key == "kernel") spec.kernel = std::stoi(val);
            else if (key == "initial_stride") spec.initial_stride = std::stoi(val);
            else if (key == "input_extent") spec.input_extent = std::stoi(val);
            else if (key == "crop_length") spec.crop_length = std::stoi(val);
            else if (key == "seed") spec.seed = std::stoull(val);
            else throw ConfigError("ModelSpec: unknown key '" + key + "'");
        }
        spec.validate();
        return spec;
    }

    std::uint64_t digest() const {
        // FNV-1a over the canonical text.
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const char c : to_text()) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return h;
    }
};

// Temporal preprocessing transforms (pure tensor ops on the input path).

// [N,1,X,Y,Z,T] -> [N,T,X,Y,Z]; channel i of the output is time step i.
template <typename T>
Tensor<T> stack_time_as_channels(const Tensor<T>& x) {
    if (x.rank() != 6) throw ShapeError("stack_time_as_channels: expects [N,1,X,Y,Z,T]");
    if (x.extent(1) != 1)
        throw ShapeError("stack_time_as_channels: channel extent must be 1, got " +
                         std::to_string(x.extent(1)));
    const std::int64_t n = x.extent(0), ex = x.extent(2), ey = x.extent(3), ez = x.extent(4),
                       tt = x.extent(5);
    Tensor<T> out({n, tt, ex, ey, ez});
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t t = 0; t < tt; ++t)
            for (std::int64_t ix = 0; ix < ex; ++ix)
                for (std::int64_t iy = 0; iy < ey; ++iy)
                    for (std::int64_t iz = 0; iz < ez; ++iz)
                        out(b, t, ix, iy, iz) = x(b, 0, ix, iy, iz, t);
    return out;
}

// [N,1,X,Y,Z,T] -> [N,2,X,Y,Z]: channel 0 temporal mean, channel 1 temporal
// population standard deviation.
template <typename T>
Tensor<T> mean_std_volumes(const Tensor<T>& x) {
    if (x.rank() != 6) throw ShapeError("mean_std_volumes: expects [N,1,X,Y,Z,T]");
    if (x.extent(1) != 1) throw ShapeError("mean_std_volumes: channel extent must be 1");
    const std::int64_t n = x.extent(0), ex = x.extent(2), ey = x.extent(3), ez = x.extent(4),
                       tt = x.extent(5);
    Tensor<T> out({n, 2, ex, ey, ez});
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ix = 0; ix < ex; ++ix)
            for (std::int64_t iy = 0; iy < ey; ++iy)
                for (std::int64_t iz = 0; iz < ez; ++iz) {
                    const T* series = &x(b, 0, ix, iy, iz, 0);
                    double acc = 0.0;
                    for (std::int64_t t = 0; t < tt; ++t) acc += static_cast<double>(series[t]);
                    const double mean = acc / static_cast<double>(tt);
                    double sq = 0.0;
                    for (std::int64_t t = 0; t < tt; ++t) {
                        const double d = static_cast<double>(series[t]) - mean;
                        sq += d * d;
                    }
                    out(b, 0, ix, iy, iz) = static_cast<T>(mean);
                    out(b, 1, ix, iy, iz) = static_cast<T>(std::sqrt(sq / static_cast<double>(tt)));
                }
    return out;
}

enum class LayerKind {
    TimeAsChannels,
    MeanStdVolumes,
    ConvGru,
    Conv,
    BatchNorm,
    Relu,
    AvgPool,
    GlobalAvgPool,
    FullyConnected,
};

// One row of the walkable architecture summary; tests assert dense-block
// channel arithmetic and variant separation from this list.
struct LayerDesc {
    LayerKind kind;
    int rank = 0;  // conv/pool spatial rank
    int in_channels = 0;
    int out_channels = 0;
    int block = 0;  // 1-based dense block, 0 elsewhere
    int layer = 0;  // 1-based layer within block
};

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    bool trainable = true;
};

// An instantiated architecture: the parameter set plus enough structure to
// run forward passes on a tape. Batch-norm running estimates are state, not
// parameters; they are updated only by train-mode forward passes.
template <typename T>
class Model {
  public:
    ModelSpec spec;
    std::vector<Param<T>> params;
    std::vector<std::pair<std::string, BatchNormRunning<T>>> bn_stats;
    std::vector<LayerDesc> layers;

    static constexpr double kBnEps = 1e-5;
    static constexpr double kBnMomentum = 0.1;

    static Model build(const ModelSpec& spec_in) {
        ModelSpec spec = spec_in;
        spec.validate();
        Model m;
        m.spec = spec;
        Rng rng(spec.seed);

        const int core_rank = (spec.variant == Variant::Cnn4d) ? 4 : 3;
        int in_channels = 0;
        switch (spec.variant) {
            case Variant::Cnn3dTc:
                m.layers.push_back({LayerKind::TimeAsChannels, 0, 1, spec.crop_length, 0, 0});
                in_channels = spec.crop_length;
                break;
            case Variant::Cnn3dMs:
                m.layers.push_back({LayerKind::MeanStdVolumes, 0, 1, 2, 0, 0});
                in_channels = 2;
                break;
            case Variant::ConvGruCnn3d: {
                m.layers.push_back({LayerKind::ConvGru, 3, 1, spec.gru_hidden, 0, 0});
                ConvGruCell<T> cell = ConvGruCell<T>::init(rng, 1, spec.gru_hidden, spec.kernel);
                m.add_gru_params(cell);
                in_channels = spec.gru_hidden;
                break;
            }
            case Variant::Cnn4d:
                in_channels = 1;
                break;
        }

        const bool conv_bias = !spec.batch_norm;
        m.add_conv("init_conv", rng, core_rank, in_channels, spec.initial_filters, spec.kernel,
                   conv_bias);
        m.layers.push_back({LayerKind::Conv, core_rank, in_channels, spec.initial_filters, 0, 0});

        int channels = spec.initial_filters;
        for (int b = 1; b <= spec.blocks; ++b) {
            for (int l = 1; l <= spec.layers_per_block; ++l) {
                const std::string prefix =
                    "block" + std::to_string(b) + ".layer" + std::to_string(l);
                if (spec.batch_norm) {
                    m.add_batch_norm(prefix + ".bn", channels);
                    m.layers.push_back({LayerKind::BatchNorm, core_rank, channels, channels, b, l});
                }
                m.layers.push_back({LayerKind::Relu, core_rank, channels, channels, b, l});
                m.add_conv(prefix + ".conv", rng, core_rank, channels, spec.growth, spec.kernel,
                           conv_bias);
                m.layers.push_back({LayerKind::Conv, core_rank, channels, spec.growth, b, l});
                channels += spec.growth;
            }
            if (b != spec.blocks) {
                const std::string prefix = "trans" + std::to_string(b);
                const int compressed =
                    static_cast<int>(static_cast<double>(channels) * spec.compression);
                if (compressed < 1)
                    throw ConfigError("ModelSpec: compression collapses channels to zero");
                if (spec.batch_norm) {
                    m.add_batch_norm(prefix + ".bn", channels);
                    m.layers.push_back({LayerKind::BatchNorm, core_rank, channels, channels, 0, 0});
                }
                m.layers.push_back({LayerKind::Relu, core_rank, channels, channels, 0, 0});
                m.add_conv(prefix + ".conv", rng, core_rank, channels, compressed, 1, conv_bias);
                m.layers.push_back({LayerKind::Conv, core_rank, channels, compressed, 0, 0});
                m.layers.push_back({LayerKind::AvgPool, core_rank, compressed, compressed, 0, 0});
                channels = compressed;
            }
        }

        m.layers.push_back({LayerKind::GlobalAvgPool, core_rank, channels, channels, 0, 0});
        {
            const double stddev = std::sqrt(2.0 / static_cast<double>(channels));
            m.params.push_back({"head.fc.w", rand_normal<T>(rng, {channels, 2}, 0.0, stddev), true});
            m.params.push_back({"head.fc.b", Tensor<T>::zeros({2}), true});
            m.layers.push_back({LayerKind::FullyConnected, 0, channels, 2, 0, 0});
        }
        return m;
    }

    // Trainable scalar count; a pure function of the spec.
    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& p : params)
            if (p.trainable) n += p.value.numel();
        return n;
    }

    int param_index(const std::string& name) const {
        for (std::size_t i = 0; i < params.size(); ++i)
            if (params[i].name == name) return static_cast<int>(i);
        throw ConfigError("model has no parameter named '" + name + "'");
    }

    // Builds the forward graph for one crop batch [N,1,E,E,E,L]. Returns the
    // logits node; `param_leaves`, when given, receives one tape leaf per
    // entry of `params` (index-aligned). Train mode updates batch-norm
    // running statistics as a side effect; eval mode is pure.
    int forward(Tape<T>& tape, const Tensor<T>& crop, bool training,
                std::vector<int>* param_leaves = nullptr) {
        check_crop(crop);
        std::vector<int> leaves(params.size());
        for (std::size_t i = 0; i < params.size(); ++i)
            leaves[i] = tape.leaf(params[i].value, training && params[i].trainable);
        if (param_leaves != nullptr) *param_leaves = leaves;

        const int core_rank = (spec.variant == Variant::Cnn4d) ? 4 : 3;
        int h = -1;
        switch (spec.variant) {
            case Variant::Cnn3dTc:
                h = tape.leaf(stack_time_as_channels(crop), false);
                break;
            case Variant::Cnn3dMs:
                h = tape.leaf(mean_std_volumes(crop), false);
                break;
            case Variant::ConvGruCnn3d: {
                ConvGruLeafIds ids;
                ids.in_channels = 1;
                ids.hidden_channels = spec.gru_hidden;
                ids.kernel = spec.kernel;
                ids.wz = leaves[static_cast<std::size_t>(param_index("gru.wz"))];
                ids.uz = leaves[static_cast<std::size_t>(param_index("gru.uz"))];
                ids.wr = leaves[static_cast<std::size_t>(param_index("gru.wr"))];
                ids.ur = leaves[static_cast<std::size_t>(param_index("gru.ur"))];
                ids.wh = leaves[static_cast<std::size_t>(param_index("gru.wh"))];
                ids.uh = leaves[static_cast<std::size_t>(param_index("gru.uh"))];
                ids.bwz = leaves[static_cast<std::size_t>(param_index("gru.bwz"))];
                ids.buz = leaves[static_cast<std::size_t>(param_index("gru.buz"))];
                ids.bwr = leaves[static_cast<std::size_t>(param_index("gru.bwr"))];
                ids.bur = leaves[static_cast<std::size_t>(param_index("gru.bur"))];
                ids.bwh = leaves[static_cast<std::size_t>(param_index("gru.bwh"))];
                ids.buh = leaves[static_cast<std::size_t>(param_index("gru.buh"))];
                h = gru_sequence(tape, ids, crop);
                break;
            }
            case Variant::Cnn4d:
                h = tape.leaf(crop, false);
                break;
        }

        const bool conv_bias = !spec.batch_norm;
        int bn_cursor = 0;
        auto conv_layer = [&](int in, const std::string& prefix, int cin, int cout, int k,
                              int stride) {
            const ConvSpec cs =
                ConvSpec::isotropic(core_rank, cin, cout, k, stride, (k - 1) / 2, conv_bias);
            const int w = leaves[static_cast<std::size_t>(param_index(prefix + ".w"))];
            const int b = conv_bias ? leaves[static_cast<std::size_t>(param_index(prefix + ".b"))] : -1;
            return conv(tape, in, w, b, cs);
        };
        auto bn_layer = [&](int in, const std::string& prefix) {
            const int gamma = leaves[static_cast<std::size_t>(param_index(prefix + ".gamma"))];
            const int beta = leaves[static_cast<std::size_t>(param_index(prefix + ".beta"))];
            BatchNormRunning<T>* stats = &bn_stats[static_cast<std::size_t>(bn_cursor)].second;
            ++bn_cursor;
            return batch_norm(tape, in, gamma, beta, stats, training, kBnEps, kBnMomentum);
        };

        h = conv_layer(h, "init_conv", layers_input_channels(), spec.initial_filters, spec.kernel,
                       spec.initial_stride);

        int channels = spec.initial_filters;
        for (int b = 1; b <= spec.blocks; ++b) {
            for (int l = 1; l <= spec.layers_per_block; ++l) {
                const std::string prefix =
                    "block" + std::to_string(b) + ".layer" + std::to_string(l);
                // Composite layer: bn -> relu -> conv on the running concat.
                int u = spec.batch_norm ? bn_layer(h, prefix + ".bn") : h;
                u = tape.relu(u);
                u = conv_layer(u, prefix + ".conv", channels, spec.growth, spec.kernel, 1);
                h = tape.concat_channels({h, u});
                channels += spec.growth;
            }
            if (b != spec.blocks) {
                const std::string prefix = "trans" + std::to_string(b);
                const int compressed =
                    static_cast<int>(static_cast<double>(channels) * spec.compression);
                if (spec.batch_norm) h = bn_layer(h, prefix + ".bn");
                h = tape.relu(h);
                h = conv_layer(h, prefix + ".conv", channels, compressed, 1, 1);
                h = avg_pool(tape, h, core_rank, 2, 2);
                channels = compressed;
            }
        }

        h = global_avg_pool(tape, h);
        return fully_connected(tape, h,
                               leaves[static_cast<std::size_t>(param_index("head.fc.w"))],
                               leaves[static_cast<std::size_t>(param_index("head.fc.b"))]);
    }

    // Eval-mode logits without gradient bookkeeping.
    Tensor<T> predict(const Tensor<T>& crop) {
        Tape<T> tape;
        return tape.value(forward(tape, crop, false));
    }

    int layers_input_channels() const {
        switch (spec.variant) {
            case Variant::Cnn3dTc: return spec.crop_length;
            case Variant::Cnn3dMs: return 2;
            case Variant::ConvGruCnn3d: return spec.gru_hidden;
            case Variant::Cnn4d: return 1;
        }
        return 0;
    }

  private:
    void check_crop(const Tensor<T>& crop) const {
        if (crop.rank() != 6) throw ShapeError("forward: crop must be [N,1,X,Y,Z,T]");
        if (crop.extent(1) != 1) throw ShapeError("forward: crop channel extent must be 1");
        for (int d : {2, 3, 4})
            if (crop.extent(d) != spec.input_extent)
                throw ShapeError("forward: crop spatial extent " + std::to_string(crop.extent(d)) +
                                 " != configured " + std::to_string(spec.input_extent));
        if (crop.extent(5) != spec.crop_length)
            throw ShapeError("forward: crop temporal extent " + std::to_string(crop.extent(5)) +
                             " != configured " + std::to_string(spec.crop_length));
    }

    void add_conv(const std::string& prefix, Rng& rng, int rank, int cin, int cout, int k,
                  bool bias) {
        std::int64_t fan_in = cin;
        for (int d = 0; d < rank; ++d) fan_in *= k;
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        Shape w_shape{cout, cin};
        for (int d = 0; d < rank; ++d) w_shape.push_back(k);
        params.push_back({prefix + ".w", rand_normal<T>(rng, w_shape, 0.0, stddev), true});
        if (bias) params.push_back({prefix + ".b", Tensor<T>::zeros({cout}), true});
    }

    void add_batch_norm(const std::string& prefix, int channels) {
        params.push_back({prefix + ".gamma", Tensor<T>::full({channels}, T(1)), true});
        params.push_back({prefix + ".beta", Tensor<T>::zeros({channels}), true});
        BatchNormRunning<T> running;
        running.mean = Tensor<T>::zeros({channels});
        running.var = Tensor<T>::full({channels}, T(1));
        bn_stats.push_back({prefix, std::move(running)});
    }

    void add_gru_params(const ConvGruCell<T>& cell) {
        params.push_back({"gru.wz", cell.wz, true});
        params.push_back({"gru.uz", cell.uz, true});
        params.push_back({"gru.wr", cell.wr, true});
        params.push_back({"gru.ur", cell.ur, true});
        params.push_back({"gru.wh", cell.wh, true});
        params.push_back({"gru.uh", cell.uh, true});
        params.push_back({"gru.bwz", cell.bwz, true});
        params.push_back({"gru.buz", cell.buz, true});
        params.push_back({"gru.bwr", cell.bwr, true});
        params.push_back({"gru.bur", cell.bur, true});
        params.push_back({"gru.bwh", cell.bwh, true});
        params.push_back({"gru.buh", cell.buh, true});
    }
};

}  // namespace t4d
