#pragma once

#include <cstring>
#include <fstream>
#include <map>

#include "t4d/t4df.hpp"
#include "t4d/training.hpp"

namespace t4d {

// Checkpoint container: T4DF-style archive holding the model description,
// optimizer state, generator state and every named tensor (current
// parameters, best-snapshot parameters, Adam moments, batch-norm running
// statistics). Resuming from a checkpoint continues the exact trajectory.
//
//   magic "T4CP", version u8 = 1, dtype u8
//   spec text: u32 length + bytes (canonical ModelSpec key=value lines)
//   spec digest u64, adam step u64, epoch u64
//   train rng state: 4 x u64
//   has_best u8, best_metric f64 bits, best_epoch u64
//   tensor count u32, then per tensor:
//     role u8, name (u16 length + bytes), rank u8, extents u64 each, payload

namespace ckpt_detail {

enum class Role : std::uint8_t {
    Param = 0,
    AdamM = 1,
    AdamV = 2,
    BestParam = 3,
    BnMean = 4,
    BnVar = 5,
    BestBnMean = 6,
    BestBnVar = 7,
};

inline void put_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32_le(std::istream& is, const std::string& path) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError(IoError::Kind::Truncated, path + ": truncated checkpoint");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

template <typename T>
void put_tensor(std::ostream& os, Role role, const std::string& name, const Tensor<T>& t) {
    const auto r = static_cast<unsigned char>(role);
    os.write(reinterpret_cast<const char*>(&r), 1);
    const auto name_len = static_cast<std::uint32_t>(name.size());
    put_u32_le(os, name_len);
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto rank = static_cast<unsigned char>(t.rank());
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (int d = 0; d < t.rank(); ++d)
        detail::put_u64_le(os, static_cast<std::uint64_t>(t.extent(d)));
    detail::write_payload(os, t.data(), t.numel());
}

template <typename T>
std::pair<std::pair<Role, std::string>, Tensor<T>> get_tensor(std::istream& is,
                                                              const std::string& path) {
    unsigned char role = 0;
    is.read(reinterpret_cast<char*>(&role), 1);
    if (!is) throw IoError(IoError::Kind::Truncated, path + ": truncated checkpoint");
    const std::uint32_t name_len = get_u32_le(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    unsigned char rank = 0;
    is.read(reinterpret_cast<char*>(&rank), 1);
    if (!is || rank < 1 || rank > kMaxRank)
        throw IoError(IoError::Kind::Format, path + ": bad tensor record for '" + name + "'");
    Shape shape;
    for (int d = 0; d < rank; ++d)
        shape.push_back(static_cast<std::int64_t>(detail::get_u64_le(is, path)));
    Tensor<T> t(shape);
    detail::read_payload(is, t.data(), t.numel(), path);
    return {{static_cast<Role>(role), std::move(name)}, std::move(t)};
}

struct Header {
    DType dtype = DType::F32;
    std::string spec_text;
    std::uint64_t digest = 0;
    std::uint64_t adam_step = 0;
    std::uint64_t epoch = 0;
    std::array<std::uint64_t, 4> rng_state{};
    bool has_best = false;
    double best_metric = -1.0;
    std::uint64_t best_epoch = 0;
    std::uint32_t tensor_count = 0;
};

inline Header read_header(std::istream& is, const std::string& path) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "T4CP", 4) != 0)
        throw IoError(IoError::Kind::BadMagic, path + ": bad magic, not a checkpoint");
    unsigned char version = 0, dtype = 0;
    is.read(reinterpret_cast<char*>(&version), 1);
    is.read(reinterpret_cast<char*>(&dtype), 1);
    if (!is) throw IoError(IoError::Kind::Truncated, path + ": truncated checkpoint");
    if (version != 1)
        throw IoError(IoError::Kind::BadVersion,
                      path + ": unsupported checkpoint version " + std::to_string(version));
    if (dtype > 1) throw IoError(IoError::Kind::BadDtype, path + ": unknown dtype code");
    Header h;
    h.dtype = static_cast<DType>(dtype);
    const std::uint32_t text_len = get_u32_le(is, path);
    h.spec_text.resize(text_len);
    is.read(h.spec_text.data(), text_len);
    h.digest = detail::get_u64_le(is, path);
    h.adam_step = detail::get_u64_le(is, path);
    h.epoch = detail::get_u64_le(is, path);
    for (auto& w : h.rng_state) w = detail::get_u64_le(is, path);
    unsigned char has_best = 0;
    is.read(reinterpret_cast<char*>(&has_best), 1);
    h.has_best = has_best != 0;
    h.best_metric = std::bit_cast<double>(detail::get_u64_le(is, path));
    h.best_epoch = detail::get_u64_le(is, path);
    h.tensor_count = get_u32_le(is, path);
    if (!is) throw IoError(IoError::Kind::Truncated, path + ": truncated checkpoint");
    return h;
}

}  // namespace ckpt_detail

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model, const TrainState<T>& state) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(IoError::Kind::Open, path + ": cannot open for writing");
    os.write("T4CP", 4);
    const unsigned char version = 1;
    const unsigned char dtype = static_cast<unsigned char>(detail::dtype_of<T>());
    os.write(reinterpret_cast<const char*>(&version), 1);
    os.write(reinterpret_cast<const char*>(&dtype), 1);
    const std::string spec_text = model.spec.to_text();
    ckpt_detail::put_u32_le(os, static_cast<std::uint32_t>(spec_text.size()));
    os.write(spec_text.data(), static_cast<std::streamsize>(spec_text.size()));
    detail::put_u64_le(os, model.spec.digest());
    detail::put_u64_le(os, static_cast<std::uint64_t>(state.adam.step));
    detail::put_u64_le(os, static_cast<std::uint64_t>(state.epoch));
    for (std::uint64_t w : state.rng.state()) detail::put_u64_le(os, w);
    const unsigned char has_best = state.has_best ? 1 : 0;
    os.write(reinterpret_cast<const char*>(&has_best), 1);
    detail::put_u64_le(os, std::bit_cast<std::uint64_t>(state.best_metric));
    detail::put_u64_le(os, static_cast<std::uint64_t>(state.best_epoch));

    std::uint32_t count = 0;
    for (const auto& p : model.params) count += p.trainable && !state.adam.m.empty() ? 3 : 1;
    count += static_cast<std::uint32_t>(2 * model.bn_stats.size());
    if (state.has_best)
        count += static_cast<std::uint32_t>(state.best_params.size() +
                                            2 * state.best_bn_stats.size());
    ckpt_detail::put_u32_le(os, count);

    using ckpt_detail::Role;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        ckpt_detail::put_tensor(os, Role::Param, model.params[i].name, model.params[i].value);
        if (model.params[i].trainable && !state.adam.m.empty()) {
            ckpt_detail::put_tensor(os, Role::AdamM, model.params[i].name, state.adam.m[i]);
            ckpt_detail::put_tensor(os, Role::AdamV, model.params[i].name, state.adam.v[i]);
        }
    }
    for (const auto& [name, running] : model.bn_stats) {
        ckpt_detail::put_tensor(os, Role::BnMean, name, running.mean);
        ckpt_detail::put_tensor(os, Role::BnVar, name, running.var);
    }
    if (state.has_best) {
        for (std::size_t i = 0; i < state.best_params.size(); ++i)
            ckpt_detail::put_tensor(os, Role::BestParam, model.params[i].name,
                                    state.best_params[i]);
        for (std::size_t i = 0; i < state.best_bn_stats.size(); ++i) {
            ckpt_detail::put_tensor(os, Role::BestBnMean, model.bn_stats[i].first,
                                    state.best_bn_stats[i].mean);
            ckpt_detail::put_tensor(os, Role::BestBnVar, model.bn_stats[i].first,
                                    state.best_bn_stats[i].var);
        }
    }
    if (!os) throw IoError(IoError::Kind::Open, path + ": write failed");
}

// Model description stored in a checkpoint, without loading tensors.
inline ModelSpec checkpoint_spec(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(IoError::Kind::Open, path + ": cannot open");
    return ModelSpec::from_text(ckpt_detail::read_header(is, path).spec_text);
}

inline DType checkpoint_dtype(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(IoError::Kind::Open, path + ": cannot open");
    return ckpt_detail::read_header(is, path).dtype;
}

struct CheckpointTensorInfo {
    std::string role;
    std::string name;
    Shape shape;
};

struct CheckpointSummary {
    DType dtype = DType::F32;
    std::string spec_text;
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    bool has_best = false;
    double best_metric = -1.0;
    std::vector<CheckpointTensorInfo> tensors;
};

// Walks the archive without materializing payloads (for inspection tools).
inline CheckpointSummary checkpoint_contents(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(IoError::Kind::Open, path + ": cannot open");
    const ckpt_detail::Header header = ckpt_detail::read_header(is, path);
    CheckpointSummary summary;
    summary.dtype = header.dtype;
    summary.spec_text = header.spec_text;
    summary.step = header.adam_step;
    summary.epoch = header.epoch;
    summary.has_best = header.has_best;
    summary.best_metric = header.best_metric;
    const std::int64_t elem_size = header.dtype == DType::F32 ? 4 : 8;
    static const char* role_names[] = {"param",     "adam.m",       "adam.v",      "best.param",
                                       "bn.mean",   "bn.var",       "best.bn.mean", "best.bn.var"};
    for (std::uint32_t i = 0; i < header.tensor_count; ++i) {
        unsigned char role = 0;
        is.read(reinterpret_cast<char*>(&role), 1);
        if (!is || role > 7)
            throw IoError(IoError::Kind::Format, path + ": bad tensor record");
        const std::uint32_t name_len = ckpt_detail::get_u32_le(is, path);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        unsigned char rank = 0;
        is.read(reinterpret_cast<char*>(&rank), 1);
        if (!is || rank < 1 || rank > kMaxRank)
            throw IoError(IoError::Kind::Format, path + ": bad tensor record for '" + name + "'");
        Shape shape;
        std::int64_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            shape.push_back(static_cast<std::int64_t>(detail::get_u64_le(is, path)));
            numel *= shape.back();
        }
        is.seekg(numel * elem_size, std::ios::cur);
        if (!is) throw IoError(IoError::Kind::Truncated, path + ": truncated tensor payload");
        summary.tensors.push_back({role_names[role], std::move(name), std::move(shape)});
    }
    return summary;
}

// Loads a checkpoint into a freshly built model of the matching spec.
// Mismatched specs, dtypes, unknown names or wrong shapes raise IoError
// listing the offending parameter.
template <typename T>
TrainState<T> load_checkpoint(const std::string& path, Model<T>& model) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(IoError::Kind::Open, path + ": cannot open");
    const ckpt_detail::Header header = ckpt_detail::read_header(is, path);
    if (header.dtype != detail::dtype_of<T>())
        throw IoError(IoError::Kind::BadDtype, path + ": checkpoint dtype does not match");
    if (header.digest != model.spec.digest())
        throw IoError(IoError::Kind::Format,
                      path + ": checkpoint was written for a different model spec:\n" +
                          header.spec_text);

    TrainState<T> state;
    state.adam.step = static_cast<std::int64_t>(header.adam_step);
    state.epoch = static_cast<std::int64_t>(header.epoch);
    Rng rng(0);
    rng.set_state(header.rng_state);
    state.rng = rng;
    state.has_best = header.has_best;
    state.best_metric = header.best_metric;
    state.best_epoch = static_cast<std::int64_t>(header.best_epoch);

    std::map<std::string, int> param_index;
    for (std::size_t i = 0; i < model.params.size(); ++i)
        param_index[model.params[i].name] = static_cast<int>(i);
    std::map<std::string, int> bn_index;
    for (std::size_t i = 0; i < model.bn_stats.size(); ++i)
        bn_index[model.bn_stats[i].first] = static_cast<int>(i);

    state.adam.m.assign(model.params.size(), Tensor<T>());
    state.adam.v.assign(model.params.size(), Tensor<T>());
    state.best_params.assign(model.params.size(), Tensor<T>());
    state.best_bn_stats.assign(model.bn_stats.size(), BatchNormRunning<T>());

    bool any_moments = false;
    using ckpt_detail::Role;
    for (std::uint32_t i = 0; i < header.tensor_count; ++i) {
        auto [meta, tensor] = ckpt_detail::get_tensor<T>(is, path);
        const auto& [role, name] = meta;
        auto expect_param_shape = [&](int idx) {
            if (!tensor.same_shape(model.params[static_cast<std::size_t>(idx)].value))
                throw IoError(IoError::Kind::Format,
                              path + ": shape mismatch for parameter '" + name + "' (" +
                                  shape_str(tensor.shape()) + " vs " +
                                  shape_str(model.params[static_cast<std::size_t>(idx)].value.shape()) + ")");
        };
        switch (role) {
            case Role::Param:
            case Role::AdamM:
            case Role::AdamV:
            case Role::BestParam: {
                auto it = param_index.find(name);
                if (it == param_index.end())
                    throw IoError(IoError::Kind::Format,
                                  path + ": unknown parameter '" + name + "' in checkpoint");
                expect_param_shape(it->second);
                const auto idx = static_cast<std::size_t>(it->second);
                if (role == Role::Param) model.params[idx].value = std::move(tensor);
                else if (role == Role::AdamM) { state.adam.m[idx] = std::move(tensor); any_moments = true; }
                else if (role == Role::AdamV) state.adam.v[idx] = std::move(tensor);
                else state.best_params[idx] = std::move(tensor);
                break;
            }
            case Role::BnMean:
            case Role::BnVar:
            case Role::BestBnMean:
            case Role::BestBnVar: {
                auto it = bn_index.find(name);
                if (it == bn_index.end())
                    throw IoError(IoError::Kind::Format,
                                  path + ": unknown batch-norm layer '" + name + "'");
                const auto idx = static_cast<std::size_t>(it->second);
                if (role == Role::BnMean) model.bn_stats[idx].second.mean = std::move(tensor);
                else if (role == Role::BnVar) model.bn_stats[idx].second.var = std::move(tensor);
                else if (role == Role::BestBnMean) state.best_bn_stats[idx].mean = std::move(tensor);
                else state.best_bn_stats[idx].var = std::move(tensor);
                break;
            }
        }
    }

    if (!any_moments) {
        state.adam.m.clear();
        state.adam.v.clear();
    } else {
        for (std::size_t i = 0; i < model.params.size(); ++i) {
            if (!model.params[i].trainable) continue;
            if (state.adam.m[i].numel() == 0 || state.adam.v[i].numel() == 0)
                throw IoError(IoError::Kind::Format,
                              path + ": missing Adam moments for parameter '" +
                                  model.params[i].name + "'");
        }
    }
    if (state.has_best) {
        for (std::size_t i = 0; i < model.params.size(); ++i)
            if (state.best_params[i].numel() == 0)
                throw IoError(IoError::Kind::Format,
                              path + ": missing best snapshot for parameter '" +
                                  model.params[i].name + "'");
    } else {
        state.best_params.clear();
        state.best_bn_stats.clear();
    }
    return state;
}

}  // namespace t4d
