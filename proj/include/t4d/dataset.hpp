#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "t4d/manifest.hpp"
#include "t4d/t4df.hpp"

namespace t4d {

// One subject held in memory: rank-6 image [1,1,X,Y,Z,T] (files store the
// bare [X,Y,Z,T] volume), binary label, split assignment.
template <typename T>
struct FmriRecord {
    std::string subject;
    Tensor<T> image;
    int label = 0;
    Split split = Split::Train;
};

template <typename T>
struct Dataset {
    Manifest manifest;
    std::vector<FmriRecord<T>> records;

    std::vector<const FmriRecord<T>*> split(Split s) const {
        std::vector<const FmriRecord<T>*> out;
        for (const auto& r : records)
            if (r.split == s) out.push_back(&r);
        return out;
    }
};

// Loads every record eagerly; images are validated against the manifest
// header shape and must be finite-valued.
template <typename T>
Dataset<T> load_dataset(const std::string& manifest_path) {
    Dataset<T> data;
    data.manifest = load_manifest(manifest_path);
    const std::string dir = parent_dir(manifest_path);
    const Shape& expect = data.manifest.image_shape;
    for (const auto& entry : data.manifest.entries) {
        FmriRecord<T> record;
        record.subject = entry.subject;
        record.label = entry.label;
        record.split = entry.split;
        Tensor<T> raw = load_tensor_as<T>(join_path(dir, entry.path));
        if (raw.shape() != expect)
            throw IoError(IoError::Kind::Format,
                          entry.path + ": shape " + shape_str(raw.shape()) +
                              " does not match manifest @shape " + shape_str(expect));
        for (std::int64_t i = 0; i < raw.numel(); ++i)
            if (!std::isfinite(static_cast<double>(raw[i])))
                throw IoError(IoError::Kind::Format, entry.path + ": non-finite voxel value");
        record.image = raw.reshaped({1, 1, expect[0], expect[1], expect[2], expect[3]});
        data.records.push_back(std::move(record));
    }
    return data;
}

}  // namespace t4d
