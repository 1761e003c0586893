#pragma once

#include <string>
#include <vector>

#include "t4d/errors.hpp"
#include "t4d/tensor.hpp"

namespace t4d {

enum class Split { Train, Val, Test };

const char* split_name(Split s);
Split parse_split(const std::string& name);

struct ManifestEntry {
    std::string path;     // relative to the manifest's directory
    std::string subject;  // unique id
    int label = 0;        // 0 = control, 1 = ASD
    Split split = Split::Train;
};

// Text index of a dataset. One record per line, tab-separated
// path/subject/label/split; '#' starts a comment; '@' lines carry the global
// header (expected image shape and sampling period in seconds).
struct Manifest {
    Shape image_shape;             // [X,Y,Z,T]
    double sampling_period = 2.0;  // seconds per frame
    std::vector<ManifestEntry> entries;

    struct SplitCounts {
        int total = 0, class0 = 0, class1 = 0;
    };
    SplitCounts counts(Split s) const;
    void validate() const;  // unique subjects, binary labels, sane header
};

Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& manifest, const std::string& path);

// Directory part of a path, "" when there is none; manifest entry paths are
// resolved against this.
std::string parent_dir(const std::string& path);
std::string join_path(const std::string& dir, const std::string& rel);

}  // namespace t4d
