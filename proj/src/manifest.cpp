#include "t4d/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace t4d {

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw IoError(IoError::Kind::Format, "unknown split '" + name + "' (train|val|test)");
}

Manifest::SplitCounts Manifest::counts(Split s) const {
    SplitCounts c;
    for (const auto& e : entries) {
        if (e.split != s) continue;
        ++c.total;
        if (e.label == 0) ++c.class0;
        else ++c.class1;
    }
    return c;
}

void Manifest::validate() const {
    std::set<std::string> seen;
    for (const auto& e : entries) {
        if (e.label != 0 && e.label != 1)
            throw IoError(IoError::Kind::Format,
                          "subject " + e.subject + ": label must be 0 or 1");
        if (!seen.insert(e.subject).second)
            throw IoError(IoError::Kind::Format, "duplicate subject id '" + e.subject + "'");
    }
    if (image_shape.size() != 4)
        throw IoError(IoError::Kind::Format, "manifest @shape must list 4 extents (X Y Z T)");
    for (auto e : image_shape)
        if (e < 1) throw IoError(IoError::Kind::Format, "manifest @shape extents must be >= 1");
    if (sampling_period <= 0.0)
        throw IoError(IoError::Kind::Format, "manifest @period must be positive");
}

namespace {
std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == '\t') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}
}  // namespace

Manifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError(IoError::Kind::Open, path + ": cannot open manifest");

    Manifest m;
    m.image_shape.clear();
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::string where = path + ":" + std::to_string(line_no);
        if (line[0] == '@') {
            const auto fields = split_tabs(line);
            if (fields[0] == "@shape") {
                if (fields.size() != 2)
                    throw IoError(IoError::Kind::Format, where + ": @shape needs one field");
                std::istringstream ss(fields[1]);
                std::int64_t e;
                m.image_shape.clear();
                while (ss >> e) m.image_shape.push_back(e);
            } else if (fields[0] == "@period") {
                if (fields.size() != 2)
                    throw IoError(IoError::Kind::Format, where + ": @period needs one field");
                m.sampling_period = std::stod(fields[1]);
            } else {
                throw IoError(IoError::Kind::Format, where + ": unknown directive " + fields[0]);
            }
            continue;
        }
        const auto fields = split_tabs(line);
        if (fields.size() != 4)
            throw IoError(IoError::Kind::Format,
                          where + ": expected 4 tab-separated fields, got " +
                              std::to_string(fields.size()));
        ManifestEntry e;
        e.path = fields[0];
        e.subject = fields[1];
        try {
            e.label = std::stoi(fields[2]);
        } catch (const std::exception&) {
            throw IoError(IoError::Kind::Format, where + ": label must be an integer");
        }
        e.split = parse_split(fields[3]);
        m.entries.push_back(std::move(e));
    }
    m.validate();
    return m;
}

void save_manifest(const Manifest& manifest, const std::string& path) {
    manifest.validate();
    std::ofstream os(path);
    if (!os) throw IoError(IoError::Kind::Open, path + ": cannot open for writing");
    os << "# t4d dataset manifest\n";
    os << "@shape\t";
    for (std::size_t i = 0; i < manifest.image_shape.size(); ++i)
        os << (i ? " " : "") << manifest.image_shape[i];
    os << "\n@period\t" << manifest.sampling_period << "\n";
    for (const auto& e : manifest.entries)
        os << e.path << "\t" << e.subject << "\t" << e.label << "\t" << split_name(e.split) << "\n";
    if (!os) throw IoError(IoError::Kind::Open, path + ": write failed");
}

std::string parent_dir(const std::string& path) {
    const auto pos = path.find_last_of('/');
    return pos == std::string::npos ? std::string() : path.substr(0, pos);
}

std::string join_path(const std::string& dir, const std::string& rel) {
    if (dir.empty() || rel.front() == '/') return rel;
    return dir + "/" + rel;
}

}  // namespace t4d
