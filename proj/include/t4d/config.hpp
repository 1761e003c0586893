#pragma once

#include <map>
#include <set>
#include <string>

#include "t4d/errors.hpp"

namespace t4d {

// Flat dotted-key configuration: one `key = value` per line, '#' comments.
// Command-line flags override file values (they call set() after load).
// Every key must be consumed by a reader; leftovers are reported as errors
// so typos fail loudly.
class KvConfig {
  public:
    static KvConfig from_file(const std::string& path);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback);
    long long get_int(const std::string& key, long long fallback);
    double get_double(const std::string& key, double fallback);
    bool get_bool(const std::string& key, bool fallback);
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);

    // Throws ConfigError naming every key no reader asked for.
    void ensure_consumed() const;

  private:
    std::map<std::string, std::string> values_;
    std::set<std::string> consumed_;
};

}  // namespace t4d
