#pragma once

#include <map>
#include <string>
#include <vector>

namespace uqcloud {

// Flat `key = value` text, one pair per line; '#' starts a comment.
// Used for scene spec files and for passing option sets across the C API.
class KvConfig {
public:
    KvConfig() = default;

    static KvConfig parse(const std::string& text);
    static KvConfig parse_file(const std::string& path);

    bool has(const std::string& key) const;
    std::string get(const std::string& key, const std::string& fallback) const;
    std::string get_required(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    long get_long(const std::string& key, long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    void set(const std::string& key, const std::string& value);
    const std::map<std::string, std::string>& entries() const { return kv_; }
    std::string serialize() const;

private:
    std::map<std::string, std::string> kv_;
};

std::string trim(const std::string& s);
std::vector<std::string> split_string(const std::string& s, char sep);

}  // namespace uqcloud
