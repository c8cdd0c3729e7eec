#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cascreg/volume.hpp"

namespace cascreg {

/// Parse error carrying the 1-based line number of the offending entry.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& what, int line)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

struct ConfigEntry {
    std::string key;
    std::string value;
    int line = 0;
};

/// `key = value` lines; '#' starts a comment, blank lines are ignored, keys
/// may repeat and keep their file order.
std::vector<ConfigEntry> parse_key_values(const std::string& text);
std::vector<ConfigEntry> read_key_values(const std::filesystem::path& path);

double parse_double(const std::string& s, int line = 0);
long parse_int(const std::string& s, int line = 0);
bool parse_bool(const std::string& s, int line = 0);
/// Three numbers separated by commas and/or whitespace.
Vec3 parse_vec3(const std::string& s, int line = 0);
Dims parse_dims(const std::string& s, int line = 0);

/// Splits "kind a=1 b=2,3" into the leading word and its attributes.
struct Directive {
    std::string kind;
    std::vector<std::pair<std::string, std::string>> attrs;

    bool has(const std::string& key) const;
    const std::string& get(const std::string& key, int line) const;
};
Directive parse_directive(const std::string& value, int line);

}  // namespace cascreg
