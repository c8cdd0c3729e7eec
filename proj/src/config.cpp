#include "cascreg/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace cascreg {

namespace {

std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::vector<std::string> split_numbers(const std::string& s) {
    std::string t = s;
    std::replace(t.begin(), t.end(), ',', ' ');
    std::istringstream in(t);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

}  // namespace

std::vector<ConfigEntry> parse_key_values(const std::string& text) {
    std::vector<ConfigEntry> out;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        raw = trim(raw);
        if (raw.empty()) continue;
        const auto eq = raw.find('=');
        if (eq == std::string::npos) throw ConfigError("expected 'key = value', got '" + raw + "'", line);
        ConfigEntry e{trim(raw.substr(0, eq)), trim(raw.substr(eq + 1)), line};
        if (e.key.empty()) throw ConfigError("empty key", line);
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<ConfigEntry> read_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string(), 0);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_key_values(ss.str());
}

double parse_double(const std::string& s, int line) {
    const std::string t = trim(s);
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(t, &used);
    } catch (const std::exception&) {
        throw ConfigError("expected a number, got '" + s + "'", line);
    }
    if (used != t.size()) throw ConfigError("expected a number, got '" + s + "'", line);
    return v;
}

long parse_int(const std::string& s, int line) {
    const std::string t = trim(s);
    long v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) throw ConfigError("expected an integer, got '" + s + "'", line);
    return v;
}

bool parse_bool(const std::string& s, int line) {
    const std::string t = trim(s);
    if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
    if (t == "false" || t == "0" || t == "no" || t == "off") return false;
    throw ConfigError("expected a boolean, got '" + s + "'", line);
}

Vec3 parse_vec3(const std::string& s, int line) {
    const auto parts = split_numbers(s);
    if (parts.size() != 3) throw ConfigError("expected three numbers, got '" + s + "'", line);
    return {parse_double(parts[0], line), parse_double(parts[1], line), parse_double(parts[2], line)};
}

Dims parse_dims(const std::string& s, int line) {
    const auto parts = split_numbers(s);
    if (parts.size() != 3) throw ConfigError("expected three dimensions, got '" + s + "'", line);
    Dims d{int(parse_int(parts[0], line)), int(parse_int(parts[1], line)), int(parse_int(parts[2], line))};
    if (!d.positive()) throw ConfigError("dimensions must be positive, got '" + s + "'", line);
    return d;
}

bool Directive::has(const std::string& key) const {
    return std::any_of(attrs.begin(), attrs.end(), [&](const auto& a) { return a.first == key; });
}

const std::string& Directive::get(const std::string& key, int line) const {
    for (const auto& a : attrs)
        if (a.first == key) return a.second;
    throw ConfigError("'" + kind + "' is missing '" + key + "='", line);
}

Directive parse_directive(const std::string& value, int line) {
    std::istringstream in(value);
    Directive d;
    if (!(in >> d.kind)) throw ConfigError("empty directive", line);
    for (std::string w; in >> w;) {
        const auto eq = w.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("expected attr=value, got '" + w + "'", line);
        d.attrs.emplace_back(w.substr(0, eq), w.substr(eq + 1));
    }
    return d;
}

}  // namespace cascreg
