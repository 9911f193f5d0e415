#include "adasgn/arch.hpp"

#include <charconv>
#include <map>
#include <sstream>

#include "adasgn/errors.hpp"

namespace adasgn {

bool operator==(const SpatialPlan& a, const SpatialPlan& b) { return a.embed == b.embed && a.widths == b.widths; }

ArchConfig ArchConfig::standard() {
    ArchConfig c;
    c.spatial = {SpatialPlan{64, {64, 128, 256}}, SpatialPlan{32, {32, 64, 256}}};
    c.temporal_hidden = 512;
    c.temporal_out = 512;
    c.policy_hidden = 64;
    return c;
}

ArchConfig ArchConfig::desk() {
    ArchConfig c;
    c.spatial = {SpatialPlan{16, {16, 32, 48}}, SpatialPlan{8, {8, 16, 48}}};
    c.temporal_hidden = 48;
    c.temporal_out = 48;
    c.policy_hidden = 16;
    return c;
}

void ArchConfig::validate() const {
    if (spatial.empty()) throw ConfigError("architecture needs at least one spatial module");
    if (coords == 0 || frames == 0 || classes < 2) throw ConfigError("coords, frames must be positive and classes >= 2");
    for (std::size_t k = 0; k < spatial.size(); ++k) {
        if (spatial[k].embed == 0) throw ConfigError("spatial module " + std::to_string(k) + " has zero embed width");
        for (auto w : spatial[k].widths)
            if (w == 0) throw ConfigError("spatial module " + std::to_string(k) + " has a zero layer width");
        if (spatial[k].widths.back() != feature_width())
            throw ConfigError("spatial module " + std::to_string(k) + " ends at width " +
                              std::to_string(spatial[k].widths.back()) + ", expected " +
                              std::to_string(feature_width()));
    }
    if (temporal_kernel % 2 == 0 || policy_kernel % 2 == 0) throw ConfigError("temporal kernels must be odd");
    if (temporal_hidden == 0 || temporal_out == 0 || policy_hidden == 0)
        throw ConfigError("temporal and policy widths must be positive");
}

std::string ArchConfig::serialize() const {
    std::ostringstream out;
    out << "coords=" << coords << " frames=" << frames << " classes=" << classes << " sm=";
    for (std::size_t k = 0; k < spatial.size(); ++k) {
        if (k) out << ';';
        out << spatial[k].embed << ':' << spatial[k].widths[0] << ',' << spatial[k].widths[1] << ','
            << spatial[k].widths[2];
    }
    out << " tm=" << temporal_kernel << ':' << temporal_hidden << ',' << temporal_out << " policy=" << policy_kernel
        << ':' << policy_hidden;
    return out.str();
}

namespace {

std::size_t to_size(std::string_view s, const std::string& key) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ConfigError("bad value '" + std::string(s) + "' for arch field " + key);
    return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i)
        if (i == s.size() || s[i] == sep) {
            out.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    return out;
}

std::pair<std::size_t, std::vector<std::size_t>> kernel_widths(std::string_view v, const std::string& key) {
    auto parts = split(v, ':');
    if (parts.size() != 2) throw ConfigError("arch field " + key + " must look like k:w,...");
    std::vector<std::size_t> widths;
    for (auto w : split(parts[1], ',')) widths.push_back(to_size(w, key));
    return {to_size(parts[0], key), widths};
}

}  // namespace

ArchConfig ArchConfig::parse(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) throw ConfigError("arch token without '=': " + tok);
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    for (const char* key : {"coords", "frames", "classes", "sm", "tm", "policy"})
        if (!kv.count(key)) throw ConfigError(std::string("arch description lacks field ") + key);
    ArchConfig c;
    c.coords = to_size(kv["coords"], "coords");
    c.frames = to_size(kv["frames"], "frames");
    c.classes = to_size(kv["classes"], "classes");
    for (auto plan : split(kv["sm"], ';')) {
        auto [embed, widths] = kernel_widths(plan, "sm");
        if (widths.size() != 3) throw ConfigError("arch field sm needs three layer widths per module");
        c.spatial.push_back(SpatialPlan{embed, {widths[0], widths[1], widths[2]}});
    }
    auto [tk, tw] = kernel_widths(kv["tm"], "tm");
    if (tw.size() != 2) throw ConfigError("arch field tm needs two widths");
    c.temporal_kernel = tk;
    c.temporal_hidden = tw[0];
    c.temporal_out = tw[1];
    auto [pk, pw] = kernel_widths(kv["policy"], "policy");
    if (pw.size() != 1) throw ConfigError("arch field policy needs one width");
    c.policy_kernel = pk;
    c.policy_hidden = pw[0];
    c.validate();
    return c;
}

}  // namespace adasgn
