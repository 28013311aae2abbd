#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ddrsi {

inline constexpr const char* kVersion = "0.1.0";

/// Error carrying a path into the offending document (e.g. "buses[2].nets[0]").
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string path, const std::string& msg)
        : std::runtime_error(path.empty() ? msg : path + ": " + msg), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Per-node transient solve failure, with enough context to locate it.
class SolveError : public std::runtime_error {
public:
    SolveError(std::string node, double time_s, double residual_a)
        : std::runtime_error("node solve failed to converge at node '" + node + "', t=" +
                             std::to_string(time_s) + " s, residual=" + std::to_string(residual_a) + " A"),
          node_(std::move(node)), time_s_(time_s), residual_a_(residual_a) {}

    const std::string& node() const noexcept { return node_; }
    double time_s() const noexcept { return time_s_; }
    double residual_a() const noexcept { return residual_a_; }

private:
    std::string node_;
    double time_s_;
    double residual_a_;
};

/// Waveform post-processing failure (absent edge, level never reached, ...).
class MeasureError : public std::runtime_error {
public:
    enum class Kind { edge_absent, ac_level_not_reached, no_qualifying_crossing, derate_not_supported, derate_below_range };

    MeasureError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// FNV-1a 64-bit. Used wherever a reproducible, platform-independent hash of a
/// name is needed (per-run PRBS seeds must not depend on std::hash).
constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace ddrsi
