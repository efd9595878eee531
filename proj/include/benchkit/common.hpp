#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

namespace benchkit {

using json = nlohmann::json;

inline constexpr std::string_view kToolkitVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct SourceLocation {
    std::string file;
    int line = 0;  // 1-based, 0 = unknown
    int column = 0;
};

/// Configuration problem tied to a position in a source document.
class ConfigError : public Error {
  public:
    ConfigError(SourceLocation loc, const std::string &message);

    [[nodiscard]] const SourceLocation &location() const noexcept { return loc_; }
    [[nodiscard]] const std::string &message() const noexcept { return message_; }

  private:
    SourceLocation loc_;
    std::string message_;
};

class DataError : public Error {
  public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Digests and seeding
// ---------------------------------------------------------------------------

std::string sha256_hex(std::string_view data);
std::array<std::uint8_t, 32> sha256_bytes(std::string_view data);
/// First eight digest bytes, big-endian.
std::uint64_t sha256_u64(std::string_view data);

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Seeded generator. Uniform draws are computed from raw engine bits so they
/// do not depend on the standard library's distribution implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer on [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(n) - 1)); }
    double normal();
    std::mt19937_64 &engine() noexcept { return engine_; }

  private:
    std::mt19937_64 engine_;
    std::optional<double> spare_normal_;
};

// ---------------------------------------------------------------------------
// Parameter values
// ---------------------------------------------------------------------------

using ParamValue = std::variant<std::int64_t, double, std::string>;
using ParamSet = std::map<std::string, ParamValue>;

/// Shortest round-trip decimal; always carries a '.' or exponent so it reads back as a real.
std::string format_real(double v);
std::string format_param(const ParamValue &v);
/// Plain scalar text -> integer, real, or string (in that order of preference).
ParamValue infer_param(std::string_view text);
std::optional<double> param_as_real(const ParamValue &v);
std::optional<std::int64_t> param_as_int(const ParamValue &v);

json param_to_json(const ParamValue &v);
ParamValue param_from_json(const json &j);
json params_to_json(const ParamSet &p);
ParamSet params_from_json(const json &j);

// ---------------------------------------------------------------------------
// Search space
// ---------------------------------------------------------------------------

enum class DimensionKind { choice, uniform, log_uniform, int_uniform };

std::string_view to_string(DimensionKind k);
std::optional<DimensionKind> dimension_kind_from_string(std::string_view s);

struct SearchDimension {
    std::string name;
    DimensionKind kind = DimensionKind::uniform;
    std::vector<ParamValue> values;  // choice only
    double low = 0.0;                // range kinds only
    double high = 0.0;

    bool operator==(const SearchDimension &) const = default;

    /// Throws Error describing the first violated invariant.
    void validate() const;
    [[nodiscard]] bool contains(const ParamValue &v) const;
};

using SearchSpace = std::vector<SearchDimension>;

json dimension_to_json(const SearchDimension &d);

// ---------------------------------------------------------------------------
// Misc helpers
// ---------------------------------------------------------------------------

std::string utc_timestamp();
std::string read_file(const std::string &path);
void write_file_atomic(const std::string &path, std::string_view contents);
/// Filesystem-safe rendering of an identifier; appends a short digest when characters were replaced.
std::string safe_file_stem(std::string_view id);

}  // namespace benchkit
