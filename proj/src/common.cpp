#include "benchkit/common.hpp"

#include <openssl/evp.h>

#include <fmt/format.h>

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <algorithm>
#include <limits>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace benchkit {

namespace {

std::string render_location(const SourceLocation &loc, const std::string &message) {
    std::string out = loc.file.empty() ? std::string("<input>") : loc.file;
    if (loc.line > 0) {
        out += fmt::format(":{}", loc.line);
        if (loc.column > 0) {
            out += fmt::format(":{}", loc.column);
        }
    }
    return out + ": " + message;
}

}  // namespace

ConfigError::ConfigError(SourceLocation loc, const std::string &message)
    : Error(render_location(loc, message)), loc_(std::move(loc)), message_(message) {}

std::array<std::uint8_t, 32> sha256_bytes(std::string_view data) {
    std::array<std::uint8_t, 32> out{};
    unsigned int len = 0;
    EVP_MD_CTX *ctx = EVP_MD_CTX_new();
    if (ctx == nullptr) {
        throw Error("sha256: context allocation failed");
    }
    const bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, data.data(), data.size()) == 1 &&
                    EVP_DigestFinal_ex(ctx, out.data(), &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok || len != out.size()) {
        throw Error("sha256: digest failed");
    }
    return out;
}

std::string sha256_hex(std::string_view data) {
    static constexpr char digits[] = "0123456789abcdef";
    const auto bytes = sha256_bytes(data);
    std::string hex;
    hex.reserve(64);
    for (const std::uint8_t b : bytes) {
        hex.push_back(digits[b >> 4]);
        hex.push_back(digits[b & 0xF]);
    }
    return hex;
}

std::uint64_t sha256_u64(std::string_view data) {
    const auto bytes = sha256_bytes(data);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v = (v << 8) | bytes[static_cast<std::size_t>(i)];
    }
    return v;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi <= lo) {
        return lo;
    }
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1ULL;
    if (span == 0) {  // full 64-bit range
        return static_cast<std::int64_t>(engine_());
    }
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - (std::numeric_limits<std::uint64_t>::max() % span);
    std::uint64_t x = engine_();
    while (x >= limit) {
        x = engine_();
    }
    return lo + static_cast<std::int64_t>(x % span);
}

double Rng::normal() {
    if (spare_normal_) {
        const double v = *spare_normal_;
        spare_normal_.reset();
        return v;
    }
    // Marsaglia polar method
    double u = 0.0;
    double v = 0.0;
    double s = 0.0;
    do {
        u = uniform(-1.0, 1.0);
        v = uniform(-1.0, 1.0);
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_normal_ = v * f;
    return u * f;
}

std::string format_real(double v) {
    if (std::isnan(v)) {
        return ".nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? ".inf" : "-.inf";
    }
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    std::string s(buf, res.ptr);
    if (s.find_first_of(".eE") == std::string::npos) {
        s += ".0";
    }
    return s;
}

std::string format_param(const ParamValue &v) {
    return std::visit(
        [](const auto &x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, std::int64_t>) {
                return std::to_string(x);
            } else if constexpr (std::is_same_v<T, double>) {
                return format_real(x);
            } else {
                return x;
            }
        },
        v);
}

ParamValue infer_param(std::string_view text) {
    if (text.empty()) {
        return std::string{};
    }
    {
        std::int64_t i = 0;
        const char *first = text.data();
        if (*first == '+') {
            ++first;
        }
        const auto res = std::from_chars(first, text.data() + text.size(), i);
        if (res.ec == std::errc{} && res.ptr == text.data() + text.size() && first != text.data() + text.size()) {
            return i;
        }
    }
    {
        double d = 0.0;
        const char *first = text.data();
        if (*first == '+') {
            ++first;
        }
        const auto res = std::from_chars(first, text.data() + text.size(), d);
        if (res.ec == std::errc{} && res.ptr == text.data() + text.size() && std::isfinite(d)) {
            return d;
        }
    }
    return std::string(text);
}

std::optional<double> param_as_real(const ParamValue &v) {
    if (const auto *i = std::get_if<std::int64_t>(&v)) {
        return static_cast<double>(*i);
    }
    if (const auto *d = std::get_if<double>(&v)) {
        return *d;
    }
    return std::nullopt;
}

std::optional<std::int64_t> param_as_int(const ParamValue &v) {
    if (const auto *i = std::get_if<std::int64_t>(&v)) {
        return *i;
    }
    if (const auto *d = std::get_if<double>(&v)) {
        if (std::isfinite(*d) && std::nearbyint(*d) == *d && std::abs(*d) < 9.0e18) {
            return static_cast<std::int64_t>(*d);
        }
    }
    return std::nullopt;
}

json param_to_json(const ParamValue &v) {
    return std::visit([](const auto &x) { return json(x); }, v);
}

ParamValue param_from_json(const json &j) {
    if (j.is_number_integer()) {
        return j.get<std::int64_t>();
    }
    if (j.is_number_float()) {
        return j.get<double>();
    }
    if (j.is_string()) {
        return j.get<std::string>();
    }
    if (j.is_boolean()) {
        return std::string(j.get<bool>() ? "true" : "false");
    }
    throw Error("parameter value must be a number or string, got: " + j.dump());
}

json params_to_json(const ParamSet &p) {
    json out = json::object();
    for (const auto &[k, v] : p) {
        out[k] = param_to_json(v);
    }
    return out;
}

ParamSet params_from_json(const json &j) {
    if (!j.is_object()) {
        throw Error("parameter set must be an object");
    }
    ParamSet out;
    for (const auto &[k, v] : j.items()) {
        out.emplace(k, param_from_json(v));
    }
    return out;
}

std::string_view to_string(DimensionKind k) {
    switch (k) {
        case DimensionKind::choice: return "choice";
        case DimensionKind::uniform: return "uniform";
        case DimensionKind::log_uniform: return "log_uniform";
        case DimensionKind::int_uniform: return "int_uniform";
    }
    return "?";
}

std::optional<DimensionKind> dimension_kind_from_string(std::string_view s) {
    if (s == "choice") return DimensionKind::choice;
    if (s == "uniform") return DimensionKind::uniform;
    if (s == "log_uniform") return DimensionKind::log_uniform;
    if (s == "int_uniform") return DimensionKind::int_uniform;
    return std::nullopt;
}

void SearchDimension::validate() const {
    if (name.empty()) {
        throw Error("search dimension has an empty name");
    }
    switch (kind) {
        case DimensionKind::choice:
            if (values.empty()) {
                throw Error(fmt::format("choice dimension '{}' has no values", name));
            }
            return;
        case DimensionKind::log_uniform:
            if (!(low > 0.0)) {
                throw Error(fmt::format("log_uniform dimension '{}' needs low > 0", name));
            }
            break;
        case DimensionKind::int_uniform:
            if (std::nearbyint(low) != low || std::nearbyint(high) != high) {
                throw Error(fmt::format("int_uniform dimension '{}' needs integer bounds", name));
            }
            break;
        case DimensionKind::uniform:
            break;
    }
    if (!std::isfinite(low) || !std::isfinite(high) || !(low < high)) {
        throw Error(fmt::format("dimension '{}' needs finite bounds with low < high", name));
    }
}

bool SearchDimension::contains(const ParamValue &v) const {
    switch (kind) {
        case DimensionKind::choice:
            return std::find(values.begin(), values.end(), v) != values.end();
        case DimensionKind::int_uniform: {
            const auto *i = std::get_if<std::int64_t>(&v);
            return i != nullptr && static_cast<double>(*i) >= low && static_cast<double>(*i) <= high;
        }
        case DimensionKind::uniform:
        case DimensionKind::log_uniform: {
            const auto *d = std::get_if<double>(&v);
            return d != nullptr && *d >= low && *d <= high;
        }
    }
    return false;
}

json dimension_to_json(const SearchDimension &d) {
    json j = {{"name", d.name}, {"kind", std::string(to_string(d.kind))}};
    if (d.kind == DimensionKind::choice) {
        json vals = json::array();
        for (const auto &v : d.values) {
            vals.push_back(param_to_json(v));
        }
        j["values"] = std::move(vals);
    } else if (d.kind == DimensionKind::int_uniform) {
        j["low"] = static_cast<std::int64_t>(d.low);
        j["high"] = static_cast<std::int64_t>(d.high);
    } else {
        j["low"] = d.low;
        j["high"] = d.high;
    }
    return j;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
    return fmt::format("{}.{:03d}Z", buf, static_cast<int>(ms));
}

std::string read_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot read file: " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::string &path, std::string_view contents) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot write file: " + path);
        }
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) {
            throw Error("write failed: " + path);
        }
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        throw Error("cannot move " + tmp + " into place: " + ec.message());
    }
}

std::string safe_file_stem(std::string_view id) {
    std::string out;
    bool replaced = false;
    for (const char c : id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-' || c == '.';
        out.push_back(ok ? c : '_');
        replaced = replaced || !ok;
    }
    if (replaced || out.empty()) {
        out += "-" + sha256_hex(id).substr(0, 8);
    }
    return out;
}

}  // namespace benchkit
