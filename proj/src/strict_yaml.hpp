#pragma once

#include <string>
#include <string_view>

#include <yaml-cpp/yaml.h>

#include "benchkit/common.hpp"

namespace benchkit::detail {

/// Parses one YAML document, rejecting anchors, aliases, tags, complex or duplicate keys
/// and multiple documents. Throws ConfigError with the offending position.
YAML::Node load_strict_yaml(std::string_view text, const std::string &file);

SourceLocation yaml_location(const std::string &file, const YAML::Mark &mark);

}  // namespace benchkit::detail
