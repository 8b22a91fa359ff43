#pragma once

// Run configuration files: one `dotted.key = value` per line, `#` starts a
// comment. Every key has a default; unknown keys are rejected.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tempo/trainer.hpp"

namespace tempo::config {

/// Applies the assignments in text on top of base. Errors carry source:line.
train::RunConfig parse(std::string_view text, train::RunConfig base = {}, const std::string& source = "config");

/// Applies one `key=value` assignment.
void apply_override(train::RunConfig& cfg, std::string_view assignment);

/// Reads path, then applies overrides in order, then validates.
train::RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Every key in a fixed order; parse(render(c)) == c.
std::string render(const train::RunConfig& cfg);

std::vector<std::string> keys();

}  // namespace tempo::config
