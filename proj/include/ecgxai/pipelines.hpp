#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ecgxai/io_util.hpp"
#include "ecgxai/synth.hpp"

namespace ecgxai::pipelines {

/// Invalid or unknown configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

const std::vector<std::string>& commands();

/// Every key the command accepts, with its default value.
io::Json defaults(std::string_view command);

/// Defaults overlaid with `overrides`. Unknown keys and type mismatches throw
/// ConfigError. The result starts with "command" and is what config.json holds.
io::Json resolve(std::string_view command, const io::Json& overrides);

/// Generator settings from a resolved "synth" configuration; validated.
SynthConfig synth_config(const io::Json& resolved);

/// Resolves, writes config.json and log.txt into `out` and runs the command.
/// `jobs` caps worker threads and never changes outputs.
void run(std::string_view command, const io::Json& overrides, const std::filesystem::path& out, std::size_t jobs = 1);

}  // namespace ecgxai::pipelines
