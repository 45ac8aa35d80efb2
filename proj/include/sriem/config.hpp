#pragma once

// Run configuration: defaults, flat key=value config files and overrides.

#include "sriem/dataset.hpp"
#include "sriem/model.hpp"
#include "sriem/trainer.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace sriem {

struct RunConfig {
    data::PreprocessConfig preprocess;
    data::ClickFormat format = data::ClickFormat::simple_sessions;
    model::ModelConfig model;
    train::TrainConfig train;
    std::size_t threads = 1;
    std::string data;       // raw click file or corpus cache
    std::string out = "runs";
    std::string checkpoint;
};

// Keys accepted by apply_setting, in the order to_settings emits them.
const std::vector<std::string>& setting_keys();

// Throws ConfigError for unknown keys or unparsable values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

// "key = value" lines; '#' starts a comment; blank lines ignored.
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

std::vector<std::pair<std::string, std::string>> to_settings(const RunConfig& config);
std::string to_text(const RunConfig& config);

} // namespace sriem
