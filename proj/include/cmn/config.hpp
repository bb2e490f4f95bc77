#pragma once

// Run configuration: model, schedule, data, search and output settings.
//
// Files hold "key = value" lines; '#' starts a comment. A `preset` key
// (paper, desk, micro) is applied before every other key regardless of its
// position, so explicit keys always win.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cmn/search.hpp"
#include "cmn/trainer.hpp"
#include "cmn/transformer.hpp"

namespace cmn {

struct RunConfig {
    std::string preset = "paper";
    ModelConfig model;
    Schedule schedule;

    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    Real grad_clip = 0.0;
    std::size_t max_steps = 0;
    std::uint64_t seed = 0;

    std::filesystem::path manifest;
    std::size_t patch = 4;
    /// Expected feature width for feature-file manifests (0 = any).
    std::size_t feature_dim = 0;
    std::size_t min_count = 1;

    std::size_t beam_size = 3;
    std::size_t max_len = 60;
    Real alpha = 0.0;
    /// Split scored after each epoch to pick the best checkpoint.
    std::string select_split = "val";

    std::filesystem::path output_dir = "runs/default";

    /// Keys given explicitly (file or override), as opposed to defaults.
    std::set<std::string> explicit_keys;

    void set(const std::string& key, const std::string& value);
    void apply_preset(const std::string& name);
    /// Resolved settings in a stable order, for writing next to outputs.
    std::vector<std::pair<std::string, std::string>> to_pairs() const;
    void write(const std::filesystem::path& path) const;
    bool is_explicit(const std::string& key) const { return explicit_keys.count(key) != 0; }
};

/// Parses "key = value" text into ordered pairs. Throws ConfigError on a
/// malformed line.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text);

/// Builds a config from an optional file plus "key=value" overrides applied
/// in order. The CMN_OUTPUT_DIR environment variable overrides output_dir.
RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

}  // namespace cmn
