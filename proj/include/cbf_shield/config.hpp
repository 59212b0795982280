#pragma once

// Flat key-value configuration (dotted section keys, '#' comments) and its
// mapping onto a ScenarioConfig. Serialization is canonical: sorted keys,
// 17 significant digits, so effective configs round-trip byte-identically.

#include <map>
#include <string>

#include "cbf_shield/scenarios.hpp"

namespace cbf {

struct FlatConfig {
    std::map<std::string, std::string> kv;

    static FlatConfig parse_file(const std::string& path);
    static FlatConfig parse_text(const std::string& text, const std::string& origin);

    bool has(const std::string& key) const { return kv.count(key) != 0; }
    const std::string& get(const std::string& key) const;
    void set(const std::string& key, const std::string& value) { kv[key] = value; }

    // "key=value" (as passed to --set)
    void apply_override(const std::string& assignment);

    void merge_from(const FlatConfig& other) {
        for (const auto& [k, v] : other.kv) kv[k] = v;
    }

    std::string serialize() const;
};

// Canonical defaults per scenario kind ("sphere" | "pointcloud").
FlatConfig default_config(const std::string& kind);

// Validates every key (unknown keys are errors) and assembles the scenario.
ScenarioConfig build_scenario(const FlatConfig& cfg);

std::string format_g17(double v);

}  // namespace cbf
