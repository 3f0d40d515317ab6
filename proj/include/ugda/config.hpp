#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ugda {

// One registered key: its canonical name, default, and a one-line doc string.
struct ConfigEntry {
    std::string key;
    std::string def;
    std::string doc;
};

// ============================================================================
// RunConfig: flat key=value configuration with a closed registry.
//
// Layering order (later wins): registry defaults -> config file(s) in the
// order given -> UGDA_* environment variables -> --set command-line overrides.
// Unknown keys are rejected with an error naming the key.  serialize() and
// parse() round-trip, and hash() fingerprints the exact configuration for
// checkpoint compatibility checks.
// ============================================================================
class RunConfig {
public:
    RunConfig(); // all registry defaults

    static const std::vector<ConfigEntry>& registry();

    // Layered sources.
    void load_file(const std::string& path);
    void apply_env(const std::string& prefix = "UGDA_");
    void set(const std::string& key, const std::string& value); // rejects unknown keys

    // Typed access.  Getters throw ConfigError on malformed values.
    const std::string& get(const std::string& key) const;
    double get_double(const std::string& key) const;
    std::int64_t get_int(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<std::string> get_list(const std::string& key) const; // comma-split

    // Canonical text form: sorted "key=value" lines.
    std::string serialize() const;
    static RunConfig parse(const std::string& text);

    // FNV-1a over serialize().
    std::uint64_t hash() const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

// "meta.eta" -> "UGDA_META_ETA"
std::string env_name_for_key(const std::string& key, const std::string& prefix);

} // namespace ugda
