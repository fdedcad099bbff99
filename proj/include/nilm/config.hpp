#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace nilm {

struct ConfigKey {
    std::string name;
    std::string default_value;
    std::vector<std::string> commands;  // verbs the key applies to
    std::string help;
    std::map<std::string, std::string> command_defaults = {};  // per-verb overrides of default_value
};

// Every recognised key.
const std::vector<ConfigKey>& config_keys();
const std::vector<std::string>& command_names();

// Resolved parameters of one command: defaults <- file <- flags.
//
// File format: `key = value` lines, `#` comments, and `[command]` sections.
// Keys before any section are global and are ignored by commands they do
// not apply to; keys inside a section must apply to that command.
class RunConfig {
   public:
    explicit RunConfig(std::string command);

    const std::string& command() const { return command_; }

    void merge_text(std::string_view text, const std::string& origin = "config");
    void merge_file(const std::filesystem::path& path);
    // Throws UsageError if the key does not apply to this command.
    void set(const std::string& key, const std::string& value);
    // "key=value"
    void set_assignment(const std::string& assignment);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::string& get(const std::string& key) const;
    double get_double(const std::string& key) const;
    std::size_t get_size(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    // Comma-separated list; empty string gives an empty list.
    std::vector<std::string> get_list(const std::string& key) const;
    std::vector<double> get_double_list(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }

    // "command=<verb>" followed by sorted "key=value" lines; out_dir is
    // excluded because it only says where outputs go.
    std::string canonical() const;
    std::uint64_t hash() const;
    std::string hash_hex() const;

   private:
    std::string command_;
    std::map<std::string, std::string> values_;
};

// Parses "0.5", "1/8", "-2e-3". Throws UsageError.
double parse_number(std::string_view text, const std::string& what);

}  // namespace nilm
