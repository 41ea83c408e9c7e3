#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pilrecon {

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Plain-text `key = value` record of a run. Configuration entries determine the outputs and
/// feed the config hash; inputs carry content hashes; outputs and timings are informational.
class RunManifest {
public:
    void set_config(const std::string& key, const std::string& value);
    void add_input(const std::string& name, const std::filesystem::path& path,
                   const std::string& content_hash);
    void add_output(const std::string& relative_path);
    void set_timing(const std::string& stage, double seconds);
    void set_note(const std::string& key, const std::string& value);

    const std::map<std::string, std::string>& config() const { return config_; }
    std::optional<std::string> config_value(const std::string& key) const;
    std::string require(const std::string& key) const;

    struct Input {
        std::string name;
        std::string path;
        std::string hash;
    };
    const std::vector<Input>& inputs() const { return inputs_; }
    const std::vector<std::string>& outputs() const { return outputs_; }
    const std::map<std::string, std::string>& notes() const { return notes_; }

    /// FNV-1a over the sorted configuration entries.
    std::string config_hash() const;

    std::string serialize() const;
    static RunManifest parse(std::string_view text);

private:
    std::map<std::string, std::string> config_;
    std::vector<Input> inputs_;
    std::vector<std::string> outputs_;
    std::map<std::string, double> timings_;
    std::map<std::string, std::string> notes_;
};

}  // namespace pilrecon
