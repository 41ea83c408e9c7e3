#include "pilrecon/manifest.hpp"

#include <iomanip>
#include <sstream>

#include "pilrecon/errors.hpp"

namespace pilrecon {
namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

void check_key(const std::string& key) {
    if (key.empty() || key.find_first_of("= \t\n#") != std::string::npos) {
        throw FormatError("invalid manifest key '" + key + "'");
    }
}

void check_value(const std::string& value) {
    if (value.find('\n') != std::string::npos) {
        throw FormatError("manifest values cannot contain newlines");
    }
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

void RunManifest::set_config(const std::string& key, const std::string& value) {
    check_key(key);
    check_value(value);
    config_[key] = value;
}

void RunManifest::add_input(const std::string& name, const std::filesystem::path& path,
                            const std::string& content_hash) {
    check_key(name);
    check_value(path.string());
    inputs_.push_back({name, path.string(), content_hash});
}

void RunManifest::add_output(const std::string& relative_path) {
    check_value(relative_path);
    outputs_.push_back(relative_path);
}

void RunManifest::set_timing(const std::string& stage, double seconds) {
    check_key(stage);
    timings_[stage] = seconds;
}

void RunManifest::set_note(const std::string& key, const std::string& value) {
    check_key(key);
    check_value(value);
    notes_[key] = value;
}

std::optional<std::string> RunManifest::config_value(const std::string& key) const {
    const auto it = config_.find(key);
    if (it == config_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::string RunManifest::require(const std::string& key) const {
    auto v = config_value(key);
    if (!v) {
        throw FormatError("manifest lacks config." + key);
    }
    return *v;
}

std::string RunManifest::config_hash() const {
    std::string canon;
    for (const auto& [k, v] : config_) {
        canon += k;
        canon += '=';
        canon += v;
        canon += '\n';
    }
    return hex64(fnv1a64(canon));
}

std::string RunManifest::serialize() const {
    std::ostringstream os;
    os << "# pilrecon run manifest\n";
    os << "config_hash = " << config_hash() << "\n";
    for (const auto& [k, v] : config_) {
        os << "config." << k << " = " << v << "\n";
    }
    for (const auto& in : inputs_) {
        os << "input." << in.name << " = " << in.path << "\n";
        os << "input_hash." << in.name << " = " << in.hash << "\n";
    }
    for (const auto& [k, v] : notes_) {
        os << "note." << k << " = " << v << "\n";
    }
    for (std::size_t i = 0; i < outputs_.size(); ++i) {
        os << "output." << std::setw(4) << std::setfill('0') << i << " = " << outputs_[i] << "\n";
    }
    for (const auto& [k, v] : timings_) {
        os << "seconds." << k << " = " << std::setprecision(6) << v << "\n";
    }
    return os.str();
}

RunManifest RunManifest::parse(std::string_view text) {
    RunManifest m;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    std::optional<std::string> declared_hash;
    std::map<std::string, std::string> input_paths;
    std::map<std::string, std::string> input_hashes;
    std::vector<std::string> input_order;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') {
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw FormatError("manifest line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        auto starts = [&](std::string_view p) { return key.rfind(p, 0) == 0; };
        if (key == "config_hash") {
            declared_hash = value;
        } else if (starts("config.")) {
            m.config_[key.substr(7)] = value;
        } else if (starts("input_hash.")) {
            input_hashes[key.substr(11)] = value;
        } else if (starts("input.")) {
            const std::string name = key.substr(6);
            input_paths[name] = value;
            input_order.push_back(name);
        } else if (starts("note.")) {
            m.notes_[key.substr(5)] = value;
        } else if (starts("output.")) {
            m.outputs_.push_back(value);
        } else if (starts("seconds.")) {
            try {
                m.timings_[key.substr(8)] = std::stod(value);
            } catch (const std::exception&) {
                throw FormatError("manifest line " + std::to_string(lineno) + ": bad timing");
            }
        } else {
            throw FormatError("manifest line " + std::to_string(lineno) + ": unknown key '" + key +
                              "'");
        }
    }
    for (const auto& name : input_order) {
        m.inputs_.push_back({name, input_paths[name], input_hashes[name]});
    }
    if (declared_hash && *declared_hash != m.config_hash()) {
        throw FormatError("manifest config_hash " + *declared_hash +
                          " does not match its config entries (" + m.config_hash() + ")");
    }
    return m;
}

}  // namespace pilrecon
