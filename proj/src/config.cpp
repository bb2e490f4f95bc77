#include "cmn/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cmn/errors.hpp"

namespace cmn {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::size_t parse_size(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
        v = std::stoull(value, &used);
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + value + "'");
    }
    if (used != value.size()) throw ConfigError("key '" + key + "' expects an integer, got '" + value + "'");
    return static_cast<std::size_t>(v);
}

Real parse_real(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    Real v = 0.0;
    try {
        v = std::stod(value, &used);
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects a number, got '" + value + "'");
    }
    if (used != value.size()) throw ConfigError("key '" + key + "' expects a number, got '" + value + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true" || value == "on") return true;
    if (value == "0" || value == "false" || value == "off") return false;
    throw ConfigError("key '" + key + "' expects a boolean, got '" + value + "'");
}

std::string real_text(Real v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

}  // namespace

void RunConfig::apply_preset(const std::string& name) {
    const auto keep_manifest = manifest;
    const auto keep_output = output_dir;
    *this = RunConfig{};
    manifest = keep_manifest;
    output_dir = keep_output;
    preset = name;
    if (name == "paper") return;
    if (name == "desk") {
        model.layers = 2;
        model.heads = 4;
        model.d_model = 32;
        model.d_ff = 64;
        model.max_positions = 64;
        model.memory_slots = 64;
        model.topk = 8;
        model.memory_heads = 4;
        model.dropout = 0.0;
        model.residual_response = true;
        schedule = {2.5e-3, 5e-3, 0.95};
        epochs = 30;
        batch_size = 8;
        beam_size = 3;
        max_len = 63;
        return;
    }
    if (name == "micro") {
        model.layers = 1;
        model.heads = 2;
        model.d_model = 16;
        model.d_ff = 32;
        model.max_positions = 64;
        model.memory_slots = 16;
        model.topk = 4;
        model.memory_heads = 2;
        model.dropout = 0.0;
        model.residual_response = true;
        schedule = {1e-3, 3e-3, 1.0};
        epochs = 2;
        batch_size = 8;
        beam_size = 2;
        max_len = 63;
        return;
    }
    throw ConfigError("unknown preset '" + name + "' (expected paper, desk or micro)");
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "preset") apply_preset(value);
    else if (key == "variant") {
        try {
            model.variant = parse_variant(value);
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
    }
    else if (key == "layers") model.layers = parse_size(key, value);
    else if (key == "heads") model.heads = parse_size(key, value);
    else if (key == "d_model") model.d_model = parse_size(key, value);
    else if (key == "d_ff") model.d_ff = parse_size(key, value);
    else if (key == "max_positions") model.max_positions = parse_size(key, value);
    else if (key == "memory_slots") model.memory_slots = parse_size(key, value);
    else if (key == "topk") model.topk = parse_size(key, value);
    else if (key == "memory_heads") model.memory_heads = parse_size(key, value);
    else if (key == "dropout") model.dropout = parse_real(key, value);
    else if (key == "residual_response") model.residual_response = parse_bool(key, value);
    else if (key == "visual_positional") model.visual_positional = parse_bool(key, value);
    else if (key == "lr_visual") schedule.lr_visual = parse_real(key, value);
    else if (key == "lr_other") schedule.lr_other = parse_real(key, value);
    else if (key == "decay") schedule.decay = parse_real(key, value);
    else if (key == "epochs") epochs = parse_size(key, value);
    else if (key == "batch_size") batch_size = parse_size(key, value);
    else if (key == "grad_clip") grad_clip = parse_real(key, value);
    else if (key == "max_steps") max_steps = parse_size(key, value);
    else if (key == "seed") seed = parse_size(key, value);
    else if (key == "manifest") manifest = value;
    else if (key == "patch") patch = parse_size(key, value);
    else if (key == "feature_dim") feature_dim = parse_size(key, value);
    else if (key == "min_count") min_count = parse_size(key, value);
    else if (key == "beam_size") beam_size = parse_size(key, value);
    else if (key == "max_len") max_len = parse_size(key, value);
    else if (key == "alpha") alpha = parse_real(key, value);
    else if (key == "select_split") {
        if (value != "val" && value != "test" && value != "train")
            throw ConfigError("select_split must be train, val or test");
        select_split = value;
    }
    else if (key == "output_dir") output_dir = value;
    else throw ConfigError("unknown config key '" + key + "'");
    explicit_keys.insert(key);
}

std::vector<std::pair<std::string, std::string>> RunConfig::to_pairs() const {
    const auto b = [](bool v) { return std::string(v ? "1" : "0"); };
    return {
        {"preset", preset},
        {"variant", to_string(model.variant)},
        {"layers", std::to_string(model.layers)},
        {"heads", std::to_string(model.heads)},
        {"d_model", std::to_string(model.d_model)},
        {"d_ff", std::to_string(model.d_ff)},
        {"max_positions", std::to_string(model.max_positions)},
        {"memory_slots", std::to_string(model.memory_slots)},
        {"topk", std::to_string(model.topk)},
        {"memory_heads", std::to_string(model.memory_heads)},
        {"dropout", real_text(model.dropout)},
        {"residual_response", b(model.residual_response)},
        {"visual_positional", b(model.visual_positional)},
        {"lr_visual", real_text(schedule.lr_visual)},
        {"lr_other", real_text(schedule.lr_other)},
        {"decay", real_text(schedule.decay)},
        {"epochs", std::to_string(epochs)},
        {"batch_size", std::to_string(batch_size)},
        {"grad_clip", real_text(grad_clip)},
        {"max_steps", std::to_string(max_steps)},
        {"seed", std::to_string(seed)},
        {"manifest", manifest.string()},
        {"patch", std::to_string(patch)},
        {"feature_dim", std::to_string(feature_dim)},
        {"min_count", std::to_string(min_count)},
        {"beam_size", std::to_string(beam_size)},
        {"max_len", std::to_string(max_len)},
        {"alpha", real_text(alpha)},
        {"select_split", select_split},
        {"output_dir", output_dir.string()},
    };
}

void RunConfig::write(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw FileError("cannot write config " + path.string());
    for (const auto& [k, v] : to_pairs()) out << k << " = " << v << '\n';
    if (!out) throw FileError("write failed for config " + path.string());
}

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + " lacks '='");
        auto key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has an empty key");
        out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
    }
    return out;
}

RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
    std::vector<std::pair<std::string, std::string>> pairs;
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) throw FileError("cannot open config " + file.string());
        std::stringstream buffer;
        buffer << in.rdbuf();
        pairs = parse_key_values(buffer.str());
    }
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
        pairs.emplace_back(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
    }
    RunConfig cfg;
    // The last preset wins and goes first so explicit keys override it.
    const auto preset = std::find_if(pairs.rbegin(), pairs.rend(), [](const auto& p) { return p.first == "preset"; });
    if (preset != pairs.rend()) cfg.set("preset", preset->second);
    for (const auto& [k, v] : pairs)
        if (k != "preset") cfg.set(k, v);
    if (const char* env = std::getenv("CMN_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
    return cfg;
}

}  // namespace cmn
