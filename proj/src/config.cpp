#include "sparsecnn/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "sparsecnn/error.hpp"
#include "sparsecnn/network.hpp"

namespace sparsecnn {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> parts;
    if (trim(s).empty()) return parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        parts.push_back(trim(s.substr(start, pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return parts;
}

template <typename T>
T parse_number(std::string_view text) {
    T value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end) throw ConfigError(fmt::format("'{}' is not a valid number", text));
    return value;
}

bool parse_bool(std::string_view text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError(fmt::format("'{}' is not a boolean (true/false)", text));
}

std::vector<double> parse_doubles(std::string_view text) {
    std::vector<double> values;
    for (auto part : split(text, ',')) values.push_back(parse_number<double>(part));
    return values;
}

std::vector<CapStage> parse_stages(std::string_view text) {
    std::vector<CapStage> stages;
    for (auto part : split(text, ',')) {
        const auto colon = part.find(':');
        if (colon == std::string_view::npos) throw ConfigError(fmt::format("stage '{}' is not iteration:t", part));
        stages.push_back({parse_number<long>(trim(part.substr(0, colon))),
                          parse_number<std::size_t>(trim(part.substr(colon + 1)))});
    }
    return stages;
}

std::string format_doubles(const std::vector<double>& values) {
    return fmt::format("{}", fmt::join(values, ","));
}

std::string format_stages(const std::vector<CapStage>& stages) {
    std::vector<std::string> parts;
    for (const auto& s : stages) parts.push_back(fmt::format("{}:{}", s.iteration, s.cap));
    return fmt::format("{}", fmt::join(parts, ","));
}

template <typename Target>
struct Field {
    std::string_view key;
    std::function<void(Target&, std::string_view)> parse;
    std::function<std::string(const Target&)> print;
};

template <typename Target, typename Member>
Field<Target> number_field(std::string_view key, Member member) {
    using V = std::remove_reference_t<decltype(std::declval<Target&>().*member)>;
    return {key, [member](Target& t, std::string_view v) { t.*member = parse_number<V>(v); },
            [member](const Target& t) { return fmt::format("{}", t.*member); }};
}

template <typename Target, typename Member>
Field<Target> string_field(std::string_view key, Member member) {
    return {key, [member](Target& t, std::string_view v) { t.*member = std::string(v); },
            [member](const Target& t) { return t.*member; }};
}

template <typename Target, typename Member>
Field<Target> bool_field(std::string_view key, Member member) {
    return {key, [member](Target& t, std::string_view v) { t.*member = parse_bool(v); },
            [member](const Target& t) { return std::string(t.*member ? "true" : "false"); }};
}

template <typename Target, typename Member, typename Parse>
Field<Target> enum_field(std::string_view key, Member member, Parse parse) {
    return {key, [member, parse](Target& t, std::string_view v) { t.*member = parse(v); },
            [member](const Target& t) { return std::string(to_string(t.*member)); }};
}

template <typename Member>
Field<RunConfig> train_field(std::string_view key, Member member) {
    using V = std::remove_reference_t<decltype(std::declval<TrainConfig&>().*member)>;
    return {key, [member](RunConfig& c, std::string_view v) { c.train.*member = parse_number<V>(v); },
            [member](const RunConfig& c) { return fmt::format("{}", c.train.*member); }};
}

const std::vector<Field<RunConfig>>& global_fields() {
    static const std::vector<Field<RunConfig>> fields = {
        enum_field<RunConfig>("command", &RunConfig::command, parse_command),
        string_field<RunConfig>("topology", &RunConfig::topology),
        string_field<RunConfig>("dataset", &RunConfig::dataset),
        string_field<RunConfig>("data_dir", &RunConfig::data_dir),
        number_field<RunConfig>("train_subset", &RunConfig::train_subset),
        number_field<RunConfig>("test_subset", &RunConfig::test_subset),
        bool_field<RunConfig>("subtract_mean", &RunConfig::subtract_mean),
        string_field<RunConfig>("checkpoint", &RunConfig::checkpoint),
        string_field<RunConfig>("out", &RunConfig::out),
        number_field<RunConfig>("jobs", &RunConfig::jobs),
        train_field("seed", &TrainConfig::seed),
        train_field("batch_size", &TrainConfig::batch_size),
        train_field("base_lr", &TrainConfig::base_lr),
        train_field("lr_gamma", &TrainConfig::lr_gamma),
        train_field("lr_step", &TrainConfig::lr_step),
        train_field("momentum", &TrainConfig::momentum),
        train_field("max_iterations", &TrainConfig::max_iterations),
        train_field("eval_interval", &TrainConfig::eval_interval),
        train_field("eval_examples", &TrainConfig::eval_examples),
        enum_field<RunConfig>("default_kind", &RunConfig::default_kind, parse_reg_kind),
        number_field<RunConfig>("default_lambda", &RunConfig::default_lambda),
        enum_field<RunConfig>("l1_delta_mode", &RunConfig::l1_delta_mode, parse_delta_mode),
        enum_field<RunConfig>("checkpoint_encoding", &RunConfig::checkpoint_encoding, parse_checkpoint_encoding),
        number_field<RunConfig>("val_fraction", &RunConfig::val_fraction),
        number_field<RunConfig>("target_nnz", &RunConfig::target_nnz),
        number_field<RunConfig>("target_ratio", &RunConfig::target_ratio),
        number_field<RunConfig>("finetune_iterations", &RunConfig::finetune_iterations),
        number_field<RunConfig>("l0_period", &RunConfig::l0_period),
        {"deltas", [](RunConfig& c, std::string_view v) { c.deltas = parse_doubles(v); },
         [](const RunConfig& c) { return format_doubles(c.deltas); }},
        number_field<RunConfig>("ensemble_size", &RunConfig::ensemble_size),
        number_field<RunConfig>("budget", &RunConfig::budget),
        number_field<RunConfig>("trials", &RunConfig::trials),
        string_field<RunConfig>("plan_log", &RunConfig::plan_log),
        {"fractions", [](RunConfig& c, std::string_view v) { c.fractions = parse_doubles(v); },
         [](const RunConfig& c) { return format_doubles(c.fractions); }},
        number_field<RunConfig>("sparse_ratio", &RunConfig::sparse_ratio),
        enum_field<RunConfig>("units", &RunConfig::units, parse_byte_unit),
        number_field<RunConfig>("value_bytes", &RunConfig::value_bytes),
    };
    return fields;
}

const std::vector<Field<RegSpec>>& layer_fields() {
    static const std::vector<Field<RegSpec>> fields = {
        enum_field<RegSpec>("kind", &RegSpec::kind, parse_reg_kind),
        number_field<RegSpec>("lambda", &RegSpec::lambda),
        number_field<RegSpec>("t", &RegSpec::cap),
        number_field<RegSpec>("period", &RegSpec::period),
        bool_field<RegSpec>("biases", &RegSpec::apply_to_biases),
        {"stages", [](RegSpec& s, std::string_view v) { s.stages = parse_stages(v); },
         [](const RegSpec& s) { return format_stages(s.stages); }},
    };
    return fields;
}

template <typename Target>
const Field<Target>* find_field(const std::vector<Field<Target>>& fields, std::string_view key) {
    for (const auto& f : fields) {
        if (f.key == key) return &f;
    }
    return nullptr;
}

[[noreturn]] void fail_at(std::size_t line, std::string_view message) {
    throw ConfigError(fmt::format("line {}: {}", line, message));
}

}  // namespace

const char* to_string(Command command) {
    switch (command) {
        case Command::train: return "train";
        case Command::sparsify_greedy: return "sparsify-greedy";
        case Command::threshold_compare: return "threshold-compare";
        case Command::ensemble: return "ensemble";
        case Command::data_sweep: return "data-sweep";
        case Command::memory_report: return "memory-report";
        case Command::eval: return "eval";
    }
    return "?";
}

Command parse_command(std::string_view text) {
    for (auto c : {Command::train, Command::sparsify_greedy, Command::threshold_compare, Command::ensemble,
                   Command::data_sweep, Command::memory_report, Command::eval}) {
        if (text == to_string(c)) return c;
    }
    throw ConfigError(fmt::format("unknown command '{}'", text));
}

RegSpecs RunConfig::resolve_specs(const std::vector<std::string>& layer_names) const {
    RegSpecs specs;
    for (const auto& name : layer_names) {
        RegSpec spec;
        if (auto it = layers.find(name); it != layers.end()) {
            spec = it->second;
        } else {
            spec.kind = default_kind;
            spec.lambda = default_lambda;
        }
        spec.delta_mode = l1_delta_mode;
        specs[name] = spec;
    }
    return specs;
}

RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    std::set<std::string> seen_global;
    std::map<std::string, std::set<std::string>> seen_layer;
    std::map<std::string, std::size_t> block_lines;
    std::size_t topology_line = 0;
    std::string current_layer;
    std::size_t line_no = 0;

    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = raw;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']' || !line.starts_with("[layer:")) fail_at(line_no, fmt::format("bad section header '{}'", line));
            const auto name = std::string(trim(line.substr(7, line.size() - 8)));
            if (name.empty()) fail_at(line_no, "empty layer name");
            if (block_lines.contains(name)) fail_at(line_no, fmt::format("layer block '{}' repeated", name));
            block_lines[name] = line_no;
            cfg.layers[name] = RegSpec{};
            current_layer = name;
            continue;
        }

        const auto eq = line.find('=');
        if (eq == std::string_view::npos) fail_at(line_no, fmt::format("expected key = value, got '{}'", line));
        const auto key = std::string(trim(line.substr(0, eq)));
        const auto value = trim(line.substr(eq + 1));

        try {
            if (current_layer.empty()) {
                const auto* field = find_field(global_fields(), key);
                if (!field) fail_at(line_no, fmt::format("unknown key '{}'", key));
                if (!seen_global.insert(key).second) fail_at(line_no, fmt::format("duplicate key '{}'", key));
                if (key == "topology") topology_line = line_no;
                field->parse(cfg, value);
            } else {
                const auto* field = find_field(layer_fields(), key);
                if (!field) fail_at(line_no, fmt::format("unknown key '{}' in layer block '{}'", key, current_layer));
                if (!seen_layer[current_layer].insert(key).second) {
                    fail_at(line_no, fmt::format("duplicate key '{}' in layer block '{}'", key, current_layer));
                }
                field->parse(cfg.layers[current_layer], value);
            }
        } catch (const ConfigError& e) {
            if (std::string_view(e.what()).starts_with("line ")) throw;
            fail_at(line_no, fmt::format("{}: {}", key, e.what()));
        }
    }

    std::vector<std::string> names;
    try {
        names = build_topology<float>(cfg.topology).parameter_layer_names();
    } catch (const ConfigError& e) {
        fail_at(topology_line, e.what());
    }
    for (const auto& [name, spec] : cfg.layers) {
        const auto line = block_lines.at(name);
        if (std::find(names.begin(), names.end(), name) == names.end()) {
            fail_at(line, fmt::format("topology {} has no layer '{}' (layers: {})", cfg.topology, name,
                                      fmt::join(names, ", ")));
        }
        if (spec.kind == RegKind::l0_projection && !seen_layer[name].contains("t")) {
            fail_at(line, fmt::format("layer '{}' uses l0_projection but sets no t", name));
        }
        try {
            spec.validate();
        } catch (const ConfigError& e) {
            fail_at(line, fmt::format("layer '{}': {}", name, e.what()));
        }
    }
    validate_config(cfg);
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    try {
        return parse_config(text.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string serialize_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& f : global_fields()) out += fmt::format("{} = {}\n", f.key, f.print(cfg));
    for (const auto& [name, spec] : cfg.layers) {
        out += fmt::format("\n[layer:{}]\n", name);
        for (const auto& f : layer_fields()) {
            if (f.key == "t" && spec.kind != RegKind::l0_projection && spec.cap == 0) continue;
            if (f.key == "stages" && spec.stages.empty()) continue;
            out += fmt::format("{} = {}\n", f.key, f.print(spec));
        }
    }
    return out;
}

void validate_config(const RunConfig& cfg) {
    cfg.train.validate();
    if (cfg.dataset != "mnist" && cfg.dataset != "cifar10") {
        throw ConfigError(fmt::format("dataset must be mnist or cifar10, got '{}'", cfg.dataset));
    }
    if (cfg.default_kind == RegKind::l0_projection) {
        throw ConfigError("default_kind cannot be l0_projection; set t in a [layer:NAME] block");
    }
    if (cfg.default_lambda < 0.0) throw ConfigError("default_lambda must be >= 0");
    if (cfg.jobs < 1) throw ConfigError("jobs must be >= 1");
    if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0)) throw ConfigError("val_fraction must be in (0, 1)");
    if (!(cfg.target_ratio > 0.0 && cfg.target_ratio <= 1.0)) throw ConfigError("target_ratio must be in (0, 1]");
    if (cfg.finetune_iterations < 1) throw ConfigError("finetune_iterations must be >= 1");
    if (cfg.l0_period < 1) throw ConfigError("l0_period must be >= 1");
    if (cfg.ensemble_size < 1) throw ConfigError("ensemble_size must be >= 1");
    if (cfg.trials < 1) throw ConfigError("trials must be >= 1");
    if (!(cfg.sparse_ratio > 0.0 && cfg.sparse_ratio <= 1.0)) throw ConfigError("sparse_ratio must be in (0, 1]");
    if (cfg.value_bytes != 4 && cfg.value_bytes != 8) throw ConfigError("value_bytes must be 4 or 8");
    for (double f : cfg.fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError(fmt::format("fraction {} outside (0, 1]", f));
    }
    for (double d : cfg.deltas) {
        if (!(d >= 0.0) || !std::isfinite(d)) throw ConfigError(fmt::format("delta {} must be finite and >= 0", d));
    }
    switch (cfg.command) {
        case Command::threshold_compare:
            if (cfg.deltas.empty()) throw ConfigError("threshold-compare needs deltas");
            break;
        case Command::data_sweep:
            if (cfg.fractions.empty()) throw ConfigError("data-sweep needs fractions");
            break;
        case Command::eval:
            if (cfg.checkpoint.empty()) throw ConfigError("eval needs checkpoint");
            break;
        default: break;
    }
}

}  // namespace sparsecnn
