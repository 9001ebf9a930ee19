#include <algorithm>
#include <fstream>
#include <sstream>

#include "detail.hpp"
#include "selfrepair/errors.hpp"
#include "selfrepair/experiment.hpp"

namespace selfrepair {

ModelConfig default_toy_config() {
    ModelConfig c;
    c.n_layers = 4;
    c.n_heads = 8;
    c.d_model = 128;
    c.d_head = 16;
    c.d_mlp = 512;
    c.vocab_size = 256;
    c.max_seq = 64;
    c.parallel_attention = true;
    c.norm_kind = NormKind::LayerNorm;
    c.positional_kind = PositionalKind::Rotary;
    c.activation_kind = ActivationKind::Gelu;
    return c;
}

namespace {

const char* kExperimentKinds[] = {"head-sweep", "ln-analysis", "breakdown", "neuron-analysis",
                                  "reinjection"};

bool known_experiment(const std::string& kind) {
    return std::find(std::begin(kExperimentKinds), std::end(kExperimentKinds), kind) !=
           std::end(kExperimentKinds);
}

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(s);
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config key \"" + key + "\" expects true or false, got \"" + value + "\"");
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const std::int64_t v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("config key \"" + key + "\" expects an integer, got \"" + value + "\"");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("config key \"" + key + "\" expects a number, got \"" + value + "\"");
    }
}

} // namespace

ExperimentConfig ExperimentConfig::parse_text(const std::string& text) {
    ExperimentConfig cfg;
    std::stringstream stream(text);
    std::string line;
    int line_no = 0;
    while (std::getline(stream, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              " is not \"key = value\": " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + " has no key");

        if (key == "experiment") cfg.experiment = value;
        else if (key == "model_path") cfg.model_path = value;
        else if (key == "toy_seed") cfg.toy_seed = static_cast<std::uint64_t>(parse_int(key, value));
        else if (key == "toy_layers") cfg.toy_config.n_layers = static_cast<int>(parse_int(key, value));
        else if (key == "toy_heads") cfg.toy_config.n_heads = static_cast<int>(parse_int(key, value));
        else if (key == "toy_d_model") cfg.toy_config.d_model = static_cast<int>(parse_int(key, value));
        else if (key == "toy_d_head") cfg.toy_config.d_head = static_cast<int>(parse_int(key, value));
        else if (key == "toy_d_mlp") cfg.toy_config.d_mlp = static_cast<int>(parse_int(key, value));
        else if (key == "toy_vocab") cfg.toy_config.vocab_size = static_cast<int>(parse_int(key, value));
        else if (key == "toy_max_seq") cfg.toy_config.max_seq = static_cast<int>(parse_int(key, value));
        else if (key == "toy_parallel") cfg.toy_config.parallel_attention = parse_bool(key, value);
        else if (key == "toy_norm") cfg.toy_config.norm_kind = norm_kind_from_string(value);
        else if (key == "toy_positional")
            cfg.toy_config.positional_kind = positional_kind_from_string(value);
        else if (key == "toy_activation")
            cfg.toy_config.activation_kind = activation_kind_from_string(value);
        else if (key == "corpus_path") cfg.corpus_path = value;
        else if (key == "ablation") cfg.ablation = split_list(value);
        else if (key == "targets") {
            cfg.targets.clear();
            if (value != "all")
                for (const std::string& name : split_list(value))
                    cfg.targets.push_back(ComponentId::parse(name));
        } else if (key == "neuron_layer") cfg.neuron_layer = static_cast<int>(parse_int(key, value));
        else if (key == "fraction") cfg.fraction = parse_double(key, value);
        else if (key == "alphas") {
            cfg.alphas.clear();
            for (const std::string& a : split_list(value)) cfg.alphas.push_back(parse_double(key, a));
        } else if (key == "output_path") cfg.output_path = value;
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
        else if (key == "emit_tokens") cfg.emit_tokens = parse_bool(key, value);
        else if (key == "format") cfg.format = value;
        else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(key, value));
        else if (key == "threads") cfg.threads = static_cast<int>(parse_int(key, value));
        else if (key == "truncate") cfg.truncate = parse_bool(key, value);
        else if (key == "resample_shuffle") cfg.resample_shuffle = parse_bool(key, value);
        else if (key == "freeze_downstream") cfg.freeze_downstream = parse_bool(key, value);
        else if (key == "freeze_final_scale") cfg.freeze_final_scale = parse_bool(key, value);
        else if (key == "emit_unclipped") cfg.emit_unclipped = parse_bool(key, value);
        else if (key == "n_sequences") cfg.n_sequences = static_cast<int>(parse_int(key, value));
        else if (key == "seq_len") cfg.seq_len = static_cast<int>(parse_int(key, value));
        else throw ConfigError("unknown config key: " + key);
    }
    return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open config file");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_text(buffer.str());
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::echo() const {
    std::vector<std::pair<std::string, std::string>> out;
    auto add = [&](const std::string& k, const std::string& v) { out.emplace_back(k, v); };
    add("experiment", experiment);
    if (!model_path.empty()) add("model_path", model_path);
    if (toy_seed) {
        add("toy_seed", std::to_string(*toy_seed));
        add("toy_layers", std::to_string(toy_config.n_layers));
        add("toy_heads", std::to_string(toy_config.n_heads));
        add("toy_d_model", std::to_string(toy_config.d_model));
        add("toy_d_head", std::to_string(toy_config.d_head));
        add("toy_d_mlp", std::to_string(toy_config.d_mlp));
        add("toy_vocab", std::to_string(toy_config.vocab_size));
        add("toy_max_seq", std::to_string(toy_config.max_seq));
        add("toy_parallel", toy_config.parallel_attention ? "true" : "false");
        add("toy_norm", to_string(toy_config.norm_kind));
        add("toy_positional", to_string(toy_config.positional_kind));
        add("toy_activation", to_string(toy_config.activation_kind));
    }
    if (!corpus_path.empty()) add("corpus_path", corpus_path);
    {
        std::string modes;
        for (const std::string& m : ablation) modes += (modes.empty() ? "" : ",") + m;
        add("ablation", modes);
    }
    {
        std::string names;
        for (const ComponentId& t : targets) names += (names.empty() ? "" : ",") + t.str();
        add("targets", names.empty() ? "all" : names);
    }
    add("neuron_layer", std::to_string(neuron_layer));
    add("fraction", detail::format_double(fraction));
    {
        std::string list;
        for (double a : alphas) list += (list.empty() ? "" : ",") + detail::format_double(a);
        add("alphas", list);
    }
    add("output_path", output_path);
    add("seed", std::to_string(seed));
    add("emit_tokens", emit_tokens ? "true" : "false");
    add("format", format);
    add("batch_size", std::to_string(batch_size));
    add("threads", std::to_string(threads));
    add("truncate", truncate ? "true" : "false");
    add("resample_shuffle", resample_shuffle ? "true" : "false");
    add("freeze_downstream", freeze_downstream ? "true" : "false");
    add("freeze_final_scale", freeze_final_scale ? "true" : "false");
    add("emit_unclipped", emit_unclipped ? "true" : "false");
    return out;
}

void ExperimentConfig::validate_for(const std::string& kind) const {
    const bool is_experiment = known_experiment(kind);
    if (!is_experiment && kind != "make-toy-model" && kind != "make-corpus" &&
        kind != "check-identities")
        throw ConfigError("unknown experiment kind: " + kind);

    if (kind == "make-corpus") {
        if (output_path.empty()) throw ConfigError("make-corpus needs output_path");
        if (n_sequences <= 0 || seq_len <= 0)
            throw ConfigError("make-corpus needs positive n_sequences and seq_len");
        return;
    }
    if (kind == "make-toy-model") {
        if (output_path.empty()) throw ConfigError("make-toy-model needs output_path");
        toy_config.validate();
        return;
    }
    if (kind == "check-identities") return;

    if (!model_path.empty() && toy_seed)
        throw ConfigError("set either model_path or toy_seed, not both");
    if (model_path.empty() && !toy_seed)
        throw ConfigError("an experiment needs model_path or toy_seed");
    if (toy_seed) toy_config.validate();
    if (corpus_path.empty()) throw ConfigError(kind + " needs corpus_path");
    if (output_path.empty()) throw ConfigError(kind + " needs output_path");
    if (!(fraction > 0.0) || fraction > 1.0)
        throw ConfigError("fraction must be in (0, 1]");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (threads < 0) throw ConfigError("threads must be non-negative");
    export_format_from_string(format);

    if (ablation.empty()) throw ConfigError("ablation must name at least one mode");
    for (const std::string& mode : ablation)
        if (mode != "zero" && mode != "mean" && mode != "resample")
            throw ConfigError("unknown ablation mode: " + mode);
    if (kind != "ln-analysis" && kind != "reinjection" && ablation.size() != 1)
        throw ConfigError(kind + " takes exactly one ablation mode");
    const bool uses_resample =
        std::find(ablation.begin(), ablation.end(), "resample") != ablation.end();
    if (uses_resample && batch_size < 2 && kind != "reinjection")
        throw ConfigError("resample ablation needs batch_size >= 2");

    for (const ComponentId& target : targets)
        if (target.kind != ComponentId::Kind::Head)
            throw ConfigError("targets must be attention heads, got " + target.str());

    if (kind == "neuron-analysis" && targets.empty())
        throw ConfigError("neuron-analysis needs explicit target heads");
    if (kind == "reinjection" && alphas.empty())
        throw ConfigError("reinjection needs at least one alpha");
}

} // namespace selfrepair
