#include <charconv>
#include "cpga/io.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string_view>

#include <json.hpp>

namespace cpga {

using nlohmann::json;

// ------------------------------------------------------------- checkpoints

std::string serialize_checkpoint(const ParamSet& params) {
    std::ostringstream out;
    out << "cpga-checkpoint v1\n";
    out << "component=" << params.component << " seed=" << params.seed << " frozen=" << (params.frozen ? 1 : 0)
        << " tensors=" << params.values.size() << '\n';
    for (std::size_t i = 0; i < params.values.size(); ++i) {
        out << params.names[i] << ' ' << params.values[i].rows() << ' ' << params.values[i].cols() << '\n';
    }
    out << "data\n" << std::setprecision(17);
    for (const auto& v : params.values) {
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
            for (Eigen::Index c = 0; c < v.cols(); ++c) {
                if (r || c) out << ' ';
                out << v(r, c);
            }
        }
        out << '\n';
    }
    return out.str();
}

namespace {

// Unlike std::stod this accepts subnormals, which the writer can emit.
double parse_double(std::string_view text, const char* what) {
    double v = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || end != text.data() + text.size()) {
        throw ConfigError(std::string(what) + ": expected a number, got '" + std::string(text) + "'");
    }
    return v;
}

}  // namespace

ParamSet parse_checkpoint(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "cpga-checkpoint v1") throw ConfigError("checkpoint: bad magic line");
    std::getline(in, line);
    std::istringstream hs(line);
    std::map<std::string, std::string> fields;
    for (std::string kv; hs >> kv;) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("checkpoint: malformed manifest field '" + kv + "'");
        fields[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    for (const char* key : {"component", "seed", "frozen", "tensors"}) {
        if (!fields.count(key)) throw ConfigError(std::string("checkpoint: manifest missing '") + key + "'");
    }
    ParamSet params;
    params.component = fields["component"];
    params.seed = std::stoull(fields["seed"]);
    params.frozen = fields["frozen"] == "1";
    const auto count = std::stoul(fields["tensors"]);
    for (std::size_t i = 0; i < count; ++i) {
        std::string name;
        Eigen::Index rows = 0, cols = 0;
        if (!std::getline(in, line)) throw ConfigError("checkpoint: truncated manifest");
        std::istringstream ls(line);
        if (!(ls >> name >> rows >> cols) || rows < 0 || cols < 0) {
            throw ConfigError("checkpoint: bad tensor line '" + line + "'");
        }
        params.add(name, Mat(rows, cols));
    }
    if (!std::getline(in, line) || line != "data") throw ConfigError("checkpoint: missing data section");
    for (auto& v : params.values) {
        if (!std::getline(in, line)) throw ConfigError("checkpoint: truncated data");
        std::istringstream ls(line);
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
            for (Eigen::Index c = 0; c < v.cols(); ++c) {
                std::string tok;
                if (!(ls >> tok)) throw ShapeError("checkpoint: tensor has fewer values than its shape");
                v(r, c) = parse_double(tok, "checkpoint value");
            }
        }
        std::string extra;
        if (ls >> extra) throw ShapeError("checkpoint: tensor has more values than its shape");
    }
    return params;
}

void save_checkpoint(const std::string& path, const ParamSet& params) {
    std::ofstream out(path);
    if (!out) throw ConfigError("checkpoint: cannot open '" + path + "' for writing");
    out << serialize_checkpoint(params);
}

ParamSet load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("checkpoint: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_checkpoint(buf.str());
}

std::uint64_t checkpoint_hash(const ParamSet& params) {
    const std::string text = serialize_checkpoint(params);
    return fnv1a(text.data(), text.size());
}

ParamSet to_params(const PredictionBank& bank) {
    ParamSet p;
    p.component = "prediction_bank";
    p.add("h", bank.values());
    p.add("beta", Mat::Constant(1, 1, bank.beta()));
    return p;
}

ParamSet to_params(const FeatureBank& bank) {
    ParamSet p;
    p.component = "feature_bank";
    p.add("q", bank.values());
    return p;
}

PredictionBank prediction_bank_from_params(const ParamSet& params) {
    if (params.component != "prediction_bank") throw ContractError("expected a prediction_bank checkpoint");
    return PredictionBank::from_values(params.at("h"), params.at("beta")(0, 0));
}

FeatureBank feature_bank_from_params(const ParamSet& params) {
    if (params.component != "feature_bank") throw ContractError("expected a feature_bank checkpoint");
    return FeatureBank(params.at("q"));
}

// ------------------------------------------------------------------ config

ShiftConfig rotated_gaussians_benchmark(std::uint64_t seed) {
    ShiftConfig cfg;
    cfg.num_classes = 8;
    cfg.input_dim = 16;
    cfg.samples_per_class = 150;
    cfg.rotation_angle = 0.5;
    cfg.scale = 1.0;
    // Overlap chosen so target pseudo labels carry a few percent of natural errors.
    cfg.noise_std = 0.8;
    cfg.translation.assign(16, 0.8);
    cfg.seed = seed;
    return cfg;
}

namespace {

template <typename T>
using Setter = std::function<void(T&, const json&)>;

template <typename T>
void apply_fields(T& target, const json& doc, const std::map<std::string, Setter<T>>& setters, const char* section) {
    if (!doc.is_object()) throw ConfigError(std::string(section) + ": expected an object");
    for (const auto& [key, value] : doc.items()) {
        const auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError(std::string(section) + "." + key + ": unknown field");
        try {
            it->second(target, value);
        } catch (const json::exception& e) {
            throw ConfigError(std::string(section) + "." + key + ": " + e.what());
        }
    }
}

#define CPGA_FIELD(T, name) {#name, [](T& t, const json& v) { v.get_to(t.name); }}

const std::map<std::string, Setter<ShiftConfig>>& shift_setters() {
    static const std::map<std::string, Setter<ShiftConfig>> s{
        CPGA_FIELD(ShiftConfig, num_classes), CPGA_FIELD(ShiftConfig, input_dim),
        CPGA_FIELD(ShiftConfig, samples_per_class), CPGA_FIELD(ShiftConfig, rotation_angle),
        CPGA_FIELD(ShiftConfig, translation), CPGA_FIELD(ShiftConfig, scale),
        CPGA_FIELD(ShiftConfig, noise_std), CPGA_FIELD(ShiftConfig, seed)};
    return s;
}

const std::map<std::string, Setter<TrainConfig>>& train_setters() {
    static const std::map<std::string, Setter<TrainConfig>> s{
        CPGA_FIELD(TrainConfig, pretrain_epochs), CPGA_FIELD(TrainConfig, pretrain_learning_rate),
        CPGA_FIELD(TrainConfig, label_smoothing), CPGA_FIELD(TrainConfig, stage1_epochs),
        CPGA_FIELD(TrainConfig, stage1_batches_per_epoch), CPGA_FIELD(TrainConfig, stage1_prototypes_per_class),
        CPGA_FIELD(TrainConfig, stage1_learning_rate), CPGA_FIELD(TrainConfig, stage2_epochs),
        CPGA_FIELD(TrainConfig, learning_rate), CPGA_FIELD(TrainConfig, batch_size),
        CPGA_FIELD(TrainConfig, lambda), CPGA_FIELD(TrainConfig, eta), CPGA_FIELD(TrainConfig, beta),
        CPGA_FIELD(TrainConfig, tau), CPGA_FIELD(TrainConfig, pseudo_label_noise),
        CPGA_FIELD(TrainConfig, momentum), CPGA_FIELD(TrainConfig, weight_decay), CPGA_FIELD(TrainConfig, seed),
        CPGA_FIELD(TrainConfig, feature_dim), CPGA_FIELD(TrainConfig, noise_dim),
        CPGA_FIELD(TrainConfig, extractor_hidden), CPGA_FIELD(TrainConfig, generator_hidden),
        CPGA_FIELD(TrainConfig, projector_hidden), CPGA_FIELD(TrainConfig, projection_dim),
        CPGA_FIELD(TrainConfig, reverse_epochs), CPGA_FIELD(TrainConfig, reverse_prototypes_per_class),
        {"bank_init",
         [](TrainConfig& t, const json& v) {
             const auto s = v.get<std::string>();
             if (s == "zero") t.bank_init = BankInit::Zero;
             else if (s == "uniform") t.bank_init = BankInit::Uniform;
             else throw ConfigError("train.bank_init: expected 'zero' or 'uniform'");
         }},
        {"toggles",
         [](TrainConfig& t, const json& v) {
             static const std::map<std::string, bool LossToggles::*> flags{
                 {"use_contrastive", &LossToggles::use_contrastive},
                 {"use_weights", &LossToggles::use_weights},
                 {"use_elr", &LossToggles::use_elr},
                 {"use_nc", &LossToggles::use_nc},
                 {"stage1_contrastive", &LossToggles::stage1_contrastive}};
             if (!v.is_object()) throw ConfigError("train.toggles: expected an object");
             for (const auto& [key, flag] : v.items()) {
                 const auto it = flags.find(key);
                 if (it == flags.end()) throw ConfigError("train.toggles." + key + ": unknown field");
                 t.toggles.*(it->second) = flag.get<bool>();
             }
         }}};
    return s;
}

#undef CPGA_FIELD

}  // namespace

namespace {

json parse_json_object(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config: top level must be an object");
    return doc;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Keys in `skip` belong to an enclosing document and are ignored here.
RunConfig run_config_from(const json& doc, std::initializer_list<std::string_view> skip = {}) {
    RunConfig cfg;
    cfg.shift = rotated_gaussians_benchmark(0);
    for (const auto& [key, value] : doc.items()) {
        if (std::find(skip.begin(), skip.end(), key) != skip.end()) continue;
        if (key == "benchmark") {
            if (!value.is_string()) throw ConfigError("benchmark: expected a string");
            const auto name = value.get<std::string>();
            if (name == "gaussian") {
                cfg.benchmark = Benchmark::Gaussian;
            } else if (name == "moons") {
                cfg.benchmark = Benchmark::Moons;
            } else {
                throw ConfigError("benchmark: expected 'gaussian' or 'moons'");
            }
        } else if (key == "shift") {
            apply_fields(cfg.shift, value, shift_setters(), "shift");
        } else if (key == "train") {
            apply_fields(cfg.train, value, train_setters(), "train");
        } else {
            throw ConfigError(key + ": unknown top-level field");
        }
    }
    cfg.shift.validate();
    cfg.train.validate();
    return cfg;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) { return run_config_from(parse_json_object(json_text)); }

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_text(path)); }

std::vector<AblationSpec> parse_ablation_spec(const std::string& json_text) {
    const json doc = parse_json_object(json_text);
    const RunConfig base = run_config_from(doc, {"seeds", "ladder", "variants"});
    if (base.benchmark != Benchmark::Gaussian) throw ConfigError("benchmark: ablations run on the gaussian benchmark");
    if (!doc.contains("seeds") || !doc["seeds"].is_array() || doc["seeds"].empty()) {
        throw ConfigError("seeds: expected a non-empty array of integers");
    }
    std::vector<std::uint64_t> seeds;
    try {
        seeds = doc["seeds"].get<std::vector<std::uint64_t>>();
    } catch (const json::exception&) {
        throw ConfigError("seeds: expected a non-empty array of integers");
    }

    std::vector<AblationSpec> specs;
    if (doc.value("ladder", false)) specs = loss_ladder(seeds, base.shift, base.train);
    if (doc.contains("variants")) {
        const json& variants = doc["variants"];
        if (!variants.is_array()) throw ConfigError("variants: expected an array");
        for (const json& v : variants) {
            if (!v.is_object() || !v.contains("name") || !v["name"].is_string()) {
                throw ConfigError("variants: each entry needs a string 'name'");
            }
            TrainConfig train = base.train;
            for (const auto& [key, value] : v.items()) {
                if (key == "name") continue;
                if (key != "toggles") throw ConfigError("variants." + key + ": unknown field");
                try {
                    train_setters().at("toggles")(train, value);
                } catch (const json::exception& e) {
                    throw ConfigError(std::string("variants.toggles: ") + e.what());
                }
            }
            specs.push_back(AblationSpec{v["name"].get<std::string>(), train.toggles, seeds, base.shift, base.train});
        }
    }
    if (specs.empty()) throw ConfigError("variants: set \"ladder\": true or list at least one variant");
    for (const auto& spec : specs) spec.validate();
    return specs;
}

std::vector<AblationSpec> load_ablation_spec(const std::string& path) { return parse_ablation_spec(read_text(path)); }

std::pair<Dataset, Dataset> make_domains(const RunConfig& cfg) {
    return cfg.benchmark == Benchmark::Moons ? make_moons_domains(cfg.shift) : make_gaussian_domains(cfg.shift);
}

std::string dump_run_config(const RunConfig& cfg) {
    const auto& s = cfg.shift;
    const auto& t = cfg.train;
    json doc;
    doc["benchmark"] = cfg.benchmark == Benchmark::Gaussian ? "gaussian" : "moons";
    doc["shift"] = {{"num_classes", s.num_classes},     {"input_dim", s.input_dim},
                    {"samples_per_class", s.samples_per_class}, {"rotation_angle", s.rotation_angle},
                    {"translation", s.translation},     {"scale", s.scale},
                    {"noise_std", s.noise_std},         {"seed", s.seed}};
    doc["train"] = {{"pretrain_epochs", t.pretrain_epochs},
                    {"pretrain_learning_rate", t.pretrain_learning_rate},
                    {"label_smoothing", t.label_smoothing},
                    {"stage1_epochs", t.stage1_epochs},
                    {"stage1_batches_per_epoch", t.stage1_batches_per_epoch},
                    {"stage1_prototypes_per_class", t.stage1_prototypes_per_class},
                    {"stage1_learning_rate", t.stage1_learning_rate},
                    {"stage2_epochs", t.stage2_epochs},
                    {"learning_rate", t.learning_rate},
                    {"batch_size", t.batch_size},
                    {"lambda", t.lambda},
                    {"eta", t.eta},
                    {"beta", t.beta},
                    {"tau", t.tau},
                    {"bank_init", t.bank_init == BankInit::Zero ? "zero" : "uniform"},
                    {"pseudo_label_noise", t.pseudo_label_noise},
                    {"momentum", t.momentum},
                    {"weight_decay", t.weight_decay},
                    {"seed", t.seed},
                    {"feature_dim", t.feature_dim},
                    {"noise_dim", t.noise_dim},
                    {"extractor_hidden", t.extractor_hidden},
                    {"generator_hidden", t.generator_hidden},
                    {"projector_hidden", t.projector_hidden},
                    {"projection_dim", t.projection_dim},
                    {"reverse_epochs", t.reverse_epochs},
                    {"reverse_prototypes_per_class", t.reverse_prototypes_per_class},
                    {"toggles",
                     {{"use_contrastive", t.toggles.use_contrastive},
                      {"use_weights", t.toggles.use_weights},
                      {"use_elr", t.toggles.use_elr},
                      {"use_nc", t.toggles.use_nc},
                      {"stage1_contrastive", t.toggles.stage1_contrastive}}}};
    return doc.dump(2);
}

std::vector<double> parse_number_list(const std::string& text) {
    std::vector<double> out;
    std::istringstream in(text);
    std::string cell;
    while (std::getline(in, cell, ',')) {
        const auto first = cell.find_first_not_of(" \t");
        const auto last = cell.find_last_not_of(" \t");
        const std::string trimmed = first == std::string::npos ? "" : cell.substr(first, last - first + 1);
        out.push_back(parse_double(trimmed, "list"));
    }
    if (out.empty()) throw ConfigError("expected a non-empty comma-separated list");
    return out;
}

}  // namespace cpga
