#pragma once

// Stages 1-4 end to end under one run directory:
//
//   landscape/            landscape.geojson, farm_<k>/input.geojson
//   stage1/farm_<k>/      output.geojson (baseline ground truth)
//   stage2/farm_<k>/      evolution run, best.py, best.json
//   stage3/ground_truth/  farm_<k>/output.json (global direction targets)
//   stage3/farm_<k>/      evolution run, best.py, best.json
//   stage4/farm_<k>/      <persona>_<mechanism>/ message runs, matrix.csv
//   explain/, reports/    summaries and charts
//   manifest.jsonl        append-only record of config and completed stages

#include <atomic>
#include <cstdlib>
#include <set>

#include "echomimic/connectivity.hpp"
#include "echomimic/mimic.hpp"
#include "echomimic/report.hpp"

#ifdef ECHOMIMIC_WITH_HTTP
#include "echomimic/http_provider.hpp"
#endif

namespace echomimic {

struct PreconditionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A stage could not run for a reason outside the code (missing solver etc.).
struct StageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration

struct EvolutionSettings {
    int population_size = 25;
    int generations = 25;
    int elitism_k = 2;
    int offspring = 0;
    int reflect_top = 5;
    int seed_attempts_per_member = 3;
    std::array<double, 5> operator_weights{1, 1, 1, 1, 1};
    bool reflect_once_per_generation = true;
    std::size_t workers = 1;
};

struct SandboxSettings {
    double timeout_s = 30.0;
    std::uint64_t memory_mb = 512;
    int max_repair_attempts = 3;
    std::string python = "python3";
    bool require_isolation = true;
};

struct ProviderSettings {
    std::string kind = "scripted";  // scripted | cassette | record | http
    std::string cassette_dir;        // relative paths resolve against the run directory
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model = "gpt-4o-mini";
    double temperature = 1.0;
    int max_attempts = 3;
    double base_delay_s = 1.0;
    double rate_per_s = 0.0;
};

struct GroundTruthSettings {
    std::string kind = "builtin";  // builtin | command
    std::string command;
    double margin_threshold = 1000.0;   // net revenue per ha below which margins start
    double habitat_threshold = 500.0;   // net revenue per ha below which habitat conversion starts
    double direction_threshold = 0.1;
    double margin_width = 10.0;
};

struct MimicSettings {
    std::vector<PersonaKind> personas{all_personas.begin(), all_personas.end()};
    std::vector<MechanismKind> mechanisms{all_mechanisms.begin(), all_mechanisms.end()};
    double budget_per_farm = 10000.0;
    double pv_factor = 12.46;
    bool enforce = false;
    std::optional<EvolutionSettings> evolution;  // falls back to the ECHO settings
};

struct RunConfig {
    std::uint64_t seed = 1;
    LandscapeConfig landscape = default_landscape_config();
    EconomicParams economics = default_economic_params();
    std::array<bool, 4> stages{true, true, true, true};
    EvolutionSettings evolution;
    SandboxSettings sandbox;
    ProviderSettings provider;
    GroundTruthSettings ground_truth;
    MimicSettings mimic;
    int icl_neighbours = 2;
    int explain_group_size = 3;
    std::vector<int> farms;  // empty: all
};

namespace detail {

inline json evolution_to_json(const EvolutionSettings& e) {
    json w = json::object();
    for (auto op : all_variation_ops) w[std::string(to_string(op))] = e.operator_weights[static_cast<std::size_t>(op)];
    return {{"population_size", e.population_size},
            {"generations", e.generations},
            {"elitism_k", e.elitism_k},
            {"offspring", e.offspring},
            {"reflect_top", e.reflect_top},
            {"seed_attempts_per_member", e.seed_attempts_per_member},
            {"operator_weights", w},
            {"reflect_once_per_generation", e.reflect_once_per_generation},
            {"workers", e.workers}};
}

inline EvolutionSettings evolution_from_json(const json& j, EvolutionSettings e) {
    e.population_size = j.value("population_size", e.population_size);
    e.generations = j.value("generations", e.generations);
    e.elitism_k = j.value("elitism_k", e.elitism_k);
    e.offspring = j.value("offspring", e.offspring);
    e.reflect_top = j.value("reflect_top", e.reflect_top);
    e.seed_attempts_per_member = j.value("seed_attempts_per_member", e.seed_attempts_per_member);
    e.reflect_once_per_generation = j.value("reflect_once_per_generation", e.reflect_once_per_generation);
    e.workers = j.value("workers", e.workers);
    if (j.contains("operator_weights"))
        for (const auto& [name, v] : j["operator_weights"].items())
            e.operator_weights[static_cast<std::size_t>(parse_variation_op(name))] = v.get<double>();
    return e;
}

}  // namespace detail

inline json run_config_to_json(const RunConfig& c) {
    json stages = json::object();
    for (int s = 0; s < 4; ++s) stages[std::to_string(s + 1)] = c.stages[static_cast<std::size_t>(s)];
    json personas = json::array(), mechanisms = json::array();
    for (auto p : c.mimic.personas) personas.push_back(to_string(p));
    for (auto m : c.mimic.mechanisms) mechanisms.push_back(to_string(m));
    json mimic{{"personas", personas},
               {"mechanisms", mechanisms},
               {"budget_per_farm", c.mimic.budget_per_farm},
               {"pv_factor", c.mimic.pv_factor},
               {"enforce", c.mimic.enforce}};
    if (c.mimic.evolution) mimic["evolution"] = detail::evolution_to_json(*c.mimic.evolution);
    return json{{"seed", c.seed},
                {"landscape", landscape_config_to_json(c.landscape)},
                {"economics", economic_params_to_json(c.economics)},
                {"stages", stages},
                {"evolution", detail::evolution_to_json(c.evolution)},
                {"sandbox",
                 {{"timeout_s", c.sandbox.timeout_s},
                  {"memory_mb", c.sandbox.memory_mb},
                  {"max_repair_attempts", c.sandbox.max_repair_attempts},
                  {"python", c.sandbox.python},
                  {"require_isolation", c.sandbox.require_isolation}}},
                {"provider",
                 {{"kind", c.provider.kind},
                  {"cassette_dir", c.provider.cassette_dir},
                  {"endpoint", c.provider.endpoint},
                  {"model", c.provider.model},
                  {"temperature", c.provider.temperature},
                  {"max_attempts", c.provider.max_attempts},
                  {"base_delay_s", c.provider.base_delay_s},
                  {"rate_per_s", c.provider.rate_per_s}}},
                {"ground_truth",
                 {{"kind", c.ground_truth.kind},
                  {"command", c.ground_truth.command},
                  {"margin_threshold", c.ground_truth.margin_threshold},
                  {"habitat_threshold", c.ground_truth.habitat_threshold},
                  {"direction_threshold", c.ground_truth.direction_threshold},
                  {"margin_width", c.ground_truth.margin_width}}},
                {"mimic", mimic},
                {"icl_neighbours", c.icl_neighbours},
                {"explain_group_size", c.explain_group_size},
                {"farms", c.farms}};
}

/// Missing keys keep their defaults. The landscape seed follows the run seed
/// unless given explicitly.
inline RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    try {
        c.seed = j.value("seed", c.seed);
        c.landscape.seed = c.seed;
        if (j.contains("landscape")) c.landscape = landscape_config_from_json(j["landscape"], c.landscape);
        if (j.contains("economics")) c.economics = economic_params_from_json(j["economics"]);
        if (j.contains("stages"))
            for (const auto& [k, v] : j["stages"].items()) {
                const int s = std::stoi(k);
                if (s < 1 || s > 4) throw InputError("stages: unknown stage " + k);
                c.stages[static_cast<std::size_t>(s - 1)] = v.get<bool>();
            }
        if (j.contains("evolution")) c.evolution = detail::evolution_from_json(j["evolution"], c.evolution);
        if (j.contains("sandbox")) {
            const auto& s = j["sandbox"];
            c.sandbox.timeout_s = s.value("timeout_s", c.sandbox.timeout_s);
            c.sandbox.memory_mb = s.value("memory_mb", c.sandbox.memory_mb);
            c.sandbox.max_repair_attempts = s.value("max_repair_attempts", c.sandbox.max_repair_attempts);
            c.sandbox.python = s.value("python", c.sandbox.python);
            c.sandbox.require_isolation = s.value("require_isolation", c.sandbox.require_isolation);
        }
        if (j.contains("provider")) {
            const auto& p = j["provider"];
            c.provider.kind = p.value("kind", c.provider.kind);
            c.provider.cassette_dir = p.value("cassette_dir", c.provider.cassette_dir);
            c.provider.endpoint = p.value("endpoint", c.provider.endpoint);
            c.provider.model = p.value("model", c.provider.model);
            c.provider.temperature = p.value("temperature", c.provider.temperature);
            c.provider.max_attempts = p.value("max_attempts", c.provider.max_attempts);
            c.provider.base_delay_s = p.value("base_delay_s", c.provider.base_delay_s);
            c.provider.rate_per_s = p.value("rate_per_s", c.provider.rate_per_s);
            if (p.contains("api_key")) throw InputError("provider.api_key must not be stored in the config; set ECHOMIMIC_API_KEY");
        }
        if (j.contains("ground_truth")) {
            const auto& g = j["ground_truth"];
            c.ground_truth.kind = g.value("kind", c.ground_truth.kind);
            c.ground_truth.command = g.value("command", c.ground_truth.command);
            c.ground_truth.margin_threshold = g.value("margin_threshold", c.ground_truth.margin_threshold);
            c.ground_truth.habitat_threshold = g.value("habitat_threshold", c.ground_truth.habitat_threshold);
            c.ground_truth.direction_threshold = g.value("direction_threshold", c.ground_truth.direction_threshold);
            c.ground_truth.margin_width = g.value("margin_width", c.ground_truth.margin_width);
        }
        if (j.contains("mimic")) {
            const auto& m = j["mimic"];
            if (m.contains("personas")) {
                c.mimic.personas.clear();
                for (const auto& p : m["personas"]) c.mimic.personas.push_back(parse_persona(p.get<std::string>()));
            }
            if (m.contains("mechanisms")) {
                c.mimic.mechanisms.clear();
                for (const auto& p : m["mechanisms"]) c.mimic.mechanisms.push_back(parse_mechanism(p.get<std::string>()));
            }
            c.mimic.budget_per_farm = m.value("budget_per_farm", c.mimic.budget_per_farm);
            c.mimic.pv_factor = m.value("pv_factor", c.mimic.pv_factor);
            c.mimic.enforce = m.value("enforce", c.mimic.enforce);
            if (m.contains("evolution")) c.mimic.evolution = detail::evolution_from_json(m["evolution"], c.evolution);
        }
        c.icl_neighbours = j.value("icl_neighbours", c.icl_neighbours);
        c.explain_group_size = j.value("explain_group_size", c.explain_group_size);
        if (j.contains("farms")) c.farms = j["farms"].get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("run config: ") + e.what());
    }
    return c;
}

/// ECHOMIMIC_PROVIDER, ECHOMIMIC_MODEL, ECHOMIMIC_ENDPOINT, ECHOMIMIC_TEMPERATURE,
/// ECHOMIMIC_CASSETTES. The API key is read only when the provider is built.
inline void apply_env_overrides(RunConfig& c) {
    auto env = [](const char* k) -> std::optional<std::string> {
        const char* v = std::getenv(k);
        return v && *v ? std::optional<std::string>(v) : std::nullopt;
    };
    if (auto v = env("ECHOMIMIC_PROVIDER")) c.provider.kind = *v;
    if (auto v = env("ECHOMIMIC_MODEL")) c.provider.model = *v;
    if (auto v = env("ECHOMIMIC_ENDPOINT")) c.provider.endpoint = *v;
    if (auto v = env("ECHOMIMIC_TEMPERATURE")) c.provider.temperature = std::stod(*v);
    if (auto v = env("ECHOMIMIC_CASSETTES")) c.provider.cassette_dir = *v;
}

inline std::vector<std::string> validate(const RunConfig& c) {
    std::vector<std::string> p;
    try {
        check(c.landscape);
    } catch (const InputError& e) {
        p.push_back(std::string("landscape: ") + e.what());
    }
    for (const auto& m : validate(c.economics)) p.push_back("economics: " + m);
    auto evo = [&](const EvolutionSettings& e, const std::string& where) {
        if (e.population_size < 2) p.push_back(where + ".population_size must be >= 2");
        if (e.generations < 0) p.push_back(where + ".generations must be >= 0");
        if (e.elitism_k < 0 || e.elitism_k >= e.population_size) p.push_back(where + ".elitism_k must be in [0, K)");
        if (e.workers < 1) p.push_back(where + ".workers must be >= 1");
        double total = 0;
        for (double w : e.operator_weights) {
            if (!(w >= 0)) p.push_back(where + ".operator_weights must be nonnegative");
            total += w;
        }
        if (!(total > 0)) p.push_back(where + ".operator_weights must not all be zero");
    };
    evo(c.evolution, "evolution");
    if (c.mimic.evolution) evo(*c.mimic.evolution, "mimic.evolution");
    if (!(c.sandbox.timeout_s > 0)) p.push_back("sandbox.timeout_s must be > 0");
    if (c.sandbox.max_repair_attempts < 0) p.push_back("sandbox.max_repair_attempts must be >= 0");
    static const std::set<std::string> providers{"scripted", "cassette", "record", "http"};
    if (!providers.count(c.provider.kind)) p.push_back("provider.kind must be one of scripted, cassette, record, http");
    if ((c.provider.kind == "cassette" || c.provider.kind == "record") && c.provider.cassette_dir.empty())
        p.push_back("provider.cassette_dir is required for kind " + c.provider.kind);
    if (c.provider.max_attempts < 1) p.push_back("provider.max_attempts must be >= 1");
    if (c.ground_truth.kind != "builtin" && c.ground_truth.kind != "command")
        p.push_back("ground_truth.kind must be builtin or command");
    if (c.ground_truth.kind == "command" && c.ground_truth.command.empty())
        p.push_back("ground_truth.command is required for kind command");
    if (!(c.ground_truth.direction_threshold > 0 && c.ground_truth.direction_threshold < 1))
        p.push_back("ground_truth.direction_threshold must be in (0,1)");
    if (!(c.ground_truth.margin_threshold > 0 && c.ground_truth.habitat_threshold > 0))
        p.push_back("ground_truth thresholds must be > 0");
    if (c.mimic.personas.empty() || c.mimic.mechanisms.empty()) p.push_back("mimic matrix must not be empty");
    if (!(c.mimic.pv_factor > 0)) p.push_back("mimic.pv_factor must be > 0");
    if (c.icl_neighbours < 0) p.push_back("icl_neighbours must be >= 0");
    if (c.explain_group_size < 1) p.push_back("explain_group_size must be >= 1");
    for (int f : c.farms)
        if (f < 1 || f > c.landscape.n_farms) p.push_back("farms: no farm " + std::to_string(f));
    return p;
}

inline RunConfig load_run_config(const fs::path& path) {
    RunConfig c = run_config_from_json(read_json(path));
    apply_env_overrides(c);
    return c;
}

inline EngineConfig engine_config(const EvolutionSettings& e) {
    EngineConfig c;
    c.population_size = e.population_size;
    c.generations = e.generations;
    c.elitism_k = e.elitism_k;
    c.offspring = e.offspring;
    c.reflect_top = e.reflect_top;
    c.seed_attempts_per_member = e.seed_attempts_per_member;
    c.schedule.weights = e.operator_weights;
    c.schedule.reflect_once_per_generation = e.reflect_once_per_generation;
    c.workers = e.workers;
    return c;
}

inline SandboxLimits sandbox_limits(const SandboxSettings& s) {
    SandboxLimits l;
    l.timeout_s = s.timeout_s;
    l.memory_bytes = s.memory_mb << 20;
    l.interpreter[0] = s.python;
    l.require_isolation = s.require_isolation;
    return l;
}

// ---------------------------------------------------------------------------
// Manifest

inline std::string file_sha256(const fs::path& p) { return sha256_hex(read_text(p)); }

/// Append-only JSON-lines record. The first line holds the config snapshot;
/// stage completions carry the sha256 of every file the stage wrote.
class RunManifest {
public:
    explicit RunManifest(fs::path run_dir) : path_(std::move(run_dir) / "manifest.jsonl") {
        if (!fs::exists(path_)) return;
        const std::string text = read_text(path_);
        std::size_t pos = 0;
        while (pos < text.size()) {
            auto nl = text.find('\n', pos);
            if (nl == std::string::npos) nl = text.size();
            if (nl > pos) records_.push_back(json::parse(text.substr(pos, nl - pos)));
            pos = nl + 1;
        }
    }

    const fs::path& path() const { return path_; }
    const std::vector<json>& records() const { return records_; }

    void append(json record) {
        std::lock_guard lock(mu_);
        record["seq"] = records_.size();
        fs::create_directories(path_.parent_path());
        std::ofstream out(path_, std::ios::app | std::ios::binary);
        out << record.dump() << "\n";
        if (!out) throw std::runtime_error("cannot append to " + path_.string());
        records_.push_back(std::move(record));
    }

    /// Records the config unless it equals the latest recorded one.
    void record_config(const json& config) {
        for (auto it = records_.rbegin(); it != records_.rend(); ++it)
            if (it->value("kind", "") == "config") {
                if ((*it)["config"] == config) return;
                break;
            }
        append({{"kind", "config"}, {"config", config}});
    }

    void complete_stage(int stage, const fs::path& run_dir, const std::vector<fs::path>& dirs, json extra = json::object()) {
        json artifacts = json::array();
        std::vector<fs::path> files;
        for (const auto& d : dirs) {
            if (!fs::exists(d)) continue;
            for (const auto& e : fs::recursive_directory_iterator(d))
                if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files)
            artifacts.push_back({{"path", fs::relative(f, run_dir).generic_string()}, {"sha256", file_sha256(f)}});
        json r{{"kind", "stage_complete"}, {"stage", stage}, {"artifacts", artifacts}};
        for (const auto& [k, v] : extra.items()) r[k] = v;
        append(std::move(r));
    }

    /// Latest completion record for `stage` whose files all still exist.
    std::optional<json> completed(int stage, const fs::path& run_dir) const {
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
            if (it->value("kind", "") != "stage_complete" || (*it)["stage"].get<int>() != stage) continue;
            for (const auto& a : (*it)["artifacts"])
                if (!fs::exists(run_dir / a["path"].get<std::string>())) return std::nullopt;
            return std::optional<json>(*it);
        }
        return std::nullopt;
    }

private:
    fs::path path_;
    std::vector<json> records_;
    std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Ground truth

using BaselineTruth = std::map<int, PlotInterventions>;  // by farm id
using GlobalTruth = std::map<int, DirectionMap>;

class GroundTruthProvider {
public:
    virtual ~GroundTruthProvider() = default;
    virtual std::string name() const = 0;
    virtual BaselineTruth baseline(const Landscape& land, const EconomicParams& params, const fs::path& workdir) = 0;
    virtual GlobalTruth global(const Landscape& land, const EconomicParams& params, const BaselineTruth& baseline,
                               const fs::path& workdir) = 0;
};

/// Simplified stand-in for the optimisation model, used to keep the pipeline
/// self-contained. Not the paper's model.
///
/// Baseline: net = yield x price - agricultural maintenance; margin amount
/// ramps as 1 - net / margin_threshold and habitat amount as
/// 1 - net / habitat_threshold, both clamped to [0,1].
///
/// Global: every (plot, quadrant, kind) option with a nonzero baseline amount
/// of that kind is scored by the IIC gain of realising it alone; gains are
/// normalised by the landscape-wide maximum and read as quadrant fractions,
/// from which directions above direction_threshold are extracted.
class BuiltinGroundTruth : public GroundTruthProvider {
public:
    explicit BuiltinGroundTruth(GroundTruthSettings s = {}) : s_(std::move(s)) {}
    std::string name() const override { return "builtin"; }

    static InterventionRecord baseline_rule(const Plot& p, const EconomicParams& params, const GroundTruthSettings& s) {
        InterventionRecord r{p.id, 0.0, 0.0};
        if (p.type != PlotType::ag_plot) return r;
        const double price = params.price(p.label).value_or(0.0);
        const double net = p.yield_value.value_or(0.0) * price - params.ag_maintenance;
        r.margin_intervention = std::clamp(1.0 - net / s.margin_threshold, 0.0, 1.0);
        r.habitat_conversion = std::clamp(1.0 - net / s.habitat_threshold, 0.0, 1.0);
        return r;
    }

    BaselineTruth baseline(const Landscape& land, const EconomicParams& params, const fs::path&) override {
        BaselineTruth out;
        for (const auto& f : land.farms)
            for (const auto& p : f.plots) out[f.id][p.id] = baseline_rule(p, params, s_);
        return out;
    }

    GlobalTruth global(const Landscape& land, const EconomicParams&, const BaselineTruth& baseline,
                       const fs::path&) override {
        GraphOptions go;
        go.margin_width = s_.margin_width;
        const double iic0 = compute_iic(build_habitat_graph(land, {}, go)).iic;
        struct Option {
            int farm, plot;
            Direction d;
            bool margin;
            double gain;
        };
        std::vector<Option> options;
        double max_gain = 0.0;
        for (const auto& f : land.farms)
            for (const auto& p : f.plots) {
                if (p.type != PlotType::ag_plot) continue;
                const auto& b = baseline.at(f.id).at(p.id);
                for (bool margin : {true, false}) {
                    if ((margin ? b.margin_intervention : b.habitat_conversion) <= 0.0) continue;
                    for (auto d : all_directions) {
                        PlotDirections pd{p.id, p.type, p.label, {}, {}};
                        (margin ? pd.margin : pd.habitat) = DirectionSet{d};
                        LandscapeInterventions iv{{PlotKey{f.id, p.id}, pd}};
                        const double gain = compute_iic(build_habitat_graph(land, iv, go)).iic - iic0;
                        options.push_back({f.id, p.id, d, margin, gain});
                        max_gain = std::max(max_gain, gain);
                    }
                }
            }
        std::map<std::pair<int, int>, std::array<QuadrantFractions, 2>> fractions;
        for (const auto& o : options)
            fractions[{o.farm, o.plot}][o.margin ? 0 : 1][static_cast<std::size_t>(o.d)] =
                max_gain > 0 ? std::clamp(o.gain / max_gain, 0.0, 1.0) : 0.0;
        GlobalTruth out;
        for (const auto& f : land.farms)
            for (const auto& p : f.plots) {
                PlotDirections pd{p.id, p.type, p.label, {}, {}};
                if (auto it = fractions.find({f.id, p.id}); it != fractions.end()) {
                    pd.margin = extract_directions(it->second[0], s_.direction_threshold);
                    pd.habitat = extract_directions(it->second[1], s_.direction_threshold);
                }
                out[f.id][p.id] = pd;
            }
        return out;
    }

private:
    GroundTruthSettings s_;
};

inline std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    return out + "'";
}

/// External solver adapter. Runs `<command> baseline <dir>` and
/// `<command> global <dir>`; <dir> holds the landscape files,
/// economic_params.json and, for the global call, farm_<k>/baseline.geojson.
/// The command writes farm_<k>/output.geojson or farm_<k>/output.json.
class CommandGroundTruth : public GroundTruthProvider {
public:
    explicit CommandGroundTruth(std::string command) : command_(std::move(command)) {}
    std::string name() const override { return "command"; }

    BaselineTruth baseline(const Landscape& land, const EconomicParams& params, const fs::path& workdir) override {
        prepare(land, params, workdir);
        invoke("baseline", workdir);
        BaselineTruth out;
        for (const auto& f : land.farms) {
            const auto file = farm_input_path(workdir, f.id).parent_path() / "output.geojson";
            out[f.id] = read_output(file, [&](const json& doc) { return interventions_from_json(doc, file.string()).records; });
        }
        return out;
    }

    GlobalTruth global(const Landscape& land, const EconomicParams& params, const BaselineTruth& baseline,
                       const fs::path& workdir) override {
        prepare(land, params, workdir);
        for (const auto& f : land.farms)
            write_json(farm_input_path(workdir, f.id).parent_path() / "baseline.geojson",
                       interventions_to_json(f, baseline.at(f.id)));
        invoke("global", workdir);
        GlobalTruth out;
        for (const auto& f : land.farms) {
            const auto file = farm_input_path(workdir, f.id).parent_path() / "output.json";
            out[f.id] = read_output(file, [&](const json& doc) { return directions_from_json(doc, file.string()); });
        }
        return out;
    }

private:
    static void prepare(const Landscape& land, const EconomicParams& params, const fs::path& dir) {
        fs::create_directories(dir);
        write_landscape_file(land, dir);
        write_json(dir / "economic_params.json", economic_params_to_json(params));
    }

    void invoke(const std::string& mode, const fs::path& dir) const {
        const std::string cmd = command_ + " " + mode + " " + shell_quote(dir.string());
        const int rc = std::system(cmd.c_str());
        if (rc != 0)
            throw StageError("ground-truth command failed (status " + std::to_string(rc) + "): " + cmd +
                             "\nhint: check ground_truth.command, or set ground_truth.kind to \"builtin\"");
    }

    template <typename F>
    static std::invoke_result_t<F, const json&> read_output(const fs::path& file, F parse) {
        if (!fs::exists(file))
            throw StageError("ground-truth command did not write " + file.string() +
                             "\nhint: the command must write one output file per farm directory");
        return parse(read_json(file));
    }

    std::string command_;
};

inline std::shared_ptr<GroundTruthProvider> make_ground_truth(const GroundTruthSettings& s) {
    if (s.kind == "command") return std::make_shared<CommandGroundTruth>(s.command);
    return std::make_shared<BuiltinGroundTruth>(s);
}

// ---------------------------------------------------------------------------
// Offline provider

namespace detail {

inline std::vector<double> numbers_after(const std::string& text, const std::string& key) {
    std::vector<double> out;
    std::size_t pos = 0;
    while ((pos = text.find(key, pos)) != std::string::npos) {
        pos += key.size();
        char* end = nullptr;
        const double v = std::strtod(text.c_str() + pos, &end);
        if (end != text.c_str() + pos) out.push_back(v);
    }
    return out;
}

inline std::string py_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    std::string s = buf;
    if (s.find_first_of(".e") == std::string::npos) s += ".0";
    return s;
}

inline std::string py_prices(const EconomicParams& p) {
    std::string s = "{";
    for (std::size_t i = 0; i < p.crop_prices.size(); ++i)
        s += (i ? ", " : "") + py_str(p.crop_prices[i].first) + ": " + py_real(p.crop_prices[i].second);
    return s + "}";
}

}  // namespace detail

/// Threshold heuristic in the family the builtin ground truth uses.
inline std::string offline_baseline_script(double t_margin, double t_habitat, const EconomicParams& p) {
    return "import json\n\n"
           "T_M = " + detail::py_real(t_margin) + "\n"
           "T_H = " + detail::py_real(t_habitat) + "\n"
           "PRICES = " + detail::py_prices(p) + "\n"
           "AG_COST = " + detail::py_real(p.ag_maintenance) + "\n\n"
           "with open('input.geojson') as f:\n"
           "    data = json.load(f)\n\n"
           "for feature in data['features']:\n"
           "    props = feature['properties']\n"
           "    m = h = 0.0\n"
           "    if props.get('type') == 'ag_plot':\n"
           "        net = props.get('yield', 0.0) * PRICES.get(props.get('label'), 0.0) - AG_COST\n"
           "        m = min(1.0, max(0.0, 1.0 - net / T_M))\n"
           "        h = min(1.0, max(0.0, 1.0 - net / T_H))\n"
           "    props['margin_intervention'] = m\n"
           "    props['habitat_conversion'] = h\n\n"
           "with open('output.geojson', 'w') as f:\n"
           "    json.dump(data, f)\n";
}

/// Low-revenue plots get the direction sets encoded in M_BITS / H_BITS.
inline std::string offline_global_script(double t_net, int m_bits, int h_bits, const EconomicParams& p) {
    return "import json\n\n"
           "T_G = " + detail::py_real(t_net) + "\n"
           "M_BITS = " + std::to_string(m_bits) + "\n"
           "H_BITS = " + std::to_string(h_bits) + "\n"
           "PRICES = " + detail::py_prices(p) + "\n"
           "AG_COST = " + detail::py_real(p.ag_maintenance) + "\n"
           "NAMES = ['north-west', 'north-east', 'south-west', 'south-east']\n\n"
           "def dirs(bits):\n"
           "    return [n for i, n in enumerate(NAMES) if bits >> i & 1]\n\n"
           "with open('input.geojson') as f:\n"
           "    data = json.load(f)\n\n"
           "out = []\n"
           "for feature in data['features']:\n"
           "    props = feature['properties']\n"
           "    rec = {'plot_id': props['id'], 'plot_type': props.get('type'), 'label': props.get('label', ''),\n"
           "           'margin_directions': [], 'habitat_directions': []}\n"
           "    if props.get('type') == 'ag_plot':\n"
           "        net = props.get('yield', 0.0) * PRICES.get(props.get('label'), 0.0) - AG_COST\n"
           "        if net < T_G:\n"
           "            rec['margin_directions'] = dirs(M_BITS)\n"
           "            rec['habitat_directions'] = dirs(H_BITS)\n"
           "    out.append(rec)\n\n"
           "with open('output.json', 'w') as f:\n"
           "    json.dump(out, f)\n";
}

/// Deterministic stand-in for a language model covering every role, so the
/// whole pipeline runs without network access. Choices are seeded by the
/// prompt digest; modifiers perturb the numbers found in the parent code.
inline ScriptedStrategy offline_strategy(EconomicParams params) {
    return [params](const PromptBundle& b) -> std::string {
        Rng rng(std::stoull(b.context_digest.substr(0, 16), nullptr, 16));
        const std::string& t = b.text;
        auto fence = [](const std::string& code) { return "```python\n" + code + "```\n"; };
        auto jitter = [&](double v, double sd) { return v * std::exp(sd * standard_normal(rng)); };
        auto pick = [&](const std::vector<double>& v, double fallback) {
            if (v.empty()) return fallback;
            if (b.context.op == VariationOp::crossover || b.context.op == VariationOp::explore_converge)
                return v.size() > 1 ? 0.5 * (v[0] + v[1]) : v[0];
            return v[0];
        };
        const bool diverge = b.context.op == VariationOp::explore_diverge;
        switch (b.role) {
            case Role::generator:
            case Role::modifier:
            case Role::fixer: {
                if (b.stage == PromptStage::global) {
                    double tg = uniform(rng, 100, 2500);
                    int mb = static_cast<int>(rng() % 16), hb = static_cast<int>(rng() % 16);
                    if (b.role == Role::modifier && !diverge) {
                        tg = jitter(pick(detail::numbers_after(t, "T_G = "), tg), 0.3);
                        const auto m = detail::numbers_after(t, "M_BITS = "), h = detail::numbers_after(t, "H_BITS = ");
                        if (!m.empty()) mb = static_cast<int>(m[0]) ^ (rng() % 2 ? 1 << (rng() % 4) : 0);
                        if (!h.empty()) hb = static_cast<int>(h[0]) ^ (rng() % 2 ? 1 << (rng() % 4) : 0);
                    }
                    return "Proposed heuristic:\n" + fence(offline_global_script(tg, mb, hb, params));
                }
                double tm = uniform(rng, 200, 2500), th = uniform(rng, 100, 1500);
                if (b.role == Role::fixer) tm = 1000, th = 500;
                if (b.role == Role::modifier && !diverge) {
                    tm = jitter(pick(detail::numbers_after(t, "T_M = "), tm), 0.25);
                    th = jitter(pick(detail::numbers_after(t, "T_H = "), th), 0.25);
                }
                return "Proposed heuristic:\n" + fence(offline_baseline_script(tm, th, params));
            }
            case Role::policy_generator:
            case Role::policy_modifier: {
                double intensity = uniform(rng, 0.0, 1.0);
                if (b.role == Role::policy_modifier && !diverge)
                    intensity = std::clamp(pick(detail::numbers_after(t, "intensity "), intensity) +
                                               0.15 * standard_normal(rng), 0.0, 1.0);
                char buf[48];
                std::snprintf(buf, sizeof buf, "%.4f", intensity);
                std::string msg = "Farms around you are converting field margins into habitat strips, at intensity " +
                                  std::string(buf) + ".";
                if (t.find("BUDGET_PER_FARM:") != std::string::npos)
                    msg += " We offer a payment of " + py_number(std::round(200 * intensity)) +
                           " per hectare for habitat conversion.";
                return "\\communication{" + msg + "}";
            }
            case Role::farm_sim: {
                const auto code = extract_code(t);
                const auto lv = detail::numbers_after(t, "intensity ");
                if (!code || lv.empty()) return "I will keep my current plan.";
                const double k = lv.back();
                if (t.find("extremely resistant") != std::string::npos && k < 0.8) return fence(*code + "\n");
                return fence(*code + "\n\n# adjusted after the message\n"
                             "with open('output.geojson') as f:\n"
                             "    _data = json.load(f)\n"
                             "for _ft in _data['features']:\n"
                             "    _p = _ft['properties']\n"
                             "    if _p.get('type') == 'ag_plot':\n"
                             "        _p['margin_intervention'] = min(1.0, _p.get('margin_intervention', 0.0) + " +
                             detail::py_real(0.6 * k) + ")\n"
                             "        _p['habitat_conversion'] = min(1.0, _p.get('habitat_conversion', 0.0) + " +
                             detail::py_real(0.3 * k) + ")\n"
                             "with open('output.geojson', 'w') as f:\n"
                             "    json.dump(_data, f)\n");
            }
            case Role::explainer: {
                std::size_t n = 0;
                for (std::size_t p = 0; (p = t.find("Program ", p)) != std::string::npos; ++p) ++n;
                const bool global = b.stage == PromptStage::global;
                const auto th = detail::numbers_after(t, global ? "T_G = " : "T_M = ");
                std::string s = "These " + std::to_string(n) + " programs rank plots by net revenue per hectare";
                if (!th.empty())
                    s += std::string(global ? "; direction cut-offs" : "; margin thresholds") + " run from " +
                         detail::py_real(*std::min_element(th.begin(), th.end())) + " to " +
                         detail::py_real(*std::max_element(th.begin(), th.end()));
                return s + ".";
            }
            case Role::merger: {
                static const std::string prev_tag = "previous summary of insights:\n";
                static const std::string cur_tag = "new explanation for the current group:\n";
                auto section = [&](const std::string& tag, const std::string& stop) {
                    const auto a = t.find(tag);
                    if (a == std::string::npos) return std::string();
                    const auto from = a + tag.size();
                    const auto b = stop.empty() ? std::string::npos : t.find(stop, from);
                    return t.substr(from, b == std::string::npos ? std::string::npos : b - from);
                };
                auto trim = [](std::string s) {
                    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
                    return s;
                };
                const std::string cur = trim(section(cur_tag, "\n"));
                std::string merged = trim(section(prev_tag, "\nAdditionally"));
                if (("\n" + merged + "\n").find("\n" + cur + "\n") == std::string::npos)
                    merged += (merged.empty() ? "" : "\n") + cur;
                return merged;
            }
        }
        throw ProviderError("offline provider: unsupported role", false);
    };
}

/// Counts calls and tokens passing through for per-stage summaries.
class CountingProvider : public Provider {
public:
    explicit CountingProvider(std::shared_ptr<Provider> inner) : inner_(std::move(inner)) {}
    std::string name() const override { return inner_->name(); }
    std::string model() const override { return inner_->model(); }
    RawCompletion call(const PromptBundle& b) override {
        ++calls_;
        auto r = inner_->call(b);
        prompt_tokens_ += r.usage.prompt_tokens;
        completion_tokens_ += r.usage.completion_tokens;
        return r;
    }
    json summary() const {
        return {{"provider", name()},
                {"model", model()},
                {"calls", calls_.load()},
                {"prompt_tokens", prompt_tokens_.load()},
                {"completion_tokens", completion_tokens_.load()}};
    }

private:
    std::shared_ptr<Provider> inner_;
    std::atomic<long> calls_{0}, prompt_tokens_{0}, completion_tokens_{0};
};

inline std::shared_ptr<Provider> make_provider(const RunConfig& c, const fs::path& run_dir) {
    auto cassettes = [&] {
        fs::path d = c.provider.cassette_dir;
        if (d.is_relative()) d = run_dir / d;
        return std::make_shared<CassetteStore>(d);
    };
    if (c.provider.kind == "scripted") return std::make_shared<MockProvider>(offline_strategy(c.economics));
    if (c.provider.kind == "cassette") return std::make_shared<MockProvider>(cassettes());
#ifdef ECHOMIMIC_WITH_HTTP
    HttpProviderConfig h;
    h.endpoint = c.provider.endpoint;
    h.model = c.provider.model;
    h.temperature = c.provider.temperature;
    if (const char* k = std::getenv("ECHOMIMIC_API_KEY")) h.api_key = k;
    auto http = std::make_shared<HttpProvider>(h);
    if (c.provider.kind == "record") return std::make_shared<RecordingProvider>(http, cassettes());
    return http;
#else
    throw InputError("provider kind '" + c.provider.kind + "' needs a build with the http provider");
#endif
}

// ---------------------------------------------------------------------------
// Heuristic explanation

/// Folds groups of heuristic files (ordered by fitness, ascending) into one
/// summary: explainer per group, merger into the running summary. Each group
/// is checkpointed as group_<i>.json; a rerun skips groups whose checkpoint
/// matches and continues from the stored summary.
inline std::string explain_heuristics(const std::vector<fs::path>& files, int group_size, Gateway& gw,
                                      PromptStage stage, const fs::path& out_dir) {
    if (files.empty()) throw InputError("explain: no heuristic files");
    if (group_size < 1) throw InputError("explain: group_size must be >= 1");
    fs::create_directories(out_dir);
    std::string summary;
    const std::size_t n_groups = (files.size() + static_cast<std::size_t>(group_size) - 1) / static_cast<std::size_t>(group_size);
    for (std::size_t g = 0; g < n_groups; ++g) {
        std::vector<std::string> names, bodies;
        for (std::size_t i = g * static_cast<std::size_t>(group_size); i < std::min(files.size(), (g + 1) * static_cast<std::size_t>(group_size)); ++i) {
            names.push_back(files[i].filename().string());
            bodies.push_back(read_text(files[i]));
        }
        const fs::path ckpt = out_dir / ("group_" + std::to_string(g) + ".json");
        if (fs::exists(ckpt)) {
            const auto j = read_json(ckpt);
            if (j.value("files", std::vector<std::string>{}) == names) {
                summary = j.at("summary").get<std::string>();
                continue;
            }
        }
        PromptContext ctx;
        ctx.slots["code_snippet"] = render_code_group(bodies);
        auto expl = gw.complete(compose_prompt(Role::explainer, stage, ctx));
        if (!expl.parsed) throw ProviderError("explainer returned an empty answer", false);
        std::string merged = *expl.parsed;
        if (g > 0) {
            PromptContext mctx;
            mctx.slots["previous_summary"] = summary;
            mctx.slots["current_explanation"] = *expl.parsed;
            auto m = gw.complete(compose_prompt(Role::merger, stage, mctx));
            if (!m.parsed) throw ProviderError("merger returned an empty answer", false);
            merged = *m.parsed;
        }
        summary = merged;
        write_json(ckpt, json{{"group", g}, {"files", names}, {"explanation", *expl.parsed}, {"summary", summary}});
    }
    write_text(out_dir / "final_summary.txt", summary);
    return summary;
}

// ---------------------------------------------------------------------------
// Reports

/// Charts and tables under `out_dir`, computed only from the tracking CSVs
/// found under the run directory.
inline std::vector<fs::path> emit_reports(const fs::path& run_dir, const fs::path& out_dir) {
    std::vector<fs::path> written;
    auto emit = [&](const std::string& name, const CsvTable& table, const std::string& svg) {
        fs::create_directories(out_dir);
        write_text(out_dir / (name + ".csv"), to_csv(table));
        write_text(out_dir / (name + ".svg"), svg);
        written.push_back(out_dir / (name + ".csv"));
        written.push_back(out_dir / (name + ".svg"));
    };
    auto farm_dirs = [&](const fs::path& stage_dir) {
        std::vector<std::pair<int, fs::path>> out;
        if (!fs::exists(stage_dir)) return out;
        for (const auto& e : fs::directory_iterator(stage_dir)) {
            const auto n = e.path().filename().string();
            if (e.is_directory() && n.rfind("farm_", 0) == 0) out.emplace_back(std::stoi(n.substr(5)), e.path());
        }
        std::sort(out.begin(), out.end());
        return out;
    };

    for (int stage : {2, 3}) {
        const std::string tag = "stage" + std::to_string(stage);
        CsvTable acc{{"farm", "generation", "best_error", "best_accuracy", "mean_error", "mean_accuracy"}, {}};
        CsvTable ops{{"operator", "applications", "cumulative_fitness_delta"}, {}};
        CsvTable cx{{"farm", "candidate_id", "accuracy", "lloc", "cyclomatic", "volume", "maintainability_index"}, {}};
        std::vector<Series> curves;
        std::map<std::string, std::pair<long, double>> op_tot;
        std::vector<std::string> op_order;
        Series scatter{"candidates", {}, {}};
        for (const auto& [farm, dir] : farm_dirs(run_dir / tag)) {
            const auto t = dir / "tracking";
            if (!fs::exists(t / "fitness.csv")) continue;
            const auto fit = read_csv(t / "fitness.csv");
            Series s{"farm " + std::to_string(farm), {}, {}};
            for (std::size_t r = 0; r < fit.rows.size(); ++r) {
                const double be = fit.num(r, "best_error"), me = fit.num(r, "mean_error");
                acc.rows.push_back({std::to_string(farm), fit.at(r, "generation"), fmt_real(be), fmt_real(1.0 - be),
                                    fmt_real(me), fmt_real(1.0 - me)});
                s.x.push_back(fit.num(r, "generation"));
                s.y.push_back(1.0 - be);
            }
            curves.push_back(std::move(s));
            const auto o = read_csv(t / "operators.csv");
            for (std::size_t r = 0; r < o.rows.size(); ++r) {
                const auto& name = o.at(r, "operator");
                if (!op_tot.count(name)) op_order.push_back(name);
                op_tot[name].first += std::stol(o.at(r, "applications"));
                op_tot[name].second += o.num(r, "cumulative_fitness_delta");
            }
            if (fs::exists(t / "complexity.csv")) {
                const auto c = read_csv(t / "complexity.csv");
                for (std::size_t r = 0; r < c.rows.size(); ++r) {
                    cx.rows.push_back({std::to_string(farm), c.at(r, "candidate_id"), c.at(r, "accuracy"), c.at(r, "lloc"),
                                       c.at(r, "cyclomatic"), c.at(r, "volume"), c.at(r, "maintainability_index")});
                    scatter.x.push_back(c.num(r, "cyclomatic"));
                    scatter.y.push_back(c.num(r, "accuracy"));
                }
            }
        }
        if (acc.rows.empty()) continue;
        emit("accuracy_" + tag, acc,
             svg_xy_chart("Best accuracy (1 - error), stage " + std::to_string(stage), "generation", "accuracy", curves));
        std::vector<std::string> labels;
        std::vector<double> deltas;
        for (const auto& name : op_order) {
            ops.rows.push_back({name, std::to_string(op_tot[name].first), fmt_real(op_tot[name].second)});
            labels.push_back(name + " (" + std::to_string(op_tot[name].first) + ")");
            deltas.push_back(op_tot[name].second);
        }
        emit("operators_" + tag, ops,
             svg_bar_chart("Cumulative fitness delta by operator, stage " + std::to_string(stage), "fitness delta",
                           labels, deltas));
        if (!cx.rows.empty())
            emit("complexity_" + tag, cx,
                 svg_xy_chart("Cyclomatic complexity vs accuracy, stage " + std::to_string(stage), "cyclomatic complexity",
                              "accuracy", {scatter}, true));
    }

    // Stage 4: one curve per persona x mechanism cell (mean over farms) and the grid.
    CsvTable acc4{{"farm", "persona", "mechanism", "generation", "best_error", "best_accuracy"}, {}};
    std::map<std::string, std::map<int, std::pair<double, int>>> cell_curves;
    std::map<std::pair<std::string, std::string>, std::pair<double, int>> grid;
    std::vector<std::string> personas, mechanisms;
    auto note = [](std::vector<std::string>& v, const std::string& s) {
        if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
    };
    for (const auto& [farm, dir] : farm_dirs(run_dir / "stage4")) {
        if (!fs::exists(dir / "matrix.csv")) continue;
        const auto m = read_csv(dir / "matrix.csv");
        for (std::size_t r = 0; r < m.rows.size(); ++r) {
            const auto& p = m.at(r, "persona");
            const auto& k = m.at(r, "mechanism");
            note(personas, p);
            note(mechanisms, k);
            auto& g = grid[{p, k}];
            g.first += 1.0 - m.num(r, "best_error");
            g.second += 1;
            const auto fit_path = dir / (p + "_" + k) / "messages" / "tracking" / "fitness.csv";
            if (!fs::exists(fit_path)) continue;
            const auto fit = read_csv(fit_path);
            for (std::size_t i = 0; i < fit.rows.size(); ++i) {
                const double be = fit.num(i, "best_error");
                acc4.rows.push_back({std::to_string(farm), p, k, fit.at(i, "generation"), fmt_real(be), fmt_real(1.0 - be)});
                auto& c = cell_curves[m.at(r, "label")][std::stoi(fit.at(i, "generation"))];
                c.first += 1.0 - be;
                c.second += 1;
            }
        }
    }
    if (!acc4.rows.empty()) {
        std::vector<Series> curves;
        for (const auto& [label, pts] : cell_curves) {
            Series s{label, {}, {}};
            for (const auto& [g, v] : pts) {
                s.x.push_back(g);
                s.y.push_back(v.first / v.second);
            }
            curves.push_back(std::move(s));
        }
        emit("accuracy_stage4", acc4, svg_xy_chart("Best nudge accuracy (1 - error), mean over farms", "generation",
                                                   "accuracy", curves));
        CsvTable grid_t{{"persona", "mechanism", "label", "mean_best_accuracy", "farms"}, {}};
        std::vector<std::vector<double>> values;
        for (const auto& p : personas) {
            values.emplace_back();
            for (const auto& k : mechanisms) {
                const auto it = grid.find({p, k});
                const double v = it == grid.end() ? NAN : it->second.first / it->second.second;
                values.back().push_back(v);
                if (it != grid.end())
                    grid_t.rows.push_back({p, k, "(P:" + p + ", N:" + k + ")", fmt_real(v), std::to_string(it->second.second)});
            }
        }
        emit("persona_mechanism", grid_t,
             svg_heatmap("Mean best nudge accuracy by persona (rows) and mechanism (columns)", personas, mechanisms, values));
    }
    return written;
}

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineHooks {
    std::function<void(int stage, int farm, const std::string& scorer)> on_score;
    std::function<void(int stage, int farm, const Population&)> on_generation;
};

inline std::string stage_dir_name(int stage) { return "stage" + std::to_string(stage); }

class Pipeline {
public:
    Pipeline(RunConfig cfg, fs::path run_dir, std::shared_ptr<Provider> provider = nullptr, PipelineHooks hooks = {},
             std::shared_ptr<GroundTruthProvider> ground_truth = nullptr)
        : cfg_(std::move(cfg)), dir_(std::move(run_dir)), hooks_(std::move(hooks)), manifest_(dir_) {
        if (auto p = validate(cfg_); !p.empty()) throw InputError("config: " + p.front());
        fs::create_directories(dir_);
        write_json(dir_ / "config.json", run_config_to_json(cfg_));
        manifest_.record_config(run_config_to_json(cfg_));
        provider_ = std::make_shared<CountingProvider>(provider ? std::move(provider) : make_provider(cfg_, dir_));
        GatewayConfig gc;
        gc.retry.max_attempts = cfg_.provider.max_attempts;
        gc.retry.base_delay_s = cfg_.provider.base_delay_s;
        gc.rate_per_s = cfg_.provider.rate_per_s;
        gc.audit_log = dir_ / "audit.jsonl";
        gw_ = std::make_unique<Gateway>(provider_, gc);
        gt_ = ground_truth ? std::move(ground_truth) : make_ground_truth(cfg_.ground_truth);
    }

    const RunConfig& config() const { return cfg_; }
    const fs::path& run_dir() const { return dir_; }
    RunManifest& manifest() { return manifest_; }
    Gateway& gateway() { return *gw_; }

    // -- landscape ----------------------------------------------------------

    const Landscape& landscape() {
        if (!land_) {
            if (fs::exists(dir_ / "landscape" / "landscape.geojson")) land_ = read_landscape_dir(dir_ / "landscape");
            else generate_landscape();
        }
        return *land_;
    }

    const Landscape& generate_landscape() {
        land_ = echomimic::generate_landscape(cfg_.landscape);
        write_landscape_file(*land_, dir_ / "landscape");
        write_json(dir_ / "landscape" / "economic_params.json", economic_params_to_json(cfg_.economics));
        manifest_.complete_stage(0, dir_, {dir_ / "landscape"});
        return *land_;
    }

    std::vector<int> farm_ids() {
        if (!cfg_.farms.empty()) return cfg_.farms;
        std::vector<int> ids;
        for (const auto& f : landscape().farms) ids.push_back(f.id);
        return ids;
    }

    // -- stages ---------------------------------------------------------------

    void run_stage1() {
        const auto& land = landscape();
        const fs::path out = dir_ / "stage1";
        BaselineTruth truth;
        try {
            truth = gt_->baseline(land, cfg_.economics, out / "work");
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(std::string("stage 1 ground truth unavailable: ") + e.what() +
                             "\nhint: check the ground_truth section of the config");
        }
        for (const auto& f : land.farms) {
            auto it = truth.find(f.id);
            if (it == truth.end()) throw StageError("stage 1 ground truth has no farm " + std::to_string(f.id));
            const auto file = out / ("farm_" + std::to_string(f.id)) / "output.geojson";
            write_json(file, interventions_to_json(f, it->second));
            interventions_from_json(read_json(file), file.string());  // same schema the stage-2 evaluator reads
        }
        fs::remove_all(out / "work");
        complete(1, {out});
    }

    void run_stage2() { run_echo(2); }

    void run_stage3() {
        const auto& land = landscape();
        BaselineTruth baseline;
        for (const auto& f : land.farms) baseline[f.id] = stage1_truth(f.id);
        const fs::path gtdir = dir_ / "stage3" / "ground_truth";
        const auto truth = gt_->global(land, cfg_.economics, baseline, dir_ / "stage3" / "work");
        for (const auto& f : land.farms)
            write_json(gtdir / ("farm_" + std::to_string(f.id)) / "output.json", directions_to_json(truth.at(f.id)));
        fs::remove_all(dir_ / "stage3" / "work");
        run_echo(3);
    }

    void run_stage4() {
        const auto& land = landscape();
        const fs::path root = dir_ / "stage4";
        const EvolutionSettings es = cfg_.mimic.evolution.value_or(cfg_.evolution);
        MechanismSpec mech;
        mech.budget_per_farm = cfg_.mimic.budget_per_farm;
        mech.pv_factor = cfg_.mimic.pv_factor;
        mech.enforce = cfg_.mimic.enforce;
        for (int farm_id : farm_ids()) {
            const Farm& farm = *land.find(farm_id);
            const auto best2 = require(dir_ / "stage2" / ("farm_" + std::to_string(farm_id)) / "best.py");
            const auto best3 = require(dir_ / "stage3" / ("farm_" + std::to_string(farm_id)) / "best.py");
            const auto targets = stage3_truth(farm_id);

            MimicSetup setup;
            auto& n = setup.nudge;
            n.farm = farm;
            n.farm_input = farm_input_path(dir_ / "landscape", farm_id);
            n.baseline.id = "stage2_best";
            n.baseline.body = read_text(best2);
            n.gt_dirs = targets;
            n.limits = sandbox_limits(cfg_.sandbox);
            PromptContext params;
            add_param_slots(params, cfg_.economics);
            n.farm_prompt = params;
            n.fixer = make_llm_fixer(*gw_, PromptStage::nudge, params);
            n.max_repair_attempts = cfg_.sandbox.max_repair_attempts;
            n.scorer = [this, farm_id](const PlotInterventions& a, const DirectionMap& g, const std::vector<int>& ids) {
                if (hooks_.on_score) hooks_.on_score(4, farm_id, "error_nudge");
                return error_nudge(a, g, ids);
            };
            try {
                n.baseline_actions = run_baseline_actions(n);
            } catch (const InputError& e) {
                throw PreconditionError("stage 4 farm " + std::to_string(farm_id) + ": " + e.what());
            }
            setup.global_code = read_text(best3);
            std::vector<NeighbourExample> ex;
            for (int nb : neighbours(farm_id))
                ex.push_back({farm_to_json(*land.find(nb)).dump(), directions_to_json(ag_only(stage3_truth(nb))).dump()});
            setup.social_comparison_data = render_social_comparison(ex, farm_to_json(farm).dump());
            setup.params = cfg_.economics;

            EngineConfig ec = engine_config(es);
            ec.seed = mix_seed(cfg_.seed, 4000 + static_cast<std::uint64_t>(farm_id));
            if (hooks_.on_generation)
                ec.on_generation = [this, farm_id](const Population& p) { hooks_.on_generation(4, farm_id, p); };
            run_mimic_matrix(setup, cfg_.mimic.personas, cfg_.mimic.mechanisms, ec, *gw_,
                             root / ("farm_" + std::to_string(farm_id)), mech);
        }
        complete(4, {root});
    }

    /// Runs the requested stages in order; with `skip_complete`, stages whose
    /// completion record still matches the files on disk are skipped.
    void run(const std::vector<int>& stages, bool skip_complete = false) {
        for (int s : stages) {
            if (s < 1 || s > 4) throw InputError("unknown stage " + std::to_string(s));
            if (skip_complete && manifest_.completed(s, dir_)) continue;
            switch (s) {
                case 1: run_stage1(); break;
                case 2: run_stage2(); break;
                case 3: run_stage3(); break;
                case 4: run_stage4(); break;
            }
        }
    }

    /// Stages enabled in the config that are not yet complete.
    void resume() {
        std::vector<int> todo;
        for (int s = 1; s <= 4; ++s)
            if (cfg_.stages[static_cast<std::size_t>(s - 1)]) todo.push_back(s);
        run(todo, true);
    }

    // -- explanation and reports ---------------------------------------------

    /// Candidate files of one farm's stage-2 or stage-3 run, fitness ascending.
    std::vector<fs::path> heuristic_files(int stage, int farm_id) const {
        const fs::path run = dir_ / stage_dir_name(stage) / ("farm_" + std::to_string(farm_id));
        std::vector<std::pair<double, fs::path>> found;
        std::set<std::string> seen;
        if (fs::exists(run))
            for (const auto& e : fs::directory_iterator(run)) {
                if (!fs::exists(e.path() / "scores.json")) continue;
                const json scores = read_json(e.path() / "scores.json");
                for (const auto& c : scores.at("candidates")) {
                    const auto id = c.at("id").get<std::string>();
                    if (!seen.insert(id).second) continue;
                    const auto hist = c.value("fitness_history", json::array());
                    const double fit = hist.empty() ? 0.0 : hist.back().value("fitness", 0.0);
                    found.emplace_back(fit, e.path() / ("candidate_" + id + ".txt"));
                }
            }
        std::sort(found.begin(), found.end());
        std::vector<fs::path> out;
        for (auto& [f, p] : found) out.push_back(std::move(p));
        return out;
    }

    std::string explain(int stage, int farm_id) {
        if (stage != 2 && stage != 3) throw InputError("explain: stage must be 2 or 3");
        const auto files = heuristic_files(stage, farm_id);
        if (files.empty())
            throw PreconditionError("explain: no stage-" + std::to_string(stage) + " candidates for farm " +
                                    std::to_string(farm_id) + " under " + dir_.string());
        return explain_heuristics(files, cfg_.explain_group_size, *gw_,
                                  stage == 2 ? PromptStage::baseline : PromptStage::global,
                                  dir_ / "explain" / stage_dir_name(stage) / ("farm_" + std::to_string(farm_id)));
    }

    std::vector<fs::path> report() {
        auto files = emit_reports(dir_, dir_ / "reports");
        manifest_.complete_stage(5, dir_, {dir_ / "reports"}, json{{"step", "reports"}});
        return files;
    }

    json provider_summary() const { return provider_->summary(); }

private:
    static fs::path require(const fs::path& p) {
        if (!fs::exists(p)) throw PreconditionError("missing prerequisite artifact: " + p.string());
        return p;
    }

    PlotInterventions stage1_truth(int farm_id) const {
        const auto file = require(dir_ / "stage1" / ("farm_" + std::to_string(farm_id)) / "output.geojson");
        return interventions_from_json(read_json(file), file.string()).records;
    }

    DirectionMap stage3_truth(int farm_id) const {
        const auto file = require(dir_ / "stage3" / "ground_truth" / ("farm_" + std::to_string(farm_id)) / "output.json");
        return directions_from_json(read_json(file), file.string());
    }

    static DirectionMap ag_only(DirectionMap m) {
        std::erase_if(m, [](const auto& kv) { return kv.second.plot_type != PlotType::ag_plot; });
        return m;
    }

    static PlotInterventions nonzero(PlotInterventions m) {
        std::erase_if(m, [](const auto& kv) {
            return kv.second.margin_intervention == 0.0 && kv.second.habitat_conversion == 0.0;
        });
        return m;
    }

    /// The icl_neighbours nearest farms by centroid distance (ties by id).
    std::vector<int> neighbours(int farm_id) {
        const auto& land = landscape();
        const Point c = centroid(land.find(farm_id)->geometry);
        std::vector<std::pair<double, int>> d;
        for (const auto& f : land.farms)
            if (f.id != farm_id) d.emplace_back(norm(centroid(f.geometry) - c), f.id);
        std::sort(d.begin(), d.end());
        std::vector<int> out;
        for (std::size_t i = 0; i < d.size() && static_cast<int>(i) < cfg_.icl_neighbours; ++i) out.push_back(d[i].second);
        return out;
    }

    void run_echo(int stage) {
        const auto& land = landscape();
        const bool global = stage == 3;
        const PromptStage ps = global ? PromptStage::global : PromptStage::baseline;
        const ExecStage es = global ? ExecStage::global : ExecStage::baseline;
        const fs::path root = dir_ / stage_dir_name(stage);
        const SandboxLimits limits = sandbox_limits(cfg_.sandbox);
        for (int farm_id : farm_ids()) {
            const Farm& farm = *land.find(farm_id);
            const fs::path input = require(farm_input_path(dir_ / "landscape", farm_id));
            PlotInterventions gt_iv;
            DirectionMap gt_dirs;
            if (global) gt_dirs = stage3_truth(farm_id);
            else gt_iv = stage1_truth(farm_id);

            PromptContext ctx;
            add_param_slots(ctx, cfg_.economics);
            std::vector<NeighbourExample> ex;
            for (int nb : neighbours(farm_id)) {
                const Farm& nf = *land.find(nb);
                ex.push_back({farm_to_json(nf).dump(),
                              global ? directions_to_json(ag_only(stage3_truth(nb))).dump()
                                     : interventions_to_json(nf, nonzero(stage1_truth(nb)), true).dump()});
            }
            ctx.slots["neighbour_examples"] = render_neighbour_examples(ex);
            ctx.slots["farm_input"] = farm_to_json(farm).dump();

            const auto plot_ids = farm.plot_ids();
            Fixer fixer = make_llm_fixer(*gw_, ps, ctx);
            Evaluator evaluate = [&, farm_id](Candidate& c) -> FitnessReport {
                auto r = execute_candidate(c, input, es, limits);
                if (!r.ok()) {
                    auto rep = repair_and_rescore(c, std::move(r), fixer, cfg_.sandbox.max_repair_attempts, input, es, limits);
                    c.body = rep.candidate.body;
                    c.lineage = rep.candidate.lineage;
                    if (rep.penalty) return *rep.penalty;
                    r = std::move(rep.result);
                }
                c.needs_repair = false;
                if (hooks_.on_score) hooks_.on_score(stage, farm_id, global ? "error_conn" : "error_npv");
                auto rep = global ? error_conn(*r.directions(), gt_dirs, plot_ids) : error_npv(*r.interventions(), gt_iv, plot_ids);
                rep.diagnostics.insert(rep.diagnostics.end(), r.diagnostics.begin(), r.diagnostics.end());
                return rep;
            };

            EngineConfig ec = engine_config(cfg_.evolution);
            ec.seed = mix_seed(cfg_.seed, static_cast<std::uint64_t>(stage) * 1000 + static_cast<std::uint64_t>(farm_id));
            const fs::path farm_dir = root / ("farm_" + std::to_string(farm_id));
            ec.run_dir = farm_dir;
            if (hooks_.on_generation)
                ec.on_generation = [this, stage, farm_id](const Population& p) { hooks_.on_generation(stage, farm_id, p); };
            LlmVariator variator(*gw_, ps, ctx, CandidateKind::heuristic_script);
            Engine engine(ec, variator, evaluate);
            const auto result = engine.run();
            const auto& best = result.best();
            write_text(farm_dir / "best.py", best.body);
            write_json(farm_dir / "best.json", json{{"id", best.id},
                                                    {"fitness", best.fitness()},
                                                    {"error", best.error()},
                                                    {"accuracy", 1.0 - best.error()},
                                                    {"penalized", best.penalized()},
                                                    {"generation_born", best.generation_born},
                                                    {"resumed_from", result.resumed_from}});
        }
        std::vector<fs::path> dirs{root};
        complete(stage, dirs);
    }

    void complete(int stage, const std::vector<fs::path>& dirs) {
        manifest_.complete_stage(stage, dir_, dirs, json{{"provider", provider_->summary()}});
    }

    RunConfig cfg_;
    fs::path dir_;
    PipelineHooks hooks_;
    RunManifest manifest_;
    std::shared_ptr<CountingProvider> provider_;
    std::unique_ptr<Gateway> gw_;
    std::shared_ptr<GroundTruthProvider> gt_;
    std::optional<Landscape> land_;
};

}  // namespace echomimic
