#pragma once

// Stage 4: policy messages evolved against a persona-conditioned farm agent.
// A message is scored by what the agent does with it: the agent rewrites its
// baseline script (or refuses), the script runs in the sandbox, and the
// resulting amounts are compared with the quantized global targets.

#include <regex>

#include "echomimic/evolution.hpp"

namespace echomimic {

enum class PersonaKind { resistant, economic, social };
enum class MechanismKind { behavioral, economic };

inline constexpr std::array all_personas{PersonaKind::resistant, PersonaKind::economic, PersonaKind::social};
inline constexpr std::array all_mechanisms{MechanismKind::behavioral, MechanismKind::economic};

inline std::string_view to_string(PersonaKind p) {
    switch (p) {
        case PersonaKind::resistant: return "resistant";
        case PersonaKind::economic: return "economic";
        case PersonaKind::social: return "social";
    }
    return "";
}

inline std::string_view to_string(MechanismKind m) { return m == MechanismKind::behavioral ? "behavioral" : "economic"; }

inline PersonaKind parse_persona(std::string_view s) { return parse_enum(s, all_personas, "persona"); }
inline MechanismKind parse_mechanism(std::string_view s) { return parse_enum(s, all_mechanisms, "mechanism"); }

struct Persona {
    PersonaKind name = PersonaKind::resistant;
    std::string prompt_block;

    static Persona from_catalog(PersonaKind k, const PromptCatalog& catalog = PromptCatalog::builtin()) {
        return {k, catalog.block("persona/" + std::string(to_string(k)))};
    }
};

// ---------------------------------------------------------------------------
// Economic mechanism

struct InstrumentRange {
    double lo = 0.0;
    double hi = 0.0;
};

/// Instrument names used in offers and range tables.
namespace instrument {
inline constexpr const char* margin_establishment = "margin_establishment";  // subsidy factor on 400/ha
inline constexpr const char* habitat_establishment = "habitat_establishment";  // subsidy factor on 300/ha
inline constexpr const char* margin_maintenance = "margin_maintenance";  // subsidy factor on 60/ha/yr
inline constexpr const char* habitat_maintenance = "habitat_maintenance";  // subsidy factor on 70/ha/yr
inline constexpr const char* payment = "payment";  // per ha of habitat conversion, one-time
inline constexpr const char* min_habitat_area = "min_habitat_area";
inline constexpr const char* min_margin_fraction = "min_margin_fraction";
inline constexpr const char* eco_premium = "eco_premium";
}  // namespace instrument

inline std::map<std::string, InstrumentRange> default_instrument_ranges() {
    return {{instrument::margin_establishment, {0, 1}}, {instrument::habitat_establishment, {0, 1}},
            {instrument::margin_maintenance, {0, 1}},   {instrument::habitat_maintenance, {0, 1}},
            {instrument::payment, {0, 150}},            {instrument::min_habitat_area, {0, 10}},
            {instrument::min_margin_fraction, {0, 0.3}}, {instrument::eco_premium, {1, 1.3}}};
}

struct MechanismSpec {
    MechanismKind kind = MechanismKind::behavioral;
    double budget_per_farm = 10000.0;
    double pv_factor = 12.46;  // 20 annual payments at 5 %
    std::map<std::string, InstrumentRange> instrument_ranges = default_instrument_ranges();
    // When set, a message whose offer breaks a range or the budget is penalized
    // instead of only being flagged.
    bool enforce = false;

    static MechanismSpec of(MechanismKind k) {
        MechanismSpec m;
        m.kind = k;
        return m;
    }
};

inline std::vector<std::string> validate(const MechanismSpec& m) {
    std::vector<std::string> p;
    if (!(m.pv_factor > 0)) p.push_back("pv_factor must be > 0");
    if (!(m.budget_per_farm >= 0)) p.push_back("budget_per_farm must be >= 0");
    for (const auto& [name, r] : m.instrument_ranges)
        if (!(r.lo <= r.hi)) p.push_back("instrument range for " + name + " is empty");
    return p;
}

struct UptakeScenario {
    double habitat_ha = 3.0;
    double margin_ha = 2.0;
};

using EconomicOffer = std::map<std::string, double>;

struct OfferCheck {
    double pv_cost = 0.0;
    bool within_budget = true;
    std::vector<std::string> violations;

    bool compliant() const { return within_budget && violations.empty(); }
};

inline std::string range_label(const InstrumentRange& r) { return "[" + py_number(r.lo) + "," + py_number(r.hi) + "]"; }

inline OfferCheck validate_economic_offer(const EconomicOffer& offer, const MechanismSpec& mech,
                                          const UptakeScenario& uptake = {}) {
    if (!(uptake.habitat_ha >= 0 && uptake.margin_ha >= 0)) throw InputError("uptake scenario must be nonnegative");
    auto get = [&](const char* k) {
        auto it = offer.find(k);
        return it == offer.end() ? 0.0 : it->second;
    };
    const double pv = mech.pv_factor;
    OfferCheck out;
    out.pv_cost = uptake.margin_ha * (get(instrument::margin_establishment) * 400.0 +
                                      get(instrument::margin_maintenance) * 60.0 * pv) +
                  uptake.habitat_ha * (get(instrument::habitat_establishment) * 300.0 +
                                       get(instrument::habitat_maintenance) * 70.0 * pv + get(instrument::payment));
    out.within_budget = out.pv_cost <= mech.budget_per_farm;
    for (const auto& [name, v] : offer) {
        auto r = mech.instrument_ranges.find(name);
        if (r == mech.instrument_ranges.end()) {
            out.violations.push_back("unknown instrument " + name);
            continue;
        }
        if (v > r->second.hi) out.violations.push_back(name + " exceeds " + range_label(r->second));
        else if (v < r->second.lo) out.violations.push_back(name + " below " + range_label(r->second));
    }
    if (!out.within_budget)
        out.violations.push_back("pv cost " + py_number(out.pv_cost) + " exceeds budget " + py_number(mech.budget_per_farm));
    return out;
}

/// Best-effort reading of the instruments a message offers. Each clause is
/// matched to one instrument by keywords and takes the first number in it;
/// "40%" reads as 0.4 for subsidy factors.
inline EconomicOffer parse_economic_offer(std::string_view message) {
    EconomicOffer offer;
    std::string text(message);
    for (char& c : text) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    static const std::regex clause_split(R"([\n;]|\.\s)");
    static const std::regex number(R"((\d+(?:\.\d+)?)\s*(%|percent)?)");
    for (std::sregex_token_iterator it(text.begin(), text.end(), clause_split, -1), end; it != end; ++it) {
        const std::string clause = *it;
        auto has = [&](const char* w) { return clause.find(w) != std::string::npos; };
        const char* which = nullptr;
        if (has("premium")) which = instrument::eco_premium;
        else if (has("minimum") && has("habitat") && !has("margin")) which = instrument::min_habitat_area;
        else if (has("minimum") && has("margin")) which = instrument::min_margin_fraction;
        else if (has("payment") || has("per hectare") || has("/ha")) {
            if (has("mainten")) which = has("margin") ? instrument::margin_maintenance : instrument::habitat_maintenance;
            else if (!has("subsid")) which = instrument::payment;
        }
        if (!which && has("subsid")) {
            const bool margin = has("margin"), habitat = has("habitat");
            if (has("mainten")) which = margin ? instrument::margin_maintenance : habitat ? instrument::habitat_maintenance : nullptr;
            else if (has("establish")) which = margin ? instrument::margin_establishment : habitat ? instrument::habitat_establishment : nullptr;
        }
        if (!which || offer.count(which)) continue;
        std::smatch m;
        if (!std::regex_search(clause, m, number)) continue;
        double v = std::stod(m[1].str());
        if (m[2].matched) v /= 100.0;
        offer[which] = v;
    }
    return offer;
}

// ---------------------------------------------------------------------------
// Farm-agent simulation

/// Line endings unified, trailing blanks and empty lines dropped.
inline std::string normalize_whitespace(std::string_view s) {
    std::string out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        auto nl = s.find('\n', pos);
        if (nl == std::string_view::npos) nl = s.size();
        auto line = s.substr(pos, nl - pos);
        const auto last = line.find_last_not_of(" \t\r");
        if (last != std::string_view::npos) {
            out.append(line.substr(0, last + 1));
            out += '\n';
        }
        pos = nl + 1;
    }
    return out;
}

struct FarmResponse {
    Candidate nudged;
    bool refused = false;
    std::string raw;
    std::vector<std::string> diagnostics;
};

/// Asks the farm agent to rewrite `baseline` in light of `message`. No code
/// block, a provider failure or an unchanged script all count as refusal.
inline FarmResponse simulate_farm_response(const Persona& persona, const Candidate& baseline, const Candidate& message,
                                           Gateway& gw, PromptContext base) {
    base.persona = std::string(to_string(persona.name));
    base.slots["baseline_code"] = baseline.body;
    base.slots["message"] = message.body;
    FarmResponse out;
    out.nudged.id = message.id + "_farm";
    out.nudged.kind = CandidateKind::heuristic_script;
    out.nudged.generation_born = message.generation_born;
    out.nudged.lineage.push_back({"farm_sim", {baseline.id, message.id}});
    std::optional<std::string> code;
    try {
        auto resp = gw.complete(compose_prompt(Role::farm_sim, PromptStage::nudge, base, message.id));
        out.raw = resp.raw;
        code = resp.parsed;
        if (!code) out.diagnostics.push_back("farm agent returned no code block; treated as refusal");
    } catch (const ProviderError& e) {
        out.diagnostics.push_back(std::string("farm agent unavailable; treated as refusal: ") + e.what());
    }
    if (code && normalize_whitespace(*code) == normalize_whitespace(baseline.body)) code.reset();
    out.refused = !code;
    out.nudged.body = code ? *code : baseline.body;
    return out;
}

// ---------------------------------------------------------------------------
// Nudge evaluation

using NudgeScorer = std::function<FitnessReport(const PlotInterventions&, const DirectionMap&, const std::vector<int>&)>;

struct NudgeContext {
    Farm farm;
    fs::path farm_input;  // input.geojson handed to scripts
    Candidate baseline;
    std::optional<PlotInterventions> baseline_actions;  // cached; computed when absent
    DirectionMap gt_dirs;
    Persona persona;
    MechanismSpec mechanism;
    PromptContext farm_prompt;  // params slots for the farm agent
    SandboxLimits limits;
    Fixer fixer;  // empty: no repair
    int max_repair_attempts = 3;
    NudgeScorer scorer;  // empty: error_nudge
    std::optional<fs::path> artifact_dir;
};

struct NudgeOutcome {
    Candidate message;
    Candidate nudged_script;
    bool refused = false;
    PlotInterventions actions;
    FitnessReport fitness;
    std::optional<OfferCheck> offer;
    int repair_attempts = 0;
    std::vector<std::string> diagnostics;
};

inline json nudge_outcome_to_json(const NudgeOutcome& o) {
    json actions = json::array();
    for (const auto& [id, r] : o.actions)
        actions.push_back({{"id", id}, {"margin_intervention", r.margin_intervention}, {"habitat_conversion", r.habitat_conversion}});
    json j{{"message_id", o.message.id},
           {"nudged_script_id", o.nudged_script.id},
           {"refused", o.refused},
           {"error", o.fitness.error},
           {"fitness", o.fitness.fitness},
           {"penalized", o.fitness.penalized},
           {"repair_attempts", o.repair_attempts},
           {"actions", actions},
           {"diagnostics", o.diagnostics}};
    if (o.offer)
        j["offer"] = {{"pv_cost", o.offer->pv_cost}, {"within_budget", o.offer->within_budget}, {"violations", o.offer->violations}};
    return j;
}

inline PlotInterventions run_baseline_actions(const NudgeContext& ctx) {
    const auto r = execute_candidate(ctx.baseline, ctx.farm_input, ExecStage::baseline, ctx.limits);
    if (!r.ok()) throw InputError("baseline script " + ctx.baseline.id + " does not run: " + failure_trace(r));
    return *r.interventions();
}

inline NudgeOutcome evaluate_nudge(const Candidate& message, const NudgeContext& ctx, Gateway& gw) {
    NudgeOutcome out;
    out.message = message;
    const auto plot_ids = ctx.farm.plot_ids();
    auto score = [&](const PlotInterventions& a) {
        return ctx.scorer ? ctx.scorer(a, ctx.gt_dirs, plot_ids) : error_nudge(a, ctx.gt_dirs, plot_ids);
    };

    if (message.needs_repair) {
        out.nudged_script = ctx.baseline;
        out.fitness = penalty_report("policy response had no \\communication block");
        return out;
    }
    if (ctx.mechanism.kind == MechanismKind::economic) {
        out.offer = validate_economic_offer(parse_economic_offer(message.body), ctx.mechanism);
        for (const auto& v : out.offer->violations) out.diagnostics.push_back("offer: " + v);
    }

    auto resp = simulate_farm_response(ctx.persona, ctx.baseline, message, gw, ctx.farm_prompt);
    out.nudged_script = resp.nudged;
    out.refused = resp.refused;
    out.diagnostics.insert(out.diagnostics.end(), resp.diagnostics.begin(), resp.diagnostics.end());

    if (resp.refused) {
        out.actions = ctx.baseline_actions ? *ctx.baseline_actions : run_baseline_actions(ctx);
        out.fitness = score(out.actions);
    } else {
        auto r = execute_candidate(out.nudged_script, ctx.farm_input, ExecStage::nudged, ctx.limits);
        if (!r.ok() && ctx.fixer && ctx.max_repair_attempts > 0) {
            auto rep = repair_and_rescore(out.nudged_script, std::move(r), ctx.fixer, ctx.max_repair_attempts,
                                          ctx.farm_input, ExecStage::nudged, ctx.limits);
            out.nudged_script = std::move(rep.candidate);
            out.repair_attempts = rep.attempts;
            r = std::move(rep.result);
        }
        if (r.ok()) {
            out.actions = *r.interventions();
            out.fitness = score(out.actions);
        } else {
            out.fitness = penalty_report("nudged script failed: " + failure_trace(r));
        }
        out.diagnostics.insert(out.diagnostics.end(), r.diagnostics.begin(), r.diagnostics.end());
    }
    if (ctx.mechanism.enforce && out.offer && !out.offer->compliant())
        out.fitness = penalty_report("offer violates the mechanism: " + out.offer->violations.front());

    if (ctx.artifact_dir)
        write_text(*ctx.artifact_dir / "nudged_scripts" / (out.nudged_script.id + ".py"), out.nudged_script.body);
    return out;
}

// ---------------------------------------------------------------------------
// Message evolution

struct MimicSetup {
    NudgeContext nudge;  // persona and mechanism are overwritten per run
    std::string global_code;
    std::string social_comparison_data;
    EconomicParams params = default_economic_params();
};

struct MimicRun {
    PersonaKind persona = PersonaKind::resistant;
    MechanismKind mechanism = MechanismKind::behavioral;
    RunResult run;
    NudgeOutcome best;
    std::map<std::string, NudgeOutcome> outcomes;

    std::string label() const {
        return "(P:" + std::string(to_string(persona)) + ", N:" + std::string(to_string(mechanism)) + ")";
    }
};

/// Prompt slots for the policy roles.
inline PromptContext policy_context(const MimicSetup& s, const MechanismSpec& mech) {
    PromptContext ctx;
    add_param_slots(ctx, s.params);
    ctx.mechanism = std::string(to_string(mech.kind));
    ctx.slots["baseline_code"] = s.nudge.baseline.body;
    ctx.slots["global_code"] = s.global_code;
    ctx.slots["budget_per_farm"] = py_number(mech.budget_per_farm);
    ctx.slots["pv_factor"] = py_number(mech.pv_factor);
    ctx.slots["social_comparison_data"] = s.social_comparison_data;
    return ctx;
}

/// Runs the engine over messages for one persona x mechanism cell. With
/// `out_dir`, messages land in messages/gen_<g>/msg_<id>.txt, nudged scripts
/// in nudged_scripts/, and per-message outcomes in outcomes.json.
inline MimicRun evolve_messages(const MimicSetup& setup, PersonaKind persona, const MechanismSpec& mech,
                                EngineConfig cfg, Gateway& gw, const std::optional<fs::path>& out_dir = std::nullopt) {
    if (auto p = validate(mech); !p.empty()) throw InputError("mechanism: " + p.front());
    NudgeContext ctx = setup.nudge;
    ctx.persona = Persona::from_catalog(persona);
    ctx.mechanism = mech;
    ctx.artifact_dir = out_dir;
    if (ctx.farm_prompt.slots.find("crop_prices") == ctx.farm_prompt.slots.end()) add_param_slots(ctx.farm_prompt, setup.params);
    if (!ctx.baseline_actions) ctx.baseline_actions = run_baseline_actions(ctx);

    cfg.kind = CandidateKind::nudge_message;
    cfg.body_prefix = "msg_";
    if (out_dir) cfg.run_dir = *out_dir / "messages";

    MimicRun result;
    result.persona = persona;
    result.mechanism = mech.kind;
    const json prior = out_dir && fs::exists(*out_dir / "outcomes.json") ? read_json(*out_dir / "outcomes.json") : json::object();
    for (const auto& [id, j] : prior.items()) {
        NudgeOutcome o;
        o.message.id = id;
        o.refused = j.value("refused", false);
        o.fitness.error = j.value("error", 0.0);
        o.fitness.fitness = j.value("fitness", 0.0);
        o.fitness.penalized = j.value("penalized", false);
        result.outcomes[id] = std::move(o);
    }

    std::mutex mu;
    LlmVariator variator(gw, PromptStage::nudge, policy_context(setup, mech), CandidateKind::nudge_message);
    Engine engine(cfg, variator, [&](Candidate& msg) {
        auto o = evaluate_nudge(msg, ctx, gw);
        FitnessReport r = o.fitness;
        std::lock_guard lock(mu);
        result.outcomes[msg.id] = std::move(o);
        return r;
    });
    result.run = engine.run();
    if (auto it = result.outcomes.find(result.run.best().id); it != result.outcomes.end()) result.best = it->second;
    result.best.message = result.run.best();

    if (out_dir) {
        json all = json::object();
        for (const auto& [id, o] : result.outcomes) all[id] = nudge_outcome_to_json(o);
        write_json(*out_dir / "outcomes.json", all);
        write_text(*out_dir / "summary.csv",
                   "persona,mechanism,label,best_message_id,best_fitness,best_error,refused\n" +
                       std::string(to_string(persona)) + "," + std::string(to_string(mech.kind)) + "," +
                       csv_cell(result.label()) + "," + csv_cell(result.best.message.id) + "," +
                       fmt_real(result.best.message.fitness()) + "," + fmt_real(result.best.message.error()) + "," +
                       (result.best.refused ? "1" : "0") + "\n");
    }
    return result;
}

/// Every persona x mechanism combination, one subdirectory per cell, plus a
/// combined matrix.csv.
inline std::vector<MimicRun> run_mimic_matrix(const MimicSetup& setup, const std::vector<PersonaKind>& personas,
                                              const std::vector<MechanismKind>& mechanisms, const EngineConfig& cfg,
                                              Gateway& gw, const std::optional<fs::path>& out_dir = std::nullopt,
                                              const MechanismSpec& mech_template = {}) {
    std::vector<MimicRun> runs;
    std::string csv = "persona,mechanism,label,best_message_id,best_fitness,best_error,initial_mean_fitness,refused\n";
    for (auto p : personas)
        for (auto m : mechanisms) {
            MechanismSpec mech = mech_template;
            mech.kind = m;
            std::optional<fs::path> cell;
            if (out_dir) cell = *out_dir / (std::string(to_string(p)) + "_" + std::string(to_string(m)));
            runs.push_back(evolve_messages(setup, p, mech, cfg, gw, cell));
            const auto& r = runs.back();
            csv += std::string(to_string(p)) + "," + std::string(to_string(m)) + "," + csv_cell(r.label()) + "," +
                   csv_cell(r.best.message.id) + "," + fmt_real(r.best.message.fitness()) + "," +
                   fmt_real(r.best.message.error()) + "," + fmt_real(r.run.history.front().mean_fitness) + "," +
                   (r.best.refused ? "1" : "0") + "\n";
        }
    if (out_dir) write_text(*out_dir / "matrix.csv", csv);
    return runs;
}

}  // namespace echomimic
