#pragma once

// Evolvable individuals (scripts or messages) and their JSON form.

#include <optional>
#include <string>
#include <vector>

#include "echomimic/complexity.hpp"
#include "echomimic/fitness.hpp"
#include "echomimic/landscape_io.hpp"

namespace echomimic {

enum class CandidateKind { heuristic_script, nudge_message };

inline std::string_view to_string(CandidateKind k) {
    return k == CandidateKind::heuristic_script ? "heuristic_script" : "nudge_message";
}

inline CandidateKind parse_candidate_kind(std::string_view s) {
    if (s == "heuristic_script") return CandidateKind::heuristic_script;
    if (s == "nudge_message") return CandidateKind::nudge_message;
    throw ParseError("unknown candidate kind '" + std::string(s) + "'");
}

struct LineageEntry {
    std::string op;
    std::vector<std::string> parents;
    friend bool operator==(const LineageEntry&, const LineageEntry&) = default;
};

struct Candidate {
    std::string id;
    CandidateKind kind = CandidateKind::heuristic_script;
    std::string body;
    std::vector<LineageEntry> lineage;
    std::vector<FitnessReport> fitness_history;
    std::optional<ComplexityMetrics> complexity;
    int generation_born = 0;
    bool needs_repair = false;  // response had no extractable body; `body` holds the raw text

    double fitness() const { return fitness_history.empty() ? 0.0 : fitness_history.back().fitness; }
    double error() const { return fitness_history.empty() ? penalty_error() : fitness_history.back().error; }
    bool scored() const { return !fitness_history.empty(); }
    bool penalized() const { return !fitness_history.empty() && fitness_history.back().penalized; }
};

inline json fitness_report_to_json(const FitnessReport& r) {
    json per = json::array();
    for (const auto& p : r.per_plot) per.push_back({{"plot_id", p.plot_id}, {"error", p.contribution}});
    return {{"error", r.error},        {"fitness", r.fitness},
            {"penalized", r.penalized}, {"missing_predictions", r.missing_predictions},
            {"per_plot", per},          {"diagnostics", r.diagnostics}};
}

inline FitnessReport fitness_report_from_json(const json& j) {
    FitnessReport r;
    r.error = j.at("error").get<double>();
    r.fitness = j.at("fitness").get<double>();
    r.penalized = j.value("penalized", false);
    r.missing_predictions = j.value("missing_predictions", std::size_t{0});
    const json per_plot = j.value("per_plot", json::array());
    for (const auto& p : per_plot)
        r.per_plot.push_back({p.at("plot_id").get<int>(), p.at("error").get<double>()});
    r.diagnostics = j.value("diagnostics", std::vector<std::string>{});
    return r;
}

inline json complexity_to_json(const ComplexityMetrics& m) {
    return {{"table_version", m.table_version},
            {"parsed", m.parsed},
            {"parse_error", m.parse_error},
            {"lloc", m.lloc},
            {"sloc", m.sloc},
            {"comment_lines", m.comment_lines},
            {"cyclomatic", m.cyclomatic},
            {"halstead_n1", m.halstead_n1},
            {"halstead_n2", m.halstead_n2},
            {"halstead_N1", m.halstead_N1},
            {"halstead_N2", m.halstead_N2},
            {"difficulty", m.difficulty},
            {"volume", m.volume},
            {"maintainability_index", m.maintainability_index}};
}

inline ComplexityMetrics complexity_from_json(const json& j) {
    ComplexityMetrics m;
    m.table_version = j.at("table_version").get<std::string>();
    m.parsed = j.at("parsed").get<bool>();
    m.parse_error = j.value("parse_error", "");
    m.lloc = j.at("lloc").get<int>();
    m.sloc = j.value("sloc", 0);
    m.comment_lines = j.value("comment_lines", 0);
    m.cyclomatic = j.at("cyclomatic").get<int>();
    m.halstead_n1 = j.at("halstead_n1").get<int>();
    m.halstead_n2 = j.at("halstead_n2").get<int>();
    m.halstead_N1 = j.at("halstead_N1").get<int>();
    m.halstead_N2 = j.at("halstead_N2").get<int>();
    m.difficulty = j.at("difficulty").get<double>();
    m.volume = j.at("volume").get<double>();
    m.maintainability_index = j.at("maintainability_index").get<double>();
    return m;
}

/// Metadata only; the body is stored in its own text file.
inline json candidate_meta_to_json(const Candidate& c) {
    json lineage = json::array();
    for (const auto& e : c.lineage) lineage.push_back({{"op", e.op}, {"parents", e.parents}});
    json history = json::array();
    for (const auto& r : c.fitness_history) history.push_back(fitness_report_to_json(r));
    json j{{"id", c.id},
           {"kind", to_string(c.kind)},
           {"generation_born", c.generation_born},
           {"needs_repair", c.needs_repair},
           {"lineage", lineage},
           {"fitness_history", history}};
    j["complexity"] = c.complexity ? complexity_to_json(*c.complexity) : json(nullptr);
    return j;
}

inline Candidate candidate_from_json(const json& j, std::string body) {
    Candidate c;
    c.id = j.at("id").get<std::string>();
    c.kind = parse_candidate_kind(j.at("kind").get<std::string>());
    c.body = std::move(body);
    c.generation_born = j.at("generation_born").get<int>();
    c.needs_repair = j.value("needs_repair", false);
    for (const auto& e : j.at("lineage"))
        c.lineage.push_back({e.at("op").get<std::string>(), e.at("parents").get<std::vector<std::string>>()});
    for (const auto& r : j.at("fitness_history")) c.fitness_history.push_back(fitness_report_from_json(r));
    if (j.contains("complexity") && !j["complexity"].is_null()) c.complexity = complexity_from_json(j["complexity"]);
    return c;
}

}  // namespace echomimic
