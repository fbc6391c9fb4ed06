#pragma once

// Stage error metrics and the error -> fitness transform.

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "echomimic/connectivity.hpp"
#include "echomimic/landscape.hpp"

namespace echomimic {

inline constexpr double default_epsilon = 1e-6;

/// Largest per-plot error any of the three metrics can produce.
inline constexpr double max_stage_error = 2.0;

struct PlotError {
    int plot_id = 0;
    double contribution = 0.0;
};

struct FitnessReport {
    double error = 0.0;
    double fitness = 0.0;
    std::vector<PlotError> per_plot;
    std::vector<std::string> diagnostics;
    std::size_t missing_predictions = 0;
    bool penalized = false;
};

inline double fitness_of(double error, double epsilon = default_epsilon) {
    if (!(error >= 0.0)) throw InputError("fitness_of: error must be >= 0");
    if (!(epsilon > 0.0)) throw InputError("fitness_of: epsilon must be > 0");
    return 1.0 / (error + epsilon);
}

/// 1 - |a ∩ b| / |a ∪ b|; two empty sets are a perfect match (0).
inline double jaccard_distance(DirectionSet a, DirectionSet b) {
    const auto uni = (a | b).size();
    if (uni == 0) return 0.0;
    return 1.0 - static_cast<double>((a & b).size()) / static_cast<double>(uni);
}

namespace detail {

template <typename Map, typename Contribution>
FitnessReport mean_over_plots(const std::vector<int>& plot_ids, const Map& pred, const Map& gt, double epsilon,
                              Contribution&& contribution) {
    FitnessReport r;
    std::set<int> universe(plot_ids.begin(), plot_ids.end());
    for (const auto& [id, _] : pred)
        if (!universe.contains(id)) r.diagnostics.push_back("prediction for unknown plot " + std::to_string(id) + " ignored");
    double sum = 0.0;
    for (int id : universe) {
        auto p = pred.find(id);
        auto g = gt.find(id);
        if (p == pred.end()) ++r.missing_predictions;
        const double c = contribution(id, p == pred.end() ? nullptr : &p->second, g == gt.end() ? nullptr : &g->second);
        r.per_plot.push_back({id, c});
        sum += c;
    }
    if (r.missing_predictions > 0)
        r.diagnostics.push_back(std::to_string(r.missing_predictions) + " plot(s) missing from prediction, scored as zero");
    r.error = universe.empty() ? 0.0 : sum / static_cast<double>(universe.size());
    r.fitness = fitness_of(r.error, epsilon);
    return r;
}

template <typename Map>
std::vector<int> union_ids(const Map& a, const Map& b) {
    std::set<int> ids;
    for (const auto& [id, _] : a) ids.insert(id);
    for (const auto& [id, _] : b) ids.insert(id);
    return {ids.begin(), ids.end()};
}

}  // namespace detail

/// Mean over plots of |m_gt - m_p| + |h_gt - h_p|; absent plots count as zero interventions.
inline FitnessReport error_npv(const PlotInterventions& pred, const PlotInterventions& gt,
                               const std::vector<int>& plot_ids, double epsilon = default_epsilon) {
    return detail::mean_over_plots(plot_ids, pred, gt, epsilon,
                                   [](int, const InterventionRecord* p, const InterventionRecord* g) {
                                       const InterventionRecord zero{};
                                       const auto& pp = p ? *p : zero;
                                       const auto& gg = g ? *g : zero;
                                       return std::abs(gg.margin_intervention - pp.margin_intervention) +
                                              std::abs(gg.habitat_conversion - pp.habitat_conversion);
                                   });
}

inline FitnessReport error_npv(const PlotInterventions& pred, const PlotInterventions& gt,
                               double epsilon = default_epsilon) {
    return error_npv(pred, gt, detail::union_ids(pred, gt), epsilon);
}

/// Mean over plots of Jaccard distances of margin and habitat direction sets.
inline FitnessReport error_conn(const DirectionMap& pred, const DirectionMap& gt, const std::vector<int>& plot_ids,
                                double epsilon = default_epsilon) {
    return detail::mean_over_plots(plot_ids, pred, gt, epsilon,
                                   [](int, const PlotDirections* p, const PlotDirections* g) {
                                       const PlotDirections none{};
                                       const auto& pp = p ? *p : none;
                                       const auto& gg = g ? *g : none;
                                       return jaccard_distance(gg.margin, pp.margin) +
                                              jaccard_distance(gg.habitat, pp.habitat);
                                   });
}

inline FitnessReport error_conn(const DirectionMap& pred, const DirectionMap& gt, double epsilon = default_epsilon) {
    return error_conn(pred, gt, detail::union_ids(pred, gt), epsilon);
}

/// Mean over plots of | |MD|/4 - m_p | + | |HD|/4 - h_p |.
inline FitnessReport error_nudge(const PlotInterventions& pred, const DirectionMap& gt_dirs,
                                 const std::vector<int>& plot_ids, double epsilon = default_epsilon) {
    FitnessReport r;
    std::set<int> universe(plot_ids.begin(), plot_ids.end());
    for (const auto& [id, _] : pred)
        if (!universe.contains(id)) r.diagnostics.push_back("prediction for unknown plot " + std::to_string(id) + " ignored");
    double sum = 0.0;
    for (int id : universe) {
        InterventionRecord p{};
        if (auto it = pred.find(id); it != pred.end()) p = it->second;
        else ++r.missing_predictions;
        PlotDirections g{};
        if (auto it = gt_dirs.find(id); it != gt_dirs.end()) g = it->second;
        const double c = std::abs(quantize_directions(g.margin) - p.margin_intervention) +
                         std::abs(quantize_directions(g.habitat) - p.habitat_conversion);
        r.per_plot.push_back({id, c});
        sum += c;
    }
    if (r.missing_predictions > 0)
        r.diagnostics.push_back(std::to_string(r.missing_predictions) + " plot(s) missing from prediction, scored as zero");
    r.error = universe.empty() ? 0.0 : sum / static_cast<double>(universe.size());
    r.fitness = fitness_of(r.error, epsilon);
    return r;
}

inline FitnessReport error_nudge(const PlotInterventions& pred, const DirectionMap& gt_dirs,
                                 double epsilon = default_epsilon) {
    std::set<int> ids;
    for (const auto& [id, _] : pred) ids.insert(id);
    for (const auto& [id, _] : gt_dirs) ids.insert(id);
    return error_nudge(pred, gt_dirs, std::vector<int>(ids.begin(), ids.end()), epsilon);
}

/// Error assigned to candidates that still fail after repair; strictly worse
/// than any attainable stage error.
inline double penalty_error(double max_error = max_stage_error) { return 10.0 * max_error; }

inline FitnessReport penalty_report(std::string reason, double epsilon = default_epsilon) {
    FitnessReport r;
    r.error = penalty_error();
    r.fitness = fitness_of(r.error, epsilon);
    r.penalized = true;
    r.diagnostics.push_back(std::move(reason));
    return r;
}

}  // namespace echomimic
