#pragma once

// Habitat graph construction and the Integral Index of Connectivity.

#include <array>
#include <deque>
#include <map>
#include <vector>

#include "echomimic/landscape.hpp"

namespace echomimic {

enum class PatchSource { existing_habitat, converted_habitat, margin_strip };

inline std::string_view to_string(PatchSource s) {
    switch (s) {
        case PatchSource::existing_habitat: return "existing_habitat";
        case PatchSource::converted_habitat: return "converted_habitat";
        case PatchSource::margin_strip: return "margin_strip";
    }
    return "";
}

struct HabitatPatch {
    int id = 0;
    double area = 0.0;  // ha
    PatchSource source = PatchSource::existing_habitat;
    PlotKey plot;
    std::optional<Direction> direction;
    std::vector<Polygon> geometry;
};

struct HabitatGraph {
    std::vector<HabitatPatch> nodes;
    std::vector<std::pair<int, int>> edges;  // indices into nodes, first < second
    double total_landscape_area = 0.0;        // ha
    std::vector<std::string> diagnostics;

    void add_edge(int u, int v) {
        if (u == v) throw InputError("habitat graph: self-loop");
        if (u > v) std::swap(u, v);
        const auto e = std::make_pair(u, v);
        if (std::find(edges.begin(), edges.end(), e) == edges.end()) edges.push_back(e);
    }

    std::vector<std::vector<int>> adjacency() const {
        std::vector<std::vector<int>> adj(nodes.size());
        for (auto [u, v] : edges) {
            adj[static_cast<std::size_t>(u)].push_back(v);
            adj[static_cast<std::size_t>(v)].push_back(u);
        }
        return adj;
    }
};

struct ConnectivityScore {
    double iic = 0.0;
    std::vector<std::size_t> component_sizes;  // patch count per component, descending
};

inline constexpr double square_metres_per_hectare = 10000.0;

using LandscapeInterventions = std::map<PlotKey, PlotDirections>;

struct GraphOptions {
    double margin_width = 10.0;
    double adjacency_buffer = 0.0;
    QuadrantCenter quadrant_center = QuadrantCenter::centroid;
};

/// Nodes are existing habitat plots plus realized intervention geometry;
/// two nodes are linked when their geometries come within `adjacency_buffer`
/// (each buffered by half of it).
inline HabitatGraph build_habitat_graph(const Landscape& land, const LandscapeInterventions& interventions,
                                        const GraphOptions& opts = {}) {
    HabitatGraph g;
    g.total_landscape_area = area(land.boundary) / square_metres_per_hectare;
    for (const auto& [key, _] : interventions) {
        const Farm* farm = land.find(key.farm_id);
        const Plot* plot = farm ? farm->find(key.plot_id) : nullptr;
        if (!plot)
            throw InputError("intervention references unknown plot " + std::to_string(key.farm_id) + "/" +
                             std::to_string(key.plot_id));
        if (plot->type == PlotType::hab_plot)
            throw InputError("intervention targets existing habitat plot " + std::to_string(key.farm_id) + "/" +
                             std::to_string(key.plot_id));
    }
    auto add_node = [&](PatchSource src, PlotKey key, std::optional<Direction> dir, std::vector<Polygon> geom) {
        const double a = total_area(geom) / square_metres_per_hectare;
        if (!(a > 0.0)) return;
        g.nodes.push_back({static_cast<int>(g.nodes.size()), a, src, key, dir, std::move(geom)});
    };
    for (const auto& farm : land.farms) {
        for (const auto& plot : farm.plots) {
            const PlotKey key{farm.id, plot.id};
            if (plot.type == PlotType::hab_plot) {
                add_node(PatchSource::existing_habitat, key, std::nullopt, {plot.geometry});
                continue;
            }
            auto it = interventions.find(key);
            if (it == interventions.end()) continue;
            const DirectionSet habitat = it->second.habitat;
            // Margin strips inside a converted quadrant are part of that habitat region.
            const DirectionSet margin = DirectionSet::from_bits(it->second.margin.bits() & ~habitat.bits());
            double width = opts.margin_width;
            const double limit = min_half_extent(plot.geometry);
            if (!margin.empty() && !(width < limit)) {
                width = 0.5 * limit;
                g.diagnostics.push_back("plot " + std::to_string(farm.id) + "/" + std::to_string(plot.id) +
                                        ": margin width reduced to " + std::to_string(width));
            }
            const auto realized = realize_intervention_geometry(plot, margin, habitat, width, opts.quadrant_center);
            for (const auto& d : realized.diagnostics) g.diagnostics.push_back(d);
            for (auto d : all_directions) {
                const auto idx = static_cast<std::size_t>(d);
                if (!realized.habitat[idx].empty()) add_node(PatchSource::converted_habitat, key, d, realized.habitat[idx]);
                if (!realized.margin[idx].empty()) add_node(PatchSource::margin_strip, key, d, realized.margin[idx]);
            }
        }
    }
    const double scale = std::max(1.0, norm(Point{bounding_box(land.boundary).max_x - bounding_box(land.boundary).min_x,
                                                  bounding_box(land.boundary).max_y - bounding_box(land.boundary).min_y}));
    const double threshold = opts.adjacency_buffer + coord_tol * scale;
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
        for (std::size_t j = i + 1; j < g.nodes.size(); ++j)
            if (distance(g.nodes[i].geometry, g.nodes[j].geometry) <= threshold)
                g.add_edge(static_cast<int>(i), static_cast<int>(j));
    return g;
}

/// Unweighted shortest-path link counts from `source`; -1 marks unreachable.
inline std::vector<int> link_distances(const std::vector<std::vector<int>>& adj, int source) {
    std::vector<int> dist(adj.size(), -1);
    std::deque<int> queue{source};
    dist[static_cast<std::size_t>(source)] = 0;
    while (!queue.empty()) {
        const int u = queue.front();
        queue.pop_front();
        for (int v : adj[static_cast<std::size_t>(u)]) {
            if (dist[static_cast<std::size_t>(v)] >= 0) continue;
            dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
            queue.push_back(v);
        }
    }
    return dist;
}

/// IIC = sum_i sum_j a_i a_j / (1 + nl_ij) / A_L^2, with disconnected pairs contributing 0.
inline ConnectivityScore compute_iic(const HabitatGraph& g) {
    ConnectivityScore score;
    if (g.nodes.empty()) return score;
    if (!(g.total_landscape_area > 0.0)) throw InputError("compute_iic: total landscape area must be > 0");
    const auto adj = g.adjacency();
    std::vector<int> component(g.nodes.size(), -1);
    double sum = 0.0;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const auto dist = link_distances(adj, static_cast<int>(i));
        if (component[i] < 0) {
            const int c = static_cast<int>(score.component_sizes.size());
            std::size_t count = 0;
            for (std::size_t j = 0; j < dist.size(); ++j)
                if (dist[j] >= 0) {
                    component[j] = c;
                    ++count;
                }
            score.component_sizes.push_back(count);
        }
        for (std::size_t j = 0; j < dist.size(); ++j)
            if (dist[j] >= 0) sum += g.nodes[i].area * g.nodes[j].area / (1.0 + dist[j]);
    }
    score.iic = sum / (g.total_landscape_area * g.total_landscape_area);
    std::sort(score.component_sizes.begin(), score.component_sizes.end(), std::greater<>());
    return score;
}

// ---------------------------------------------------------------------------
// Directions

/// Intervention fraction per quadrant, indexed by Direction.
using QuadrantFractions = std::array<double, 4>;

/// Directions whose quadrant fraction strictly exceeds `threshold`.
inline DirectionSet extract_directions(const QuadrantFractions& fractions, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw InputError("threshold must be in (0,1)");
    DirectionSet out;
    for (auto d : all_directions) {
        const double f = fractions[static_cast<std::size_t>(d)];
        if (!(f >= 0.0 && f <= 1.0)) throw InputError("quadrant fractions must be in [0,1]");
        if (f > threshold) out.insert(d);
    }
    return out;
}

/// Share of each quadrant of `plot` covered by the (convex) intervention pieces.
inline QuadrantFractions quadrant_fractions(const Plot& plot, const std::vector<Polygon>& pieces,
                                            QuadrantCenter mode = QuadrantCenter::centroid) {
    QuadrantFractions out{};
    const Polygon poly = make_ccw(plot.geometry);
    const Point origin = quadrant_origin(poly, mode);
    for (auto d : all_directions) {
        const Polygon q = quadrant(poly, d, origin);
        const double qa = area(q);
        if (!(qa > 0.0)) continue;
        double covered = 0.0;
        for (const auto& piece : pieces) covered += area(intersect_convex(q, piece));
        out[static_cast<std::size_t>(d)] = std::clamp(covered / qa, 0.0, 1.0);
    }
    return out;
}

inline DirectionSet extract_directions(const Plot& plot, const std::vector<Polygon>& pieces, double threshold,
                                       QuadrantCenter mode = QuadrantCenter::centroid) {
    return extract_directions(quadrant_fractions(plot, pieces, mode), threshold);
}

/// |dirs| / 4.
inline double quantize_directions(DirectionSet dirs) { return static_cast<double>(dirs.size()) / 4.0; }

}  // namespace echomimic
