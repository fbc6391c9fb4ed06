#pragma once

// Farms, plots and interventions, plus the synthetic landscape generator.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "echomimic/geometry.hpp"
#include "echomimic/random.hpp"

namespace echomimic {

class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class PlotType { ag_plot, hab_plot };

inline std::string_view to_string(PlotType t) { return t == PlotType::ag_plot ? "ag_plot" : "hab_plot"; }

inline std::optional<PlotType> parse_plot_type(std::string_view s) {
    if (s == "ag_plot") return PlotType::ag_plot;
    if (s == "hab_plot") return PlotType::hab_plot;
    return std::nullopt;
}

struct Plot {
    int id = 0;
    int farm_id = 0;
    Polygon geometry;
    PlotType type = PlotType::ag_plot;
    std::string label;
    std::optional<double> yield_value;  // tonnes/ha, ag plots only
    std::vector<int> nbs;

    friend bool operator==(const Plot&, const Plot&) = default;
};

struct Farm {
    int id = 0;
    Polygon geometry;
    std::vector<Plot> plots;

    const Plot* find(int plot_id) const {
        for (const auto& p : plots)
            if (p.id == plot_id) return &p;
        return nullptr;
    }
    std::vector<int> plot_ids() const {
        std::vector<int> ids;
        ids.reserve(plots.size());
        for (const auto& p : plots) ids.push_back(p.id);
        return ids;
    }
    friend bool operator==(const Farm&, const Farm&) = default;
};

struct Landscape {
    std::vector<Farm> farms;
    Polygon boundary;
    std::string crs_note = "planar synthetic coordinates, metres";

    const Farm* find(int farm_id) const {
        for (const auto& f : farms)
            if (f.id == farm_id) return &f;
        return nullptr;
    }
    std::size_t plot_count() const {
        std::size_t n = 0;
        for (const auto& f : farms) n += f.plots.size();
        return n;
    }
    friend bool operator==(const Landscape&, const Landscape&) = default;
};

/// Landscape-wide plot address (plot ids are unique only within a farm).
struct PlotKey {
    int farm_id = 0;
    int plot_id = 0;
    auto operator<=>(const PlotKey&) const = default;
};

struct InterventionRecord {
    int plot_id = 0;
    double margin_intervention = 0.0;
    double habitat_conversion = 0.0;

    friend bool operator==(const InterventionRecord&, const InterventionRecord&) = default;
};

using PlotInterventions = std::map<int, InterventionRecord>;

// ---------------------------------------------------------------------------
// Directions

enum class Direction : std::uint8_t { north_west = 0, north_east = 1, south_west = 2, south_east = 3 };

inline constexpr std::array<Direction, 4> all_directions{Direction::north_west, Direction::north_east,
                                                         Direction::south_west, Direction::south_east};

inline std::string_view to_string(Direction d) {
    switch (d) {
        case Direction::north_west: return "north-west";
        case Direction::north_east: return "north-east";
        case Direction::south_west: return "south-west";
        case Direction::south_east: return "south-east";
    }
    return "";
}

inline std::optional<Direction> parse_direction(std::string_view s) {
    for (auto d : all_directions)
        if (to_string(d) == s) return d;
    return std::nullopt;
}

/// Subset of the four quadrant directions.
class DirectionSet {
public:
    constexpr DirectionSet() = default;
    constexpr DirectionSet(std::initializer_list<Direction> dirs) {
        for (auto d : dirs) insert(d);
    }
    static constexpr DirectionSet from_bits(std::uint8_t bits) {
        DirectionSet s;
        s.bits_ = bits & 0x0F;
        return s;
    }

    constexpr void insert(Direction d) { bits_ |= static_cast<std::uint8_t>(1u << static_cast<unsigned>(d)); }
    constexpr bool contains(Direction d) const { return (bits_ >> static_cast<unsigned>(d)) & 1u; }
    constexpr std::size_t size() const { return static_cast<std::size_t>(std::popcount(bits_)); }
    constexpr bool empty() const { return bits_ == 0; }
    constexpr std::uint8_t bits() const { return bits_; }

    constexpr DirectionSet operator&(DirectionSet o) const { return from_bits(bits_ & o.bits_); }
    constexpr DirectionSet operator|(DirectionSet o) const { return from_bits(bits_ | o.bits_); }
    friend constexpr bool operator==(DirectionSet, DirectionSet) = default;

    std::vector<Direction> members() const {
        std::vector<Direction> out;
        for (auto d : all_directions)
            if (contains(d)) out.push_back(d);
        return out;
    }
    std::vector<std::string> to_strings() const {
        std::vector<std::string> out;
        for (auto d : members()) out.emplace_back(to_string(d));
        return out;
    }
    /// Throws InputError on an unknown direction string; duplicates are rejected.
    static DirectionSet from_strings(const std::vector<std::string>& names) {
        DirectionSet s;
        for (const auto& n : names) {
            auto d = parse_direction(n);
            if (!d) throw InputError("unknown direction '" + n + "'");
            if (s.contains(*d)) throw InputError("duplicate direction '" + n + "'");
            s.insert(*d);
        }
        return s;
    }

private:
    std::uint8_t bits_ = 0;
};

/// Margin and habitat direction choices for one plot.
struct PlotDirections {
    int plot_id = 0;
    PlotType plot_type = PlotType::ag_plot;
    std::string label;
    DirectionSet margin;
    DirectionSet habitat;

    friend bool operator==(const PlotDirections&, const PlotDirections&) = default;
};

using DirectionMap = std::map<int, PlotDirections>;

// ---------------------------------------------------------------------------
// Economic parameters

struct InterventionCost {
    double implementation = 0.0;  // USD/ha, one-time
    double maintenance = 0.0;     // USD/ha/yr
    friend bool operator==(const InterventionCost&, const InterventionCost&) = default;
};

struct EconomicParams {
    std::vector<std::pair<std::string, double>> crop_prices;  // USD/tonne, insertion ordered
    InterventionCost margin;
    InterventionCost habitat;
    double ag_maintenance = 0.0;  // USD/ha/yr

    std::optional<double> price(std::string_view crop) const {
        for (const auto& [name, p] : crop_prices)
            if (name == crop) return p;
        return std::nullopt;
    }
    friend bool operator==(const EconomicParams&, const EconomicParams&) = default;
};

inline EconomicParams default_economic_params() {
    EconomicParams p;
    p.crop_prices = {{"Soybeans", 370},     {"Oats", 95},    {"Corn", 190},
                     {"Canola/rapeseed", 1100}, {"Barley", 120}, {"Spring wheat", 200}};
    p.margin = {400, 60};
    p.habitat = {300, 70};
    p.ag_maintenance = 100;
    return p;
}

inline std::vector<std::string> validate(const EconomicParams& p) {
    std::vector<std::string> problems;
    for (const auto& [crop, _] : default_economic_params().crop_prices)
        if (!p.price(crop)) problems.push_back("missing crop price for '" + crop + "'");
    for (const auto& [crop, price] : p.crop_prices)
        if (!(price > 0)) problems.push_back("crop price for '" + crop + "' must be > 0");
    for (double v : {p.margin.implementation, p.margin.maintenance, p.habitat.implementation,
                     p.habitat.maintenance, p.ag_maintenance})
        if (!(v > 0)) {
            problems.push_back("intervention costs must be > 0");
            break;
        }
    return problems;
}

// ---------------------------------------------------------------------------
// Validation

inline constexpr double area_rel_tol = 1e-6;
inline constexpr double coord_tol = 1e-9;

inline std::vector<std::string> validate(const Plot& p) {
    std::vector<std::string> problems;
    const std::string tag = "plot " + std::to_string(p.id);
    if (p.geometry.empty() || !(area(p.geometry) > 0.0)) problems.push_back(tag + ": geometry has no area");
    else if (!is_simple(p.geometry)) problems.push_back(tag + ": geometry is not a simple polygon");
    if (p.type == PlotType::hab_plot && p.yield_value) problems.push_back(tag + ": hab_plot must not carry a yield");
    if (p.type == PlotType::ag_plot && (!p.yield_value || !(*p.yield_value >= 0.0)))
        problems.push_back(tag + ": ag_plot requires a yield >= 0");
    return problems;
}

inline std::vector<std::string> validate(const Farm& f) {
    std::vector<std::string> problems;
    std::map<int, const Plot*> by_id;
    for (const auto& p : f.plots) {
        for (auto& msg : validate(p)) problems.push_back(std::move(msg));
        if (!by_id.emplace(p.id, &p).second) problems.push_back("duplicate plot id " + std::to_string(p.id));
    }
    for (const auto& p : f.plots) {
        for (int n : p.nbs) {
            auto it = by_id.find(n);
            if (it == by_id.end()) {
                problems.push_back("plot " + std::to_string(p.id) + ": unknown neighbour " + std::to_string(n));
                continue;
            }
            const auto& back = it->second->nbs;
            if (std::find(back.begin(), back.end(), p.id) == back.end())
                problems.push_back("neighbour relation " + std::to_string(p.id) + "->" + std::to_string(n) +
                                   " is not symmetric");
        }
    }
    if (!f.geometry.empty()) {
        const double fa = area(f.geometry);
        double sum = 0.0;
        for (const auto& p : f.plots) sum += area(p.geometry);
        if (std::abs(sum - fa) > area_rel_tol * fa)
            problems.push_back("farm " + std::to_string(f.id) + ": plot areas do not sum to farm area");
    }
    return problems;
}

// ---------------------------------------------------------------------------
// Voronoi partition

/// Voronoi cells of `points` clipped to `boundary`; cell k contains point k.
inline std::vector<Polygon> voronoi_partition(const Polygon& boundary, const std::vector<Point>& points) {
    if (points.empty()) throw InputError("voronoi_partition: at least one point required");
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (!contains(boundary, points[i]))
            throw InputError("voronoi_partition: point " + std::to_string(i) + " lies outside the boundary");
        for (std::size_t j = 0; j < i; ++j)
            if (points[i] == points[j])
                throw InputError("voronoi_partition: points " + std::to_string(j) + " and " + std::to_string(i) +
                                 " coincide");
    }
    const Polygon base = make_ccw(boundary);
    std::vector<Polygon> cells;
    cells.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        std::vector<HalfPlane> planes;
        planes.reserve(points.size() - 1);
        for (std::size_t j = 0; j < points.size(); ++j)
            if (j != i) planes.push_back(bisector_halfplane(points[i], points[j]));
        cells.push_back(clip(base, planes));
    }
    return cells;
}

// ---------------------------------------------------------------------------
// Generator

struct YieldDistribution {
    double mean = 0.0;
    double sd = 0.0;
    double min = 0.0;
    double max = 0.0;
};

struct LandscapeConfig {
    std::uint64_t seed = 7;
    int n_farms = 5;
    int plots_per_farm = 9;
    double ag_probability = 0.6;
    double extent_x = 1000.0;
    double extent_y = 1000.0;
    std::vector<std::pair<std::string, double>> crop_weights;
    std::vector<std::pair<std::string, double>> habitat_weights;
    std::map<std::string, YieldDistribution> yield_distributions;
    int max_retries = 16;
};

/// Uniform crop weights over the priced crops and truncated-normal yields.
inline LandscapeConfig default_landscape_config() {
    LandscapeConfig c;
    for (const auto& [crop, _] : default_economic_params().crop_prices) c.crop_weights.emplace_back(crop, 1.0);
    c.habitat_weights = {{"Broadleaf", 1.0}, {"Grassland", 1.0}, {"Coniferous", 1.0}, {"Wetland", 1.0},
                         {"Shrubland", 1.0}};
    c.yield_distributions = {
        {"Soybeans", {2.9, 0.6, 0.5, 5.0}},        {"Oats", {3.3, 0.7, 0.5, 6.0}},
        {"Corn", {9.5, 1.8, 2.0, 15.0}},           {"Canola/rapeseed", {2.3, 0.5, 0.3, 4.0}},
        {"Barley", {3.6, 0.8, 0.5, 6.5}},          {"Spring wheat", {3.4, 0.8, 0.5, 6.0}},
    };
    return c;
}

namespace detail {

inline std::vector<double> weights_of(const std::vector<std::pair<std::string, double>>& table) {
    std::vector<double> w;
    for (const auto& [_, v] : table) w.push_back(v);
    return w;
}

inline Point sample_in(Rng& rng, const Polygon& poly) {
    const auto bb = bounding_box(poly);
    for (int i = 0; i < 100000; ++i) {
        Point p{uniform(rng, bb.min_x, bb.max_x), uniform(rng, bb.min_y, bb.max_y)};
        if (contains(poly, p, 0.0)) return p;
    }
    throw GenerationError("could not sample a point inside polygon");
}

inline double sample_yield(Rng& rng, const YieldDistribution& d) {
    for (int i = 0; i < 1000; ++i) {
        const double v = d.mean + d.sd * standard_normal(rng);
        if (v >= d.min && v <= d.max) return v;
    }
    return std::clamp(d.mean, d.min, d.max);
}

/// Draws `n` sites inside `poly`, redrawing while any two are closer than `min_sep`.
inline std::vector<Point> draw_sites(Rng& rng, const Polygon& poly, int n, double min_sep, int max_retries) {
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        std::vector<Point> pts;
        for (int i = 0; i < n; ++i) pts.push_back(sample_in(rng, poly));
        bool degenerate = false;
        for (std::size_t i = 0; i < pts.size() && !degenerate; ++i)
            for (std::size_t j = 0; j < i; ++j)
                if (norm(pts[i] - pts[j]) <= min_sep) {
                    degenerate = true;
                    break;
                }
        if (!degenerate) return pts;
    }
    throw GenerationError("degenerate Voronoi sites after " + std::to_string(max_retries) + " retries");
}

inline void assign_neighbours(Farm& farm, double tol) {
    for (auto& p : farm.plots) p.nbs.clear();
    for (std::size_t i = 0; i < farm.plots.size(); ++i)
        for (std::size_t j = i + 1; j < farm.plots.size(); ++j)
            if (shared_boundary_length(farm.plots[i].geometry, farm.plots[j].geometry, tol) > tol) {
                farm.plots[i].nbs.push_back(farm.plots[j].id);
                farm.plots[j].nbs.push_back(farm.plots[i].id);
            }
    for (auto& p : farm.plots) std::sort(p.nbs.begin(), p.nbs.end());
}

}  // namespace detail

inline void check(const LandscapeConfig& c) {
    if (c.n_farms < 1) throw InputError("n_farms must be >= 1");
    if (c.plots_per_farm < 1) throw InputError("plots_per_farm must be >= 1");
    if (!(c.ag_probability >= 0.0 && c.ag_probability <= 1.0)) throw InputError("ag_probability must be in [0,1]");
    if (!(c.extent_x > 0.0 && c.extent_y > 0.0)) throw InputError("landscape extent must be positive");
    for (const auto* table : {&c.crop_weights, &c.habitat_weights}) {
        double total = 0.0;
        for (const auto& [name, w] : *table) {
            if (!(w >= 0.0)) throw InputError("label weight for '" + name + "' must be nonnegative");
            total += w;
        }
        if (!(total > 0.0)) throw InputError("label weights must be normalizable");
    }
    for (const auto& [crop, w] : c.crop_weights)
        if (w > 0.0 && !c.yield_distributions.contains(crop))
            throw InputError("no yield distribution for crop '" + crop + "'");
}

/// Deterministic for a fixed config: farms by Voronoi over the boundary rectangle,
/// plots by Voronoi inside each farm, then type, label and yield per plot.
inline Landscape generate_landscape(const LandscapeConfig& config) {
    check(config);
    Rng rng(config.seed);
    Landscape land;
    land.boundary = rectangle(0.0, 0.0, config.extent_x, config.extent_y);
    const double scale = std::max(config.extent_x, config.extent_y);
    const double min_sep = 1e-9 * scale;

    const auto farm_sites = detail::draw_sites(rng, land.boundary, config.n_farms, min_sep, config.max_retries);
    const auto farm_cells = voronoi_partition(land.boundary, farm_sites);
    for (int k = 0; k < config.n_farms; ++k) {
        Farm farm;
        farm.id = k + 1;
        farm.geometry = farm_cells[static_cast<std::size_t>(k)];
        land.farms.push_back(std::move(farm));
    }

    const auto crop_w = detail::weights_of(config.crop_weights);
    const auto hab_w = detail::weights_of(config.habitat_weights);
    for (auto& farm : land.farms) {
        const auto sites =
            detail::draw_sites(rng, farm.geometry, config.plots_per_farm, min_sep, config.max_retries);
        const auto cells = voronoi_partition(farm.geometry, sites);
        for (int j = 0; j < config.plots_per_farm; ++j) {
            Plot plot;
            plot.id = j + 1;
            plot.farm_id = farm.id;
            plot.geometry = cells[static_cast<std::size_t>(j)];
            farm.plots.push_back(std::move(plot));
        }
        for (auto& plot : farm.plots) {
            plot.type = bernoulli(rng, config.ag_probability) ? PlotType::ag_plot : PlotType::hab_plot;
            if (plot.type == PlotType::ag_plot) {
                plot.label = config.crop_weights[weighted_index(rng, crop_w)].first;
                plot.yield_value = detail::sample_yield(rng, config.yield_distributions.at(plot.label));
            } else {
                plot.label = config.habitat_weights[weighted_index(rng, hab_w)].first;
            }
        }
        detail::assign_neighbours(farm, coord_tol * scale);
    }
    return land;
}

// ---------------------------------------------------------------------------
// Quadrant realization

enum class QuadrantCenter { centroid, bbox_center };

struct InterventionGeometry {
    std::array<std::vector<Polygon>, 4> margin;   // indexed by Direction
    std::array<std::vector<Polygon>, 4> habitat;  // indexed by Direction
    std::vector<std::string> diagnostics;

    std::vector<Polygon> all_margin() const {
        std::vector<Polygon> out;
        for (const auto& v : margin) out.insert(out.end(), v.begin(), v.end());
        return out;
    }
    std::vector<Polygon> all_habitat() const {
        std::vector<Polygon> out;
        for (const auto& v : habitat) out.insert(out.end(), v.begin(), v.end());
        return out;
    }
};

inline Point quadrant_origin(const Polygon& poly, QuadrantCenter mode) {
    if (mode == QuadrantCenter::centroid) return centroid(poly);
    const auto bb = bounding_box(poly);
    return {0.5 * (bb.min_x + bb.max_x), 0.5 * (bb.min_y + bb.max_y)};
}

/// The part of `poly` in quadrant `d` around `origin` (north = +y, east = +x).
inline Polygon quadrant(const Polygon& poly, Direction d, Point origin) {
    const bool east = d == Direction::north_east || d == Direction::south_east;
    const bool north = d == Direction::north_west || d == Direction::north_east;
    const HalfPlane x_side = east ? HalfPlane{{-1.0, 0.0}, -origin.x} : HalfPlane{{1.0, 0.0}, origin.x};
    const HalfPlane y_side = north ? HalfPlane{{0.0, -1.0}, -origin.y} : HalfPlane{{0.0, 1.0}, origin.y};
    return clip(clip(make_ccw(poly), x_side), y_side);
}

inline double min_half_extent(const Polygon& poly) {
    const auto bb = bounding_box(poly);
    return 0.5 * std::min(bb.max_x - bb.min_x, bb.max_y - bb.min_y);
}

/// Splits `plot` into quadrants through its centre. Habitat directions take the
/// whole quadrant; margin directions take the boundary strip of `margin_width`
/// inside the quadrant.
inline InterventionGeometry realize_intervention_geometry(const Plot& plot, DirectionSet margin_dirs,
                                                          DirectionSet habitat_dirs, double margin_width,
                                                          QuadrantCenter mode = QuadrantCenter::centroid) {
    if (!(margin_width > 0.0)) throw InputError("margin_width must be > 0");
    if (!margin_dirs.empty() && !(margin_width < min_half_extent(plot.geometry)))
        throw InputError("margin_width must be smaller than the plot's minimum half-extent");

    InterventionGeometry out;
    const Polygon poly = make_ccw(plot.geometry);
    const Point origin = quadrant_origin(poly, mode);
    const bool convex = is_convex(poly);
    Polygon inner;
    if (!margin_dirs.empty()) {
        if (convex) inner = clip(poly, edge_halfplanes(poly, margin_width));
        else out.diagnostics.push_back("plot " + std::to_string(plot.id) + ": margin strips need a convex plot");
    }
    for (auto d : all_directions) {
        const auto idx = static_cast<std::size_t>(d);
        const bool want_hab = habitat_dirs.contains(d);
        const bool want_margin = margin_dirs.contains(d);
        if (!want_hab && !want_margin) continue;
        const Polygon q = quadrant(poly, d, origin);
        if (q.empty()) {
            out.diagnostics.push_back("plot " + std::to_string(plot.id) + ": empty quadrant " +
                                      std::string(to_string(d)));
            continue;
        }
        if (want_hab) out.habitat[idx].push_back(q);
        if (want_margin && convex) {
            for (auto& piece : difference_convex(q, inner))
                if (area(piece) > 0.0) out.margin[idx].push_back(std::move(piece));
            if (out.margin[idx].empty())
                out.diagnostics.push_back("plot " + std::to_string(plot.id) + ": empty margin strip " +
                                          std::string(to_string(d)));
        }
    }
    return out;
}

}  // namespace echomimic
