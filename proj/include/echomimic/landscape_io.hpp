#pragma once

// GeoJSON landscape files, intervention outputs, direction records and the
// economic parameter document.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "echomimic/landscape.hpp"

namespace echomimic {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes via a temporary sibling and rename so readers never see partial files.
inline void write_text(const fs::path& path, std::string_view text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline json read_json(const fs::path& path) {
    const auto text = read_text(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Geometry

inline json polygon_to_json(const Polygon& poly) {
    json ring = json::array();
    for (const auto& p : poly.ring) ring.push_back({p.x, p.y});
    if (!poly.ring.empty()) ring.push_back({poly.ring.front().x, poly.ring.front().y});
    return json{{"type", "Polygon"}, {"coordinates", json::array({ring})}};
}

inline Polygon polygon_from_json(const json& g, const std::string& where) {
    if (!g.is_object() || g.value("type", "") != "Polygon")
        throw ParseError(where + ": geometry must be a GeoJSON Polygon");
    const auto& coords = g.at("coordinates");
    if (!coords.is_array() || coords.empty() || !coords[0].is_array())
        throw ParseError(where + ": polygon has no exterior ring");
    Polygon poly;
    for (const auto& c : coords[0]) {
        if (!c.is_array() || c.size() < 2 || !c[0].is_number() || !c[1].is_number())
            throw ParseError(where + ": malformed coordinate");
        poly.ring.push_back({c[0].get<double>(), c[1].get<double>()});
    }
    if (poly.ring.size() >= 2 && poly.ring.front() == poly.ring.back()) poly.ring.pop_back();
    if (poly.ring.size() < 3) throw ParseError(where + ": exterior ring needs at least three vertices");
    return poly;
}

// ---------------------------------------------------------------------------
// Farm feature collections

inline json plot_properties(const Plot& p) {
    json props{{"id", p.id}, {"type", std::string(to_string(p.type))}, {"label", p.label}};
    if (p.yield_value) props["yield"] = *p.yield_value;
    props["nbs"] = p.nbs;
    return props;
}

inline json farm_to_json(const Farm& farm) {
    json features = json::array();
    for (const auto& p : farm.plots)
        features.push_back({{"type", "Feature"}, {"properties", plot_properties(p)}, {"geometry", polygon_to_json(p.geometry)}});
    return json{{"type", "FeatureCollection"}, {"farm_id", farm.id}, {"features", features}};
}

namespace detail {

inline std::string feature_tag(std::size_t index, const json& feature) {
    std::string tag = "feature " + std::to_string(index);
    if (feature.is_object() && feature.contains("properties") && feature["properties"].is_object()) {
        const auto& props = feature["properties"];
        if (props.contains("id") && props["id"].is_number_integer())
            tag += " (id " + std::to_string(props["id"].get<long long>()) + ")";
    }
    return tag;
}

inline const json& features_of(const json& doc, const std::string& source) {
    if (!doc.is_object() || doc.value("type", "") != "FeatureCollection")
        throw ParseError(source + ": not a GeoJSON FeatureCollection");
    if (!doc.contains("features") || !doc["features"].is_array()) throw ParseError(source + ": missing features array");
    return doc["features"];
}

}  // namespace detail

/// Parses and validates a farm-level FeatureCollection.
inline Farm farm_from_json(const json& doc, const std::string& source = "farm") {
    const auto& features = detail::features_of(doc, source);
    Farm farm;
    if (doc.contains("farm_id") && doc["farm_id"].is_number_integer()) farm.id = doc["farm_id"].get<int>();
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto& f = features[i];
        const std::string where = source + ": " + detail::feature_tag(i, f);
        if (!f.is_object() || !f.contains("properties") || !f["properties"].is_object())
            throw ParseError(where + ": missing properties");
        const auto& props = f["properties"];
        Plot plot;
        plot.farm_id = farm.id;
        if (!props.contains("id") || !props["id"].is_number_integer()) throw ParseError(where + ": missing integer 'id'");
        plot.id = props["id"].get<int>();
        if (!props.contains("type") || !props["type"].is_string()) throw ParseError(where + ": missing 'type'");
        auto type = parse_plot_type(props["type"].get<std::string>());
        if (!type) throw ParseError(where + ": unknown plot type '" + props["type"].get<std::string>() + "'");
        plot.type = *type;
        if (!props.contains("label") || !props["label"].is_string()) throw ParseError(where + ": missing 'label'");
        plot.label = props["label"].get<std::string>();
        if (props.contains("yield") && !props["yield"].is_null()) {
            if (!props["yield"].is_number()) throw ParseError(where + ": 'yield' must be a number");
            plot.yield_value = props["yield"].get<double>();
        }
        if (!props.contains("nbs") || !props["nbs"].is_array()) throw ParseError(where + ": missing 'nbs' array");
        for (const auto& n : props["nbs"]) {
            if (!n.is_number_integer()) throw ParseError(where + ": 'nbs' must contain integers");
            plot.nbs.push_back(n.get<int>());
        }
        if (!f.contains("geometry")) throw ParseError(where + ": missing geometry");
        plot.geometry = polygon_from_json(f["geometry"], where);
        if (auto problems = validate(plot); !problems.empty()) throw ParseError(where + ": " + problems.front());
        farm.plots.push_back(std::move(plot));
    }
    return farm;
}

inline void write_landscape_file(const Farm& farm, const fs::path& path) { write_json(path, farm_to_json(farm)); }

inline Farm read_landscape_file(const fs::path& path) { return farm_from_json(read_json(path), path.string()); }

inline fs::path farm_input_path(const fs::path& dir, int farm_id) {
    return dir / ("farm_" + std::to_string(farm_id)) / "input.geojson";
}

/// Writes `landscape.geojson` (boundary and farm polygons) plus one
/// `farm_<k>/input.geojson` per farm under `dir`.
inline void write_landscape_file(const Landscape& land, const fs::path& dir) {
    json farms = json::array();
    for (const auto& f : land.farms)
        farms.push_back({{"type", "Feature"}, {"properties", {{"farm_id", f.id}}}, {"geometry", polygon_to_json(f.geometry)}});
    write_json(dir / "landscape.geojson", json{{"type", "FeatureCollection"},
                                               {"crs_note", land.crs_note},
                                               {"boundary", polygon_to_json(land.boundary)},
                                               {"features", farms}});
    for (const auto& f : land.farms) write_landscape_file(f, farm_input_path(dir, f.id));
}

inline Landscape read_landscape_dir(const fs::path& dir) {
    const auto doc = read_json(dir / "landscape.geojson");
    const auto& features = detail::features_of(doc, "landscape.geojson");
    Landscape land;
    land.crs_note = doc.value("crs_note", "");
    if (!doc.contains("boundary")) throw ParseError("landscape.geojson: missing boundary");
    land.boundary = polygon_from_json(doc["boundary"], "landscape boundary");
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto& f = features[i];
        const std::string where = "landscape.geojson: feature " + std::to_string(i);
        if (!f.contains("properties") || !f["properties"].contains("farm_id"))
            throw ParseError(where + ": missing farm_id");
        const int id = f["properties"]["farm_id"].get<int>();
        Farm farm = read_landscape_file(farm_input_path(dir, id));
        farm.id = id;
        for (auto& p : farm.plots) p.farm_id = id;
        farm.geometry = polygon_from_json(f["geometry"], where);
        land.farms.push_back(std::move(farm));
    }
    return land;
}

// ---------------------------------------------------------------------------
// Intervention outputs (stage-2 ground truth and candidate output.geojson)

/// Farm collection with intervention properties attached. With
/// `nonzero_only`, plots without interventions are omitted.
inline json interventions_to_json(const Farm& farm, const PlotInterventions& iv, bool nonzero_only = false) {
    json doc = farm_to_json(farm);
    json kept = json::array();
    for (auto& f : doc["features"]) {
        const int id = f["properties"]["id"].get<int>();
        InterventionRecord rec{id, 0.0, 0.0};
        if (auto it = iv.find(id); it != iv.end()) rec = it->second;
        if (nonzero_only && rec.margin_intervention == 0.0 && rec.habitat_conversion == 0.0) continue;
        f["properties"]["margin_intervention"] = rec.margin_intervention;
        f["properties"]["habitat_conversion"] = rec.habitat_conversion;
        kept.push_back(f);
    }
    doc["features"] = kept;
    return doc;
}

struct InterventionParse {
    PlotInterventions records;
    std::vector<std::string> diagnostics;
};

/// Reads `margin_intervention` / `habitat_conversion` per feature. Absent
/// properties default to 0; values outside [0,1] are a schema violation.
inline InterventionParse interventions_from_json(const json& doc, const std::string& source = "output") {
    const auto& features = detail::features_of(doc, source);
    InterventionParse out;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto& f = features[i];
        const std::string where = source + ": " + detail::feature_tag(i, f);
        if (!f.is_object() || !f.contains("properties") || !f["properties"].is_object())
            throw ParseError(where + ": missing properties");
        const auto& props = f["properties"];
        if (!props.contains("id") || !props["id"].is_number_integer()) throw ParseError(where + ": missing integer 'id'");
        InterventionRecord rec;
        rec.plot_id = props["id"].get<int>();
        auto field = [&](const char* name, double& dst) {
            if (!props.contains(name) || props[name].is_null()) {
                out.diagnostics.push_back(where + ": '" + name + "' absent, treated as 0");
                return;
            }
            if (!props[name].is_number()) throw ParseError(where + ": '" + std::string(name) + "' must be a number");
            dst = props[name].get<double>();
            if (!(dst >= 0.0 && dst <= 1.0))
                throw ParseError(where + ": '" + std::string(name) + "' outside [0,1]");
        };
        field("margin_intervention", rec.margin_intervention);
        field("habitat_conversion", rec.habitat_conversion);
        if (out.records.contains(rec.plot_id)) throw ParseError(where + ": duplicate plot id");
        out.records.emplace(rec.plot_id, rec);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Direction records (output.json)

inline json directions_to_json(const DirectionMap& dirs) {
    json arr = json::array();
    for (const auto& [id, d] : dirs)
        arr.push_back({{"plot_id", id},
                       {"plot_type", std::string(to_string(d.plot_type))},
                       {"label", d.label},
                       {"margin_directions", d.margin.to_strings()},
                       {"habitat_directions", d.habitat.to_strings()}});
    return arr;
}

inline DirectionMap directions_from_json(const json& doc, const std::string& source = "output.json") {
    if (!doc.is_array()) throw ParseError(source + ": expected a JSON array of direction records");
    DirectionMap out;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& r = doc[i];
        const std::string where = source + ": record " + std::to_string(i);
        if (!r.is_object() || !r.contains("plot_id") || !r["plot_id"].is_number_integer())
            throw ParseError(where + ": missing integer 'plot_id'");
        PlotDirections d;
        d.plot_id = r["plot_id"].get<int>();
        if (r.contains("plot_type") && r["plot_type"].is_string()) {
            auto t = parse_plot_type(r["plot_type"].get<std::string>());
            if (!t) throw ParseError(where + ": unknown plot_type");
            d.plot_type = *t;
        }
        if (r.contains("label") && r["label"].is_string()) d.label = r["label"].get<std::string>();
        auto dirset = [&](const char* name) {
            if (!r.contains(name)) return DirectionSet{};
            if (!r[name].is_array()) throw ParseError(where + ": '" + std::string(name) + "' must be an array");
            std::vector<std::string> names;
            for (const auto& s : r[name]) {
                if (!s.is_string()) throw ParseError(where + ": '" + std::string(name) + "' must contain strings");
                names.push_back(s.get<std::string>());
            }
            try {
                return DirectionSet::from_strings(names);
            } catch (const InputError& e) {
                throw ParseError(where + ": " + e.what());
            }
        };
        d.margin = dirset("margin_directions");
        d.habitat = dirset("habitat_directions");
        if (!out.emplace(d.plot_id, d).second) throw ParseError(where + ": duplicate plot_id");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Economic parameters

inline json economic_params_to_json(const EconomicParams& p) {
    json prices = json::object();
    for (const auto& [crop, v] : p.crop_prices) prices[crop] = v;
    return json{{"crop_prices", prices},
                {"costs",
                 {{"margin", {{"implementation", p.margin.implementation}, {"maintenance", p.margin.maintenance}}},
                  {"habitat", {{"implementation", p.habitat.implementation}, {"maintenance", p.habitat.maintenance}}},
                  {"agriculture", {{"maintenance", p.ag_maintenance}}}}}};
}

inline EconomicParams economic_params_from_json(const json& doc) {
    EconomicParams p;
    try {
        for (const auto& [crop, v] : doc.at("crop_prices").items()) p.crop_prices.emplace_back(crop, v.get<double>());
        const auto& costs = doc.at("costs");
        p.margin = {costs.at("margin").at("implementation").get<double>(), costs.at("margin").at("maintenance").get<double>()};
        p.habitat = {costs.at("habitat").at("implementation").get<double>(),
                     costs.at("habitat").at("maintenance").get<double>()};
        p.ag_maintenance = costs.at("agriculture").at("maintenance").get<double>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("economic params: ") + e.what());
    }
    if (auto problems = validate(p); !problems.empty()) throw ParseError("economic params: " + problems.front());
    return p;
}

// ---------------------------------------------------------------------------
// Landscape generator config

inline json landscape_config_to_json(const LandscapeConfig& c) {
    json crop = json::object(), hab = json::object(), yields = json::object();
    for (const auto& [k, v] : c.crop_weights) crop[k] = v;
    for (const auto& [k, v] : c.habitat_weights) hab[k] = v;
    for (const auto& [k, d] : c.yield_distributions)
        yields[k] = {{"mean", d.mean}, {"sd", d.sd}, {"min", d.min}, {"max", d.max}};
    return json{{"seed", c.seed},           {"n_farms", c.n_farms},         {"plots_per_farm", c.plots_per_farm},
                {"ag_probability", c.ag_probability}, {"extent", {c.extent_x, c.extent_y}},
                {"crop_weights", crop},     {"habitat_weights", hab},       {"yield_distributions", yields},
                {"max_retries", c.max_retries}};
}

/// Missing keys keep their defaults.
inline LandscapeConfig landscape_config_from_json(const json& doc, LandscapeConfig c = default_landscape_config()) {
    try {
        if (doc.contains("seed")) c.seed = doc["seed"].get<std::uint64_t>();
        if (doc.contains("n_farms")) c.n_farms = doc["n_farms"].get<int>();
        if (doc.contains("plots_per_farm")) c.plots_per_farm = doc["plots_per_farm"].get<int>();
        if (doc.contains("ag_probability")) c.ag_probability = doc["ag_probability"].get<double>();
        if (doc.contains("extent")) {
            c.extent_x = doc["extent"].at(0).get<double>();
            c.extent_y = doc["extent"].at(1).get<double>();
        }
        if (doc.contains("max_retries")) c.max_retries = doc["max_retries"].get<int>();
        auto table = [&](const char* key, std::vector<std::pair<std::string, double>>& dst) {
            if (!doc.contains(key)) return;
            dst.clear();
            for (const auto& [k, v] : doc[key].items()) dst.emplace_back(k, v.get<double>());
        };
        table("crop_weights", c.crop_weights);
        table("habitat_weights", c.habitat_weights);
        if (doc.contains("yield_distributions")) {
            c.yield_distributions.clear();
            for (const auto& [k, v] : doc["yield_distributions"].items())
                c.yield_distributions[k] = {v.at("mean").get<double>(), v.at("sd").get<double>(),
                                            v.at("min").get<double>(), v.at("max").get<double>()};
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("landscape config: ") + e.what());
    }
    return c;
}

}  // namespace echomimic
