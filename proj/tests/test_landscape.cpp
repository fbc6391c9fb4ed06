#include <catch_amalgamated.hpp>

#include "echomimic/landscape.hpp"
#include "echomimic/landscape_io.hpp"
#include "support.hpp"

using namespace echomimic;
using Catch::Approx;

namespace {

Plot unit_plot() {
    Plot p;
    p.id = 1;
    p.farm_id = 1;
    p.geometry = rectangle(0, 0, 1, 1);
    p.label = "Corn";
    p.yield_value = 5.0;
    return p;
}

double overlap(const Polygon& a, const Polygon& b) { return area(intersect_convex(make_ccw(a), make_ccw(b))); }

}  // namespace

TEST_CASE("voronoi: single site returns the boundary") {
    const auto cells = voronoi_partition(rectangle(0, 0, 1, 1), {{0.3, 0.7}});
    REQUIRE(cells.size() == 1);
    CHECK(area(cells[0]) == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("voronoi: two sites split at the bisector") {
    const auto cells = voronoi_partition(rectangle(0, 0, 1, 1), {{0.25, 0.5}, {0.75, 0.5}});
    REQUIRE(cells.size() == 2);
    const auto b0 = bounding_box(cells[0]);
    const auto b1 = bounding_box(cells[1]);
    CHECK(b0.min_x == Approx(0.0).margin(1e-12));
    CHECK(b0.max_x == Approx(0.5).margin(1e-12));
    CHECK(b1.min_x == Approx(0.5).margin(1e-12));
    CHECK(b1.max_x == Approx(1.0).margin(1e-12));
    CHECK(area(cells[0]) == Approx(0.5).margin(1e-12));
}

TEST_CASE("voronoi: four symmetric sites give equal quadrants") {
    const auto cells = voronoi_partition(rectangle(0, 0, 1, 1), {{0.25, 0.25}, {0.75, 0.25}, {0.25, 0.75}, {0.75, 0.75}});
    REQUIRE(cells.size() == 4);
    for (const auto& c : cells) CHECK(area(c) == Approx(0.25).margin(1e-12));
}

TEST_CASE("voronoi: outside or coincident sites are input errors") {
    CHECK_THROWS_AS(voronoi_partition(rectangle(0, 0, 1, 1), {{2.0, 0.5}}), InputError);
    CHECK_THROWS_AS(voronoi_partition(rectangle(0, 0, 1, 1), {{0.5, 0.5}, {0.5, 0.5}}), InputError);
}

TEST_CASE("generate: paper-sized landscape") {
    auto cfg = default_landscape_config();
    cfg.seed = 7;
    const auto land = generate_landscape(cfg);
    CHECK(land.farms.size() == 5);
    CHECK(land.plot_count() == 45);
    for (const auto& f : land.farms) {
        CHECK(f.plots.size() == 9);
        CHECK(validate(f).empty());
    }
}

TEST_CASE("generate: a single farm with a single plot") {
    auto cfg = default_landscape_config();
    cfg.n_farms = 1;
    cfg.plots_per_farm = 1;
    const auto land = generate_landscape(cfg);
    REQUIRE(land.farms.size() == 1);
    REQUIRE(land.farms[0].plots.size() == 1);
    CHECK(area(land.farms[0].plots[0].geometry) == Approx(area(land.farms[0].geometry)).epsilon(1e-12));
    CHECK(area(land.farms[0].geometry) == Approx(area(land.boundary)).epsilon(1e-12));
    CHECK(land.farms[0].plots[0].nbs.empty());
}

TEST_CASE("generate: invalid configuration") {
    auto cfg = default_landscape_config();
    cfg.n_farms = 0;
    CHECK_THROWS_AS(generate_landscape(cfg), InputError);
    cfg = default_landscape_config();
    cfg.ag_probability = 1.5;
    CHECK_THROWS_AS(generate_landscape(cfg), InputError);
    cfg = default_landscape_config();
    for (auto& [_, w] : cfg.crop_weights) w = 0.0;
    CHECK_THROWS_AS(generate_landscape(cfg), InputError);
}

TEST_CASE("generate: partition, containment and neighbour symmetry over seeds") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto cfg = default_landscape_config();
        cfg.seed = seed;
        const auto land = generate_landscape(cfg);
        double farm_sum = 0.0;
        for (const auto& f : land.farms) {
            farm_sum += area(f.geometry);
            double sum = 0.0;
            double min_a = 1e300;
            for (const auto& p : f.plots) {
                sum += area(p.geometry);
                min_a = std::min(min_a, area(p.geometry));
                CHECK(is_simple(p.geometry));
                for (const auto& v : p.geometry.ring) CHECK(contains(f.geometry, v, 1e-6));
                for (int nb : p.nbs) {
                    const Plot* q = f.find(nb);
                    REQUIRE(q);
                    CHECK(std::find(q->nbs.begin(), q->nbs.end(), p.id) != q->nbs.end());
                }
                CHECK((p.type == PlotType::ag_plot) == p.yield_value.has_value());
            }
            CHECK(std::abs(sum - area(f.geometry)) <= 1e-6 * area(f.geometry));
            for (std::size_t i = 0; i < f.plots.size(); ++i)
                for (std::size_t j = i + 1; j < f.plots.size(); ++j)
                    CHECK(overlap(f.plots[i].geometry, f.plots[j].geometry) < 1e-9 * min_a);
        }
        CHECK(std::abs(farm_sum - area(land.boundary)) <= 1e-6 * area(land.boundary));
    }
}

TEST_CASE("generate: ag fraction follows the Bernoulli probability") {
    auto cfg = default_landscape_config();
    cfg.n_farms = 1;
    cfg.plots_per_farm = 1;
    int ag = 0;
    const int trials = 1000;
    for (int s = 0; s < trials; ++s) {
        cfg.seed = static_cast<std::uint64_t>(1000 + s);
        const auto land = generate_landscape(cfg);
        ag += land.farms[0].plots[0].type == PlotType::ag_plot;
    }
    CHECK(std::abs(ag / double(trials) - 0.6) <= 0.03);
}

TEST_CASE("generate: byte-identical files for a fixed seed") {
    test_support::TempDir a("land_a"), b("land_b");
    const auto cfg = default_landscape_config();
    write_landscape_file(generate_landscape(cfg), a.path());
    write_landscape_file(generate_landscape(cfg), b.path());
    CHECK(read_text(a / "landscape.geojson") == read_text(b / "landscape.geojson"));
    for (int k = 1; k <= 5; ++k)
        CHECK(read_text(farm_input_path(a.path(), k)) == read_text(farm_input_path(b.path(), k)));
}

TEST_CASE("io: farm round trip") {
    test_support::TempDir dir("io");
    const auto land = generate_landscape(default_landscape_config());
    const auto& farm = land.farms[2];
    write_landscape_file(farm, dir / "farm.geojson");
    const Farm back = read_landscape_file(dir / "farm.geojson");
    REQUIRE(back.plots.size() == farm.plots.size());
    for (std::size_t i = 0; i < farm.plots.size(); ++i) {
        const auto& p = farm.plots[i];
        const auto& q = back.plots[i];
        CHECK(p.id == q.id);
        CHECK(p.type == q.type);
        CHECK(p.label == q.label);
        CHECK(p.nbs == q.nbs);
        CHECK(p.yield_value.has_value() == q.yield_value.has_value());
        if (p.yield_value) CHECK(*p.yield_value == Approx(*q.yield_value).margin(1e-9));
        REQUIRE(p.geometry.ring.size() == q.geometry.ring.size());
        for (std::size_t k = 0; k < p.geometry.ring.size(); ++k) {
            CHECK(std::abs(p.geometry.ring[k].x - q.geometry.ring[k].x) <= 1e-9);
            CHECK(std::abs(p.geometry.ring[k].y - q.geometry.ring[k].y) <= 1e-9);
        }
    }
}

TEST_CASE("io: landscape directory round trip") {
    test_support::TempDir dir("io_dir");
    const auto land = generate_landscape(default_landscape_config());
    write_landscape_file(land, dir.path());
    const auto back = read_landscape_dir(dir.path());
    REQUIRE(back.farms.size() == land.farms.size());
    CHECK(area(back.boundary) == Approx(area(land.boundary)));
    for (std::size_t i = 0; i < land.farms.size(); ++i) CHECK(back.farms[i].plots.size() == land.farms[i].plots.size());
}

TEST_CASE("io: missing type names the feature") {
    const auto land = generate_landscape(default_landscape_config());
    auto doc = farm_to_json(land.farms[0]);
    doc["features"][3]["properties"].erase("type");
    const int id = doc["features"][3]["properties"]["id"].get<int>();
    try {
        farm_from_json(doc);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("id " + std::to_string(id)) != std::string::npos);
        CHECK(msg.find("type") != std::string::npos);
    }
}

TEST_CASE("io: yield on a habitat plot is rejected") {
    const auto land = generate_landscape(default_landscape_config());
    auto doc = farm_to_json(land.farms[0]);
    for (auto& f : doc["features"]) {
        if (f["properties"]["type"] == "hab_plot") {
            f["properties"]["yield"] = 1.0;
            CHECK_THROWS(farm_from_json(doc));
            return;
        }
    }
    SUCCEED("no habitat plot in fixture farm");
}

TEST_CASE("io: non-polygon geometry is a parse error") {
    const auto land = generate_landscape(default_landscape_config());
    auto doc = farm_to_json(land.farms[0]);
    doc["features"][0]["geometry"]["type"] = "Point";
    CHECK_THROWS_AS(farm_from_json(doc), ParseError);
}

TEST_CASE("io: intervention files") {
    const auto land = generate_landscape(default_landscape_config());
    const auto& farm = land.farms[0];
    PlotInterventions iv;
    for (const auto& p : farm.plots)
        if (p.type == PlotType::ag_plot) iv[p.id] = {p.id, 0.25, 0.5};
    const auto parsed = interventions_from_json(interventions_to_json(farm, iv));
    for (const auto& [id, rec] : iv) CHECK(parsed.records.at(id) == rec);

    auto doc = interventions_to_json(farm, iv);
    doc["features"][0]["properties"]["margin_intervention"] = 1.5;
    CHECK_THROWS_AS(interventions_from_json(doc), ParseError);
}

TEST_CASE("io: direction records round trip") {
    DirectionMap dm;
    dm[1] = {1, PlotType::ag_plot, "Corn", {Direction::north_east}, {Direction::south_west, Direction::south_east}};
    dm[2] = {2, PlotType::hab_plot, "Wetland", {}, {}};
    const auto doc = directions_to_json(dm);
    CHECK(doc[0]["margin_directions"][0] == "north-east");
    CHECK(directions_from_json(doc) == dm);
    auto bad = doc;
    bad[0]["margin_directions"][0] = "north";
    CHECK_THROWS(directions_from_json(bad));
}

TEST_CASE("io: economic params round trip") {
    const auto p = default_economic_params();
    CHECK(validate(p).empty());
    CHECK(economic_params_from_json(economic_params_to_json(p)) == p);
    CHECK(*p.price("Soybeans") == 370);
    CHECK(*p.price("Oats") == 95);
}

TEST_CASE("realize: all habitat quadrants cover the plot") {
    const Plot p = unit_plot();
    const auto g = realize_intervention_geometry(p, {}, DirectionSet::from_bits(0x0F), 0.1);
    CHECK(std::abs(total_area(g.all_habitat()) - 1.0) < 1e-9);
}

TEST_CASE("realize: nothing requested yields nothing") {
    const auto g = realize_intervention_geometry(unit_plot(), {}, {}, 0.1);
    CHECK(g.all_habitat().empty());
    CHECK(g.all_margin().empty());
}

TEST_CASE("realize: north-east quadrant of the unit square") {
    const auto g = realize_intervention_geometry(unit_plot(), {}, {Direction::north_east}, 0.1);
    const auto& ne = g.habitat[static_cast<std::size_t>(Direction::north_east)];
    REQUIRE(ne.size() == 1);
    CHECK(area(ne[0]) == Approx(0.25).margin(1e-12));
    const auto bb = bounding_box(ne[0]);
    CHECK(bb.min_x == Approx(0.5));
    CHECK(bb.min_y == Approx(0.5));
    CHECK(bb.max_x == Approx(1.0));
    CHECK(bb.max_y == Approx(1.0));
}

TEST_CASE("realize: margin strip is an L inside the quadrant") {
    const auto g = realize_intervention_geometry(unit_plot(), {Direction::south_west}, {}, 0.1);
    // [0,0.5]^2 minus [0.1,0.5]^2
    CHECK(total_area(g.all_margin()) == Approx(0.25 - 0.16).margin(1e-12));
    for (const auto& piece : g.all_margin())
        for (const auto& v : piece.ring) CHECK(contains(unit_plot().geometry, v, 1e-12));
}

TEST_CASE("realize: width must fit the plot") {
    CHECK_THROWS_AS(realize_intervention_geometry(unit_plot(), {Direction::north_west}, {}, 0.5), InputError);
    CHECK_THROWS_AS(realize_intervention_geometry(unit_plot(), {}, {}, 0.0), InputError);
}

TEST_CASE("realize: quadrants of generated plots sum to the plot area") {
    const auto land = generate_landscape(default_landscape_config());
    for (const auto& f : land.farms)
        for (const auto& p : f.plots) {
            const auto g = realize_intervention_geometry(p, {}, DirectionSet::from_bits(0x0F), 1.0);
            CHECK(std::abs(total_area(g.all_habitat()) - area(p.geometry)) <= 1e-9 * area(p.geometry));
        }
}

TEST_CASE("direction set") {
    const DirectionSet s{Direction::north_west, Direction::south_east};
    CHECK(s.size() == 2);
    CHECK(s.to_strings() == std::vector<std::string>{"north-west", "south-east"});
    CHECK(DirectionSet::from_strings({"south-east", "north-west"}) == s);
    CHECK_THROWS_AS(DirectionSet::from_strings({"north-west", "north-west"}), InputError);
    CHECK_THROWS_AS(DirectionSet::from_strings({"up"}), InputError);
}
