#include <catch_amalgamated.hpp>

#include "echomimic/fitness.hpp"

using namespace echomimic;
using Catch::Approx;

namespace {

// Independent oracles working on explicit string sets and parallel arrays.
double jaccard_oracle(const std::set<std::string>& a, const std::set<std::string>& b) {
    std::set<std::string> u = a;
    u.insert(b.begin(), b.end());
    if (u.empty()) return 0.0;
    int inter = 0;
    for (const auto& x : a) inter += b.count(x) ? 1 : 0;
    return 1.0 - double(inter) / double(u.size());
}

std::set<std::string> names(DirectionSet s) {
    const auto v = s.to_strings();
    return {v.begin(), v.end()};
}

DirectionSet random_set(Rng& rng) { return DirectionSet::from_bits(static_cast<std::uint8_t>(rng() & 0x0F)); }

double random_amount(Rng& rng) {
    // Mix exact quarter steps with arbitrary fractions.
    return bernoulli(rng, 0.5) ? 0.25 * double(rng() % 5) : uniform01(rng);
}

}  // namespace

TEST_CASE("jaccard: examples") {
    const DirectionSet ne_nw{Direction::north_east, Direction::north_west};
    CHECK(jaccard_distance(ne_nw, ne_nw) == 0.0);
    CHECK(jaccard_distance({Direction::north_east}, {Direction::north_west}) == 1.0);
    CHECK(std::abs(jaccard_distance(ne_nw, {Direction::north_east, Direction::south_east}) - 2.0 / 3.0) < 1e-15);
    CHECK(jaccard_distance({}, {}) == 0.0);
}

TEST_CASE("jaccard: exhaustive against the string-set oracle") {
    for (unsigned a = 0; a < 16; ++a)
        for (unsigned b = 0; b < 16; ++b) {
            const auto sa = DirectionSet::from_bits(static_cast<std::uint8_t>(a));
            const auto sb = DirectionSet::from_bits(static_cast<std::uint8_t>(b));
            const double d = jaccard_distance(sa, sb);
            CHECK(std::abs(d - jaccard_oracle(names(sa), names(sb))) <= 1e-12);
            CHECK(d == jaccard_distance(sb, sa));
            CHECK((d == 0.0) == (a == b));
        }
}

TEST_CASE("error_npv: examples") {
    PlotInterventions gt{{1, {1, 1.0, 1.0}}};
    PlotInterventions pred{{1, {1, 0.0, 0.0}}};
    CHECK(error_npv(gt, gt).error == 0.0);
    CHECK(error_npv(pred, gt).error == 2.0);

    PlotInterventions gt2{{1, {1, 0.5, 0.0}}, {2, {2, 0.0, 1.0}}};
    PlotInterventions pred2{{1, {1, 0.0, 0.0}}, {2, {2, 0.0, 0.5}}};
    const auto r = error_npv(pred2, gt2);
    CHECK(r.error == 0.5);
    CHECK(r.per_plot.size() == 2);
    CHECK(r.fitness == Approx(1.0 / (0.5 + 1e-6)));
}

TEST_CASE("error_npv: missing plots score as zero with a diagnostic") {
    PlotInterventions gt{{1, {1, 0.5, 0.0}}, {2, {2, 0.0, 0.25}}};
    PlotInterventions pred{{1, {1, 0.5, 0.0}}};
    const auto r = error_npv(pred, gt, std::vector<int>{1, 2, 3});
    CHECK(r.error == Approx(0.25 / 3));
    CHECK(r.missing_predictions == 2);
    CHECK_FALSE(r.diagnostics.empty());
}

TEST_CASE("error_conn: examples") {
    DirectionMap gt{{1, {1, PlotType::ag_plot, "Corn", {Direction::north_east, Direction::north_west}, {Direction::south_east}}}};
    CHECK(error_conn(gt, gt).error == 0.0);
    DirectionMap disjoint{{1, {1, PlotType::ag_plot, "Corn", {Direction::south_west}, {Direction::north_west}}}};
    CHECK(error_conn(disjoint, gt).error == 2.0);
    DirectionMap partial{{1, {1, PlotType::ag_plot, "Corn", {Direction::north_east, Direction::south_east}, {Direction::south_east}}}};
    CHECK(std::abs(error_conn(partial, gt).error - 2.0 / 3.0) < 1e-15);
}

TEST_CASE("error_nudge: examples") {
    DirectionMap gt{{1, {1, PlotType::ag_plot, "Corn", DirectionSet::from_bits(0x0F), {}}}};
    CHECK(error_nudge(PlotInterventions{{1, {1, 1.0, 0.0}}}, gt).error == 0.0);

    DirectionMap gt2{{1, {1, PlotType::ag_plot, "Corn", {Direction::north_east, Direction::north_west},
                          {Direction::south_east, Direction::south_west}}}};
    CHECK(error_nudge(PlotInterventions{{1, {1, 0.0, 0.0}}}, gt2).error == 1.0);

    PlotInterventions exact;
    for (const auto& [id, d] : gt2) exact[id] = {id, quantize_directions(d.margin), quantize_directions(d.habitat)};
    CHECK(error_nudge(exact, gt2).error == 0.0);
}

TEST_CASE("metrics agree with parallel-array oracles on random instances") {
    Rng rng(2024);
    for (int t = 0; t < 1000; ++t) {
        const int n = 1 + static_cast<int>(rng() % 12);
        std::vector<int> ids;
        PlotInterventions p, g;
        DirectionMap pd, gd;
        std::vector<double> pm(n), ph(n), gm(n), gh(n);
        std::vector<DirectionSet> pmd(n), phd(n), gmd(n), ghd(n);
        for (int i = 0; i < n; ++i) {
            const int id = 3 * i + 1;
            ids.push_back(id);
            pm[i] = random_amount(rng);
            ph[i] = random_amount(rng);
            gm[i] = random_amount(rng);
            gh[i] = random_amount(rng);
            pmd[i] = random_set(rng);
            phd[i] = random_set(rng);
            gmd[i] = random_set(rng);
            ghd[i] = random_set(rng);
            p[id] = {id, pm[i], ph[i]};
            g[id] = {id, gm[i], gh[i]};
            pd[id] = {id, PlotType::ag_plot, "x", pmd[i], phd[i]};
            gd[id] = {id, PlotType::ag_plot, "x", gmd[i], ghd[i]};
        }
        double npv = 0, conn = 0, nudge = 0;
        for (int i = 0; i < n; ++i) {
            npv += std::fabs(gm[i] - pm[i]) + std::fabs(gh[i] - ph[i]);
            conn += jaccard_oracle(names(gmd[i]), names(pmd[i])) + jaccard_oracle(names(ghd[i]), names(phd[i]));
            nudge += std::fabs(names(gmd[i]).size() / 4.0 - pm[i]) + std::fabs(names(ghd[i]).size() / 4.0 - ph[i]);
        }
        const auto rn = error_npv(p, g, ids);
        const auto rc = error_conn(pd, gd, ids);
        const auto ru = error_nudge(p, gd, ids);
        CHECK(std::abs(rn.error - npv / n) <= 1e-12);
        CHECK(std::abs(rc.error - conn / n) <= 1e-12);
        CHECK(std::abs(ru.error - nudge / n) <= 1e-12);
        for (const auto* r : {&rn, &rc, &ru}) {
            CHECK(r->error >= 0.0);
            CHECK(r->error <= 2.0);
            for (const auto& pe : r->per_plot) CHECK((pe.contribution >= 0.0 && pe.contribution <= 2.0));
        }
    }
}

TEST_CASE("fitness_of") {
    CHECK(fitness_of(0.0, 1e-6) == Approx(1e6));
    CHECK(fitness_of(1.0, 1e-6) == Approx(0.999999));
    CHECK(fitness_of(0.1) > fitness_of(0.2));
    CHECK_THROWS(fitness_of(-1.0));
    CHECK_THROWS(fitness_of(0.0, 0.0));
}

TEST_CASE("penalty fitness is below every attainable fitness") {
    const auto pen = penalty_report("unrepaired");
    CHECK(pen.penalized);
    CHECK(pen.error == 20.0);
    CHECK(pen.fitness < fitness_of(max_stage_error));
}
