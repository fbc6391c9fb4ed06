#include <catch_amalgamated.hpp>

#include "mimic_support.hpp"

using namespace echomimic;
using namespace test_support;

TEST_CASE("persona blocks come from the catalog") {
    CHECK(Persona::from_catalog(PersonaKind::resistant).prompt_block.find("extremely resistant to changing your current practices") !=
          std::string::npos);
    CHECK(Persona::from_catalog(PersonaKind::social).prompt_block.find("influenced by the practices and opinions of your peers") !=
          std::string::npos);
    CHECK(parse_persona("economic") == PersonaKind::economic);
    CHECK_THROWS_AS(parse_persona("stubborn"), ParseError);
    CHECK(parse_mechanism("behavioral") == MechanismKind::behavioral);
}

TEST_CASE("economic offer validation") {
    const auto mech = MechanismSpec::of(MechanismKind::economic);
    SECTION("nothing offered costs nothing") {
        auto r = validate_economic_offer({{instrument::payment, 0.0}, {instrument::margin_establishment, 0.0}}, mech);
        CHECK(r.pv_cost == 0.0);
        CHECK(r.within_budget);
        CHECK(r.violations.empty());
    }
    SECTION("150/ha payment on 5 ha of habitat") {
        auto r = validate_economic_offer({{instrument::payment, 150.0}}, mech, {5.0, 0.0});
        CHECK(r.pv_cost == Catch::Approx(750.0).margin(1e-12));
        CHECK(r.compliant());
    }
    SECTION("payment above range") {
        auto r = validate_economic_offer({{instrument::payment, 200.0}}, mech);
        REQUIRE(r.violations.size() == 1);
        CHECK(r.violations[0] == "payment exceeds [0,150]");
    }
    SECTION("formula with all subsidy factors at the default uptake") {
        EconomicOffer o{{instrument::margin_establishment, 0.5}, {instrument::margin_maintenance, 0.25},
                        {instrument::habitat_establishment, 0.4}, {instrument::habitat_maintenance, 0.1},
                        {instrument::payment, 100}};
        const double pv = 12.46;
        const double expect = 2.0 * (0.5 * 400 + 0.25 * 60 * pv) + 3.0 * (0.4 * 300 + 0.1 * 70 * pv + 100);
        CHECK(validate_economic_offer(o, mech).pv_cost == Catch::Approx(expect).epsilon(1e-12));
    }
    SECTION("ranges and budget") {
        auto r = validate_economic_offer({{instrument::eco_premium, 0.9}, {instrument::min_margin_fraction, 0.5},
                                          {"free_tractor", 1}}, mech);
        CHECK(std::count(r.violations.begin(), r.violations.end(), "eco_premium below [1,1.3]") == 1);
        CHECK(std::count(r.violations.begin(), r.violations.end(), "min_margin_fraction exceeds [0,0.3]") == 1);
        CHECK(std::count(r.violations.begin(), r.violations.end(), "unknown instrument free_tractor") == 1);
        auto big = validate_economic_offer({{instrument::margin_maintenance, 1.0}, {instrument::habitat_maintenance, 1.0}},
                                           mech, {50, 50});
        CHECK_FALSE(big.within_budget);
    }
    SECTION("pv cost is monotone in every instrument and uptake") {
        Rng rng(3);
        const char* cost_instruments[] = {instrument::margin_establishment, instrument::habitat_establishment,
                                          instrument::margin_maintenance, instrument::habitat_maintenance,
                                          instrument::payment};
        for (int t = 0; t < 500; ++t) {
            EconomicOffer o;
            for (const char* k : cost_instruments) o[k] = uniform(rng, 0, std::string(k) == "payment" ? 150 : 1);
            UptakeScenario u{uniform(rng, 0, 5), uniform(rng, 0, 3)};
            const double base = validate_economic_offer(o, mech, u).pv_cost;
            for (const char* k : cost_instruments) {
                auto o2 = o;
                o2[k] += uniform(rng, 0, 1);
                REQUIRE(validate_economic_offer(o2, mech, u).pv_cost >= base);
            }
            REQUIRE(validate_economic_offer(o, mech, {u.habitat_ha + 1, u.margin_ha}).pv_cost >= base);
            REQUIRE(validate_economic_offer(o, mech, {u.habitat_ha, u.margin_ha + 1}).pv_cost >= base);
        }
    }
    CHECK_THROWS_AS(validate_economic_offer({}, mech, {-1, 0}), InputError);
}

TEST_CASE("offers are read from message text") {
    const auto o = parse_economic_offer(
        "We will cover 40% of margin establishment costs with a subsidy.\n"
        "A payment of 120 per hectare for habitat conversion; a 0.5 subsidy factor for habitat maintenance.\n"
        "Certified crops earn a price premium of 1.2.");
    CHECK(o.at(instrument::margin_establishment) == Catch::Approx(0.4));
    CHECK(o.at(instrument::payment) == 120);
    CHECK(o.at(instrument::habitat_maintenance) == 0.5);
    CHECK(o.at(instrument::eco_premium) == 1.2);
    CHECK(parse_economic_offer("Your neighbours are all planting hedgerows.").empty());
}

TEST_CASE("farm agent refusal and acceptance") {
    Fixture f;
    std::vector<PromptBundle> seen;
    std::string reply;
    auto provider = std::make_shared<MockProvider>([&](const PromptBundle& b) {
        seen.push_back(b);
        return reply;
    });
    Gateway gw(provider);
    const auto msg = message("m1", "Your neighbours convert margins.");
    const auto persona = Persona::from_catalog(PersonaKind::resistant);

    SECTION("verbatim baseline is a refusal") {
        std::string padded = f.ctx.baseline.body + "\n\n   \n";
        reply = fenced(padded);
        auto r = simulate_farm_response(persona, f.ctx.baseline, msg, gw, f.ctx.farm_prompt);
        CHECK(r.refused);
        CHECK(r.nudged.body == f.ctx.baseline.body);
        REQUIRE(seen.size() == 1);
        CHECK(seen[0].role == Role::farm_sim);
        CHECK(seen[0].text.find(persona.prompt_block) != std::string::npos);
        CHECK(seen[0].text.find("Your neighbours convert margins.") != std::string::npos);
        CHECK(seen[0].text.find(f.ctx.baseline.body) != std::string::npos);
    }
    SECTION("changed script is accepted with lineage") {
        reply = fenced(script_for(f.blend(0.0)));
        auto r = simulate_farm_response(persona, f.ctx.baseline, msg, gw, f.ctx.farm_prompt);
        CHECK_FALSE(r.refused);
        CHECK(r.nudged.body != f.ctx.baseline.body);
        REQUIRE(r.nudged.lineage.size() == 1);
        CHECK(r.nudged.lineage[0] == LineageEntry{"farm_sim", {"baseline", "m1"}});
        CHECK(r.nudged.kind == CandidateKind::heuristic_script);
    }
    SECTION("no code block is a refusal") {
        reply = "I'll keep doing what I do.";
        auto r = simulate_farm_response(persona, f.ctx.baseline, msg, gw, f.ctx.farm_prompt);
        CHECK(r.refused);
        CHECK(r.nudged.body == f.ctx.baseline.body);
    }
    SECTION("provider failure is a refusal with a diagnostic") {
        Gateway dead(std::make_shared<MockProvider>(), GatewayConfig{RetryPolicy{1, 0, 1, 0}});
        auto r = simulate_farm_response(persona, f.ctx.baseline, msg, dead, f.ctx.farm_prompt);
        CHECK(r.refused);
        REQUIRE_FALSE(r.diagnostics.empty());
        CHECK(r.diagnostics[0].find("unavailable") != std::string::npos);
    }
}

TEST_CASE("nudge evaluation oracles") {
    Fixture f;
    std::string reply;
    Gateway gw(std::make_shared<MockProvider>([&](const PromptBundle&) { return reply; }));
    const auto ids = f.farm.plot_ids();
    const double baseline_error = error_nudge(*f.ctx.baseline_actions, f.ctx.gt_dirs, ids).error;
    REQUIRE(baseline_error > 0.05);

    SECTION("perfect compliance") {
        reply = fenced(script_for(f.blend(0.0)));
        auto o = evaluate_nudge(message("m", "comply"), f.ctx, gw);
        CHECK_FALSE(o.refused);
        CHECK(o.fitness.error == 0.0);
        CHECK(o.fitness.fitness == fitness_of(0.0));
        CHECK(o.fitness.fitness == Catch::Approx(1.0 / default_epsilon));
    }
    SECTION("refusal scores the baseline") {
        reply = fenced(f.ctx.baseline.body);
        auto o = evaluate_nudge(message("m", "ignore me"), f.ctx, gw);
        CHECK(o.refused);
        CHECK(o.actions == *f.ctx.baseline_actions);
        CHECK(o.fitness.error == baseline_error);
        CHECK(o.fitness.fitness == fitness_of(baseline_error));
        // Without the cache the baseline is executed and gives the same actions.
        auto ctx = f.ctx;
        ctx.baseline_actions.reset();
        CHECK(evaluate_nudge(message("m", "ignore me"), ctx, gw).actions == *f.ctx.baseline_actions);
    }
    SECTION("halfway mock halves the error") {
        reply = fenced(script_for(f.blend(0.5)));
        auto o = evaluate_nudge(message("m", "half"), f.ctx, gw);
        CHECK(std::abs(o.fitness.error - baseline_error / 2) <= 1e-12);
    }
    SECTION("broken nudged script is repaired") {
        reply = fenced("import json\nprint(undefined_name)\n");
        auto ctx = f.ctx;
        int fixer_calls = 0;
        const auto good = script_for(f.blend(0.0));
        ctx.fixer = [&](const std::string&, const std::string& trace) -> std::optional<std::string> {
            ++fixer_calls;
            CHECK(trace.find("NameError") != std::string::npos);
            return good;
        };
        auto o = evaluate_nudge(message("m", "x"), ctx, gw);
        CHECK(fixer_calls == 1);
        CHECK(o.repair_attempts == 1);
        CHECK(o.fitness.error == 0.0);
        CHECK(o.nudged_script.body == good);
    }
    SECTION("unrepaired script is penalized") {
        reply = fenced("raise SystemExit(3)\n");
        auto o = evaluate_nudge(message("m", "x"), f.ctx, gw);
        CHECK(o.fitness.penalized);
        CHECK(o.fitness.fitness < fitness_of(2.0));
    }
    SECTION("message without a block is penalized without calling the agent") {
        auto m = message("m", "no marker here");
        m.needs_repair = true;
        auto o = evaluate_nudge(m, f.ctx, gw);
        CHECK(o.fitness.penalized);
    }
    SECTION("economic offers are flagged, or penalized when enforced") {
        reply = fenced(script_for(f.blend(0.0)));
        auto ctx = f.ctx;
        ctx.mechanism = MechanismSpec::of(MechanismKind::economic);
        const auto m = message("m", "We offer a payment of 200 per hectare for new habitat.");
        auto flagged = evaluate_nudge(m, ctx, gw);
        REQUIRE(flagged.offer);
        CHECK_FALSE(flagged.offer->compliant());
        CHECK(flagged.fitness.error == 0.0);
        ctx.mechanism.enforce = true;
        auto enforced = evaluate_nudge(m, ctx, gw);
        CHECK(enforced.fitness.penalized);
    }
    SECTION("scorer hook") {
        reply = fenced(script_for(f.blend(0.0)));
        auto ctx = f.ctx;
        ctx.scorer = [](const PlotInterventions&, const DirectionMap&, const std::vector<int>&) {
            FitnessReport r;
            r.error = 0.25;
            r.fitness = fitness_of(0.25);
            return r;
        };
        CHECK(evaluate_nudge(message("m", "x"), ctx, gw).fitness.error == 0.25);
    }
}

TEST_CASE("message evolution improves strictly under the halving mock") {
    Fixture f;
    Gateway gw(std::make_shared<MockProvider>(halving_strategy(f)));
    MimicSetup setup;
    setup.nudge = f.ctx;
    setup.global_code = "print('global')";
    setup.social_comparison_data = "Neighbour 1: converted 2 margins.";
    EngineConfig cfg;
    cfg.population_size = 3;
    cfg.generations = 4;
    cfg.elitism_k = 1;
    cfg.schedule = OperatorSchedule::only(VariationOp::mutate);
    const auto out = f.dir / "cell";
    auto run = evolve_messages(setup, PersonaKind::social, MechanismSpec::of(MechanismKind::behavioral), cfg, gw, out);

    for (std::size_t g = 1; g < run.run.history.size(); ++g)
        CHECK(run.run.history[g].best_fitness > run.run.history[g - 1].best_fitness);
    CHECK(run.label() == "(P:social, N:behavioral)");
    CHECK(run.best.message.kind == CandidateKind::nudge_message);
    CHECK(run.best.message.body.rfind("LEVEL=4", 0) == 0);
    CHECK_FALSE(run.best.refused);

    CHECK(fs::exists(out / "messages" / "gen_0" / "msg_g0_c0.txt"));
    CHECK(read_text(out / "messages" / "gen_0" / "msg_g0_c0.txt").rfind("LEVEL=0", 0) == 0);
    CHECK(fs::exists(out / "messages" / "gen_4" / "scores.json"));
    CHECK(fs::exists(out / "nudged_scripts" / (run.best.message.id + "_farm.py")));
    const auto outcomes = read_json(out / "outcomes.json");
    CHECK(outcomes.size() == 3 + 4 * 3);
    CHECK(outcomes.at(run.best.message.id).at("error").get<double>() == run.best.message.error());
    CHECK(read_text(out / "summary.csv").find("social,behavioral,\"(P:social, N:behavioral)\"") != std::string::npos);
}

TEST_CASE("the persona x mechanism matrix runs offline") {
    Fixture f;
    Gateway gw(std::make_shared<MockProvider>(halving_strategy(f)));
    MimicSetup setup;
    setup.nudge = f.ctx;
    setup.global_code = "print('global')";
    setup.social_comparison_data = "Neighbour 1: converted 2 margins.";
    EngineConfig cfg;
    cfg.population_size = 2;
    cfg.generations = 1;
    cfg.elitism_k = 1;
    const auto out = f.dir / "matrix";
    auto runs = run_mimic_matrix(setup, {all_personas.begin(), all_personas.end()},
                                 {all_mechanisms.begin(), all_mechanisms.end()}, cfg, gw, out);
    REQUIRE(runs.size() == 6);
    std::set<std::string> labels;
    for (const auto& r : runs) {
        labels.insert(r.label());
        CHECK(r.run.population.members.size() == 2);
    }
    CHECK(labels.size() == 6);
    const auto csv = read_text(out / "matrix.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
    CHECK(csv.find("\"(P:resistant, N:economic)\"") != std::string::npos);
    CHECK(fs::exists(out / "economic_economic" / "outcomes.json"));
    // Economic cells record the offer check.
    const auto econ = read_json(out / "social_economic" / "outcomes.json");
    bool has_offer = false;
    for (const auto& [id, o] : econ.items()) has_offer |= o.contains("offer");
    CHECK(has_offer);
}
