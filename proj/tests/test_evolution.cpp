#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cmath>
#include <set>

#include "echomimic/evolution.hpp"

using namespace echomimic;

namespace {

// Candidate bodies carry their own error as "err=<value>" so the evaluator is
// a pure function of the body.
std::string body_for(double err) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "err=%a", err);
    return buf;
}

double err_of(const std::string& body) {
    if (body.rfind("err=", 0) != 0) throw std::runtime_error("no error tag");
    return std::strtod(body.c_str() + 4, nullptr);
}

FitnessReport report_for(double err) {
    FitnessReport r;
    r.error = err;
    r.fitness = fitness_of(err);
    return r;
}

Evaluator body_evaluator() {
    return [](Candidate& c) -> FitnessReport {
        if (c.needs_repair) return penalty_report("unparseable response");
        try {
            return report_for(err_of(c.body));
        } catch (const std::exception&) {
            return penalty_report("bad body");
        }
    };
}

std::uint64_t key_hash(const std::string& key, std::uint64_t salt) {
    return mix_seed(std::hash<std::string>{}(key), salt);
}

double key_unit(const std::string& key, std::uint64_t salt) {
    return static_cast<double>(key_hash(key, salt) >> 11) * 0x1.0p-53;
}

// Seeds with errors given up front; every operator halves the best parent's error.
struct HalvingVariator : Variator {
    std::vector<double> seeds;
    std::size_t next = 0;
    std::mutex mu;

    explicit HalvingVariator(std::vector<double> s) : seeds(std::move(s)) {}

    VariationResult generate(const std::string&) override {
        std::lock_guard lock(mu);
        return {body_for(seeds.at(next++ % seeds.size())), "", false, ""};
    }
    VariationResult vary(VariationOp, const std::vector<const Candidate*>& parents, const std::string&) override {
        double best = INFINITY;
        for (const auto* p : parents) best = std::min(best, err_of(p->body));
        return {body_for(best / 2), "", false, ""};
    }
};

// Keyed pseudo-random variation: child error = best parent error × [0.5, 1.6),
// with a share of unparseable responses and provider failures.
struct NoisyVariator : Variator {
    std::uint64_t salt;
    double invalid_rate;
    double failure_rate;

    explicit NoisyVariator(std::uint64_t s, double invalid = 0.1, double failure = 0.05)
        : salt(s), invalid_rate(invalid), failure_rate(failure) {}

    VariationResult generate(const std::string& key) override {
        return {body_for(0.2 + 1.5 * key_unit(key, salt)), "", false, ""};
    }
    VariationResult vary(VariationOp, const std::vector<const Candidate*>& parents, const std::string& key) override {
        const double u = key_unit(key, salt + 1);
        if (u < failure_rate) return {std::nullopt, "", true, "scripted outage"};
        if (u < failure_rate + invalid_rate) return {std::nullopt, "I cannot answer that.", false, ""};
        double best = INFINITY;
        for (const auto* p : parents) best = std::min(best, err_of(p->body));
        return {body_for(best * (0.5 + 1.1 * key_unit(key, salt + 2))), "", false, ""};
    }
};

EngineConfig small_config(int K, int gens, std::uint64_t seed) {
    EngineConfig c;
    c.population_size = K;
    c.generations = gens;
    c.seed = seed;
    return c;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("echomimic_evo_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("halve-error mutator gives e0 * 2^-g exactly") {
    const double e0 = 0.75;
    std::vector<double> seeds{e0};
    for (int i = 1; i < 25; ++i) seeds.push_back(e0 + 0.01 * i);
    HalvingVariator v(seeds);
    auto cfg = small_config(25, 10, 7);
    cfg.schedule = OperatorSchedule::only(VariationOp::mutate);
    Engine engine(cfg, v, body_evaluator());
    const auto run = engine.run();
    REQUIRE(run.history.size() == 11);
    for (int g = 0; g <= 10; ++g) {
        INFO("generation " << g);
        CHECK(run.history[static_cast<std::size_t>(g)].best_error == std::ldexp(e0, -g));
    }
}

TEST_CASE("best fitness is monotone under elitism, K constant, deltas telescope") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        INFO("seed " << seed);
        NoisyVariator v(seed);
        auto cfg = small_config(10, 25, seed);
        cfg.elitism_k = 1;
        Engine engine(cfg, v, body_evaluator());
        Population pop = engine.init_population();
        double prev = pop.best().fitness();
        for (int g = 1; g <= 25; ++g) {
            pop = engine.step_generation(pop);
            REQUIRE(pop.members.size() == 10);
            REQUIRE(pop.generation == g);
            REQUIRE(pop.best().fitness() >= prev);
            prev = pop.best().fitness();
            for (std::size_t i = 1; i < pop.members.size(); ++i)
                REQUIRE(pop.members[i - 1].fitness() >= pop.members[i].fitness());
            REQUIRE(pop.elite_ids == std::vector<std::string>{pop.members[0].id});
        }

        const auto& led = engine.ledger();
        const auto traj = led.trajectory(pop.best().id);
        const auto founder = led.founder_of(pop.best().id);
        REQUIRE(founder.rfind("g0_", 0) == 0);
        double sum = 0;
        for (const auto& e : traj) sum += e.delta;
        const double founder_fit = engine.archive().at(founder).fitness();
        CHECK(std::abs(sum - (pop.best().fitness() - founder_fit)) <= 1e-9 * std::max(1.0, std::abs(sum)));

        long produced = 0;
        for (const auto& r : engine.history()) produced += r.offspring_produced;
        CHECK(led.total_applications() == produced);
        CHECK(static_cast<long>(led.entries.size()) == produced);
        double delta_sum = 0, op_sum = 0;
        for (const auto& e : led.entries) delta_sum += e.delta;
        for (double d : led.cumulative_delta) op_sum += d;
        CHECK(std::abs(delta_sum - op_sum) <= 1e-9 * std::max(1.0, std::abs(op_sum)));
    }
}

TEST_CASE("every lineage resolves to generation-0 founders") {
    NoisyVariator v(99);
    Engine engine(small_config(8, 12, 99), v, body_evaluator());
    const auto run = engine.run();
    for (const auto& m : run.population.members) {
        std::set<std::string> seen;
        std::string cur = m.id;
        while (const auto* e = run.ledger.find(cur)) {
            REQUIRE(seen.insert(cur).second);
            const auto& c = run.archive.at(cur);
            REQUIRE(c.lineage.size() >= 1);
            REQUIRE(c.lineage.front().parents == e->parents);
            REQUIRE(std::find(e->parents.begin(), e->parents.end(), e->best_parent_id) != e->parents.end());
            cur = e->best_parent_id;
        }
        CHECK(run.archive.at(cur).generation_born == 0);
    }
    // The recorded best trajectory matches the ledger walk.
    std::vector<VariationOp> ops;
    for (const auto& e : run.ledger.trajectory(run.best().id)) ops.push_back(e.op);
    CHECK(ops == run.ledger.best_trajectory);
}

TEST_CASE("mutate-only schedule gives mutate lineage everywhere") {
    NoisyVariator v(5, 0.0, 0.0);
    auto cfg = small_config(6, 4, 5);
    cfg.schedule = OperatorSchedule::only(VariationOp::mutate);
    Engine engine(cfg, v, body_evaluator());
    const auto run = engine.run();
    CHECK(run.ledger.applications[0] == 6 * 4);
    for (const auto& [id, c] : run.archive) {
        if (c.generation_born == 0) continue;
        REQUIRE(c.lineage.size() == 1);
        CHECK(c.lineage[0].op == "mutate");
        CHECK(c.lineage[0].parents.size() == 1);
    }
}

namespace {

struct RecordingVariator : Variator {
    std::mutex mu;
    std::vector<std::pair<VariationOp, std::vector<std::string>>> calls;
    std::vector<std::vector<double>> reflect_fitness;
    int seeds = 0;

    VariationResult generate(const std::string&) override {
        std::lock_guard lock(mu);
        return {body_for(0.1 * (1 + seeds++)), "", false, ""};
    }
    VariationResult vary(VariationOp op, const std::vector<const Candidate*>& parents, const std::string&) override {
        std::lock_guard lock(mu);
        std::vector<std::string> ids;
        std::vector<double> fits;
        for (const auto* p : parents) {
            ids.push_back(p->id);
            fits.push_back(p->fitness());
        }
        calls.emplace_back(op, ids);
        if (op == VariationOp::reflect) reflect_fitness.push_back(fits);
        return {parents.front()->body, "", false, ""};  // echo
    }
};

}  // namespace

TEST_CASE("mutate with an echoing mock copies the parent") {
    RecordingVariator v;
    auto cfg = small_config(3, 1, 1);
    cfg.schedule = OperatorSchedule::only(VariationOp::mutate);
    Engine engine(cfg, v, body_evaluator());
    const auto pop0 = engine.init_population();
    engine.step_generation(pop0);
    for (const auto& [op, parents] : v.calls) {
        CHECK(op == VariationOp::mutate);
        REQUIRE(parents.size() == 1);
    }
    for (const auto& [id, c] : engine.archive()) {
        if (c.generation_born != 1) continue;
        const auto& parent = engine.archive().at(c.lineage[0].parents[0]);
        CHECK(c.body == parent.body);
        CHECK(c.lineage[0] == LineageEntry{"mutate", {parent.id}});
    }
}

TEST_CASE("reflect receives the five best members in score order") {
    RecordingVariator v;
    auto cfg = small_config(8, 1, 3);
    cfg.schedule = OperatorSchedule::only(VariationOp::reflect);
    cfg.offspring = 3;
    Engine engine(cfg, v, body_evaluator());
    const auto pop0 = engine.init_population();
    engine.step_generation(pop0);
    REQUIRE(v.calls.size() == 3);
    std::vector<std::string> top;
    for (int i = 0; i < 5; ++i) top.push_back(pop0.members[static_cast<std::size_t>(i)].id);
    for (const auto& [op, parents] : v.calls) {
        CHECK(op == VariationOp::reflect);
        CHECK(parents == top);
    }
    for (const auto& f : v.reflect_fitness) CHECK(std::is_sorted(f.rbegin(), f.rend()));
}

TEST_CASE("reflect is drawn at most once per generation under the default schedule") {
    RecordingVariator v;
    auto cfg = small_config(10, 6, 11);
    cfg.schedule.weights = {0.01, 0.01, 0.01, 0.01, 10.0};
    Engine engine(cfg, v, body_evaluator());
    engine.run();
    std::map<int, int> per_gen;
    for (const auto& e : engine.ledger().entries)
        if (e.op == VariationOp::reflect) ++per_gen[e.generation];
    CHECK(per_gen.size() == 6);
    for (const auto& [g, n] : per_gen) CHECK(n == 1);
}

TEST_CASE("crossover lineage names both parents") {
    RecordingVariator v;
    auto cfg = small_config(4, 1, 2);
    cfg.schedule = OperatorSchedule::only(VariationOp::crossover);
    Engine engine(cfg, v, body_evaluator());
    const auto pop0 = engine.init_population();
    engine.step_generation(pop0);
    for (const auto& [id, c] : engine.archive()) {
        if (c.generation_born != 1) continue;
        REQUIRE(c.lineage[0].op == "crossover");
        REQUIRE(c.lineage[0].parents.size() == 2);
        CHECK(c.lineage[0].parents[0] != c.lineage[0].parents[1]);
    }
}

TEST_CASE("K = 2 is a valid population") {
    NoisyVariator v(4, 0.0, 0.0);
    auto cfg = small_config(2, 3, 4);
    cfg.elitism_k = 1;
    Engine engine(cfg, v, body_evaluator());
    const auto run = engine.run();
    CHECK(run.population.members.size() == 2);
    CHECK(run.history.size() == 4);
}

TEST_CASE("seeding fails after bounded retries") {
    struct Dead : Variator {
        int calls = 0;
        VariationResult generate(const std::string&) override {
            ++calls;
            return {std::nullopt, "", true, "down"};
        }
        VariationResult vary(VariationOp, const std::vector<const Candidate*>&, const std::string&) override { return {}; }
    } v;
    Engine engine(small_config(4, 1, 1), v, body_evaluator());
    CHECK_THROWS_AS(engine.init_population(), SeedingError);
    CHECK(v.calls == 12);
}

TEST_CASE("seeding retries past invalid responses") {
    struct Flaky : Variator {
        std::atomic<int> calls{0};
        VariationResult generate(const std::string&) override {
            const int n = calls++;
            if (n % 2 == 0) return {std::nullopt, "no code here", false, ""};
            return {body_for(0.5 + n), "", false, ""};
        }
        VariationResult vary(VariationOp, const std::vector<const Candidate*>&, const std::string&) override { return {}; }
    } v;
    Engine engine(small_config(4, 0, 1), v, body_evaluator());
    const auto pop = engine.init_population();
    CHECK(pop.members.size() == 4);
}

TEST_CASE("all-invalid offspring keep the parents and log stagnation") {
    struct Broken : RecordingVariator {
        VariationResult vary(VariationOp, const std::vector<const Candidate*>&, const std::string&) override {
            return {std::nullopt, "garbage", false, ""};
        }
    } v;
    Engine engine(small_config(4, 2, 1), v, body_evaluator());
    const auto pop0 = engine.init_population();
    const auto pop1 = engine.step_generation(pop0);
    CHECK(pop1.generation == 1);
    REQUIRE(pop1.members.size() == pop0.members.size());
    for (std::size_t i = 0; i < pop0.members.size(); ++i) CHECK(pop1.members[i].id == pop0.members[i].id);
    CHECK(engine.history().back().stagnation);
    CHECK(engine.history().back().offspring_penalized == 4);
    // penalized children still count as applications
    CHECK(engine.ledger().total_applications() == 4);
    bool logged = false;
    for (const auto& e : engine.events()) logged |= e.find("no valid offspring") != std::string::npos;
    CHECK(logged);
}

TEST_CASE("provider failures skip the application and are logged") {
    struct Outage : RecordingVariator {
        VariationResult vary(VariationOp, const std::vector<const Candidate*>&, const std::string& key) override {
            if (key.back() == '0') return {std::nullopt, "", true, "503"};
            return {body_for(0.01), "", false, ""};
        }
    } v;
    Engine engine(small_config(5, 1, 1), v, body_evaluator());
    const auto pop1 = engine.step_generation(engine.init_population());
    CHECK(engine.history().back().offspring_skipped == 1);
    CHECK(engine.ledger().total_applications() == 4);
    CHECK(engine.archive().count("g1_c0") == 0);
    CHECK(pop1.members.size() == 5);
    bool logged = false;
    for (const auto& e : engine.events()) logged |= e.find("g1_c0 skipped: 503") != std::string::npos;
    CHECK(logged);
}

TEST_CASE("engine behaves identically for scripts and messages") {
    auto run_kind = [](CandidateKind kind) {
        NoisyVariator v(21);
        auto cfg = small_config(6, 8, 21);
        cfg.kind = kind;
        Engine engine(cfg, v, body_evaluator());
        return engine.run();
    };
    const auto a = run_kind(CandidateKind::heuristic_script);
    const auto b = run_kind(CandidateKind::nudge_message);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(record_to_json(a.history[i]) == record_to_json(b.history[i]));
    }
    CHECK(ledger_to_json(a.ledger) == ledger_to_json(b.ledger));
    CHECK(a.best().kind == CandidateKind::heuristic_script);
    CHECK(b.best().kind == CandidateKind::nudge_message);
    CHECK(a.best().complexity.has_value());
    CHECK_FALSE(b.best().complexity.has_value());
}

TEST_CASE("checkpoint and resume reproduce the uninterrupted run") {
    TempDir full, part;
    auto cfg = small_config(6, 6, 8);
    cfg.run_dir = full.path;
    NoisyVariator v1(8);
    Engine a(cfg, v1, body_evaluator());
    const auto ra = a.run();

    auto cfg2 = cfg;
    cfg2.run_dir = part.path;
    cfg2.generations = 3;
    NoisyVariator v2(8);
    Engine b(cfg2, v2, body_evaluator());
    b.run();
    // A crash halfway through generation 4 leaves files but no state.json.
    fs::create_directories(part.path / "gen_4");
    write_text(part.path / "gen_4" / "scores.json", "{truncated");
    REQUIRE(Engine::last_complete_generation(part.path) == 3);

    cfg2.generations = 6;
    NoisyVariator v3(8);
    Engine c(cfg2, v3, body_evaluator());
    const auto rc = c.run();
    CHECK(rc.resumed_from == 3);
    REQUIRE(ra.history.size() == rc.history.size());
    for (std::size_t i = 0; i < ra.history.size(); ++i) CHECK(record_to_json(ra.history[i]) == record_to_json(rc.history[i]));
    CHECK(ledger_to_json(ra.ledger) == ledger_to_json(rc.ledger));
    for (std::size_t i = 0; i < ra.population.members.size(); ++i)
        CHECK(ra.population.members[i].id == rc.population.members[i].id);

    for (int g = 0; g <= 6; ++g) {
        CHECK(fs::exists(full.path / ("gen_" + std::to_string(g)) / "scores.json"));
        CHECK(fs::exists(full.path / ("gen_" + std::to_string(g)) / "state.json"));
    }
    CHECK(fs::exists(full.path / "gen_0" / "candidate_g0_c0.txt"));
    CHECK(fs::exists(full.path / "ledger.json"));
    const auto scores = read_json(full.path / "gen_6" / "scores.json");
    CHECK(scores.at("members").size() == 6);
    CHECK(scores.at("elite_ids").size() == 2);
}

TEST_CASE("tracking exports are consistent with the run") {
    TempDir dir;
    auto cfg = small_config(5, 5, 13);
    cfg.run_dir = dir.path;
    NoisyVariator v(13);
    Engine engine(cfg, v, body_evaluator());
    const auto run = engine.run();
    const auto t = dir.path / "tracking";
    for (const char* f : {"fitness.csv", "operators.csv", "ledger.csv", "best_trajectory.csv", "complexity.csv"})
        CHECK(fs::exists(t / f));

    auto lines = [](const fs::path& p) {
        std::vector<std::string> out;
        std::istringstream in(read_text(p));
        for (std::string l; std::getline(in, l);) out.push_back(l);
        return out;
    };
    const auto fit = lines(t / "fitness.csv");
    CHECK(fit.size() == 1 + 6);
    double prev = -1;
    for (std::size_t i = 1; i < fit.size(); ++i) {
        std::vector<std::string> cols;
        std::istringstream row(fit[i]);
        for (std::string c; std::getline(row, c, ',');) cols.push_back(c);
        const double best = std::stod(cols[2]);
        CHECK(best >= prev);
        CHECK(std::stod(cols[4]) == Catch::Approx(1.0 - std::stod(cols[3])));
        prev = best;
    }
    long apps = 0;
    const auto ops = lines(t / "operators.csv");
    CHECK(ops.size() == 6);
    for (std::size_t i = 1; i < ops.size(); ++i) apps += std::stol(ops[i].substr(ops[i].find(',') + 1));
    CHECK(apps == run.ledger.total_applications());
    CHECK(lines(t / "best_trajectory.csv").size() == 2 + run.ledger.best_trajectory.size());
    CHECK(lines(t / "complexity.csv").size() == 1 + run.archive.size());
}

TEST_CASE("K=25 x 25 generations runs offline well inside two minutes") {
    const auto t0 = std::chrono::steady_clock::now();
    NoisyVariator v(2024);
    Engine engine(small_config(25, 25, 2024), v, body_evaluator());
    const auto run = engine.run();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(run.history.size() == 26);
    CHECK(secs < 120.0);
}

TEST_CASE("parallel workers give the same run as one worker") {
    auto go = [](std::size_t workers) {
        NoisyVariator v(31);
        auto cfg = small_config(8, 5, 31);
        cfg.workers = workers;
        Engine engine(cfg, v, body_evaluator());
        return engine.run();
    };
    const auto a = go(1), b = go(4);
    CHECK(ledger_to_json(a.ledger) == ledger_to_json(b.ledger));
    CHECK(a.best().id == b.best().id);
}

TEST_CASE("config validation") {
    HalvingVariator v({1.0});
    auto bad = small_config(1, 1, 1);
    CHECK_THROWS_AS(Engine(bad, v, body_evaluator()), InputError);
    auto bad2 = small_config(4, 1, 1);
    bad2.elitism_k = 4;
    CHECK_THROWS_AS(Engine(bad2, v, body_evaluator()), InputError);
    auto bad3 = small_config(4, 1, 1);
    bad3.schedule.weights.fill(0.0);
    CHECK_THROWS_AS(Engine(bad3, v, body_evaluator()), InputError);
}

TEST_CASE("LLM variator fills operator slots from the parents") {
    std::vector<PromptBundle> seen;
    std::mutex mu;
    auto provider = std::make_shared<MockProvider>([&](const PromptBundle& b) {
        std::lock_guard lock(mu);
        seen.push_back(b);
        return std::string("Here you go:\n```python\nnew = 1\n```\n");
    });
    Gateway gw(provider);
    PromptContext base;
    add_param_slots(base, default_economic_params());
    base.slots["neighbour_examples"] = "";
    base.slots["farm_input"] = "{}";
    LlmVariator v(gw, PromptStage::baseline, base, CandidateKind::heuristic_script);

    Candidate p1, p2;
    p1.id = "a";
    p1.body = "alpha_body = 1";
    p1.fitness_history.push_back(report_for(0.5));
    p2.id = "b";
    p2.body = "beta_body = 2";
    p2.fitness_history.push_back(report_for(1.0));

    auto r = v.vary(VariationOp::crossover, {&p1, &p2}, "g1_c0");
    REQUIRE(r.body);
    CHECK(*r.body == "new = 1");
    REQUIRE(seen.size() == 1);
    CHECK(seen[0].role == Role::modifier);
    CHECK(seen[0].text.find("alpha_body = 1") != std::string::npos);
    CHECK(seen[0].text.find("beta_body = 2") != std::string::npos);

    v.vary(VariationOp::reflect, {&p1, &p2}, "g1_c1");
    CHECK(seen[1].text.find(fitness_label(p1.fitness())) != std::string::npos);
    CHECK(seen[1].text.find(fitness_label(p1.fitness())) < seen[1].text.find(fitness_label(p2.fitness())));

    // Same prompt, different request keys: distinct digests.
    v.vary(VariationOp::mutate, {&p1}, "k1");
    v.vary(VariationOp::mutate, {&p1}, "k2");
    CHECK(seen[2].context_digest != seen[3].context_digest);
    CHECK(seen[2].text == seen[3].text);

    auto g = v.generate("g0_c0");
    CHECK(seen.back().role == Role::generator);
    CHECK(*g.body == "new = 1");

    auto bad = std::make_shared<MockProvider>([](const PromptBundle&) { return std::string("no marker"); });
    Gateway gw2(bad);
    PromptContext nbase = base;
    nbase.mechanism = "behavioral";
    for (const char* s : {"baseline_code", "global_code", "social_comparison_data"}) nbase.slots[s] = "x";
    LlmVariator mv(gw2, PromptStage::nudge, nbase, CandidateKind::nudge_message);
    auto mr = mv.vary(VariationOp::mutate, {&p1}, "m");
    CHECK_FALSE(mr.body);
    CHECK(mr.raw == "no marker");
    CHECK_FALSE(mr.failed);

    auto down = std::make_shared<MockProvider>();
    Gateway gw3(down, GatewayConfig{RetryPolicy{1, 0, 1, 0}});
    LlmVariator dv(gw3, PromptStage::baseline, base, CandidateKind::heuristic_script);
    auto dr = dv.generate("x");
    CHECK(dr.failed);
}
