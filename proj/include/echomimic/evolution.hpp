#pragma once

// Evolutionary engine over candidates of either kind: seeding, the five
// LLM-driven variation operators, elitism plus fitness-proportional survival,
// and the operator ledger. Checkpoints go to gen_<g>/ under the run directory;
// state.json is written last and marks the generation complete.

#include <algorithm>
#include <array>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "echomimic/candidate.hpp"
#include "echomimic/provider.hpp"
#include "echomimic/random.hpp"
#include "echomimic/report.hpp"
#include "echomimic/sandbox.hpp"

namespace echomimic {

struct VariationResult {
    std::optional<std::string> body;  // extracted answer
    std::string raw;
    bool failed = false;  // provider error: the application is skipped
    std::string error;
};

/// Source of new candidate bodies (the generator and modifier roles).
class Variator {
public:
    virtual ~Variator() = default;
    virtual VariationResult generate(const std::string& request_key) = 0;
    /// `parents` are in rank order; reflect receives the top-k with their scores.
    virtual VariationResult vary(VariationOp op, const std::vector<const Candidate*>& parents,
                                 const std::string& request_key) = 0;
};

/// Scores one candidate and may rewrite its body (repair). Called from worker
/// threads when the engine runs with more than one worker.
using Evaluator = std::function<FitnessReport(Candidate&)>;

/// Variation through the language-model gateway with role prompts.
class LlmVariator : public Variator {
public:
    LlmVariator(Gateway& gateway, PromptStage stage, PromptContext base, CandidateKind kind)
        : gw_(gateway), stage_(stage), base_(std::move(base)), kind_(kind) {}

    VariationResult generate(const std::string& key) override {
        const Role role = kind_ == CandidateKind::heuristic_script ? Role::generator : Role::policy_generator;
        return ask(compose_prompt(role, stage_, base_, key));
    }

    VariationResult vary(VariationOp op, const std::vector<const Candidate*>& parents, const std::string& key) override {
        const bool code = kind_ == CandidateKind::heuristic_script;
        PromptContext ctx = base_;
        ctx.op = op;
        switch (op) {
            case VariationOp::mutate: ctx.slots[code ? "parent_code" : "parent_message"] = parents.at(0)->body; break;
            case VariationOp::reflect: {
                std::vector<std::pair<std::string, double>> ranked;
                for (const auto* p : parents) ranked.emplace_back(p->body, p->fitness());
                ctx.slots["top_candidates"] = render_top_candidates(ranked, code);
                break;
            }
            default:
                ctx.slots["parent1"] = parents.at(0)->body;
                ctx.slots["parent2"] = parents.at(1)->body;
        }
        return ask(compose_prompt(code ? Role::modifier : Role::policy_modifier, stage_, ctx, key));
    }

private:
    VariationResult ask(const PromptBundle& b) {
        VariationResult r;
        try {
            auto resp = gw_.complete(b);
            r.raw = std::move(resp.raw);
            r.body = std::move(resp.parsed);
        } catch (const ProviderError& e) {
            r.failed = true;
            r.error = e.what();
        }
        return r;
    }

    Gateway& gw_;
    PromptStage stage_;
    PromptContext base_;
    CandidateKind kind_;
};

/// Repair callback backed by the fixer role. Provider errors yield nullopt.
inline Fixer make_llm_fixer(Gateway& gw, PromptStage stage, PromptContext base = {}) {
    return [&gw, stage, base](const std::string& body, const std::string& trace) -> std::optional<std::string> {
        PromptContext ctx = base;
        ctx.slots["code"] = body;
        ctx.slots["trace"] = trace;
        try {
            return gw.complete(compose_prompt(Role::fixer, stage, ctx)).parsed;
        } catch (const ProviderError&) {
            return std::nullopt;
        }
    };
}

// ---------------------------------------------------------------------------

struct Population {
    int generation = 0;
    std::vector<Candidate> members;  // rank order, best first
    std::vector<std::string> elite_ids;

    const Candidate& best() const { return members.front(); }
};

struct OperatorSchedule {
    std::array<double, 5> weights{1, 1, 1, 1, 1};  // indexed by VariationOp
    bool reflect_once_per_generation = true;

    static OperatorSchedule only(VariationOp op) {
        OperatorSchedule s;
        s.weights.fill(0.0);
        s.weights[static_cast<std::size_t>(op)] = 1.0;
        s.reflect_once_per_generation = false;
        return s;
    }
};

struct EngineConfig {
    int population_size = 25;
    int generations = 25;
    int elitism_k = 2;
    int offspring = 0;  // 0 means population_size
    OperatorSchedule schedule;
    int reflect_top = 5;
    std::uint64_t seed = 1;
    int seed_attempts_per_member = 3;
    std::size_t workers = 1;
    CandidateKind kind = CandidateKind::heuristic_script;
    std::string id_prefix;
    std::optional<fs::path> run_dir;
    std::string body_prefix = "candidate_";
    std::function<void(const std::string&)> log;
    std::function<void(const Population&)> on_generation;  // after each checkpoint
};

inline std::vector<std::string> validate(const EngineConfig& c) {
    std::vector<std::string> p;
    if (c.population_size < 2) p.push_back("population_size must be >= 2");
    if (c.generations < 0) p.push_back("generations must be >= 0");
    if (c.elitism_k < 0 || c.elitism_k >= c.population_size) p.push_back("elitism_k must be in [0, population_size)");
    if (c.offspring < 0) p.push_back("offspring must be >= 0");
    if (c.reflect_top < 1) p.push_back("reflect_top must be >= 1");
    if (c.seed_attempts_per_member < 1) p.push_back("seed_attempts_per_member must be >= 1");
    double total = 0;
    for (double w : c.schedule.weights) {
        if (!(w >= 0)) p.push_back("operator weights must be nonnegative");
        total += w;
    }
    if (!(total > 0)) p.push_back("operator weights must not all be zero");
    return p;
}

struct SeedingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LedgerEntry {
    int generation = 0;
    std::string child_id;
    VariationOp op = VariationOp::mutate;
    std::vector<std::string> parents;
    std::string best_parent_id;
    double child_fitness = 0.0;
    double delta = 0.0;  // child fitness - best parent fitness
};

struct OperatorLedger {
    std::array<long, 5> applications{};
    std::array<double, 5> cumulative_delta{};
    std::vector<LedgerEntry> entries;
    std::vector<VariationOp> best_trajectory;

    long total_applications() const {
        long n = 0;
        for (long a : applications) n += a;
        return n;
    }

    const LedgerEntry* find(const std::string& child) const {
        for (const auto& e : entries)
            if (e.child_id == child) return &e;
        return nullptr;
    }

    /// Creation entries from the founder to `id`, oldest first.
    std::vector<LedgerEntry> trajectory(const std::string& id) const {
        std::vector<LedgerEntry> out;
        std::string cur = id;
        while (const auto* e = find(cur)) {
            out.push_back(*e);
            cur = e->best_parent_id;
        }
        std::reverse(out.begin(), out.end());
        return out;
    }

    std::string founder_of(const std::string& id) const {
        auto t = trajectory(id);
        return t.empty() ? id : t.front().best_parent_id;
    }
};

inline json ledger_to_json(const OperatorLedger& l) {
    json ops = json::object();
    for (VariationOp op : all_variation_ops) {
        const auto i = static_cast<std::size_t>(op);
        ops[std::string(to_string(op))] = {{"applications", l.applications[i]},
                                           {"cumulative_fitness_delta", l.cumulative_delta[i]}};
    }
    json entries = json::array();
    for (const auto& e : l.entries)
        entries.push_back({{"generation", e.generation},
                           {"child_id", e.child_id},
                           {"op", to_string(e.op)},
                           {"parents", e.parents},
                           {"best_parent_id", e.best_parent_id},
                           {"child_fitness", e.child_fitness},
                           {"delta", e.delta}});
    json traj = json::array();
    for (VariationOp op : l.best_trajectory) traj.push_back(to_string(op));
    return {{"operators", ops}, {"best_trajectory", traj}, {"entries", entries}};
}

inline OperatorLedger ledger_from_json(const json& j) {
    OperatorLedger l;
    for (const auto& [name, v] : j.at("operators").items()) {
        const auto i = static_cast<std::size_t>(parse_variation_op(name));
        l.applications[i] = v.at("applications").get<long>();
        l.cumulative_delta[i] = v.at("cumulative_fitness_delta").get<double>();
    }
    for (const auto& e : j.at("entries"))
        l.entries.push_back({e.at("generation").get<int>(), e.at("child_id").get<std::string>(),
                             parse_variation_op(e.at("op").get<std::string>()),
                             e.at("parents").get<std::vector<std::string>>(), e.at("best_parent_id").get<std::string>(),
                             e.at("child_fitness").get<double>(), e.at("delta").get<double>()});
    for (const auto& op : j.at("best_trajectory")) l.best_trajectory.push_back(parse_variation_op(op.get<std::string>()));
    return l;
}

struct GenerationRecord {
    int generation = 0;
    std::string best_id;
    double best_fitness = 0.0;
    double best_error = 0.0;
    double mean_fitness = 0.0;
    double mean_error = 0.0;
    int offspring_produced = 0;
    int offspring_skipped = 0;
    int offspring_penalized = 0;
    bool stagnation = false;
};

inline json record_to_json(const GenerationRecord& r) {
    return {{"generation", r.generation},          {"best_id", r.best_id},
            {"best_fitness", r.best_fitness},      {"best_error", r.best_error},
            {"mean_fitness", r.mean_fitness},      {"mean_error", r.mean_error},
            {"offspring_produced", r.offspring_produced}, {"offspring_skipped", r.offspring_skipped},
            {"offspring_penalized", r.offspring_penalized}, {"stagnation", r.stagnation}};
}

inline GenerationRecord record_from_json(const json& j) {
    return {j.at("generation").get<int>(),         j.at("best_id").get<std::string>(),
            j.at("best_fitness").get<double>(),    j.at("best_error").get<double>(),
            j.at("mean_fitness").get<double>(),    j.at("mean_error").get<double>(),
            j.at("offspring_produced").get<int>(), j.at("offspring_skipped").get<int>(),
            j.at("offspring_penalized").get<int>(), j.at("stagnation").get<bool>()};
}


struct RunResult {
    Population population;
    std::vector<GenerationRecord> history;
    OperatorLedger ledger;
    std::vector<std::string> events;
    std::map<std::string, Candidate> archive;  // every candidate ever scored
    int resumed_from = -1;

    const Candidate& best() const { return population.best(); }
};

inline std::string fmt_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class Engine {
public:
    Engine(EngineConfig cfg, Variator& variator, Evaluator evaluator)
        : cfg_(std::move(cfg)), variator_(variator), evaluate_(std::move(evaluator)), rng_(cfg_.seed) {
        if (auto p = validate(cfg_); !p.empty()) throw InputError("engine config: " + p.front());
        if (!evaluate_) throw InputError("engine needs an evaluator");
    }

    Population init_population() {
        const int K = cfg_.population_size;
        const int budget = K * cfg_.seed_attempts_per_member;
        std::vector<Candidate> members;
        int attempt = 0;
        while (static_cast<int>(members.size()) < K && attempt < budget) {
            const int batch = std::min(K - static_cast<int>(members.size()), budget - attempt);
            std::vector<std::function<std::optional<Candidate>()>> tasks;
            for (int i = 0; i < batch; ++i) {
                const std::string id = cfg_.id_prefix + "g0_c" + std::to_string(attempt + i);
                tasks.push_back([this, id]() -> std::optional<Candidate> {
                    auto r = variator_.generate(id);
                    if (r.failed || !r.body || r.body->find_first_not_of(" \t\r\n") == std::string::npos) {
                        log("seed " + id + " rejected: " + (r.failed ? r.error : "no extractable answer"));
                        return std::nullopt;
                    }
                    Candidate c;
                    c.id = id;
                    c.kind = cfg_.kind;
                    c.body = std::move(*r.body);
                    c.generation_born = 0;
                    score(c);
                    return c;
                });
            }
            attempt += batch;
            for (auto& c : run_parallel<std::optional<Candidate>>(cfg_.workers, tasks))
                if (c) members.push_back(std::move(*c));
        }
        if (static_cast<int>(members.size()) < K)
            throw SeedingError("only " + std::to_string(members.size()) + " of " + std::to_string(K) +
                               " seed candidates after " + std::to_string(attempt) + " generator calls");
        for (const auto& m : members) archive_[m.id] = m;
        Population pop{0, std::move(members), {}};
        rank(pop.members);
        set_elites(pop);
        history_.push_back(summarize(pop, 0, 0, 0, false));
        return pop;
    }

    Population step_generation(const Population& pop) {
        const int K = cfg_.population_size;
        if (static_cast<int>(pop.members.size()) != K) throw InputError("population size differs from config");
        const int next_gen = pop.generation + 1;
        const int n_off = cfg_.offspring > 0 ? cfg_.offspring : K;

        struct Plan {
            std::string id;
            VariationOp op;
            std::vector<const Candidate*> parents;
        };
        std::vector<Plan> plans;
        bool reflect_used = false;
        for (int j = 0; j < n_off; ++j) {
            const VariationOp op = draw_operator(reflect_used);
            if (op == VariationOp::reflect) reflect_used = true;
            Plan p{cfg_.id_prefix + "g" + std::to_string(next_gen) + "_c" + std::to_string(j), op, {}};
            const auto& primary = pop.members[static_cast<std::size_t>(j % K)];
            switch (op) {
                case VariationOp::mutate: p.parents = {&primary}; break;
                case VariationOp::reflect:
                    for (int i = 0; i < std::min(cfg_.reflect_top, K); ++i) p.parents.push_back(&pop.members[i]);
                    break;
                default: p.parents = {&primary, &pop.members[draw_partner(pop, j % K)]};
            }
            plans.push_back(std::move(p));
        }

        std::vector<std::function<std::optional<Candidate>()>> tasks;
        for (const auto& plan : plans)
            tasks.push_back([this, &plan, next_gen]() -> std::optional<Candidate> {
                auto r = variator_.vary(plan.op, plan.parents, plan.id);
                if (r.failed) {
                    log(std::string(to_string(plan.op)) + " for " + plan.id + " skipped: " + r.error);
                    return std::nullopt;
                }
                Candidate c;
                c.id = plan.id;
                c.kind = cfg_.kind;
                c.generation_born = next_gen;
                c.needs_repair = !r.body;
                c.body = r.body ? std::move(*r.body) : std::move(r.raw);
                LineageEntry e{std::string(to_string(plan.op)), {}};
                for (const auto* p : plan.parents) e.parents.push_back(p->id);
                c.lineage.push_back(std::move(e));
                score(c);
                return c;
            });
        auto children = run_parallel<std::optional<Candidate>>(cfg_.workers, tasks);

        // Single-writer phase.
        int produced = 0, skipped = 0, penalized = 0;
        std::vector<Candidate> valid;
        for (std::size_t j = 0; j < children.size(); ++j) {
            if (!children[j]) {
                ++skipped;
                continue;
            }
            Candidate& c = *children[j];
            ++produced;
            const auto& plan = plans[j];
            const Candidate* best_parent = plan.parents.front();
            for (const auto* p : plan.parents)
                if (p->fitness() > best_parent->fitness()) best_parent = p;
            LedgerEntry le{next_gen, c.id, plan.op, {}, best_parent->id, c.fitness(), c.fitness() - best_parent->fitness()};
            for (const auto* p : plan.parents) le.parents.push_back(p->id);
            const auto oi = static_cast<std::size_t>(plan.op);
            ledger_.applications[oi] += 1;
            ledger_.cumulative_delta[oi] += le.delta;
            ledger_.entries.push_back(std::move(le));
            archive_[c.id] = c;
            if (c.penalized()) ++penalized;
            else valid.push_back(std::move(c));
        }

        Population next{next_gen, {}, {}};
        const bool stagnation = valid.empty();
        if (stagnation) {
            next.members = pop.members;
            log("generation " + std::to_string(next_gen) + ": no valid offspring, parents carried over");
        } else {
            next.members = select(pop.members, std::move(valid));
        }
        rank(next.members);
        set_elites(next);
        history_.push_back(summarize(next, produced, skipped, penalized, stagnation));
        return next;
    }

    /// Full run with checkpoints; resumes from the last complete generation
    /// when the run directory already holds one.
    RunResult run() {
        Population pop;
        int resumed = -1;
        if (cfg_.run_dir && (resumed = last_complete_generation(*cfg_.run_dir)) >= 0) {
            pop = load_checkpoint(*cfg_.run_dir, resumed);
            log("resuming from generation " + std::to_string(resumed));
        } else {
            pop = init_population();
            checkpoint(pop);
            if (cfg_.on_generation) cfg_.on_generation(pop);
        }
        while (pop.generation < cfg_.generations) {
            pop = step_generation(pop);
            checkpoint(pop);
            if (cfg_.on_generation) cfg_.on_generation(pop);
        }
        ledger_.best_trajectory.clear();
        for (const auto& e : ledger_.trajectory(pop.best().id)) ledger_.best_trajectory.push_back(e.op);
        RunResult out{pop, history_, ledger_, events_, archive_, resumed};
        if (cfg_.run_dir) {
            write_json(*cfg_.run_dir / "ledger.json", ledger_to_json(ledger_));
            export_tracking(out, *cfg_.run_dir / "tracking");
        }
        return out;
    }

    const OperatorLedger& ledger() const { return ledger_; }
    const std::vector<GenerationRecord>& history() const { return history_; }
    const std::map<std::string, Candidate>& archive() const { return archive_; }
    const std::vector<std::string>& events() const { return events_; }
    const EngineConfig& config() const { return cfg_; }

    static int last_complete_generation(const fs::path& dir) {
        int best = -1;
        if (!fs::exists(dir)) return best;
        for (const auto& e : fs::directory_iterator(dir)) {
            const auto name = e.path().filename().string();
            if (name.rfind("gen_", 0) != 0 || !fs::exists(e.path() / "state.json")) continue;
            try {
                best = std::max(best, std::stoi(name.substr(4)));
            } catch (const std::exception&) {
            }
        }
        return best;
    }

    static void export_tracking(const RunResult& run, const fs::path& dir) {
        fs::create_directories(dir);
        std::string s = "generation,best_id,best_fitness,best_error,best_accuracy,mean_fitness,mean_error,"
                        "offspring_produced,offspring_skipped,offspring_penalized,stagnation\n";
        for (const auto& r : run.history)
            s += std::to_string(r.generation) + "," + csv_cell(r.best_id) + "," + fmt_real(r.best_fitness) + "," +
                 fmt_real(r.best_error) + "," + fmt_real(1.0 - r.best_error) + "," + fmt_real(r.mean_fitness) + "," +
                 fmt_real(r.mean_error) + "," + std::to_string(r.offspring_produced) + "," +
                 std::to_string(r.offspring_skipped) + "," + std::to_string(r.offspring_penalized) + "," +
                 (r.stagnation ? "1" : "0") + "\n";
        write_text(dir / "fitness.csv", s);

        s = "operator,applications,cumulative_fitness_delta\n";
        for (VariationOp op : all_variation_ops) {
            const auto i = static_cast<std::size_t>(op);
            s += std::string(to_string(op)) + "," + std::to_string(run.ledger.applications[i]) + "," +
                 fmt_real(run.ledger.cumulative_delta[i]) + "\n";
        }
        write_text(dir / "operators.csv", s);

        s = "generation,child_id,operator,parents,best_parent_id,child_fitness,delta\n";
        for (const auto& e : run.ledger.entries) {
            std::string parents;
            for (const auto& p : e.parents) parents += (parents.empty() ? "" : ";") + p;
            s += std::to_string(e.generation) + "," + csv_cell(e.child_id) + "," + std::string(to_string(e.op)) + "," +
                 csv_cell(parents) + "," + csv_cell(e.best_parent_id) + "," + fmt_real(e.child_fitness) + "," +
                 fmt_real(e.delta) + "\n";
        }
        write_text(dir / "ledger.csv", s);

        s = "step,candidate_id,operator,fitness,delta\n";
        const auto traj = run.ledger.trajectory(run.best().id);
        const std::string founder = traj.empty() ? run.best().id : traj.front().best_parent_id;
        if (auto it = run.archive.find(founder); it != run.archive.end())
            s += "0," + csv_cell(founder) + ",seed," + fmt_real(it->second.fitness()) + ",0\n";
        for (std::size_t i = 0; i < traj.size(); ++i)
            s += std::to_string(i + 1) + "," + csv_cell(traj[i].child_id) + "," + std::string(to_string(traj[i].op)) +
                 "," + fmt_real(traj[i].child_fitness) + "," + fmt_real(traj[i].delta) + "\n";
        write_text(dir / "best_trajectory.csv", s);

        s = "candidate_id,generation,fitness,error,accuracy,penalized,parsed,lloc,cyclomatic,halstead_n1,halstead_n2,"
            "halstead_N1,halstead_N2,difficulty,volume,maintainability_index\n";
        for (const auto& [id, c] : run.archive) {
            if (!c.complexity) continue;
            const auto& m = *c.complexity;
            s += csv_cell(id) + "," + std::to_string(c.generation_born) + "," + fmt_real(c.fitness()) + "," +
                 fmt_real(c.error()) + "," + fmt_real(1.0 - c.error()) + "," + (c.penalized() ? "1" : "0") + "," +
                 (m.parsed ? "1" : "0") + "," + std::to_string(m.lloc) + "," + std::to_string(m.cyclomatic) + "," +
                 std::to_string(m.halstead_n1) + "," + std::to_string(m.halstead_n2) + "," +
                 std::to_string(m.halstead_N1) + "," + std::to_string(m.halstead_N2) + "," + fmt_real(m.difficulty) +
                 "," + fmt_real(m.volume) + "," + fmt_real(m.maintainability_index) + "\n";
        }
        write_text(dir / "complexity.csv", s);
    }

private:
    void log(const std::string& msg) {
        {
            std::lock_guard lock(log_mu_);
            events_.push_back(msg);
        }
        if (cfg_.log) cfg_.log(msg);
    }

    void score(Candidate& c) {
        FitnessReport r;
        try {
            r = evaluate_(c);
        } catch (const ProviderError& e) {
            r = penalty_report(std::string("evaluation provider failure: ") + e.what());
        }
        c.fitness_history.push_back(std::move(r));
        if (c.kind == CandidateKind::heuristic_script) c.complexity = compute_complexity(c.body);
    }

    static void rank(std::vector<Candidate>& members) {
        std::stable_sort(members.begin(), members.end(),
                         [](const Candidate& a, const Candidate& b) { return a.fitness() > b.fitness(); });
    }

    void set_elites(Population& p) const {
        p.elite_ids.clear();
        for (int i = 0; i < cfg_.elitism_k && i < static_cast<int>(p.members.size()); ++i)
            p.elite_ids.push_back(p.members[static_cast<std::size_t>(i)].id);
    }

    VariationOp draw_operator(bool reflect_used) {
        auto w = cfg_.schedule.weights;
        const auto ri = static_cast<std::size_t>(VariationOp::reflect);
        if (reflect_used && cfg_.schedule.reflect_once_per_generation) {
            w[ri] = 0.0;
            double rest = 0;
            for (double x : w) rest += x;
            if (rest <= 0) w[static_cast<std::size_t>(VariationOp::mutate)] = 1.0;
        }
        return all_variation_ops[weighted_index(rng_, w)];
    }

    std::size_t draw_partner(const Population& pop, std::size_t primary) {
        std::vector<double> w(pop.members.size());
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = i == primary ? 0.0 : pop.members[i].fitness();
        double total = 0;
        for (double x : w) total += x;
        if (!(total > 0))
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = i == primary ? 0.0 : 1.0;
        return weighted_index(rng_, w);
    }

    std::vector<Candidate> select(const std::vector<Candidate>& parents, std::vector<Candidate> offspring) {
        std::vector<Candidate> pool = parents;
        for (auto& c : offspring) pool.push_back(std::move(c));
        rank(pool);
        const auto K = static_cast<std::size_t>(cfg_.population_size);
        const auto E = static_cast<std::size_t>(cfg_.elitism_k);
        std::vector<Candidate> out(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(E));
        std::vector<Candidate> rest(pool.begin() + static_cast<std::ptrdiff_t>(E), pool.end());
        while (out.size() < K) {
            std::vector<double> w;
            for (const auto& c : rest) w.push_back(c.fitness());
            double total = 0;
            for (double x : w) total += x;
            if (!(total > 0)) std::fill(w.begin(), w.end(), 1.0);
            const auto i = weighted_index(rng_, w);
            out.push_back(std::move(rest[i]));
            rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(i));
        }
        return out;
    }

    static GenerationRecord summarize(const Population& p, int produced, int skipped, int penalized, bool stagnation) {
        GenerationRecord r;
        r.generation = p.generation;
        r.best_id = p.best().id;
        r.best_fitness = p.best().fitness();
        r.best_error = p.best().error();
        for (const auto& m : p.members) {
            r.mean_fitness += m.fitness();
            r.mean_error += m.error();
        }
        r.mean_fitness /= static_cast<double>(p.members.size());
        r.mean_error /= static_cast<double>(p.members.size());
        r.offspring_produced = produced;
        r.offspring_skipped = skipped;
        r.offspring_penalized = penalized;
        r.stagnation = stagnation;
        return r;
    }

    fs::path gen_dir(int g) const { return *cfg_.run_dir / ("gen_" + std::to_string(g)); }

    void checkpoint(const Population& pop) {
        if (!cfg_.run_dir) return;
        const fs::path dir = gen_dir(pop.generation);
        fs::create_directories(dir);
        json born = json::array();
        for (const auto& [id, c] : archive_)
            if (c.generation_born == pop.generation) {
                write_text(dir / (cfg_.body_prefix + id + ".txt"), c.body);
                born.push_back(candidate_meta_to_json(c));
            }
        json members = json::array();
        for (const auto& m : pop.members)
            members.push_back({{"id", m.id}, {"fitness", m.fitness()}, {"error", m.error()}, {"penalized", m.penalized()}});
        write_json(dir / "scores.json",
                   json{{"generation", pop.generation}, {"members", members}, {"elite_ids", pop.elite_ids},
                        {"candidates", born}});
        write_json(*cfg_.run_dir / "ledger.json", ledger_to_json(ledger_));
        json hist = json::array();
        for (const auto& r : history_) hist.push_back(record_to_json(r));
        write_json(dir / "state.json", json{{"generation", pop.generation},
                                            {"rng", save_rng(rng_)},
                                            {"ledger", ledger_to_json(ledger_)},
                                            {"history", hist},
                                            {"events", events_}});
    }

    Population load_checkpoint(const fs::path& root, int g) {
        archive_.clear();
        for (int i = 0; i <= g; ++i) {
            const auto scores = read_json(gen_dir(i) / "scores.json");
            for (const auto& meta : scores.at("candidates")) {
                const auto id = meta.at("id").get<std::string>();
                archive_[id] = candidate_from_json(meta, read_text(gen_dir(i) / (cfg_.body_prefix + id + ".txt")));
            }
        }
        const auto state = read_json(gen_dir(g) / "state.json");
        rng_ = load_rng(state.at("rng").get<std::string>());
        ledger_ = ledger_from_json(state.at("ledger"));
        history_.clear();
        for (const auto& r : state.at("history")) history_.push_back(record_from_json(r));
        events_ = state.value("events", std::vector<std::string>{});
        const auto scores = read_json(gen_dir(g) / "scores.json");
        Population p{g, {}, scores.at("elite_ids").get<std::vector<std::string>>()};
        for (const auto& m : scores.at("members")) {
            const auto id = m.at("id").get<std::string>();
            auto it = archive_.find(id);
            if (it == archive_.end()) throw ParseError(root.string() + ": member " + id + " missing from checkpoint");
            p.members.push_back(it->second);
        }
        return p;
    }

    EngineConfig cfg_;
    Variator& variator_;
    Evaluator evaluate_;
    Rng rng_;
    std::map<std::string, Candidate> archive_;
    OperatorLedger ledger_;
    std::vector<GenerationRecord> history_;
    std::vector<std::string> events_;
    std::mutex log_mu_;
};

}  // namespace echomimic
