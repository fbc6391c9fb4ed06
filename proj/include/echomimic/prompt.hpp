#pragma once

// Role prompts assembled from the block catalog under data/prompts, plus the
// answer extractors for code fences and \communication{...} blocks.
//
// Blocks are plain text with {{slot}} placeholders. manifest.json lists, per
// role/stage, the ordered parts of each prompt; a block name may carry a
// selector ({op}, {persona}, {mechanism}) resolved from the context.

#include <array>
#include <charconv>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "echomimic/landscape_io.hpp"

#ifndef ECHOMIMIC_DATA_DIR
#define ECHOMIMIC_DATA_DIR "data"
#endif

namespace echomimic {

enum class Role { generator, modifier, fixer, policy_generator, policy_modifier, farm_sim, explainer, merger };
enum class PromptStage { baseline, global, nudge };
enum class VariationOp { mutate, crossover, explore_diverge, explore_converge, reflect };

inline constexpr std::array all_roles{Role::generator,       Role::modifier,  Role::fixer,     Role::policy_generator,
                                      Role::policy_modifier, Role::farm_sim,  Role::explainer, Role::merger};
inline constexpr std::array all_prompt_stages{PromptStage::baseline, PromptStage::global, PromptStage::nudge};
inline constexpr std::array all_variation_ops{VariationOp::mutate, VariationOp::crossover, VariationOp::explore_diverge,
                                              VariationOp::explore_converge, VariationOp::reflect};

inline std::string_view to_string(Role r) {
    switch (r) {
        case Role::generator: return "generator";
        case Role::modifier: return "modifier";
        case Role::fixer: return "fixer";
        case Role::policy_generator: return "policy_generator";
        case Role::policy_modifier: return "policy_modifier";
        case Role::farm_sim: return "farm_sim";
        case Role::explainer: return "explainer";
        case Role::merger: return "merger";
    }
    return "";
}

inline std::string_view to_string(PromptStage s) {
    switch (s) {
        case PromptStage::baseline: return "baseline";
        case PromptStage::global: return "global";
        case PromptStage::nudge: return "nudge";
    }
    return "";
}

inline std::string_view to_string(VariationOp op) {
    switch (op) {
        case VariationOp::mutate: return "mutate";
        case VariationOp::crossover: return "crossover";
        case VariationOp::explore_diverge: return "explore_diverge";
        case VariationOp::explore_converge: return "explore_converge";
        case VariationOp::reflect: return "reflect";
    }
    return "";
}

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<E, N>& all, std::string_view what) {
    for (E e : all)
        if (to_string(e) == s) return e;
    throw ParseError("unknown " + std::string(what) + " '" + std::string(s) + "'");
}

inline Role parse_role(std::string_view s) { return parse_enum(s, all_roles, "role"); }
inline PromptStage parse_prompt_stage(std::string_view s) { return parse_enum(s, all_prompt_stages, "stage"); }
inline VariationOp parse_variation_op(std::string_view s) { return parse_enum(s, all_variation_ops, "operator"); }

/// Number of parents each operator consumes (reflect takes up to five).
inline int operator_arity(VariationOp op) {
    switch (op) {
        case VariationOp::mutate: return 1;
        case VariationOp::reflect: return 5;
        default: return 2;
    }
}

struct CompositionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PromptContext {
    std::map<std::string, std::string> slots;
    std::optional<VariationOp> op;
    std::string persona;
    std::string mechanism;
};

struct PromptBundle {
    Role role = Role::generator;
    PromptStage stage = PromptStage::baseline;
    std::string text;
    std::string context_digest;
    PromptContext context;
    std::string request_key;  // distinguishes repeated identical prompts within a run
};

inline std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

class PromptCatalog {
public:
    struct Part {
        enum Kind { block, text, slot } kind;
        std::string value;
    };
    struct Composition {
        std::string separator;
        std::vector<Part> parts;
    };

    static PromptCatalog load(const fs::path& dir) {
        PromptCatalog c;
        c.dir_ = dir;
        json m;
        try {
            m = read_json(dir / "manifest.json");
        } catch (const std::exception& e) {
            throw CompositionError(std::string("prompt catalog: ") + e.what());
        }
        c.version_ = m.value("version", "");
        const std::string default_sep = m.value("separator", "\n\n");
        const json fragments = m.value("fragments", json::object());
        for (const auto& [name, target] : fragments.items()) c.fragments_[name] = target.get<std::string>();
        const json selectors = m.value("selectors", json::object());
        for (const auto& [name, values] : selectors.items())
            c.selectors_[name] = values.get<std::vector<std::string>>();
        for (const auto& [key, spec] : m.at("compositions").items()) {
            const auto slash = key.find('/');
            if (slash == std::string::npos) throw CompositionError("bad composition key '" + key + "'");
            Composition comp{spec.value("separator", default_sep), {}};
            for (const auto& p : spec.at("parts")) {
                if (p.contains("block")) comp.parts.push_back({Part::block, p["block"].get<std::string>()});
                else if (p.contains("text")) comp.parts.push_back({Part::text, p["text"].get<std::string>()});
                else if (p.contains("slot")) comp.parts.push_back({Part::slot, p["slot"].get<std::string>()});
                else throw CompositionError("composition '" + key + "' has an empty part");
            }
            c.compositions_[{parse_role(key.substr(0, slash)), parse_prompt_stage(key.substr(slash + 1))}] = std::move(comp);
        }
        // Load every referenced block eagerly so typos fail at startup.
        for (const auto& [k, comp] : c.compositions_)
            for (const auto& p : comp.parts)
                if (p.kind == Part::block)
                    for (const auto& name : c.expand_selectors(p.value)) c.load_block(name);
        for (const auto& [k, name] : c.fragments_) c.load_block(name);
        return c;
    }

    /// Catalog shipped with the library (ECHOMIMIC_PROMPTS_DIR overrides).
    static const PromptCatalog& builtin() {
        static const PromptCatalog c = [] {
            const char* env = std::getenv("ECHOMIMIC_PROMPTS_DIR");
            return load(env && *env ? fs::path(env) : fs::path(ECHOMIMIC_DATA_DIR) / "prompts");
        }();
        return c;
    }

    const std::string& version() const { return version_; }
    bool supports(Role r, PromptStage s) const { return compositions_.count({r, s}) > 0; }
    const std::vector<std::string>& selector_values(const std::string& name) const {
        static const std::vector<std::string> none;
        auto it = selectors_.find(name);
        return it == selectors_.end() ? none : it->second;
    }

    const std::string& block(const std::string& name) const {
        auto it = blocks_.find(name);
        if (it == blocks_.end()) throw CompositionError("unknown prompt block '" + name + "'");
        return it->second;
    }

    /// Fills {{slot}} placeholders. Inserted values are not rescanned.
    std::string render(const std::string& tmpl, const PromptContext& ctx, const std::string& where) const {
        std::string out;
        std::size_t pos = 0;
        while (true) {
            const auto open = tmpl.find("{{", pos);
            if (open == std::string::npos) break;
            const auto close = tmpl.find("}}", open + 2);
            if (close == std::string::npos) break;
            const std::string name = tmpl.substr(open + 2, close - open - 2);
            if (!is_slot_name(name)) {
                out.append(tmpl, pos, open + 2 - pos);
                pos = open + 2;
                continue;
            }
            out.append(tmpl, pos, open - pos);
            if (auto it = ctx.slots.find(name); it != ctx.slots.end()) {
                out += it->second;
            } else if (auto f = fragments_.find(name); f != fragments_.end()) {
                out += render(block(f->second), ctx, where);
            } else {
                throw CompositionError("missing slot '" + name + "' for " + where);
            }
            pos = close + 2;
        }
        out.append(tmpl, pos);
        return out;
    }

    PromptBundle compose(Role role, PromptStage stage, const PromptContext& ctx, const std::string& request_key = "") const {
        const std::string where = std::string(to_string(role)) + "/" + std::string(to_string(stage));
        auto it = compositions_.find({role, stage});
        if (it == compositions_.end()) throw CompositionError("no prompt template for " + where);
        std::string text;
        bool first = true;
        for (const auto& part : it->second.parts) {
            if (!first) text += it->second.separator;
            first = false;
            switch (part.kind) {
                case Part::text: text += part.value; break;
                case Part::slot: {
                    auto s = ctx.slots.find(part.value);
                    if (s == ctx.slots.end()) throw CompositionError("missing slot '" + part.value + "' for " + where);
                    text += s->second;
                    break;
                }
                case Part::block: text += render(block(resolve(part.value, ctx, where)), ctx, where); break;
            }
        }
        PromptBundle b{role, stage, std::move(text), "", ctx, request_key};
        b.context_digest = sha256_hex(where + '\0' + b.text + (request_key.empty() ? "" : '\0' + request_key));
        return b;
    }

private:
    static bool is_slot_name(const std::string& s) {
        if (s.empty()) return false;
        for (char ch : s)
            if (!(std::islower(static_cast<unsigned char>(ch)) || std::isdigit(static_cast<unsigned char>(ch)) || ch == '_'))
                return false;
        return true;
    }

    std::string selector_value(const std::string& sel, const PromptContext& ctx) const {
        if (sel == "op") return ctx.op ? std::string(to_string(*ctx.op)) : std::string();
        if (sel == "persona") return ctx.persona;
        if (sel == "mechanism") return ctx.mechanism;
        throw CompositionError("unknown selector '" + sel + "'");
    }

    std::string resolve(const std::string& name, const PromptContext& ctx, const std::string& where) const {
        const auto open = name.find('{');
        if (open == std::string::npos) return name;
        const auto close = name.find('}', open);
        const std::string sel = name.substr(open + 1, close - open - 1);
        const std::string value = selector_value(sel, ctx);
        if (value.empty()) throw CompositionError("missing slot '" + sel + "' for " + where);
        const auto& allowed = selector_values(sel);
        if (std::find(allowed.begin(), allowed.end(), value) == allowed.end())
            throw CompositionError("unknown " + sel + " '" + value + "' for " + where);
        return name.substr(0, open) + value + name.substr(close + 1);
    }

    std::vector<std::string> expand_selectors(const std::string& name) const {
        const auto open = name.find('{');
        if (open == std::string::npos) return {name};
        const auto close = name.find('}', open);
        std::vector<std::string> out;
        for (const auto& v : selector_values(name.substr(open + 1, close - open - 1)))
            out.push_back(name.substr(0, open) + v + name.substr(close + 1));
        return out;
    }

    void load_block(const std::string& name) {
        if (blocks_.count(name)) return;
        const fs::path p = dir_ / (name + ".txt");
        if (!fs::exists(p)) throw CompositionError("prompt block file missing: " + p.string());
        std::string text = read_text(p);
        if (!text.empty() && text.back() == '\n') text.pop_back();
        blocks_[name] = std::move(text);
    }

    fs::path dir_;
    std::string version_;
    std::map<std::string, std::string> blocks_;
    std::map<std::string, std::string> fragments_;
    std::map<std::string, std::vector<std::string>> selectors_;
    std::map<std::pair<Role, PromptStage>, Composition> compositions_;
};

inline PromptBundle compose_prompt(Role role, PromptStage stage, const PromptContext& ctx,
                                   const std::string& request_key = "") {
    return PromptCatalog::builtin().compose(role, stage, ctx, request_key);
}

// ---------------------------------------------------------------------------
// Slot value rendering

/// Python-literal number: integral values print without a fraction.
inline std::string py_number(double v) {
    if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

inline std::string py_str(std::string_view s) {
    std::string out = "'";
    for (char ch : s) {
        if (ch == '\'' || ch == '\\') out.push_back('\\');
        out.push_back(ch);
    }
    return out + "'";
}

inline std::string crop_prices_repr(const EconomicParams& p) {
    std::string out = "{";
    for (std::size_t i = 0; i < p.crop_prices.size(); ++i) {
        if (i) out += ", ";
        out += py_str(p.crop_prices[i].first) + ": " + py_number(p.crop_prices[i].second);
    }
    return out + "}";
}

inline std::string costs_repr(const EconomicParams& p) {
    auto cost = [](const InterventionCost& c) {
        return "{'implementation': " + py_number(c.implementation) + ", 'maintenance': " + py_number(c.maintenance) + "}";
    };
    return "{'margin': " + cost(p.margin) + ", 'habitat': " + cost(p.habitat) +
           ", 'agriculture': {'maintenance': " + py_number(p.ag_maintenance) + "}}";
}

inline void add_param_slots(PromptContext& ctx, const EconomicParams& p) {
    ctx.slots["crop_prices"] = crop_prices_repr(p);
    ctx.slots["costs"] = costs_repr(p);
    ctx.slots["params_inline"] = "{'crop_prices': " + crop_prices_repr(p) + ", 'costs': " + costs_repr(p) + "}";
}

struct NeighbourExample {
    std::string input;   // compact GeoJSON
    std::string output;  // interventions GeoJSON or direction records
};

inline std::string render_neighbour_examples(const std::vector<NeighbourExample>& ex) {
    std::string out;
    for (std::size_t i = 0; i < ex.size(); ++i)
        out += "Neighbour " + std::to_string(i + 1) + ": input: " + ex[i].input + "  Output: " + ex[i].output + "\n";
    return out;
}

inline std::string render_social_comparison(const std::vector<NeighbourExample>& ex, const std::string& farm_input) {
    return render_neighbour_examples(ex) + "Your farm: input: " + farm_input;
}

inline std::string fitness_label(double f) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", f);
    return buf;
}

/// Leaderboard for the reflect operator, best first.
inline std::string render_top_candidates(const std::vector<std::pair<std::string, double>>& ranked, bool code) {
    std::string out;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        if (i) out += "\n";
        if (code)
            out += "Heuristic " + std::to_string(i + 1) + " (fitness: " + fitness_label(ranked[i].second) +
                   "):\n```python\n" + ranked[i].first + "\n```";
        else
            out += "Message " + std::to_string(i + 1) + " (fitness: " + fitness_label(ranked[i].second) +
                   "): " + ranked[i].first;
    }
    return out;
}

inline std::string render_code_group(const std::vector<std::string>& bodies) {
    std::string out;
    for (std::size_t i = 0; i < bodies.size(); ++i) {
        if (i) out += "\n";
        out += "Program " + std::to_string(i + 1) + ":\n```python\n" + bodies[i] + "\n```\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Extraction

namespace detail {

inline std::string_view trim_view(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline bool is_fence(std::string_view line) { return trim_view(line).substr(0, 3) == "```"; }

inline bool is_closing_fence(std::string_view line) {
    const auto t = trim_view(line);
    return t.size() >= 3 && t.find_first_not_of('`') == std::string_view::npos;
}

}  // namespace detail

/// Contents of the last complete ``` fenced block. A fence left open at the
/// end of the text (a truncated answer) counts as a failure.
inline std::optional<std::string> extract_code(std::string_view raw) {
    std::optional<std::string> last;
    std::optional<std::string> current;
    std::size_t pos = 0;
    while (pos <= raw.size()) {
        auto nl = raw.find('\n', pos);
        if (nl == std::string_view::npos) nl = raw.size();
        const auto line = raw.substr(pos, nl - pos);
        if (!current) {
            if (detail::is_fence(line)) current.emplace();
        } else if (detail::is_closing_fence(line)) {
            last = std::move(*current);
            current.reset();
        } else {
            *current += line;
            *current += '\n';
        }
        pos = nl + 1;
    }
    if (current) return std::nullopt;
    if (last && !last->empty() && last->back() == '\n') last->pop_back();
    return last;
}

inline constexpr std::string_view communication_marker = "\\communication{";

/// Contents of the last outermost \communication{...} block, braces balanced.
inline std::optional<std::string> extract_message(std::string_view raw) {
    std::optional<std::string> last;
    std::size_t pos = 0;
    while ((pos = raw.find(communication_marker, pos)) != std::string_view::npos) {
        const std::size_t start = pos + communication_marker.size();
        int depth = 1;
        std::size_t i = start;
        for (; i < raw.size() && depth > 0; ++i) {
            if (raw[i] == '{') ++depth;
            else if (raw[i] == '}') --depth;
        }
        if (depth != 0) {
            pos = start;  // unbalanced; a later marker may still close
            continue;
        }
        last = std::string(raw.substr(start, i - 1 - start));
        pos = i;
    }
    return last;
}

inline std::string embed_message(std::string_view message) {
    return std::string(communication_marker) + std::string(message) + "}";
}

}  // namespace echomimic
