#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "gpla/align.hpp"
#include "gpla/grounding.hpp"

namespace gpla::cli {

enum class Stage { gen, train_grounding, train_sup, gpla_train, rollout, score, embed, eval };

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::gen: return "gen";
        case Stage::train_grounding: return "train-grounding";
        case Stage::train_sup: return "train-sup";
        case Stage::gpla_train: return "gpla-train";
        case Stage::rollout: return "rollout";
        case Stage::score: return "score";
        case Stage::embed: return "embed";
        case Stage::eval: return "eval";
    }
    throw ContractError("stage_name: bad stage");
}

inline Stage stage_from_name(const std::string& s) {
    for (Stage st : {Stage::gen, Stage::train_grounding, Stage::train_sup, Stage::gpla_train, Stage::rollout,
                     Stage::score, Stage::embed, Stage::eval})
        if (s == stage_name(st)) return st;
    throw ConfigError("unknown stage '" + s + "'");
}

struct RunConfig {
    std::uint64_t seed = 0;
    int threads = 0;  // 0 = library default; GPLA_THREADS env overrides

    struct Data {
        int episodes = 100;
        std::string family = "all";  // or one task family name
        float train_frac = 0.8f;
        float val_frac = 0.1f;
        float test_frac = 0.1f;
        float idle_threshold = 0.1f;
        int horizon = 8;
    } data;

    ground::GroundingConfig grounding;
    struct GroundTrain {
        int steps = 50000;
        int micro_batch = 64;
        int accum = 4;
        float lr = 1e-4f;
        bool augment = true;
        int log_interval = 50;
    } ground_train;

    struct Policy {
        int d_model = 64;
        int n_heads = 4;
        int n_blocks = 2;
        int lm_steps = 1500;
        int dec_steps = 15000;
        int batch = 64;
        float lr = 1e-5f;
        float weight_decay = 0.01f;
        int log_interval = 50;
    } policy;

    align::GplaConfig gpla;

    struct Rollout {
        std::string policy = "gpla";  // or "sup"
        std::string split = "test";
        bool greedy = true;
        float temperature = 1.0f;
        int max_rows = 256;
    } rollout;

    struct Eval {
        std::string model = "gpla";
    } eval;

    struct Score {
        std::string split = "test";
        int max_rows = 0;  // 0 = all
    } score;

    struct Embed {
        std::string split = "test";
        int max_rows = 0;
    } embed;
};

namespace detail {

inline long long parse_int(const std::string& key, const std::string& raw) {
    std::size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(raw, &pos);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + raw + "'");
    }
    if (pos != raw.size()) throw ConfigError(key + ": expected an integer, got '" + raw + "'");
    return v;
}

inline double parse_float(const std::string& key, const std::string& raw) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(raw, &pos);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + raw + "'");
    }
    if (pos != raw.size()) throw ConfigError(key + ": expected a number, got '" + raw + "'");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
    if (raw == "true" || raw == "1") return true;
    if (raw == "false" || raw == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + raw + "'");
}

struct KeyHandler {
    std::string key;
    std::function<void(RunConfig&, const std::string&)> apply;
    std::function<std::string(const RunConfig&)> show;
};

inline std::string show_float(float v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

inline const std::vector<KeyHandler>& key_handlers() {
    static const std::vector<KeyHandler> handlers = [] {
        std::vector<KeyHandler> h;
        auto add_int = [&h](const std::string& key, std::function<int&(RunConfig&)> ref, long long lo, long long hi) {
            h.push_back({key,
                         [key, ref, lo, hi](RunConfig& c, const std::string& raw) {
                             const long long v = parse_int(key, raw);
                             if (v < lo || v > hi)
                                 throw ConfigError(key + ": value " + raw + " outside [" + std::to_string(lo) + ", " +
                                                   std::to_string(hi) + "]");
                             ref(c) = static_cast<int>(v);
                         },
                         [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }});
        };
        auto add_float = [&h](const std::string& key, std::function<float&(RunConfig&)> ref, double lo, double hi) {
            h.push_back({key,
                         [key, ref, lo, hi](RunConfig& c, const std::string& raw) {
                             const double v = parse_float(key, raw);
                             if (!(v >= lo && v <= hi))
                                 throw ConfigError(key + ": value " + raw + " outside [" + std::to_string(lo) + ", " +
                                                   std::to_string(hi) + "]");
                             ref(c) = static_cast<float>(v);
                         },
                         [ref](const RunConfig& c) { return show_float(ref(const_cast<RunConfig&>(c))); }});
        };
        auto add_bool = [&h](const std::string& key, std::function<bool&(RunConfig&)> ref) {
            h.push_back({key,
                         [key, ref](RunConfig& c, const std::string& raw) { ref(c) = parse_bool(key, raw); },
                         [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)) ? "true" : "false"; }});
        };
        auto add_str = [&h](const std::string& key, std::function<std::string&(RunConfig&)> ref,
                            std::vector<std::string> allowed) {
            h.push_back({key,
                         [key, ref, allowed](RunConfig& c, const std::string& raw) {
                             if (!allowed.empty()) {
                                 bool ok = false;
                                 for (const std::string& a : allowed) ok = ok || a == raw;
                                 if (!ok) throw ConfigError(key + ": value '" + raw + "' is not allowed");
                             }
                             ref(c) = raw;
                         },
                         [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); }});
        };

        h.push_back({"seed",
                     [](RunConfig& c, const std::string& raw) {
                         const long long v = parse_int("seed", raw);
                         if (v < 0) throw ConfigError("seed: must be non-negative");
                         c.seed = static_cast<std::uint64_t>(v);
                     },
                     [](const RunConfig& c) { return std::to_string(c.seed); }});
        add_int("threads", [](RunConfig& c) -> int& { return c.threads; }, 0, 1024);

        add_int("data.episodes", [](RunConfig& c) -> int& { return c.data.episodes; }, 3, 1000000);
        add_str("data.family", [](RunConfig& c) -> std::string& { return c.data.family; },
                {"all", "line_vertical", "line_horizontal", "corner_gather", "center_gather", "shape_parallelogram"});
        add_float("data.train_frac", [](RunConfig& c) -> float& { return c.data.train_frac; }, 1e-6, 1.0);
        add_float("data.val_frac", [](RunConfig& c) -> float& { return c.data.val_frac; }, 1e-6, 1.0);
        add_float("data.test_frac", [](RunConfig& c) -> float& { return c.data.test_frac; }, 1e-6, 1.0);
        add_float("data.idle_threshold", [](RunConfig& c) -> float& { return c.data.idle_threshold; }, 1e-9, 10.0);
        add_int("data.horizon", [](RunConfig& c) -> int& { return c.data.horizon; }, 1, 64);

        add_int("grounding.d_model", [](RunConfig& c) -> int& { return c.grounding.d_model; }, 8, 1024);
        add_int("grounding.n_heads", [](RunConfig& c) -> int& { return c.grounding.n_heads; }, 1, 32);
        add_int("grounding.n_blocks", [](RunConfig& c) -> int& { return c.grounding.n_blocks; }, 1, 16);
        add_int("grounding.n_film_layers", [](RunConfig& c) -> int& { return c.grounding.n_film_layers; }, 1, 16);
        add_float("grounding.initial_logit_scale",
                  [](RunConfig& c) -> float& { return c.grounding.initial_logit_scale; }, 1e-6, 100.0);
        add_float("grounding.gamma_div", [](RunConfig& c) -> float& { return c.grounding.gamma_div; }, 0.0, 100.0);
        add_int("grounding.steps", [](RunConfig& c) -> int& { return c.ground_train.steps; }, 0, 10000000);
        add_int("grounding.micro_batch", [](RunConfig& c) -> int& { return c.ground_train.micro_batch; }, 2, 4096);
        add_int("grounding.accum", [](RunConfig& c) -> int& { return c.ground_train.accum; }, 1, 1024);
        add_float("grounding.lr", [](RunConfig& c) -> float& { return c.ground_train.lr; }, 0.0, 10.0);
        add_bool("grounding.augment", [](RunConfig& c) -> bool& { return c.ground_train.augment; });
        add_int("grounding.log_interval", [](RunConfig& c) -> int& { return c.ground_train.log_interval; }, 1,
                1000000);

        add_int("policy.d_model", [](RunConfig& c) -> int& { return c.policy.d_model; }, 8, 1024);
        add_int("policy.n_heads", [](RunConfig& c) -> int& { return c.policy.n_heads; }, 1, 32);
        add_int("policy.n_blocks", [](RunConfig& c) -> int& { return c.policy.n_blocks; }, 1, 16);
        add_int("policy.lm_steps", [](RunConfig& c) -> int& { return c.policy.lm_steps; }, 0, 10000000);
        add_int("policy.dec_steps", [](RunConfig& c) -> int& { return c.policy.dec_steps; }, 0, 10000000);
        add_int("policy.batch", [](RunConfig& c) -> int& { return c.policy.batch; }, 1, 4096);
        add_float("policy.lr", [](RunConfig& c) -> float& { return c.policy.lr; }, 0.0, 10.0);
        add_float("policy.weight_decay", [](RunConfig& c) -> float& { return c.policy.weight_decay; }, 0.0, 1.0);
        add_int("policy.log_interval", [](RunConfig& c) -> int& { return c.policy.log_interval; }, 1, 1000000);

        add_int("gpla.n_s", [](RunConfig& c) -> int& { return c.gpla.n_s; }, 2, 256);
        add_int("gpla.n_i", [](RunConfig& c) -> int& { return c.gpla.n_i; }, 0, 10000000);
        add_int("gpla.b", [](RunConfig& c) -> int& { return c.gpla.b; }, 1, 4096);
        add_float("gpla.lr", [](RunConfig& c) -> float& { return c.gpla.lr; }, 0.0, 10.0);
        add_float("gpla.beta_simpo", [](RunConfig& c) -> float& { return c.gpla.beta_simpo; }, 1e-9, 1000.0);
        add_float("gpla.gamma_simpo", [](RunConfig& c) -> float& { return c.gpla.gamma_simpo; }, 0.0, 1000.0);
        add_float("gpla.mix_weight", [](RunConfig& c) -> float& { return c.gpla.mix_weight; }, 0.0, 1000.0);
        add_float("gpla.temperature", [](RunConfig& c) -> float& { return c.gpla.temperature; }, 1e-6, 100.0);

        add_str("rollout.policy", [](RunConfig& c) -> std::string& { return c.rollout.policy; }, {"gpla", "sup"});
        add_str("rollout.split", [](RunConfig& c) -> std::string& { return c.rollout.split; },
                {"train", "val", "test"});
        add_bool("rollout.greedy", [](RunConfig& c) -> bool& { return c.rollout.greedy; });
        add_float("rollout.temperature", [](RunConfig& c) -> float& { return c.rollout.temperature; }, 1e-6, 100.0);
        add_int("rollout.max_rows", [](RunConfig& c) -> int& { return c.rollout.max_rows; }, 1, 10000000);

        add_str("eval.model", [](RunConfig& c) -> std::string& { return c.eval.model; }, {});

        add_str("score.split", [](RunConfig& c) -> std::string& { return c.score.split; }, {"train", "val", "test"});
        add_int("score.max_rows", [](RunConfig& c) -> int& { return c.score.max_rows; }, 0, 10000000);
        add_str("embed.split", [](RunConfig& c) -> std::string& { return c.embed.split; }, {"train", "val", "test"});
        add_int("embed.max_rows", [](RunConfig& c) -> int& { return c.embed.max_rows; }, 0, 10000000);
        return h;
    }();
    return handlers;
}

}  // namespace detail

// Key-value config: one `key = value` per line, # comments. Unknown keys are
// hard errors; missing keys take defaults, each logged with its provenance.
inline RunConfig load_config_text(const std::string& text, std::ostream* provenance = nullptr) {
    struct Entry {
        std::string value;
        int line;
        bool used = false;
    };
    std::map<std::string, Entry> entries;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto strip = [](std::string s) {
            const std::size_t a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const std::size_t b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        line = strip(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = strip(line.substr(0, eq));
        const std::string value = strip(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        if (entries.count(key))
            throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        entries[key] = {value, line_no};
    }

    RunConfig cfg;
    for (const detail::KeyHandler& h : detail::key_handlers()) {
        auto it = entries.find(h.key);
        if (it == entries.end()) {
            if (provenance) (*provenance) << "config: " << h.key << " = " << h.show(cfg) << " (default)\n";
            continue;
        }
        it->second.used = true;
        h.apply(cfg, it->second.value);
        if (provenance)
            (*provenance) << "config: " << h.key << " = " << h.show(cfg) << " (file line " << it->second.line
                          << ")\n";
    }
    for (const auto& [key, entry] : entries)
        if (!entry.used) throw ConfigError("config line " + std::to_string(entry.line) + ": unknown key '" + key + "'");
    return cfg;
}

inline RunConfig load_config(const std::string& path, std::ostream* provenance = nullptr) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return load_config_text(buf.str(), provenance);
}

inline std::string canonical_config(const RunConfig& cfg) {
    std::ostringstream os;
    for (const detail::KeyHandler& h : detail::key_handlers()) os << h.key << " = " << h.show(cfg) << "\n";
    return os.str();
}

inline std::string config_hash(const RunConfig& cfg) {
    const std::string dump = canonical_config(cfg);
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : dump) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

}  // namespace gpla::cli
