#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "gpla/align.hpp"
#include "gpla/checkpoint.hpp"
#include "gpla/config.hpp"
#include "gpla/evalkit.hpp"

namespace gpla::cli {

namespace fs = std::filesystem;

struct ArtifactInfo {
    std::string path;  // relative to the run root
    std::uint64_t bytes = 0;
    std::string checksum;  // fnv1a-64 of the file bytes, hex
};

struct RunManifest {
    int format_version = 1;
    std::string stage;
    std::string config_hash;
    std::uint64_t seed = 0;
    double wall_clock_seconds = 0.0;
    std::vector<ArtifactInfo> inputs;     // prerequisite files consumed
    std::vector<ArtifactInfo> artifacts;  // every file this stage produced
};

inline std::string file_checksum(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string() + " for checksumming");
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    for (;;) {
        in.read(buf, sizeof(buf));
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            hash ^= static_cast<unsigned char>(buf[i]);
            hash *= 0x100000001b3ULL;
        }
        if (n < static_cast<std::streamsize>(sizeof(buf))) break;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(hash));
    return out;
}

// One stage at a time per output directory; mkdir is the atomic test-and-set.
class LockGuard {
public:
    explicit LockGuard(const fs::path& root) : lock_(root / ".lock") {
        std::error_code ec;
        if (!fs::create_directory(lock_, ec) || ec)
            throw IoError("output directory " + root.string() + " is locked by another run (remove " +
                          lock_.string() + " if stale)");
    }
    ~LockGuard() {
        std::error_code ec;
        fs::remove(lock_, ec);
    }
    LockGuard(const LockGuard&) = delete;
    LockGuard& operator=(const LockGuard&) = delete;

private:
    fs::path lock_;
};

inline const char* stage_dir_name(Stage s) {
    switch (s) {
        case Stage::gen: return "dataset";
        case Stage::train_grounding: return "grounding";
        case Stage::train_sup: return "sup";
        case Stage::gpla_train: return "gpla";
        case Stage::rollout: return "rollouts";
        case Stage::score: return "scores";
        case Stage::embed: return "embeds";
        case Stage::eval: return "reports";
    }
    throw ContractError("stage_dir_name: bad stage");
}

inline ground::GroundingConfig grounding_config(const RunConfig& cfg) {
    ground::GroundingConfig g = cfg.grounding;
    g.horizon = cfg.data.horizon;
    return g;
}

inline policy::PolicyConfig policy_config(const RunConfig& cfg) {
    policy::PolicyConfig p;
    p.d_model = cfg.policy.d_model;
    p.n_heads = cfg.policy.n_heads;
    p.n_blocks = cfg.policy.n_blocks;
    p.horizon = cfg.data.horizon;
    return p;
}

namespace detail {

inline ArtifactInfo describe(const fs::path& root, const fs::path& file) {
    ArtifactInfo a;
    a.path = fs::relative(file, root).generic_string();
    a.bytes = static_cast<std::uint64_t>(fs::file_size(file));
    a.checksum = file_checksum(file);
    return a;
}

inline fs::path need(const fs::path& p, Stage producer) {
    if (!fs::exists(p))
        throw IoError("missing prerequisite " + p.string() + "; run the '" + std::string(stage_name(producer)) +
                      "' stage first");
    return p;
}

inline std::string manifest_json(const RunManifest& m) {
    auto arr = [](const std::vector<ArtifactInfo>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const ArtifactInfo& x : v)
            a.push_back({{"path", x.path}, {"bytes", x.bytes}, {"checksum", x.checksum}});
        return a;
    };
    nlohmann::json j;
    j["format_version"] = m.format_version;
    j["stage"] = m.stage;
    j["config_hash"] = m.config_hash;
    j["seed"] = m.seed;
    j["wall_clock_seconds"] = m.wall_clock_seconds;
    j["inputs"] = arr(m.inputs);
    j["artifacts"] = arr(m.artifacts);
    return j.dump(2) + "\n";
}

inline std::vector<env::StoredEpisode> load_split(const RunConfig& cfg, const fs::path& root,
                                                  const std::string& which) {
    std::vector<env::StoredEpisode> eps = env::load_dataset(root / "dataset");
    const std::array<double, 3> fracs{cfg.data.train_frac, cfg.data.val_frac, cfg.data.test_frac};
    env::SplitIndices idx = env::split_indices(static_cast<int>(eps.size()), fracs, cfg.seed);
    const std::vector<int>* ids = nullptr;
    if (which == "train") ids = &idx.train;
    else if (which == "val") ids = &idx.val;
    else if (which == "test") ids = &idx.test;
    else throw ConfigError("unknown split '" + which + "'");
    std::vector<env::StoredEpisode> out;
    out.reserve(ids->size());
    for (int i : *ids) out.push_back(std::move(eps[static_cast<std::size_t>(i)]));
    return out;
}

struct Window {
    const env::StoredEpisode* ep;
    int start;
};

inline std::vector<Window> windows_of(const std::vector<env::StoredEpisode>& eps, float threshold, int horizon,
                                      int max_rows) {
    std::vector<Window> out;
    for (const env::StoredEpisode& ep : eps)
        for (int t : env::keep_starts(ep.actions, ep.segments, threshold, horizon)) out.push_back({&ep, t});
    if (max_rows > 0 && static_cast<int>(out.size()) > max_rows) out.resize(static_cast<std::size_t>(max_rows));
    return out;
}

}  // namespace detail

inline std::vector<ArtifactInfo> run_gen(const RunConfig& cfg, const fs::path&, const fs::path& dir) {
    Rng rng = Rng(cfg.seed).stream("gen");
    std::vector<env::StoredEpisode> eps;
    eps.reserve(static_cast<std::size_t>(cfg.data.episodes));
    for (int i = 0; i < cfg.data.episodes; ++i) {
        const env::TaskFamily family = cfg.data.family == "all"
                                           ? static_cast<env::TaskFamily>(rng.range_int(0, env::kNumFamilies - 1))
                                           : env::family_from_name(cfg.data.family);
        const std::uint64_t ep_seed = rng.next();
        env::Episode ep = env::generate_episode(ep_seed, family);
        ep.id = i;
        eps.push_back(env::materialize(ep));
    }
    env::save_dataset(dir, eps);
    return {};
}

inline std::vector<ArtifactInfo> run_train_grounding(const RunConfig& cfg, const fs::path& root,
                                                     const fs::path& dir) {
    const fs::path ds = detail::need(root / "dataset" / "manifest.json", Stage::gen);
    std::vector<env::StoredEpisode> train = detail::load_split(cfg, root, "train");

    ground::GroundingModel model(grounding_config(cfg), cfg.seed);
    ground::GroundingTrainOptions opt;
    opt.steps = cfg.ground_train.steps;
    opt.micro_batch = cfg.ground_train.micro_batch;
    opt.accum = cfg.ground_train.accum;
    opt.lr = cfg.ground_train.lr;
    opt.idle_threshold = cfg.data.idle_threshold;
    opt.seed = cfg.seed;
    opt.log_interval = cfg.ground_train.log_interval;
    opt.augment = cfg.ground_train.augment;
    std::ofstream log(dir / "train_log.csv");
    log << "step,loss,retrieval\n";
    opt.log = &log;
    ground::GroundingTrainResult res = ground::train_grounding(model, train, opt);
    log.close();
    if (res.aborted_non_finite)
        std::cerr << "train-grounding: loss went non-finite; checkpoint holds the last finite snapshot\n";
    ckpt::save(dir / "grounding.ckpt", model.params());
    return {detail::describe(root, ds)};
}

inline std::vector<ArtifactInfo> run_train_sup(const RunConfig& cfg, const fs::path& root, const fs::path& dir) {
    const fs::path ds = detail::need(root / "dataset" / "manifest.json", Stage::gen);
    std::vector<env::StoredEpisode> train = detail::load_split(cfg, root, "train");

    policy::HighLevelLM lm(policy_config(cfg), cfg.seed);
    policy::LowLevelDecoder dec(policy_config(cfg), cfg.seed);
    policy::SupTrainOptions opt;
    opt.lm_steps = cfg.policy.lm_steps;
    opt.dec_steps = cfg.policy.dec_steps;
    opt.batch = cfg.policy.batch;
    opt.lr = cfg.policy.lr;
    opt.weight_decay = cfg.policy.weight_decay;
    opt.idle_threshold = cfg.data.idle_threshold;
    opt.seed = cfg.seed;
    opt.log_interval = cfg.policy.log_interval;
    std::ofstream log(dir / "train_log.csv");
    log << "phase,step,loss\n";
    opt.log = &log;
    policy::SupTrainResult res = policy::train_supervised(lm, dec, train, opt);
    log.close();
    if (res.aborted_non_finite)
        std::cerr << "train-sup: loss went non-finite; checkpoints hold the last finite snapshot\n";
    ckpt::save(dir / "lm.ckpt", lm.params());
    ckpt::save(dir / "dec.ckpt", dec.params());
    return {detail::describe(root, ds)};
}

inline std::vector<ArtifactInfo> run_gpla_train(const RunConfig& cfg, const fs::path& root, const fs::path& dir) {
    const fs::path ds = detail::need(root / "dataset" / "manifest.json", Stage::gen);
    const fs::path gck = detail::need(root / "grounding" / "grounding.ckpt", Stage::train_grounding);
    const fs::path lmck = detail::need(root / "sup" / "lm.ckpt", Stage::train_sup);
    const fs::path dck = detail::need(root / "sup" / "dec.ckpt", Stage::train_sup);
    std::vector<env::StoredEpisode> train = detail::load_split(cfg, root, "train");

    ground::GroundingModel grounding(grounding_config(cfg), cfg.seed);
    ckpt::load(gck, grounding.params());
    policy::HighLevelLM lm(policy_config(cfg), cfg.seed);
    ckpt::load(lmck, lm.params());
    policy::LowLevelDecoder dec(policy_config(cfg), cfg.seed);
    ckpt::load(dck, dec.params());

    align::GplaConfig acfg = cfg.gpla;
    acfg.idle_threshold = cfg.data.idle_threshold;
    std::ofstream csv(dir / "train_log.csv");
    std::ofstream pairs(dir / "pairs.jsonl");
    align::GplaLogs logs;
    logs.csv = &csv;
    logs.pairs = &pairs;
    align::GplaResult res = align::gpla_train(lm, dec, grounding, train, acfg, cfg.seed, logs);
    csv.close();
    pairs.close();
    if (res.aborted_non_finite)
        std::cerr << "gpla-train: loss went non-finite; checkpoint holds the last finite snapshot\n";
    ckpt::save(dir / "lm.ckpt", lm.params());
    return {detail::describe(root, ds), detail::describe(root, gck), detail::describe(root, lmck),
            detail::describe(root, dck)};
}

inline std::vector<ArtifactInfo> run_rollout(const RunConfig& cfg, const fs::path& root, const fs::path& dir) {
    const fs::path ds = detail::need(root / "dataset" / "manifest.json", Stage::gen);
    const fs::path dck = detail::need(root / "sup" / "dec.ckpt", Stage::train_sup);
    const bool aligned = cfg.rollout.policy == "gpla";
    const fs::path lmck = aligned ? detail::need(root / "gpla" / "lm.ckpt", Stage::gpla_train)
                                  : detail::need(root / "sup" / "lm.ckpt", Stage::train_sup);
    std::vector<env::StoredEpisode> eps = detail::load_split(cfg, root, cfg.rollout.split);

    policy::HighLevelLM lm(policy_config(cfg), cfg.seed);
    ckpt::load(lmck, lm.params());
    policy::LowLevelDecoder dec(policy_config(cfg), cfg.seed);
    ckpt::load(dck, dec.params());
    const text::Tokenizer& tok = text::Tokenizer::standard();

    std::vector<detail::Window> windows =
        detail::windows_of(eps, cfg.data.idle_threshold, cfg.data.horizon, cfg.rollout.max_rows);
    if (windows.empty()) throw ContractError("rollout: split has no usable windows");

    Rng rng = Rng(cfg.seed).stream("rollout");
    std::ofstream out(dir / "rollout.jsonl");
    const std::size_t block = 32;
    for (std::size_t at = 0; at < windows.size(); at += block) {
        const std::size_t n = std::min(block, windows.size() - at);
        std::vector<std::vector<int>> prompts;
        std::vector<env::Observation> obs;
        obs.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const detail::Window& w = windows[at + i];
            prompts.push_back(policy::build_prompt(w.ep->high_level));
            obs.push_back(w.ep->observation(w.start));
        }
        std::vector<policy::SampleResult> samples =
            lm.sample_batch(prompts, cfg.rollout.temperature, rng, cfg.rollout.greedy);

        std::vector<const env::Observation*> obs_p(n);
        std::vector<std::array<float, 2>> effs(n);
        std::vector<std::string> hls(n), lls(n);
        for (std::size_t i = 0; i < n; ++i) {
            obs_p[i] = &obs[i];
            effs[i] = obs[i].effector_state;
            hls[i] = windows[at + i].ep->high_level;
            lls[i] = tok.decode(samples[i].ids);
        }
        tc::NoGradGuard ng;
        std::vector<env::ActionChunk> chunks = align::detail::chunk_rows(dec.decode_batch(obs_p, effs, hls, lls));

        for (std::size_t i = 0; i < n; ++i) {
            const detail::Window& w = windows[at + i];
            eval::RolloutRow row;
            row.episode_id = w.ep->id;
            row.step = w.start;
            row.high_level = w.ep->high_level;
            row.generated_low_level = lls[i];
            row.chunk = std::move(chunks[i]);
            row.gt_low_level = env::segment_of(w.ep->segments, w.start).low_level;
            row.gt_chunk = env::chunk_at(w.ep->actions, w.start, cfg.data.horizon);
            out << eval::rollout_to_json(row).dump() << "\n";
        }
    }
    out.close();
    return {detail::describe(root, ds), detail::describe(root, dck), detail::describe(root, lmck)};
}

inline std::vector<ArtifactInfo> run_score(const RunConfig& cfg, const fs::path& root, const fs::path& dir) {
    const fs::path ds = detail::need(root / "dataset" / "manifest.json", Stage::gen);
    const fs::path gck = detail::need(root / "grounding" / "grounding.ckpt", Stage::train_grounding);
    std::vector<env::StoredEpisode> eps = detail::load_split(cfg, root, cfg.score.split);

    ground::GroundingModel grounding(grounding_config(cfg), cfg.seed);
    ckpt::load(gck, grounding.params());

    std::vector<detail::Window> windows =
        detail::windows_of(eps, cfg.data.idle_threshold, cfg.data.horizon, cfg.score.max_rows);
    if (windows.empty()) throw ContractError("score: split has no usable windows");

    std::ofstream out(dir / "scores.csv");
    out << "sample_id,score\n";
    const std::size_t block = 64;
    for (std::size_t at = 0; at < windows.size(); at += block) {
        const std::size_t n = std::min(block, windows.size() - at);
        std::vector<env::Observation> obs;
        std::vector<env::ActionChunk> chunks;
        std::vector<std::string> texts;
        obs.reserve(n);
        chunks.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const detail::Window& w = windows[at + i];
            obs.push_back(w.ep->observation(w.start));
            chunks.push_back(env::chunk_at(w.ep->actions, w.start, cfg.data.horizon));
            texts.push_back(env::segment_of(w.ep->segments, w.start).low_level);
        }
        std::vector<const env::Observation*> obs_p(n);
        std::vector<const env::ActionChunk*> chunk_p(n);
        for (std::size_t i = 0; i < n; ++i) {
            obs_p[i] = &obs[i];
            chunk_p[i] = &chunks[i];
        }
        std::vector<float> scores = align::detail::grounding_scores(grounding, obs_p, chunk_p, texts);
        for (std::size_t i = 0; i < n; ++i) {
            const detail::Window& w = windows[at + i];
            char buf[96];
            std::snprintf(buf, sizeof(buf), "%d:%d,%.9g\n", w.ep->id, w.start, static_cast<double>(scores[i]));
            out << buf;
        }
    }
    out.close();
    return {detail::describe(root, ds), detail::describe(root, gck)};
}

inline std::vector<ArtifactInfo> run_embed(const RunConfig& cfg, const fs::path& root, const fs::path& dir) {
    const fs::path ds = detail::need(root / "dataset" / "manifest.json", Stage::gen);
    const fs::path gck = detail::need(root / "grounding" / "grounding.ckpt", Stage::train_grounding);
    std::vector<env::StoredEpisode> eps = detail::load_split(cfg, root, cfg.embed.split);

    ground::GroundingModel grounding(grounding_config(cfg), cfg.seed);
    ckpt::load(gck, grounding.params());

    std::vector<detail::Window> windows =
        detail::windows_of(eps, cfg.data.idle_threshold, cfg.data.horizon, cfg.embed.max_rows);
    if (windows.empty()) throw ContractError("embed: split has no usable windows");

    std::ofstream out(dir / "emb.jsonl");
    std::vector<std::vector<float>> va_rows;
    va_rows.reserve(windows.size());
    for (const detail::Window& w : windows) {
        const env::Observation obs = w.ep->observation(w.start);
        const env::ActionChunk chunk = env::chunk_at(w.ep->actions, w.start, cfg.data.horizon);
        const std::string text = env::segment_of(w.ep->segments, w.start).low_level;
        const std::string id = std::to_string(w.ep->id) + ":" + std::to_string(w.start);
        std::vector<float> va = grounding.encode_va(obs, chunk);
        nlohmann::json jva{{"id", id}, {"modality", "va"}, {"vector", va}};
        nlohmann::json jt{{"id", id}, {"modality", "text"}, {"vector", grounding.encode_text(text)}};
        out << jva.dump() << "\n" << jt.dump() << "\n";
        va_rows.push_back(std::move(va));
    }
    out.close();

    std::vector<std::vector<float>> proj = eval::pca_project(va_rows, 2, cfg.seed);
    std::ofstream pca(dir / "pca.csv");
    pca << "id,x,y\n";
    for (std::size_t i = 0; i < windows.size(); ++i) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%d:%d,%.9g,%.9g\n", windows[i].ep->id, windows[i].start,
                      static_cast<double>(proj[i][0]), static_cast<double>(proj[i][1]));
        pca << buf;
    }
    pca.close();
    return {detail::describe(root, ds), detail::describe(root, gck)};
}

inline std::vector<ArtifactInfo> run_eval(const RunConfig& cfg, const fs::path& root, const fs::path& dir) {
    const fs::path ds = detail::need(root / "dataset" / "manifest.json", Stage::gen);
    const fs::path gck = detail::need(root / "grounding" / "grounding.ckpt", Stage::train_grounding);
    const fs::path rj = detail::need(root / "rollouts" / "rollout.jsonl", Stage::rollout);

    std::vector<env::StoredEpisode> eps = env::load_dataset(root / "dataset");
    ground::GroundingModel grounding(grounding_config(cfg), cfg.seed);
    ckpt::load(gck, grounding.params());
    std::ifstream in(rj);
    std::vector<eval::RolloutRow> rows = eval::parse_rollouts(in);

    eval::Report rep = eval::evaluate_run(rows, eps, grounding, cfg.eval.model);
    std::ofstream out(dir / "report.csv");
    eval::write_report_header(out);
    eval::write_report_row(out, rep);
    out.close();
    return {detail::describe(root, ds), detail::describe(root, gck), detail::describe(root, rj)};
}

// Runs one stage under the output-directory lock, then writes the stage
// manifest listing every produced file with its checksum.
inline RunManifest run_stage(const RunConfig& cfg, Stage stage, const fs::path& out_root) {
    if (const char* env_threads = std::getenv("GPLA_THREADS"); env_threads && *env_threads)
        Eigen::setNbThreads(std::max(1, std::atoi(env_threads)));
    else if (cfg.threads > 0)
        Eigen::setNbThreads(cfg.threads);

    fs::create_directories(out_root);
    LockGuard lock(out_root);
    const fs::path dir = out_root / stage_dir_name(stage);
    fs::remove_all(dir);
    fs::create_directories(dir);

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<ArtifactInfo> inputs;
    switch (stage) {
        case Stage::gen: inputs = run_gen(cfg, out_root, dir); break;
        case Stage::train_grounding: inputs = run_train_grounding(cfg, out_root, dir); break;
        case Stage::train_sup: inputs = run_train_sup(cfg, out_root, dir); break;
        case Stage::gpla_train: inputs = run_gpla_train(cfg, out_root, dir); break;
        case Stage::rollout: inputs = run_rollout(cfg, out_root, dir); break;
        case Stage::score: inputs = run_score(cfg, out_root, dir); break;
        case Stage::embed: inputs = run_embed(cfg, out_root, dir); break;
        case Stage::eval: inputs = run_eval(cfg, out_root, dir); break;
    }

    RunManifest m;
    m.stage = stage_name(stage);
    m.config_hash = config_hash(cfg);
    m.seed = cfg.seed;
    m.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    m.inputs = std::move(inputs);
    for (const fs::directory_entry& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "run_manifest.json")
            m.artifacts.push_back(detail::describe(out_root, e.path()));
    std::sort(m.artifacts.begin(), m.artifacts.end(),
              [](const ArtifactInfo& a, const ArtifactInfo& b) { return a.path < b.path; });
    ckpt::detail::write_atomic(dir / "run_manifest.json", detail::manifest_json(m));
    return m;
}

}  // namespace gpla::cli
