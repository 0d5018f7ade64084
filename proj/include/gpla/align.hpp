#pragma once

#include <cmath>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gpla/grounding.hpp"
#include "gpla/policy.hpp"

namespace gpla::align {

using tc::Tensor;

struct GplaConfig {
    int n_s = 5;
    int n_i = 100;
    int b = 64;
    float lr = 1e-7f;
    float beta_simpo = 2.0f;
    float gamma_simpo = 0.5f;
    float mix_weight = 0.0f;  // 0 = pure preference loss, 0.1 = regularizer variant
    float temperature = 1.0f;
    float idle_threshold = env::kIdleThreshold;

    void validate() const {
        if (n_s < 2) throw ConfigError("gpla.n_s must be at least 2");
        if (n_i < 0 || b < 1) throw ConfigError("gpla.n_i must be >= 0 and gpla.b >= 1");
        if (lr < 0.0f || !(beta_simpo > 0.0f) || gamma_simpo < 0.0f || mix_weight < 0.0f)
            throw ConfigError("gpla rates must be non-negative and beta_simpo positive");
        if (!(temperature > 0.0f)) throw ConfigError("gpla.temperature must be positive");
        if (idle_threshold < 0.0f) throw ConfigError("gpla.idle_threshold must be non-negative");
    }
};

struct PreferencePair {
    std::vector<int> prompt;
    policy::Candidate chosen;
    policy::Candidate rejected;
    float g_chosen = 0.0f;
    float g_rejected = 0.0f;
};

inline std::optional<PreferencePair> select_pair(const std::vector<policy::Candidate>& candidates,
                                                 const std::vector<float>& scores) {
    if (candidates.size() != scores.size()) throw ContractError("select_pair: candidates/scores length mismatch");
    if (candidates.size() < 2) throw ContractError("select_pair: need at least two candidates");
    std::size_t hi = 0, lo = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[hi]) hi = i;
        if (scores[i] < scores[lo]) lo = i;
    }
    if (candidates[hi].low_level == candidates[lo].low_level) return std::nullopt;
    PreferencePair pair;
    pair.chosen = candidates[hi];
    pair.rejected = candidates[lo];
    pair.g_chosen = scores[hi];
    pair.g_rejected = scores[lo];
    return pair;
}

// Margin arithmetic on plain numbers; the tensor path must agree with this.
inline double simpo_loss_value(double sum_logp_c, int n_c, double sum_logp_r, int n_r, double beta, double gamma) {
    if (n_c <= 0 || n_r <= 0) throw ContractError("simpo: token_count must be positive");
    if (!(beta > 0.0) || gamma < 0.0) throw ContractError("simpo: beta must be > 0 and gamma >= 0");
    const double margin = beta * sum_logp_c / n_c - beta * sum_logp_r / n_r - gamma;
    const double x = -margin;  // softplus(x) = -log sigmoid(margin)
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

// Mean SimPO loss over pairs, differentiable through the LM.
inline Tensor simpo_loss_pairs(const policy::HighLevelLM& lm, const std::vector<PreferencePair>& pairs, float beta,
                               float gamma) {
    if (pairs.empty()) throw ContractError("simpo: empty pair batch");
    if (!(beta > 0.0f) || gamma < 0.0f) throw ContractError("simpo: beta must be > 0 and gamma >= 0");
    const int p = static_cast<int>(pairs.size());
    std::vector<std::vector<int>> prompts, responses;
    std::vector<float> inv_len(static_cast<std::size_t>(2 * p));
    for (int i = 0; i < p; ++i) {
        const PreferencePair& pr = pairs[static_cast<std::size_t>(i)];
        if (pr.chosen.token_count <= 0 || pr.rejected.token_count <= 0)
            throw ContractError("simpo: token_count must be positive");
        prompts.push_back(pr.prompt);
        responses.push_back(pr.chosen.ids);
        inv_len[static_cast<std::size_t>(i)] = beta / static_cast<float>(pr.chosen.token_count);
    }
    for (int i = 0; i < p; ++i) {
        const PreferencePair& pr = pairs[static_cast<std::size_t>(i)];
        prompts.push_back(pr.prompt);
        responses.push_back(pr.rejected.ids);
        inv_len[static_cast<std::size_t>(p + i)] = beta / static_cast<float>(pr.rejected.token_count);
    }
    Tensor scores = lm.score_sequences(prompts, responses);                     // [2p]
    Tensor rewards = tc::mul(scores, Tensor::from(std::move(inv_len), {2 * p}));
    Tensor cols = tc::reshape(rewards, {2 * p, 1});
    Tensor margin = tc::add_scalar(tc::sub(tc::slice_rows(cols, 0, p), tc::slice_rows(cols, p, 2 * p)), -gamma);
    return tc::mean_all(tc::softplus(tc::mul_scalar(margin, -1.0f)));
}

inline Tensor simpo_loss(const PreferencePair& pair, const policy::HighLevelLM& lm, float beta, float gamma) {
    return simpo_loss_pairs(lm, {pair}, beta, gamma);
}

// ---------------------------------------------------------------------------

struct GplaStepStats {
    int step = 0;
    float mean_g_chosen = 0.0f;
    float mean_g_rejected = 0.0f;
    int pairs_used = 0;
    float simpo_loss = 0.0f;
    float ce_loss = 0.0f;
    float total_loss = 0.0f;
};

struct GplaLogs {
    std::ostream* csv = nullptr;    // step,mean_g_chosen,mean_g_rejected,pairs_used,simpo_loss,ce_loss
    std::ostream* pairs = nullptr;  // JSONL audit dump
    std::ostream* warn = nullptr;   // defaults to stderr
};

struct GplaResult {
    std::vector<GplaStepStats> steps;
    bool aborted_non_finite = false;
};

namespace detail {

inline std::vector<env::ActionChunk> chunk_rows(const Tensor& batch) {
    const int n = batch.dim(0), h = batch.dim(1);
    std::vector<env::ActionChunk> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < h; ++t) {
            const float* v = batch.data() + (static_cast<std::size_t>(i) * h + t) * 2;
            out[static_cast<std::size_t>(i)].deltas.push_back({v[0], v[1]});
        }
    return out;
}

// Unit-embedding dot products; rows with empty text score the floor value so
// the pair selector treats ungroundable candidates as worst.
inline std::vector<float> grounding_scores(const ground::GroundingModel& g,
                                           const std::vector<const env::Observation*>& obs,
                                           const std::vector<const env::ActionChunk*>& chunks,
                                           const std::vector<std::string>& texts) {
    tc::NoGradGuard ng;
    std::vector<float> out(texts.size(), -1.0f);
    std::vector<const env::Observation*> obs_k;
    std::vector<const env::ActionChunk*> chunks_k;
    std::vector<std::string> texts_k;
    std::vector<std::size_t> where;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (texts[i].empty()) continue;
        obs_k.push_back(obs[i]);
        chunks_k.push_back(chunks[i]);
        texts_k.push_back(texts[i]);
        where.push_back(i);
    }
    if (where.empty()) return out;
    Tensor va = g.encode_va_batch(obs_k, chunks_k);
    Tensor tx = g.encode_text_batch(texts_k);
    const int d = va.dim(1);
    for (std::size_t k = 0; k < where.size(); ++k) {
        double dot = 0.0;
        for (int j = 0; j < d; ++j)
            dot += static_cast<double>(va.data()[k * static_cast<std::size_t>(d) + j]) *
                   tx.data()[k * static_cast<std::size_t>(d) + j];
        out[where[k]] = static_cast<float>(dot);
    }
    return out;
}

}  // namespace detail

// Algorithm: repeatedly sample (instruction, observation) pairs, generate
// candidate low-level instructions, rank them with the frozen grounding
// model, and push the LM toward the preferred candidate with SimPO. The
// decoder and grounding model stay frozen; with mix_weight > 0 the update
// optimizes cross_entropy + mix_weight * simpo in one backward pass.
inline GplaResult gpla_train(policy::HighLevelLM& lm, const policy::LowLevelDecoder& dec,
                             const ground::GroundingModel& grounding, const std::vector<env::StoredEpisode>& eps,
                             const GplaConfig& cfg, std::uint64_t seed = 0, GplaLogs logs = {}) {
    cfg.validate();
    const text::Tokenizer& tok = text::Tokenizer::standard();
    std::vector<policy::SupWindow> windows = policy::sup_windows(eps, cfg.idle_threshold, dec.config().horizon);
    if (windows.empty()) throw ContractError("gpla_train: dataset has no usable windows");

    optim::AdamConfig acfg;
    acfg.lr = cfg.lr;
    acfg.weight_decay = 0.01f;
    optim::Adam adam(lm.params(), acfg);
    Rng data_rng = Rng(seed).stream("gpla.data");
    Rng sample_rng = Rng(seed).stream("gpla.sample");

    GplaResult result;
    std::vector<float> last_good = optim::snapshot_params(lm.params());
    if (logs.csv) (*logs.csv) << "step,mean_g_chosen,mean_g_rejected,pairs_used,simpo_loss,ce_loss\n";

    for (int step = 0; step < cfg.n_i; ++step) {
        std::vector<env::Observation> obs_store;
        std::vector<std::string> highs, gt_lows;
        obs_store.reserve(static_cast<std::size_t>(cfg.b));
        for (int i = 0; i < cfg.b; ++i) {
            const policy::SupWindow& w = windows[data_rng.below(windows.size())];
            const env::StoredEpisode& ep = eps[static_cast<std::size_t>(w.episode)];
            obs_store.push_back(ep.observation(w.start));
            highs.push_back(ep.high_level);
            gt_lows.push_back(env::segment_of(ep.segments, w.start).low_level);
        }

        std::vector<std::vector<int>> gen_prompts;
        for (int i = 0; i < cfg.b; ++i) {
            std::vector<int> p = policy::build_prompt(highs[static_cast<std::size_t>(i)]);
            for (int j = 0; j < cfg.n_s; ++j) gen_prompts.push_back(p);
        }
        std::vector<policy::SampleResult> draws = lm.sample_batch(gen_prompts, cfg.temperature, sample_rng);

        std::vector<policy::Candidate> cands(draws.size());
        std::vector<const env::Observation*> obs_rows(draws.size());
        std::vector<std::string> texts(draws.size());
        {
            tc::NoGradGuard ng;
            std::vector<std::array<float, 2>> eff_rows(draws.size());
            std::vector<std::string> hl_rows(draws.size());
            for (std::size_t r = 0; r < draws.size(); ++r) {
                const std::size_t i = r / static_cast<std::size_t>(cfg.n_s);
                cands[r].low_level = tok.decode(draws[r].ids);
                cands[r].ids = draws[r].ids;
                cands[r].sum_logprob = draws[r].sum_logprob;
                cands[r].token_count = draws[r].token_count;
                cands[r].truncated = draws[r].truncated;
                obs_rows[r] = &obs_store[i];
                eff_rows[r] = obs_store[i].effector_state;
                hl_rows[r] = highs[i];
                texts[r] = cands[r].low_level;
            }
            std::vector<env::ActionChunk> chunks =
                detail::chunk_rows(dec.decode_batch(obs_rows, eff_rows, hl_rows, texts));
            for (std::size_t r = 0; r < draws.size(); ++r) cands[r].chunk = std::move(chunks[r]);
        }
        std::vector<const env::ActionChunk*> chunk_rows(draws.size());
        for (std::size_t r = 0; r < draws.size(); ++r) chunk_rows[r] = &cands[r].chunk;
        std::vector<float> scores = detail::grounding_scores(grounding, obs_rows, chunk_rows, texts);

        std::vector<PreferencePair> pairs;
        for (int i = 0; i < cfg.b; ++i) {
            const std::size_t base = static_cast<std::size_t>(i) * static_cast<std::size_t>(cfg.n_s);
            std::vector<policy::Candidate> group(cands.begin() + static_cast<std::ptrdiff_t>(base),
                                                 cands.begin() + static_cast<std::ptrdiff_t>(base + cfg.n_s));
            std::vector<float> gscores(scores.begin() + static_cast<std::ptrdiff_t>(base),
                                       scores.begin() + static_cast<std::ptrdiff_t>(base + cfg.n_s));
            std::optional<PreferencePair> pair = select_pair(group, gscores);
            if (!pair) continue;
            pair->prompt = gen_prompts[base];
            pairs.push_back(std::move(*pair));
        }

        GplaStepStats stats;
        stats.step = step;
        stats.pairs_used = static_cast<int>(pairs.size());
        if (pairs.empty()) {
            std::ostream& w = logs.warn ? *logs.warn : std::cerr;
            w << "gpla_train: step " << step << " produced no usable pairs; skipping update\n";
            if (logs.csv) (*logs.csv) << step << ",0,0,0,0,0\n";
            result.steps.push_back(stats);
            continue;
        }

        double sum_c = 0.0, sum_r = 0.0;
        for (const PreferencePair& pr : pairs) {
            sum_c += pr.g_chosen;
            sum_r += pr.g_rejected;
        }
        stats.mean_g_chosen = static_cast<float>(sum_c / static_cast<double>(pairs.size()));
        stats.mean_g_rejected = static_cast<float>(sum_r / static_cast<double>(pairs.size()));

        Tensor simpo = simpo_loss_pairs(lm, pairs, cfg.beta_simpo, cfg.gamma_simpo);
        Tensor total = simpo;
        stats.simpo_loss = simpo.item();
        if (cfg.mix_weight > 0.0f) {
            std::vector<std::vector<int>> ce_prompts, ce_responses;
            for (int i = 0; i < cfg.b; ++i) {
                ce_prompts.push_back(policy::build_prompt(highs[static_cast<std::size_t>(i)]));
                std::vector<int> r = tok.encode(gt_lows[static_cast<std::size_t>(i)]);
                r.push_back(text::Tokenizer::kEos);
                ce_responses.push_back(std::move(r));
            }
            Tensor ce = lm.cross_entropy(ce_prompts, ce_responses);
            stats.ce_loss = ce.item();
            total = tc::add(ce, tc::mul_scalar(simpo, cfg.mix_weight));
        }
        stats.total_loss = total.item();

        bool bad = !std::isfinite(stats.total_loss);
        if (!bad) {
            tc::backward(total);
            try {
                adam.step();
            } catch (const NumericError&) {
                bad = true;
            }
        }
        if (bad) {
            optim::restore_params(lm.params(), last_good);
            result.aborted_non_finite = true;
            break;
        }
        last_good = optim::snapshot_params(lm.params());

        if (logs.csv)
            (*logs.csv) << step << "," << stats.mean_g_chosen << "," << stats.mean_g_rejected << ","
                        << stats.pairs_used << "," << stats.simpo_loss << "," << stats.ce_loss << "\n";
        if (logs.pairs) {
            for (const PreferencePair& pr : pairs) {
                nlohmann::json j{{"prompt", tok.decode(pr.prompt)},
                                 {"chosen", pr.chosen.low_level},
                                 {"rejected", pr.rejected.low_level},
                                 {"g_chosen", pr.g_chosen},
                                 {"g_rejected", pr.g_rejected}};
                (*logs.pairs) << j.dump() << "\n";
            }
        }
        result.steps.push_back(stats);
    }
    return result;
}

}  // namespace gpla::align
