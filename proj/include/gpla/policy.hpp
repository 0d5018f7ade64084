#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "gpla/dataset.hpp"
#include "gpla/nn.hpp"
#include "gpla/optim.hpp"
#include "gpla/synthenv.hpp"
#include "gpla/tokenizer.hpp"

namespace gpla::policy {

using nn::ParamRegistry;
using tc::Tensor;

struct PolicyConfig {
    int d_model = 64;
    int n_heads = 4;
    int n_blocks = 2;
    int horizon = 8;
    int patch_size = 8;
    int image_side = 64;
    int max_gen = 24;   // response cap, <eos> included
    int max_seq = 64;   // prompt + response cap
    int max_text = 48;  // decoder instruction-condition cap
    float delta_max = 0.2f;

    void validate() const {
        if (d_model <= 0 || n_heads <= 0 || n_blocks <= 0 || horizon <= 0 || max_gen <= 0 || max_seq <= 0 ||
            max_text <= 0 || delta_max <= 0)
            throw ConfigError("policy config fields must be positive");
        if (d_model % n_heads != 0) throw ConfigError("n_heads must divide d_model");
        if (image_side % patch_size != 0) throw ConfigError("patch_size must divide image side");
    }
    int n_patches() const { return (image_side / patch_size) * (image_side / patch_size); }
    int patch_dim() const { return patch_size * patch_size * 3; }
};

inline std::string build_prompt_text(const std::string& high_level) {
    if (high_level.empty()) throw ContractError("build_prompt: empty high-level instruction");
    return "System: You are controlling a robotic agent. Your task is to " + high_level +
           ".\nUser: What should the robot do next?\nAnswer:";
}

inline std::vector<int> build_prompt(const std::string& high_level) {
    const text::Tokenizer& tok = text::Tokenizer::standard();
    std::vector<int> ids = {text::Tokenizer::kBos};
    for (int id : tok.encode(build_prompt_text(high_level))) ids.push_back(id);
    return ids;
}

struct SampleResult {
    std::vector<int> ids;  // response tokens, <eos> included when reached
    float sum_logprob = 0.0f;
    int token_count = 0;
    bool truncated = false;
};

class HighLevelLM {
public:
    HighLevelLM(const PolicyConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        const text::Tokenizer& tok = text::Tokenizer::standard();
        vocab_ = tok.vocab_size();
        Rng rng = Rng(seed).stream("hl_lm");
        const int d = cfg_.d_model;
        emb_ = nn::Embedding(reg_, rng, "hl.emb", vocab_, d);
        pos_ = nn::init::normal(reg_, rng, "hl.pos", {cfg_.max_seq, d}, 0.02f);
        for (int i = 0; i < cfg_.n_blocks; ++i)
            blocks_.emplace_back(reg_, rng, "hl.block" + std::to_string(i), d, cfg_.n_heads);
        ln_f_ = nn::LayerNorm(reg_, "hl.ln_f", d);
        head_ = nn::Linear(reg_, rng, "hl.head", d, vocab_);
    }

    const PolicyConfig& config() const { return cfg_; }
    int vocab_size() const { return vocab_; }
    ParamRegistry& params() { return reg_; }
    const ParamRegistry& params() const { return reg_; }

    // Causal logits over a padded id matrix.
    Tensor forward(const std::vector<int>& flat_ids, int b, int s, const std::vector<int>& lengths) const {
        if (s > cfg_.max_seq) throw DimensionError("sequence exceeds max_seq");
        Tensor x = emb_(flat_ids, {b, s});
        x = tc::add(x, tc::slice_rows(pos_, 0, s));
        for (const auto& blk : blocks_) x = blk(x, lengths, true);
        return head_(ln_f_(x));  // [b, s, vocab]
    }

    // Teacher-forced sum of response-token log-probabilities, one scalar per
    // row; differentiable through the LM (SimPO's log pi(y|x)).
    Tensor score_sequences(const std::vector<std::vector<int>>& prompts,
                           const std::vector<std::vector<int>>& responses) const {
        const std::size_t b = prompts.size();
        if (b == 0 || responses.size() != b) throw ContractError("score_sequences: batch mismatch");
        int s = 0;
        std::vector<int> lengths;
        for (std::size_t i = 0; i < b; ++i) {
            if (responses[i].empty()) throw ContractError("score_sequences: empty response");
            const int len = static_cast<int>(prompts[i].size() + responses[i].size());
            lengths.push_back(len);
            s = std::max(s, len);
        }
        std::vector<int> flat(b * static_cast<std::size_t>(s), text::Tokenizer::kPad);
        std::vector<int> targets(b * static_cast<std::size_t>(s), 0);
        std::vector<float> mask(b * static_cast<std::size_t>(s), 0.0f);
        for (std::size_t i = 0; i < b; ++i) {
            std::vector<int> row = prompts[i];
            row.insert(row.end(), responses[i].begin(), responses[i].end());
            for (std::size_t t = 0; t < row.size(); ++t) flat[i * static_cast<std::size_t>(s) + t] = row[t];
            const std::size_t p = prompts[i].size();
            for (std::size_t t = p; t < row.size(); ++t) {
                // position t-1 predicts token t
                targets[i * static_cast<std::size_t>(s) + t - 1] = row[t];
                mask[i * static_cast<std::size_t>(s) + t - 1] = 1.0f;
            }
        }
        Tensor logits = forward(flat, static_cast<int>(b), s, lengths);
        Tensor logp = tc::log_softmax(tc::reshape(logits, {static_cast<int>(b) * s, vocab_}));
        Tensor picks = tc::reshape(tc::take_per_row(logp, targets), {static_cast<int>(b), s});
        return tc::sum_rows_masked(picks, mask);  // [b]
    }

    // Mean next-token cross-entropy over response positions.
    Tensor cross_entropy(const std::vector<std::vector<int>>& prompts,
                         const std::vector<std::vector<int>>& responses) const {
        const std::size_t b = prompts.size();
        if (b == 0 || responses.size() != b) throw ContractError("cross_entropy: batch mismatch");
        int s = 0;
        std::vector<int> lengths;
        for (std::size_t i = 0; i < b; ++i) {
            const int len = static_cast<int>(prompts[i].size() + responses[i].size());
            lengths.push_back(len);
            s = std::max(s, len);
        }
        std::vector<int> flat(b * static_cast<std::size_t>(s), text::Tokenizer::kPad);
        std::vector<int> targets(b * static_cast<std::size_t>(s), 0);
        std::vector<float> mask(b * static_cast<std::size_t>(s), 0.0f);
        for (std::size_t i = 0; i < b; ++i) {
            std::vector<int> row = prompts[i];
            row.insert(row.end(), responses[i].begin(), responses[i].end());
            for (std::size_t t = 0; t < row.size(); ++t) flat[i * static_cast<std::size_t>(s) + t] = row[t];
            for (std::size_t t = prompts[i].size(); t < row.size(); ++t) {
                targets[i * static_cast<std::size_t>(s) + t - 1] = row[t];
                mask[i * static_cast<std::size_t>(s) + t - 1] = 1.0f;
            }
        }
        Tensor logits = forward(flat, static_cast<int>(b), s, lengths);
        Tensor logp = tc::log_softmax(tc::reshape(logits, {static_cast<int>(b) * s, vocab_}));
        Tensor picks = tc::take_per_row(logp, targets);
        return tc::mul_scalar(tc::masked_mean_vec(picks, mask), -1.0f);
    }

    SampleResult sample(const std::vector<int>& prompt, float temperature, Rng& rng, bool greedy = false) const {
        std::vector<SampleResult> out = sample_batch({prompt}, temperature, rng, greedy);
        return out.front();
    }

    // Samples all rows in lockstep; rows that have emitted <eos> stop
    // consuming randomness so each row's draw sequence is position-stable.
    std::vector<SampleResult> sample_batch(const std::vector<std::vector<int>>& prompts, float temperature,
                                           Rng& rng, bool greedy = false) const {
        if (!greedy && temperature <= 0.0f) throw ContractError("sample: temperature must be positive");
        tc::NoGradGuard ng;
        const std::size_t b = prompts.size();
        std::vector<SampleResult> results(b);
        std::vector<bool> done(b, false);
        std::vector<std::vector<int>> rows = prompts;
        for (int step = 0; step < cfg_.max_gen; ++step) {
            int s = 0;
            std::vector<int> lengths;
            for (const auto& r : rows) {
                lengths.push_back(static_cast<int>(r.size()));
                s = std::max(s, static_cast<int>(r.size()));
            }
            std::vector<int> flat(b * static_cast<std::size_t>(s), text::Tokenizer::kPad);
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t t = 0; t < rows[i].size(); ++t) flat[i * static_cast<std::size_t>(s) + t] = rows[i][t];
            Tensor logits = forward(flat, static_cast<int>(b), s, lengths);
            for (std::size_t i = 0; i < b; ++i) {
                if (done[i]) continue;
                const float* row =
                    logits.data() + (i * static_cast<std::size_t>(s) + rows[i].size() - 1) * vocab_;
                int pick;
                if (greedy) {
                    pick = 0;
                    for (int v = 1; v < vocab_; ++v)
                        if (row[v] > row[pick]) pick = v;
                } else {
                    double mx = row[0];
                    for (int v = 1; v < vocab_; ++v) mx = std::max(mx, static_cast<double>(row[v]));
                    std::vector<double> p(static_cast<std::size_t>(vocab_));
                    double z = 0.0;
                    for (int v = 0; v < vocab_; ++v) {
                        p[static_cast<std::size_t>(v)] = std::exp((row[v] - mx) / temperature);
                        z += p[static_cast<std::size_t>(v)];
                    }
                    double u = rng.uniform() * z;
                    pick = vocab_ - 1;
                    for (int v = 0; v < vocab_; ++v) {
                        u -= p[static_cast<std::size_t>(v)];
                        if (u <= 0.0) {
                            pick = v;
                            break;
                        }
                    }
                }
                // unscaled log-probability of the pick
                double mx = row[0];
                for (int v = 1; v < vocab_; ++v) mx = std::max(mx, static_cast<double>(row[v]));
                double z = 0.0;
                for (int v = 0; v < vocab_; ++v) z += std::exp(row[v] - mx);
                results[i].sum_logprob += static_cast<float>(row[pick] - mx - std::log(z));
                results[i].ids.push_back(pick);
                results[i].token_count += 1;
                rows[i].push_back(pick);
                if (pick == text::Tokenizer::kEos) done[i] = true;
                if (static_cast<int>(rows[i].size()) >= cfg_.max_seq) done[i] = true;
            }
            bool all = true;
            for (std::size_t i = 0; i < b; ++i) all = all && done[i];
            if (all) break;
        }
        for (std::size_t i = 0; i < b; ++i)
            if (results[i].ids.empty() || results[i].ids.back() != text::Tokenizer::kEos)
                results[i].truncated = true;
        return results;
    }

private:
    PolicyConfig cfg_;
    int vocab_ = 0;
    ParamRegistry reg_;
    nn::Embedding emb_;
    Tensor pos_;
    std::vector<nn::TransformerBlock> blocks_;
    nn::LayerNorm ln_f_;
    nn::Linear head_;
};

struct Candidate {
    std::string low_level;
    std::vector<int> ids;  // sampled tokens, kept for teacher-forced re-scoring
    env::ActionChunk chunk;
    float sum_logprob = 0.0f;
    int token_count = 0;
    bool truncated = false;
};

inline SampleResult sample_low_level(const HighLevelLM& lm, const std::vector<int>& prompt, float temperature,
                                     Rng& rng, bool greedy = false) {
    return lm.sample(prompt, temperature, rng, greedy);
}

// ---------------------------------------------------------------------------

class LowLevelDecoder {
public:
    LowLevelDecoder(const PolicyConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        const text::Tokenizer& tok = text::Tokenizer::standard();
        Rng rng = Rng(seed).stream("ll_dec");
        const int d = cfg_.d_model;
        patch_embed_ = nn::Linear(reg_, rng, "ll.patch", cfg_.patch_dim(), d);
        eff_embed_ = nn::Linear(reg_, rng, "ll.eff", 2, d);
        emb_ = nn::Embedding(reg_, rng, "ll.emb", tok.vocab_size(), d);
        pos_ = nn::init::normal(reg_, rng, "ll.pos", {cfg_.n_patches() + 1 + cfg_.max_text, d}, 0.02f);
        for (int i = 0; i < cfg_.n_blocks; ++i)
            blocks_.emplace_back(reg_, rng, "ll.block" + std::to_string(i), d, cfg_.n_heads);
        ln_f_ = nn::LayerNorm(reg_, "ll.ln_f", d);
        // small head init keeps first predictions inside the clamp band so
        // gradients flow from step one
        head_w_ = nn::init::normal(reg_, rng, "ll.head.w", {d, cfg_.horizon * 2}, 0.01f);
        head_b_ = nn::init::constant(reg_, "ll.head.b", {cfg_.horizon * 2}, 0.0f);
    }

    const PolicyConfig& config() const { return cfg_; }
    ParamRegistry& params() { return reg_; }
    const ParamRegistry& params() const { return reg_; }

    std::vector<int> condition_ids(const std::string& high_level, const std::string& low_level) const {
        const text::Tokenizer& tok = text::Tokenizer::standard();
        std::vector<int> ids = tok.encode(high_level);
        ids.push_back(text::Tokenizer::kSep);
        for (int id : tok.encode(low_level)) ids.push_back(id);
        if (static_cast<int>(ids.size()) > cfg_.max_text) ids.resize(static_cast<std::size_t>(cfg_.max_text));
        return ids;
    }

    // [B, horizon, 2] clamped deltas; differentiable.
    Tensor decode_batch(const std::vector<const env::Observation*>& obs,
                        const std::vector<std::array<float, 2>>& effectors,
                        const std::vector<std::string>& high_levels,
                        const std::vector<std::string>& low_levels) const {
        const std::size_t b = obs.size();
        if (b == 0 || effectors.size() != b || high_levels.size() != b || low_levels.size() != b)
            throw DimensionError("decode_batch: batch size mismatch");
        const int np = cfg_.n_patches(), pd = cfg_.patch_dim(), side = cfg_.image_side, ps = cfg_.patch_size;
        const int grid = side / ps;
        std::vector<float> patches(b * static_cast<std::size_t>(np) * pd);
        for (std::size_t i = 0; i < b; ++i) {
            if (obs[i]->h != side || obs[i]->w != side)
                throw DimensionError("observation resolution does not match policy config");
            float* dst = patches.data() + i * static_cast<std::size_t>(np) * pd;
            for (int gy = 0; gy < grid; ++gy)
                for (int gx = 0; gx < grid; ++gx) {
                    float* patch = dst + (static_cast<std::size_t>(gy) * grid + gx) * pd;
                    for (int py = 0; py < ps; ++py)
                        for (int px = 0; px < ps; ++px) {
                            const std::size_t src =
                                ((static_cast<std::size_t>(gy * ps + py)) * side + gx * ps + px) * 3;
                            const std::size_t di = (static_cast<std::size_t>(py) * ps + px) * 3;
                            patch[di] = obs[i]->image[src];
                            patch[di + 1] = obs[i]->image[src + 1];
                            patch[di + 2] = obs[i]->image[src + 2];
                        }
                }
        }
        Tensor vis = patch_embed_(Tensor::from(std::move(patches), {static_cast<int>(b), np, pd}));

        std::vector<float> eff(b * 2);
        for (std::size_t i = 0; i < b; ++i) {
            eff[i * 2] = effectors[i][0];
            eff[i * 2 + 1] = effectors[i][1];
        }
        Tensor eff_tok = eff_embed_(Tensor::from(std::move(eff), {static_cast<int>(b), 1, 2}));

        std::vector<std::vector<int>> cond;
        int max_t = 1;
        for (std::size_t i = 0; i < b; ++i) {
            cond.push_back(condition_ids(high_levels[i], low_levels[i]));
            max_t = std::max(max_t, static_cast<int>(cond.back().size()));
        }
        std::vector<int> flat(b * static_cast<std::size_t>(max_t), text::Tokenizer::kPad);
        std::vector<int> lengths;
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t t = 0; t < cond[i].size(); ++t) flat[i * static_cast<std::size_t>(max_t) + t] = cond[i][t];
            lengths.push_back(np + 1 + static_cast<int>(cond[i].size()));
        }
        Tensor txt = emb_(flat, {static_cast<int>(b), max_t});

        Tensor x = tc::concat_seq({vis, eff_tok, txt});
        x = tc::add(x, tc::slice_rows(pos_, 0, x.dim(1)));
        for (const auto& blk : blocks_) x = blk(x, lengths, false);
        Tensor pooled = ln_f_(tc::masked_mean_rows(x, lengths));
        Tensor out = tc::add(tc::matmul(pooled, head_w_), head_b_);
        out = tc::clamp(out, -cfg_.delta_max, cfg_.delta_max);
        return tc::reshape(out, {static_cast<int>(b), cfg_.horizon, 2});
    }

    env::ActionChunk decode_chunk(const env::Observation& obs, const std::array<float, 2>& effector,
                                  const std::string& high_level, const std::string& low_level) const {
        tc::NoGradGuard ng;
        Tensor out = decode_batch({&obs}, {effector}, {high_level}, {low_level});
        env::ActionChunk chunk;
        for (int t = 0; t < cfg_.horizon; ++t)
            chunk.deltas.push_back({out.data()[t * 2], out.data()[t * 2 + 1]});
        return chunk;
    }

private:
    PolicyConfig cfg_;
    ParamRegistry reg_;
    nn::Linear patch_embed_, eff_embed_;
    nn::Embedding emb_;
    Tensor pos_;
    std::vector<nn::TransformerBlock> blocks_;
    nn::LayerNorm ln_f_;
    Tensor head_w_, head_b_;
};

// ---------------------------------------------------------------------------
// Supervised pretraining of both policy halves.

struct SupTrainOptions {
    int lm_steps = 1500;
    int dec_steps = 15000;
    int batch = 64;
    float lr = 1e-5f;
    float weight_decay = 0.01f;
    float idle_threshold = env::kIdleThreshold;
    std::uint64_t seed = 0;
    int log_interval = 50;
    std::ostream* log = nullptr;  // CSV: phase,step,loss
};

struct SupTrainResult {
    std::vector<float> lm_losses;
    std::vector<float> dec_losses;
    bool aborted_non_finite = false;
};

struct SupWindow {
    int episode;
    int start;
};

inline std::vector<SupWindow> sup_windows(const std::vector<env::StoredEpisode>& eps,
                                          float idle_threshold = env::kIdleThreshold,
                                          int horizon = env::kHorizon) {
    std::vector<SupWindow> w;
    for (std::size_t e = 0; e < eps.size(); ++e)
        for (int t : env::keep_starts(eps[e].actions, eps[e].segments, idle_threshold, horizon))
            w.push_back({static_cast<int>(e), t});
    return w;
}

inline SupTrainResult train_supervised(HighLevelLM& lm, LowLevelDecoder& dec,
                                       const std::vector<env::StoredEpisode>& eps, const SupTrainOptions& opt) {
    const text::Tokenizer& tok = text::Tokenizer::standard();
    std::vector<SupWindow> windows = sup_windows(eps, opt.idle_threshold, dec.config().horizon);
    if (windows.empty()) throw ContractError("train_supervised: dataset has no usable windows");
    SupTrainResult result;

    optim::AdamConfig acfg;
    acfg.lr = opt.lr;
    acfg.weight_decay = opt.weight_decay;

    {  // phase 1: next-token cross-entropy on (prompt, low_level)
        optim::Adam adam(lm.params(), acfg);
        Rng rng = Rng(opt.seed).stream("sup.lm");
        std::vector<float> last_good = optim::snapshot_params(lm.params());
        for (int step = 0; step < opt.lm_steps; ++step) {
            std::vector<std::vector<int>> prompts, responses;
            for (int i = 0; i < opt.batch; ++i) {
                const SupWindow& w = windows[rng.below(windows.size())];
                const env::StoredEpisode& ep = eps[static_cast<std::size_t>(w.episode)];
                prompts.push_back(build_prompt(ep.high_level));
                std::vector<int> resp = tok.encode(env::segment_of(ep.segments, w.start).low_level);
                resp.push_back(text::Tokenizer::kEos);
                responses.push_back(std::move(resp));
            }
            Tensor loss = lm.cross_entropy(prompts, responses);
            bool bad = !std::isfinite(loss.item());
            if (!bad) {
                tc::backward(loss);
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
            result.lm_losses.push_back(loss.item());
            if ((step + 1) % opt.log_interval == 0 || step + 1 == opt.lm_steps) {
                last_good = optim::snapshot_params(lm.params());
                if (opt.log) (*opt.log) << "lm," << step << "," << loss.item() << "\n";
            }
        }
    }

    {  // phase 2: MSE chunk regression
        optim::Adam adam(dec.params(), acfg);
        Rng rng = Rng(opt.seed).stream("sup.dec");
        std::vector<float> last_good = optim::snapshot_params(dec.params());
        for (int step = 0; step < opt.dec_steps; ++step) {
            std::vector<env::Observation> obs_store;
            std::vector<std::array<float, 2>> effectors;
            std::vector<std::string> hls, lls;
            std::vector<float> targets;
            obs_store.reserve(static_cast<std::size_t>(opt.batch));
            for (int i = 0; i < opt.batch; ++i) {
                const SupWindow& w = windows[rng.below(windows.size())];
                const env::StoredEpisode& ep = eps[static_cast<std::size_t>(w.episode)];
                obs_store.push_back(ep.observation(w.start));
                effectors.push_back(obs_store.back().effector_state);
                hls.push_back(ep.high_level);
                lls.push_back(env::segment_of(ep.segments, w.start).low_level);
                env::ActionChunk c = env::chunk_at(ep.actions, w.start, dec.config().horizon);
                for (const auto& dlt : c.deltas) {
                    targets.push_back(dlt[0]);
                    targets.push_back(dlt[1]);
                }
            }
            std::vector<const env::Observation*> obs_p;
            for (const auto& o : obs_store) obs_p.push_back(&o);
            Tensor pred = dec.decode_batch(obs_p, effectors, hls, lls);
            Tensor tgt = Tensor::from(std::move(targets), pred.shape());
            Tensor diff = tc::sub(pred, tgt);
            Tensor loss = tc::mean_all(tc::mul(diff, diff));
            bool bad = !std::isfinite(loss.item());
            if (!bad) {
                tc::backward(loss);
                try {
                    adam.step();
                } catch (const NumericError&) {
                    bad = true;
                }
            }
            if (bad) {
                optim::restore_params(dec.params(), last_good);
                result.aborted_non_finite = true;
                break;
            }
            result.dec_losses.push_back(loss.item());
            if ((step + 1) % opt.log_interval == 0 || step + 1 == opt.dec_steps) {
                last_good = optim::snapshot_params(dec.params());
                if (opt.log) (*opt.log) << "dec," << step << "," << loss.item() << "\n";
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------

inline std::vector<Candidate> generate_candidates(const HighLevelLM& lm, const LowLevelDecoder& dec,
                                                  const std::string& high_level, const env::Observation& obs,
                                                  int n, float temperature, Rng& rng, bool greedy = false) {
    if (n < 2) throw ContractError("generate_candidates: need n >= 2");
    const text::Tokenizer& tok = text::Tokenizer::standard();
    std::vector<std::vector<int>> prompts(static_cast<std::size_t>(n), build_prompt(high_level));
    std::vector<SampleResult> samples = lm.sample_batch(prompts, temperature, rng, greedy);
    std::vector<Candidate> out;
    for (const SampleResult& s : samples) {
        Candidate c;
        c.low_level = tok.decode(s.ids);
        c.ids = s.ids;
        c.sum_logprob = s.sum_logprob;
        c.token_count = s.token_count;
        c.truncated = s.truncated;
        c.chunk = dec.decode_chunk(obs, obs.effector_state, high_level, c.low_level);
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace gpla::policy
