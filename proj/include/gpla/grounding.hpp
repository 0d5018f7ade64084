#pragma once

#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gpla/augment.hpp"
#include "gpla/dataset.hpp"
#include "gpla/nn.hpp"
#include "gpla/optim.hpp"
#include "gpla/synthenv.hpp"
#include "gpla/tokenizer.hpp"

namespace gpla::ground {

using nn::ParamRegistry;
using tc::Tensor;

struct GroundingConfig {
    int d_model = 64;
    int n_film_layers = 4;
    float initial_logit_scale = 0.1f;  // initial multiplier applied to cosine logits, i.e. 1/tau
    float gamma_div = 0.01f;
    int horizon = 8;
    int patch_size = 8;
    int image_side = 64;
    int n_blocks = 2;
    int n_heads = 4;

    void validate() const {
        if (d_model <= 0 || n_film_layers <= 0 || initial_logit_scale <= 0 || gamma_div < 0 || horizon <= 0 ||
            patch_size <= 0 || n_blocks <= 0 || n_heads <= 0)
            throw ConfigError("grounding config fields must be positive");
        if (image_side % patch_size != 0) throw ConfigError("patch_size must divide image side");
        if (d_model % n_heads != 0) throw ConfigError("n_heads must divide d_model");
    }
    int n_patches() const { return (image_side / patch_size) * (image_side / patch_size); }
    int patch_dim() const { return patch_size * patch_size * 3; }
};

class GroundingModel {
public:
    GroundingModel(const GroundingConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        const text::Tokenizer& tok = text::Tokenizer::standard();
        Rng rng = Rng(seed).stream("grounding");
        const int d = cfg_.d_model;
        patch_embed_ = nn::Linear(reg_, rng, "g.vision.patch", cfg_.patch_dim(), d);
        vision_pos_ = nn::init::normal(reg_, rng, "g.vision.pos", {cfg_.n_patches(), d}, 0.02f);
        for (int i = 0; i < cfg_.n_blocks; ++i)
            vision_blocks_.emplace_back(reg_, rng, "g.vision.block" + std::to_string(i), d, cfg_.n_heads);
        for (int i = 0; i < cfg_.n_film_layers; ++i) {
            film_blocks_.emplace_back(reg_, rng, "g.film.block" + std::to_string(i), d, cfg_.n_heads);
            film_gamma_.emplace_back(reg_, rng, "g.film.gamma" + std::to_string(i), d, d);
            std::fill(film_gamma_.back().b.data(), film_gamma_.back().b.data() + d, 1.0f);
            film_beta_.emplace_back(reg_, rng, "g.film.beta" + std::to_string(i), d, d);
        }
        text_emb_ = nn::Embedding(reg_, rng, "g.text.emb", tok.vocab_size(), d);
        text_pos_ = nn::init::normal(reg_, rng, "g.text.pos", {tok.max_len(), d}, 0.02f);
        for (int i = 0; i < cfg_.n_blocks; ++i)
            text_blocks_.emplace_back(reg_, rng, "g.text.block" + std::to_string(i), d, cfg_.n_heads);
        action_embed_ = nn::Linear(reg_, rng, "g.action.proj", 2, d);
        action_pos_ = nn::init::normal(reg_, rng, "g.action.pos", {cfg_.horizon, d}, 0.02f);
        action_block_ = nn::TransformerBlock(reg_, rng, "g.action.block0", d, cfg_.n_heads);
        vision_proj_ = nn::Linear(reg_, rng, "g.vision_proj", d, d);
        text_proj_ = nn::Linear(reg_, rng, "g.text_proj", d, d);
        log_tau_ = nn::init::constant(reg_, "g.log_tau", {1}, std::log(1.0f / cfg_.initial_logit_scale));
    }

    const GroundingConfig& config() const { return cfg_; }
    ParamRegistry& params() { return reg_; }
    const ParamRegistry& params() const { return reg_; }
    Tensor log_tau() const { return log_tau_; }
    float tau() const { return std::exp(log_tau_.data()[0]); }

    // Flattens 8x8 image patches in patch-grid row-major order.
    Tensor patchify(const std::vector<const env::Observation*>& batch) const {
        const int side = cfg_.image_side, ps = cfg_.patch_size, grid = side / ps;
        const int pd = cfg_.patch_dim(), np = cfg_.n_patches();
        std::vector<float> out(batch.size() * static_cast<std::size_t>(np) * pd);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const env::Observation& obs = *batch[b];
            if (obs.h != side || obs.w != side)
                throw DimensionError("observation resolution does not match grounding config");
            float* dst = out.data() + b * static_cast<std::size_t>(np) * pd;
            for (int gy = 0; gy < grid; ++gy)
                for (int gx = 0; gx < grid; ++gx) {
                    float* patch = dst + (static_cast<std::size_t>(gy) * grid + gx) * pd;
                    for (int py = 0; py < ps; ++py)
                        for (int px = 0; px < ps; ++px) {
                            const std::size_t src = ((static_cast<std::size_t>(gy * ps + py)) * side + gx * ps + px) * 3;
                            const std::size_t di = (static_cast<std::size_t>(py) * ps + px) * 3;
                            patch[di] = obs.image[src];
                            patch[di + 1] = obs.image[src + 1];
                            patch[di + 2] = obs.image[src + 2];
                        }
                }
        }
        return Tensor::from(std::move(out), {static_cast<int>(batch.size()), np, pd});
    }

    Tensor action_features(const std::vector<const env::ActionChunk*>& chunks) const {
        const int h = cfg_.horizon;
        std::vector<float> flat(chunks.size() * static_cast<std::size_t>(h) * 2);
        for (std::size_t b = 0; b < chunks.size(); ++b) {
            if (static_cast<int>(chunks[b]->deltas.size()) != h)
                throw DimensionError("action chunk horizon mismatch: got " +
                                     std::to_string(chunks[b]->deltas.size()) + ", config " + std::to_string(h));
            for (int t = 0; t < h; ++t) {
                flat[(b * static_cast<std::size_t>(h) + t) * 2] = chunks[b]->deltas[static_cast<std::size_t>(t)][0];
                flat[(b * static_cast<std::size_t>(h) + t) * 2 + 1] = chunks[b]->deltas[static_cast<std::size_t>(t)][1];
            }
        }
        Tensor x = Tensor::from(std::move(flat), {static_cast<int>(chunks.size()), h, 2});
        Tensor e = tc::add(action_embed_(x), action_pos_);
        const std::vector<int> lens(chunks.size(), h);
        e = action_block_(e, lens, false);
        return tc::masked_mean_rows(e, lens);  // [B, d]
    }

    // Pre-normalization pooled embedding of the vision trunk; conditioning is
    // optional so the unmodulated pathway is directly observable.
    Tensor va_prenorm(const std::vector<const env::Observation*>& obs,
                      const std::optional<Tensor>& action_feat) const {
        Tensor x = tc::add(patch_embed_(patchify(obs)), vision_pos_);
        const std::vector<int> lens(obs.size(), cfg_.n_patches());
        for (const auto& blk : vision_blocks_) x = blk(x, lens, false);
        for (int l = 0; l < cfg_.n_film_layers; ++l) {
            x = film_blocks_[static_cast<std::size_t>(l)](x, lens, false);
            if (action_feat) {
                Tensor gamma = film_gamma_[static_cast<std::size_t>(l)](*action_feat);
                Tensor beta = film_beta_[static_cast<std::size_t>(l)](*action_feat);
                x = tc::film(x, gamma, beta);
            }
        }
        return vision_proj_(tc::masked_mean_rows(x, lens));
    }

    Tensor encode_va_batch(const std::vector<const env::Observation*>& obs,
                           const std::vector<const env::ActionChunk*>& chunks) const {
        if (obs.size() != chunks.size() || obs.empty())
            throw DimensionError("encode_va_batch: observation/chunk count mismatch");
        return tc::l2_normalize_rows(va_prenorm(obs, action_features(chunks)));
    }

    Tensor text_prenorm(const std::vector<std::string>& texts) const {
        const text::Tokenizer& tok = text::Tokenizer::standard();
        std::vector<std::vector<int>> ids;
        int max_s = 1;
        for (const std::string& s : texts) {
            std::vector<int> v = tok.encode(s);
            if (v.empty()) throw ContractError("encode_text: empty instruction");
            if (static_cast<int>(v.size()) > tok.max_len()) v.resize(static_cast<std::size_t>(tok.max_len()));
            max_s = std::max(max_s, static_cast<int>(v.size()));
            ids.push_back(std::move(v));
        }
        std::vector<int> flat, lens;
        for (const auto& v : ids) {
            lens.push_back(static_cast<int>(v.size()));
            for (int i = 0; i < max_s; ++i)
                flat.push_back(i < static_cast<int>(v.size()) ? v[static_cast<std::size_t>(i)]
                                                              : text::Tokenizer::kPad);
        }
        Tensor x = text_emb_(flat, {static_cast<int>(texts.size()), max_s});
        Tensor pos = tc::slice_rows(text_pos_, 0, max_s);
        x = tc::add(x, pos);
        for (const auto& blk : text_blocks_) x = blk(x, lens, false);
        return text_proj_(tc::masked_mean_rows(x, lens));
    }

    Tensor encode_text_batch(const std::vector<std::string>& texts) const {
        return tc::l2_normalize_rows(text_prenorm(texts));
    }

    std::vector<float> encode_va(const env::Observation& obs, const env::ActionChunk& chunk) const {
        tc::NoGradGuard ng;
        Tensor e = encode_va_batch({&obs}, {&chunk});
        return std::vector<float>(e.data(), e.data() + e.size());
    }

    std::vector<float> encode_text(const std::string& s) const {
        tc::NoGradGuard ng;
        Tensor e = encode_text_batch({s});
        return std::vector<float>(e.data(), e.data() + e.size());
    }

    float grounding_score(const env::Observation& obs, const env::ActionChunk& chunk, const std::string& s) const {
        std::vector<float> va = encode_va(obs, chunk);
        std::vector<float> t = encode_text(s);
        double dot = 0.0;
        for (std::size_t i = 0; i < va.size(); ++i) dot += static_cast<double>(va[i]) * t[i];
        return static_cast<float>(dot);
    }

private:
    GroundingConfig cfg_;
    ParamRegistry reg_;
    nn::Linear patch_embed_;
    Tensor vision_pos_;
    std::vector<nn::TransformerBlock> vision_blocks_;
    std::vector<nn::TransformerBlock> film_blocks_;
    std::vector<nn::Linear> film_gamma_, film_beta_;
    nn::Embedding text_emb_;
    Tensor text_pos_;
    std::vector<nn::TransformerBlock> text_blocks_;
    nn::Linear action_embed_;
    Tensor action_pos_;
    nn::TransformerBlock action_block_;
    nn::Linear vision_proj_, text_proj_;
    Tensor log_tau_;
};

// Symmetric InfoNCE over an aligned batch: logits are cosines scaled by
// 1/tau, cross-entropy against the diagonal, averaged over rows and both
// directions.
inline Tensor contrastive_loss(const Tensor& va, const Tensor& t, const Tensor& log_tau) {
    if (va.rank() != 2 || t.rank() != 2 || va.dim(0) != t.dim(0) || va.dim(1) != t.dim(1))
        throw DimensionError("contrastive_loss: embedding batches must match");
    const int n = va.dim(0);
    if (n < 2) throw ContractError("contrastive_loss: need at least 2 pairs");
    Tensor inv_tau = tc::exp_elem(tc::mul_scalar(log_tau, -1.0f));
    Tensor logits = tc::scale_by(tc::matmul(va, tc::transpose2d(t)), inv_tau);
    std::vector<int> diag(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = i;
    Tensor l_vat = tc::mean_all(tc::take_per_row(tc::log_softmax(logits), diag));
    Tensor l_tva = tc::mean_all(tc::take_per_row(tc::log_softmax(tc::transpose2d(logits)), diag));
    return tc::mul_scalar(tc::add(l_vat, l_tva), -0.5f);
}

// Mean positive off-diagonal similarity within each modality.
inline Tensor diversity_loss(const Tensor& va, const Tensor& t) {
    if (va.rank() != 2 || t.rank() != 2 || va.dim(0) != t.dim(0))
        throw DimensionError("diversity_loss: embedding batches must match");
    const int n = va.dim(0);
    if (n < 2) throw ContractError("diversity_loss: need at least 2 rows");
    std::vector<float> off(static_cast<std::size_t>(n) * n, 1.0f);
    for (int i = 0; i < n; ++i) off[static_cast<std::size_t>(i) * n + i] = 0.0f;
    Tensor mask = Tensor::from(std::move(off), {n, n});
    Tensor sva = tc::sum_all(tc::mul(tc::relu(tc::matmul(va, tc::transpose2d(va))), mask));
    Tensor st = tc::sum_all(tc::mul(tc::relu(tc::matmul(t, tc::transpose2d(t))), mask));
    return tc::mul_scalar(tc::add(sva, st), 1.0f / (static_cast<float>(n) * (n - 1)));
}

// ---------------------------------------------------------------------------
// Training.

struct GroundingTrainOptions {
    int steps = 2000;
    int micro_batch = 64;
    int accum = 4;  // effective batch = micro_batch * accum
    float lr = 1e-4f;
    float idle_threshold = env::kIdleThreshold;
    std::uint64_t seed = 0;
    int log_interval = 50;
    bool augment = true;
    std::ostream* log = nullptr;  // CSV: step,loss,retrieval
};

struct WindowRef {
    int episode;
    int start;
};

inline std::vector<WindowRef> index_windows(const std::vector<env::StoredEpisode>& eps,
                                            float threshold = env::kIdleThreshold, int horizon = env::kHorizon) {
    std::vector<WindowRef> refs;
    for (std::size_t e = 0; e < eps.size(); ++e)
        for (int t : env::keep_starts(eps[e].actions, eps[e].segments, threshold, horizon))
            refs.push_back({static_cast<int>(e), t});
    return refs;
}

struct GroundingBatch {
    std::vector<env::Observation> obs;
    std::vector<env::ActionChunk> chunks;
    std::vector<std::string> texts;
};

inline GroundingBatch assemble_grounding_batch(const std::vector<env::StoredEpisode>& eps,
                                               const std::vector<WindowRef>& refs, const std::vector<int>& picks,
                                               int horizon, bool do_augment, Rng& rng) {
    GroundingBatch b;
    for (int p : picks) {
        const WindowRef& r = refs[static_cast<std::size_t>(p)];
        const env::StoredEpisode& ep = eps[static_cast<std::size_t>(r.episode)];
        env::Observation obs = ep.observation(r.start);
        env::ActionChunk chunk = env::chunk_at(ep.actions, r.start, horizon);
        if (do_augment) {
            env::AugmentDecisions d = env::draw_augment(rng, horizon);
            env::apply_augment_image(obs.image, obs.h, obs.w, d);
            env::apply_augment_actions(chunk, d);
        }
        b.obs.push_back(std::move(obs));
        b.chunks.push_back(std::move(chunk));
        b.texts.push_back(env::segment_of(ep.segments, r.start).low_level);
    }
    return b;
}

struct GroundingTrainResult {
    std::vector<float> losses;         // one entry per optimizer step
    std::vector<float> retrievals;     // in-batch top-1 accuracy per step
    bool aborted_non_finite = false;
};

inline GroundingTrainResult train_grounding(GroundingModel& model, const std::vector<env::StoredEpisode>& eps,
                                            const GroundingTrainOptions& opt) {
    std::vector<WindowRef> refs = index_windows(eps, opt.idle_threshold, model.config().horizon);
    if (refs.empty()) throw ContractError("train_grounding: dataset has no usable windows");
    optim::AdamConfig acfg;
    acfg.lr = opt.lr;
    optim::Adam adam(model.params(), acfg);
    Rng data_rng = Rng(opt.seed).stream("ground.data");
    Rng aug_rng = Rng(opt.seed).stream("ground.augment");

    GroundingTrainResult result;
    std::vector<float> last_good = optim::snapshot_params(model.params());
    for (int step = 0; step < opt.steps; ++step) {
        double loss_acc = 0.0;
        int hits = 0, total = 0;
        bool bad = false;
        for (int micro = 0; micro < opt.accum; ++micro) {
            std::vector<int> picks(static_cast<std::size_t>(opt.micro_batch));
            for (int& p : picks) p = static_cast<int>(data_rng.below(refs.size()));
            GroundingBatch batch =
                assemble_grounding_batch(eps, refs, picks, model.config().horizon, opt.augment, aug_rng);
            std::vector<const env::Observation*> obs_p;
            std::vector<const env::ActionChunk*> chunk_p;
            for (std::size_t i = 0; i < batch.obs.size(); ++i) {
                obs_p.push_back(&batch.obs[i]);
                chunk_p.push_back(&batch.chunks[i]);
            }
            Tensor va = model.encode_va_batch(obs_p, chunk_p);
            Tensor t = model.encode_text_batch(batch.texts);
            Tensor loss = tc::add(contrastive_loss(va, t, model.log_tau()),
                                  tc::mul_scalar(diversity_loss(va, t), model.config().gamma_div));
            const float lv = loss.data()[0];
            if (!std::isfinite(lv)) {
                bad = true;
                break;
            }
            loss_acc += lv;
            tc::backward(tc::mul_scalar(loss, 1.0f / static_cast<float>(opt.accum)));
            // in-batch retrieval: does row i of VA rank its own caption first
            const int n = va.dim(0), d = va.dim(1);
            for (int i = 0; i < n; ++i) {
                int best = 0;
                float best_s = -2.0f;
                for (int j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (int k = 0; k < d; ++k)
                        s += static_cast<double>(va.data()[i * d + k]) * t.data()[j * d + k];
                    if (s > best_s) {
                        best_s = static_cast<float>(s);
                        best = j;
                    }
                }
                hits += best == i;
                ++total;
            }
        }
        if (!bad) {
            try {
                adam.step();
            } catch (const NumericError&) {
                bad = true;
            }
        }
        if (bad) {
            optim::restore_params(model.params(), last_good);
            result.aborted_non_finite = true;
            break;
        }
        result.losses.push_back(static_cast<float>(loss_acc / opt.accum));
        result.retrievals.push_back(total ? static_cast<float>(hits) / static_cast<float>(total) : 0.0f);
        if ((step + 1) % opt.log_interval == 0 || step + 1 == opt.steps) {
            last_good = optim::snapshot_params(model.params());
            if (opt.log)
                (*opt.log) << step << "," << result.losses.back() << "," << result.retrievals.back() << "\n";
        }
    }
    return result;
}

}  // namespace gpla::ground
