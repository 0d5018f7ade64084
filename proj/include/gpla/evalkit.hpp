#pragma once

#include <array>
#include <cmath>
#include <iostream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gpla/dataset.hpp"
#include "gpla/grounding.hpp"
#include "gpla/rng.hpp"
#include "gpla/tokenizer.hpp"

namespace gpla::eval {

struct TextPair {
    std::vector<std::string> hypothesis;
    std::vector<std::string> reference;
};

inline TextPair make_text_pair(const std::string& hypothesis, const std::string& reference) {
    return {text::normalize_words(hypothesis), text::normalize_words(reference)};
}

namespace detail {

inline std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& words, int n) {
    std::map<std::vector<std::string>, int> counts;
    if (static_cast<int>(words.size()) < n) return counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= words.size(); ++i)
        counts[std::vector<std::string>(words.begin() + static_cast<std::ptrdiff_t>(i),
                                        words.begin() + static_cast<std::ptrdiff_t>(i + static_cast<std::size_t>(n)))]++;
    return counts;
}

}  // namespace detail

// Clipped n-gram precision BLEU with brevity penalty. Unigram precision is
// never smoothed; higher orders with zero overlap get add-one smoothing.
// Orders longer than the hypothesis are skipped.
inline double bleu(const TextPair& pair, int max_n = 4) {
    if (pair.reference.empty()) throw ContractError("bleu: empty reference");
    if (pair.hypothesis.empty()) {
        std::cerr << "bleu: empty hypothesis scores 0\n";
        return 0.0;
    }
    const int h = static_cast<int>(pair.hypothesis.size());
    const int r = static_cast<int>(pair.reference.size());
    double log_sum = 0.0;
    int orders = 0;
    for (int n = 1; n <= max_n; ++n) {
        if (h < n) break;
        std::map<std::vector<std::string>, int> hyp = detail::ngram_counts(pair.hypothesis, n);
        std::map<std::vector<std::string>, int> ref = detail::ngram_counts(pair.reference, n);
        int clipped = 0, total = 0;
        for (const auto& [gram, c] : hyp) {
            total += c;
            auto it = ref.find(gram);
            if (it != ref.end()) clipped += std::min(c, it->second);
        }
        double p;
        if (clipped > 0)
            p = static_cast<double>(clipped) / total;
        else if (n == 1)
            return 0.0;
        else
            p = 1.0 / (total + 1);
        log_sum += std::log(p);
        ++orders;
    }
    const double geo = std::exp(log_sum / orders);
    const double bp = h < r ? std::exp(1.0 - static_cast<double>(r) / h) : 1.0;
    return geo * bp;
}

inline double rouge1_f1(const TextPair& pair) {
    if (pair.reference.empty()) throw ContractError("rouge1_f1: empty reference");
    if (pair.hypothesis.empty()) return 0.0;
    std::map<std::vector<std::string>, int> hyp = detail::ngram_counts(pair.hypothesis, 1);
    std::map<std::vector<std::string>, int> ref = detail::ngram_counts(pair.reference, 1);
    int overlap = 0;
    for (const auto& [gram, c] : hyp) {
        auto it = ref.find(gram);
        if (it != ref.end()) overlap += std::min(c, it->second);
    }
    if (overlap == 0) return 0.0;
    const double p = static_cast<double>(overlap) / static_cast<double>(pair.hypothesis.size());
    const double r = static_cast<double>(overlap) / static_cast<double>(pair.reference.size());
    return 2.0 * p * r / (p + r);
}

// Exact-match METEOR: leftmost unigram alignment, harmonic F weighted toward
// recall, cubic fragmentation penalty over contiguous match chunks.
inline double meteor(const TextPair& pair) {
    if (pair.reference.empty()) throw ContractError("meteor: empty reference");
    if (pair.hypothesis.empty()) return 0.0;
    std::vector<int> align(pair.hypothesis.size(), -1);
    std::vector<bool> used(pair.reference.size(), false);
    int m = 0;
    for (std::size_t i = 0; i < pair.hypothesis.size(); ++i)
        for (std::size_t j = 0; j < pair.reference.size(); ++j) {
            if (used[j] || pair.hypothesis[i] != pair.reference[j]) continue;
            align[i] = static_cast<int>(j);
            used[j] = true;
            ++m;
            break;
        }
    if (m == 0) return 0.0;
    const double p = static_cast<double>(m) / static_cast<double>(pair.hypothesis.size());
    const double r = static_cast<double>(m) / static_cast<double>(pair.reference.size());
    const double f_mean = 10.0 * p * r / (r + 9.0 * p);
    int chunks = 0;
    int prev_ref = -2;
    for (std::size_t i = 0; i < align.size(); ++i) {
        if (align[i] < 0) continue;
        if (align[i] != prev_ref + 1) ++chunks;
        prev_ref = align[i];
    }
    const double frag = static_cast<double>(chunks) / static_cast<double>(m);
    return f_mean * (1.0 - 0.5 * frag * frag * frag);
}

// ---------------------------------------------------------------------------

struct TrajPair {
    std::vector<env::Vec2> predicted;
    std::vector<env::Vec2> target;
};

struct TrajMetrics {
    double mse = 0.0;
    double mae = 0.0;
    double cos_sim = 0.0;
};

// Per-step cosine between 2D deltas, averaged over steps; steps where either
// side is the zero vector contribute 0 but still count.
inline TrajMetrics traj_metrics(const TrajPair& pair) {
    if (pair.predicted.size() != pair.target.size() || pair.predicted.empty())
        throw ContractError("traj_metrics: shape mismatch");
    TrajMetrics out;
    double cos_sum = 0.0;
    for (std::size_t t = 0; t < pair.predicted.size(); ++t) {
        const env::Vec2& a = pair.predicted[t];
        const env::Vec2& b = pair.target[t];
        for (int k = 0; k < 2; ++k) {
            const double e = static_cast<double>(a[static_cast<std::size_t>(k)]) - b[static_cast<std::size_t>(k)];
            out.mse += e * e;
            out.mae += std::abs(e);
        }
        const double na = std::sqrt(static_cast<double>(a[0]) * a[0] + static_cast<double>(a[1]) * a[1]);
        const double nb = std::sqrt(static_cast<double>(b[0]) * b[0] + static_cast<double>(b[1]) * b[1]);
        if (na > 0.0 && nb > 0.0)
            cos_sum += (static_cast<double>(a[0]) * b[0] + static_cast<double>(a[1]) * b[1]) / (na * nb);
    }
    const double n = static_cast<double>(pair.predicted.size());
    out.mse /= 2.0 * n;
    out.mae /= 2.0 * n;
    out.cos_sim = cos_sum / n;
    return out;
}

// ---------------------------------------------------------------------------

// Mean-centered projection onto the top-k principal axes, found by power
// iteration with deflation. Axis signs are fixed so the first nonzero
// component of each axis is positive.
inline std::vector<std::vector<float>> pca_project(const std::vector<std::vector<float>>& embeddings, int k = 2,
                                                   std::uint64_t seed = 0) {
    const int n = static_cast<int>(embeddings.size());
    if (n < k + 1) throw ContractError("pca_project: need at least k+1 vectors");
    const int d = static_cast<int>(embeddings.front().size());
    for (const auto& e : embeddings)
        if (static_cast<int>(e.size()) != d) throw ContractError("pca_project: ragged input");

    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (const auto& e : embeddings)
        for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += e[static_cast<std::size_t>(j)];
    for (double& v : mean) v /= n;
    std::vector<std::vector<double>> x(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(d)));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                embeddings[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] - mean[static_cast<std::size_t>(j)];

    Rng rng = Rng(seed).stream("pca");
    std::vector<std::vector<float>> out(static_cast<std::size_t>(n), std::vector<float>(static_cast<std::size_t>(k), 0.0f));
    for (int axis = 0; axis < k; ++axis) {
        std::vector<double> v(static_cast<std::size_t>(d));
        double norm = 0.0;
        for (int j = 0; j < d; ++j) {
            v[static_cast<std::size_t>(j)] = rng.normal();
            norm += v[static_cast<std::size_t>(j)] * v[static_cast<std::size_t>(j)];
        }
        for (double& c : v) c /= std::sqrt(norm);
        double lambda = 0.0;
        for (int iter = 0; iter < 200; ++iter) {
            std::vector<double> xv(static_cast<std::size_t>(n), 0.0);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                    xv[static_cast<std::size_t>(i)] += x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] *
                                                       v[static_cast<std::size_t>(j)];
            std::vector<double> next(static_cast<std::size_t>(d), 0.0);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                    next[static_cast<std::size_t>(j)] += x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] *
                                                         xv[static_cast<std::size_t>(i)];
            lambda = 0.0;
            for (int j = 0; j < d; ++j) lambda += next[static_cast<std::size_t>(j)] * next[static_cast<std::size_t>(j)];
            lambda = std::sqrt(lambda);
            if (lambda < 1e-12) break;
            for (int j = 0; j < d; ++j) v[static_cast<std::size_t>(j)] = next[static_cast<std::size_t>(j)] / lambda;
        }
        if (lambda < 1e-12) {
            std::cerr << "pca_project: rank-deficient input, axis " << axis << " and beyond are zero\n";
            break;
        }
        for (int j = 0; j < d; ++j)
            if (std::abs(v[static_cast<std::size_t>(j)]) > 1e-12) {
                if (v[static_cast<std::size_t>(j)] < 0.0)
                    for (double& c : v) c = -c;
                break;
            }
        for (int i = 0; i < n; ++i) {
            double proj = 0.0;
            for (int j = 0; j < d; ++j)
                proj += x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * v[static_cast<std::size_t>(j)];
            out[static_cast<std::size_t>(i)][static_cast<std::size_t>(axis)] = static_cast<float>(proj);
            for (int j = 0; j < d; ++j)
                x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] -= proj * v[static_cast<std::size_t>(j)];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

struct RolloutRow {
    int episode_id = 0;
    int step = 0;
    std::string high_level;
    std::string generated_low_level;
    env::ActionChunk chunk;
    std::string gt_low_level;
    env::ActionChunk gt_chunk;
};

inline nlohmann::json rollout_to_json(const RolloutRow& row) {
    auto chunk_json = [](const env::ActionChunk& c) {
        nlohmann::json arr = nlohmann::json::array();
        for (const env::Vec2& d : c.deltas) arr.push_back({d[0], d[1]});
        return arr;
    };
    return nlohmann::json{{"episode_id", row.episode_id},
                          {"step", row.step},
                          {"high_level", row.high_level},
                          {"generated_low_level", row.generated_low_level},
                          {"chunk", chunk_json(row.chunk)},
                          {"gt_low_level", row.gt_low_level},
                          {"gt_chunk", chunk_json(row.gt_chunk)}};
}

inline std::vector<RolloutRow> parse_rollouts(std::istream& in) {
    std::vector<RolloutRow> rows;
    std::string line;
    int line_no = 0;
    auto fail = [&](const std::string& what) {
        throw IoError("rollouts line " + std::to_string(line_no) + ": " + what);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail(e.what());
        }
        RolloutRow row;
        try {
            row.episode_id = j.at("episode_id").get<int>();
            row.step = j.at("step").get<int>();
            row.high_level = j.at("high_level").get<std::string>();
            row.generated_low_level = j.at("generated_low_level").get<std::string>();
            row.gt_low_level = j.at("gt_low_level").get<std::string>();
            for (const auto& d : j.at("chunk")) row.chunk.deltas.push_back({d.at(0).get<float>(), d.at(1).get<float>()});
            for (const auto& d : j.at("gt_chunk"))
                row.gt_chunk.deltas.push_back({d.at(0).get<float>(), d.at(1).get<float>()});
        } catch (const nlohmann::json::exception& e) {
            fail(e.what());
        }
        if (row.chunk.deltas.empty() || row.chunk.deltas.size() != row.gt_chunk.deltas.size())
            fail("chunk and gt_chunk must be nonempty and equally long");
        rows.push_back(std::move(row));
    }
    return rows;
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population
};

inline MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd out;
    if (xs.empty()) return out;
    for (double v : xs) out.mean += v;
    out.mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double v : xs) var += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(var / static_cast<double>(xs.size()));
    return out;
}

struct Report {
    std::string model;
    MeanStd bleu, rouge1, meteor, mse, mae, cossim;
    double ground_score = 0.0;
    int n_rows = 0;
};

// One metrics row over a rollout file: text metrics on generated vs ground
// truth instructions, trajectory metrics on chunk pairs, and the mean
// grounding score of (observation, generated chunk, generated instruction).
inline Report evaluate_run(const std::vector<RolloutRow>& rows, const std::vector<env::StoredEpisode>& episodes,
                           const ground::GroundingModel& grounding, const std::string& model) {
    if (rows.empty()) throw ContractError("evaluate_run: empty rollout set");
    std::map<int, const env::StoredEpisode*> by_id;
    for (const env::StoredEpisode& ep : episodes) by_id[ep.id] = &ep;

    Report rep;
    rep.model = model;
    rep.n_rows = static_cast<int>(rows.size());
    std::vector<double> bleus, rouges, meteors, mses, maes, coss;
    double g_sum = 0.0;
    for (const RolloutRow& row : rows) {
        auto it = by_id.find(row.episode_id);
        if (it == by_id.end())
            throw ContractError("evaluate_run: unknown episode id " + std::to_string(row.episode_id));
        const env::StoredEpisode& ep = *it->second;
        if (row.step < 0 || row.step >= ep.n_frames)
            throw ContractError("evaluate_run: step out of range for episode " + std::to_string(row.episode_id));

        TextPair tp = make_text_pair(row.generated_low_level, row.gt_low_level);
        bleus.push_back(bleu(tp));
        rouges.push_back(rouge1_f1(tp));
        meteors.push_back(meteor(tp));
        TrajMetrics tm = traj_metrics({row.chunk.deltas, row.gt_chunk.deltas});
        mses.push_back(tm.mse);
        maes.push_back(tm.mae);
        coss.push_back(tm.cos_sim);

        if (row.generated_low_level.empty()) {
            g_sum += -1.0;
        } else {
            env::Observation obs = ep.observation(row.step);
            g_sum += grounding.grounding_score(obs, row.chunk, row.generated_low_level);
        }
    }
    rep.bleu = mean_std(bleus);
    rep.rouge1 = mean_std(rouges);
    rep.meteor = mean_std(meteors);
    rep.mse = mean_std(mses);
    rep.mae = mean_std(maes);
    rep.cossim = mean_std(coss);
    rep.ground_score = g_sum / static_cast<double>(rows.size());
    return rep;
}

inline void write_report_header(std::ostream& out) {
    out << "model,bleu,bleu_std,rouge1,rouge1_std,meteor,meteor_std,mse,mse_std,mae,mae_std,cossim,cossim_std,"
           "ground_score\n";
}

inline void write_report_row(std::ostream& out, const Report& rep) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", rep.model.c_str(),
                  rep.bleu.mean, rep.bleu.std, rep.rouge1.mean, rep.rouge1.std, rep.meteor.mean, rep.meteor.std,
                  rep.mse.mean, rep.mse.std, rep.mae.mean, rep.mae.std, rep.cossim.mean, rep.cossim.std,
                  rep.ground_score);
    out << buf;
}

}  // namespace gpla::eval
