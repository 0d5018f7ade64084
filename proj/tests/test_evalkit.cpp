#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <sstream>

#include "gpla/evalkit.hpp"

using namespace gpla;
using namespace gpla::eval;

namespace {

env::ActionChunk chunk_of(std::initializer_list<env::Vec2> steps) {
    env::ActionChunk c;
    for (const env::Vec2& v : steps) c.deltas.push_back(v);
    return c;
}

env::ActionChunk repeat_chunk(env::Vec2 v, int n) {
    env::ActionChunk c;
    for (int i = 0; i < n; ++i) c.deltas.push_back(v);
    return c;
}

}  // namespace

TEST_CASE("bleu matches the hand-counted references") {
    REQUIRE(bleu(make_text_pair("push the red circle", "push the red circle")) == 1.0);
    REQUIRE(bleu(make_text_pair("yellow star", "blue cube")) == 0.0);

    const double got = bleu(make_text_pair("the cat sat", "the cat sat down"));
    REQUIRE(got == Catch::Approx(std::exp(1.0 - 4.0 / 3.0)).epsilon(0).margin(1e-12));
    REQUIRE(got == Catch::Approx(0.7165).epsilon(0).margin(1e-4));

    // p1 = 1/2 unsmoothed, p2 = 1/(1+1) smoothed, BP = 1
    REQUIRE(bleu(make_text_pair("the cat", "the dog")) == Catch::Approx(0.5).epsilon(0).margin(1e-12));

    REQUIRE(bleu(make_text_pair("", "the cat")) == 0.0);
    REQUIRE_THROWS_AS(bleu(make_text_pair("the cat", "")), ContractError);
}

TEST_CASE("bleu stays within the unit interval") {
    const char* hyps[] = {"push the red circle to the left", "the red circle", "push push push the",
                          "move the blue square near to the yellow star"};
    const char* refs[] = {"push the red circle to the bottom left corner", "push the red circle",
                          "push the yellow star to the center", "move the blue square near to the yellow star"};
    for (int i = 0; i < 4; ++i) {
        const double v = bleu(make_text_pair(hyps[i], refs[i]));
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
}

TEST_CASE("rouge-1 f1 follows clipped unigram overlap") {
    REQUIRE(rouge1_f1(make_text_pair("push the red circle", "push the red circle")) == 1.0);
    REQUIRE(rouge1_f1(make_text_pair("yellow star", "blue cube")) == 0.0);
    REQUIRE(rouge1_f1(make_text_pair("move red block", "push red block")) ==
            Catch::Approx(2.0 / 3.0).epsilon(0).margin(1e-12));
    // clipping: "the the the" vs "the cat" -> overlap 1, P = 1/3, R = 1/2
    REQUIRE(rouge1_f1(make_text_pair("the the the", "the cat")) == Catch::Approx(0.4).epsilon(0).margin(1e-12));
    REQUIRE(rouge1_f1(make_text_pair("", "the cat")) == 0.0);
    REQUIRE_THROWS_AS(rouge1_f1(make_text_pair("the cat", "")), ContractError);
}

TEST_CASE("meteor applies the fragmentation penalty") {
    REQUIRE(meteor(make_text_pair("yellow star", "blue cube")) == 0.0);

    const double identical = meteor(make_text_pair("push the red circle left", "push the red circle left"));
    REQUIRE(identical == Catch::Approx(0.996).epsilon(0).margin(1e-9));
    REQUIRE(identical >= 1.0 - 0.5 / 125.0);

    // single shared word, both length 2: F = 0.5, penalty = 0.5
    REQUIRE(meteor(make_text_pair("red block", "red cube")) == Catch::Approx(0.25).epsilon(0).margin(1e-12));

    // same words, scrambled reference order -> more chunks -> lower score
    const double ordered = meteor(make_text_pair("red blue green", "red blue green"));
    const double scrambled = meteor(make_text_pair("red blue green", "red green blue"));
    REQUIRE(scrambled < ordered);

    REQUIRE(meteor(make_text_pair("", "the cat")) == 0.0);
    REQUIRE_THROWS_AS(meteor(make_text_pair("the cat", "")), ContractError);
}

TEST_CASE("trajectory metrics cover the antipodal and orthogonal cases") {
    env::ActionChunk tgt = chunk_of({{0.1f, -0.05f}, {0.02f, 0.08f}, {-0.1f, 0.1f}});

    TrajMetrics same = traj_metrics({tgt.deltas, tgt.deltas});
    REQUIRE(same.mse == 0.0);
    REQUIRE(same.mae == 0.0);
    REQUIRE(same.cos_sim == Catch::Approx(1.0).epsilon(0).margin(1e-12));

    env::ActionChunk anti = tgt;
    for (env::Vec2& d : anti.deltas) {
        d[0] = -d[0];
        d[1] = -d[1];
    }
    TrajMetrics opp = traj_metrics({anti.deltas, tgt.deltas});
    REQUIRE(opp.cos_sim == Catch::Approx(-1.0).epsilon(0).margin(1e-12));
    double mean_sq = 0.0;
    for (const env::Vec2& d : tgt.deltas) mean_sq += d[0] * d[0] + d[1] * d[1];
    mean_sq /= 2.0 * static_cast<double>(tgt.deltas.size());
    REQUIRE(opp.mse == Catch::Approx(4.0 * mean_sq).epsilon(1e-6));

    TrajMetrics ortho = traj_metrics({repeat_chunk({1.0f, 0.0f}, 8).deltas, repeat_chunk({0.0f, 1.0f}, 8).deltas});
    REQUIRE(ortho.mse == Catch::Approx(1.0).epsilon(0).margin(1e-12));
    REQUIRE(ortho.mae == Catch::Approx(1.0).epsilon(0).margin(1e-12));
    REQUIRE(ortho.cos_sim == Catch::Approx(0.0).epsilon(0).margin(1e-12));

    // zero-vector steps contribute 0 but still count
    TrajMetrics halved = traj_metrics({chunk_of({{0.1f, 0.0f}, {0.0f, 0.0f}}).deltas,
                                       chunk_of({{0.1f, 0.0f}, {0.05f, 0.0f}}).deltas});
    REQUIRE(halved.cos_sim == Catch::Approx(0.5).epsilon(0).margin(1e-12));

    TrajPair ragged{repeat_chunk({0.1f, 0.1f}, 3).deltas, repeat_chunk({0.1f, 0.1f}, 4).deltas};
    REQUIRE_THROWS_AS(traj_metrics(ragged), ContractError);
}

TEST_CASE("pca recovers a planar subspace") {
    const int d = 16, n = 60;
    std::vector<float> u(d, 0.0f), w(d, 0.0f);
    u[2] = 1.0f;
    w[7] = 1.0f;
    Rng rng = Rng(6).stream("pca_data");
    std::vector<std::vector<float>> pts;
    for (int i = 0; i < n; ++i) {
        const float a = static_cast<float>(rng.uniform(-2.0, 2.0));
        const float b = static_cast<float>(rng.uniform(-0.5, 0.5));
        std::vector<float> p(d, 0.0f);
        for (int j = 0; j < d; ++j) p[j] = a * u[j] + b * w[j] + 0.3f;
        pts.push_back(std::move(p));
    }
    std::vector<std::vector<float>> proj = pca_project(pts, 2, 3);
    REQUIRE(proj.size() == static_cast<std::size_t>(n));

    double total = 0.0;
    std::vector<double> mean(d, 0.0);
    for (const auto& p : pts)
        for (int j = 0; j < d; ++j) mean[j] += p[j] / n;
    for (const auto& p : pts)
        for (int j = 0; j < d; ++j) total += (p[j] - mean[j]) * (p[j] - mean[j]);
    double captured = 0.0, m0 = 0.0, m1 = 0.0, v0 = 0.0, v1 = 0.0;
    for (const auto& p : proj) {
        captured += static_cast<double>(p[0]) * p[0] + static_cast<double>(p[1]) * p[1];
        m0 += p[0];
        m1 += p[1];
    }
    REQUIRE(std::abs(total - captured) / total < 1e-4);
    REQUIRE(std::abs(m0 / n) < 1e-5);
    REQUIRE(std::abs(m1 / n) < 1e-5);
    for (const auto& p : proj) {
        v0 += static_cast<double>(p[0]) * p[0];
        v1 += static_cast<double>(p[1]) * p[1];
    }
    REQUIRE(v0 >= v1);

    std::vector<std::vector<float>> again = pca_project(pts, 2, 3);
    REQUIRE(again == proj);
}

TEST_CASE("pca pads rank-deficient axes with zeros") {
    std::vector<std::vector<float>> line;
    for (int i = 0; i < 10; ++i) {
        std::vector<float> p(8, 0.0f);
        p[1] = static_cast<float>(i);
        line.push_back(std::move(p));
    }
    std::vector<std::vector<float>> proj = pca_project(line, 2, 4);
    for (const auto& p : proj) REQUIRE(p[1] == 0.0f);
    double spread = 0.0;
    for (const auto& p : proj) spread += std::abs(p[0]);
    REQUIRE(spread > 1.0);

    std::vector<std::vector<float>> two = {{1.0f, 2.0f}, {2.0f, 1.0f}};
    REQUIRE_THROWS_AS(pca_project(two, 2), ContractError);
}

TEST_CASE("rollout rows survive a jsonl round trip and reject bad lines") {
    RolloutRow row;
    row.episode_id = 7;
    row.step = 12;
    row.high_level = "put all the blocks in a vertical line";
    row.generated_low_level = "push the red circle to the center";
    row.gt_low_level = "push the red circle near to the blue square";
    row.chunk = repeat_chunk({0.05f, -0.0125f}, 8);
    row.gt_chunk = repeat_chunk({0.0625f, 0.0f}, 8);

    std::stringstream buf;
    buf << rollout_to_json(row).dump() << "\n" << rollout_to_json(row).dump() << "\n";
    std::vector<RolloutRow> rows = parse_rollouts(buf);
    REQUIRE(rows.size() == 2);
    REQUIRE(rows[0].episode_id == row.episode_id);
    REQUIRE(rows[0].step == row.step);
    REQUIRE(rows[0].generated_low_level == row.generated_low_level);
    REQUIRE(rows[0].chunk.deltas == row.chunk.deltas);
    REQUIRE(rows[0].gt_chunk.deltas == row.gt_chunk.deltas);

    {
        std::stringstream bad;
        bad << rollout_to_json(row).dump() << "\n" << "{not json}\n";
        try {
            parse_rollouts(bad);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }
    {
        nlohmann::json j = rollout_to_json(row);
        j.erase("gt_low_level");
        std::stringstream bad;
        bad << j.dump() << "\n";
        REQUIRE_THROWS_AS(parse_rollouts(bad), IoError);
    }
}

TEST_CASE("evaluate_run aggregates a report with population std") {
    std::vector<env::StoredEpisode> eps;
    eps.push_back(env::materialize(env::generate_episode(41, env::TaskFamily::corner_gather)));
    ground::GroundingConfig gcfg;
    ground::GroundingModel grounding(gcfg, 5);
    const env::StoredEpisode& ep = eps.front();

    std::vector<RolloutRow> rows;
    const char* gens[] = {"push the red circle to the left", "push the red circle to the left corner",
                          "move the blue square near to the yellow star"};
    for (int i = 0; i < 3; ++i) {
        RolloutRow r;
        r.episode_id = ep.id;
        r.step = i;
        r.high_level = ep.high_level;
        r.generated_low_level = gens[i];
        r.gt_low_level = "push the red circle to the left";
        r.chunk = repeat_chunk({0.01f * static_cast<float>(i + 1), 0.0f}, 8);
        r.gt_chunk = repeat_chunk({0.02f, 0.0f}, 8);
        rows.push_back(std::move(r));
    }
    Report rep = evaluate_run(rows, eps, grounding, "gpla");
    REQUIRE(rep.n_rows == 3);
    REQUIRE(rep.model == "gpla");

    std::vector<double> bl;
    for (const RolloutRow& r : rows) bl.push_back(bleu(make_text_pair(r.generated_low_level, r.gt_low_level)));
    long double mean = 0.0L, var = 0.0L;
    for (double v : bl) mean += v;
    mean /= 3.0L;
    for (double v : bl) var += (v - mean) * (v - mean);
    var /= 3.0L;
    REQUIRE(rep.bleu.mean == Catch::Approx(static_cast<double>(mean)).epsilon(0).margin(1e-9));
    REQUIRE(rep.bleu.std == Catch::Approx(static_cast<double>(std::sqrt(var))).epsilon(0).margin(1e-9));
    REQUIRE(rep.ground_score >= -1.0);
    REQUIRE(rep.ground_score <= 1.0);

    std::ostringstream csv;
    write_report_header(csv);
    write_report_row(csv, rep);
    std::istringstream lines(csv.str());
    std::string header, data;
    REQUIRE(std::getline(lines, header));
    REQUIRE(header ==
            "model,bleu,bleu_std,rouge1,rouge1_std,meteor,meteor_std,mse,mse_std,mae,mae_std,cossim,cossim_std,"
            "ground_score");
    REQUIRE(std::getline(lines, data));
    REQUIRE(data.rfind("gpla,", 0) == 0);
    REQUIRE(std::count(data.begin(), data.end(), ',') == 13);
}

TEST_CASE("evaluate_run on perfect rollouts yields the identity row") {
    std::vector<env::StoredEpisode> eps;
    eps.push_back(env::materialize(env::generate_episode(43, env::TaskFamily::center_gather)));
    ground::GroundingConfig gcfg;
    ground::GroundingModel grounding(gcfg, 6);
    const env::StoredEpisode& ep = eps.front();

    std::vector<RolloutRow> rows;
    for (int t : env::keep_starts(ep.actions, ep.segments)) {
        RolloutRow r;
        r.episode_id = ep.id;
        r.step = t;
        r.high_level = ep.high_level;
        r.gt_low_level = env::segment_of(ep.segments, t).low_level;
        r.generated_low_level = r.gt_low_level;
        r.gt_chunk = env::chunk_at(ep.actions, t);
        r.chunk = r.gt_chunk;
        rows.push_back(std::move(r));
        if (rows.size() == 6) break;
    }
    REQUIRE(rows.size() >= 2);
    Report rep = evaluate_run(rows, eps, grounding, "oracle");
    REQUIRE(rep.bleu.mean == 1.0);
    REQUIRE(rep.rouge1.mean == 1.0);
    REQUIRE(rep.mse.mean == 0.0);
    REQUIRE(rep.mae.mean == 0.0);
    REQUIRE(rep.meteor.mean > 0.99);

    REQUIRE_THROWS_AS(evaluate_run({}, eps, grounding, "x"), ContractError);
    std::vector<RolloutRow> stray = rows;
    stray[0].episode_id = 987654;
    REQUIRE_THROWS_AS(evaluate_run(stray, eps, grounding, "x"), ContractError);
}
