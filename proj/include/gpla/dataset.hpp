#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gpla/common.hpp"
#include "gpla/rng.hpp"
#include "gpla/synthenv.hpp"
#include "json.hpp"

namespace gpla::env {

struct Sample {
    Observation observation;
    std::string high_level;
    std::string low_level;
    ActionChunk chunk;
    int episode_id = 0;
};

inline constexpr int kHorizon = 8;
inline constexpr float kIdleThreshold = 0.1f;

// Window starts that survive the idle filter: the window must sit inside a
// single segment and its per-dimension sum of absolute deltas must exceed
// the threshold in at least one dimension.
inline std::vector<int> keep_starts(const std::vector<Vec2>& actions, const std::vector<Segment>& segments,
                                    float threshold = kIdleThreshold, int horizon = kHorizon) {
    if (threshold <= 0.0f) throw ConfigError("idle threshold must be positive");
    std::vector<int> starts;
    for (const Segment& seg : segments) {
        for (int t = seg.start; t + horizon <= seg.end; ++t) {
            float sx = 0.0f, sy = 0.0f;
            for (int k = 0; k < horizon; ++k) {
                sx += std::abs(actions[static_cast<std::size_t>(t + k)][0]);
                sy += std::abs(actions[static_cast<std::size_t>(t + k)][1]);
            }
            if (sx > threshold || sy > threshold) starts.push_back(t);
        }
    }
    return starts;
}

inline ActionChunk chunk_at(const std::vector<Vec2>& actions, int t, int horizon = kHorizon) {
    ActionChunk c;
    c.deltas.assign(actions.begin() + t, actions.begin() + t + horizon);
    return c;
}

inline const Segment& segment_of(const std::vector<Segment>& segments, int t) {
    for (const Segment& s : segments)
        if (t >= s.start && t < s.end) return s;
    throw ContractError("step index outside all segments");
}

inline std::vector<Sample> filter_idle(const Episode& ep, float threshold = kIdleThreshold,
                                       int horizon = kHorizon) {
    std::vector<Sample> out;
    for (int t : keep_starts(ep.actions, ep.segments, threshold, horizon)) {
        Sample s;
        s.observation = render(ep.frames[static_cast<std::size_t>(t)]);
        s.high_level = ep.high_level;
        s.low_level = segment_of(ep.segments, t).low_level;
        s.chunk = chunk_at(ep.actions, t, horizon);
        s.episode_id = ep.id;
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stored form: frames quantized to u8 so datasets are compact on disk and in
// memory; trainers convert per batch.

struct StoredEpisode {
    int id = 0;
    TaskFamily family = TaskFamily::line_vertical;
    std::string high_level;
    int h = 64, w = 64, n_frames = 0;
    std::vector<std::uint8_t> frames;  // n_frames * h * w * 3
    std::vector<Vec2> effectors;       // n_frames entries
    std::vector<Vec2> actions;
    std::vector<Segment> segments;

    Observation observation(int t) const {
        Observation obs;
        obs.h = h;
        obs.w = w;
        obs.effector_state = effectors[static_cast<std::size_t>(t)];
        const std::size_t px = static_cast<std::size_t>(h) * w * 3;
        obs.image.resize(px);
        const std::uint8_t* src = frames.data() + static_cast<std::size_t>(t) * px;
        for (std::size_t i = 0; i < px; ++i) obs.image[i] = src[i] / 255.0f;
        return obs;
    }
};

inline StoredEpisode materialize(const Episode& ep) {
    StoredEpisode st;
    st.id = ep.id;
    st.family = ep.family;
    st.high_level = ep.high_level;
    st.actions = ep.actions;
    st.segments = ep.segments;
    st.n_frames = static_cast<int>(ep.frames.size());
    for (const BoardState& b : ep.frames) {
        Observation obs = render(b);
        st.h = obs.h;
        st.w = obs.w;
        st.effectors.push_back(obs.effector_state);
        for (float v : obs.image)
            st.frames.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    }
    return st;
}

inline std::vector<Sample> filter_idle(const StoredEpisode& ep, float threshold = kIdleThreshold,
                                       int horizon = kHorizon) {
    std::vector<Sample> out;
    for (int t : keep_starts(ep.actions, ep.segments, threshold, horizon)) {
        Sample s;
        s.observation = ep.observation(t);
        s.high_level = ep.high_level;
        s.low_level = segment_of(ep.segments, t).low_level;
        s.chunk = chunk_at(ep.actions, t, horizon);
        s.episode_id = ep.id;
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// On-disk layout (format_version 1):
//   manifest.json                  {"format_version":1,"episodes":N,"h":..,"w":..}
//   episodes/NNNN.json             metadata, instructions, actions, segments
//   frames/NNNN.bin                raw u8, n_frames*h*w*3 bytes

namespace detail {

inline std::string pad4(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", i);
    return buf;
}

}  // namespace detail

inline void save_dataset(const std::filesystem::path& dir, const std::vector<StoredEpisode>& eps) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "episodes");
    fs::create_directories(dir / "frames");
    nlohmann::json manifest{{"format_version", 1},
                            {"episodes", eps.size()},
                            {"h", eps.empty() ? 64 : eps.front().h},
                            {"w", eps.empty() ? 64 : eps.front().w}};
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const StoredEpisode& ep = eps[i];
        nlohmann::json j;
        j["id"] = ep.id;
        j["family"] = family_name(ep.family);
        j["high_level"] = ep.high_level;
        j["h"] = ep.h;
        j["w"] = ep.w;
        j["n_frames"] = ep.n_frames;
        j["actions"] = nlohmann::json::array();
        for (const Vec2& a : ep.actions) j["actions"].push_back({a[0], a[1]});
        j["effectors"] = nlohmann::json::array();
        for (const Vec2& e : ep.effectors) j["effectors"].push_back({e[0], e[1]});
        j["segments"] = nlohmann::json::array();
        for (const Segment& s : ep.segments)
            j["segments"].push_back({{"start", s.start}, {"end", s.end}, {"low_level", s.low_level}});
        std::ofstream(dir / "episodes" / (detail::pad4(static_cast<int>(i)) + ".json")) << j.dump(2) << "\n";
        std::ofstream f(dir / "frames" / (detail::pad4(static_cast<int>(i)) + ".bin"), std::ios::binary);
        f.write(reinterpret_cast<const char*>(ep.frames.data()), static_cast<std::streamsize>(ep.frames.size()));
        if (!f) throw IoError("failed writing frames for episode " + std::to_string(i));
    }
}

inline std::vector<StoredEpisode> load_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw IoError("missing manifest.json in " + dir.string());
    nlohmann::json manifest = nlohmann::json::parse(mf);
    if (manifest.value("format_version", 0) != 1)
        throw IoError("unsupported dataset format_version in " + dir.string());
    const std::size_t n = manifest.at("episodes").get<std::size_t>();
    std::vector<StoredEpisode> eps;
    eps.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::ifstream jf(dir / "episodes" / (detail::pad4(static_cast<int>(i)) + ".json"));
        if (!jf) throw IoError("missing episode file " + std::to_string(i));
        nlohmann::json j = nlohmann::json::parse(jf);
        StoredEpisode ep;
        ep.id = j.at("id").get<int>();
        ep.family = family_from_name(j.at("family").get<std::string>());
        ep.high_level = j.at("high_level").get<std::string>();
        ep.h = j.at("h").get<int>();
        ep.w = j.at("w").get<int>();
        ep.n_frames = j.at("n_frames").get<int>();
        for (const auto& a : j.at("actions")) ep.actions.push_back({a[0].get<float>(), a[1].get<float>()});
        for (const auto& e : j.at("effectors")) ep.effectors.push_back({e[0].get<float>(), e[1].get<float>()});
        for (const auto& s : j.at("segments"))
            ep.segments.push_back(
                {s.at("start").get<int>(), s.at("end").get<int>(), s.at("low_level").get<std::string>()});
        const std::size_t bytes = static_cast<std::size_t>(ep.n_frames) * ep.h * ep.w * 3;
        std::ifstream bf(dir / "frames" / (detail::pad4(static_cast<int>(i)) + ".bin"), std::ios::binary);
        if (!bf) throw IoError("missing frames file " + std::to_string(i));
        ep.frames.resize(bytes);
        bf.read(reinterpret_cast<char*>(ep.frames.data()), static_cast<std::streamsize>(bytes));
        if (bf.gcount() != static_cast<std::streamsize>(bytes))
            throw IoError("truncated frames file " + std::to_string(i));
        eps.push_back(std::move(ep));
    }
    return eps;
}

// ---------------------------------------------------------------------------
// Episode-granularity splits.

struct SplitIndices {
    std::vector<int> train, val, test;
};

inline SplitIndices split_indices(int n, std::array<double, 3> fractions, std::uint64_t seed) {
    const double sum = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("split fractions must sum to 1");
    for (double f : fractions)
        if (f <= 0.0) throw ConfigError("split fractions must be positive");
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng = Rng(seed).stream("split");
    rng.shuffle(order);
    const int n_train = static_cast<int>(n * fractions[0]);
    const int n_val = static_cast<int>(n * fractions[1]);
    const int n_test = n - n_train - n_val;
    if (n_train < 1 || n_val < 1 || n_test < 1) throw ConfigError("not enough episodes for requested split");
    SplitIndices s;
    s.train.assign(order.begin(), order.begin() + n_train);
    s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    s.test.assign(order.begin() + n_train + n_val, order.end());
    return s;
}

struct DatasetSplit {
    std::vector<Sample> train, val, test;
};

inline DatasetSplit split_dataset(const std::vector<Episode>& episodes, std::array<double, 3> fractions,
                                  std::uint64_t seed = 0, float threshold = kIdleThreshold,
                                  int horizon = kHorizon) {
    SplitIndices idx = split_indices(static_cast<int>(episodes.size()), fractions, seed);
    DatasetSplit out;
    auto emit = [&](const std::vector<int>& ids, std::vector<Sample>& dst) {
        for (int i : ids) {
            std::vector<Sample> s = filter_idle(episodes[static_cast<std::size_t>(i)], threshold, horizon);
            dst.insert(dst.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
        }
    };
    emit(idx.train, out.train);
    emit(idx.val, out.val);
    emit(idx.test, out.test);
    return out;
}

}  // namespace gpla::env
