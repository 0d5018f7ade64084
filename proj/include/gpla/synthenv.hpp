#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gpla/common.hpp"
#include "gpla/rng.hpp"

namespace gpla::env {

using Vec2 = std::array<float, 2>;

inline float dist(const Vec2& a, const Vec2& b) {
    const float dx = a[0] - b[0], dy = a[1] - b[1];
    return std::sqrt(dx * dx + dy * dy);
}

enum class ShapeKind { circle, star, hexagon, heart, cube, triangle, square, moon };
enum class ColorKind { red, green, blue, yellow };
enum class TaskFamily { line_vertical, line_horizontal, corner_gather, center_gather, shape_parallelogram };

inline constexpr int kNumShapes = 8;
inline constexpr int kNumColors = 4;
inline constexpr int kNumFamilies = 5;

inline const char* shape_name(ShapeKind s) {
    static const char* names[] = {"circle", "star", "hexagon", "heart", "cube", "triangle", "square", "moon"};
    return names[static_cast<int>(s)];
}
inline const char* color_name(ColorKind c) {
    static const char* names[] = {"red", "green", "blue", "yellow"};
    return names[static_cast<int>(c)];
}
inline const char* family_name(TaskFamily f) {
    static const char* names[] = {"line_vertical", "line_horizontal", "corner_gather", "center_gather",
                                  "shape_parallelogram"};
    return names[static_cast<int>(f)];
}
inline TaskFamily family_from_name(const std::string& s) {
    for (int i = 0; i < kNumFamilies; ++i)
        if (s == family_name(static_cast<TaskFamily>(i))) return static_cast<TaskFamily>(i);
    throw ConfigError("unknown task family '" + s + "'");
}

struct Block {
    ShapeKind shape;
    ColorKind color;
    Vec2 pos;
    float radius;
};

struct BoardState {
    std::vector<Block> blocks;
    Vec2 effector{0.0f, 0.0f};
};

struct Observation {
    std::vector<float> image;  // h*w*3, row-major RGB in [0,1], row 0 at board y=+1
    int h = 64, w = 64;
    Vec2 effector_state{0.0f, 0.0f};
};

struct ActionChunk {
    std::vector<Vec2> deltas;  // horizon x 2
};

struct Segment {
    int start = 0, end = 0;
    std::string low_level;
};

struct Episode {
    int id = 0;
    TaskFamily family = TaskFamily::line_vertical;
    std::string high_level;
    std::vector<BoardState> frames;        // actions.size() + 1 entries
    std::vector<Vec2> actions;             // effector deltas
    std::vector<Segment> segments;         // partition of [0, actions.size())
};

// ---------------------------------------------------------------------------
// Rendering: analytic inside-tests per shape, 2x2 supersampled, orthographic
// top-down. Board x right, y up; image row 0 is the top edge (y = +1).

namespace detail {

inline bool inside_shape(ShapeKind s, float dx, float dy, float r) {
    switch (s) {
        case ShapeKind::circle:
            return dx * dx + dy * dy <= r * r;
        case ShapeKind::square: {
            const float h = 0.82f * r;
            return std::abs(dx) <= h && std::abs(dy) <= h;
        }
        case ShapeKind::cube: {  // diamond silhouette
            return std::abs(dx) + std::abs(dy) <= r;
        }
        case ShapeKind::triangle: {
            if (dy > r || dy < -0.72f * r) return false;
            const float t = (r - dy) / (1.72f * r);  // 0 at apex, 1 at base
            return std::abs(dx) <= 0.95f * r * t;
        }
        case ShapeKind::hexagon: {
            const float ax = std::abs(dx), ay = std::abs(dy);
            const float a = 0.92f * r;
            return ay <= 0.866f * a && 0.866f * ax + 0.5f * ay <= 0.866f * a;
        }
        case ShapeKind::star: {
            const float rho = std::sqrt(dx * dx + dy * dy);
            if (rho > r) return false;
            const float theta = std::atan2(dy, dx);
            const float lobe = 0.5f + 0.5f * std::cos(5.0f * theta);
            return rho <= r * (0.45f + 0.55f * lobe);
        }
        case ShapeKind::heart: {
            const float u = dx / (0.92f * r);
            const float v = dy / (0.92f * r) + 0.25f;
            const float q = u * u + v * v - 1.0f;
            return q * q * q - u * u * v * v * v <= 0.0f;
        }
        case ShapeKind::moon: {
            if (dx * dx + dy * dy > r * r) return false;
            const float ox = dx - 0.45f * r, oy = dy;
            return ox * ox + oy * oy > 0.75f * r * 0.75f * r;
        }
    }
    return false;
}

inline std::array<float, 3> block_rgb(ColorKind c) {
    switch (c) {
        case ColorKind::red: return {0.85f, 0.12f, 0.12f};
        case ColorKind::green: return {0.12f, 0.65f, 0.20f};
        case ColorKind::blue: return {0.15f, 0.30f, 0.85f};
        case ColorKind::yellow: return {0.92f, 0.82f, 0.10f};
    }
    return {0, 0, 0};
}

}  // namespace detail

inline Observation render(const BoardState& board, int h = 64, int w = 64) {
    constexpr float bg[3] = {0.86f, 0.86f, 0.83f};
    constexpr float eff_rgb[3] = {0.15f, 0.15f, 0.18f};
    constexpr float eff_r = 0.055f;
    Observation obs;
    obs.h = h;
    obs.w = w;
    obs.effector_state = board.effector;
    obs.image.assign(static_cast<std::size_t>(h) * w * 3, 0.0f);
    const float sub[2] = {0.25f, 0.75f};
    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            float acc[3] = {0, 0, 0};
            for (float sy : sub) {
                for (float sx : sub) {
                    const float bx = ((col + sx) / w) * 2.0f - 1.0f;
                    const float by = 1.0f - ((row + sy) / h) * 2.0f;
                    const float* rgb = bg;
                    std::array<float, 3> c;
                    const float ex = bx - board.effector[0], ey = by - board.effector[1];
                    if (ex * ex + ey * ey <= eff_r * eff_r) {
                        rgb = eff_rgb;
                    } else {
                        for (const Block& b : board.blocks) {
                            if (detail::inside_shape(b.shape, bx - b.pos[0], by - b.pos[1], b.radius)) {
                                c = detail::block_rgb(b.color);
                                rgb = c.data();
                                break;
                            }
                        }
                    }
                    acc[0] += rgb[0];
                    acc[1] += rgb[1];
                    acc[2] += rgb[2];
                }
            }
            float* px = obs.image.data() + (static_cast<std::size_t>(row) * w + col) * 3;
            px[0] = acc[0] * 0.25f;
            px[1] = acc[1] * 0.25f;
            px[2] = acc[2] * 0.25f;
        }
    }
    return obs;
}

// ---------------------------------------------------------------------------
// Instruction templates.

inline std::string region_phrase(const Vec2& p) {
    const bool xe = std::abs(p[0]) > 0.45f, ye = std::abs(p[1]) > 0.45f;
    if (!xe && !ye) return "the center";
    if (xe && ye) {
        std::string s = "the ";
        s += p[1] < 0 ? "bottom " : "top ";
        s += p[0] < 0 ? "left" : "right";
        s += " corner";
        return s;
    }
    if (xe && std::abs(p[0]) >= std::abs(p[1])) return p[0] < 0 ? "the left" : "the right";
    return p[1] < 0 ? "the bottom" : "the top";
}

inline std::string relation_phrase(const Vec2& delta) {
    const float dx = delta[0], dy = delta[1];
    if (std::sqrt(dx * dx + dy * dy) <= 0.28f) return "near to";
    if (std::abs(dx) >= 2.0f * std::abs(dy)) return dx < 0 ? "left of" : "right of";
    if (std::abs(dy) >= 2.0f * std::abs(dx)) return dy > 0 ? "above" : "below";
    return "diagonal to";
}

inline std::string high_level_phrase(TaskFamily f) {
    switch (f) {
        case TaskFamily::line_vertical: return "put all the blocks in a vertical line";
        case TaskFamily::line_horizontal: return "put all the blocks in a horizontal line";
        case TaskFamily::corner_gather: return "put all the blocks in the bottom left corner";
        case TaskFamily::center_gather: return "put all the blocks in the center";
        case TaskFamily::shape_parallelogram: return "make a \"parallelogram\" shape out of all the blocks";
    }
    return {};
}

// ---------------------------------------------------------------------------
// Episode generation: scripted approach-then-push controller over per-family
// goal slots.

namespace detail {

struct FamilyPlan {
    int n_min, n_max;
    float r_min, r_max;
};

inline FamilyPlan family_plan(TaskFamily f) {
    // corner_gather must park every block within 0.35 of the corner, which
    // caps radii and count; other families use larger, more legible blocks
    if (f == TaskFamily::corner_gather) return {4, 6, 0.050f, 0.055f};
    if (f == TaskFamily::center_gather) return {4, 7, 0.080f, 0.110f};
    if (f == TaskFamily::shape_parallelogram) return {4, 6, 0.085f, 0.120f};
    return {4, 7, 0.080f, 0.115f};
}

inline std::vector<Vec2> goal_slots(TaskFamily f, int n, Rng& rng) {
    std::vector<Vec2> slots;
    switch (f) {
        case TaskFamily::line_vertical: {
            const float x = static_cast<float>(rng.uniform(-0.35, 0.35));
            for (int k = 0; k < n; ++k)
                slots.push_back({x, -0.8f + 1.6f * k / (n - 1)});
            break;
        }
        case TaskFamily::line_horizontal: {
            const float y = static_cast<float>(rng.uniform(-0.35, 0.35));
            for (int k = 0; k < n; ++k)
                slots.push_back({-0.8f + 1.6f * k / (n - 1), y});
            break;
        }
        case TaskFamily::corner_gather: {
            static const Vec2 offs[6] = {{0.08f, 0.08f}, {0.20f, 0.08f}, {0.08f, 0.20f},
                                         {0.20f, 0.20f}, {0.32f, 0.08f}, {0.08f, 0.32f}};
            for (int k = 0; k < n; ++k) slots.push_back({-1.0f + offs[k][0], -1.0f + offs[k][1]});
            break;
        }
        case TaskFamily::center_gather: {
            const float phase = static_cast<float>(rng.uniform(0.0, 2.0 * 3.14159265358979));
            for (int k = 0; k < n; ++k) {
                const float a = phase + 2.0f * 3.14159265f * k / n;
                slots.push_back({0.32f * std::cos(a), 0.32f * std::sin(a)});
            }
            break;
        }
        case TaskFamily::shape_parallelogram: {
            const Vec2 a{-0.55f, -0.35f}, u{0.9f, 0.1f}, v{0.25f, 0.6f};
            slots.push_back(a);
            slots.push_back({a[0] + u[0], a[1] + u[1]});
            slots.push_back({a[0] + v[0], a[1] + v[1]});
            slots.push_back({a[0] + u[0] + v[0], a[1] + u[1] + v[1]});
            if (n >= 5) slots.push_back({a[0] + 0.5f * u[0], a[1] + 0.5f * u[1]});
            if (n >= 6) slots.push_back({a[0] + v[0] + 0.5f * u[0], a[1] + v[1] + 0.5f * u[1]});
            break;
        }
    }
    return slots;
}

}  // namespace detail

inline Episode generate_episode(std::uint64_t seed, TaskFamily family) {
    constexpr float kTol = 0.015f;
    constexpr float kApproachStep = 0.17f;
    constexpr float kPushStep = 0.12f;
    constexpr int kMaxSteps = 900;

    Rng rng = Rng(seed).stream(family_name(family));

    detail::FamilyPlan plan = detail::family_plan(family);
    const int n = rng.range_int(plan.n_min, plan.n_max);

    // distinct (shape, color) combos
    std::vector<int> combos(kNumShapes * kNumColors);
    for (std::size_t i = 0; i < combos.size(); ++i) combos[i] = static_cast<int>(i);
    rng.shuffle(combos);

    BoardState board;
    for (int i = 0; i < n; ++i) {
        Block b;
        b.shape = static_cast<ShapeKind>(combos[static_cast<std::size_t>(i)] % kNumShapes);
        b.color = static_cast<ColorKind>(combos[static_cast<std::size_t>(i)] / kNumShapes);
        b.radius = static_cast<float>(rng.uniform(plan.r_min, plan.r_max));
        for (int attempt = 0;; ++attempt) {
            if (attempt > 500) throw ContractError("board placement failed");
            b.pos = {static_cast<float>(rng.uniform(-0.72, 0.72)), static_cast<float>(rng.uniform(-0.72, 0.72))};
            bool ok = true;
            for (const Block& other : board.blocks)
                if (dist(b.pos, other.pos) <= b.radius + other.radius + 0.04f) ok = false;
            if (ok) break;
        }
        board.blocks.push_back(b);
    }
    for (int attempt = 0;; ++attempt) {
        if (attempt > 500) throw ContractError("effector placement failed");
        board.effector = {static_cast<float>(rng.uniform(-0.9, 0.9)), static_cast<float>(rng.uniform(-0.9, 0.9))};
        bool ok = true;
        for (const Block& b : board.blocks)
            if (dist(board.effector, b.pos) <= b.radius + 0.06f) ok = false;
        if (ok) break;
    }

    std::vector<Vec2> slots = detail::goal_slots(family, n, rng);

    // greedy nearest-block assignment, in slot order
    std::vector<int> assigned(static_cast<std::size_t>(n), -1);
    std::vector<bool> used(static_cast<std::size_t>(n), false);
    for (int s = 0; s < n; ++s) {
        int best = -1;
        float best_d = 1e9f;
        for (int b = 0; b < n; ++b) {
            if (used[static_cast<std::size_t>(b)]) continue;
            const float d = dist(board.blocks[static_cast<std::size_t>(b)].pos, slots[static_cast<std::size_t>(s)]);
            if (d < best_d) {
                best_d = d;
                best = b;
            }
        }
        assigned[static_cast<std::size_t>(s)] = best;
        used[static_cast<std::size_t>(best)] = true;
    }

    Episode ep;
    ep.family = family;
    ep.high_level = high_level_phrase(family);
    ep.frames.push_back(board);

    auto step_to = [&](Vec2 target, float cap) {
        Vec2& eff = board.effector;
        const float d = dist(eff, target);
        const float s = std::min(cap, d);
        if (d > 1e-9f) {
            eff[0] += (target[0] - eff[0]) / d * s;
            eff[1] += (target[1] - eff[1]) / d * s;
        }
    };
    auto emit = [&](const Vec2& before) {
        Vec2 delta{board.effector[0] - before[0], board.effector[1] - before[1]};
        ep.actions.push_back(delta);
        ep.frames.push_back(board);
    };

    for (int s = 0; s < n; ++s) {
        const int bi = assigned[static_cast<std::size_t>(s)];
        Block& block = board.blocks[static_cast<std::size_t>(bi)];
        const Vec2 goal = slots[static_cast<std::size_t>(s)];
        if (dist(block.pos, goal) <= kTol) continue;

        const int seg_start = static_cast<int>(ep.actions.size());
        const float contact = block.radius + 0.035f;
        float gx = goal[0] - block.pos[0], gy = goal[1] - block.pos[1];
        const float gd = std::sqrt(gx * gx + gy * gy);
        const Vec2 dir{gx / gd, gy / gd};

        // pick the words before the block moves
        std::string low_level;
        bool use_relation = board.blocks.size() >= 2 && rng.bernoulli(0.5);
        if (use_relation) {
            int lm = -1;
            float lm_d = 1e9f;
            for (int b = 0; b < n; ++b) {
                if (b == bi) continue;
                const float d = dist(board.blocks[static_cast<std::size_t>(b)].pos, goal);
                if (d < lm_d) {
                    lm_d = d;
                    lm = b;
                }
            }
            const Block& mark = board.blocks[static_cast<std::size_t>(lm)];
            low_level = std::string("move the ") + color_name(block.color) + " " + shape_name(block.shape) + " " +
                        relation_phrase({goal[0] - mark.pos[0], goal[1] - mark.pos[1]}) + " the " +
                        color_name(mark.color) + " " + shape_name(mark.shape);
        } else {
            low_level = std::string("push the ") + color_name(block.color) + " " + shape_name(block.shape) +
                        " towards " + region_phrase(goal);
        }

        // approach a point behind the block relative to its goal
        const Vec2 waypoint{block.pos[0] - dir[0] * contact, block.pos[1] - dir[1] * contact};
        while (dist(board.effector, waypoint) > 0.02f) {
            if (static_cast<int>(ep.actions.size()) > kMaxSteps) throw ContractError("controller out of steps");
            const Vec2 before = board.effector;
            step_to(waypoint, kApproachStep);
            emit(before);
        }
        // push: block advances toward the goal, effector rides the contact point
        while (dist(block.pos, goal) > kTol) {
            if (static_cast<int>(ep.actions.size()) > kMaxSteps) throw ContractError("controller out of steps");
            const Vec2 before = board.effector;
            const float remain = dist(block.pos, goal);
            const float adv = std::min(kPushStep, remain);
            block.pos[0] += dir[0] * adv;
            block.pos[1] += dir[1] * adv;
            board.effector = {block.pos[0] - dir[0] * contact, block.pos[1] - dir[1] * contact};
            emit(before);
        }
        // occasional idle pause so the idle filter has material to drop
        if (rng.bernoulli(0.4)) {
            const int k = rng.range_int(3, 9);
            for (int i = 0; i < k; ++i) {
                const Vec2 before = board.effector;
                emit(before);  // zero delta
            }
        }
        ep.segments.push_back({seg_start, static_cast<int>(ep.actions.size()), low_level});
    }
    return ep;
}

}  // namespace gpla::env
