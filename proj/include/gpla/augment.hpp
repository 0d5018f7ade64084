#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "gpla/dataset.hpp"
#include "gpla/rng.hpp"
#include "gpla/synthenv.hpp"

namespace gpla::env {

// All random choices are drawn up front into a Decisions record, then applied
// deterministically, so tests can inspect application frequency directly and
// the geometric ops can be fused into one resampling pass.
struct AugmentDecisions {
    bool brightness = false, contrast = false, saturation = false;
    bool crop = false, v_translate = false, h_translate = false, scale = false;
    bool action_noise = false;
    float brightness_f = 1.0f, contrast_f = 1.0f, saturation_f = 1.0f;
    float crop_side = 1.0f, crop_x0 = 0.0f, crop_y0 = 0.0f;  // normalized crop window
    float v_shift = 0.0f, h_shift = 0.0f;                    // fraction of height/width
    float scale_f = 1.0f;
    std::vector<float> noise;  // horizon*2 gaussian draws, sigma already applied
};

inline AugmentDecisions draw_augment(Rng& rng, int horizon) {
    AugmentDecisions d;
    d.brightness = rng.bernoulli(0.5);
    d.brightness_f = static_cast<float>(rng.uniform(0.8, 1.2));
    d.contrast = rng.bernoulli(0.5);
    d.contrast_f = static_cast<float>(rng.uniform(0.8, 1.2));
    d.saturation = rng.bernoulli(0.5);
    d.saturation_f = static_cast<float>(rng.uniform(0.8, 1.2));
    d.crop = rng.bernoulli(0.6);
    const float area = static_cast<float>(rng.uniform(0.85, 1.0));
    d.crop_side = std::sqrt(area);
    d.crop_x0 = static_cast<float>(rng.uniform(0.0, 1.0 - d.crop_side));
    d.crop_y0 = static_cast<float>(rng.uniform(0.0, 1.0 - d.crop_side));
    d.v_translate = rng.bernoulli(0.4);
    d.v_shift = static_cast<float>(rng.uniform(-0.06, 0.06));
    d.h_translate = rng.bernoulli(0.4);
    d.h_shift = static_cast<float>(rng.uniform(-0.06, 0.06));
    d.scale = rng.bernoulli(0.3);
    d.scale_f = static_cast<float>(rng.uniform(0.9, 1.1));
    d.action_noise = rng.bernoulli(0.7);
    d.noise.resize(static_cast<std::size_t>(horizon) * 2);
    for (float& v : d.noise) v = static_cast<float>(rng.normal(0.0, 0.01));
    return d;
}

namespace detail {

struct Affine1D {
    float a = 1.0f, b = 0.0f;  // x_in = a * x_out + b, normalized [0,1] coords
    void then(float a2, float b2) {  // compose with an earlier stage
        b = a2 * b + b2;
        a = a2 * a;
    }
};

inline void resample_bilinear(std::vector<float>& img, int h, int w, const Affine1D& ax, const Affine1D& ay) {
    std::vector<float> out(img.size());
    for (int row = 0; row < h; ++row) {
        const float yn = ay.a * ((row + 0.5f) / h) + ay.b;
        const float yf = std::clamp(yn * h - 0.5f, 0.0f, static_cast<float>(h - 1));
        const int y0 = static_cast<int>(yf);
        const int y1 = std::min(y0 + 1, h - 1);
        const float wy = yf - y0;
        for (int col = 0; col < w; ++col) {
            const float xn = ax.a * ((col + 0.5f) / w) + ax.b;
            const float xf = std::clamp(xn * w - 0.5f, 0.0f, static_cast<float>(w - 1));
            const int x0 = static_cast<int>(xf);
            const int x1 = std::min(x0 + 1, w - 1);
            const float wx = xf - x0;
            for (int c = 0; c < 3; ++c) {
                const auto at = [&](int y, int x) {
                    return img[(static_cast<std::size_t>(y) * w + x) * 3 + c];
                };
                const float top = at(y0, x0) * (1 - wx) + at(y0, x1) * wx;
                const float bot = at(y1, x0) * (1 - wx) + at(y1, x1) * wx;
                out[(static_cast<std::size_t>(row) * w + col) * 3 + c] = top * (1 - wy) + bot * wy;
            }
        }
    }
    img.swap(out);
}

}  // namespace detail

inline void apply_augment_image(std::vector<float>& img, int h, int w, const AugmentDecisions& d) {
    detail::Affine1D ax, ay;
    bool geometric = false;
    if (d.scale) {  // zoom about center
        const float inv = 1.0f / d.scale_f;
        ax.then(inv, 0.5f * (1 - inv));
        ay.then(inv, 0.5f * (1 - inv));
        geometric = true;
    }
    if (d.h_translate) {
        ax.then(1.0f, -d.h_shift);
        geometric = true;
    }
    if (d.v_translate) {
        ay.then(1.0f, -d.v_shift);
        geometric = true;
    }
    if (d.crop) {
        ax.then(d.crop_side, d.crop_x0);
        ay.then(d.crop_side, d.crop_y0);
        geometric = true;
    }
    if (geometric) detail::resample_bilinear(img, h, w, ax, ay);

    if (d.brightness)
        for (float& v : img) v *= d.brightness_f;
    if (d.contrast) {
        double mean = 0.0;
        for (float v : img) mean += v;
        const float m = static_cast<float>(mean / img.size());
        for (float& v : img) v = (v - m) * d.contrast_f + m;
    }
    if (d.saturation) {
        for (std::size_t i = 0; i < img.size(); i += 3) {
            const float g = 0.299f * img[i] + 0.587f * img[i + 1] + 0.114f * img[i + 2];
            for (int c = 0; c < 3; ++c) img[i + c] = g + (img[i + c] - g) * d.saturation_f;
        }
    }
    for (float& v : img) v = std::clamp(v, 0.0f, 1.0f);
}

inline void apply_augment_actions(ActionChunk& chunk, const AugmentDecisions& d) {
    if (!d.action_noise) return;
    for (std::size_t t = 0; t < chunk.deltas.size(); ++t)
        for (int c = 0; c < 2; ++c) {
            float& v = chunk.deltas[t][static_cast<std::size_t>(c)];
            v = std::clamp(v + d.noise[t * 2 + static_cast<std::size_t>(c)], -0.2f, 0.2f);
        }
}

inline Sample augment(const Sample& sample, Rng& rng) {
    AugmentDecisions d = draw_augment(rng, static_cast<int>(sample.chunk.deltas.size()));
    Sample out = sample;
    apply_augment_image(out.observation.image, out.observation.h, out.observation.w, d);
    apply_augment_actions(out.chunk, d);
    return out;
}

}  // namespace gpla::env
