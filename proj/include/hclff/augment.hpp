#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "hclff/common.hpp"
#include "hclff/tensor.hpp"

namespace hclff {

// Two pipelines: lightweight geometric transforms for digit-style grayscale
// inputs, crop/flip plus brightness-contrast jitter and grayscale conversion
// for natural images. Draw order is fixed so a given rng stream always yields
// the same transform.
enum class AugmentFamily { None, GrayscaleGeometric, Natural };

inline std::string to_string(AugmentFamily f) {
    switch (f) {
        case AugmentFamily::None: return "none";
        case AugmentFamily::GrayscaleGeometric: return "grayscale";
        case AugmentFamily::Natural: return "natural";
    }
    return "none";
}

inline AugmentFamily augment_family_from(const std::string& s) {
    if (s == "none") return AugmentFamily::None;
    if (s == "grayscale") return AugmentFamily::GrayscaleGeometric;
    if (s == "natural") return AugmentFamily::Natural;
    throw config_error("unknown augment family '" + s + "'");
}

struct AugmentConfig {
    AugmentFamily family = AugmentFamily::None;
    double rotation_deg = 10.0;
    double translate_frac = 0.1;
    double scale_lo = 0.9, scale_hi = 1.1;
    double crop_scale_lo = 0.6, crop_scale_hi = 1.0;
    double hflip_prob = 0.5;
    double jitter_strength = 0.2;
    double jitter_prob = 0.8;
    double grayscale_prob = 0.2;

    void validate() const {
        auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
        if (!prob(hflip_prob) || !prob(jitter_prob) || !prob(grayscale_prob))
            throw config_error("augment: probabilities must lie in [0,1]");
        if (!(scale_lo > 0 && scale_hi >= scale_lo)) throw config_error("augment: bad scale range");
        if (!(crop_scale_lo > 0 && crop_scale_hi >= crop_scale_lo && crop_scale_hi <= 1.0))
            throw config_error("augment: bad crop scale range");
        if (rotation_deg < 0 || translate_frac < 0) throw config_error("augment: negative ranges");
    }
};

namespace detail {

// Bilinear lookup with zero padding outside the image.
template <class R>
inline double sample_bilinear(const Tensor<R>& img, std::size_t channel, double y, double x) {
    const long h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
    const long y0 = static_cast<long>(std::floor(y)), x0 = static_cast<long>(std::floor(x));
    const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
    auto px = [&](long yy, long xx) -> double {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
        return static_cast<double>(
            img.data[(channel * static_cast<std::size_t>(h) + static_cast<std::size_t>(yy)) *
                         static_cast<std::size_t>(w) +
                     static_cast<std::size_t>(xx)]);
    };
    return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
           fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
}

}  // namespace detail

template <class R>
Tensor<R> augment(const Tensor<R>& image, const AugmentConfig& cfg, rng::Stream& rng) {
    cfg.validate();
    if (image.rank() != 3) throw argument_error("augment: image must be [C,H,W]");
    if (cfg.family == AugmentFamily::None) return image;

    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor<R> out({c, h, w});

    if (cfg.family == AugmentFamily::GrayscaleGeometric) {
        // rotation, scale, translation composed into one inverse affine map
        const double theta = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg) * 3.14159265358979323846 / 180.0;
        const double scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
        const double tx = rng.uniform(-cfg.translate_frac, cfg.translate_frac) * static_cast<double>(w);
        const double ty = rng.uniform(-cfg.translate_frac, cfg.translate_frac) * static_cast<double>(h);
        const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
        const double cos_t = std::cos(theta) / scale, sin_t = std::sin(theta) / scale;
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const double dy = static_cast<double>(y) - cy - ty;
                    const double dx = static_cast<double>(x) - cx - tx;
                    const double sy = cy + (sin_t * dx + cos_t * dy);
                    const double sx = cx + (cos_t * dx - sin_t * dy);
                    out.at(ch, y, x) =
                        static_cast<R>(std::clamp(detail::sample_bilinear(image, ch, sy, sx), 0.0, 1.0));
                }
        return out;
    }

    // Natural pipeline: resized crop -> horizontal flip -> brightness/contrast
    // jitter -> grayscale conversion.
    const double area = rng.uniform(cfg.crop_scale_lo, cfg.crop_scale_hi) * static_cast<double>(h * w);
    const double aspect = rng.uniform(0.75, 4.0 / 3.0);
    double ch_d = std::sqrt(area / aspect), cw_d = std::sqrt(area * aspect);
    const std::size_t crop_h = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(ch_d)), 1, h);
    const std::size_t crop_w = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(cw_d)), 1, w);
    const std::size_t top = static_cast<std::size_t>(rng.uniform_int(h - crop_h + 1));
    const std::size_t left = static_cast<std::size_t>(rng.uniform_int(w - crop_w + 1));
    const bool flip = rng.uniform() < cfg.hflip_prob;

    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t xe = flip ? w - 1 - x : x;
                // map output pixel into the crop window
                const double sy = static_cast<double>(top) +
                                  (h > 1 ? static_cast<double>(y) * static_cast<double>(crop_h - 1) /
                                               static_cast<double>(h - 1)
                                         : 0.0);
                const double sx = static_cast<double>(left) +
                                  (w > 1 ? static_cast<double>(xe) * static_cast<double>(crop_w - 1) /
                                               static_cast<double>(w - 1)
                                         : 0.0);
                out.at(ch, y, x) = static_cast<R>(std::clamp(detail::sample_bilinear(image, ch, sy, sx), 0.0, 1.0));
            }

    if (rng.uniform() < cfg.jitter_prob) {
        const double brightness = rng.uniform(1.0 - cfg.jitter_strength, 1.0 + cfg.jitter_strength);
        const double contrast = rng.uniform(1.0 - cfg.jitter_strength, 1.0 + cfg.jitter_strength);
        double mean = 0.0;
        for (const R& v : out.data) mean += static_cast<double>(v);
        mean /= static_cast<double>(out.numel());
        for (R& v : out.data)
            v = static_cast<R>(std::clamp((mean + (static_cast<double>(v) * brightness - mean) * contrast), 0.0, 1.0));
    }
    if (c == 3 && rng.uniform() < cfg.grayscale_prob) {
        const std::size_t hw = h * w;
        for (std::size_t p = 0; p < hw; ++p) {
            const double luma = 0.299 * static_cast<double>(out.data[p]) +
                                0.587 * static_cast<double>(out.data[hw + p]) +
                                0.114 * static_cast<double>(out.data[2 * hw + p]);
            out.data[p] = out.data[hw + p] = out.data[2 * hw + p] = static_cast<R>(std::clamp(luma, 0.0, 1.0));
        }
    }
    return out;
}

}  // namespace hclff
