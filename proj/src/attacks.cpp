#include "cepa/attacks.hpp"

#include "cepa/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cepa {

std::string to_string(AttackKind k) {
    switch (k) {
        case AttackKind::none: return "none";
        case AttackKind::patch: return "patch";
        case AttackKind::chessboard: return "chessboard";
        case AttackKind::blend: return "blend";
        case AttackKind::warp: return "warp";
    }
    return "none";
}

AttackKind attack_kind_from_string(const std::string& s) {
    if (s == "none" || s == "clean") return AttackKind::none;
    if (s == "patch") return AttackKind::patch;
    if (s == "chessboard") return AttackKind::chessboard;
    if (s == "blend") return AttackKind::blend;
    if (s == "warp") return AttackKind::warp;
    throw std::invalid_argument("unknown attack kind '" + s + "'");
}

AttackSpec AttackSpec::make(AttackKind kind, int target_class, int num_classes, int channels,
                            int height, int width, int per_class_poison_count, std::uint64_t seed,
                            int patch_size, float chess_amplitude, float blend_alpha, int warp_grid,
                            float warp_strength) {
    if (target_class < 0 || target_class >= num_classes)
        throw std::invalid_argument("attack: target class " + std::to_string(target_class) +
                                    " out of range");
    AttackSpec spec;
    spec.kind = kind;
    spec.target_class = target_class;
    for (int c = 0; c < num_classes; ++c)
        if (c != target_class) spec.source_classes.push_back(c);
    spec.per_class_poison_count = per_class_poison_count;
    spec.seed = seed;
    spec.patch_size = patch_size;
    spec.chess_amplitude = chess_amplitude;
    spec.blend_alpha = blend_alpha;
    spec.warp_grid = warp_grid;
    spec.warp_strength = warp_strength;

    Rng rng(mix_seed(seed, 0xa77ac5));
    switch (kind) {
        case AttackKind::patch: {
            if (patch_size < 1 || patch_size > height || patch_size > width)
                throw std::invalid_argument("attack: patch size " + std::to_string(patch_size) +
                                            " does not fit a " + std::to_string(height) + "x" +
                                            std::to_string(width) + " image");
            // location fixed per attack, uniform over valid placements
            spec.patch_row = rng.uniform_int(height - patch_size + 1);
            spec.patch_col = rng.uniform_int(width - patch_size + 1);
            spec.patch_content.resize(static_cast<std::size_t>(channels) * patch_size * patch_size);
            for (auto& v : spec.patch_content) v = static_cast<float>(rng.uniform());
            break;
        }
        case AttackKind::chessboard:
            if (!(chess_amplitude > 0.0f) && per_class_poison_count > 0)
                throw std::invalid_argument("attack: chessboard amplitude must be positive");
            break;
        case AttackKind::blend:
            if (!(blend_alpha > 0.0f) || !(blend_alpha < 1.0f))
                throw std::invalid_argument("attack: blend alpha must be in (0,1)");
            break;
        case AttackKind::warp: {
            if (warp_grid < 2) throw std::invalid_argument("attack: warp grid must be >= 2");
            if (warp_strength < 0.0f) throw std::invalid_argument("attack: warp strength must be >= 0");
            spec.warp_field.resize(static_cast<std::size_t>(2) * warp_grid * warp_grid);
            for (auto& v : spec.warp_field) v = static_cast<float>(rng.uniform(-1.0, 1.0));
            break;
        }
        case AttackKind::none: break;
    }
    return spec;
}

Tensor blend_trigger_image(int channels, int height, int width) {
    std::vector<float> t(static_cast<std::size_t>(channels) * height * width);
    const float cy = (height - 1) / 2.0f, cx = (width - 1) / 2.0f;
    const float period = std::max(2.0f, width / 3.0f);
    for (int c = 0; c < channels; ++c) {
        const float phase = 2.0943951f * c;  // 2*pi/3 per channel
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const float r = std::sqrt((y - cy) * (y - cy) + (x - cx) * (x - cx));
                t[(static_cast<std::size_t>(c) * height + y) * width + x] =
                    0.5f + 0.5f * std::sin(6.2831853f * r / period + phase);
            }
    }
    return Tensor::from_data({channels, height, width}, std::move(t));
}

namespace {

// Catmull-Rom interpolation of four samples at parameter t in [0,1]
inline float catmull_rom(float p0, float p1, float p2, float p3, float t) {
    const float t2 = t * t, t3 = t2 * t;
    return 0.5f * ((2.0f * p1) + (-p0 + p2) * t + (2.0f * p0 - 5.0f * p1 + 4.0f * p2 - p3) * t2 +
                   (-p0 + 3.0f * p1 - 3.0f * p2 + p3) * t3);
}

// Bicubically upsamples one [g,g] control plane to [h,w], clamping control
// indices at the border.
void upsample_control(const float* ctrl, int g, int h, int w, std::vector<float>& out) {
    out.resize(static_cast<std::size_t>(h) * w);
    auto at = [&](int gy, int gx) {
        gy = std::clamp(gy, 0, g - 1);
        gx = std::clamp(gx, 0, g - 1);
        return ctrl[gy * g + gx];
    };
    for (int y = 0; y < h; ++y) {
        const float v = (h > 1) ? static_cast<float>(y) * (g - 1) / (h - 1) : 0.0f;
        const int gy = std::min(static_cast<int>(v), g - 2);
        const float ty = v - gy;
        for (int x = 0; x < w; ++x) {
            const float u = (w > 1) ? static_cast<float>(x) * (g - 1) / (w - 1) : 0.0f;
            const int gx = std::min(static_cast<int>(u), g - 2);
            const float tx = u - gx;
            float rows[4];
            for (int i = 0; i < 4; ++i)
                rows[i] = catmull_rom(at(gy - 1 + i, gx - 1), at(gy - 1 + i, gx),
                                      at(gy - 1 + i, gx + 1), at(gy - 1 + i, gx + 2), tx);
            out[static_cast<std::size_t>(y) * w + x] = catmull_rom(rows[0], rows[1], rows[2], rows[3], ty);
        }
    }
}

float bilinear_sample(const float* plane, int h, int w, float sy, float sx) {
    sy = std::clamp(sy, 0.0f, static_cast<float>(h - 1));
    sx = std::clamp(sx, 0.0f, static_cast<float>(w - 1));
    const int y0 = std::min(static_cast<int>(sy), h - 2 >= 0 ? h - 2 : 0);
    const int x0 = std::min(static_cast<int>(sx), w - 2 >= 0 ? w - 2 : 0);
    const float fy = sy - y0, fx = sx - x0;
    const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const float v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x1];
    const float v10 = plane[y1 * w + x0], v11 = plane[y1 * w + x1];
    return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
}

}  // namespace

Tensor apply_trigger(const AttackSpec& spec, const Tensor& x) {
    const auto& s = x.shape();
    if (s.size() != 3) throw ShapeError("apply_trigger: expected [C,H,W], got " + shape_str(s));
    const int c = s[0], h = s[1], w = s[2];
    switch (spec.kind) {
        case AttackKind::none:
            return x.clone();
        case AttackKind::patch: {
            Tensor out = x.clone();
            const int k = spec.patch_size;
            for (int ch = 0; ch < c; ++ch)
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < k; ++j)
                        out.data()[(static_cast<std::size_t>(ch) * h + spec.patch_row + i) * w +
                                   spec.patch_col + j] =
                            spec.patch_content[(static_cast<std::size_t>(ch) * k + i) * k + j];
            return out;
        }
        case AttackKind::chessboard: {
            Tensor out = x.clone();
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx)
                        if ((y + xx) % 2 == 0) {
                            float& v = out.data()[(static_cast<std::size_t>(ch) * h + y) * w + xx];
                            v = std::min(1.0f, std::max(0.0f, v + spec.chess_amplitude));
                        }
            return out;
        }
        case AttackKind::blend: {
            Tensor trig = blend_trigger_image(c, h, w);
            Tensor out = x.clone();
            const float a = spec.blend_alpha;
            for (std::int64_t i = 0; i < out.size(); ++i)
                out.data()[i] = (1.0f - a) * out.data()[i] + a * trig.data()[i];
            return out;
        }
        case AttackKind::warp: {
            const int g = spec.warp_grid;
            std::vector<float> dx, dy;
            upsample_control(spec.warp_field.data(), g, h, w, dx);
            upsample_control(spec.warp_field.data() + g * g, g, h, w, dy);
            Tensor out = Tensor::zeros({c, h, w});
            for (int ch = 0; ch < c; ++ch) {
                const float* plane = x.data() + static_cast<std::size_t>(ch) * h * w;
                float* op = out.data() + static_cast<std::size_t>(ch) * h * w;
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        const float sy = y + spec.warp_strength * dy[static_cast<std::size_t>(y) * w + xx];
                        const float sx = xx + spec.warp_strength * dx[static_cast<std::size_t>(y) * w + xx];
                        op[y * w + xx] = bilinear_sample(plane, h, w, sy, sx);
                    }
            }
            return out;
        }
    }
    return x.clone();
}

PoisonedDataset poison(const LabeledDataset& ds, const AttackSpec& spec) {
    PoisonedDataset out;
    out.data = ds;
    out.spec = spec;
    if (spec.per_class_poison_count == 0) return out;

    for (int cls : spec.source_classes) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < ds.train_labels.size(); ++i)
            if (ds.train_labels[i] == cls) idx.push_back(i);
        if (static_cast<int>(idx.size()) < spec.per_class_poison_count)
            throw std::runtime_error("poison: source class " + std::to_string(cls) + " has only " +
                                     std::to_string(idx.size()) + " train samples, need " +
                                     std::to_string(spec.per_class_poison_count));
        Rng rng(mix_seed(spec.seed, 0x9015 + static_cast<std::uint64_t>(cls)));
        rng.shuffle(idx);
        for (int i = 0; i < spec.per_class_poison_count; ++i) {
            const std::size_t j = idx[static_cast<std::size_t>(i)];
            out.data.train_images[j] = apply_trigger(spec, ds.train_images[j]);
            out.data.train_labels[j] = spec.target_class;
            out.poison_indices.push_back(j);
        }
    }
    std::sort(out.poison_indices.begin(), out.poison_indices.end());
    return out;
}

double attack_success_rate(const TappedClassifier& model, const AttackSpec& spec,
                           const std::vector<Tensor>& eval_images) {
    if (eval_images.empty()) throw std::invalid_argument("attack_success_rate: empty evaluation set");
    std::vector<Tensor> triggered;
    triggered.reserve(eval_images.size());
    for (const auto& x : eval_images) triggered.push_back(apply_trigger(spec, x));
    const auto preds = model.predict_batch(stack(triggered));
    std::size_t hits = 0;
    for (int p : preds)
        if (p == spec.target_class) ++hits;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

}  // namespace cepa
