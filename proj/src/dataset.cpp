#include "cepa/dataset.hpp"

#include "cepa/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace cepa {

namespace {

struct Rgb {
    float r, g, b;
};

// bright, well-separated foreground colors
constexpr Rgb kPalette[8] = {
    {0.95f, 0.30f, 0.25f}, {0.25f, 0.85f, 0.35f}, {0.30f, 0.45f, 0.95f}, {0.95f, 0.85f, 0.25f},
    {0.85f, 0.35f, 0.90f}, {0.30f, 0.90f, 0.90f}, {0.95f, 0.60f, 0.25f}, {0.75f, 0.95f, 0.55f},
};

// Paints the class template into a [3,S,S] buffer (foreground mask only);
// the background stays at the base level.
void paint_template(std::vector<float>& img, int cls, int s) {
    const Rgb fg = kPalette[cls % 8];
    const float cx = (s - 1) / 2.0f, cy = (s - 1) / 2.0f;
    const int shape_kind = cls % 5;
    // offset variant so classes beyond the base shapes stay distinct
    const int variant = cls / 5;
    auto set_px = [&](int y, int x) {
        if (y < 0 || y >= s || x < 0 || x >= s) return;
        img[static_cast<std::size_t>(0) * s * s + y * s + x] = fg.r;
        img[static_cast<std::size_t>(1) * s * s + y * s + x] = fg.g;
        img[static_cast<std::size_t>(2) * s * s + y * s + x] = fg.b;
    };
    switch (shape_kind) {
        case 0: {  // filled disk
            const float rad = s * 0.28f;
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x) {
                    const float d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                    if (d2 <= rad * rad) set_px(y, x);
                }
            break;
        }
        case 1: {  // plus-shaped cross
            const int arm = std::max(1, s / 8);
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x)
                    if (std::abs(y - static_cast<int>(cy)) <= arm || std::abs(x - static_cast<int>(cx)) <= arm)
                        set_px(y, x);
            break;
        }
        case 2: {  // horizontal stripes
            const int period = std::max(2, s / 4);
            for (int y = 0; y < s; ++y)
                if ((y / (period / 2)) % 2 == 0)
                    for (int x = 0; x < s; ++x) set_px(y, x);
            break;
        }
        case 3: {  // ring
            const float r_out = s * 0.38f, r_in = s * 0.22f;
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x) {
                    const float d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                    if (d2 <= r_out * r_out && d2 >= r_in * r_in) set_px(y, x);
                }
            break;
        }
        default: {  // corner square, corner depends on the variant
            const int side = std::max(3, (2 * s) / 5);
            const int y0 = (variant % 2 == 0) ? 1 : s - side - 1;
            const int x0 = ((variant / 2) % 2 == 0) ? 1 : s - side - 1;
            for (int y = y0; y < y0 + side; ++y)
                for (int x = x0; x < x0 + side; ++x) set_px(y, x);
            break;
        }
    }
}

Tensor render_sample(int cls, int s, Rng& rng) {
    const float base = 0.15f;
    std::vector<float> img(static_cast<std::size_t>(3) * s * s, base);
    paint_template(img, cls, s);
    // per-sample uniform color jitter, one offset per channel
    float jitter[3];
    for (auto& j : jitter) j = static_cast<float>(rng.uniform(-0.1, 0.1));
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < s * s; ++i) {
            float v = img[static_cast<std::size_t>(c) * s * s + i] + jitter[c] +
                      0.05f * rng.normalf();
            img[static_cast<std::size_t>(c) * s * s + i] = std::min(1.0f, std::max(0.0f, v));
        }
    return Tensor::from_data({3, s, s}, std::move(img));
}

}  // namespace

LabeledDataset synth_shapes(const SynthConfig& cfg) {
    if (cfg.num_classes < 2) throw std::invalid_argument("synth_shapes: need at least 2 classes");
    if (cfg.size < 8) throw std::invalid_argument("synth_shapes: size must be >= 8");
    LabeledDataset ds;
    ds.num_classes = cfg.num_classes;
    ds.channels = 3;
    ds.height = ds.width = cfg.size;
    Rng rng(mix_seed(cfg.seed, 0x5a7a5e7));
    for (int cls = 0; cls < cfg.num_classes; ++cls)
        for (int i = 0; i < cfg.per_class_train; ++i) {
            ds.train_images.push_back(render_sample(cls, cfg.size, rng));
            ds.train_labels.push_back(cls);
        }
    for (int cls = 0; cls < cfg.num_classes; ++cls)
        for (int i = 0; i < cfg.per_class_test; ++i) {
            ds.test_images.push_back(render_sample(cls, cfg.size, rng));
            ds.test_labels.push_back(cls);
        }
    return ds;
}

namespace {

constexpr std::size_t kCifarRecord = 3073;  // 1 label byte + 3*1024 pixels

void read_cifar_file(const std::filesystem::path& file, std::vector<Tensor>& images,
                     std::vector<int>& labels) {
    std::ifstream is(file, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("cifar10: cannot open " + file.string());
    const auto bytes = static_cast<std::size_t>(is.tellg());
    if (bytes == 0 || bytes % kCifarRecord != 0)
        throw std::runtime_error("cifar10: " + file.string() + " has " + std::to_string(bytes) +
                                 " bytes, not a multiple of 3073");
    is.seekg(0);
    const std::size_t records = bytes / kCifarRecord;
    std::vector<unsigned char> buf(kCifarRecord);
    for (std::size_t r = 0; r < records; ++r) {
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(kCifarRecord));
        if (!is) throw std::runtime_error("cifar10: short read in " + file.string());
        const int label = buf[0];
        if (label > 9)
            throw std::runtime_error("cifar10: invalid label byte " + std::to_string(label) + " in " +
                                     file.string());
        std::vector<float> px(3072);
        for (std::size_t i = 0; i < 3072; ++i) px[i] = static_cast<float>(buf[i + 1]) / 255.0f;
        images.push_back(Tensor::from_data({3, 32, 32}, std::move(px)));
        labels.push_back(label);
    }
}

}  // namespace

LabeledDataset read_cifar10(const std::filesystem::path& dir) {
    LabeledDataset ds;
    ds.num_classes = 10;
    ds.channels = 3;
    ds.height = ds.width = 32;
    for (int i = 1; i <= 5; ++i)
        read_cifar_file(dir / ("data_batch_" + std::to_string(i) + ".bin"), ds.train_images,
                        ds.train_labels);
    read_cifar_file(dir / "test_batch.bin", ds.test_images, ds.test_labels);
    return ds;
}

bool CleanDefenseSet::contains_test_index(std::size_t i) const {
    return std::find(test_indices.begin(), test_indices.end(), i) != test_indices.end();
}

CleanDefenseSet sample_defense_set(const LabeledDataset& ds, int per_class, std::uint64_t seed) {
    if (per_class < 0) throw std::invalid_argument("sample_defense_set: negative per_class");
    CleanDefenseSet out;
    out.num_classes = ds.num_classes;
    out.per_class.resize(static_cast<std::size_t>(ds.num_classes));
    Rng rng(mix_seed(seed, 0xdef5e7));
    for (int cls = 0; cls < ds.num_classes; ++cls) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < ds.test_labels.size(); ++i)
            if (ds.test_labels[i] == cls) idx.push_back(i);
        if (static_cast<int>(idx.size()) < per_class)
            throw std::runtime_error("sample_defense_set: class " + std::to_string(cls) + " has only " +
                                     std::to_string(idx.size()) + " test samples, need " +
                                     std::to_string(per_class));
        rng.shuffle(idx);
        for (int i = 0; i < per_class; ++i) {
            out.per_class[static_cast<std::size_t>(cls)].push_back(ds.test_images[idx[static_cast<std::size_t>(i)]]);
            out.test_indices.push_back(idx[static_cast<std::size_t>(i)]);
        }
    }
    return out;
}

}  // namespace cepa
