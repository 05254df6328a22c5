#include "cepa/model.hpp"

#include "cepa/rng.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cepa {

std::string ModelConfig::descriptor() const {
    std::ostringstream os;
    os << "smallcnn;in=" << in_channels << "x" << in_h << "x" << in_w
       << ";classes=" << num_classes << ";conv=" << conv1_out << "," << conv2_out
       << ";hidden=" << hidden << ";k=" << ksize;
    return os.str();
}

ModelConfig ModelConfig::from_descriptor(const std::string& s) {
    ModelConfig cfg;
    int n = std::sscanf(s.c_str(), "smallcnn;in=%dx%dx%d;classes=%d;conv=%d,%d;hidden=%d;k=%d",
                        &cfg.in_channels, &cfg.in_h, &cfg.in_w, &cfg.num_classes,
                        &cfg.conv1_out, &cfg.conv2_out, &cfg.hidden, &cfg.ksize);
    if (n != 8) throw std::runtime_error("checkpoint: unrecognized architecture descriptor '" + s + "'");
    return cfg;
}

namespace {

Tensor he_conv(int co, int ci, int k, Rng& rng) {
    std::vector<float> w(static_cast<std::size_t>(co) * ci * k * k);
    const double stddev = std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
    for (auto& v : w) v = static_cast<float>(rng.normal() * stddev);
    return Tensor::from_data({co, ci, k, k}, std::move(w), true);
}

Tensor he_dense(int in, int out, Rng& rng) {
    std::vector<float> w(static_cast<std::size_t>(in) * out);
    const double stddev = std::sqrt(2.0 / static_cast<double>(in));
    for (auto& v : w) v = static_cast<float>(rng.normal() * stddev);
    return Tensor::from_data({in, out}, std::move(w), true);
}

}  // namespace

TappedClassifier::TappedClassifier(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    const int k = cfg.ksize;
    const int h1c = cfg.in_h - k + 1, w1c = cfg.in_w - k + 1;
    h1_ = h1c / 2;
    w1_ = w1c / 2;
    const int h2c = h1_ - k + 1, w2c = w1_ - k + 1;
    h2_ = h2c / 2;
    w2_ = w2c / 2;
    if (h1c < 2 || w1c < 2 || h2c < 2 || w2c < 2 || h2_ < 1 || w2_ < 1)
        throw ShapeError("model: input " + std::to_string(cfg.in_h) + "x" + std::to_string(cfg.in_w) +
                         " too small for two conv/pool stages with k=" + std::to_string(k));
    flat_dim_ = cfg.conv2_out * h2_ * w2_;

    Rng rng(seed);
    params_.push_back(he_conv(cfg.conv1_out, cfg.in_channels, k, rng));
    params_.push_back(Tensor::zeros({cfg.conv1_out}, true));
    params_.push_back(he_conv(cfg.conv2_out, cfg.conv1_out, k, rng));
    params_.push_back(Tensor::zeros({cfg.conv2_out}, true));
    params_.push_back(he_dense(flat_dim_, cfg.hidden, rng));
    params_.push_back(Tensor::zeros({cfg.hidden}, true));
    params_.push_back(he_dense(cfg.hidden, cfg.num_classes, rng));
    params_.push_back(Tensor::zeros({cfg.num_classes}, true));

    taps_ = {2, 5, 7, 9};
}

Shape TappedClassifier::feature_shape(int tap) const {
    const int k = cfg_.ksize;
    switch (tap_to_index(tap)) {
        case 0: return {cfg_.conv1_out, cfg_.in_h - k + 1, cfg_.in_w - k + 1};
        case 1: return {cfg_.conv2_out, h1_ - k + 1, w1_ - k + 1};
        case 2: return {flat_dim_};
        default: return {cfg_.hidden};
    }
}

int TappedClassifier::tap_to_index(int tap) const {
    for (std::size_t i = 0; i < taps_.size(); ++i)
        if (taps_[i] == tap) return static_cast<int>(i);
    throw ShapeError("model: layer " + std::to_string(tap) + " is not tappable");
}

Tensor TappedClassifier::ensure_batch(const Tensor& x) const {
    if (x.shape().size() == 3) return reshape(x, {1, x.shape()[0], x.shape()[1], x.shape()[2]});
    return x;
}

// Layer counts: 0 conv1, 1 relu, 2 pool, 3 conv2, 4 relu, 5 pool,
// 6 flatten, 7 dense(hidden), 8 relu, 9 dense(classes).
Tensor TappedClassifier::apply_layers(const Tensor& x, int from, int to) const {
    Tensor h = x;
    for (int layer = from; layer < to; ++layer) {
        switch (layer) {
            case 0: h = add(conv2d(h, params_[0]), params_[1]); break;
            case 1: h = relu(h); break;
            case 2: h = maxpool2(h); break;
            case 3: h = add(conv2d(h, params_[2]), params_[3]); break;
            case 4: h = relu(h); break;
            case 5: h = maxpool2(h); break;
            case 6: h = flatten2(h); break;
            case 7: h = add(matmul(h, params_[4]), params_[5]); break;
            case 8: h = relu(h); break;
            case 9: h = add(matmul(h, params_[6]), params_[7]); break;
            default: break;
        }
    }
    return h;
}

Tensor TappedClassifier::forward_to(int tap, const Tensor& x) const {
    tap_to_index(tap);
    Tensor xb = ensure_batch(x);
    if (xb.shape().size() != 4 || xb.shape()[1] != cfg_.in_channels || xb.shape()[2] != cfg_.in_h ||
        xb.shape()[3] != cfg_.in_w)
        throw ShapeError("forward_to: input " + shape_str(x.shape()) + " does not match model input " +
                         shape_str(input_shape()));
    return apply_layers(xb, 0, tap);
}

Tensor TappedClassifier::forward_head(int tap, const Tensor& f) const {
    tap_to_index(tap);
    const Shape expect = feature_shape(tap);
    const Shape& got = f.shape();
    Shape batch_expect = expect;
    batch_expect.insert(batch_expect.begin(), got.empty() ? 1 : got[0]);
    Tensor fb = f;
    if (got == expect) {
        Shape with_batch = expect;
        with_batch.insert(with_batch.begin(), 1);
        fb = reshape(f, with_batch);
    } else if (got != batch_expect) {
        throw ShapeError("forward_head: features " + shape_str(got) + " do not match tap shape " +
                         shape_str(expect));
    }
    return softmax(apply_layers(fb, tap, 10));
}

Tensor TappedClassifier::forward_logits(const Tensor& x) const {
    Tensor xb = ensure_batch(x);
    if (xb.shape().size() != 4 || xb.shape()[1] != cfg_.in_channels || xb.shape()[2] != cfg_.in_h ||
        xb.shape()[3] != cfg_.in_w)
        throw ShapeError("forward: input " + shape_str(x.shape()) + " does not match model input " +
                         shape_str(input_shape()));
    return apply_layers(xb, 0, 10);
}

Tensor TappedClassifier::forward_full(const Tensor& x) const { return softmax(forward_logits(x)); }

std::pair<Tensor, Tensor> TappedClassifier::forward_capture(int tap, const Tensor& x) const {
    tap_to_index(tap);
    Tensor xb = ensure_batch(x);
    Tensor f = apply_layers(xb, 0, tap);
    Tensor logits = apply_layers(f, tap, 10);
    return {f, logits};
}

int TappedClassifier::predict(const Tensor& x_single) const {
    Tensor logits = forward_logits(x_single);
    return argmax_rows(logits)[0];
}

std::vector<int> TappedClassifier::predict_batch(const Tensor& x) const {
    return argmax_rows(forward_logits(x));
}

void TappedClassifier::set_requires_grad(bool v) {
    for (auto& p : params_) p.set_requires_grad(v);
}

// ---------------------------------------------------------------------------
// checkpoint IO: little-endian binary
//   "CEPA" | version u32 | descriptor len u32 + bytes | param count u32 |
//   per param: rank u32, dims u32 x rank, f32 data
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(os, v);
}

float get_f32(std::istream& is) {
    const std::uint32_t v = get_u32(is);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

}  // namespace

void TappedClassifier::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
    os.write("CEPA", 4);
    put_u32(os, kCheckpointVersion);
    const std::string desc = cfg_.descriptor();
    put_u32(os, static_cast<std::uint32_t>(desc.size()));
    os.write(desc.data(), static_cast<std::streamsize>(desc.size()));
    put_u32(os, static_cast<std::uint32_t>(params_.size()));
    for (const auto& p : params_) {
        put_u32(os, static_cast<std::uint32_t>(p.shape().size()));
        for (int d : p.shape()) put_u32(os, static_cast<std::uint32_t>(d));
        for (float v : p.vec()) put_f32(os, v);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

TappedClassifier TappedClassifier::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "CEPA")
        throw std::runtime_error("checkpoint: bad magic in " + path.string());
    const std::uint32_t version = get_u32(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t desc_len = get_u32(is);
    std::string desc(desc_len, '\0');
    is.read(desc.data(), desc_len);
    if (!is) throw std::runtime_error("checkpoint: truncated descriptor");

    TappedClassifier model(ModelConfig::from_descriptor(desc), 0);
    const std::uint32_t count = get_u32(is);
    if (count != model.params_.size())
        throw std::runtime_error("checkpoint: parameter count mismatch for descriptor '" + desc + "'");
    for (auto& p : model.params_) {
        const std::uint32_t rank = get_u32(is);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<int>(get_u32(is));
        if (shape != p.shape())
            throw std::runtime_error("checkpoint: tensor shape " + shape_str(shape) +
                                     " does not match architecture (" + shape_str(p.shape()) + ")");
        for (auto& v : p.vec()) v = get_f32(is);
    }
    if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
    return model;
}

}  // namespace cepa
