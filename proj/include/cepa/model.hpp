#pragma once

#include "cepa/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace cepa {

struct ModelConfig {
    int in_channels = 3;
    int in_h = 16;
    int in_w = 16;
    int num_classes = 5;
    int conv1_out = 16;
    int conv2_out = 32;
    int hidden = 64;
    int ksize = 3;

    bool operator==(const ModelConfig&) const = default;
    std::string descriptor() const;
    static ModelConfig from_descriptor(const std::string& s);
};

/// Small CNN classifier with internal-layer taps:
///   conv1 -> relu -> maxpool -> conv2 -> relu -> maxpool -> flatten
///   -> dense(hidden) -> relu -> dense(classes) -> softmax
///
/// Taps sit after layer counts {2, 5, 7, 9}: the two conv relus, the
/// flattened pooled features, and the penultimate relu — a shallow-to-deep
/// spread of embeddings. forward_to(tap, x) gives the embedded features f(x);
/// forward_head(tap, f) applies the remaining layers and yields posteriors,
/// so forward_head(tap, forward_to(tap, x)) == forward_full(x).
class TappedClassifier {
public:
    TappedClassifier(ModelConfig cfg, std::uint64_t seed);  // He fan-in init

    const ModelConfig& config() const { return cfg_; }
    int num_classes() const { return cfg_.num_classes; }
    Shape input_shape() const { return {cfg_.in_channels, cfg_.in_h, cfg_.in_w}; }

    int num_taps() const { return 4; }
    const std::vector<int>& tappable_layers() const { return taps_; }
    Shape feature_shape(int tap) const;

    /// f(x) at the given tap; x is [N,C,H,W] (or a single [C,H,W]).
    Tensor forward_to(int tap, const Tensor& x) const;
    /// g(f): posteriors [N,classes] from features at the given tap.
    Tensor forward_head(int tap, const Tensor& f) const;
    /// Posteriors for x.
    Tensor forward_full(const Tensor& x) const;
    /// Pre-softmax logits for x.
    Tensor forward_logits(const Tensor& x) const;
    /// One pass that yields both the tap features and the logits.
    std::pair<Tensor, Tensor> forward_capture(int tap, const Tensor& x) const;

    /// argmax posterior; ties break to the lowest class index.
    int predict(const Tensor& x_single) const;
    std::vector<int> predict_batch(const Tensor& x) const;

    std::vector<Tensor>& parameters() { return params_; }
    const std::vector<Tensor>& parameters() const { return params_; }
    void set_requires_grad(bool v);

    void save(const std::filesystem::path& path) const;
    static TappedClassifier load(const std::filesystem::path& path);

private:
    Tensor apply_layers(const Tensor& x, int from, int to) const;
    Tensor ensure_batch(const Tensor& x) const;
    int tap_to_index(int tap) const;

    ModelConfig cfg_;
    std::vector<int> taps_;       // layer counts at which f() may be read
    std::vector<Tensor> params_;  // conv1 W,b, conv2 W,b, fc1 W,b, fc2 W,b
    int flat_dim_ = 0;
    int h1_ = 0, w1_ = 0, h2_ = 0, w2_ = 0;  // post-conv/pool spatial dims
};

}  // namespace cepa
