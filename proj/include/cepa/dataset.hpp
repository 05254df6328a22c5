#pragma once

#include "cepa/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cepa {

/// Labeled image dataset with train/test splits. Images are [C,H,W] tensors
/// with values in [0,1].
struct LabeledDataset {
    int num_classes = 0;
    int channels = 0, height = 0, width = 0;
    std::vector<Tensor> train_images;
    std::vector<int> train_labels;
    std::vector<Tensor> test_images;
    std::vector<int> test_labels;

    std::size_t train_size() const { return train_images.size(); }
    std::size_t test_size() const { return test_images.size(); }
};

struct SynthConfig {
    int num_classes = 5;
    int per_class_train = 400;
    int per_class_test = 100;
    int size = 16;
    std::uint64_t seed = 0;
};

/// Deterministic procedural dataset: one geometric template per class
/// (disk, cross, stripes, ring, corner square, ...) in a class-specific
/// color, with per-sample color jitter (+-0.1) and pixel noise (sigma 0.05),
/// clipped to [0,1].
LabeledDataset synth_shapes(const SynthConfig& cfg);

/// Reads the standard CIFAR-10 binary batches (data_batch_1..5.bin,
/// test_batch.bin) from a directory: records of 1 label byte + 3072 pixel
/// bytes (R,G,B planes), pixels scaled to [0,1] by /255.
LabeledDataset read_cifar10(const std::filesystem::path& dir);

/// The defender's small clean set: per_class samples per class drawn from
/// the test split. Holds the sampled test indices so evaluation can stay
/// disjoint.
struct CleanDefenseSet {
    int num_classes = 0;
    std::vector<std::vector<Tensor>> per_class;   // [class][sample]
    std::vector<std::size_t> test_indices;        // global indices into the test split

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& v : per_class) n += v.size();
        return n;
    }
    bool contains_test_index(std::size_t i) const;
};

CleanDefenseSet sample_defense_set(const LabeledDataset& ds, int per_class, std::uint64_t seed);

}  // namespace cepa
