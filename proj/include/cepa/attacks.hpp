#pragma once

#include "cepa/dataset.hpp"
#include "cepa/model.hpp"
#include "cepa/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cepa {

enum class AttackKind { none, patch, chessboard, blend, warp };

std::string to_string(AttackKind k);
AttackKind attack_kind_from_string(const std::string& s);

/// Declarative backdoor description. Seeded content (patch pixels/location,
/// warp control field) is materialized once at construction, so trigger
/// application is a pure function of the spec.
struct AttackSpec {
    AttackKind kind = AttackKind::none;
    int target_class = 0;
    std::vector<int> source_classes;  // all-to-one default: every class != target
    int per_class_poison_count = 0;
    std::uint64_t seed = 0;

    // patch
    int patch_size = 3;
    int patch_row = 0, patch_col = 0;
    std::vector<float> patch_content;  // [C, k, k]

    // chessboard
    float chess_amplitude = 2.0f / 255.0f;

    // blend
    float blend_alpha = 0.15f;

    // warp
    int warp_grid = 4;
    float warp_strength = 0.5f;
    std::vector<float> warp_field;  // control offsets, [2, grid, grid] in [-1,1]

    /// Validates parameters and materializes the seeded content for the
    /// given image geometry.
    static AttackSpec make(AttackKind kind, int target_class, int num_classes, int channels,
                           int height, int width, int per_class_poison_count, std::uint64_t seed,
                           int patch_size = 3, float chess_amplitude = 2.0f / 255.0f,
                           float blend_alpha = 0.15f, int warp_grid = 4, float warp_strength = 0.5f);
};

/// The fixed procedural blend trigger (radial sinusoid), values in [0,1].
Tensor blend_trigger_image(int channels, int height, int width);

/// Applies the trigger to one [C,H,W] image in [0,1]; the result stays in [0,1].
Tensor apply_trigger(const AttackSpec& spec, const Tensor& x);

struct PoisonedDataset {
    LabeledDataset data;
    std::vector<std::size_t> poison_indices;  // into data.train_images
    AttackSpec spec;
};

/// Applies the trigger to per_class_poison_count seeded-random train samples
/// of each source class and relabels them to the target class.
PoisonedDataset poison(const LabeledDataset& ds, const AttackSpec& spec);

/// Fraction of trigger-applied samples predicted as the target class.
/// eval_images must hold correctly-classified source-class samples.
double attack_success_rate(const TappedClassifier& model, const AttackSpec& spec,
                           const std::vector<Tensor>& eval_images);

}  // namespace cepa
