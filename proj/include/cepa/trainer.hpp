#pragma once

#include "cepa/dataset.hpp"
#include "cepa/model.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cepa {

struct TrainConfig {
    int epochs = 20;
    int batch_size = 32;
    double initial_lr = 0.01;
    double lr_decay_factor = 0.1;
    int lr_decay_every = 10;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
};

struct EpochStats {
    int epoch;
    double lr;
    double train_loss;
    double test_acc;
};

struct TrainTrace {
    std::vector<EpochStats> epochs;
    void write_csv(const std::filesystem::path& path) const;
};

/// lr(epoch) = initial_lr * decay_factor^floor(epoch / decay_every)
double lr_at_epoch(const TrainConfig& cfg, int epoch);

/// Per-epoch shuffle order; a pure function of (seed, epoch).
std::vector<std::size_t> epoch_shuffle(std::size_t n, std::uint64_t seed, int epoch);

double test_accuracy(const TappedClassifier& model, const LabeledDataset& ds);

/// Adam training over the train split; deterministic under cfg.seed.
/// Throws NumericError if the loss goes non-finite.
TrainTrace train(TappedClassifier& model, const LabeledDataset& ds, const TrainConfig& cfg);

}  // namespace cepa
