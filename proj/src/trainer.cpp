#include "cepa/trainer.hpp"

#include "cepa/rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace cepa {

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    return cfg.initial_lr * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_every);
}

std::vector<std::size_t> epoch_shuffle(std::size_t n, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(seed, 0xe90c4 + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    return order;
}

double test_accuracy(const TappedClassifier& model, const LabeledDataset& ds) {
    if (ds.test_images.empty()) return 0.0;
    std::size_t hits = 0;
    const std::size_t chunk = 128;
    for (std::size_t at = 0; at < ds.test_images.size(); at += chunk) {
        const std::size_t end = std::min(at + chunk, ds.test_images.size());
        std::vector<Tensor> batch(ds.test_images.begin() + static_cast<std::ptrdiff_t>(at),
                                  ds.test_images.begin() + static_cast<std::ptrdiff_t>(end));
        const auto preds = model.predict_batch(stack(batch));
        for (std::size_t i = 0; i < preds.size(); ++i)
            if (preds[i] == ds.test_labels[at + i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(ds.test_images.size());
}

namespace {

struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::int64_t step = 0;

    explicit AdamState(const std::vector<Tensor>& params) {
        for (const auto& p : params) {
            m.emplace_back(p.vec().size(), 0.0);
            v.emplace_back(p.vec().size(), 0.0);
        }
    }

    void update(std::vector<Tensor>& params, const TrainConfig& cfg, double lr) {
        ++step;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& w = params[i].vec();
            const auto g = params[i].grad();
            for (std::size_t j = 0; j < w.size(); ++j) {
                const double gj = g[j];
                m[i][j] = cfg.beta1 * m[i][j] + (1.0 - cfg.beta1) * gj;
                v[i][j] = cfg.beta2 * v[i][j] + (1.0 - cfg.beta2) * gj * gj;
                const double mhat = m[i][j] / bc1;
                const double vhat = v[i][j] / bc2;
                w[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg.eps));
            }
            params[i].zero_grad();
        }
    }
};

}  // namespace

TrainTrace train(TappedClassifier& model, const LabeledDataset& ds, const TrainConfig& cfg) {
    if (ds.train_images.empty()) throw std::invalid_argument("train: empty dataset");
    if (cfg.epochs < 0 || cfg.batch_size <= 0) throw std::invalid_argument("train: bad config");

    TrainTrace trace;
    model.set_requires_grad(true);
    AdamState adam(model.parameters());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        const auto order = epoch_shuffle(ds.train_images.size(), cfg.seed, epoch);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(at + static_cast<std::size_t>(cfg.batch_size), order.size());
            std::vector<Tensor> images;
            std::vector<int> labels;
            images.reserve(end - at);
            for (std::size_t i = at; i < end; ++i) {
                images.push_back(ds.train_images[order[i]]);
                labels.push_back(ds.train_labels[order[i]]);
            }
            Tensor logits = model.forward_logits(stack(images));
            Tensor loss = softmax_cross_entropy(logits, labels);
            const double lv = loss.item();
            if (!std::isfinite(lv))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(at / cfg.batch_size));
            loss_sum += lv * static_cast<double>(end - at);
            seen += end - at;
            backward(loss);
            adam.update(model.parameters(), cfg, lr);
        }
        trace.epochs.push_back(
            {epoch, lr, loss_sum / static_cast<double>(seen), test_accuracy(model, ds)});
    }
    model.set_requires_grad(false);
    return trace;
}

void TrainTrace::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("train: cannot write " + path.string());
    os << "epoch,lr,train_loss,test_acc\n";
    char buf[128];
    for (const auto& e : epochs) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", e.epoch, e.lr, e.train_loss,
                      e.test_acc);
        os << buf;
    }
}

}  // namespace cepa
