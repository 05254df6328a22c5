#pragma once

#include "cepa/dataset.hpp"
#include "cepa/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace cepa {

struct CepaConfig {
    double lambda_init = 0.01;
    double lambda_factor = 1.5;
    int streak_len = 5;
    double misclass_threshold = 0.9;
    int stall_window = 50;
    double delta_step = 0.01;
    int max_iterations = 2000;
};

struct CepaIteration {
    int iteration;
    double objective;
    double misclass_rate;
    double lambda;
    double mean_delta_norm;
};

/// Output of one (target class, layer) optimization.
struct CepaRun {
    int target_class = -1;
    int layer = -1;  // tap layer count
    Tensor deltas;   // [N,C,H,W], final per-sample input perturbations
    Tensor mu;       // consensus embedded perturbation, feature shape
    std::vector<CepaIteration> trace;
    double sigma = 0.0;
    double mu_norm = 0.0;
    double consensus = 0.0;  // sigma/||mu||; +inf sentinel when ||mu|| == 0
    double cosine_stat = 0.0;
    double final_misclass_rate = 0.0;
    bool stalled = false;     // stall rule fired; false means budget stop
    bool degenerate = false;  // fewer than 2 source samples
    int iterations = 0;

    void write_trace_csv(const std::filesystem::path& path) const;
};

/// Frozen per-(target, layer) optimization context: the stacked source
/// batch and its unperturbed features.
struct CepaProblem {
    const TappedClassifier* model = nullptr;
    int tap = 0;
    int target_class = 0;
    Tensor x;   // [N,C,H,W]
    Tensor f0;  // [N,F] features of x at the tap, flattened
    int n = 0;
};

CepaProblem make_cepa_problem(const TappedClassifier& model, int tap, int target_class,
                              const std::vector<Tensor>& sources);

/// Eq-style objective over the source batch:
///   mean_x [ -log p_t(x+delta_x) + lambda ||f(x+delta_x)-f(x)-mu||^2 ]
/// Differentiable w.r.t. deltas when they require grad.
Tensor cepa_objective(const CepaProblem& p, const Tensor& deltas, const Tensor& mu, double lambda);

/// Closed-form consensus update: mu = mean_x (f(x+delta_x) - f(x)), the exact
/// minimizer of the variance term. features_now is [N,F].
Tensor update_mu(const Tensor& features_now, const Tensor& f0);

/// One gradient step on each delta_x followed by projection of x+delta into
/// [0,1]. The step is applied to the per-sample loss (the 1/|D_s| factor of
/// the mean objective is absorbed into the step size so the effective step
/// does not shrink with the source-set size). Returns the objective value at
/// the pre-step point.
double delta_step(const CepaProblem& p, Tensor& deltas, const Tensor& mu, double lambda, double step);

/// Fraction of source samples with predict(x+delta_x) == target.
double misclass_rate(const CepaProblem& p, const Tensor& deltas);

/// Streak rule: all of the last streak_len rates above the threshold scales
/// lambda up, all below scales it down, anything mixed leaves it unchanged.
/// The caller resets its streak buffer after any adjustment.
double adapt_lambda(const std::vector<double>& last_rates, double lambda, const CepaConfig& cfg);

/// Stall rule: true when, over the last stall_window iterations, the running
/// best mean ||delta|| was never improved and every misclassification rate
/// stayed above the threshold; also true once the iteration budget is spent.
bool should_terminate(const std::vector<CepaIteration>& trace, const CepaConfig& cfg);

/// Mean pairwise cosine similarity over the per-sample deltas [N,...].
/// A zero-norm delta has similarity 0 with everything.
double mean_pairwise_cosine(const Tensor& deltas);

/// Full alternating optimization for one (target, layer) pair: delta gradient
/// step, closed-form mu update, lambda adaptation, termination check.
CepaRun run_cepa(const TappedClassifier& model, int tap, int target_class,
                 const std::vector<Tensor>& sources, const CepaConfig& cfg);

/// All-to-one source set: every defense sample whose class differs from the
/// putative target. (Per-(source,target) pair scans can pass a single class's
/// samples to run_cepa instead.)
std::vector<Tensor> all_to_one_sources(const CleanDefenseSet& defense, int target_class);

}  // namespace cepa
