#ifndef CONSOLIDATE_EXPERIMENTS_HPP
#define CONSOLIDATE_EXPERIMENTS_HPP

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "consolidate/data.hpp"
#include "consolidate/importance.hpp"
#include "consolidate/network.hpp"
#include "consolidate/optimizer.hpp"
#include "consolidate/penalty.hpp"

namespace ewc {

/// Loaded corpora keyed by source. FashionMNIST is optional; it is only
/// required by the rotation sequence.
struct DataStore {
    Dataset mnist_train, mnist_test;
    std::optional<Dataset> fashion_train, fashion_test;

    static DataStore load(const std::string& dir, bool need_fashion);
    const Dataset& train(Source s) const;
    const Dataset& test(Source s) const;
};

/// Student-t confidence interval for the mean; halfwidth = t * s / sqrt(n).
std::pair<double, double> mean_ci(const std::vector<double>& samples, double significance = 0.95);

/// The two reference architectures.
Network make_network(NetworkKind kind);

struct RunConfig {
    TaskSequence sequence;
    Method method = Method::Mas;
    PenaltyKind penalty = PenaltyKind::None;
    double lambda = 0.0;
    int epochs = 6;
    std::size_t batch_size = 100;
    AdamParams adam;
    std::uint64_t seed = 0;
    std::size_t importance_samples = 0;  // 0 = full train split
    double si_xi = 0.1;
    bool clip = false;
    double clip_norm = 1.0;
    bool clip_task_grad_only = false;  // ablation switch; default clips combined
    bool record_task_checkpoints = false;
    std::string checkpoint_dir;  // per-task state dumps when non-empty
};

struct RunResult {
    std::vector<double> per_task_accuracy;  // measured after the full sequence
    double average_accuracy = 0.0;
    std::uint64_t seed = 0;
    double wall_time_s = 0.0;
    bool failed = false;
    std::string failure;
    std::vector<double> task_checkpoint_accuracy;  // current-task acc after each task
};

RunResult run_sequential(const RunConfig& cfg, const DataStore& store);

struct SweepPoint {
    double lambda = 0.0;
    double mean_accuracy = 0.0;
    double ci_halfwidth = 0.0;
    int n_runs = 0;
    int n_failed = 0;
    bool valid = false;
};

struct SweepResult {
    std::vector<SweepPoint> points;
    double best_lambda = 0.0;
    std::vector<RunResult> runs;  // all underlying runs, grid-major order
};

/// Seeds derive as base seed + run index at every grid point.
SweepResult sweep_lambda(const RunConfig& base_cfg, const std::vector<double>& lambda_grid,
                         int n_runs, const DataStore& store, int jobs = 1,
                         const std::function<void(const std::string&)>& log = {});

enum class PruneCriterion { Magnitude, Fisher, Mas, Si, TotalAbsSignal };
std::string prune_criterion_name(PruneCriterion c);
PruneCriterion prune_criterion_from_name(const std::string& name);

struct PruneCurve {
    PruneCriterion criterion = PruneCriterion::Magnitude;
    std::vector<double> fractions;
    std::vector<double> mean_accuracy;
    std::vector<double> ci_halfwidth;
};

/// True for connection weights, false for biases.
std::vector<bool> weight_mask(const Network& net);

/// Zero the fraction of smallest-criterion weights globally (biases kept),
/// evaluate, restore; one curve for one trained net.
std::vector<double> prune_and_eval(Network& net, std::span<const double> criterion_values,
                                   const std::vector<double>& fractions, const Batch& eval_set);

struct PruneExperimentConfig {
    std::vector<PruneCriterion> criteria;
    std::vector<double> fractions;
    int n_seeds = 10;
    std::uint64_t seed_base = 0;
    int epochs = 6;
    std::size_t batch_size = 100;
    AdamParams adam;
    std::size_t importance_samples = 0;
    double si_xi = 0.1;
};

/// Single-task (plain MNIST) dense nets, one per seed; curves aggregated
/// with 0.95 CIs per fraction.
std::vector<PruneCurve> run_prune_experiment(const PruneExperimentConfig& cfg,
                                             const DataStore& store,
                                             const std::function<void(const std::string&)>& log = {});

// --- result serialization -------------------------------------------------

void write_runs_csv(const std::string& path, const std::vector<RunResult>& runs,
                    const std::vector<double>& lambdas = {});
void write_sweep_csv(const std::string& path, const SweepResult& sweep);
void write_prune_csv(const std::string& path, const std::vector<PruneCurve>& curves);
void write_run_json(const std::string& path, const RunConfig& cfg,
                    const std::vector<RunResult>& runs);

}  // namespace ewc

#endif
