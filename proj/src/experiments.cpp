#include "consolidate/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "consolidate/rng.hpp"

namespace ewc {

namespace {

constexpr std::uint64_t kShuffleSalt = 0x5a17;
constexpr std::uint64_t kFisherSalt = 0xf157;

std::string idx_path(const std::string& dir, Source src, Split split, bool images) {
    const char* base = src == Source::Mnist ? "" : "fashion-";
    const char* stem = split == Split::Train
                           ? (images ? "train-images-idx3-ubyte" : "train-labels-idx1-ubyte")
                           : (images ? "t10k-images-idx3-ubyte" : "t10k-labels-idx1-ubyte");
    return dir + "/" + base + stem;
}

}  // namespace

DataStore DataStore::load(const std::string& dir, bool need_fashion) {
    DataStore store;
    store.mnist_train = load_dataset(idx_path(dir, Source::Mnist, Split::Train, true),
                                     idx_path(dir, Source::Mnist, Split::Train, false),
                                     Split::Train);
    store.mnist_test = load_dataset(idx_path(dir, Source::Mnist, Split::Test, true),
                                    idx_path(dir, Source::Mnist, Split::Test, false), Split::Test);
    if (need_fashion) {
        store.fashion_train =
            load_dataset(idx_path(dir, Source::FashionMnist, Split::Train, true),
                         idx_path(dir, Source::FashionMnist, Split::Train, false), Split::Train);
        store.fashion_test =
            load_dataset(idx_path(dir, Source::FashionMnist, Split::Test, true),
                         idx_path(dir, Source::FashionMnist, Split::Test, false), Split::Test);
    }
    return store;
}

const Dataset& DataStore::train(Source s) const {
    if (s == Source::Mnist) return mnist_train;
    if (!fashion_train) throw DataError("FashionMNIST train split not loaded");
    return *fashion_train;
}

const Dataset& DataStore::test(Source s) const {
    if (s == Source::Mnist) return mnist_test;
    if (!fashion_test) throw DataError("FashionMNIST test split not loaded");
    return *fashion_test;
}

std::pair<double, double> mean_ci(const std::vector<double>& samples, double significance) {
    const std::size_t n = samples.size();
    if (n < 2) throw EwcError("mean_ci: need at least 2 samples");
    const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / double(n);
    double ss = 0.0;
    for (double x : samples) ss += (x - mean) * (x - mean);
    const double s = std::sqrt(ss / double(n - 1));
    boost::math::students_t dist(double(n - 1));
    const double t = boost::math::quantile(dist, 0.5 + significance / 2.0);
    return {mean, t * s / std::sqrt(double(n))};
}

Network make_network(NetworkKind kind) {
    if (kind == NetworkKind::DenseNet)
        return Network({784}, {Dense{784, 300}, ReLU{}, Dense{300, 150}, ReLU{}, Dense{150, 10},
                               SoftmaxOutput{}});
    return Network({1, 28, 28},
                   {Conv2d{1, 32, 5}, ReLU{}, MaxPool2d{2}, Conv2d{32, 64, 5}, ReLU{},
                    MaxPool2d{2}, Flatten{}, Dense{1024, 256}, ReLU{}, Dense{256, 10},
                    SoftmaxOutput{}});
}

namespace {

double evaluate_accuracy(const Network& net, const Dataset& ds, const TaskSpec& task,
                         NetworkKind kind) {
    const std::size_t chunk = kind == NetworkKind::DenseNet ? 2000 : 500;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < ds.size(); start += chunk) {
        const std::size_t n = std::min(chunk, ds.size() - start);
        Batch b = full_batch_range(ds, task, kind, start, n);
        auto pred = net.predict(b.images);
        for (std::size_t i = 0; i < n; ++i)
            if (pred[i] == b.labels[i]) ++hits;
    }
    return double(hits) / double(ds.size());
}

ImportanceMap task_importance(const RunConfig& cfg, const Network& net, const DataStore& store,
                              const TaskSpec& task, SIAccumulator& si, Network& net_mut) {
    const NetworkKind kind = cfg.sequence.network_kind;
    const Dataset& train = store.train(task.source);
    switch (cfg.method) {
        case Method::FisherLabel:
            return fisher_importance(net, train, task, kind, FisherMode::Label,
                                     cfg.importance_samples);
        case Method::FisherArgmax:
            return fisher_importance(net, train, task, kind, FisherMode::Argmax,
                                     cfg.importance_samples);
        case Method::FisherSampled:
            return fisher_importance(
                net, train, task, kind, FisherMode::Sampled, cfg.importance_samples,
                Rng::derive_seed(cfg.seed, kFisherSalt + std::uint64_t(task.task_id)));
        case Method::Mas:
            return mas_importance(net, train, task, kind, cfg.importance_samples);
        case Method::TotalAbsSignal:
            return total_abs_signal_importance(net, train, task, kind, cfg.importance_samples);
        case Method::Si:
            return si.finish_task(net_mut);
    }
    throw EwcError("unreachable importance method");
}

/// One task's training loop; shared by the sequential protocol and the
/// single-task pruning experiment.
void train_task(Network& net, Optimizer& opt, const RunConfig& cfg, const DataStore& store,
                const TaskSpec& task, const ConsolidatedState* state, SIAccumulator* si) {
    const NetworkKind kind = cfg.sequence.network_kind;
    Batcher batcher(store.train(task.source), task, kind, cfg.batch_size,
                    Rng::derive_seed(cfg.seed, kShuffleSalt + std::uint64_t(task.task_id)));
    GradientVector task_grad;
    std::vector<double> w_prev;
    Batch batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        batcher.begin_epoch(static_cast<std::size_t>(epoch));
        while (batcher.next(batch)) {
            auto [loss, grad] = net.backward_ce(batch.images, batch.labels);
            (void)loss;
            if (cfg.clip && cfg.clip_task_grad_only)
                grad = clip_global_norm(std::move(grad), cfg.clip_norm);
            if (si) task_grad = grad;
            if (state) add_penalty_gradient(*state, net.params(), grad);
            if (cfg.clip && !cfg.clip_task_grad_only)
                grad = clip_global_norm(std::move(grad), cfg.clip_norm);
            if (si) w_prev.assign(net.params().begin(), net.params().end());
            opt.step(net.params(), grad);
            if (si) {
                auto w = net.params();
                for (std::size_t i = 0; i < w_prev.size(); ++i) w_prev[i] = w[i] - w_prev[i];
                si->record_step(task_grad, w_prev);
            }
        }
    }
}

}  // namespace

RunResult run_sequential(const RunConfig& cfg, const DataStore& store) {
    const auto t0 = std::chrono::steady_clock::now();
    RunResult result;
    result.seed = cfg.seed;
    const NetworkKind kind = cfg.sequence.network_kind;

    Network net = make_network(kind);
    net.seeded_init(cfg.seed);
    Optimizer opt = Optimizer::adam(cfg.adam, net.param_count());

    const bool consolidating = cfg.penalty != PenaltyKind::None;
    PenaltyConfig pcfg{cfg.penalty, cfg.lambda, cfg.adam.lr};
    ImportanceMap omega_acc = ImportanceMap::zeros(net.param_count(), cfg.method);
    std::optional<ConsolidatedState> state;
    SIAccumulator si(cfg.si_xi);

    try {
        for (const TaskSpec& task : cfg.sequence.tasks) {
            const bool record_si = consolidating && cfg.method == Method::Si;
            if (record_si) si.begin_task(net);
            train_task(net, opt, cfg, store, task, state ? &*state : nullptr,
                       record_si ? &si : nullptr);
            if (cfg.record_task_checkpoints)
                result.task_checkpoint_accuracy.push_back(
                    evaluate_accuracy(net, store.test(task.source), task, kind));
            if (consolidating) {
                ImportanceMap task_map = task_importance(cfg, net, store, task, si, net);
                omega_acc = accumulate(omega_acc, task_map);
                state = consolidate(net, omega_acc, pcfg);
                if (!cfg.checkpoint_dir.empty()) {
                    const std::string dir =
                        cfg.checkpoint_dir + "/task_" + std::to_string(task.task_id);
                    std::filesystem::create_directories(dir);
                    save_consolidated(*state, dir, network_fingerprint(net));
                }
            }
        }
        for (const TaskSpec& task : cfg.sequence.tasks)
            result.per_task_accuracy.push_back(
                evaluate_accuracy(net, store.test(task.source), task, kind));
        result.average_accuracy =
            std::accumulate(result.per_task_accuracy.begin(), result.per_task_accuracy.end(), 0.0) /
            double(result.per_task_accuracy.size());
    } catch (const NumericError& e) {
        result.failed = true;
        result.failure = e.what();
    }
    result.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

SweepResult sweep_lambda(const RunConfig& base_cfg, const std::vector<double>& lambda_grid,
                         int n_runs, const DataStore& store, int jobs,
                         const std::function<void(const std::string&)>& log) {
    if (lambda_grid.empty()) throw EwcError("sweep_lambda: empty grid");
    if (n_runs < 2) throw EwcError("sweep_lambda: need n_runs >= 2");

    struct Job {
        std::size_t grid_idx;
        int run_idx;
    };
    std::vector<Job> job_list;
    for (std::size_t g = 0; g < lambda_grid.size(); ++g)
        for (int r = 0; r < n_runs; ++r) job_list.push_back({g, r});

    std::vector<RunResult> runs(job_list.size());
    std::atomic<std::size_t> next_job{0};
    std::mutex log_mu;
    auto worker = [&] {
        for (;;) {
            const std::size_t j = next_job.fetch_add(1);
            if (j >= job_list.size()) return;
            RunConfig cfg = base_cfg;
            cfg.lambda = lambda_grid[job_list[j].grid_idx];
            cfg.seed = base_cfg.seed + std::uint64_t(job_list[j].run_idx);
            runs[j] = run_sequential(cfg, store);
            if (log) {
                std::lock_guard lock(log_mu);
                log("lambda=" + std::to_string(cfg.lambda) + " seed=" + std::to_string(cfg.seed) +
                    (runs[j].failed ? " FAILED: " + runs[j].failure
                                    : " avg_acc=" + std::to_string(runs[j].average_accuracy)));
            }
        }
    };
    const int n_threads = std::max(1, std::min<int>(jobs, int(job_list.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    SweepResult sweep;
    sweep.runs = runs;
    double best = -1.0;
    for (std::size_t g = 0; g < lambda_grid.size(); ++g) {
        SweepPoint pt;
        pt.lambda = lambda_grid[g];
        pt.n_runs = n_runs;
        std::vector<double> accs;
        for (std::size_t j = 0; j < job_list.size(); ++j) {
            if (job_list[j].grid_idx != g) continue;
            if (runs[j].failed)
                ++pt.n_failed;
            else
                accs.push_back(runs[j].average_accuracy);
        }
        if (accs.size() >= 2) {
            auto [m, hw] = mean_ci(accs);
            pt.mean_accuracy = m;
            pt.ci_halfwidth = hw;
            pt.valid = true;
            if (m > best) {
                best = m;
                sweep.best_lambda = pt.lambda;
            }
        }
        sweep.points.push_back(pt);
    }
    return sweep;
}

std::string prune_criterion_name(PruneCriterion c) {
    switch (c) {
        case PruneCriterion::Magnitude: return "magnitude";
        case PruneCriterion::Fisher: return "fisher";
        case PruneCriterion::Mas: return "mas";
        case PruneCriterion::Si: return "si";
        case PruneCriterion::TotalAbsSignal: return "total-abs-signal";
    }
    return "?";
}

PruneCriterion prune_criterion_from_name(const std::string& name) {
    if (name == "magnitude") return PruneCriterion::Magnitude;
    if (name == "fisher") return PruneCriterion::Fisher;
    if (name == "mas") return PruneCriterion::Mas;
    if (name == "si") return PruneCriterion::Si;
    if (name == "total-abs-signal" || name == "tas") return PruneCriterion::TotalAbsSignal;
    throw EwcError("unknown pruning criterion \"" + name + "\"");
}

std::vector<bool> weight_mask(const Network& net) {
    std::vector<bool> mask(net.param_count(), false);
    const auto& layers = net.layers();
    const auto& slices = net.param_index();
    for (std::size_t li = 0; li < layers.size(); ++li) {
        if (slices[li].len == 0) continue;
        std::size_t n_weights = 0;
        if (const auto* d = std::get_if<Dense>(&layers[li]))
            n_weights = d->out * d->in;
        else if (const auto* c = std::get_if<Conv2d>(&layers[li]))
            n_weights = c->out_ch * c->in_ch * c->kernel * c->kernel;
        for (std::size_t i = 0; i < n_weights; ++i) mask[slices[li].offset + i] = true;
    }
    return mask;
}

std::vector<double> prune_and_eval(Network& net, std::span<const double> criterion_values,
                                   const std::vector<double>& fractions, const Batch& eval_set) {
    if (criterion_values.size() != net.param_count())
        throw ShapeError("prune_and_eval: criterion misaligned with network");
    const std::vector<bool> mask = weight_mask(net);
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) candidates.push_back(i);
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) {
                         return criterion_values[a] < criterion_values[b];
                     });

    std::vector<double> accs;
    auto params = net.params();
    for (double frac : fractions) {
        if (frac < 0.0 || frac > 1.0) throw EwcError("prune fraction must be in [0,1]");
        const std::size_t k =
            static_cast<std::size_t>(std::llround(frac * double(candidates.size())));
        std::vector<double> saved(k);
        for (std::size_t i = 0; i < k; ++i) {
            saved[i] = params[candidates[i]];
            params[candidates[i]] = 0.0;
        }
        accs.push_back(net.accuracy(eval_set.images, eval_set.labels));
        for (std::size_t i = 0; i < k; ++i) params[candidates[i]] = saved[i];
    }
    return accs;
}

std::vector<PruneCurve> run_prune_experiment(const PruneExperimentConfig& cfg,
                                             const DataStore& store,
                                             const std::function<void(const std::string&)>& log) {
    const TaskSequence seq = make_task_sequence("mnist-1", 0);
    const TaskSpec& task = seq.tasks[0];
    // accs[criterion][fraction] -> per-seed samples
    std::vector<std::vector<std::vector<double>>> samples(
        cfg.criteria.size(), std::vector<std::vector<double>>(cfg.fractions.size()));

    for (int s = 0; s < cfg.n_seeds; ++s) {
        RunConfig rc;
        rc.sequence = seq;
        rc.penalty = PenaltyKind::None;
        rc.epochs = cfg.epochs;
        rc.batch_size = cfg.batch_size;
        rc.adam = cfg.adam;
        rc.seed = cfg.seed_base + std::uint64_t(s);

        Network net = make_network(NetworkKind::DenseNet);
        net.seeded_init(rc.seed);
        Optimizer opt = Optimizer::adam(rc.adam, net.param_count());
        const bool need_si = std::find(cfg.criteria.begin(), cfg.criteria.end(),
                                       PruneCriterion::Si) != cfg.criteria.end();
        SIAccumulator si(cfg.si_xi);
        if (need_si) si.begin_task(net);
        train_task(net, opt, rc, store, task, nullptr, need_si ? &si : nullptr);
        ImportanceMap si_map;
        if (need_si) si_map = si.finish_task(net);

        const Batch eval_set =
            full_batch(store.test(Source::Mnist), task, NetworkKind::DenseNet);

        for (std::size_t c = 0; c < cfg.criteria.size(); ++c) {
            DoubleVec values;
            switch (cfg.criteria[c]) {
                case PruneCriterion::Magnitude: {
                    values.reserve(net.param_count());
                    for (double w : net.params()) values.push_back(std::abs(w));
                    break;
                }
                case PruneCriterion::Fisher:
                    values = fisher_importance(net, store.train(Source::Mnist), task,
                                               NetworkKind::DenseNet, FisherMode::Label,
                                               cfg.importance_samples)
                                 .omega;
                    break;
                case PruneCriterion::Mas:
                    values = mas_importance(net, store.train(Source::Mnist), task,
                                            NetworkKind::DenseNet, cfg.importance_samples)
                                 .omega;
                    break;
                case PruneCriterion::Si:
                    values = si_map.omega;
                    break;
                case PruneCriterion::TotalAbsSignal:
                    values = total_abs_signal_importance(net, store.train(Source::Mnist), task,
                                                         NetworkKind::DenseNet,
                                                         cfg.importance_samples)
                                 .omega;
                    break;
            }
            auto accs = prune_and_eval(net, values, cfg.fractions, eval_set);
            for (std::size_t f = 0; f < cfg.fractions.size(); ++f)
                samples[c][f].push_back(accs[f]);
            if (log)
                log("seed=" + std::to_string(rc.seed) + " criterion=" +
                    prune_criterion_name(cfg.criteria[c]) + " done");
        }
    }

    std::vector<PruneCurve> curves;
    for (std::size_t c = 0; c < cfg.criteria.size(); ++c) {
        PruneCurve curve;
        curve.criterion = cfg.criteria[c];
        curve.fractions = cfg.fractions;
        for (std::size_t f = 0; f < cfg.fractions.size(); ++f) {
            if (samples[c][f].size() >= 2) {
                auto [m, hw] = mean_ci(samples[c][f]);
                curve.mean_accuracy.push_back(m);
                curve.ci_halfwidth.push_back(hw);
            } else {
                curve.mean_accuracy.push_back(samples[c][f].empty() ? 0.0 : samples[c][f][0]);
                curve.ci_halfwidth.push_back(0.0);
            }
        }
        curves.push_back(std::move(curve));
    }
    return curves;
}

// --- serialization --------------------------------------------------------

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw EwcError(path + ": cannot open for writing");
    return out;
}

}  // namespace

void write_runs_csv(const std::string& path, const std::vector<RunResult>& runs,
                    const std::vector<double>& lambdas) {
    auto out = open_out(path);
    std::size_t n_tasks = 0;
    for (const auto& r : runs) n_tasks = std::max(n_tasks, r.per_task_accuracy.size());
    out << "seed,lambda,failed,average_accuracy";
    for (std::size_t t = 0; t < n_tasks; ++t) out << ",acc_task_" << t;
    out << "\n";
    out.precision(10);
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto& r = runs[i];
        out << r.seed << "," << (i < lambdas.size() ? lambdas[i] : 0.0) << "," << (r.failed ? 1 : 0)
            << "," << r.average_accuracy;
        for (std::size_t t = 0; t < n_tasks; ++t)
            out << "," << (t < r.per_task_accuracy.size() ? r.per_task_accuracy[t] : 0.0);
        out << "\n";
    }
}

void write_sweep_csv(const std::string& path, const SweepResult& sweep) {
    auto out = open_out(path);
    out << "lambda,mean_accuracy,ci_halfwidth,n_runs,n_failed,valid\n";
    out.precision(10);
    for (const auto& pt : sweep.points)
        out << pt.lambda << "," << pt.mean_accuracy << "," << pt.ci_halfwidth << "," << pt.n_runs
            << "," << pt.n_failed << "," << (pt.valid ? 1 : 0) << "\n";
}

void write_prune_csv(const std::string& path, const std::vector<PruneCurve>& curves) {
    auto out = open_out(path);
    out << "criterion,fraction,mean_accuracy,ci_halfwidth\n";
    out.precision(10);
    for (const auto& c : curves)
        for (std::size_t f = 0; f < c.fractions.size(); ++f)
            out << prune_criterion_name(c.criterion) << "," << c.fractions[f] << ","
                << c.mean_accuracy[f] << "," << c.ci_halfwidth[f] << "\n";
}

void write_run_json(const std::string& path, const RunConfig& cfg,
                    const std::vector<RunResult>& runs) {
    nlohmann::json j;
    j["config"] = {{"method", method_name(cfg.method)},
                   {"penalty", penalty_name(cfg.penalty)},
                   {"lambda", cfg.lambda},
                   {"epochs", cfg.epochs},
                   {"batch_size", cfg.batch_size},
                   {"seed", cfg.seed},
                   {"importance_samples", cfg.importance_samples},
                   {"n_tasks", cfg.sequence.tasks.size()}};
    j["runs"] = nlohmann::json::array();
    for (const auto& r : runs) {
        nlohmann::json rj = {{"seed", r.seed},
                             {"failed", r.failed},
                             {"average_accuracy", r.average_accuracy},
                             {"per_task_accuracy", r.per_task_accuracy},
                             {"wall_time_s", r.wall_time_s}};
        if (r.failed) rj["failure"] = r.failure;
        j["runs"].push_back(rj);
    }
    auto out = open_out(path);
    out << j.dump(2) << "\n";
}

}  // namespace ewc
