#ifndef CONSOLIDATE_IMPORTANCE_HPP
#define CONSOLIDATE_IMPORTANCE_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "consolidate/data.hpp"
#include "consolidate/network.hpp"

namespace ewc {

enum class Method {
    FisherLabel,
    FisherArgmax,
    FisherSampled,
    Mas,
    Si,
    TotalAbsSignal,
};

enum class FisherMode { Label, Argmax, Sampled };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

/// One non-negative scalar per parameter, aligned with Network::params().
struct ImportanceMap {
    DoubleVec omega;
    Method method = Method::Mas;
    std::size_t n_samples_used = 0;

    static ImportanceMap zeros(std::size_t n, Method m) {
        return ImportanceMap{DoubleVec(n, 0.0), m, 0};
    }
};

/// Mean squared per-sample gradient of the log-probability of the selected
/// class. The class is the dataset label, the argmax output, or a category
/// sampled from the output distribution.
ImportanceMap fisher_importance(const Network& net, const Dataset& train, const TaskSpec& task,
                                NetworkKind kind, FisherMode mode, std::size_t n_samples = 0,
                                std::uint64_t sample_seed = 0);

/// Mean absolute per-sample gradient of the squared L2 norm of the
/// network output softmax(f). Labels are never read.
ImportanceMap mas_importance(const Network& net, const Dataset& train, const TaskSpec& task,
                             NetworkKind kind, std::size_t n_samples = 0);

/// Mean absolute signal through each connection: |a_j * w_ij| for dense
/// weights, |b| for biases, summed over spatial positions for conv kernels.
ImportanceMap total_abs_signal_importance(const Network& net, const Dataset& train,
                                          const TaskSpec& task, NetworkKind kind,
                                          std::size_t n_samples = 0);

/// Running path integral of -g_i * dw_i over the optimizer steps of one
/// task, normalized at the task end by squared displacement plus damping.
class SIAccumulator {
public:
    explicit SIAccumulator(double xi = 0.1) : xi_(xi) {
        if (xi <= 0.0) throw EwcError("SI damping xi must be positive");
    }

    void begin_task(const Network& net);
    /// grad_task: the task-loss gradient, excluding any penalty term.
    void record_step(std::span<const double> grad_task, std::span<const double> delta_w);
    ImportanceMap finish_task(const Network& net);

    bool active() const { return active_; }

private:
    double xi_;
    bool active_ = false;
    std::vector<double> omega_path_;
    std::vector<double> w_start_;
};

/// Elementwise sum; both maps must share method and alignment.
ImportanceMap accumulate(const ImportanceMap& prev, const ImportanceMap& next);

/// Order-independent structural fingerprint of a network (layers + sizes).
std::uint64_t network_fingerprint(const Network& net);

/// Flat binary of doubles plus a JSON sidecar at path + ".json".
void save_importance(const ImportanceMap& map, const std::string& path,
                     std::uint64_t fingerprint);
ImportanceMap load_importance(const std::string& path,
                              std::optional<std::uint64_t> expect_fingerprint = {});

}  // namespace ewc

#endif
