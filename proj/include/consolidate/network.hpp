#ifndef CONSOLIDATE_NETWORK_HPP
#define CONSOLIDATE_NETWORK_HPP

#include <cstdint>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "consolidate/tensor.hpp"

namespace ewc {

struct Dense {
    std::size_t in, out;
};
struct Conv2d {
    std::size_t in_ch, out_ch, kernel, stride = 1;
};
struct MaxPool2d {
    std::size_t kernel;
};
struct ReLU {};
struct Flatten {};
struct SoftmaxOutput {};

using LayerSpec = std::variant<Dense, Conv2d, MaxPool2d, ReLU, Flatten, SoftmaxOutput>;

struct ParamSlice {
    std::size_t offset = 0, len = 0;
};

/// Flat per-parameter gradient, aligned with Network::params().
using GradientVector = DoubleVec;

/// Feed-forward network with a flat, stably-indexed parameter vector.
/// Shapes exclude the batch axis; forward() prepends it.
class Network {
public:
    Network(std::vector<std::size_t> input_shape, std::vector<LayerSpec> layers);

    std::size_t param_count() const { return params_.size(); }
    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }
    DoubleVec& param_vector() { return params_; }

    const std::vector<LayerSpec>& layers() const { return layers_; }
    /// Per-layer (offset, len) into the parameter vector; len 0 for
    /// parameterless layers. Contiguous and covering by construction.
    const std::vector<ParamSlice>& param_index() const { return slices_; }
    const std::vector<std::size_t>& input_shape() const { return input_shape_; }
    const std::vector<std::size_t>& output_shape() const { return shapes_.back(); }
    /// Per-sample shape entering layer li.
    const std::vector<std::size_t>& layer_input_shape(std::size_t li) const {
        return li == 0 ? input_shape_ : shapes_[li - 1];
    }
    bool has_softmax_output() const { return softmax_output_; }

    /// Fan-in-scaled uniform weights, zero biases. Same seed, same bits.
    void seeded_init(std::uint64_t seed);

    /// Batched forward; applies the softmax when the net declares one.
    Tensor forward(const Tensor& batch) const;
    /// Forward stopping before the softmax.
    Tensor forward_logits(const Tensor& batch) const;

    struct Trace {
        std::vector<Tensor> acts;                       // acts[0] = input
        std::vector<std::vector<std::size_t>> pool_arg; // argmax per pool layer
    };
    Tensor forward_trace(const Tensor& batch, Trace& trace) const;

    /// Reverse pass seeded with d(objective)/d(logits).
    GradientVector backward_from_logits(const Trace& trace, const Tensor& dlogits) const;

    /// Per-sample gradient statistic accumulated into omega: for each sample
    /// row of dlogits, the squared (or absolute) per-sample parameter
    /// gradient is added. Equals a batch-size-1 loop over backward_from_logits.
    enum class PerSampleStat { SquareSum, AbsSum };
    void accumulate_per_sample(const Trace& trace, const Tensor& dlogits, PerSampleStat stat,
                               std::span<double> omega) const;

    /// Mean softmax cross-entropy over the batch and its parameter gradient.
    std::pair<double, GradientVector> backward_ce(const Tensor& batch,
                                                  const std::vector<std::uint8_t>& labels) const;
    double loss_ce(const Tensor& batch, const std::vector<std::uint8_t>& labels) const;

    std::vector<std::size_t> predict(const Tensor& batch) const;
    double accuracy(const Tensor& batch, const std::vector<std::uint8_t>& labels) const;

private:
    std::vector<std::size_t> input_shape_;
    std::vector<LayerSpec> layers_;
    std::vector<ParamSlice> slices_;
    std::vector<std::vector<std::size_t>> shapes_;  // per-sample output shape of each layer
    DoubleVec params_;
    bool softmax_output_ = false;
};

/// Row-wise softmax of (batch, classes) logits.
Tensor softmax_rows(const Tensor& logits);

/// Scale grad so its L2 norm is at most max_norm; direction preserved.
GradientVector clip_global_norm(GradientVector grad, double max_norm);
double l2_norm(std::span<const double> v);

}  // namespace ewc

#endif
