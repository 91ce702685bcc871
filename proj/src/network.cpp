#include "consolidate/network.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "consolidate/rng.hpp"

namespace ewc {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::size_t shape_product(const std::vector<std::size_t>& s) {
    return Tensor::element_count(s);
}

std::string layer_name(const LayerSpec& spec) {
    return std::visit(
        [](const auto& l) -> std::string {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, Dense>) return "Dense";
            else if constexpr (std::is_same_v<T, Conv2d>) return "Conv2d";
            else if constexpr (std::is_same_v<T, MaxPool2d>) return "MaxPool2d";
            else if constexpr (std::is_same_v<T, ReLU>) return "ReLU";
            else if constexpr (std::is_same_v<T, Flatten>) return "Flatten";
            else return "SoftmaxOutput";
        },
        spec);
}

}  // namespace

Network::Network(std::vector<std::size_t> input_shape, std::vector<LayerSpec> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
    std::vector<std::size_t> cur = input_shape_;
    std::size_t offset = 0;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        const LayerSpec& spec = layers_[li];
        std::size_t len = 0;
        if (const auto* d = std::get_if<Dense>(&spec)) {
            if (cur.size() != 1 || cur[0] != d->in)
                throw ShapeError("Dense layer " + std::to_string(li) + " expects input (" +
                                 std::to_string(d->in) + "), got " + Tensor::shape_string(cur));
            len = d->out * d->in + d->out;
            cur = {d->out};
        } else if (const auto* c = std::get_if<Conv2d>(&spec)) {
            if (cur.size() != 3 || cur[0] != c->in_ch)
                throw ShapeError("Conv2d layer " + std::to_string(li) + " expects (" +
                                 std::to_string(c->in_ch) + ", H, W), got " +
                                 Tensor::shape_string(cur));
            if (cur[1] < c->kernel || cur[2] < c->kernel)
                throw ShapeError("Conv2d layer " + std::to_string(li) + " kernel larger than input " +
                                 Tensor::shape_string(cur));
            std::size_t oh = (cur[1] - c->kernel) / c->stride + 1;
            std::size_t ow = (cur[2] - c->kernel) / c->stride + 1;
            len = c->out_ch * c->in_ch * c->kernel * c->kernel + c->out_ch;
            cur = {c->out_ch, oh, ow};
        } else if (const auto* p = std::get_if<MaxPool2d>(&spec)) {
            if (cur.size() != 3)
                throw ShapeError("MaxPool2d layer " + std::to_string(li) + " expects (C, H, W), got " +
                                 Tensor::shape_string(cur));
            cur = {cur[0], cur[1] / p->kernel, cur[2] / p->kernel};
        } else if (std::holds_alternative<Flatten>(spec)) {
            cur = {shape_product(cur)};
        } else if (std::holds_alternative<SoftmaxOutput>(spec)) {
            if (li + 1 != layers_.size())
                throw ShapeError("SoftmaxOutput must be the final layer");
            if (cur.size() != 1)
                throw ShapeError("SoftmaxOutput expects a flat input, got " +
                                 Tensor::shape_string(cur));
            softmax_output_ = true;
        }
        // ReLU keeps the shape
        slices_.push_back({offset, len});
        offset += len;
        shapes_.push_back(cur);
    }
    params_.assign(offset, 0.0);
}

void Network::seeded_init(std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        double* p = params_.data() + slices_[li].offset;
        if (const auto* d = std::get_if<Dense>(&layers_[li])) {
            const double bound = std::sqrt(6.0 / static_cast<double>(d->in));
            for (std::size_t i = 0; i < d->out * d->in; ++i) p[i] = rng.uniform(-bound, bound);
            for (std::size_t i = 0; i < d->out; ++i) p[d->out * d->in + i] = 0.0;
        } else if (const auto* c = std::get_if<Conv2d>(&layers_[li])) {
            const std::size_t fan_in = c->in_ch * c->kernel * c->kernel;
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            const std::size_t nw = c->out_ch * fan_in;
            for (std::size_t i = 0; i < nw; ++i) p[i] = rng.uniform(-bound, bound);
            for (std::size_t i = 0; i < c->out_ch; ++i) p[nw + i] = 0.0;
        }
    }
}

Tensor Network::forward_trace(const Tensor& batch, Trace& trace) const {
    if (batch.rank() != input_shape_.size() + 1 ||
        !std::equal(input_shape_.begin(), input_shape_.end(), batch.shape.begin() + 1))
        throw ShapeError("network input: expected (batch, " +
                         Tensor::shape_string(input_shape_) + "), got " +
                         Tensor::shape_string(batch.shape));
    const std::size_t B = batch.shape[0];

    trace.acts.clear();
    trace.pool_arg.assign(layers_.size(), {});
    trace.acts.reserve(layers_.size() + 1);
    trace.acts.push_back(batch);

    for (std::size_t li = 0; li < layers_.size(); ++li) {
        const Tensor& in = trace.acts.back();
        const LayerSpec& spec = layers_[li];
        if (const auto* d = std::get_if<Dense>(&spec)) {
            Tensor out = Tensor::zeros({B, d->out});
            CMapMat A(in.data.data(), B, d->in);
            CMapMat W(params_.data() + slices_[li].offset, d->out, d->in);
            Eigen::Map<const Eigen::VectorXd> b(params_.data() + slices_[li].offset + d->out * d->in,
                                                d->out);
            MapMat O(out.data.data(), B, d->out);
            O.noalias() = A * W.transpose();
            O.rowwise() += b.transpose();
            trace.acts.push_back(std::move(out));
        } else if (const auto* c = std::get_if<Conv2d>(&spec)) {
            const std::size_t H = in.shape[2], Wd = in.shape[3];
            const std::size_t k = c->kernel, st = c->stride;
            const std::size_t oh = (H - k) / st + 1, ow = (Wd - k) / st + 1;
            const std::size_t K = c->in_ch * k * k, P = oh * ow;
            Tensor out = Tensor::zeros({B, c->out_ch, oh, ow});
            CMapMat W(params_.data() + slices_[li].offset, c->out_ch, K);
            Eigen::Map<const Eigen::VectorXd> bias(
                params_.data() + slices_[li].offset + c->out_ch * K, c->out_ch);
            Eigen::MatrixXd col(K, P);
            for (std::size_t s = 0; s < B; ++s) {
                const double* src = in.data.data() + s * c->in_ch * H * Wd;
                for (std::size_t ci = 0; ci < c->in_ch; ++ci)
                    for (std::size_t kr = 0; kr < k; ++kr)
                        for (std::size_t kc = 0; kc < k; ++kc) {
                            const std::size_t row = (ci * k + kr) * k + kc;
                            for (std::size_t r = 0; r < oh; ++r)
                                for (std::size_t cc = 0; cc < ow; ++cc)
                                    col(row, r * ow + cc) =
                                        src[(ci * H + r * st + kr) * Wd + cc * st + kc];
                        }
                MapMat O(out.data.data() + s * c->out_ch * P, c->out_ch, P);
                O.noalias() = W * col;
                O.colwise() += bias;
            }
            trace.acts.push_back(std::move(out));
        } else if (const auto* p = std::get_if<MaxPool2d>(&spec)) {
            const std::size_t C = in.shape[1], H = in.shape[2], Wd = in.shape[3];
            const std::size_t k = p->kernel, oh = H / k, ow = Wd / k;
            Tensor out = Tensor::zeros({B, C, oh, ow});
            auto& arg = trace.pool_arg[li];
            arg.assign(B * C * oh * ow, 0);
            for (std::size_t s = 0; s < B; ++s)
                for (std::size_t ci = 0; ci < C; ++ci) {
                    const double* plane = in.data.data() + (s * C + ci) * H * Wd;
                    for (std::size_t r = 0; r < oh; ++r)
                        for (std::size_t cc = 0; cc < ow; ++cc) {
                            double best = -std::numeric_limits<double>::infinity();
                            std::size_t best_idx = 0;
                            for (std::size_t kr = 0; kr < k; ++kr)
                                for (std::size_t kc = 0; kc < k; ++kc) {
                                    const std::size_t idx = (r * k + kr) * Wd + cc * k + kc;
                                    if (plane[idx] > best) {
                                        best = plane[idx];
                                        best_idx = idx;
                                    }
                                }
                            const std::size_t o = ((s * C + ci) * oh + r) * ow + cc;
                            out.data[o] = best;
                            arg[o] = best_idx;
                        }
                }
            trace.acts.push_back(std::move(out));
        } else if (std::holds_alternative<ReLU>(spec)) {
            Tensor out = in;
            for (double& v : out.data)
                if (v < 0.0) v = 0.0;
            trace.acts.push_back(std::move(out));
        } else if (std::holds_alternative<Flatten>(spec)) {
            Tensor out(std::vector<std::size_t>{B, shapes_[li][0]}, in.data);
            trace.acts.push_back(std::move(out));
        } else {  // SoftmaxOutput: logits pass through, softmax applied by forward()
            trace.acts.push_back(in);
        }
    }
    return trace.acts.back();
}

Tensor Network::forward_logits(const Tensor& batch) const {
    Trace t;
    return forward_trace(batch, t);
}

Tensor softmax_rows(const Tensor& logits) {
    Tensor out = logits;
    const std::size_t B = logits.shape[0], C = logits.shape[1];
    for (std::size_t r = 0; r < B; ++r) {
        double* row = out.data.data() + r * C;
        const double m = *std::max_element(row, row + C);
        double sum = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            row[c] = std::exp(row[c] - m);
            sum += row[c];
        }
        for (std::size_t c = 0; c < C; ++c) row[c] /= sum;
    }
    return out;
}

Tensor Network::forward(const Tensor& batch) const {
    Tensor logits = forward_logits(batch);
    logits.check_finite("forward");
    return softmax_output_ ? softmax_rows(logits) : logits;
}

GradientVector Network::backward_from_logits(const Trace& trace, const Tensor& dlogits) const {
    GradientVector grad(params_.size(), 0.0);
    Tensor delta = dlogits;
    const std::size_t B = delta.shape[0];

    for (std::size_t li = layers_.size(); li-- > 0;) {
        const LayerSpec& spec = layers_[li];
        const Tensor& in = trace.acts[li];
        if (const auto* d = std::get_if<Dense>(&spec)) {
            CMapMat A(in.data.data(), B, d->in);
            CMapMat D(delta.data.data(), B, d->out);
            CMapMat W(params_.data() + slices_[li].offset, d->out, d->in);
            MapMat dW(grad.data() + slices_[li].offset, d->out, d->in);
            Eigen::Map<Eigen::VectorXd> db(grad.data() + slices_[li].offset + d->out * d->in,
                                           d->out);
            dW.noalias() = D.transpose() * A;
            db = D.colwise().sum().transpose();
            Tensor din = Tensor::zeros({B, d->in});
            MapMat Din(din.data.data(), B, d->in);
            Din.noalias() = D * W;
            delta = std::move(din);
        } else if (const auto* c = std::get_if<Conv2d>(&spec)) {
            const std::size_t H = in.shape[2], Wd = in.shape[3];
            const std::size_t k = c->kernel, st = c->stride;
            const std::size_t oh = (H - k) / st + 1, ow = (Wd - k) / st + 1;
            const std::size_t K = c->in_ch * k * k, P = oh * ow;
            CMapMat W(params_.data() + slices_[li].offset, c->out_ch, K);
            MapMat dW(grad.data() + slices_[li].offset, c->out_ch, K);
            Eigen::Map<Eigen::VectorXd> db(grad.data() + slices_[li].offset + c->out_ch * K,
                                           c->out_ch);
            Tensor din = Tensor::zeros(in.shape);
            Eigen::MatrixXd col(K, P), dcol(K, P);
            for (std::size_t s = 0; s < B; ++s) {
                const double* src = in.data.data() + s * c->in_ch * H * Wd;
                for (std::size_t ci = 0; ci < c->in_ch; ++ci)
                    for (std::size_t kr = 0; kr < k; ++kr)
                        for (std::size_t kc = 0; kc < k; ++kc) {
                            const std::size_t row = (ci * k + kr) * k + kc;
                            for (std::size_t r = 0; r < oh; ++r)
                                for (std::size_t cc = 0; cc < ow; ++cc)
                                    col(row, r * ow + cc) =
                                        src[(ci * H + r * st + kr) * Wd + cc * st + kc];
                        }
                CMapMat D(delta.data.data() + s * c->out_ch * P, c->out_ch, P);
                dW.noalias() += D * col.transpose();
                db += D.rowwise().sum();
                dcol.noalias() = W.transpose() * D;
                double* dst = din.data.data() + s * c->in_ch * H * Wd;
                for (std::size_t ci = 0; ci < c->in_ch; ++ci)
                    for (std::size_t kr = 0; kr < k; ++kr)
                        for (std::size_t kc = 0; kc < k; ++kc) {
                            const std::size_t row = (ci * k + kr) * k + kc;
                            for (std::size_t r = 0; r < oh; ++r)
                                for (std::size_t cc = 0; cc < ow; ++cc)
                                    dst[(ci * H + r * st + kr) * Wd + cc * st + kc] +=
                                        dcol(row, r * ow + cc);
                        }
            }
            delta = std::move(din);
        } else if (std::holds_alternative<MaxPool2d>(spec)) {
            Tensor din = Tensor::zeros(in.shape);
            const auto& arg = trace.pool_arg[li];
            const std::size_t C = in.shape[1], H = in.shape[2], Wd = in.shape[3];
            const std::size_t per_plane = H * Wd;
            const std::size_t on = delta.size() / (B * C);
            for (std::size_t s = 0; s < B; ++s)
                for (std::size_t ci = 0; ci < C; ++ci) {
                    const std::size_t plane = (s * C + ci);
                    for (std::size_t o = 0; o < on; ++o)
                        din.data[plane * per_plane + arg[plane * on + o]] +=
                            delta.data[plane * on + o];
                }
            delta = std::move(din);
        } else if (std::holds_alternative<ReLU>(spec)) {
            Tensor din = delta;
            for (std::size_t i = 0; i < din.size(); ++i)
                if (in.data[i] <= 0.0) din.data[i] = 0.0;
            delta = std::move(din);
        } else if (std::holds_alternative<Flatten>(spec)) {
            delta = Tensor(in.shape, std::move(delta.data));
        }
        // SoftmaxOutput: the seed gradient is already w.r.t. logits
    }
    return grad;
}

void Network::accumulate_per_sample(const Trace& trace, const Tensor& dlogits, PerSampleStat stat,
                                    std::span<double> omega) const {
    if (omega.size() != params_.size())
        throw ShapeError("accumulate_per_sample: omega length mismatch");
    const bool square = stat == PerSampleStat::SquareSum;
    Tensor delta = dlogits;
    const std::size_t B = delta.shape[0];

    for (std::size_t li = layers_.size(); li-- > 0;) {
        const LayerSpec& spec = layers_[li];
        const Tensor& in = trace.acts[li];
        if (const auto* d = std::get_if<Dense>(&spec)) {
            CMapMat A(in.data.data(), B, d->in);
            CMapMat D(delta.data.data(), B, d->out);
            CMapMat W(params_.data() + slices_[li].offset, d->out, d->in);
            MapMat oW(omega.data() + slices_[li].offset, d->out, d->in);
            Eigen::Map<Eigen::VectorXd> ob(omega.data() + slices_[li].offset + d->out * d->in,
                                           d->out);
            if (square) {
                // per-sample grad is outer(delta, a); squares factor exactly
                oW.noalias() += (D.array().square().matrix().transpose()) *
                                (A.array().square().matrix());
                ob += D.array().square().colwise().sum().matrix().transpose();
            } else {
                oW.noalias() += (D.array().abs().matrix().transpose()) * (A.array().abs().matrix());
                ob += D.array().abs().colwise().sum().matrix().transpose();
            }
            Tensor din = Tensor::zeros({B, d->in});
            MapMat Din(din.data.data(), B, d->in);
            Din.noalias() = D * W;
            delta = std::move(din);
        } else if (const auto* c = std::get_if<Conv2d>(&spec)) {
            const std::size_t H = in.shape[2], Wd = in.shape[3];
            const std::size_t k = c->kernel, st = c->stride;
            const std::size_t oh = (H - k) / st + 1, ow = (Wd - k) / st + 1;
            const std::size_t K = c->in_ch * k * k, P = oh * ow;
            CMapMat W(params_.data() + slices_[li].offset, c->out_ch, K);
            MapMat oW(omega.data() + slices_[li].offset, c->out_ch, K);
            Eigen::Map<Eigen::VectorXd> ob(omega.data() + slices_[li].offset + c->out_ch * K,
                                           c->out_ch);
            Tensor din = Tensor::zeros(in.shape);
            Eigen::MatrixXd col(K, P), dcol(K, P), g(c->out_ch, K);
            for (std::size_t s = 0; s < B; ++s) {
                const double* src = in.data.data() + s * c->in_ch * H * Wd;
                for (std::size_t ci = 0; ci < c->in_ch; ++ci)
                    for (std::size_t kr = 0; kr < k; ++kr)
                        for (std::size_t kc = 0; kc < k; ++kc) {
                            const std::size_t row = (ci * k + kr) * k + kc;
                            for (std::size_t r = 0; r < oh; ++r)
                                for (std::size_t cc = 0; cc < ow; ++cc)
                                    col(row, r * ow + cc) =
                                        src[(ci * H + r * st + kr) * Wd + cc * st + kc];
                        }
                CMapMat D(delta.data.data() + s * c->out_ch * P, c->out_ch, P);
                g.noalias() = D * col.transpose();
                if (square) {
                    oW.array() += g.array().square();
                    ob.array() += D.rowwise().sum().array().square();
                } else {
                    oW.array() += g.array().abs();
                    ob.array() += D.rowwise().sum().array().abs();
                }
                dcol.noalias() = W.transpose() * D;
                double* dst = din.data.data() + s * c->in_ch * H * Wd;
                for (std::size_t ci = 0; ci < c->in_ch; ++ci)
                    for (std::size_t kr = 0; kr < k; ++kr)
                        for (std::size_t kc = 0; kc < k; ++kc) {
                            const std::size_t row = (ci * k + kr) * k + kc;
                            for (std::size_t r = 0; r < oh; ++r)
                                for (std::size_t cc = 0; cc < ow; ++cc)
                                    dst[(ci * H + r * st + kr) * Wd + cc * st + kc] +=
                                        dcol(row, r * ow + cc);
                        }
            }
            delta = std::move(din);
        } else if (std::holds_alternative<MaxPool2d>(spec)) {
            Tensor din = Tensor::zeros(in.shape);
            const auto& arg = trace.pool_arg[li];
            const std::size_t C = in.shape[1], H = in.shape[2], Wd = in.shape[3];
            const std::size_t per_plane = H * Wd;
            const std::size_t on = delta.size() / (B * C);
            for (std::size_t s = 0; s < B; ++s)
                for (std::size_t ci = 0; ci < C; ++ci) {
                    const std::size_t plane = (s * C + ci);
                    for (std::size_t o = 0; o < on; ++o)
                        din.data[plane * per_plane + arg[plane * on + o]] +=
                            delta.data[plane * on + o];
                }
            delta = std::move(din);
        } else if (std::holds_alternative<ReLU>(spec)) {
            Tensor din = delta;
            for (std::size_t i = 0; i < din.size(); ++i)
                if (in.data[i] <= 0.0) din.data[i] = 0.0;
            delta = std::move(din);
        } else if (std::holds_alternative<Flatten>(spec)) {
            delta = Tensor(in.shape, std::move(delta.data));
        }
    }
}

std::pair<double, GradientVector> Network::backward_ce(
    const Tensor& batch, const std::vector<std::uint8_t>& labels) const {
    Trace trace;
    Tensor logits = forward_trace(batch, trace);
    const std::size_t B = logits.shape[0], C = logits.shape[1];
    if (labels.size() != B)
        throw ShapeError("cross-entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(B));
    Tensor dlogits = Tensor::zeros({B, C});
    double loss = 0.0;
    for (std::size_t r = 0; r < B; ++r) {
        const double* row = logits.data.data() + r * C;
        const std::uint8_t y = labels[r];
        if (y >= C)
            throw EwcError("cross-entropy: label " + std::to_string(int(y)) + " out of range at batch index " +
                           std::to_string(r));
        const double m = *std::max_element(row, row + C);
        double sum = 0.0;
        for (std::size_t c = 0; c < C; ++c) sum += std::exp(row[c] - m);
        const double log_z = m + std::log(sum);
        const double sample_loss = log_z - row[y];
        if (!std::isfinite(sample_loss))
            throw NumericError("cross-entropy: non-finite loss at batch index " + std::to_string(r));
        loss += sample_loss;
        double* drow = dlogits.data.data() + r * C;
        for (std::size_t c = 0; c < C; ++c) drow[c] = std::exp(row[c] - log_z) / double(B);
        drow[y] -= 1.0 / double(B);
    }
    loss /= double(B);
    return {loss, backward_from_logits(trace, dlogits)};
}

double Network::loss_ce(const Tensor& batch, const std::vector<std::uint8_t>& labels) const {
    Tensor logits = forward_logits(batch);
    const std::size_t B = logits.shape[0], C = logits.shape[1];
    double loss = 0.0;
    for (std::size_t r = 0; r < B; ++r) {
        const double* row = logits.data.data() + r * C;
        const double m = *std::max_element(row, row + C);
        double sum = 0.0;
        for (std::size_t c = 0; c < C; ++c) sum += std::exp(row[c] - m);
        loss += m + std::log(sum) - row[labels[r]];
    }
    return loss / double(B);
}

std::vector<std::size_t> Network::predict(const Tensor& batch) const {
    Tensor logits = forward_logits(batch);
    const std::size_t B = logits.shape[0], C = logits.shape[1];
    std::vector<std::size_t> out(B);
    for (std::size_t r = 0; r < B; ++r) {
        const double* row = logits.data.data() + r * C;
        out[r] = static_cast<std::size_t>(std::max_element(row, row + C) - row);
    }
    return out;
}

double Network::accuracy(const Tensor& batch, const std::vector<std::uint8_t>& labels) const {
    auto pred = predict(batch);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

GradientVector clip_global_norm(GradientVector grad, double max_norm) {
    if (max_norm <= 0.0) throw EwcError("clip_global_norm: max_norm must be positive");
    const double norm = l2_norm(grad);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (double& g : grad) g *= scale;
    }
    return grad;
}

}  // namespace ewc
