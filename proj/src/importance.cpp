#include "consolidate/importance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "consolidate/rng.hpp"

namespace ewc {

std::string method_name(Method m) {
    switch (m) {
        case Method::FisherLabel: return "fisher-label";
        case Method::FisherArgmax: return "fisher-argmax";
        case Method::FisherSampled: return "fisher-sampled";
        case Method::Mas: return "mas";
        case Method::Si: return "si";
        case Method::TotalAbsSignal: return "total-abs-signal";
    }
    return "?";
}

Method method_from_name(const std::string& name) {
    if (name == "fisher" || name == "fisher-label") return Method::FisherLabel;
    if (name == "fisher-argmax") return Method::FisherArgmax;
    if (name == "fisher-sampled") return Method::FisherSampled;
    if (name == "mas") return Method::Mas;
    if (name == "si") return Method::Si;
    if (name == "total-abs-signal" || name == "tas") return Method::TotalAbsSignal;
    throw EwcError("unknown importance method \"" + name + "\"");
}

namespace {

constexpr std::size_t kChunk = 200;  // samples per forward pass

std::size_t effective_samples(const Dataset& ds, std::size_t n) {
    if (n == 0 || n > ds.size()) return ds.size();
    return n;
}

}  // namespace

ImportanceMap fisher_importance(const Network& net, const Dataset& train, const TaskSpec& task,
                                NetworkKind kind, FisherMode mode, std::size_t n_samples,
                                std::uint64_t sample_seed) {
    const std::size_t N = effective_samples(train, n_samples);
    Method method = mode == FisherMode::Label    ? Method::FisherLabel
                    : mode == FisherMode::Argmax ? Method::FisherArgmax
                                                 : Method::FisherSampled;
    ImportanceMap map = ImportanceMap::zeros(net.param_count(), method);
    Rng rng(sample_seed);

    for (std::size_t start = 0; start < N; start += kChunk) {
        const std::size_t n = std::min(kChunk, N - start);
        Batch batch = full_batch_range(train, task, kind, start, n);
        Network::Trace trace;
        Tensor logits = net.forward_trace(batch.images, trace);
        const std::size_t C = logits.shape[1];
        Tensor probs = softmax_rows(logits);
        Tensor dlogits = Tensor::zeros(logits.shape);
        for (std::size_t s = 0; s < n; ++s) {
            const double* p = probs.data.data() + s * C;
            std::size_t y;
            switch (mode) {
                case FisherMode::Label: y = batch.labels[s]; break;
                case FisherMode::Argmax:
                    y = static_cast<std::size_t>(std::max_element(p, p + C) - p);
                    break;
                case FisherMode::Sampled: {
                    std::vector<double> pv(p, p + C);
                    y = rng.categorical(pv);
                    break;
                }
            }
            double* d = dlogits.data.data() + s * C;
            // d log softmax_y / d logits = onehot_y - p
            for (std::size_t c = 0; c < C; ++c) d[c] = -p[c];
            d[y] += 1.0;
            for (std::size_t c = 0; c < C; ++c)
                if (!std::isfinite(d[c]))
                    throw NumericError("fisher importance: non-finite gradient at sample " +
                                       std::to_string(start + s));
        }
        net.accumulate_per_sample(trace, dlogits, Network::PerSampleStat::SquareSum, map.omega);
    }
    for (double& v : map.omega) v /= static_cast<double>(N);
    map.n_samples_used = N;
    return map;
}

ImportanceMap mas_importance(const Network& net, const Dataset& train, const TaskSpec& task,
                             NetworkKind kind, std::size_t n_samples) {
    const std::size_t N = effective_samples(train, n_samples);
    ImportanceMap map = ImportanceMap::zeros(net.param_count(), Method::Mas);

    for (std::size_t start = 0; start < N; start += kChunk) {
        const std::size_t n = std::min(kChunk, N - start);
        Batch batch = full_batch_range(train, task, kind, start, n);
        Network::Trace trace;
        Tensor logits = net.forward_trace(batch.images, trace);
        logits.check_finite("mas importance");
        // The MAS sensitivity function is the squared L2 norm of the network
        // output p = softmax(f). Through the softmax Jacobian,
        //   d ||p||^2 / d f_j = 2 p_j (p_j - ||p||^2).
        const std::size_t C = logits.shape[1];
        Tensor probs = softmax_rows(logits);
        Tensor dlogits = Tensor::zeros(logits.shape);
        for (std::size_t s = 0; s < n; ++s) {
            const double* p = probs.data.data() + s * C;
            double sq = 0.0;
            for (std::size_t c = 0; c < C; ++c) sq += p[c] * p[c];
            double* d = dlogits.data.data() + s * C;
            for (std::size_t c = 0; c < C; ++c) d[c] = 2.0 * p[c] * (p[c] - sq);
        }
        net.accumulate_per_sample(trace, dlogits, Network::PerSampleStat::AbsSum, map.omega);
    }
    for (double& v : map.omega) v /= static_cast<double>(N);
    map.n_samples_used = N;
    return map;
}

ImportanceMap total_abs_signal_importance(const Network& net, const Dataset& train,
                                          const TaskSpec& task, NetworkKind kind,
                                          std::size_t n_samples) {
    const std::size_t N = effective_samples(train, n_samples);
    ImportanceMap map = ImportanceMap::zeros(net.param_count(), Method::TotalAbsSignal);
    const auto& layers = net.layers();
    const auto& slices = net.param_index();
    auto params = net.params();

    // mean absolute presynaptic signal per (layer, input position)
    std::vector<std::vector<double>> abs_in(layers.size());

    for (std::size_t start = 0; start < N; start += kChunk) {
        const std::size_t n = std::min(kChunk, N - start);
        Batch batch = full_batch_range(train, task, kind, start, n);
        Network::Trace trace;
        net.forward_trace(batch.images, trace);
        for (std::size_t li = 0; li < layers.size(); ++li) {
            if (slices[li].len == 0) continue;
            const Tensor& in = trace.acts[li];
            const std::size_t per = in.size() / n;
            auto& acc = abs_in[li];
            if (acc.empty()) acc.assign(per, 0.0);
            for (std::size_t s = 0; s < n; ++s) {
                const double* a = in.data.data() + s * per;
                for (std::size_t i = 0; i < per; ++i) acc[i] += std::abs(a[i]);
            }
        }
    }

    for (std::size_t li = 0; li < layers.size(); ++li) {
        if (slices[li].len == 0) continue;
        const double* w = params.data() + slices[li].offset;
        double* om = map.omega.data() + slices[li].offset;
        auto& acc = abs_in[li];
        for (double& v : acc) v /= static_cast<double>(N);
        if (const auto* d = std::get_if<Dense>(&layers[li])) {
            for (std::size_t i = 0; i < d->out; ++i)
                for (std::size_t j = 0; j < d->in; ++j)
                    om[i * d->in + j] = std::abs(w[i * d->in + j]) * acc[j];
            for (std::size_t i = 0; i < d->out; ++i)
                om[d->out * d->in + i] = std::abs(w[d->out * d->in + i]);
        } else if (const auto* c = std::get_if<Conv2d>(&layers[li])) {
            const auto in_shape = net.layer_input_shape(li);  // (in_ch, H, W)
            const std::size_t H = in_shape[1], Wd = in_shape[2];
            const std::size_t k = c->kernel, st = c->stride;
            const std::size_t oh = (H - k) / st + 1, ow = (Wd - k) / st + 1;
            const std::size_t K = c->in_ch * k * k;
            // total |a| seen by each kernel position over the output grid
            std::vector<double> sig(K, 0.0);
            for (std::size_t ci = 0; ci < c->in_ch; ++ci)
                for (std::size_t kr = 0; kr < k; ++kr)
                    for (std::size_t kc = 0; kc < k; ++kc) {
                        double s = 0.0;
                        for (std::size_t r = 0; r < oh; ++r)
                            for (std::size_t cc = 0; cc < ow; ++cc)
                                s += acc[(ci * H + r * st + kr) * Wd + cc * st + kc];
                        sig[(ci * k + kr) * k + kc] = s;
                    }
            for (std::size_t oc = 0; oc < c->out_ch; ++oc)
                for (std::size_t i = 0; i < K; ++i)
                    om[oc * K + i] = std::abs(w[oc * K + i]) * sig[i];
            for (std::size_t oc = 0; oc < c->out_ch; ++oc)
                om[c->out_ch * K + oc] = std::abs(w[c->out_ch * K + oc]);
        }
    }
    map.n_samples_used = N;
    return map;
}

void SIAccumulator::begin_task(const Network& net) {
    omega_path_.assign(net.param_count(), 0.0);
    w_start_.assign(net.params().begin(), net.params().end());
    active_ = true;
}

void SIAccumulator::record_step(std::span<const double> grad_task,
                                std::span<const double> delta_w) {
    if (!active_) throw EwcError("SI: record_step before begin_task");
    if (grad_task.size() != omega_path_.size() || delta_w.size() != omega_path_.size())
        throw ShapeError("SI: misaligned step record");
    for (std::size_t i = 0; i < omega_path_.size(); ++i)
        omega_path_[i] -= grad_task[i] * delta_w[i];
}

ImportanceMap SIAccumulator::finish_task(const Network& net) {
    if (!active_) throw EwcError("SI: finish_task before begin_task");
    ImportanceMap map = ImportanceMap::zeros(net.param_count(), Method::Si);
    auto w = net.params();
    for (std::size_t i = 0; i < map.omega.size(); ++i) {
        const double path = std::max(0.0, omega_path_[i]);
        const double disp = w[i] - w_start_[i];
        map.omega[i] = path / (disp * disp + xi_);
    }
    active_ = false;
    return map;
}

ImportanceMap accumulate(const ImportanceMap& prev, const ImportanceMap& next) {
    if (prev.method != next.method)
        throw EwcError("accumulate: method mismatch (" + method_name(prev.method) + " vs " +
                       method_name(next.method) + ")");
    if (prev.omega.size() != next.omega.size())
        throw ShapeError("accumulate: alignment mismatch");
    ImportanceMap out = prev;
    for (std::size_t i = 0; i < out.omega.size(); ++i) out.omega[i] += next.omega[i];
    out.n_samples_used = prev.n_samples_used + next.n_samples_used;
    return out;
}

std::uint64_t network_fingerprint(const Network& net) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ULL;
        }
    };
    for (std::size_t e : net.input_shape()) mix(e);
    for (const LayerSpec& l : net.layers()) {
        mix(l.index());
        if (const auto* d = std::get_if<Dense>(&l)) {
            mix(d->in);
            mix(d->out);
        } else if (const auto* c = std::get_if<Conv2d>(&l)) {
            mix(c->in_ch);
            mix(c->out_ch);
            mix(c->kernel);
            mix(c->stride);
        } else if (const auto* p = std::get_if<MaxPool2d>(&l)) {
            mix(p->kernel);
        }
    }
    mix(net.param_count());
    return h;
}

void save_importance(const ImportanceMap& map, const std::string& path,
                     std::uint64_t fingerprint) {
    std::ofstream bin(path, std::ios::binary);
    if (!bin) throw EwcError(path + ": cannot open for writing");
    bin.write(reinterpret_cast<const char*>(map.omega.data()),
              static_cast<std::streamsize>(map.omega.size() * sizeof(double)));
    nlohmann::json meta = {
        {"method", method_name(map.method)},
        {"n_samples", map.n_samples_used},
        {"param_count", map.omega.size()},
        {"network_fingerprint", fingerprint},
    };
    std::ofstream side(path + ".json");
    side << meta.dump(2) << "\n";
}

ImportanceMap load_importance(const std::string& path,
                              std::optional<std::uint64_t> expect_fingerprint) {
    std::ifstream side(path + ".json");
    if (!side) throw EwcError(path + ".json: cannot open");
    nlohmann::json meta = nlohmann::json::parse(side);
    ImportanceMap map;
    map.method = method_from_name(meta.at("method").get<std::string>());
    map.n_samples_used = meta.at("n_samples").get<std::size_t>();
    const std::size_t n = meta.at("param_count").get<std::size_t>();
    if (expect_fingerprint &&
        meta.at("network_fingerprint").get<std::uint64_t>() != *expect_fingerprint)
        throw EwcError(path + ": importance map belongs to a different network");
    map.omega.resize(n);
    std::ifstream bin(path, std::ios::binary);
    if (!bin.read(reinterpret_cast<char*>(map.omega.data()),
                  static_cast<std::streamsize>(n * sizeof(double))))
        throw EwcError(path + ": truncated importance payload");
    return map;
}

}  // namespace ewc
