#include "consolidate/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "consolidate/rng.hpp"

namespace ewc {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::istream& in, const std::string& path, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw DataError(path + ": truncated while reading " + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::string hex_magic(std::uint32_t m) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", m);
    return buf;
}

}  // namespace

IdxImages load_idx_images(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open");
    const std::uint32_t magic = read_be32(in, path, "magic");
    if (magic != kImageMagic)
        throw DataError(path + ": bad magic " + hex_magic(magic) + ", expected " +
                        hex_magic(kImageMagic));
    IdxImages out;
    out.count = read_be32(in, path, "image count");
    out.rows = read_be32(in, path, "row count");
    out.cols = read_be32(in, path, "column count");
    out.pixels.resize(out.count * out.rows * out.cols);
    if (!in.read(reinterpret_cast<char*>(out.pixels.data()),
                 static_cast<std::streamsize>(out.pixels.size())))
        throw DataError(path + ": truncated pixel payload, expected " +
                        std::to_string(out.pixels.size()) + " bytes");
    return out;
}

std::vector<std::uint8_t> load_idx_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open");
    const std::uint32_t magic = read_be32(in, path, "magic");
    if (magic != kLabelMagic)
        throw DataError(path + ": bad magic " + hex_magic(magic) + ", expected " +
                        hex_magic(kLabelMagic));
    const std::uint32_t n = read_be32(in, path, "label count");
    std::vector<std::uint8_t> labels(n);
    if (!in.read(reinterpret_cast<char*>(labels.data()), n))
        throw DataError(path + ": truncated label payload, expected " + std::to_string(n) +
                        " bytes");
    return labels;
}

Dataset load_dataset(const std::string& images_path, const std::string& labels_path, Split split) {
    IdxImages raw = load_idx_images(images_path);
    std::vector<std::uint8_t> labels = load_idx_labels(labels_path);
    if (raw.count != labels.size())
        throw DataError(images_path + ": " + std::to_string(raw.count) + " images vs " +
                        std::to_string(labels.size()) + " labels in " + labels_path);
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] > 9)
            throw DataError(labels_path + ": label " + std::to_string(int(labels[i])) +
                            " out of range at index " + std::to_string(i));
    Dataset ds;
    ds.split = split;
    ds.labels = std::move(labels);
    ds.images = Tensor::zeros({raw.count, raw.rows, raw.cols});
    for (std::size_t i = 0; i < raw.pixels.size(); ++i)
        ds.images.data[i] = static_cast<double>(raw.pixels[i]) / 255.0;
    return ds;
}

void write_idx_images(const std::string& path, const IdxImages& images) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(path + ": cannot open for writing");
    write_be32(out, kImageMagic);
    write_be32(out, static_cast<std::uint32_t>(images.count));
    write_be32(out, static_cast<std::uint32_t>(images.rows));
    write_be32(out, static_cast<std::uint32_t>(images.cols));
    out.write(reinterpret_cast<const char*>(images.pixels.data()),
              static_cast<std::streamsize>(images.pixels.size()));
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(path + ": cannot open for writing");
    write_be32(out, kLabelMagic);
    write_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
}

TaskSequence make_permuted_tasks(std::uint64_t seed, int n_tasks, bool first_identity) {
    if (n_tasks < 1) throw EwcError("make_permuted_tasks: n_tasks must be >= 1");
    TaskSequence seq;
    seq.network_kind = NetworkKind::DenseNet;
    for (int t = 0; t < n_tasks; ++t) {
        TaskSpec task;
        task.source = Source::Mnist;
        task.task_id = t;
        if (t == 0 && first_identity) {
            task.kind = TaskSpec::Kind::Identity;
        } else {
            task.kind = TaskSpec::Kind::Permutation;
            task.perm_seed = Rng::derive_seed(seed, static_cast<std::uint64_t>(t));
        }
        seq.tasks.push_back(task);
    }
    return seq;
}

TaskSequence make_rotation_tasks() {
    TaskSequence seq;
    seq.network_kind = NetworkKind::ConvNet;
    const Source sources[4] = {Source::Mnist, Source::FashionMnist, Source::Mnist,
                               Source::FashionMnist};
    for (int t = 0; t < 4; ++t) {
        TaskSpec task;
        task.source = sources[t];
        task.task_id = t;
        if (t >= 2) {
            task.kind = TaskSpec::Kind::Rotate90;
            task.quarter_turns = 1;
        }
        seq.tasks.push_back(task);
    }
    return seq;
}

TaskSequence make_task_sequence(const std::string& key, std::uint64_t seed) {
    if (key == "permuted-mnist-10") return make_permuted_tasks(seed, 10);
    if (key == "rotated-mnist-fashion-4") return make_rotation_tasks();
    if (key == "mnist-1") {
        TaskSequence seq;
        seq.network_kind = NetworkKind::DenseNet;
        seq.tasks.push_back(TaskSpec{});
        return seq;
    }
    throw EwcError("unknown task sequence \"" + key +
                   "\" (known: permuted-mnist-10, rotated-mnist-fashion-4, mnist-1)");
}

std::vector<std::size_t> permutation_for(const TaskSpec& task) {
    if (task.kind != TaskSpec::Kind::Permutation)
        throw EwcError("permutation_for: task has no permutation");
    Rng rng(task.perm_seed);
    return rng.permutation(784);
}

void apply_transform(const TaskSpec& task, const std::vector<std::size_t>* perm,
                     const double* src, double* dst) {
    switch (task.kind) {
        case TaskSpec::Kind::Identity:
            std::copy(src, src + 784, dst);
            break;
        case TaskSpec::Kind::Permutation:
            for (std::size_t i = 0; i < 784; ++i) dst[i] = src[(*perm)[i]];
            break;
        case TaskSpec::Kind::Rotate90: {
            // counter-clockwise quarter turns: dst(r,c) = src(c, 27-r)
            int q = ((task.quarter_turns % 4) + 4) % 4;
            std::vector<double> tmp(src, src + 784);
            std::vector<double> next(784);
            for (int turn = 0; turn < q; ++turn) {
                for (std::size_t r = 0; r < 28; ++r)
                    for (std::size_t c = 0; c < 28; ++c) next[r * 28 + c] = tmp[c * 28 + (27 - r)];
                tmp.swap(next);
            }
            std::copy(tmp.begin(), tmp.end(), dst);
            break;
        }
    }
}

std::string task_label(const TaskSpec& task) {
    std::string s = task.source == Source::Mnist ? "mnist" : "fashion";
    switch (task.kind) {
        case TaskSpec::Kind::Identity: return s;
        case TaskSpec::Kind::Permutation: return s + "-perm-" + std::to_string(task.task_id);
        case TaskSpec::Kind::Rotate90: return s + "-rot90";
    }
    return s;
}

namespace {

void fill_batch(const Dataset& ds, const TaskSpec& task, NetworkKind kind,
                const std::vector<std::size_t>* perm, const std::size_t* idx, std::size_t n,
                Batch& out) {
    out.images = kind == NetworkKind::DenseNet
                     ? Tensor::zeros({n, 784})
                     : Tensor::zeros({n, 1, 28, 28});
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* src = ds.images.data.data() + idx[i] * 784;
        apply_transform(task, perm, src, out.images.data.data() + i * 784);
        out.labels[i] = ds.labels[idx[i]];
    }
}

}  // namespace

Batcher::Batcher(const Dataset& dataset, const TaskSpec& task, NetworkKind kind,
                 std::size_t batch_size, std::uint64_t shuffle_seed)
    : dataset_(dataset), task_(task), kind_(kind), batch_size_(batch_size),
      shuffle_seed_(shuffle_seed) {
    if (batch_size_ < 1) throw EwcError("batch size must be >= 1");
    if (task_.kind == TaskSpec::Kind::Permutation) perm_ = permutation_for(task_);
    order_.resize(dataset.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    cursor_ = order_.size();  // require begin_epoch first
}

void Batcher::begin_epoch(std::size_t epoch) {
    Rng rng(Rng::derive_seed(shuffle_seed_, epoch));
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng.shuffle(order_);
    cursor_ = 0;
}

bool Batcher::next(Batch& out) {
    if (cursor_ >= order_.size()) return false;
    const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
    fill_batch(dataset_, task_, kind_, perm_.empty() ? nullptr : &perm_, order_.data() + cursor_,
               n, out);
    cursor_ += n;
    return true;
}

std::size_t Batcher::batches_per_epoch() const {
    return (dataset_.size() + batch_size_ - 1) / batch_size_;
}

Batch full_batch(const Dataset& dataset, const TaskSpec& task, NetworkKind kind,
                 std::size_t limit) {
    const std::size_t n = limit == 0 ? dataset.size() : std::min(limit, dataset.size());
    return full_batch_range(dataset, task, kind, 0, n);
}

Batch full_batch_range(const Dataset& dataset, const TaskSpec& task, NetworkKind kind,
                       std::size_t start, std::size_t n) {
    if (start + n > dataset.size())
        throw EwcError("batch range [" + std::to_string(start) + ", " + std::to_string(start + n) +
                       ") exceeds dataset size " + std::to_string(dataset.size()));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    std::vector<std::size_t> perm;
    if (task.kind == TaskSpec::Kind::Permutation) perm = permutation_for(task);
    Batch out;
    fill_batch(dataset, task, kind, perm.empty() ? nullptr : &perm, idx.data(), n, out);
    return out;
}

}  // namespace ewc
