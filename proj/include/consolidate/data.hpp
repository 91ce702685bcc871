#ifndef CONSOLIDATE_DATA_HPP
#define CONSOLIDATE_DATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "consolidate/tensor.hpp"

namespace ewc {

enum class Split { Train, Test };
enum class Source { Mnist, FashionMnist };

struct DataError : EwcError {
    using EwcError::EwcError;
};

/// 28x28 grayscale images scaled to [0,1] plus class labels.
struct Dataset {
    Tensor images;  // (n, 28, 28)
    std::vector<std::uint8_t> labels;
    Split split = Split::Train;

    std::size_t size() const { return labels.size(); }
};

/// Raw IDX payloads (pre-scaling), as read from disk.
struct IdxImages {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> pixels;
};

IdxImages load_idx_images(const std::string& path);
std::vector<std::uint8_t> load_idx_labels(const std::string& path);

/// Cross-checks image/label counts and scales pixels by 1/255.
Dataset load_dataset(const std::string& images_path, const std::string& labels_path, Split split);

void write_idx_images(const std::string& path, const IdxImages& images);
void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

// --- task synthesis -------------------------------------------------------

struct PermutationTransform {
    std::uint64_t seed = 0;
};
struct Rotate90Transform {
    int quarter_turns = 1;  // counter-clockwise
};
struct IdentityTransform {};

struct TaskSpec {
    Source source = Source::Mnist;
    enum class Kind { Identity, Permutation, Rotate90 } kind = Kind::Identity;
    std::uint64_t perm_seed = 0;
    int quarter_turns = 0;
    int task_id = 0;
};

enum class NetworkKind { DenseNet, ConvNet };

struct TaskSequence {
    std::vector<TaskSpec> tasks;
    NetworkKind network_kind = NetworkKind::DenseNet;
};

/// n_tasks pixel-permutation tasks with per-task seeds derived from the
/// master seed. With first_identity, task 1 is raw MNIST.
TaskSequence make_permuted_tasks(std::uint64_t seed, int n_tasks, bool first_identity = false);

/// [MNIST, FashionMNIST, MNIST+90deg, FashionMNIST+90deg].
TaskSequence make_rotation_tasks();

TaskSequence make_task_sequence(const std::string& key, std::uint64_t seed);

/// The 784-position pixel permutation for a permutation task.
std::vector<std::size_t> permutation_for(const TaskSpec& task);

/// Transformed copy of one 28x28 image (src is 784 doubles).
void apply_transform(const TaskSpec& task, const std::vector<std::size_t>* perm,
                     const double* src, double* dst);

// --- batching -------------------------------------------------------------

struct Batch {
    Tensor images;  // (b, 784) dense or (b, 1, 28, 28) conv
    std::vector<std::uint8_t> labels;
};

/// Deterministic per-epoch shuffled minibatches; the transform is applied
/// lazily per batch. The final short batch is included.
class Batcher {
public:
    Batcher(const Dataset& dataset, const TaskSpec& task, NetworkKind kind,
            std::size_t batch_size, std::uint64_t shuffle_seed);

    /// Reshuffles with a seed derived from (shuffle_seed, epoch).
    void begin_epoch(std::size_t epoch);
    bool next(Batch& out);
    std::size_t batches_per_epoch() const;

private:
    const Dataset& dataset_;
    TaskSpec task_;
    NetworkKind kind_;
    std::size_t batch_size_;
    std::uint64_t shuffle_seed_;
    std::vector<std::size_t> order_;
    std::vector<std::size_t> perm_;
    std::size_t cursor_ = 0;
};

/// Whole split as one batch-shaped tensor with the task transform applied.
Batch full_batch(const Dataset& dataset, const TaskSpec& task, NetworkKind kind,
                 std::size_t limit = 0);

/// Samples [start, start+n) in dataset order with the transform applied.
Batch full_batch_range(const Dataset& dataset, const TaskSpec& task, NetworkKind kind,
                       std::size_t start, std::size_t n);

std::string task_label(const TaskSpec& task);

}  // namespace ewc

#endif
