#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "consolidate/data.hpp"
#include "consolidate/rng.hpp"

using namespace ewc;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("ewc-data-test-" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

// Tiny synthetic corpus: n images of 28x28 with distinct pixel patterns.
void write_corpus(const TempDir& dir, std::size_t n) {
    IdxImages imgs;
    imgs.count = n;
    imgs.rows = imgs.cols = 28;
    imgs.pixels.resize(n * 784);
    std::vector<std::uint8_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<std::uint8_t>(i % 10);
        for (std::size_t p = 0; p < 784; ++p)
            imgs.pixels[i * 784 + p] = static_cast<std::uint8_t>((i * 31 + p * 7) % 256);
    }
    write_idx_images(dir.file("images"), imgs);
    write_idx_labels(dir.file("labels"), labels);
}

}  // namespace

TEST_CASE("IDX round trip preserves counts, labels, and scaling") {
    TempDir dir;
    write_corpus(dir, 130);
    Dataset ds = load_dataset(dir.file("images"), dir.file("labels"), Split::Train);
    CHECK(ds.size() == 130);
    CHECK(ds.images.shape == std::vector<std::size_t>{130, 28, 28});
    CHECK(ds.labels[9] == 9);  // label byte maps to class index unchanged
    for (double v : ds.images.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // pixel byte 255 -> 1.0 exactly
    CHECK(ds.images.data[259] == doctest::Approx(double((0 * 31 + 259 * 7) % 256) / 255.0));
}

TEST_CASE("bad magic is rejected") {
    TempDir dir;
    std::ofstream out(dir.file("bogus"), std::ios::binary);
    const char zeros[16] = {};
    out.write(zeros, 16);
    out.close();
    CHECK_THROWS_WITH_AS(load_idx_images(dir.file("bogus")), doctest::Contains("bad magic"),
                         DataError);
}

TEST_CASE("truncated payload is rejected") {
    TempDir dir;
    write_corpus(dir, 10);
    // chop the image file
    std::filesystem::resize_file(dir.file("images"), 16 + 5 * 784);
    CHECK_THROWS_WITH_AS(load_idx_images(dir.file("images")), doctest::Contains("truncated"),
                         DataError);
}

TEST_CASE("image/label count mismatch is rejected") {
    TempDir dir;
    write_corpus(dir, 10);
    write_idx_labels(dir.file("labels"), std::vector<std::uint8_t>(9, 0));
    CHECK_THROWS_WITH_AS(load_dataset(dir.file("images"), dir.file("labels"), Split::Train),
                         doctest::Contains("10 images vs 9 labels"), DataError);
}

TEST_CASE("permuted task sequences are deterministic in the master seed") {
    TaskSequence a = make_permuted_tasks(42, 10);
    TaskSequence b = make_permuted_tasks(42, 10);
    REQUIRE(a.tasks.size() == 10);
    for (std::size_t t = 0; t < 10; ++t) {
        CHECK(a.tasks[t].perm_seed == b.tasks[t].perm_seed);
        CHECK(a.tasks[t].kind == TaskSpec::Kind::Permutation);
    }
    TaskSequence c = make_permuted_tasks(43, 10);
    CHECK(a.tasks[0].perm_seed != c.tasks[0].perm_seed);

    TaskSequence ident = make_permuted_tasks(42, 10, /*first_identity=*/true);
    CHECK(ident.tasks[0].kind == TaskSpec::Kind::Identity);
    CHECK(ident.tasks[1].kind == TaskSpec::Kind::Permutation);
}

TEST_CASE("task permutations are bijections on 784 positions") {
    TaskSequence seq = make_permuted_tasks(7, 10);
    for (const TaskSpec& task : seq.tasks) {
        std::vector<std::size_t> p = permutation_for(task);
        std::sort(p.begin(), p.end());
        for (std::size_t i = 0; i < 784; ++i) CHECK(p[i] == i);
    }
}

TEST_CASE("applying a permutation then its inverse restores the image") {
    TaskSpec task;
    task.kind = TaskSpec::Kind::Permutation;
    task.perm_seed = 1234;
    const std::vector<std::size_t> perm = permutation_for(task);
    std::vector<std::size_t> inv(784);
    for (std::size_t i = 0; i < 784; ++i) inv[perm[i]] = i;

    Rng rng(5);
    std::vector<double> src(784), mid(784), back(784);
    for (double& v : src) v = rng.uniform();
    apply_transform(task, &perm, src.data(), mid.data());
    apply_transform(task, &inv, mid.data(), back.data());
    CHECK(back == src);
}

TEST_CASE("transforms preserve the per-image pixel multiset") {
    Rng rng(8);
    std::vector<double> src(784), dst(784);
    for (double& v : src) v = rng.uniform();

    TaskSpec perm_task;
    perm_task.kind = TaskSpec::Kind::Permutation;
    perm_task.perm_seed = 99;
    auto perm = permutation_for(perm_task);
    apply_transform(perm_task, &perm, src.data(), dst.data());
    auto sorted_src = src, sorted_dst = dst;
    std::sort(sorted_src.begin(), sorted_src.end());
    std::sort(sorted_dst.begin(), sorted_dst.end());
    CHECK(sorted_src == sorted_dst);

    TaskSpec rot_task;
    rot_task.kind = TaskSpec::Kind::Rotate90;
    rot_task.quarter_turns = 1;
    apply_transform(rot_task, nullptr, src.data(), dst.data());
    sorted_dst = dst;
    std::sort(sorted_dst.begin(), sorted_dst.end());
    CHECK(sorted_src == sorted_dst);
}

TEST_CASE("rotation follows the counter-clockwise convention") {
    // one-hot image: dst(r,c) = src(c, 27-r)
    std::vector<double> src(784, 0.0), dst(784);
    src[3 * 28 + 27 - 5] = 1.0;  // src(3, 22) should land at dst(5, 3)
    TaskSpec task;
    task.kind = TaskSpec::Kind::Rotate90;
    task.quarter_turns = 1;
    apply_transform(task, nullptr, src.data(), dst.data());
    CHECK(dst[5 * 28 + 3] == 1.0);
    CHECK(std::count(dst.begin(), dst.end(), 1.0) == 1);
}

TEST_CASE("rotating four times restores the image") {
    Rng rng(17);
    std::vector<double> src(784), cur(784), next(784);
    for (double& v : src) v = rng.uniform();
    cur = src;
    TaskSpec task;
    task.kind = TaskSpec::Kind::Rotate90;
    task.quarter_turns = 1;
    for (int i = 0; i < 4; ++i) {
        apply_transform(task, nullptr, cur.data(), next.data());
        cur = next;
    }
    CHECK(cur == src);
}

TEST_CASE("rotation task sequence is MNIST, Fashion, then their rotations") {
    TaskSequence seq = make_rotation_tasks();
    REQUIRE(seq.tasks.size() == 4);
    CHECK(seq.network_kind == NetworkKind::ConvNet);
    CHECK(seq.tasks[0].source == Source::Mnist);
    CHECK(seq.tasks[1].source == Source::FashionMnist);
    CHECK(seq.tasks[2].source == Source::Mnist);
    CHECK(seq.tasks[3].source == Source::FashionMnist);
    CHECK(seq.tasks[0].kind == TaskSpec::Kind::Identity);
    CHECK(seq.tasks[2].kind == TaskSpec::Kind::Rotate90);
    CHECK(seq.tasks[3].kind == TaskSpec::Kind::Rotate90);
}

TEST_CASE("batcher covers the dataset with deterministic shuffles") {
    TempDir dir;
    write_corpus(dir, 250);
    Dataset ds = load_dataset(dir.file("images"), dir.file("labels"), Split::Train);
    TaskSpec task;  // identity

    Batcher batcher(ds, task, NetworkKind::DenseNet, 100, 77);
    CHECK(batcher.batches_per_epoch() == 3);

    batcher.begin_epoch(0);
    Batch b;
    std::size_t total = 0;
    std::vector<std::size_t> sizes;
    while (batcher.next(b)) {
        sizes.push_back(b.labels.size());
        total += b.labels.size();
        CHECK(b.images.shape[0] == b.labels.size());
        CHECK(b.images.shape[1] == 784);
    }
    CHECK(total == 250);
    CHECK(sizes == std::vector<std::size_t>{100, 100, 50});  // short final batch included

    // same seed, same epoch -> identical order
    Batcher again(ds, task, NetworkKind::DenseNet, 100, 77);
    again.begin_epoch(0);
    batcher.begin_epoch(0);
    Batch b2;
    while (batcher.next(b) && again.next(b2)) {
        CHECK(b.labels == b2.labels);
        CHECK(b.images.data == b2.images.data);
    }

    // different epochs shuffle differently
    batcher.begin_epoch(0);
    batcher.next(b);
    again.begin_epoch(1);
    again.next(b2);
    CHECK(b.labels != b2.labels);
}

TEST_CASE("permuted batches keep labels and reorder pixels") {
    TempDir dir;
    write_corpus(dir, 30);
    Dataset ds = load_dataset(dir.file("images"), dir.file("labels"), Split::Train);
    TaskSpec task;
    task.kind = TaskSpec::Kind::Permutation;
    task.perm_seed = 5;
    auto perm = permutation_for(task);

    Batch b = full_batch(ds, task, NetworkKind::DenseNet);
    for (std::size_t i = 0; i < 30; ++i) {
        CHECK(b.labels[i] == ds.labels[i]);
        for (std::size_t p = 0; p < 784; ++p)
            CHECK(b.images.data[i * 784 + p] == ds.images.data[i * 784 + perm[p]]);
    }
}

TEST_CASE("task sequence keys resolve") {
    CHECK(make_task_sequence("permuted-mnist-10", 1).tasks.size() == 10);
    CHECK(make_task_sequence("rotated-mnist-fashion-4", 1).tasks.size() == 4);
    CHECK(make_task_sequence("mnist-1", 1).tasks.size() == 1);
    CHECK_THROWS_AS(make_task_sequence("nope", 1), EwcError);
}
