#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "consolidate/experiments.hpp"
#include "consolidate/rng.hpp"

using namespace ewc;

namespace {

Dataset synthetic_split(std::size_t n, std::uint64_t seed, Split split) {
    Dataset ds;
    ds.split = split;
    ds.images = Tensor::zeros({n, 28, 28});
    ds.labels.resize(n);
    Rng rng(seed);
    // blobs with label-dependent means so the nets actually learn something
    for (std::size_t s = 0; s < n; ++s) {
        const auto y = static_cast<std::uint8_t>(rng.below(10));
        ds.labels[s] = y;
        for (std::size_t p = 0; p < 784; ++p)
            ds.images.data[s * 784 + p] =
                0.5 * rng.uniform() + (p % 10 == y ? 0.5 : 0.0);
    }
    return ds;
}

DataStore synthetic_store(std::size_t n_train, std::size_t n_test) {
    DataStore store;
    store.mnist_train = synthetic_split(n_train, 101, Split::Train);
    store.mnist_test = synthetic_split(n_test, 102, Split::Test);
    return store;
}

RunConfig small_config() {
    RunConfig cfg;
    cfg.sequence = make_permuted_tasks(7, 2);
    cfg.method = Method::Mas;
    cfg.penalty = PenaltyKind::Original;
    cfg.lambda = 1.0;
    cfg.epochs = 1;
    cfg.batch_size = 50;
    cfg.seed = 3;
    return cfg;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("ewc_exp_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

std::vector<std::string> read_lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    return lines;
}

}  // namespace

TEST_CASE("mean_ci reproduces hand-computed Student-t intervals") {
    // n = 2, df = 1, t_{0.975} = 12.7062...; s = 0.0141421, s/sqrt(2) = 0.01
    auto [m1, hw1] = mean_ci({0.94, 0.96});
    CHECK(m1 == doctest::Approx(0.95));
    CHECK(hw1 == doctest::Approx(12.706204736 * 0.01).epsilon(1e-8));

    auto [m2, hw2] = mean_ci({0.0, 1.0});
    CHECK(m2 == doctest::Approx(0.5));
    CHECK(hw2 == doctest::Approx(12.706204736 * 0.5).epsilon(1e-8));

    // n = 4, df = 3, t_{0.975} = 3.18244630...; s = 0.11547005, s/2 = 0.057735
    auto [m3, hw3] = mean_ci({0.9, 0.9, 1.1, 1.1});
    CHECK(m3 == doctest::Approx(1.0));
    CHECK(hw3 == doctest::Approx(3.1824463053 * 0.11547005384 / 2.0).epsilon(1e-8));
}

TEST_CASE("mean_ci edge cases") {
    auto [m, hw] = mean_ci({0.5, 0.5, 0.5});
    CHECK(m == 0.5);
    CHECK(hw == 0.0);
    CHECK_THROWS_AS(mean_ci({0.5}), EwcError);

    // halfwidth shrinks roughly as 1/sqrt(n) for the same spread
    std::vector<double> small = {0.4, 0.6, 0.4, 0.6};
    std::vector<double> big;
    for (int rep = 0; rep < 25; ++rep) big.insert(big.end(), small.begin(), small.end());
    const double hw_small = mean_ci(small).second;
    const double hw_big = mean_ci(big).second;
    CHECK(hw_big < hw_small / 4.0);  // 5x samples, plus a smaller t quantile
}

TEST_CASE("make_network parameter counts match the two architectures") {
    Network dense = make_network(NetworkKind::DenseNet);
    CHECK(dense.param_count() == std::size_t(784 * 300 + 300 + 300 * 150 + 150 + 150 * 10 + 10));
    Network conv = make_network(NetworkKind::ConvNet);
    CHECK(conv.param_count() == std::size_t(32 * 25 + 32 + 64 * 32 * 25 + 64 + 1024 * 256 + 256 +
                                            256 * 10 + 10));
}

TEST_CASE("weight_mask marks exactly the connection weights") {
    Network dense = make_network(NetworkKind::DenseNet);
    std::vector<bool> mask = weight_mask(dense);
    REQUIRE(mask.size() == dense.param_count());
    std::size_t n_weights = 0;
    for (bool b : mask) n_weights += b ? 1 : 0;
    CHECK(n_weights == std::size_t(784 * 300 + 300 * 150 + 150 * 10));
}

TEST_CASE("run_sequential is deterministic and reports per-task accuracy") {
    DataStore store = synthetic_store(300, 100);
    RunConfig cfg = small_config();
    RunResult a = run_sequential(cfg, store);
    RunResult b = run_sequential(cfg, store);
    REQUIRE(!a.failed);
    REQUIRE(a.per_task_accuracy.size() == 2);
    CHECK(a.average_accuracy ==
          doctest::Approx((a.per_task_accuracy[0] + a.per_task_accuracy[1]) / 2.0));
    for (std::size_t t = 0; t < 2; ++t)
        CHECK(a.per_task_accuracy[t] == b.per_task_accuracy[t]);  // bitwise
    CHECK(a.average_accuracy == b.average_accuracy);

    // a different seed takes a different trajectory
    cfg.seed = 4;
    RunResult c = run_sequential(cfg, store);
    CHECK(c.average_accuracy != a.average_accuracy);
}

TEST_CASE("lambda = 0 original penalty is bitwise identical to no penalty") {
    DataStore store = synthetic_store(300, 100);
    RunConfig cfg = small_config();
    cfg.penalty = PenaltyKind::Original;
    cfg.lambda = 0.0;
    RunResult with = run_sequential(cfg, store);
    cfg.penalty = PenaltyKind::None;
    RunResult without = run_sequential(cfg, store);
    REQUIRE(with.per_task_accuracy.size() == without.per_task_accuracy.size());
    for (std::size_t t = 0; t < with.per_task_accuracy.size(); ++t)
        CHECK(with.per_task_accuracy[t] == without.per_task_accuracy[t]);
}

TEST_CASE("sweep_lambda aggregates runs and is thread-count invariant") {
    DataStore store = synthetic_store(200, 80);
    RunConfig cfg = small_config();
    const std::vector<double> grid = {0.0, 2.0};
    SweepResult serial = sweep_lambda(cfg, grid, 2, store, 1);
    SweepResult threaded = sweep_lambda(cfg, grid, 2, store, 2);
    REQUIRE(serial.points.size() == 2);
    REQUIRE(serial.runs.size() == 4);
    for (std::size_t p = 0; p < 2; ++p) {
        CHECK(serial.points[p].lambda == grid[p]);
        CHECK(serial.points[p].n_runs == 2);
        CHECK(serial.points[p].n_failed == 0);
        CHECK(serial.points[p].valid);
        CHECK(serial.points[p].mean_accuracy == threaded.points[p].mean_accuracy);
        CHECK(serial.points[p].ci_halfwidth == threaded.points[p].ci_halfwidth);
    }
    bool found = false;
    for (double g : grid)
        if (g == serial.best_lambda) found = true;
    CHECK(found);
}

TEST_CASE("prune_and_eval: fraction 0 is the unpruned network, weights restored") {
    DataStore store = synthetic_store(200, 80);
    Network net = make_network(NetworkKind::DenseNet);
    net.seeded_init(5);
    TaskSpec task;
    Batch eval_set = full_batch(store.mnist_test, task, NetworkKind::DenseNet);
    const double base_acc = net.accuracy(eval_set.images, eval_set.labels);

    std::vector<double> criterion(net.param_count());
    for (std::size_t i = 0; i < criterion.size(); ++i) criterion[i] = std::abs(net.params()[i]);
    std::vector<double> before(net.params().begin(), net.params().end());
    std::vector<double> accs = prune_and_eval(net, criterion, {0.0, 0.5, 0.99}, eval_set);
    REQUIRE(accs.size() == 3);
    CHECK(accs[0] == base_acc);
    // weights restored bitwise after the sweep
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(net.params()[i] == before[i]);
}

TEST_CASE("prune_and_eval validates fractions and alignment") {
    Network net = make_network(NetworkKind::DenseNet);
    net.seeded_init(6);
    DataStore store = synthetic_store(50, 20);
    TaskSpec task;
    Batch eval_set = full_batch(store.mnist_test, task, NetworkKind::DenseNet);
    std::vector<double> bad_criterion(3, 0.0);
    CHECK_THROWS_AS(prune_and_eval(net, bad_criterion, {0.0}, eval_set), ShapeError);
    std::vector<double> criterion(net.param_count(), 1.0);
    CHECK_THROWS_AS(prune_and_eval(net, criterion, {1.5}, eval_set), EwcError);
    CHECK_THROWS_AS(prune_and_eval(net, criterion, {-0.1}, eval_set), EwcError);
}

TEST_CASE("runs CSV has the documented schema") {
    TempDir dir;
    RunResult r1;
    r1.seed = 3;
    r1.per_task_accuracy = {0.9, 0.8};
    r1.average_accuracy = 0.85;
    r1.wall_time_s = 1.5;
    RunResult r2;
    r2.seed = 4;
    r2.failed = true;
    r2.failure = "boom";
    const auto path = dir.path / "runs.csv";
    write_runs_csv(path.string(), {r1, r2}, {41.0, 41.0});
    auto lines = read_lines(path);
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "seed,lambda,failed,average_accuracy,acc_task_0,acc_task_1");
    CHECK(lines[1] == "3,41,0,0.85,0.9,0.8");
    CHECK(lines[2] == "4,41,1,0,0,0");
}

TEST_CASE("sweep and prune CSVs have the documented schemas") {
    TempDir dir;
    SweepResult sweep;
    sweep.points.push_back({41.0, 0.9505, 0.0015, 20, 0, true});
    const auto spath = dir.path / "sweep.csv";
    write_sweep_csv(spath.string(), sweep);
    auto slines = read_lines(spath);
    REQUIRE(slines.size() == 2);
    CHECK(slines[0] == "lambda,mean_accuracy,ci_halfwidth,n_runs,n_failed,valid");
    CHECK(slines[1] == "41,0.9505,0.0015,20,0,1");

    PruneCurve curve;
    curve.criterion = PruneCriterion::TotalAbsSignal;
    curve.fractions = {0.0, 0.8};
    curve.mean_accuracy = {0.98, 0.95};
    curve.ci_halfwidth = {0.001, 0.002};
    const auto ppath = dir.path / "prune.csv";
    write_prune_csv(ppath.string(), {curve});
    auto plines = read_lines(ppath);
    REQUIRE(plines.size() == 3);
    CHECK(plines[0] == "criterion,fraction,mean_accuracy,ci_halfwidth");
    CHECK(plines[1] == "total-abs-signal,0,0.98,0.001");
    CHECK(plines[2] == "total-abs-signal,0.8,0.95,0.002");
}

TEST_CASE("run JSON round-trips config fields and failure messages") {
    TempDir dir;
    RunConfig cfg = small_config();
    RunResult ok;
    ok.seed = 3;
    ok.average_accuracy = 0.9;
    ok.per_task_accuracy = {0.95, 0.85};
    RunResult bad;
    bad.seed = 4;
    bad.failed = true;
    bad.failure = "non-finite loss";
    const auto path = dir.path / "run.json";
    write_run_json(path.string(), cfg, {ok, bad});

    std::ifstream in(path);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    CHECK(text.find("\"method\": \"mas\"") != std::string::npos);
    CHECK(text.find("\"penalty\": \"original\"") != std::string::npos);
    CHECK(text.find("\"non-finite loss\"") != std::string::npos);
    CHECK(text.find("\"n_tasks\": 2") != std::string::npos);
}

TEST_CASE("prune criterion names round-trip") {
    for (PruneCriterion c : {PruneCriterion::Magnitude, PruneCriterion::Fisher,
                             PruneCriterion::Mas, PruneCriterion::Si,
                             PruneCriterion::TotalAbsSignal})
        CHECK(prune_criterion_from_name(prune_criterion_name(c)) == c);
    CHECK_THROWS_AS(prune_criterion_from_name("entropy"), EwcError);
}
