// consolidate: experiment front end for the EWC library.
//
// Subcommands: fetch-data, train-seq, sweep, prune, demo-explosion, report.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <algorithm>
#include <cstdio>
#include <limits>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <zlib.h>

#define CPPHTTPLIB_NO_EXCEPTIONS
#include <httplib.h>

#include "consolidate/experiments.hpp"
#include "consolidate/svg.hpp"

using namespace ewc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string data_dir_default() {
    if (const char* env = std::getenv("CONSOLIDATE_DATA_DIR")) return env;
    return "data";
}

// The effective configuration is echoed to <out>/config.json so a run can be
// reproduced with `--config <out>/config.json`.
void echo_config(const std::string& out_dir, const std::string& command, const json& options) {
    fs::create_directories(out_dir);
    json j = {{"command", command}, {"options", options}};
    std::ofstream out(fs::path(out_dir) / "config.json");
    if (!out) throw EwcError(out_dir + "/config.json: cannot open for writing");
    out << j.dump(2) << "\n";
}

// --config is applied by splicing the stored options in front of the real
// argv (after the subcommand), so explicit flags still win and unknown keys
// fall through to CLI11's rejection.
std::vector<std::string> splice_config(const std::vector<std::string>& args) {
    std::string config_path;
    for (std::size_t i = 0; i + 1 < args.size(); ++i)
        if (args[i] == "--config") config_path = args[i + 1];
    if (config_path.empty()) return args;

    std::ifstream in(config_path);
    if (!in) throw EwcError(config_path + ": cannot open config");
    json j = json::parse(in);
    const std::string command = j.at("command").get<std::string>();

    std::vector<std::string> out;
    out.push_back(args.empty() ? command : args[0]);
    out.push_back(command);
    for (const auto& [key, value] : j.at("options").items()) {
        out.push_back("--" + key);
        if (value.is_boolean()) {
            if (!value.get<bool>()) out.pop_back();
        } else if (value.is_string()) {
            out.push_back(value.get<std::string>());
        } else if (value.is_array()) {
            std::string joined;
            for (const auto& v : value) joined += (joined.empty() ? "" : ",") + v.dump();
            out.push_back(joined);
        } else {
            out.push_back(value.dump());
        }
    }
    // keep the original arguments (minus the program/subcommand and the
    // --config pair itself) after the spliced ones so they override
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config") { ++i; continue; }
        if (i == 1 && args[i] == command) continue;
        out.push_back(args[i]);
    }
    return out;
}

std::vector<double> parse_doubles(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    for (std::string item; std::getline(ss, item, ',');) {
        if (item.empty()) continue;
        std::size_t used = 0;
        const double v = std::stod(item, &used);
        if (used != item.size()) throw EwcError("bad number \"" + item + "\" in list");
        out.push_back(v);
    }
    if (out.empty()) throw EwcError("empty number list");
    return out;
}

// --- fetch-data -----------------------------------------------------------

const char* kIdxNames[] = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                           "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};

std::vector<std::uint8_t> gunzip(const std::string& gz) {
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw EwcError("zlib init failed");
    std::vector<std::uint8_t> out;
    std::uint8_t buf[1 << 16];
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(gz.data()));
    zs.avail_in = static_cast<uInt>(gz.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = buf;
        zs.avail_out = sizeof buf;
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw EwcError("gunzip failed: corrupt archive");
        }
        out.insert(out.end(), buf, buf + (sizeof buf - zs.avail_out));
    }
    inflateEnd(&zs);
    return out;
}

void validate_corpus(const std::string& dir, const std::string& prefix) {
    const std::size_t counts[] = {60000, 60000, 10000, 10000};
    for (int i = 0; i < 4; ++i) {
        const std::string path = dir + "/" + prefix + kIdxNames[i];
        if (!fs::exists(path))
            throw DataError(path + ": missing; run fetch-data with --mirror or place the IDX "
                                   "files there by hand");
        if (i % 2 == 0) {
            IdxImages imgs = load_idx_images(path);
            if (imgs.count != counts[i] || imgs.rows != 28 || imgs.cols != 28)
                throw DataError(path + ": unexpected shape " + std::to_string(imgs.count) + "x" +
                                std::to_string(imgs.rows) + "x" + std::to_string(imgs.cols));
        } else {
            auto labels = load_idx_labels(path);
            if (labels.size() != counts[i])
                throw DataError(path + ": unexpected label count " +
                                std::to_string(labels.size()));
        }
    }
}

void fetch_corpus(const std::string& mirror, const std::string& dir, const std::string& prefix) {
    httplib::Client client(mirror);
    client.set_follow_location(true);
    for (const char* name : kIdxNames) {
        const std::string target = dir + "/" + prefix + name;
        if (fs::exists(target)) {
            std::cout << target << ": already present, skipping\n";
            continue;
        }
        const std::string remote = std::string("/") + name + ".gz";
        std::cout << "fetching " << mirror << remote << "\n";
        auto res = client.Get(remote);
        if (!res || res->status != 200)
            throw DataError(mirror + remote + ": download failed" +
                            (res ? " (HTTP " + std::to_string(res->status) + ")" : ""));
        auto bytes = gunzip(res->body);
        std::ofstream out(target, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }
}

// --- report (CSV -> SVG) --------------------------------------------------

std::vector<std::vector<std::string>> read_csv(const std::string& path,
                                               const std::string& expect_header) {
    std::ifstream in(path);
    if (!in) throw EwcError(path + ": cannot open");
    std::vector<std::vector<std::string>> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1) {
            if (line != expect_header)
                throw EwcError(path + ":1: expected header \"" + expect_header + "\", got \"" +
                               line + "\"");
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
        const std::size_t want = std::count(expect_header.begin(), expect_header.end(), ',') + 1;
        if (cells.size() != want)
            throw EwcError(path + ":" + std::to_string(line_no) + ": expected " +
                           std::to_string(want) + " columns, got " + std::to_string(cells.size()));
        rows.push_back(std::move(cells));
    }
    if (rows.empty()) throw EwcError(path + ": no data rows");
    return rows;
}

double cell_num(const std::string& path, std::size_t row, const std::string& cell) {
    try {
        return std::stod(cell);
    } catch (const std::exception&) {
        throw EwcError(path + ":" + std::to_string(row + 2) + ": bad number \"" + cell + "\"");
    }
}

void plot_sweep_csvs(const std::vector<std::string>& paths, const std::string& out_svg) {
    std::vector<PlotSeries> series;
    for (const auto& path : paths) {
        auto rows = read_csv(path, "lambda,mean_accuracy,ci_halfwidth,n_runs,n_failed,valid");
        PlotSeries s;
        s.label = fs::path(path).stem().string();
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r][5] == "0") continue;  // skip invalid points
            s.x.push_back(cell_num(path, r, rows[r][0]));
            s.y.push_back(cell_num(path, r, rows[r][1]));
            s.yerr.push_back(cell_num(path, r, rows[r][2]));
        }
        if (s.x.empty()) throw EwcError(path + ": no valid sweep points");
        series.push_back(std::move(s));
    }
    PlotSpec spec;
    spec.title = "average accuracy after the task sequence vs lambda";
    spec.x_label = "lambda (log scale)";
    spec.y_label = "average accuracy";
    spec.log_x = true;
    write_svg(out_svg, spec, series);
}

void plot_prune_csv(const std::string& path, const std::string& out_svg) {
    auto rows = read_csv(path, "criterion,fraction,mean_accuracy,ci_halfwidth");
    std::vector<PlotSeries> series;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto it = std::find_if(series.begin(), series.end(),
                               [&](const PlotSeries& s) { return s.label == rows[r][0]; });
        if (it == series.end()) {
            series.push_back(PlotSeries{rows[r][0], {}, {}, {}});
            it = series.end() - 1;
        }
        it->x.push_back(cell_num(path, r, rows[r][1]));
        it->y.push_back(cell_num(path, r, rows[r][2]));
        it->yerr.push_back(cell_num(path, r, rows[r][3]));
    }
    PlotSpec spec;
    spec.title = "accuracy vs fraction of weights pruned";
    spec.x_label = "fraction pruned";
    spec.y_label = "test accuracy";
    write_svg(out_svg, spec, series);
}

void plot_explosion_csv(const std::string& path, const std::string& out_svg) {
    auto rows = read_csv(path, "step,original,stabilized");
    PlotSeries orig{"original", {}, {}, {}}, stab{"stabilized", {}, {}, {}};
    for (std::size_t r = 0; r < rows.size(); ++r) {
        orig.x.push_back(cell_num(path, r, rows[r][0]));
        orig.y.push_back(cell_num(path, r, rows[r][1]));
        stab.x.push_back(orig.x.back());
        stab.y.push_back(cell_num(path, r, rows[r][2]));
    }
    PlotSpec spec;
    spec.title = "distance to consolidated weights under plain SGD";
    spec.x_label = "step";
    spec.y_label = "|w - w*|";
    write_svg(out_svg, spec, {orig, stab});
}

// --- shared experiment options --------------------------------------------

struct CommonOpts {
    std::string data_dir = data_dir_default();
    std::string out_dir = "results";
    std::string config;  // consumed before parsing; registered for --help only
    std::uint64_t seed = 0;
    std::string net = "dense";
    std::string tasks;  // default derived from net
    std::string method = "mas";
    int epochs = 6;
    std::size_t batch_size = 100;
    double lr = 0.001;
    std::size_t importance_samples = 0;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--data-dir", o.data_dir,
                    "dataset root (env CONSOLIDATE_DATA_DIR; default \"data\")");
    cmd->add_option("--out", o.out_dir, "output directory");
    cmd->add_option("--config", o.config, "JSON config file (a previous run's config.json)");
    cmd->add_option("--seed", o.seed, "master RNG seed")->capture_default_str();
    cmd->add_option("--net", o.net, "architecture: dense | conv")->capture_default_str();
    cmd->add_option("--tasks", o.tasks,
                    "task sequence key: permuted-mnist-10 | rotated-mnist-fashion-4 | mnist-1 "
                    "(default by --net)");
    cmd->add_option("--method", o.method,
                    "importance: fisher | fisher-argmax | fisher-sampled | mas | si | "
                    "total-abs-signal")
        ->capture_default_str();
    cmd->add_option("--epochs", o.epochs, "epochs per task")->capture_default_str();
    cmd->add_option("--batch-size", o.batch_size, "minibatch size")->capture_default_str();
    cmd->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--importance-samples", o.importance_samples,
                    "training samples used for importance (0 = full split)")
        ->capture_default_str();
}

RunConfig run_config_from(const CommonOpts& o) {
    RunConfig cfg;
    const std::string tasks_key =
        !o.tasks.empty() ? o.tasks
                         : (o.net == "conv" ? "rotated-mnist-fashion-4" : "permuted-mnist-10");
    cfg.sequence = make_task_sequence(tasks_key, o.seed);
    cfg.sequence.network_kind = o.net == "conv" ? NetworkKind::ConvNet : NetworkKind::DenseNet;
    if (o.net != "dense" && o.net != "conv")
        throw EwcError("unknown net \"" + o.net + "\" (dense, conv)");
    cfg.method = method_from_name(o.method);
    cfg.epochs = o.epochs;
    cfg.batch_size = o.batch_size;
    cfg.adam.lr = o.lr;
    cfg.seed = o.seed;
    cfg.importance_samples = o.importance_samples;
    return cfg;
}

json common_json(const CommonOpts& o) {
    return {{"data-dir", o.data_dir},
            {"out", o.out_dir},
            {"seed", o.seed},
            {"net", o.net},
            {"tasks", o.tasks},
            {"method", o.method},
            {"epochs", o.epochs},
            {"batch-size", o.batch_size},
            {"lr", o.lr},
            {"importance-samples", o.importance_samples}};
}

bool needs_fashion(const RunConfig& cfg) {
    for (const auto& t : cfg.sequence.tasks)
        if (t.source == Source::FashionMnist) return true;
    return false;
}

void log_line(const std::string& msg) { std::cout << msg << "\n" << std::flush; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "consolidate: continual learning with elastic weight consolidation.\n"
        "CSV schemas:\n"
        "  runs.csv   seed,lambda,failed,average_accuracy,acc_task_<i>... (wall time in run.json)\n"
        "  sweep.csv  lambda,mean_accuracy,ci_halfwidth,n_runs,n_failed,valid\n"
        "  prune.csv  criterion,fraction,mean_accuracy,ci_halfwidth\n"
        "  explosion.csv  step,original,stabilized"};
    app.require_subcommand(1);

    // fetch-data
    auto* fetch = app.add_subcommand("fetch-data", "download or validate the IDX corpora");
    std::string fetch_dir = data_dir_default(), mirror, fashion_mirror;
    bool validate_only = false;
    fetch->add_option("--data-dir", fetch_dir, "dataset root")->capture_default_str();
    fetch->add_option("--mirror", mirror, "base URL serving the gzipped MNIST IDX files");
    fetch->add_option("--fashion-mirror", fashion_mirror,
                      "base URL serving the gzipped FashionMNIST IDX files");
    fetch->add_flag("--validate-only", validate_only,
                    "only check pre-placed files (offline mode)");

    // train-seq
    auto* train = app.add_subcommand("train-seq", "sequential training over a task sequence");
    CommonOpts tr;
    std::string tr_penalty = "none";
    double tr_lambda = 0.0;
    int tr_runs = 1;
    bool tr_clip = false;
    double tr_clip_norm = 1.0;
    add_common(train, tr);
    train->add_option("--penalty", tr_penalty, "none | original | stabilized")
        ->capture_default_str();
    train->add_option("--lambda", tr_lambda, "penalty strength")->capture_default_str();
    train->add_option("--runs", tr_runs, "independent seeds (seed, seed+1, ...)")
        ->capture_default_str();
    train->add_flag("--clip", tr_clip, "clip the combined gradient to --clip-norm");
    train->add_option("--clip-norm", tr_clip_norm, "global-norm clip threshold")
        ->capture_default_str();

    // sweep
    auto* sweep = app.add_subcommand("sweep", "lambda grid search with Student-t CIs");
    CommonOpts sw;
    std::string sw_penalty = "original", sw_lambdas = "1,2,4.5,8,16";
    int sw_runs = 5, sw_jobs = int(std::thread::hardware_concurrency());
    add_common(sweep, sw);
    sweep->add_option("--penalty", sw_penalty, "original | stabilized")->capture_default_str();
    sweep->add_option("--lambdas", sw_lambdas, "comma-separated grid")->capture_default_str();
    sweep->add_option("--runs", sw_runs, "seeds per grid point")->capture_default_str();
    sweep->add_option("--jobs", sw_jobs, "worker threads")->capture_default_str();

    // prune
    auto* prune = app.add_subcommand("prune", "single-task pruning curves per criterion");
    CommonOpts pr;
    std::string pr_criteria = "magnitude,fisher,mas,si,total-abs-signal";
    std::string pr_fractions = "0,0.2,0.4,0.6,0.7,0.8,0.9,0.95,0.99,1";
    int pr_seeds = 10;
    add_common(prune, pr);
    prune->add_option("--criteria", pr_criteria, "comma-separated criteria")
        ->capture_default_str();
    prune->add_option("--fractions", pr_fractions, "comma-separated prune fractions")
        ->capture_default_str();
    prune->add_option("--seeds", pr_seeds, "independent nets to average")->capture_default_str();

    // demo-explosion
    auto* demo = app.add_subcommand("demo-explosion",
                                    "closed-form |w - w*| trajectory under both penalties");
    double de_alpha = 0.001, de_lambda = 40.0, de_omega = 50.0;
    int de_steps = 10;
    std::string de_out;
    demo->add_option("--alpha", de_alpha, "learning rate")->capture_default_str();
    demo->add_option("--lambda", de_lambda, "penalty strength")->capture_default_str();
    demo->add_option("--omega", de_omega, "importance of the weight")->capture_default_str();
    demo->add_option("--steps", de_steps, "steps to trace")->capture_default_str();
    demo->add_option("--out", de_out, "also write explosion.csv + explosion.svg here");

    // report
    auto* report = app.add_subcommand("report", "render SVG plots from result CSVs");
    std::vector<std::string> rp_sweeps;
    std::string rp_prune, rp_explosion, rp_out = "results";
    report->add_option("--sweep", rp_sweeps, "sweep CSV(s); one labeled series each");
    report->add_option("--prune", rp_prune, "prune CSV; one series per criterion");
    report->add_option("--explosion", rp_explosion, "explosion CSV");
    report->add_option("--out", rp_out, "output directory")->capture_default_str();

    // later occurrences win, so explicit flags override spliced --config values
    for (CLI::App* sub : app.get_subcommands({}))
        for (CLI::Option* opt : sub->get_options())
            if (opt->get_expected_max() == 1)
                opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    std::vector<std::string> args(argv, argv + argc);
    try {
        args = splice_config(args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::vector<const char*> cargs;
    for (const auto& a : args) cargs.push_back(a.c_str());
    try {
        app.parse(int(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*fetch) {
            if (!mirror.empty()) fetch_corpus(mirror, fetch_dir, "");
            if (!fashion_mirror.empty()) fetch_corpus(fashion_mirror, fetch_dir, "fashion-");
            validate_corpus(fetch_dir, "");
            std::cout << "MNIST corpus at " << fetch_dir << ": OK\n";
            try {
                validate_corpus(fetch_dir, "fashion-");
                std::cout << "FashionMNIST corpus at " << fetch_dir << ": OK\n";
            } catch (const DataError& e) {
                if (!fashion_mirror.empty() || !validate_only) throw;
                std::cout << "FashionMNIST corpus: not present (" << e.what() << ")\n";
            }
        } else if (*train) {
            RunConfig cfg = run_config_from(tr);
            cfg.penalty = penalty_from_name(tr_penalty);
            cfg.lambda = tr_lambda;
            cfg.clip = tr_clip;
            cfg.clip_norm = tr_clip_norm;
            json opts = common_json(tr);
            opts.update({{"penalty", tr_penalty},
                         {"lambda", tr_lambda},
                         {"runs", tr_runs},
                         {"clip", tr_clip},
                         {"clip-norm", tr_clip_norm}});
            echo_config(tr.out_dir, "train-seq", opts);
            DataStore store = DataStore::load(tr.data_dir, needs_fashion(cfg));
            std::vector<RunResult> runs;
            std::vector<double> lambdas, accs;
            for (int r = 0; r < tr_runs; ++r) {
                RunConfig rc = cfg;
                rc.seed = cfg.seed + std::uint64_t(r);
                rc.sequence = make_task_sequence(
                    !tr.tasks.empty()
                        ? tr.tasks
                        : (tr.net == "conv" ? "rotated-mnist-fashion-4" : "permuted-mnist-10"),
                    rc.seed);
                RunResult res = run_sequential(rc, store);
                log_line("seed " + std::to_string(rc.seed) + ": " +
                         (res.failed ? "FAILED (" + res.failure + ")"
                                     : "average accuracy " + std::to_string(res.average_accuracy) +
                                           " (" + std::to_string(res.wall_time_s) + " s)"));
                if (!res.failed) accs.push_back(res.average_accuracy);
                runs.push_back(std::move(res));
                lambdas.push_back(tr_lambda);
            }
            write_runs_csv(tr.out_dir + "/runs.csv", runs, lambdas);
            write_run_json(tr.out_dir + "/run.json", cfg, runs);
            if (accs.size() >= 2) {
                auto [mean, hw] = mean_ci(accs);
                log_line("mean average accuracy " + std::to_string(mean) + " +- " +
                         std::to_string(hw) + " (0.95 CI, " + std::to_string(accs.size()) +
                         " runs)");
            }
            if (accs.empty()) throw EwcError("all runs failed");
        } else if (*sweep) {
            RunConfig cfg = run_config_from(sw);
            cfg.penalty = penalty_from_name(sw_penalty);
            if (cfg.penalty == PenaltyKind::None)
                throw EwcError("sweep needs --penalty original or stabilized");
            const std::vector<double> grid = parse_doubles(sw_lambdas);
            json opts = common_json(sw);
            opts.update({{"penalty", sw_penalty},
                         {"lambdas", sw_lambdas},
                         {"runs", sw_runs},
                         {"jobs", sw_jobs}});
            echo_config(sw.out_dir, "sweep", opts);
            DataStore store = DataStore::load(sw.data_dir, needs_fashion(cfg));
            SweepResult result = sweep_lambda(cfg, grid, sw_runs, store, sw_jobs, log_line);
            write_sweep_csv(sw.out_dir + "/sweep.csv", result);
            std::vector<double> lambdas;
            for (double l : grid)
                for (int r = 0; r < sw_runs; ++r) lambdas.push_back(l);
            write_runs_csv(sw.out_dir + "/runs.csv", result.runs, lambdas);
            plot_sweep_csvs({sw.out_dir + "/sweep.csv"}, sw.out_dir + "/sweep.svg");
            log_line("best lambda " + std::to_string(result.best_lambda));
        } else if (*prune) {
            PruneExperimentConfig cfg;
            for (const auto& name : [&] {
                     std::vector<std::string> names;
                     std::stringstream ss(pr_criteria);
                     for (std::string item; std::getline(ss, item, ',');) names.push_back(item);
                     return names;
                 }())
                cfg.criteria.push_back(prune_criterion_from_name(name));
            cfg.fractions = parse_doubles(pr_fractions);
            cfg.n_seeds = pr_seeds;
            cfg.seed_base = pr.seed;
            cfg.epochs = pr.epochs;
            cfg.batch_size = pr.batch_size;
            cfg.adam.lr = pr.lr;
            cfg.importance_samples = pr.importance_samples;
            json opts = common_json(pr);
            opts.update(
                {{"criteria", pr_criteria}, {"fractions", pr_fractions}, {"seeds", pr_seeds}});
            echo_config(pr.out_dir, "prune", opts);
            DataStore store = DataStore::load(pr.data_dir, false);
            auto curves = run_prune_experiment(cfg, store, log_line);
            write_prune_csv(pr.out_dir + "/prune.csv", curves);
            plot_prune_csv(pr.out_dir + "/prune.csv", pr.out_dir + "/prune.svg");
        } else if (*demo) {
            ExplosionTrajectory orig =
                explosion_demo(de_alpha, de_lambda, de_omega, de_steps, PenaltyKind::Original);
            ExplosionTrajectory stab =
                explosion_demo(de_alpha, de_lambda, de_omega, de_steps, PenaltyKind::Stabilized);
            const double alo = de_alpha * de_lambda * de_omega;
            std::printf("alpha*lambda*omega = %g: original step factor %g, stabilized %g\n", alo,
                        step_factor(PenaltyKind::Original, de_alpha, de_lambda, de_omega),
                        step_factor(PenaltyKind::Stabilized, de_alpha, de_lambda, de_omega));
            std::printf("%6s  %16s  %16s\n", "step", "original", "stabilized");
            for (std::size_t s = 0; s < std::max(orig.distances.size(), stab.distances.size());
                 ++s)
                std::printf("%6zu  %16.8g  %16.8g\n", s,
                            s < orig.distances.size() ? orig.distances[s] : std::numeric_limits<double>::infinity(),
                            s < stab.distances.size() ? stab.distances[s] : std::numeric_limits<double>::infinity());
            if (orig.diverged)
                std::printf("original trajectory overflowed after %zu steps\n",
                            orig.distances.size() - 1);
            if (!de_out.empty()) {
                fs::create_directories(de_out);
                echo_config(de_out, "demo-explosion",
                            {{"alpha", de_alpha},
                             {"lambda", de_lambda},
                             {"omega", de_omega},
                             {"steps", de_steps},
                             {"out", de_out}});
                std::ofstream csv(fs::path(de_out) / "explosion.csv");
                csv << "step,original,stabilized\n";
                csv.precision(10);
                for (std::size_t s = 0; s < orig.distances.size() && s < stab.distances.size();
                     ++s)
                    csv << s << "," << orig.distances[s] << "," << stab.distances[s] << "\n";
                csv.close();
                plot_explosion_csv((fs::path(de_out) / "explosion.csv").string(),
                                   (fs::path(de_out) / "explosion.svg").string());
            }
        } else if (*report) {
            if (rp_sweeps.empty() && rp_prune.empty() && rp_explosion.empty())
                throw EwcError("report: give at least one of --sweep, --prune, --explosion");
            fs::create_directories(rp_out);
            if (!rp_sweeps.empty())
                plot_sweep_csvs(rp_sweeps, rp_out + "/sweep.svg");
            if (!rp_prune.empty()) plot_prune_csv(rp_prune, rp_out + "/prune.svg");
            if (!rp_explosion.empty())
                plot_explosion_csv(rp_explosion, rp_out + "/explosion.svg");
            std::cout << "plots written to " << rp_out << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
