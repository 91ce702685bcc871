#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "consolidate/importance.hpp"
#include "consolidate/rng.hpp"
#include "consolidate/svg.hpp"

using namespace ewc;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("ewc_ser_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

ImportanceMap random_map(std::size_t n, Method m, std::uint64_t seed) {
    ImportanceMap map = ImportanceMap::zeros(n, m);
    Rng rng(seed);
    for (double& v : map.omega) v = rng.uniform() * 100.0;
    map.n_samples_used = 60000;
    return map;
}

}  // namespace

TEST_CASE("importance maps round-trip bitwise with their metadata") {
    TempDir dir;
    ImportanceMap map = random_map(257, Method::Mas, 11);
    const std::string path = (dir.path / "omega.bin").string();
    save_importance(map, path, 0xabcdef);
    ImportanceMap back = load_importance(path, 0xabcdef);
    CHECK(back.method == Method::Mas);
    CHECK(back.n_samples_used == 60000);
    REQUIRE(back.omega.size() == 257);
    for (std::size_t i = 0; i < 257; ++i) CHECK(back.omega[i] == map.omega[i]);
    CHECK(std::filesystem::exists(dir.path / "omega.bin.json"));
}

TEST_CASE("importance load rejects a fingerprint mismatch") {
    TempDir dir;
    const std::string path = (dir.path / "omega.bin").string();
    save_importance(random_map(16, Method::FisherLabel, 3), path, 1);
    CHECK_THROWS_AS(load_importance(path, 2), EwcError);
    // without an expectation, the stored fingerprint is not checked
    CHECK_NOTHROW(load_importance(path));
}

TEST_CASE("importance load reports missing and truncated files") {
    TempDir dir;
    const std::string path = (dir.path / "omega.bin").string();
    CHECK_THROWS_AS(load_importance(path), EwcError);
    save_importance(random_map(64, Method::Si, 5), path, 0);
    std::filesystem::resize_file(path, 64);  // keep 8 of 64 doubles
    CHECK_THROWS_AS(load_importance(path), EwcError);
}

TEST_CASE("method names round-trip through the sidecar") {
    TempDir dir;
    for (Method m : {Method::FisherLabel, Method::FisherArgmax, Method::FisherSampled,
                     Method::Mas, Method::Si, Method::TotalAbsSignal}) {
        const std::string path = (dir.path / (method_name(m) + ".bin")).string();
        save_importance(random_map(8, m, 7), path, 0);
        CHECK(load_importance(path).method == m);
    }
}

TEST_CASE("svg output is a well-formed standalone plot") {
    PlotSpec spec;
    spec.title = "average accuracy vs lambda";
    spec.x_label = "lambda";
    spec.y_label = "accuracy";
    spec.log_x = true;
    PlotSeries s;
    s.label = "mas";
    s.x = {0.1, 1.0, 10.0, 100.0};
    s.y = {0.80, 0.90, 0.95, 0.85};
    s.yerr = {0.01, 0.01, 0.002, 0.03};
    const std::string svg = render_svg(spec, {s});
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find("average accuracy vs lambda") != std::string::npos);
    CHECK(svg.find("mas") != std::string::npos);
    CHECK(svg.find("polyline") != std::string::npos);
    CHECK(svg.find("nan") == std::string::npos);

    TempDir dir;
    const std::string path = (dir.path / "plot.svg").string();
    write_svg(path, spec, {s});
    std::ifstream in(path);
    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(body == svg);
}

TEST_CASE("svg render rejects ragged series but tolerates partial error bars") {
    PlotSpec spec;
    PlotSeries s;
    s.x = {1.0, 2.0};
    s.y = {1.0};
    CHECK_THROWS_AS(render_svg(spec, {s}), EwcError);
    CHECK_THROWS_AS(render_svg(spec, {}), EwcError);
    // missing trailing yerr entries mean "no bar", not an error
    s.y = {1.0, 2.0};
    s.yerr = {0.1};
    CHECK_NOTHROW(render_svg(spec, {s}));
}
