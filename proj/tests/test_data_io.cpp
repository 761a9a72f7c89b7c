#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "kanmix/data_io.hpp"
#include "reference_data.hpp"

using namespace kanmix;
namespace fs = std::filesystem;

namespace {
struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("kanmix_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

DatasetSpec tiny_spec(std::size_t features, std::size_t tr, std::size_t va, std::size_t te) {
    DatasetSpec spec;
    spec.name = "tiny";
    spec.feature_count = features;
    spec.granularity = "1 hour";
    spec.split = {SplitRule::Kind::rows, tr, va, te};
    return spec;
}
} // namespace

TEST_CASE("load_csv: plain numeric file in row order") {
    TempDir dir;
    const std::string path = dir.file("a.csv");
    write_file(path, "1.5,2\n3,4\n5,6.25\n");
    RawSeries s = load_csv(path, tiny_spec(2, 1, 1, 1));
    REQUIRE(s.values.shape() == std::vector<std::size_t>{3, 2});
    CHECK(s.values.at(0, 0) == 1.5);
    CHECK(s.values.at(2, 1) == 6.25);
    CHECK(s.timestamps.empty());
}

TEST_CASE("load_csv: header and timestamp column are detected") {
    TempDir dir;
    const std::string path = dir.file("b.csv");
    write_file(path, "date,HUFL,OT\n2016-07-01 00:00:00,5.827,30.53\n2016-07-01 01:00:00,5.693,27.79\n");
    RawSeries s = load_csv(path, tiny_spec(2, 1, 1, 0));
    REQUIRE(s.values.shape() == std::vector<std::size_t>{2, 2});
    CHECK(s.feature_names[0] == "HUFL");
    CHECK(s.feature_names[1] == "OT");
    CHECK(s.timestamps[0] == "2016-07-01 00:00:00");
    CHECK(s.values.at(1, 1) == 27.79);
}

TEST_CASE("load_csv: empty cell, ragged row, wrong width are rejected") {
    TempDir dir;
    const std::string missing = dir.file("m.csv");
    write_file(missing, "1,2\n3,\n");
    CHECK_THROWS_WITH_AS(load_csv(missing, tiny_spec(2, 1, 1, 0)),
                         doctest::Contains("row 1"), io_error);

    const std::string ragged = dir.file("r.csv");
    write_file(ragged, "1,2\n3,4,5\n");
    CHECK_THROWS_WITH_AS(load_csv(ragged, tiny_spec(2, 1, 1, 0)), doctest::Contains("line 2"),
                         io_error);

    const std::string narrow = dir.file("n.csv");
    write_file(narrow, "1,2\n3,4\n");
    CHECK_THROWS_AS(load_csv(narrow, tiny_spec(5, 1, 1, 0)), io_error);

    CHECK_THROWS_AS(load_csv(dir.file("absent.csv"), tiny_spec(2, 1, 1, 0)), io_error);
}

TEST_CASE("write_csv then load_csv reproduces the exact doubles") {
    TempDir dir;
    Rng rng(5);
    RawSeries orig;
    orig.values = Tensor({20, 3});
    for (std::size_t i = 0; i < orig.values.size(); ++i)
        orig.values[i] = rng.normal() * std::pow(10.0, static_cast<double>(rng.below(7)) - 3.0);
    orig.feature_names = {"a", "b", "c"};
    const std::string path = dir.file("rt.csv");
    write_csv(path, orig);
    RawSeries back = load_csv(path, tiny_spec(3, 1, 1, 1));
    REQUIRE(back.values.shape() == orig.values.shape());
    for (std::size_t i = 0; i < back.values.size(); ++i)
        CHECK(back.values[i] == orig.values[i]); // bit-exact round trip
}

TEST_CASE("registry mismatch on time steps warns but loads") {
    TempDir dir;
    const std::string path = dir.file("w.csv");
    write_file(path, "1,2\n3,4\n5,6\n");
    DatasetSpec spec = tiny_spec(2, 1, 1, 1);
    spec.expected_time_steps = 99; // wrong on purpose
    RawSeries s = load_csv(path, spec);
    CHECK(s.values.dim(0) == 3);
}

TEST_CASE("apply_split: month rules resolve through the granularity") {
    DatasetSpec etth = *find_dataset(builtin_registry(), "ETTh1");
    RawSeries s;
    s.values = Tensor({17420, 7});
    auto ranges = apply_split(s, etth);
    CHECK(ranges[0].begin == 0);
    CHECK(ranges[0].end == 8640);
    CHECK(ranges[1].end == 8640 + 2880);
    CHECK(ranges[2].end == 8640 + 2880 + 2880);

    DatasetSpec ettm = *find_dataset(builtin_registry(), "ETTm1");
    RawSeries sm;
    sm.values = Tensor({69680, 7});
    auto mr = apply_split(sm, ettm);
    CHECK(mr[0].end == 34560);
    CHECK(mr[1].rows() == 11520);
    CHECK(mr[2].rows() == 11520);
}

TEST_CASE("apply_split: literal row rules, unused tail, overshoot") {
    DatasetSpec nn5w = *find_dataset(builtin_registry(), "NN5_weekly");
    RawSeries s;
    s.values = Tensor({113, 111});
    auto ranges = apply_split(s, nn5w);
    CHECK(ranges[0].rows() == 96);
    CHECK(ranges[1].rows() == 8);
    CHECK(ranges[2].rows() == 8);
    CHECK(ranges[2].end == 112); // one trailing row unused

    RawSeries shorter;
    shorter.values = Tensor({100, 111});
    CHECK_THROWS_AS(apply_split(shorter, nn5w), config_error);

    DatasetSpec fred = *find_dataset(builtin_registry(), "FRED_MD");
    RawSeries fs;
    fs.values = Tensor({728, 107});
    auto fr = apply_split(fs, fred);
    CHECK(fr[2].end == 698 + 14 + 14);

    DatasetSpec degenerate = tiny_spec(2, 5, 0, 5);
    RawSeries d;
    d.values = Tensor({20, 2});
    CHECK_THROWS_AS(apply_split(d, degenerate), config_error);
}

TEST_CASE("splits never overlap and windows stay inside them") {
    DatasetSpec spec = tiny_spec(1, 30, 12, 12);
    RawSeries s;
    s.values = Tensor({60, 1});
    for (std::size_t i = 0; i < 60; ++i) s.values[i] = static_cast<double>(i % 7);
    auto r = apply_split(s, spec);
    CHECK(r[0].end == r[1].begin);
    CHECK(r[1].end == r[2].begin);
    WindowedDataset d = window(s.values, 4, 2, r[0], r[1], r[2]);
    for (std::size_t st : d.train_starts) CHECK(st + 6 <= r[0].end);
    for (std::size_t st : d.valid_starts) {
        CHECK(st >= r[1].begin);
        CHECK(st + 6 <= r[1].end);
    }
    for (std::size_t st : d.test_starts) {
        CHECK(st >= r[2].begin);
        CHECK(st + 6 <= r[2].end);
    }
}

TEST_CASE("run config: ETTh2 v02 row parses with every field") {
    nlohmann::json j = {
        {"variant", "tskanmixer_v02"}, {"dataset", "ETTh2"}, {"L", 512},    {"H", 96},
        {"batch", 320},                {"blocks", 2},        {"dropout", 0.3},
        {"hidden_size", 64},           {"learning_rate", 0.0001},
        {"kan_dim", 1025},             {"kan_grid", 5},      {"kan_k", 3},
        {"loss", "mse"},               {"seed", 1},          {"patience", 10},
        {"max_epochs", 1000}};
    RunSpec spec = parse_run_config(j, builtin_registry());
    CHECK(spec.model.variant == Variant::tskanmixer_v02);
    CHECK(spec.model.C == 7);
    CHECK(spec.model.batch == 320);
    CHECK(spec.model.kan_dim == 1025);
    CHECK(spec.model.kan_grid == 5);
    CHECK(spec.model.kan_k == 3);
    CHECK(spec.train.max_epochs == 1000);
    CHECK(spec.train.patience == 10);
    CHECK(spec.train.batch_size == 320);
}

TEST_CASE("run config: Hospital v01 row and defaulted patience") {
    nlohmann::json j = {{"variant", "tskanmixer_v01"}, {"dataset", "Hospital"}, {"L", 24},
                        {"H", 12},                     {"batch", 8},            {"blocks", 2},
                        {"dropout", 0.5},              {"hidden_size", 767},    {"learning_rate", 0.001},
                        {"kan_dim", 24},               {"kan_grid", 10},        {"kan_k", 2}};
    RunSpec spec = parse_run_config(j, builtin_registry());
    CHECK(spec.model.hidden_size == 767);
    CHECK(spec.model.C == 767);
    CHECK(spec.model.kan_dim == 24);
    CHECK(spec.train.max_epochs == 200);
    CHECK(spec.train.patience == 5); // strict regime default

    nlohmann::json long_regime = j;
    long_regime["max_epochs"] = 1000;
    CHECK(parse_run_config(long_regime, builtin_registry()).train.patience == 10);
}

TEST_CASE("run config: rejection cases") {
    nlohmann::json base = {{"variant", "tskanmixer_v01"}, {"dataset", "ETTh1"},
                           {"L", 512},                    {"H", 96},
                           {"batch", 320},                {"blocks", 2},
                           {"dropout", 0.3},              {"hidden_size", 64},
                           {"learning_rate", 0.0001},     {"kan_dim", 512},
                           {"kan_grid", 5},               {"kan_k", 3}};
    CHECK_NOTHROW(parse_run_config(base, builtin_registry()));

    nlohmann::json no_k = base;
    no_k.erase("kan_k");
    CHECK_THROWS_WITH_AS(parse_run_config(no_k, builtin_registry()),
                         doctest::Contains("kan_k"), config_error);

    nlohmann::json unknown = base;
    unknown["learnig_rate"] = 0.1;
    CHECK_THROWS_WITH_AS(parse_run_config(unknown, builtin_registry()),
                         doctest::Contains("learnig_rate"), config_error);

    nlohmann::json bad_dropout = base;
    bad_dropout["dropout"] = 1.2;
    CHECK_THROWS_AS(parse_run_config(bad_dropout, builtin_registry()), config_error);

    nlohmann::json plain = {{"variant", "tsmixer"}, {"dataset", "ETTh1"}, {"L", 512},
                            {"H", 96},              {"batch", 32},        {"blocks", 2},
                            {"dropout", 0.3},       {"hidden_size", 64},  {"learning_rate", 0.0001}};
    CHECK_NOTHROW(parse_run_config(plain, builtin_registry()));
    nlohmann::json plain_kan = plain;
    plain_kan["kan_dim"] = 16;
    CHECK_THROWS_AS(parse_run_config(plain_kan, builtin_registry()), config_error);

    nlohmann::json no_data = plain;
    no_data.erase("dataset");
    CHECK_THROWS_WITH_AS(parse_run_config(no_data, builtin_registry()),
                         doctest::Contains("dataset"), config_error);
    no_data["features"] = 7;
    CHECK_NOTHROW(parse_run_config(no_data, builtin_registry()));
}

TEST_CASE("every published hyperparameter row parses into a valid config") {
    for (const auto& row : refdata::config_rows()) {
        CAPTURE(row.dataset);
        CAPTURE(row.variant);
        nlohmann::json j = {{"variant", row.variant}, {"dataset", row.dataset},
                            {"L", row.L},             {"H", row.H},
                            {"batch", row.batch},     {"blocks", row.blocks},
                            {"dropout", row.dropout}, {"hidden_size", row.hidden},
                            {"learning_rate", row.lr}};
        if (row.kan_dim != 0) {
            j["kan_dim"] = row.kan_dim;
            j["kan_grid"] = row.kan_grid;
            j["kan_k"] = row.kan_k;
        }
        RunSpec spec = parse_run_config(j, builtin_registry());
        CHECK(spec.model.C == refdata::dataset_features(row.dataset));
        CHECK_NOTHROW(spec.model.validate());
    }
}

#ifdef KANMIX_SOURCE_DIR
TEST_CASE("shipped config files parse") {
    const fs::path configs = fs::path(KANMIX_SOURCE_DIR) / "configs";
    REQUIRE(fs::exists(configs));
    std::size_t parsed = 0;
    for (const auto& entry : fs::directory_iterator(configs)) {
        const std::string name = entry.path().filename().string();
        if (entry.path().extension() != ".json") continue;
        if (name.find("registry") != std::string::npos) {
            CHECK_NOTHROW(load_registry(entry.path().string()));
            continue;
        }
        if (name.find("suite") != std::string::npos) continue; // suite files need run context
        CAPTURE(name);
        CHECK_NOTHROW(load_run_config(entry.path().string(), builtin_registry()));
        ++parsed;
    }
    CHECK(parsed >= 4);
}
#endif

TEST_CASE("custom registry file loads and shadows built-ins") {
    TempDir dir;
    const std::string path = dir.file("reg.json");
    write_file(path, R"([
      {"name": "synth", "features": 3,
       "split": {"type": "rows", "train": 3500, "valid": 750, "test": 750},
       "time_steps": 5000},
      {"name": "ETTh1", "features": 7, "granularity": "1 hour",
       "split": {"type": "months", "train": 12, "valid": 4, "test": 4}}
    ])");
    auto extra = load_registry(path);
    REQUIRE(extra.size() == 2);
    auto merged = merge_registries(extra);
    CHECK(find_dataset(merged, "synth") != nullptr);
    CHECK(find_dataset(merged, "Hospital") != nullptr);
    CHECK(find_dataset(merged, "synth")->split.train == 3500);
    // Exactly one ETTh1 entry after the merge.
    int count = 0;
    for (const auto& s : merged)
        if (s.name == "ETTh1") ++count;
    CHECK(count == 1);
}
