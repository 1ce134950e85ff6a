// Exercises the shared library through its C header only.

#include "doctest.h"
#include "oracles.hpp"

#include "qgars/qgars.h"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct Config {
    qgars_config* ptr = nullptr;
    explicit Config(const char* profile = "desk") { REQUIRE(qgars_config_create(profile, &ptr) == QGARS_OK); }
    ~Config() { qgars_config_destroy(ptr); }
    nlohmann::json json() const {
        char* text = nullptr;
        REQUIRE(qgars_config_to_json(ptr, &text) == QGARS_OK);
        auto j = nlohmann::json::parse(text);
        qgars_string_free(text);
        return j;
    }
};

struct Reservoir {
    qgars_reservoir* ptr = nullptr;
    explicit Reservoir(const Config& c) { REQUIRE(qgars_reservoir_create(c.ptr, &ptr) == QGARS_OK); }
    ~Reservoir() { qgars_reservoir_destroy(ptr); }
};

}  // namespace

TEST_CASE("status strings and version") {
    CHECK(std::string(qgars_version()) == "0.1.0");
    CHECK(std::string(qgars_status_string(QGARS_OK)) == "ok");
    CHECK(std::string(qgars_status_string(QGARS_ERR_NULL_ARGUMENT)) == "null argument");
    CHECK(std::string(qgars_status_string(QGARS_ERR_IO)) == "i/o error");
    CHECK(std::string(qgars_status_string(static_cast<qgars_status>(99))) == "unrecognised status");
}

TEST_CASE("null arguments are reported rather than dereferenced") {
    CHECK(qgars_config_create("desk", nullptr) == QGARS_ERR_NULL_ARGUMENT);
    CHECK(std::string(qgars_last_error_message()).find("out") != std::string::npos);
    CHECK(qgars_config_validate(nullptr) == QGARS_ERR_NULL_ARGUMENT);
    CHECK(qgars_run(nullptr, nullptr, nullptr, nullptr) == QGARS_ERR_NULL_ARGUMENT);
    CHECK(qgars_reservoir_dims(nullptr, nullptr, nullptr) == QGARS_ERR_NULL_ARGUMENT);
    Config c;
    CHECK(qgars_config_set(c.ptr, nullptr, "1") == QGARS_ERR_NULL_ARGUMENT);
    CHECK(qgars_export(c.ptr, "/tmp", nullptr, nullptr) == QGARS_ERR_NULL_ARGUMENT);
    qgars_config_destroy(nullptr);
    qgars_reservoir_destroy(nullptr);
    qgars_string_free(nullptr);
}

TEST_CASE("config create, set and serialise") {
    Config c;
    CHECK(qgars_config_set(c.ptr, "guided.lambda", "0.3") == QGARS_OK);
    CHECK(c.json()["guided"]["lambda"] == 0.3);

    CHECK(qgars_config_set(c.ptr, "guided.lamda", "0.3") == QGARS_ERR_INVALID_CONFIG);
    CHECK(std::string(qgars_last_error_message()).find("guided.lamda") != std::string::npos);

    CHECK(qgars_config_set(c.ptr, "reservoir.n_atoms", "5") == QGARS_OK);
    CHECK(qgars_config_validate(c.ptr) == QGARS_ERR_INVALID_CONFIG);
    CHECK(qgars_config_set(c.ptr, "n_features", "5") == QGARS_OK);
    CHECK(qgars_config_validate(c.ptr) == QGARS_OK);

    qgars_config* bad = nullptr;
    CHECK(qgars_config_create("laptop", &bad) == QGARS_ERR_INVALID_CONFIG);
    CHECK(bad == nullptr);
    CHECK(qgars_config_from_json("{}", &bad) == QGARS_ERR_INVALID_CONFIG);
    CHECK(qgars_config_load("/nonexistent/cfg.json", &bad) == QGARS_ERR_IO);

    // to_json output feeds back in unchanged.
    const std::string text = c.json().dump();
    qgars_config* again = nullptr;
    REQUIRE(qgars_config_from_json(text.c_str(), &again) == QGARS_OK);
    char* out = nullptr;
    REQUIRE(qgars_config_to_json(again, &out) == QGARS_OK);
    CHECK(nlohmann::json::parse(out) == c.json());
    qgars_string_free(out);
    qgars_config_destroy(again);
}

TEST_CASE("reservoir dimensions for both profiles") {
    std::size_t atoms = 0, dim = 0;
    {
        Config c("desk");
        Reservoir r(c);
        REQUIRE(qgars_reservoir_dims(r.ptr, &atoms, &dim) == QGARS_OK);
        CHECK(atoms == 8);
        CHECK(dim == 8 * (8 + 28 + 56));
    }
    {
        Config c("paper");
        Reservoir r(c);
        REQUIRE(qgars_reservoir_dims(r.ptr, &atoms, &dim) == QGARS_OK);
        CHECK(atoms == 12);
        CHECK(dim == 4768);
    }
}

TEST_CASE("reservoir embedding through the C API matches the dense oracle") {
    Config c;
    REQUIRE(qgars_config_set(c.ptr, "reservoir.n_atoms", "3") == QGARS_OK);
    REQUIRE(qgars_config_set(c.ptr, "reservoir.n_timesteps", "4") == QGARS_OK);
    const auto r = c.json()["reservoir"];
    Reservoir res(c);
    std::size_t dim = 0;
    REQUIRE(qgars_reservoir_dims(res.ptr, nullptr, &dim) == QGARS_OK);
    REQUIRE(dim == 4 * 7);

    std::mt19937_64 gen(3);
    std::normal_distribution<double> z;
    const std::size_t rows = 5;
    std::vector<double> latents(rows * 3);
    for (auto& v : latents) v = z(gen);
    std::vector<double> out(rows * dim), out4(rows * dim);
    REQUIRE(qgars_reservoir_embed(res.ptr, latents.data(), rows, 3, out.data(), out.size(), 1) == QGARS_OK);
    REQUIRE(qgars_reservoir_embed(res.ptr, latents.data(), rows, 3, out4.data(), out4.size(), 4) == QGARS_OK);
    CHECK(out == out4);

    for (std::size_t i = 0; i < rows; ++i) {
        oracle::ChainParams p;
        p.n_atoms = 3;
        p.spacing = r["lattice_spacing"];
        p.rabi = r["rabi_frequency"];
        p.c6 = r["c6_coefficient"];
        p.global_detuning = r["global_detuning"];
        for (int j = 0; j < 3; ++j) {
            p.alpha.push_back(1.0);
            p.local.push_back(r["detuning_scale"].get<double>() * oracle::logistic(latents[i * 3 + j]));
        }
        const auto want = oracle::embedding(p, r["total_time"], 4, {1, 2, 3});
        double worst = 0.0;
        for (std::size_t k = 0; k < dim; ++k) worst = std::max(worst, std::abs(out[i * dim + k] - want[k]));
        CHECK(worst < 1e-8);
    }
}

TEST_CASE("reservoir embed rejects mismatched shapes") {
    Config c;
    Reservoir res(c);
    std::vector<double> latents(2 * 7, 0.0), out(2 * 736);
    CHECK(qgars_reservoir_embed(res.ptr, latents.data(), 2, 7, out.data(), out.size(), 1) == QGARS_ERR_SHAPE);
    CHECK(std::string(qgars_last_error_message()).find("7 columns") != std::string::npos);
    std::vector<double> latents8(2 * 8, 0.0);
    CHECK(qgars_reservoir_embed(res.ptr, latents8.data(), 2, 8, out.data(), 100, 1) == QGARS_ERR_SHAPE);
    CHECK(qgars_reservoir_embed(res.ptr, nullptr, 0, 8, nullptr, 0, 1) == QGARS_OK);
}

TEST_CASE("stages run through the C API and errors carry codes") {
    const fs::path work = fs::temp_directory_path() / ("qgars_capi_" + std::to_string(::getpid()));
    fs::remove_all(work);
    Config c;
    for (const auto& [k, v] : std::vector<std::pair<const char*, const char*>>{
             {"method", "\"pca\""}, {"dataset.n_train", "30"}, {"dataset.n_test", "10"},
             {"classifier.epochs", "3"}, {"seeds", "[2]"}}) {
        REQUIRE(qgars_config_set(c.ptr, k, v) == QGARS_OK);
    }

    CHECK(qgars_train(c.ptr, work.c_str(), nullptr, nullptr) == QGARS_ERR_IO);  // no data yet

    std::vector<std::string> lines;
    auto collect = [](const char* m, void* ud) { static_cast<std::vector<std::string>*>(ud)->push_back(m); };
    REQUIRE(qgars_gen_data(c.ptr, work.c_str(), collect, &lines) == QGARS_OK);
    CHECK(!lines.empty());
    REQUIRE(qgars_train(c.ptr, work.c_str(), nullptr, nullptr) == QGARS_OK);
    REQUIRE(qgars_embed(c.ptr, work.c_str(), nullptr, nullptr) == QGARS_OK);
    char* report = nullptr;
    REQUIRE(qgars_classify(c.ptr, work.c_str(), nullptr, nullptr, &report) == QGARS_OK);
    const auto j = nlohmann::json::parse(report);
    qgars_string_free(report);
    CHECK(j["n_test"] == 10);
    CHECK(j["results"][0]["label"] == "PCA + QRC");

    char* path = nullptr;
    REQUIRE(qgars_export(c.ptr, work.c_str(), "train", &path) == QGARS_OK);
    CHECK(fs::path(path) == work / "train_embeddings.csv");
    qgars_string_free(path);
    CHECK(qgars_export(c.ptr, work.c_str(), "dev", nullptr) == QGARS_ERR_INVALID_INPUT);
    fs::remove_all(work);
}
