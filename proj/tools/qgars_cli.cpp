// Command-line front end. Talks to the library only through qgars.h.

#include "qgars/qgars.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

struct Options {
    std::string config_path;
    std::string profile;
    std::string out;
    std::string method;
    std::optional<long long> seed_base;
    std::optional<int> workers;
    std::vector<std::string> sets;
    std::string axis;
    std::string values;
    std::string split = "test";
    bool quiet = false;
};

struct Failure {
    qgars_status status;
};

void check(qgars_status s) {
    if (s != QGARS_OK) throw Failure{s};
}

using ConfigPtr = std::unique_ptr<qgars_config, decltype(&qgars_config_destroy)>;

std::string take_string(char* s) {
    std::string out = s ? s : "";
    qgars_string_free(s);
    return out;
}

void log_line(const char* message, void*) { std::fprintf(stderr, "%s\n", message); }

ConfigPtr build_config(const Options& o) {
    qgars_config* raw = nullptr;
    if (!o.config_path.empty()) {
        check(qgars_config_load(o.config_path.c_str(), &raw));
    } else {
        check(qgars_config_create(o.profile.empty() ? "desk" : o.profile.c_str(), &raw));
    }
    ConfigPtr cfg(raw, &qgars_config_destroy);
    if (!o.config_path.empty() && !o.profile.empty()) {
        std::fprintf(stderr, "note: --profile is ignored when --config is given\n");
    }
    if (!o.method.empty()) check(qgars_config_set(cfg.get(), "method", ("\"" + o.method + "\"").c_str()));
    if (!o.out.empty()) check(qgars_config_set(cfg.get(), "output_dir", nlohmann::json(o.out).dump().c_str()));
    if (o.seed_base) {
        char* text = nullptr;
        check(qgars_config_to_json(cfg.get(), &text));
        const auto n = nlohmann::json::parse(take_string(text)).at("seeds").size();
        nlohmann::json seeds = nlohmann::json::array();
        for (std::size_t i = 0; i < n; ++i) seeds.push_back(*o.seed_base + static_cast<long long>(i));
        check(qgars_config_set(cfg.get(), "seeds", seeds.dump().c_str()));
    }
    if (o.workers) check(qgars_config_set(cfg.get(), "workers", std::to_string(*o.workers).c_str()));
    for (const auto& kv : o.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got '" + kv + "'");
        check(qgars_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
    }
    check(qgars_config_validate(cfg.get()));
    return cfg;
}

std::string work_dir(const qgars_config* cfg, const Options& o) {
    if (!o.out.empty()) return o.out;
    char* text = nullptr;
    check(qgars_config_to_json(cfg, &text));
    return nlohmann::json::parse(take_string(text)).at("output_dir").get<std::string>();
}

std::vector<double> parse_values(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw CLI::ValidationError("--values", "not a number: '" + item + "'");
        }
    }
    if (out.empty()) throw CLI::ValidationError("--values", "no values given");
    return out;
}

void print_report(const std::string& json) {
    const auto r = nlohmann::json::parse(json);
    for (const auto& res : r.at("results")) {
        std::printf("%-22s %7.2f", res.at("label").get<std::string>().c_str(), res.at("mean").get<double>());
        if (!res.at("std").is_null()) std::printf(" +/- %.2f", res.at("std").get<double>());
        std::printf("  (max %.2f, %zu seed%s)\n", res.at("max").get<double>(), res.at("accuracies").size(),
                    res.at("accuracies").size() == 1 ? "" : "s");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantum-guided autoencoder experiments on a simulated Rydberg reservoir"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(qgars_version()));
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "JSON experiment config")->check(CLI::ExistingFile);
        sub->add_option("--profile", o.profile, "Preset when no config is given")->check(CLI::IsMember({"desk", "paper"}));
        sub->add_option("--out", o.out, "Output (or work) directory");
        sub->add_option("--seed-base", o.seed_base, "Seeds become base, base+1, ...");
        sub->add_option("--method", o.method, "Reduction method")->check(CLI::IsMember({"pca", "ae", "qgars"}));
        sub->add_option("-j,--workers", o.workers, "Seeds (or sweep cells) run concurrently")->check(CLI::PositiveNumber);
        sub->add_option("--set", o.sets, "Override a config key, e.g. --set guided.lambda=0.7");
        sub->add_flag("-q,--quiet", o.quiet, "No progress output");
    };

    auto* gen = app.add_subcommand("gen-data", "Load or generate the dataset and write the train/test split");
    auto* train = app.add_subcommand("train", "Fit the reduction model on the stored train split");
    auto* embed = app.add_subcommand("embed", "Compute features and reservoir embeddings for both splits");
    auto* classify = app.add_subcommand("classify", "Train the classifiers and write report.json");
    auto* run = app.add_subcommand("run", "Full multi-seed experiment");
    auto* sweep = app.add_subcommand("sweep", "Run one experiment per axis value");
    auto* exp = app.add_subcommand("export", "Write <split>_embeddings.csv with the label column first");
    for (auto* sub : {gen, train, embed, classify, run, sweep, exp}) common(sub);
    sweep->add_option("--axis", o.axis, "Swept parameter")
        ->required()
        ->check(CLI::IsMember({"lambda", "update_frequency", "n_qubits"}));
    sweep->add_option("--values", o.values, "Comma-separated values")->required();
    exp->add_option("--split", o.split, "train or test")->check(CLI::IsMember({"train", "test"}));

    CLI11_PARSE(app, argc, argv);

    try {
        const ConfigPtr cfg = build_config(o);
        const qgars_log_fn log = o.quiet ? nullptr : &log_line;
        if (*gen) {
            check(qgars_gen_data(cfg.get(), work_dir(cfg.get(), o).c_str(), log, nullptr));
        } else if (*train) {
            check(qgars_train(cfg.get(), work_dir(cfg.get(), o).c_str(), log, nullptr));
        } else if (*embed) {
            check(qgars_embed(cfg.get(), work_dir(cfg.get(), o).c_str(), log, nullptr));
        } else if (*classify) {
            char* report = nullptr;
            check(qgars_classify(cfg.get(), work_dir(cfg.get(), o).c_str(), log, nullptr, &report));
            print_report(take_string(report));
        } else if (*run) {
            char* report = nullptr;
            check(qgars_run(cfg.get(), log, nullptr, &report));
            print_report(take_string(report));
        } else if (*sweep) {
            const auto values = parse_values(o.values);
            char* csv = nullptr;
            check(qgars_sweep(cfg.get(), o.axis.c_str(), values.data(), values.size(), log, nullptr, &csv));
            std::fputs(take_string(csv).c_str(), stdout);
        } else if (*exp) {
            char* path = nullptr;
            check(qgars_export(cfg.get(), work_dir(cfg.get(), o).c_str(), o.split.c_str(), &path));
            std::printf("%s\n", take_string(path).c_str());
        }
    } catch (const Failure& f) {
        std::fprintf(stderr, "error (%s): %s\n", qgars_status_string(f.status), qgars_last_error_message());
        return static_cast<int>(f.status);
    } catch (const CLI::Error& e) {
        return app.exit(e);
    }
    return 0;
}
