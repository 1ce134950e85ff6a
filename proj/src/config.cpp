#include "qgars/config.hpp"

#include "qgars/error.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace qgars {

using nlohmann::json;

const char* to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::synthetic: return "synthetic";
        case DatasetKind::mnist: return "mnist";
        case DatasetKind::patches: return "patches";
    }
    return "?";
}

const char* to_string(Method m) {
    switch (m) {
        case Method::pca: return "pca";
        case Method::ae: return "ae";
        case Method::qgars: return "qgars";
    }
    return "?";
}

Method method_from_string(const std::string& name) {
    if (name == "pca") return Method::pca;
    if (name == "ae") return Method::ae;
    if (name == "qgars") return Method::qgars;
    fail(ErrorCode::invalid_config, "unknown method '" + name + "' (expected pca, ae or qgars)");
}

namespace {

DatasetKind dataset_kind_from_string(const std::string& name) {
    if (name == "synthetic") return DatasetKind::synthetic;
    if (name == "mnist") return DatasetKind::mnist;
    if (name == "patches") return DatasetKind::patches;
    fail(ErrorCode::invalid_config, "unknown dataset kind '" + name + "'");
}

json to_json_value(const ExperimentConfig& c) {
    json classifiers = json::array();
    for (auto k : c.classifiers) classifiers.push_back(to_string(k));
    const auto& r = c.reservoir;
    const auto& p = c.dataset.polyp;
    const auto& s = c.guided.surrogate;
    return json{
        {"schema_version", kConfigSchemaVersion},
        {"profile", c.profile},
        {"dataset",
         {{"kind", to_string(c.dataset.kind)},
          {"n_train", c.dataset.n_train},
          {"n_test", c.dataset.n_test},
          {"seed", c.dataset.seed},
          {"polyp",
           {{"image_size", p.image_size},
            {"noise_sigma", p.noise_sigma},
            {"boost_min", p.boost_min},
            {"boost_max", p.boost_max},
            {"axis_min", p.axis_min},
            {"axis_max", p.axis_max},
            {"centre_span", p.centre_span}}},
          {"mnist_images", c.dataset.mnist_images},
          {"mnist_labels", c.dataset.mnist_labels},
          {"patch_dir", c.dataset.patch_dir},
          {"patch_manifest", c.dataset.patch_manifest},
          {"patch_size", c.dataset.patch_size}}},
        {"method", to_string(c.method)},
        {"qrc", c.qrc},
        {"n_features", c.n_features},
        {"autoencoder",
         {{"hidden", c.autoencoder.hidden},
          {"dropout", c.autoencoder.dropout},
          {"batch_norm", c.autoencoder.batch_norm},
          {"latent_batch_norm", c.autoencoder.latent_batch_norm}}},
        {"training",
         {{"epochs", c.training.epochs},
          {"batch_size", c.training.batch_size},
          {"learning_rate", c.training.learning_rate},
          {"weight_decay", c.training.weight_decay}}},
        {"guided",
         {{"lambda", c.guided.lambda},
          {"update_frequency", c.guided.update_frequency},
          {"probe_size", c.guided.probe_size},
          {"surrogate",
           {{"hidden", s.hidden},
            {"steps", s.steps},
            {"initial_steps", s.initial_steps},
            {"batch_size", s.batch_size},
            {"learning_rate", s.learning_rate}}}}},
        {"reservoir",
         {{"n_atoms", r.n_atoms},
          {"lattice_spacing", r.lattice_spacing},
          {"rabi_frequency", r.rabi_frequency},
          {"c6_coefficient", r.c6_coefficient},
          {"global_detuning", r.global_detuning},
          {"site_modulation", r.site_modulation},
          {"detuning_scale", r.detuning_scale},
          {"total_time", r.total_time},
          {"n_timesteps", r.n_timesteps},
          {"observable_orders", r.observable_orders}}},
        {"classifier",
         {{"kinds", classifiers},
          {"mlp_hidden", c.classifier.mlp_hidden},
          {"epochs", c.classifier.epochs},
          {"batch_size", c.classifier.batch_size},
          {"learning_rate", c.classifier.learning_rate},
          {"weight_decay", c.classifier.weight_decay},
          {"standardize", c.classifier.standardize}}},
        {"seeds", c.seeds},
        {"parallelism", c.parallelism},
        {"workers", c.workers},
        {"output_dir", c.output_dir},
        {"outputs", {{"save_embeddings", c.outputs.save_embeddings}, {"embeddings_csv", c.outputs.embeddings_csv}}},
    };
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& path) {
    try {
        j.at(key).get_to(out);
    } catch (const json::exception& e) {
        fail(ErrorCode::invalid_config, "config field " + path + key + ": " + e.what());
    }
}

ExperimentConfig from_json_value(const json& j) {
    ExperimentConfig c;
    read(j, "profile", c.profile, "");
    const auto& d = j.at("dataset");
    std::string kind;
    read(d, "kind", kind, "dataset.");
    c.dataset.kind = dataset_kind_from_string(kind);
    read(d, "n_train", c.dataset.n_train, "dataset.");
    read(d, "n_test", c.dataset.n_test, "dataset.");
    read(d, "seed", c.dataset.seed, "dataset.");
    const auto& p = d.at("polyp");
    read(p, "image_size", c.dataset.polyp.image_size, "dataset.polyp.");
    read(p, "noise_sigma", c.dataset.polyp.noise_sigma, "dataset.polyp.");
    read(p, "boost_min", c.dataset.polyp.boost_min, "dataset.polyp.");
    read(p, "boost_max", c.dataset.polyp.boost_max, "dataset.polyp.");
    read(p, "axis_min", c.dataset.polyp.axis_min, "dataset.polyp.");
    read(p, "axis_max", c.dataset.polyp.axis_max, "dataset.polyp.");
    read(p, "centre_span", c.dataset.polyp.centre_span, "dataset.polyp.");
    read(d, "mnist_images", c.dataset.mnist_images, "dataset.");
    read(d, "mnist_labels", c.dataset.mnist_labels, "dataset.");
    read(d, "patch_dir", c.dataset.patch_dir, "dataset.");
    read(d, "patch_manifest", c.dataset.patch_manifest, "dataset.");
    read(d, "patch_size", c.dataset.patch_size, "dataset.");

    std::string method;
    read(j, "method", method, "");
    c.method = method_from_string(method);
    read(j, "qrc", c.qrc, "");
    read(j, "n_features", c.n_features, "");

    const auto& a = j.at("autoencoder");
    read(a, "hidden", c.autoencoder.hidden, "autoencoder.");
    read(a, "dropout", c.autoencoder.dropout, "autoencoder.");
    read(a, "batch_norm", c.autoencoder.batch_norm, "autoencoder.");
    read(a, "latent_batch_norm", c.autoencoder.latent_batch_norm, "autoencoder.");

    const auto& t = j.at("training");
    read(t, "epochs", c.training.epochs, "training.");
    read(t, "batch_size", c.training.batch_size, "training.");
    read(t, "learning_rate", c.training.learning_rate, "training.");
    read(t, "weight_decay", c.training.weight_decay, "training.");

    const auto& g = j.at("guided");
    read(g, "lambda", c.guided.lambda, "guided.");
    read(g, "update_frequency", c.guided.update_frequency, "guided.");
    read(g, "probe_size", c.guided.probe_size, "guided.");
    const auto& s = g.at("surrogate");
    read(s, "hidden", c.guided.surrogate.hidden, "guided.surrogate.");
    read(s, "steps", c.guided.surrogate.steps, "guided.surrogate.");
    read(s, "initial_steps", c.guided.surrogate.initial_steps, "guided.surrogate.");
    read(s, "batch_size", c.guided.surrogate.batch_size, "guided.surrogate.");
    read(s, "learning_rate", c.guided.surrogate.learning_rate, "guided.surrogate.");

    const auto& r = j.at("reservoir");
    read(r, "n_atoms", c.reservoir.n_atoms, "reservoir.");
    read(r, "lattice_spacing", c.reservoir.lattice_spacing, "reservoir.");
    read(r, "rabi_frequency", c.reservoir.rabi_frequency, "reservoir.");
    read(r, "c6_coefficient", c.reservoir.c6_coefficient, "reservoir.");
    read(r, "global_detuning", c.reservoir.global_detuning, "reservoir.");
    read(r, "site_modulation", c.reservoir.site_modulation, "reservoir.");
    read(r, "detuning_scale", c.reservoir.detuning_scale, "reservoir.");
    read(r, "total_time", c.reservoir.total_time, "reservoir.");
    read(r, "n_timesteps", c.reservoir.n_timesteps, "reservoir.");
    read(r, "observable_orders", c.reservoir.observable_orders, "reservoir.");

    const auto& k = j.at("classifier");
    std::vector<std::string> kinds;
    read(k, "kinds", kinds, "classifier.");
    c.classifiers.clear();
    for (const auto& name : kinds) c.classifiers.push_back(classifier_kind_from_string(name));
    read(k, "mlp_hidden", c.classifier.mlp_hidden, "classifier.");
    read(k, "epochs", c.classifier.epochs, "classifier.");
    read(k, "batch_size", c.classifier.batch_size, "classifier.");
    read(k, "learning_rate", c.classifier.learning_rate, "classifier.");
    read(k, "weight_decay", c.classifier.weight_decay, "classifier.");
    read(k, "standardize", c.classifier.standardize, "classifier.");

    read(j, "seeds", c.seeds, "");
    read(j, "parallelism", c.parallelism, "");
    read(j, "workers", c.workers, "");
    read(j, "output_dir", c.output_dir, "");
    const auto& o = j.at("outputs");
    read(o, "save_embeddings", c.outputs.save_embeddings, "outputs.");
    read(o, "embeddings_csv", c.outputs.embeddings_csv, "outputs.");
    return c;
}

// Overlays `patch` onto `base`, refusing keys the schema does not know.
void merge_into(json& base, const json& patch, const std::string& path) {
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string where = path + it.key();
        if (!base.contains(it.key())) fail(ErrorCode::invalid_config, "unknown config key '" + where + "'");
        json& slot = base[it.key()];
        if (slot.is_object() && it.value().is_object()) {
            merge_into(slot, it.value(), where + ".");
        } else {
            slot = it.value();
        }
    }
}

std::string resolve(const std::string& p, const std::filesystem::path& base) {
    if (p.empty() || base.empty() || std::filesystem::path(p).is_absolute()) return p;
    return (base / p).lexically_normal().string();
}

}  // namespace

void ExperimentConfig::validate() const {
    auto bad = [](const std::string& msg) { fail(ErrorCode::invalid_config, msg); };
    if (seeds.empty()) bad("seeds must list at least one seed");
    if (n_features < 1) bad("n_features must be >= 1");
    if (dataset.n_train < 2) bad("dataset.n_train must be >= 2");
    if (dataset.n_test < 1) bad("dataset.n_test must be >= 1");
    if (classifiers.empty()) bad("classifier.kinds must name at least one classifier");
    if (parallelism < 1) bad("parallelism must be >= 1");
    if (workers < 1) bad("workers must be >= 1");
    if (training.epochs < 1) bad("training.epochs must be >= 1");
    if (training.batch_size < 2) bad("training.batch_size must be >= 2");
    if (!(training.learning_rate > 0)) bad("training.learning_rate must be positive");
    if (autoencoder.dropout < 0 || autoencoder.dropout >= 1) bad("autoencoder.dropout must lie in [0, 1)");
    if (!(guided.lambda >= 0 && guided.lambda <= 1)) bad("guided.lambda must lie in [0, 1]");
    if (guided.update_frequency < 1) bad("guided.update_frequency must be >= 1");
    if (guided.probe_size < 0) bad("guided.probe_size must be >= 0");
    if (classifier.epochs < 1 || classifier.batch_size < 1) bad("classifier epochs and batch_size must be positive");
    if (dataset.kind == DatasetKind::mnist && (dataset.mnist_images.empty() || dataset.mnist_labels.empty())) {
        bad("dataset.mnist_images and dataset.mnist_labels are required for mnist data");
    }
    if (dataset.kind == DatasetKind::patches && (dataset.patch_dir.empty() || dataset.patch_manifest.empty())) {
        bad("dataset.patch_dir and dataset.patch_manifest are required for patch data");
    }
    if (method == Method::qgars && !qrc) bad("method qgars trains through the reservoir and needs qrc = true");
    if (qrc || method == Method::qgars) {
        reservoir.validate();
        if (n_features != reservoir.n_atoms) {
            bad("n_features = " + std::to_string(n_features) + " must equal reservoir.n_atoms = " +
                std::to_string(reservoir.n_atoms) + " when the reservoir stage is enabled");
        }
    }
}

ExperimentConfig profile_config(const std::string& name) {
    ExperimentConfig c;
    if (name == "desk") {
        c.profile = "desk";
        c.dataset.n_train = 400;
        c.dataset.n_test = 100;
        c.n_features = 8;
        c.reservoir.n_atoms = 8;
        c.reservoir.n_timesteps = 8;
        c.seeds = {0, 1, 2, 3, 4};
        c.output_dir = "runs/desk";
    } else if (name == "paper") {
        c.profile = "paper";
        c.dataset.n_train = 2000;
        c.dataset.n_test = 400;
        c.n_features = 12;
        c.reservoir.n_atoms = 12;
        c.reservoir.n_timesteps = 16;
        c.seeds = {0, 1, 2, 3, 4};
        c.output_dir = "runs/paper";
    } else {
        fail(ErrorCode::invalid_config, "unknown profile '" + name + "' (expected desk or paper)");
    }
    c.autoencoder.latent_dim = c.n_features;
    return c;
}

ExperimentConfig config_from_json(const std::string& text, const std::filesystem::path& base_dir) {
    json user;
    try {
        user = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::invalid_config, std::string("config is not valid JSON: ") + e.what());
    }
    if (!user.is_object()) fail(ErrorCode::invalid_config, "config must be a JSON object");
    if (!user.contains("schema_version")) fail(ErrorCode::invalid_config, "config lacks schema_version");
    if (user["schema_version"] != kConfigSchemaVersion) {
        fail(ErrorCode::invalid_config, "unsupported config schema_version " + user["schema_version"].dump() + " (expected " +
                                            std::to_string(kConfigSchemaVersion) + ")");
    }
    const std::string profile = user.value("profile", std::string("desk"));
    json merged = to_json_value(profile_config(profile));
    merge_into(merged, user, "");
    auto c = from_json_value(merged);
    c.autoencoder.latent_dim = c.n_features;
    c.dataset.mnist_images = resolve(c.dataset.mnist_images, base_dir);
    c.dataset.mnist_labels = resolve(c.dataset.mnist_labels, base_dir);
    c.dataset.patch_dir = resolve(c.dataset.patch_dir, base_dir);
    c.dataset.patch_manifest = resolve(c.dataset.patch_manifest, base_dir);
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str(), path.parent_path());
}

std::string config_to_json(const ExperimentConfig& config) { return to_json_value(config).dump(2) + "\n"; }

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& json_value) {
    json value;
    try {
        value = json::parse(json_value);
    } catch (const json::parse_error&) {
        // Bare words are taken as strings so `--set method=ae` works.
        value = json_value;
    }
    json doc = to_json_value(config);
    json::json_pointer ptr("/" + [&] {
        std::string p = key;
        for (auto& ch : p)
            if (ch == '.') ch = '/';
        return p;
    }());
    if (!doc.contains(ptr) || key == "schema_version") fail(ErrorCode::invalid_config, "unknown config key '" + key + "'");
    doc[ptr] = value;
    auto updated = from_json_value(doc);
    updated.autoencoder.latent_dim = updated.n_features;
    config = std::move(updated);
}

}  // namespace qgars
