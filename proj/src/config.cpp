#include "mpruner/config.hpp"

#include <fstream>
#include <set>

namespace mpruner {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

void read_train(const json& j, TrainConfig& t, const std::string& where) {
    reject_unknown(j, {"learning_rate", "batch_size", "epochs", "weight_decay", "beta1", "beta2", "epsilon"}, where);
    read(j, "learning_rate", t.learning_rate);
    read(j, "batch_size", t.batch_size);
    read(j, "epochs", t.epochs);
    read(j, "weight_decay", t.weight_decay);
    read(j, "beta1", t.beta1);
    read(j, "beta2", t.beta2);
    read(j, "epsilon", t.epsilon);
}

json train_json(const TrainConfig& t) {
    return json{{"learning_rate", t.learning_rate}, {"batch_size", t.batch_size}, {"epochs", t.epochs},
                {"weight_decay", t.weight_decay},   {"beta1", t.beta1},           {"beta2", t.beta2},
                {"epsilon", t.epsilon}};
}

}  // namespace

void RunConfig::validate() const {
    try {
        if (taus.empty()) throw ConfigError("at least one tau is required");
        for (double t : taus)
            if (!(t > 0.0 && t <= 1.0)) throw ConfigError("tau must lie in (0, 1], got " + std::to_string(t));
        prune.validate();
        train.validate();
        retrain.validate();
        if (model.blocks == 0 || model.width == 0 || model.inner_width == 0 || model.seq_len == 0)
            throw ConfigError("model dimensions must be positive");
        if (!dataset.csv) {
            synthetic_kind_from_string(dataset.kind);
            if (dataset.n < dataset.classes || dataset.classes == 0 || dataset.input_dim == 0)
                throw ConfigError("dataset sizes are inconsistent");
            if (dataset.input_dim % model.seq_len != 0)
                throw ConfigError("dataset input_dim must be a multiple of model seq_len");
        }
        for (double s : sparsify.levels)
            if (!(s >= 0.0 && s < 1.0)) throw ConfigError("sparsity levels must lie in [0, 1)");
        if (max_runs == 0) throw ConfigError("max_runs must be at least 1");
        if (checkpoint && !std::filesystem::exists(*checkpoint))
            throw ConfigError("checkpoint does not exist: " + checkpoint->string());
        if (pruned_checkpoint && !std::filesystem::exists(*pruned_checkpoint))
            throw ConfigError("pruned checkpoint does not exist: " + pruned_checkpoint->string());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

RunConfig config_from_json(const json& j) {
    RunConfig c;
    try {
        reject_unknown(j,
                       {"seed", "out", "checkpoint", "pruned_checkpoint", "model", "dataset", "train", "retrain",
                        "prune", "hooks", "sparsify"},
                       "config");
        read(j, "seed", c.seed);
        if (j.contains("out")) c.out = j.at("out").get<std::string>();
        if (j.contains("checkpoint") && !j.at("checkpoint").is_null())
            c.checkpoint = j.at("checkpoint").get<std::string>();
        if (j.contains("pruned_checkpoint") && !j.at("pruned_checkpoint").is_null())
            c.pruned_checkpoint = j.at("pruned_checkpoint").get<std::string>();
        if (j.contains("model")) {
            const auto& m = j.at("model");
            reject_unknown(m, {"kind", "blocks", "width", "inner_width", "seq_len"}, "model");
            if (m.contains("kind")) c.model.kind = block_kind_from_string(m.at("kind").get<std::string>());
            read(m, "blocks", c.model.blocks);
            read(m, "width", c.model.width);
            read(m, "inner_width", c.model.inner_width);
            read(m, "seq_len", c.model.seq_len);
        }
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            reject_unknown(d, {"kind", "n", "input_dim", "classes", "separation", "csv"}, "dataset");
            read(d, "kind", c.dataset.kind);
            read(d, "n", c.dataset.n);
            read(d, "input_dim", c.dataset.input_dim);
            read(d, "classes", c.dataset.classes);
            read(d, "separation", c.dataset.separation);
            if (d.contains("csv") && !d.at("csv").is_null()) c.dataset.csv = d.at("csv").get<std::string>();
        }
        if (j.contains("train")) read_train(j.at("train"), c.train, "train");
        if (j.contains("retrain")) read_train(j.at("retrain"), c.retrain, "retrain");
        if (j.contains("prune")) {
            const auto& p = j.at("prune");
            reject_unknown(p,
                           {"tau", "gamma", "k_max", "freeze", "seeds_per_chain", "seed_batch_size",
                            "protect_last_cluster", "max_runs"},
                           "prune");
            if (p.contains("tau")) {
                const auto& t = p.at("tau");
                c.taus = t.is_array() ? t.get<std::vector<double>>() : std::vector<double>{t.get<double>()};
            }
            read(p, "gamma", c.prune.gamma);
            read(p, "k_max", c.prune.k_max);
            read(p, "freeze", c.prune.freeze);
            read(p, "seeds_per_chain", c.prune.seeds_per_chain);
            read(p, "seed_batch_size", c.prune.seed_batch_size);
            read(p, "protect_last_cluster", c.prune.protect_last_cluster);
            read(p, "max_runs", c.max_runs);
        }
        if (j.contains("hooks") && !j.at("hooks").is_null()) c.hooks = j.at("hooks").get<IndexList>();
        if (j.contains("sparsify")) {
            const auto& s = j.at("sparsify");
            reject_unknown(s, {"levels", "calibration_size"}, "sparsify");
            read(s, "levels", c.sparsify.levels);
            read(s, "calibration_size", c.sparsify.calibration_size);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (!c.taus.empty()) c.prune.tau = c.taus.front();
    return c;
}

json config_to_json(const RunConfig& c) {
    json j{{"seed", c.seed},
           {"out", c.out.string()},
           {"checkpoint", c.checkpoint ? json(c.checkpoint->string()) : json(nullptr)},
           {"pruned_checkpoint", c.pruned_checkpoint ? json(c.pruned_checkpoint->string()) : json(nullptr)},
           {"model",
            {{"kind", to_string(c.model.kind)},
             {"blocks", c.model.blocks},
             {"width", c.model.width},
             {"inner_width", c.model.inner_width},
             {"seq_len", c.model.seq_len}}},
           {"dataset",
            {{"kind", c.dataset.kind},
             {"n", c.dataset.n},
             {"input_dim", c.dataset.input_dim},
             {"classes", c.dataset.classes},
             {"separation", c.dataset.separation},
             {"csv", c.dataset.csv ? json(c.dataset.csv->string()) : json(nullptr)}}},
           {"train", train_json(c.train)},
           {"retrain", train_json(c.retrain)},
           {"prune",
            {{"tau", c.taus},
             {"gamma", c.prune.gamma},
             {"k_max", c.prune.k_max},
             {"freeze", c.prune.freeze},
             {"seeds_per_chain", c.prune.seeds_per_chain},
             {"seed_batch_size", c.prune.seed_batch_size},
             {"protect_last_cluster", c.prune.protect_last_cluster},
             {"max_runs", c.max_runs}}},
           {"hooks", c.hooks ? json(*c.hooks) : json(nullptr)},
           {"sparsify", {{"levels", c.sparsify.levels}, {"calibration_size", c.sparsify.calibration_size}}}};
    return j;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

}  // namespace mpruner
