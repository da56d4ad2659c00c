#include "aga/config.hpp"

#include <fstream>

#include <json.hpp>

#include "aga/error.hpp"

namespace aga {

using nlohmann::json;

namespace {

const std::vector<std::string> kStrategies = {"baseline", "picked", "random", "agm"};

bool known_strategy(const std::string& s) {
    for (const auto& k : kStrategies)
        if (k == s) return true;
    return false;
}

/// Strict reader over one JSON object: every key must be consumed.
class Section {
public:
    Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object())
            throw ConfigError("config: '" + path_ + "' must be an object");
    }

    template <typename T>
    void read(const char* key, T& out) {
        auto it = node_.find(key);
        if (it == node_.end()) return;
        consumed_.push_back(key);
        try {
            out = it->get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config: '" + path_ + "." + key + "' has the wrong type");
        }
    }

    json child(const char* key) {
        auto it = node_.find(key);
        consumed_.push_back(key);
        return it == node_.end() ? json::object() : *it;
    }

    bool has(const char* key) const { return node_.contains(key); }

    void finish() const {
        for (const auto& [key, value] : node_.items()) {
            (void)value;
            bool known = false;
            for (const auto& c : consumed_)
                if (c == key) known = true;
            if (!known)
                throw ConfigError("config: unknown key '" + (path_.empty() ? key : path_ + "." + key) + "'");
        }
    }

private:
    const json& node_;
    std::string path_;
    std::vector<std::string> consumed_;
};

} // namespace

void TrainConfig::validate() const {
    if (!known_strategy(strategy))
        throw ConfigError("train.strategy must be one of baseline|picked|random|agm, got '" + strategy + "'");
    if (epochs == 0) throw ConfigError("train.epochs must be positive");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
    if (random_mask_rate < 0.0 || random_mask_rate > 1.0)
        throw ConfigError("train.random_mask_rate must lie in [0, 1]");
    if (picked_mask_rate < 0.0 || picked_mask_rate > 1.0)
        throw ConfigError("train.picked_mask_rate must lie in [0, 1]");
    if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be non-negative");
}

void EvalConfig::validate() const {
    if (split != "train" && split != "test")
        throw ConfigError("eval.split must be 'train' or 'test', got '" + split + "'");
    if (rerank && rerank_depth == 0) throw ConfigError("eval.rerank_depth must be positive");
}

void AblateConfig::validate() const {
    if (seeds < 3) throw ConfigError("ablate.seeds must be at least 3");
    if (strategies.empty()) throw ConfigError("ablate.strategies must not be empty");
    for (const auto& s : strategies) {
        if (!known_strategy(s))
            throw ConfigError("ablate.strategies entry '" + s + "' is not a strategy");
    }
}

RunConfig RunConfig::defaults() { return RunConfig{}; }

RunConfig RunConfig::from_json_text(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config: top level must be an object");

    RunConfig cfg;
    {
        Section top(root, "");
        {
            json node = top.child("corpus");
            Section s(node, "corpus");
            s.read("dir", cfg.corpus_dir);
            s.read("num_identities", cfg.corpus.num_identities);
            s.read("pairs_per_identity", cfg.corpus.pairs_per_identity);
            s.read("test_identities", cfg.corpus.test_identities);
            s.read("vacuous_fraction", cfg.corpus.vacuous_fraction);
            s.read("noise_rate", cfg.corpus.noise_rate);
            s.read("patch_noise_sigma", cfg.corpus.patch_noise_sigma);
            s.read("patch_grid", cfg.corpus.patch_grid);
            s.read("patch_dim", cfg.corpus.patch_dim);
            s.finish();
        }
        {
            json node = top.child("encoder");
            Section s(node, "encoder");
            s.read("hidden_dim", cfg.encoder.hidden_dim);
            s.read("num_heads", cfg.encoder.num_heads);
            s.read("text_layers", cfg.encoder.text_layers);
            s.read("image_layers", cfg.encoder.image_layers);
            s.read("cross_layers", cfg.encoder.cross_layers);
            s.read("max_text_len", cfg.encoder.max_text_len);
            s.read("ffn_mult", cfg.encoder.ffn_mult);
            s.read("itc_dim", cfg.encoder.itc_dim);
            s.read("tie_mlm", cfg.encoder.tie_mlm);
            s.finish();
        }
        {
            json node = top.child("agm");
            Section s(node, "agm");
            s.read("beta", cfg.agm.beta);
            s.read("tau", cfg.agm.tau);
            s.read("alpha1", cfg.agm.alpha1);
            s.read("alpha2", cfg.agm.alpha2);
            s.read("target_mask_rate", cfg.agm.target_mask_rate);
            json scheme_node = s.child("scheme");
            Section scheme(scheme_node, "agm.scheme");
            scheme.read("mask", cfg.agm.scheme_mask);
            scheme.read("random", cfg.agm.scheme_random);
            scheme.read("keep", cfg.agm.scheme_keep);
            scheme.finish();
            s.finish();
        }
        {
            json node = top.child("tem");
            Section s(node, "tem");
            s.read("enabled", cfg.tem.enabled);
            s.read("top_m", cfg.tem.top_m);
            s.read("p_tem", cfg.tem.p_tem);
            s.read("temperature", cfg.tem.temperature);
            std::string persistence = cfg.tem.persistence == TemConfig::Persistence::persistent
                                          ? "persistent"
                                          : "ephemeral";
            s.read("persistence", persistence);
            if (persistence == "ephemeral") cfg.tem.persistence = TemConfig::Persistence::ephemeral;
            else if (persistence == "persistent") cfg.tem.persistence = TemConfig::Persistence::persistent;
            else throw ConfigError("config: 'tem.persistence' must be 'ephemeral' or 'persistent'");
            s.finish();
        }
        {
            json node = top.child("objectives");
            Section s(node, "objectives");
            s.read("temperature_itc", cfg.objectives.temperature_itc);
            s.read("momentum", cfg.objectives.momentum);
            s.read("queue_capacity", cfg.objectives.queue_capacity);
            s.read("hard_negatives", cfg.objectives.hard_negatives);
            json weights_node = s.child("weights");
            Section weights(weights_node, "objectives.weights");
            weights.read("itc", cfg.objectives.weight_itc);
            weights.read("itc_distill", cfg.objectives.weight_itc_distill);
            weights.read("itm", cfg.objectives.weight_itm);
            weights.read("mlm", cfg.objectives.weight_mlm);
            weights.finish();
            s.finish();
        }
        {
            json node = top.child("train");
            Section s(node, "train");
            s.read("strategy", cfg.train.strategy);
            s.read("epochs", cfg.train.epochs);
            s.read("batch_size", cfg.train.batch_size);
            s.read("seed", cfg.train.seed);
            s.read("lr", cfg.train.lr);
            s.read("weight_decay", cfg.train.weight_decay);
            s.read("random_mask_rate", cfg.train.random_mask_rate);
            s.read("picked_mask_rate", cfg.train.picked_mask_rate);
            s.read("grad_clip", cfg.train.grad_clip);
            s.finish();
        }
        {
            json node = top.child("eval");
            Section s(node, "eval");
            s.read("split", cfg.eval.split);
            s.read("rerank", cfg.eval.rerank);
            s.read("rerank_depth", cfg.eval.rerank_depth);
            s.finish();
        }
        {
            json node = top.child("ablate");
            Section s(node, "ablate");
            s.read("seeds", cfg.ablate.seeds);
            s.read("workers", cfg.ablate.workers);
            s.read("strategies", cfg.ablate.strategies);
            s.read("epochs", cfg.ablate.epochs);
            s.read("tem", cfg.ablate.tem);
            s.read("rate_parity", cfg.ablate.rate_parity);
            s.finish();
        }
        top.finish();
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot read " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string RunConfig::to_json_text(int indent) const {
    json root;
    root["corpus"] = {{"dir", corpus_dir},
                      {"num_identities", corpus.num_identities},
                      {"pairs_per_identity", corpus.pairs_per_identity},
                      {"test_identities", corpus.test_identities},
                      {"vacuous_fraction", corpus.vacuous_fraction},
                      {"noise_rate", corpus.noise_rate},
                      {"patch_noise_sigma", corpus.patch_noise_sigma},
                      {"patch_grid", corpus.patch_grid},
                      {"patch_dim", corpus.patch_dim}};
    root["encoder"] = {{"hidden_dim", encoder.hidden_dim},
                       {"num_heads", encoder.num_heads},
                       {"text_layers", encoder.text_layers},
                       {"image_layers", encoder.image_layers},
                       {"cross_layers", encoder.cross_layers},
                       {"max_text_len", encoder.max_text_len},
                       {"ffn_mult", encoder.ffn_mult},
                       {"itc_dim", encoder.itc_dim},
                       {"tie_mlm", encoder.tie_mlm}};
    root["agm"] = {{"beta", agm.beta},
                   {"tau", agm.tau},
                   {"alpha1", agm.alpha1},
                   {"alpha2", agm.alpha2},
                   {"target_mask_rate", agm.target_mask_rate},
                   {"scheme",
                    {{"mask", agm.scheme_mask}, {"random", agm.scheme_random}, {"keep", agm.scheme_keep}}}};
    root["tem"] = {{"enabled", tem.enabled},
                   {"top_m", tem.top_m},
                   {"p_tem", tem.p_tem},
                   {"temperature", tem.temperature},
                   {"persistence",
                    tem.persistence == TemConfig::Persistence::persistent ? "persistent" : "ephemeral"}};
    root["objectives"] = {{"temperature_itc", objectives.temperature_itc},
                          {"momentum", objectives.momentum},
                          {"queue_capacity", objectives.queue_capacity},
                          {"hard_negatives", objectives.hard_negatives},
                          {"weights",
                           {{"itc", objectives.weight_itc},
                            {"itc_distill", objectives.weight_itc_distill},
                            {"itm", objectives.weight_itm},
                            {"mlm", objectives.weight_mlm}}}};
    root["train"] = {{"strategy", train.strategy},
                     {"epochs", train.epochs},
                     {"batch_size", train.batch_size},
                     {"seed", train.seed},
                     {"lr", train.lr},
                     {"weight_decay", train.weight_decay},
                     {"random_mask_rate", train.random_mask_rate},
                     {"picked_mask_rate", train.picked_mask_rate},
                     {"grad_clip", train.grad_clip}};
    root["eval"] = {{"split", eval.split}, {"rerank", eval.rerank}, {"rerank_depth", eval.rerank_depth}};
    root["ablate"] = {{"seeds", ablate.seeds},
                      {"workers", ablate.workers},
                      {"strategies", ablate.strategies},
                      {"epochs", ablate.epochs},
                      {"tem", ablate.tem},
                      {"rate_parity", ablate.rate_parity}};
    return root.dump(indent) + "\n";
}

void RunConfig::apply_override(const std::string& dotted_key, const std::string& value) {
    json root = json::parse(to_json_text());
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::exception&) {
        parsed = value; // plain string
    }
    json* node = &root;
    size_t start = 0;
    while (true) {
        size_t dot = dotted_key.find('.', start);
        std::string part = dotted_key.substr(start, dot == std::string::npos ? dot : dot - start);
        if (part.empty()) throw ConfigError("config: malformed override key '" + dotted_key + "'");
        if (dot == std::string::npos) {
            (*node)[part] = parsed;
            break;
        }
        if (!node->contains(part))
            throw ConfigError("config: unknown key '" + dotted_key.substr(0, dot) + "'");
        node = &(*node)[part];
        start = dot + 1;
    }
    *this = from_json_text(root.dump());
}

void RunConfig::validate() const {
    corpus.validate();
    // full encoder validation happens once vocab_size is known; structural
    // fields are checked here
    if (encoder.hidden_dim == 0 || encoder.num_heads == 0 ||
        encoder.hidden_dim % encoder.num_heads != 0)
        throw ConfigError("encoder.hidden_dim must be a positive multiple of encoder.num_heads");
    if (encoder.text_layers == 0 || encoder.image_layers == 0 || encoder.cross_layers == 0)
        throw ConfigError("encoder depths must be positive");
    if (encoder.max_text_len < 3) throw ConfigError("encoder.max_text_len must be at least 3");
    try {
        agm.validate();
        tem.validate();
        objectives.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    train.validate();
    eval.validate();
    ablate.validate();
}

} // namespace aga
