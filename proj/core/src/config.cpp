#include "dvlm/config.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <sstream>

#include "dvlm/errors.hpp"
#include "dvlm/rng.hpp"

namespace dvlm {

namespace {

enum class KeyType { integer, real, boolean, text, choice };

struct KeySpec {
    const char* key;
    KeyType type;
    const char* def;
    const char* description;
    std::vector<const char*> choices = {};
};

const std::vector<KeySpec>& schema() {
    static const std::vector<KeySpec> s = {
        {"model.seed", KeyType::integer, "1", "parameter initialization seed"},

        {"vision.patch_size", KeyType::integer, "8", "square patch edge in pixels"},
        {"vision.d_v", KeyType::integer, "64", "vision embedding width"},
        {"vision.n_blocks", KeyType::integer, "2", "encoder transformer blocks"},
        {"vision.n_heads", KeyType::integer, "4", "encoder attention heads"},
        {"vision.mlp_ratio", KeyType::integer, "4", "encoder MLP expansion factor"},

        {"abstractor.d_q", KeyType::integer, "64", "Q-Former width"},
        {"abstractor.num_queries", KeyType::integer, "8", "learned query count"},
        {"abstractor.qformer_blocks", KeyType::integer, "2", "Q-Former blocks"},
        {"abstractor.qformer_heads", KeyType::integer, "4", "Q-Former attention heads"},
        {"abstractor.mlp_hidden", KeyType::integer, "256", "hidden width of the token-wise MLP path"},
        {"abstractor.instruction_conditioning", KeyType::boolean, "true",
         "feed instruction tokens into the Q-Former"},
        {"abstractor.mlp_from_encoder", KeyType::boolean, "false",
         "MLP path consumes raw encoder output instead of the shared projection"},
        {"abstractor.path_mode", KeyType::choice, "dual_path", "which abstractor paths are active",
         {"dual_path", "qformer_only", "mlp_only"}},

        {"lm.d_lm", KeyType::integer, "64", "decoder embedding width"},
        {"lm.n_layers", KeyType::integer, "4", "decoder layers"},
        {"lm.n_heads", KeyType::integer, "4", "decoder query heads"},
        {"lm.n_kv_heads", KeyType::integer, "2", "decoder key/value heads (grouped-query attention)"},
        {"lm.sliding_window", KeyType::integer, "32", "attention window in tokens, 0 = unlimited"},
        {"lm.max_seq_len", KeyType::integer, "128", "maximum assembled sequence length"},

        {"training.profile", KeyType::choice, "toy",
         "hyperparameter profile; paper keeps the published learning rate", {"paper", "toy"}},
        {"training.learning_rate", KeyType::real, "",
         "AdamW learning rate; empty picks the profile default (paper 1e-5, toy 1e-3)"},
        {"training.weight_decay", KeyType::real, "0.05", "AdamW decoupled weight decay"},
        {"training.beta1", KeyType::real, "0.9", "AdamW beta1"},
        {"training.beta2", KeyType::real, "0.999", "AdamW beta2"},
        {"training.epsilon", KeyType::real, "1e-8", "AdamW epsilon"},
        {"training.stage1_epochs", KeyType::integer, "3", "stage-1 epochs"},
        {"training.stage1_batch", KeyType::integer, "8", "stage-1 batch size"},
        {"training.stage2_epochs", KeyType::integer, "2", "stage-2 epochs"},
        {"training.stage2_batch", KeyType::integer, "10", "stage-2 batch size"},
        {"training.grad_clip", KeyType::real, "0", "global gradient-norm clip, 0 disables"},
        {"training.seed", KeyType::integer, "1", "shuffling / training seed"},
        {"training.pretrain_epochs", KeyType::integer, "6", "LM fixture pretraining epochs"},
        {"training.pretrain_batch", KeyType::integer, "8", "LM fixture pretraining batch size"},
        {"training.pretrain_lr", KeyType::real, "3e-3", "LM fixture pretraining learning rate"},
        {"training.pretrain_hint_fraction", KeyType::real, "0.5",
         "fraction of pretraining sequences with the short answer embedded in the prefix"},

        {"data.size", KeyType::integer, "1000", "examples to generate"},
        {"data.seed", KeyType::integer, "7", "dataset generation seed"},
        {"data.task_mix", KeyType::text, "caption=0.2,count=0.2,color=0.2,glyph_read=0.2,exist=0.2",
         "task weights, must sum to 1"},
        {"data.max_glyph_len", KeyType::integer, "3", "maximum rendered glyph string length (<= 6)"},
        {"data.glyphs_enabled", KeyType::boolean, "true", "allow glyph tasks"},
        {"data.inline_images", KeyType::boolean, "false",
         "store base64 PPM images in JSONL instead of re-renderable scenes"},
        {"data.augment", KeyType::boolean, "true", "expand short answers into sentences"},
        {"data.ratio_train", KeyType::real, "0.8", "train split ratio"},
        {"data.ratio_val", KeyType::real, "0.1", "val split ratio"},
        {"data.ratio_test", KeyType::real, "0.1", "test split ratio"},

        {"eval.max_new", KeyType::integer, "44", "generation budget per example"},
        {"eval.judge", KeyType::choice, "exact", "verdict source", {"exact", "external"}},
        {"eval.split", KeyType::choice, "test", "dataset split to evaluate", {"train", "val", "test"}},
    };
    return s;
}

const KeySpec& spec_for(const std::string& key) {
    for (const auto& s : schema()) {
        if (key == s.key) return s;
    }
    throw ConfigError("unknown config key '" + key + "' (see `dualvlm config-reference`)");
}

void check_typed(const KeySpec& spec, const std::string& value) {
    switch (spec.type) {
        case KeyType::integer: {
            if (value.empty()) throw ConfigError(std::string(spec.key) + ": empty integer");
            char* end = nullptr;
            (void)std::strtoll(value.c_str(), &end, 10);
            if (*end != '\0') {
                throw ConfigError(std::string(spec.key) + ": '" + value + "' is not an integer");
            }
            break;
        }
        case KeyType::real: {
            if (value.empty()) break;  // empty real = unset sentinel (profile default)
            char* end = nullptr;
            (void)std::strtod(value.c_str(), &end);
            if (*end != '\0') {
                throw ConfigError(std::string(spec.key) + ": '" + value + "' is not a number");
            }
            break;
        }
        case KeyType::boolean:
            if (value != "true" && value != "false") {
                throw ConfigError(std::string(spec.key) + ": '" + value + "' is not true/false");
            }
            break;
        case KeyType::text:
            break;
        case KeyType::choice: {
            for (const char* c : spec.choices) {
                if (value == c) return;
            }
            std::string allowed;
            for (const char* c : spec.choices) allowed += std::string(allowed.empty() ? "" : "|") + c;
            throw ConfigError(std::string(spec.key) + ": '" + value + "' not one of " + allowed);
        }
    }
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig cfg;
    for (const auto& s : schema()) cfg.values_[s.key] = s.def;
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    RunConfig cfg = defaults();
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value, got '" + t +
                              "'");
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (cfg.explicit_.count(key)) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        }
        cfg.set(key, value);
    }
    return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const KeySpec& spec = spec_for(key);
    check_typed(spec, value);
    values_[key] = value;
    explicit_[key] = true;
}

bool RunConfig::was_set(const std::string& key) const {
    auto it = explicit_.find(key);
    return it != explicit_.end() && it->second;
}

int64_t RunConfig::get_int(const std::string& key) const {
    const KeySpec& spec = spec_for(key);
    if (spec.type != KeyType::integer) throw ConfigError("'" + key + "' is not an integer key");
    return std::strtoll(values_.at(key).c_str(), nullptr, 10);
}

double RunConfig::get_double(const std::string& key) const {
    const KeySpec& spec = spec_for(key);
    if (spec.type != KeyType::real) throw ConfigError("'" + key + "' is not a numeric key");
    const std::string& v = values_.at(key);
    if (v.empty()) throw ConfigError("'" + key + "' has no value set");
    return std::strtod(v.c_str(), nullptr);
}

bool RunConfig::get_bool(const std::string& key) const {
    const KeySpec& spec = spec_for(key);
    if (spec.type != KeyType::boolean) throw ConfigError("'" + key + "' is not a boolean key");
    return values_.at(key) == "true";
}

std::string RunConfig::get_string(const std::string& key) const {
    spec_for(key);
    return values_.at(key);
}

void RunConfig::write_reference(std::ostream& os) {
    os << "# Generated configuration reference. Every recognized key with its\n"
          "# type and default; unknown keys are rejected at load.\n\n";
    std::string section;
    for (const auto& s : schema()) {
        std::string key(s.key);
        std::string this_section = key.substr(0, key.find('.'));
        if (this_section != section) {
            os << "# ---- " << this_section << " ----\n";
            section = this_section;
        }
        const char* type = s.type == KeyType::integer  ? "int"
                           : s.type == KeyType::real   ? "float"
                           : s.type == KeyType::boolean ? "bool"
                           : s.type == KeyType::choice  ? "choice"
                                                        : "string";
        os << "# " << s.description << " (" << type;
        if (s.type == KeyType::choice) {
            os << ":";
            for (size_t i = 0; i < s.choices.size(); ++i) os << (i ? "|" : " ") << s.choices[i];
        }
        os << ")\n" << s.key << "=" << s.def << "\n\n";
    }
}

TrainProfile RunConfig::profile() const {
    return get_string("training.profile") == "paper" ? TrainProfile::paper : TrainProfile::toy;
}

ModelConfig RunConfig::model_config() const {
    ModelConfig cfg;
    cfg.seed = static_cast<uint64_t>(get_int("model.seed"));
    cfg.image_height = kImageSize;
    cfg.image_width = kImageSize;
    cfg.vision.patch_size = static_cast<size_t>(get_int("vision.patch_size"));
    cfg.vision.d_v = static_cast<size_t>(get_int("vision.d_v"));
    cfg.vision.n_blocks = static_cast<size_t>(get_int("vision.n_blocks"));
    cfg.vision.n_heads = static_cast<size_t>(get_int("vision.n_heads"));
    cfg.vision.mlp_ratio = static_cast<size_t>(get_int("vision.mlp_ratio"));
    cfg.abstractor.d_q = static_cast<size_t>(get_int("abstractor.d_q"));
    cfg.abstractor.num_queries = static_cast<size_t>(get_int("abstractor.num_queries"));
    cfg.abstractor.qformer_blocks = static_cast<size_t>(get_int("abstractor.qformer_blocks"));
    cfg.abstractor.qformer_heads = static_cast<size_t>(get_int("abstractor.qformer_heads"));
    cfg.abstractor.mlp_hidden = static_cast<size_t>(get_int("abstractor.mlp_hidden"));
    cfg.abstractor.instruction_conditioning = get_bool("abstractor.instruction_conditioning");
    cfg.abstractor.mlp_from_encoder = get_bool("abstractor.mlp_from_encoder");
    cfg.abstractor.path_mode = path_mode_from_name(get_string("abstractor.path_mode"));
    cfg.lm.d_lm = static_cast<size_t>(get_int("lm.d_lm"));
    cfg.lm.n_layers = static_cast<size_t>(get_int("lm.n_layers"));
    cfg.lm.n_heads = static_cast<size_t>(get_int("lm.n_heads"));
    cfg.lm.n_kv_heads = static_cast<size_t>(get_int("lm.n_kv_heads"));
    cfg.lm.sliding_window = static_cast<size_t>(get_int("lm.sliding_window"));
    cfg.lm.max_seq_len = static_cast<size_t>(get_int("lm.max_seq_len"));
    return cfg;
}

TrainingStageConfig RunConfig::stage_config(int stage) const {
    TrainingStageConfig cfg = configure_stage(stage, profile());
    if (was_set("training.learning_rate") && !get_string("training.learning_rate").empty()) {
        cfg.optimizer.learning_rate = get_double("training.learning_rate");
    }
    cfg.optimizer.weight_decay = get_double("training.weight_decay");
    cfg.optimizer.beta1 = get_double("training.beta1");
    cfg.optimizer.beta2 = get_double("training.beta2");
    cfg.optimizer.epsilon = get_double("training.epsilon");
    if (stage == 1) {
        cfg.epochs = static_cast<int>(get_int("training.stage1_epochs"));
        cfg.batch_size = static_cast<int>(get_int("training.stage1_batch"));
    } else {
        cfg.epochs = static_cast<int>(get_int("training.stage2_epochs"));
        cfg.batch_size = static_cast<int>(get_int("training.stage2_batch"));
    }
    cfg.grad_clip = get_double("training.grad_clip");
    cfg.seed = static_cast<uint64_t>(get_int("training.seed"));
    return cfg;
}

PretrainConfig RunConfig::pretrain_config() const {
    PretrainConfig cfg;
    cfg.epochs = static_cast<int>(get_int("training.pretrain_epochs"));
    cfg.batch_size = static_cast<int>(get_int("training.pretrain_batch"));
    cfg.learning_rate = get_double("training.pretrain_lr");
    cfg.hint_fraction = get_double("training.pretrain_hint_fraction");
    cfg.seed = static_cast<uint64_t>(get_int("training.seed"));
    cfg.max_prefix = static_cast<size_t>(get_int("abstractor.num_queries")) +
                     (kImageSize / static_cast<size_t>(get_int("vision.patch_size"))) *
                         (kImageSize / static_cast<size_t>(get_int("vision.patch_size")));
    return cfg;
}

TaskMix RunConfig::task_mix() const { return parse_task_mix(get_string("data.task_mix")); }

GenOptions RunConfig::gen_options() const {
    GenOptions opts;
    opts.max_glyph_len = static_cast<size_t>(get_int("data.max_glyph_len"));
    opts.glyphs_enabled = get_bool("data.glyphs_enabled");
    opts.inline_images = get_bool("data.inline_images");
    return opts;
}

uint64_t RunConfig::content_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [k, v] : values_) {
        h = fnv1a64(k, h);
        h = fnv1a64("=", h);
        h = fnv1a64(v, h);
        h = fnv1a64("\n", h);
    }
    return h;
}

TaskMix parse_task_mix(const std::string& spec) {
    TaskMix mix;
    mix.caption = mix.count = mix.color = mix.glyph_read = mix.exist = 0.0;
    std::istringstream is(spec);
    std::string part;
    while (std::getline(is, part, ',')) {
        std::string t = trim(part);
        if (t.empty()) continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("task mix: expected task=weight, got '" + t + "'");
        std::string task = trim(t.substr(0, eq));
        double w = 0.0;
        try {
            w = std::stod(trim(t.substr(eq + 1)));
        } catch (const std::exception&) {
            throw ConfigError("task mix: bad weight in '" + t + "'");
        }
        switch (task_from_name(task)) {
            case TaskTag::caption: mix.caption = w; break;
            case TaskTag::count: mix.count = w; break;
            case TaskTag::color: mix.color = w; break;
            case TaskTag::glyph_read: mix.glyph_read = w; break;
            case TaskTag::exist: mix.exist = w; break;
        }
    }
    return mix;
}

}  // namespace dvlm
