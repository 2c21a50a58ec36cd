#include "dvlm/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "dvlm/errors.hpp"
#include "dvlm/rng.hpp"

namespace dvlm {

void TrainingStageConfig::validate() const {
    if (stage != 1 && stage != 2) throw ConfigError("training: stage must be 1 or 2");
    if (epochs < 0) throw ConfigError("training: epochs must be >= 0");
    if (batch_size <= 0) throw ConfigError("training: batch_size must be positive");
    if (grad_clip < 0.0) throw ConfigError("training: grad_clip must be >= 0");
    optimizer.validate();
}

TrainingStageConfig configure_stage(int stage, TrainProfile profile) {
    if (stage != 1 && stage != 2) {
        throw ConfigError("configure_stage: stage must be 1 or 2, got " + std::to_string(stage));
    }
    TrainingStageConfig cfg;
    cfg.stage = stage;
    cfg.optimizer.learning_rate = profile == TrainProfile::paper ? kPaperLearningRate : kToyLearningRate;
    cfg.optimizer.beta1 = 0.9;
    cfg.optimizer.beta2 = 0.999;
    cfg.optimizer.epsilon = 1e-8;
    cfg.optimizer.weight_decay = 0.05;
    if (stage == 1) {
        cfg.epochs = 3;
        cfg.batch_size = 8;
        cfg.role = DatasetRole::captioning;
        cfg.freeze_prefixes = {"vision.", "abstractor.qformer.", "lm."};
    } else {
        cfg.epochs = 2;
        cfg.batch_size = 10;
        cfg.role = DatasetRole::instruction_qa;
        cfg.freeze_prefixes = {"vision.", "lm."};
    }
    return cfg;
}

bool in_freeze_set(const std::string& name, const std::vector<std::string>& freeze_prefixes) {
    for (const auto& prefix : freeze_prefixes) {
        if (name.rfind(prefix, 0) == 0) return true;
    }
    return false;
}

void apply_freeze(VlmModel& model, const TrainingStageConfig& config) {
    if (!in_freeze_set("vision.", config.freeze_prefixes)) {
        throw ConfigError("freeze set must contain the vision encoder; it is never trained");
    }
    for (auto& p : model.params().all()) {
        p->set_frozen(in_freeze_set(p->name(), config.freeze_prefixes));
    }
}

namespace {

void check_freeze_matches(const VlmModel& model, const TrainingStageConfig& config) {
    for (const auto& p : model.params().all()) {
        bool want = in_freeze_set(p->name(), config.freeze_prefixes);
        if (p->frozen() != want) {
            throw ConfigError("freeze mismatch: parameter '" + p->name() + "' is " +
                              (p->frozen() ? "frozen" : "trainable") + " but the stage config wants " +
                              (want ? "frozen" : "trainable") + "; run apply_freeze first");
        }
    }
}

void clip_gradients(ParamStore& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params.all()) {
        if (p->frozen() || !p->tensor().has_grad()) continue;
        for (double g : p->tensor().grad()) sq += g * g;
    }
    double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    double scaleby = max_norm / norm;
    for (auto& p : params.all()) {
        if (p->frozen() || !p->tensor().has_grad()) continue;
        auto* node = p->tensor().node();
        for (auto& g : node->grad) g *= scaleby;
    }
}

std::string join_ids(const std::vector<QAExample>& dataset, const std::vector<size_t>& batch) {
    std::string s;
    for (size_t i : batch) {
        if (!s.empty()) s += ",";
        s += dataset[i].id;
    }
    return s;
}

// Shared minibatch driver: shuffles per epoch, builds the batch loss, steps
// AdamW, aborts on non-finite losses, and records the curve.
TrainResult run_epochs(VlmModel& model, const std::vector<QAExample>& dataset, int stage, int epochs,
                       int batch_size, const OptimizerConfig& opt, double grad_clip, uint64_t seed,
                       const std::function<Tensor(const QAExample&, size_t)>& example_loss) {
    TrainResult result;
    long global_step = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::vector<size_t> order(dataset.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(mix_seed(mix_seed(seed, static_cast<uint64_t>(stage)),
                                 static_cast<uint64_t>(epoch) + 0x65706f63ULL));
        shuffle_rng.shuffle(order);

        double epoch_sum = 0.0;
        long epoch_steps = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
            std::vector<size_t> batch(order.begin() + static_cast<long>(start),
                                      order.begin() + static_cast<long>(end));
            model.params().zero_grad();
            std::vector<Tensor> losses;
            losses.reserve(batch.size());
            for (size_t idx : batch) losses.push_back(example_loss(dataset[idx], idx));
            Tensor loss = mean_of(losses);
            double lv = loss.item();
            if (!std::isfinite(lv)) {
                throw NumericError("training aborted: non-finite loss at stage " + std::to_string(stage) +
                                   " step " + std::to_string(global_step) + ", batch ids [" +
                                   join_ids(dataset, batch) + "]");
            }
            backward(loss);
            if (grad_clip > 0.0) clip_gradients(model.params(), grad_clip);
            adamw_step(model.params(), opt);
            result.curve.steps.push_back({global_step, stage, lv});
            epoch_sum += lv;
            ++epoch_steps;
            ++global_step;
        }
        if (epoch_steps > 0) {
            result.curve.epoch_means.push_back(epoch_sum / static_cast<double>(epoch_steps));
        }
    }
    result.steps_run = global_step;
    return result;
}

}  // namespace

TrainResult train_stage(VlmModel& model, const std::vector<QAExample>& dataset,
                        const TrainingStageConfig& config) {
    config.validate();
    check_freeze_matches(model, config);
    if (dataset.empty()) throw ContractError("train_stage: empty dataset");
    if (config.role == DatasetRole::captioning) {
        for (const auto& ex : dataset) {
            if (ex.task != TaskTag::caption) {
                throw ConfigError("stage " + std::to_string(config.stage) +
                                  " expects captioning data, found task '" + task_name(ex.task) +
                                  "' (example " + ex.id + ")");
            }
        }
    }
    // Optimizer state restarts at each stage boundary.
    for (auto& p : model.params().all()) p->optimizer_state().reset();

    // The encoder is frozen for the whole lifecycle, so patch embeddings are
    // constants; compute them once per example.
    std::vector<Tensor> patch_cache(dataset.size());
    std::vector<std::vector<int>> instr_ids(dataset.size());
    std::vector<std::vector<int>> answer_ids(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i) {
        patch_cache[i] = model.vision().encode(dataset[i].image()).values;
        instr_ids[i] = tokenize(dataset[i].instruction, model.lm().config().vocab);
        answer_ids[i] = tokenize(dataset[i].answer, model.lm().config().vocab);
    }
    PatchEmbeddings proto;
    proto.num_patches = model.vision().num_patches();
    proto.dim = model.config().vision.d_v;

    auto example_loss = [&](const QAExample&, size_t idx) {
        PatchEmbeddings patches = proto;
        patches.values = patch_cache[idx];
        SoftPromptSequence sp = model.abstractor().forward(patches, instr_ids[idx]);
        AssembledSequence seq = model.lm().assemble(&sp, instr_ids[idx], answer_ids[idx]);
        return model.lm().loss(seq);
    };
    return run_epochs(model, dataset, config.stage, config.epochs, config.batch_size, config.optimizer,
                      config.grad_clip, config.seed, example_loss);
}

FreezeReport verify_freeze(const LoadedCheckpoint& before, const LoadedCheckpoint& after,
                           const std::vector<std::string>& freeze_prefixes) {
    if (before.tensors.size() != after.tensors.size()) {
        throw CheckpointError("verify_freeze: parameter namespaces differ (" +
                              std::to_string(before.tensors.size()) + " vs " +
                              std::to_string(after.tensors.size()) + " tensors)");
    }
    FreezeReport report;
    for (const auto& b : before.tensors) {
        const LoadedTensor* a = after.find(b.name);
        if (!a || a->shape != b.shape) {
            throw CheckpointError("verify_freeze: parameter '" + b.name +
                                  "' missing or reshaped in the after checkpoint");
        }
        bool identical = std::equal(b.data.begin(), b.data.end(), a->data.begin(), a->data.end(),
                                    [](double x, double y) {
                                        uint64_t bx, by;
                                        std::memcpy(&bx, &x, 8);
                                        std::memcpy(&by, &y, 8);
                                        return bx == by;
                                    });
        if (in_freeze_set(b.name, freeze_prefixes)) {
            if (!identical) report.frozen_changed.push_back(b.name);
        } else {
            if (identical) report.trainable_unchanged.push_back(b.name);
        }
    }
    return report;
}

void PretrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("pretrain: epochs must be >= 0");
    if (batch_size <= 0) throw ConfigError("pretrain: batch_size must be positive");
    if (learning_rate <= 0.0) throw ConfigError("pretrain: learning_rate must be positive");
    if (hint_fraction < 0.0 || hint_fraction > 1.0) {
        throw ConfigError("pretrain: hint_fraction must be in [0, 1]");
    }
}

TrainResult pretrain_lm(VlmModel& model, const std::vector<QAExample>& dataset,
                        const PretrainConfig& config) {
    config.validate();
    if (dataset.empty()) throw ContractError("pretrain_lm: empty dataset");

    // Only the decoder trains here; everything else stays frozen.
    for (auto& p : model.params().all()) {
        p->set_frozen(p->name().rfind("lm.", 0) != 0);
        p->optimizer_state().reset();
    }

    OptimizerConfig opt;
    opt.learning_rate = config.learning_rate;
    opt.weight_decay = config.weight_decay;

    const Vocabulary& vocab = model.lm().config().vocab;
    const size_t d = model.lm().config().d_lm;
    const size_t max_seq = model.lm().config().max_seq_len;

    auto example_loss = [&](const QAExample& ex, size_t idx) {
        Rng rng(mix_seed(mix_seed(config.seed, idx), 0x70726566ULL));
        std::vector<int> instr = tokenize(ex.instruction, vocab);
        std::vector<int> answer = tokenize(ex.answer, vocab);
        std::vector<int> hint = tokenize(ex.reference_short, vocab);

        size_t budget = max_seq - (2 + instr.size() + answer.size());
        size_t max_prefix = std::min(config.max_prefix, budget);
        bool hinted = rng.next_double() < config.hint_fraction && hint.size() <= max_prefix;

        Tensor prefix;
        if (hinted) {
            size_t plen = hint.size() + rng.next_below(max_prefix - hint.size() + 1);
            size_t offset = rng.next_below(plen - hint.size() + 1);
            std::vector<Tensor> rows;
            if (offset > 0) rows.push_back(Tensor::zeros({offset, d}));
            rows.push_back(model.lm().token_embeddings(hint));
            if (plen - offset - hint.size() > 0) {
                rows.push_back(Tensor::zeros({plen - offset - hint.size(), d}));
            }
            prefix = rows.size() == 1 ? rows[0] : concat_rows(rows);
        } else {
            size_t plen = rng.next_below(max_prefix + 1);
            if (plen > 0) prefix = Tensor::zeros({plen, d});
        }
        AssembledSequence seq = model.lm().assemble_with_prefix(prefix, instr, answer);
        return model.lm().loss(seq);
    };
    TrainResult result = run_epochs(model, dataset, 0, config.epochs, config.batch_size, opt, 1.0,
                                    config.seed, example_loss);

    // The decoder is a fixed fixture from here on.
    for (auto& p : model.params().all()) {
        if (p->name().rfind("lm.", 0) == 0) p->set_frozen(true);
    }
    return result;
}

void write_loss_csv(const std::string& path, const LossCurve& curve) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "step,stage,loss\n";
    for (const auto& s : curve.steps) {
        out << s.step << "," << s.stage << "," << std::setprecision(17) << s.loss << "\n";
    }
}

void write_epoch_means_csv(const std::string& path, const LossCurve& curve) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "epoch,mean_loss\n";
    for (size_t e = 0; e < curve.epoch_means.size(); ++e) {
        out << e << "," << std::setprecision(17) << curve.epoch_means[e] << "\n";
    }
}

void write_loss_svg(const std::string& path, const LossCurve& curve) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    const int w = 640, h = 360, margin = 40;
    double max_loss = 1e-9, min_loss = 1e18;
    for (const auto& s : curve.steps) {
        max_loss = std::max(max_loss, s.loss);
        min_loss = std::min(min_loss, s.loss);
    }
    if (curve.steps.empty()) {
        min_loss = 0.0;
        max_loss = 1.0;
    }
    if (max_loss - min_loss < 1e-12) max_loss = min_loss + 1.0;
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << margin << "' y='20' font-size='13'>training loss per step</text>\n";
    out << "<polyline fill='none' stroke='steelblue' stroke-width='1.5' points='";
    for (size_t i = 0; i < curve.steps.size(); ++i) {
        double x = margin + (w - 2.0 * margin) * (curve.steps.size() == 1
                                                      ? 0.0
                                                      : static_cast<double>(i) /
                                                            static_cast<double>(curve.steps.size() - 1));
        double y = h - margin -
                   (h - 2.0 * margin) * (curve.steps[i].loss - min_loss) / (max_loss - min_loss);
        out << x << "," << y << " ";
    }
    out << "'/>\n</svg>\n";
}

}  // namespace dvlm
