#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dvlm/client.hpp"
#include "dvlm/data.hpp"
#include "dvlm/model.hpp"
#include "dvlm/train.hpp"

namespace dvlm {

struct JudgeVerdict {
    enum class Kind { exact, external };
    bool correct = false;
    std::string rationale;
    Kind kind = Kind::exact;
};

// Lowercase, strip punctuation, collapse whitespace, map numeral words to
// digits. Applied identically to both sides of every comparison.
std::string normalize_answer(const std::string& text);

// Correct iff the normalized reference occurs as a token-boundary substring of
// the normalized prediction. Deterministic.
JudgeVerdict judge_exact(const std::string& prediction, const std::string& reference_short);

// The exact prompt sent to the external judge; hashed into report metadata.
extern const char kJudgePromptTemplate[];
std::string judge_prompt(const std::string& question, const std::string& prediction,
                         const std::string& reference);

// Asks the external model for a one-word CORRECT/INCORRECT classification.
// Anything else is a judge-protocol error, never silently coerced.
JudgeVerdict judge_external(const std::string& question, const std::string& prediction,
                            const std::string& reference, TextCompletionClient& client);

class Judge {
public:
    virtual ~Judge() = default;
    virtual JudgeVerdict operator()(const QAExample& example, const std::string& prediction) = 0;
    virtual std::string kind() const = 0;
};

class ExactJudge : public Judge {
public:
    JudgeVerdict operator()(const QAExample& example, const std::string& prediction) override {
        return judge_exact(prediction, example.reference_short);
    }
    std::string kind() const override { return "exact"; }
};

class ExternalJudge : public Judge {
public:
    explicit ExternalJudge(TextCompletionClient& client) : client_(client) {}
    JudgeVerdict operator()(const QAExample& example, const std::string& prediction) override {
        return judge_external(example.instruction, prediction, example.reference_short, client_);
    }
    std::string kind() const override { return "external"; }

private:
    TextCompletionClient& client_;
};

struct VerdictRecord {
    std::string id;
    TaskTag task = TaskTag::caption;
    std::string variant;
    std::string prediction;
    std::string reference_short;
    bool correct = false;
};

struct AccuracyCell {
    size_t correct = 0;
    size_t total = 0;

    double percent() const { return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total); }
};

// Per-(row, variant) accuracies plus the persisted per-example verdicts the
// accuracies are recounted from.
struct AccuracyReport {
    std::vector<std::string> variants;
    std::vector<std::string> row_order;  // task rows then "overall"
    std::map<std::string, std::map<std::string, AccuracyCell>> cells;
    std::vector<VerdictRecord> verdicts;

    std::string checkpoint_hash;
    std::string judge_kind;
    std::string judge_prompt_hash;
    uint64_t seed = 0;
};

// Rebuilds all cells from the stored verdicts (the recount audit).
std::map<std::string, std::map<std::string, AccuracyCell>> recount_cells(const AccuracyReport& report);

struct EvalOptions {
    size_t max_new = 44;  // clamped per example to the remaining context
    std::string variant = "model";
    uint64_t seed = 0;
    std::string checkpoint_hash;
};

using GenerateFn = std::function<std::string(const QAExample&)>;

AccuracyReport evaluate(const GenerateFn& generate, const std::vector<QAExample>& examples,
                        Judge& judge, const EvalOptions& opts);
AccuracyReport evaluate(const VlmModel& model, const std::vector<QAExample>& examples, Judge& judge,
                        const EvalOptions& opts);

// ---- table rendering (the report's tabular layout) --------------------------------

struct TableRow {
    std::string label;
    std::vector<double> values;
};

// Canonical row form: "label | v1 | v2 | ...", one decimal per value.
std::string render_table_row(const TableRow& row);
TableRow parse_table_row(const std::string& line);

std::string render_report(const AccuracyReport& report);
void write_report_json(const std::string& path, const AccuracyReport& report);
void write_verdicts_jsonl(const std::string& path, const AccuracyReport& report);

// ---- ablation ----------------------------------------------------------------------

struct AblationOptions {
    std::vector<PathMode> variants = {PathMode::dual, PathMode::qformer_only, PathMode::mlp_only};
    std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
    TrainProfile profile = TrainProfile::toy;
    PretrainConfig pretrain;
    int stage1_epochs = -1;  // -1 keeps the profile default
    int stage2_epochs = -1;
    size_t eval_max_new = 44;
};

struct AblationResult {
    std::vector<uint64_t> seeds;
    std::vector<std::string> variants;
    std::vector<AccuracyReport> seed_reports;
    // task -> variant -> mean percent across seeds
    std::map<std::string, std::map<std::string, double>> mean_percent;
    // task -> rival variant -> number of seeds where dual_path >= rival
    std::map<std::string, std::map<std::string, size_t>> dual_wins;

    std::string render() const;
};

// Trains every variant with identical stage configs, data and per-trial seed
// (the LM fixture is shared across variants within a seed) and evaluates on
// the test split. The variant set must contain dual_path.
AblationResult run_ablation(const ModelConfig& base_config,
                            const std::vector<QAExample>& caption_train,
                            const std::vector<QAExample>& qa_train,
                            const std::vector<QAExample>& pretrain_corpus,
                            const std::vector<QAExample>& test_set, const AblationOptions& opts);

}  // namespace dvlm
