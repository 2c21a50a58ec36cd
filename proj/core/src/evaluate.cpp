#include "dvlm/evaluate.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "dvlm/checkpoint.hpp"
#include "dvlm/errors.hpp"
#include "dvlm/rng.hpp"

namespace dvlm {

using json = nlohmann::json;

namespace {

const std::map<std::string, std::string>& numeral_words() {
    static const std::map<std::string, std::string> words = {
        {"zero", "0"}, {"one", "1"}, {"two", "2"},   {"three", "3"}, {"four", "4"}, {"five", "5"},
        {"six", "6"},  {"seven", "7"}, {"eight", "8"}, {"nine", "9"},  {"ten", "10"},
    };
    return words;
}

std::vector<std::string> tokens_of(const std::string& normalized) {
    std::vector<std::string> out;
    std::istringstream is(normalized);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

}  // namespace

std::string normalize_answer(const std::string& text) {
    std::string spaced;
    spaced.reserve(text.size());
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            spaced.push_back(static_cast<char>(std::tolower(c)));
        } else {
            spaced.push_back(' ');
        }
    }
    std::vector<std::string> toks = tokens_of(spaced);
    const auto& words = numeral_words();
    std::string out;
    for (auto& t : toks) {
        auto it = words.find(t);
        if (!out.empty()) out.push_back(' ');
        out += (it != words.end()) ? it->second : t;
    }
    return out;
}

JudgeVerdict judge_exact(const std::string& prediction, const std::string& reference_short) {
    std::vector<std::string> pred = tokens_of(normalize_answer(prediction));
    std::vector<std::string> ref = tokens_of(normalize_answer(reference_short));
    JudgeVerdict v;
    v.kind = JudgeVerdict::Kind::exact;
    if (ref.empty()) {
        v.correct = true;
        v.rationale = "empty reference";
        return v;
    }
    for (size_t i = 0; i + ref.size() <= pred.size(); ++i) {
        if (std::equal(ref.begin(), ref.end(), pred.begin() + static_cast<long>(i))) {
            v.correct = true;
            v.rationale = "reference found at token " + std::to_string(i);
            return v;
        }
    }
    v.correct = false;
    v.rationale = "reference not contained in prediction";
    return v;
}

const char kJudgePromptTemplate[] =
    "You are grading an answer. Reply with exactly one word: CORRECT or INCORRECT.\n"
    "Question: {question}\n"
    "Reference answer: {reference}\n"
    "Candidate answer: {prediction}\n"
    "Verdict:";

std::string judge_prompt(const std::string& question, const std::string& prediction,
                         const std::string& reference) {
    std::string p = kJudgePromptTemplate;
    auto sub = [&p](const std::string& key, const std::string& value) {
        size_t pos = p.find(key);
        if (pos != std::string::npos) p.replace(pos, key.size(), value);
    };
    sub("{question}", question);
    sub("{reference}", reference);
    sub("{prediction}", prediction);
    return p;
}

JudgeVerdict judge_external(const std::string& question, const std::string& prediction,
                            const std::string& reference, TextCompletionClient& client) {
    std::string reply = client.complete(judge_prompt(question, prediction, reference));
    std::string trimmed;
    for (unsigned char c : reply) {
        if (std::isalpha(c)) trimmed.push_back(static_cast<char>(std::toupper(c)));
    }
    JudgeVerdict v;
    v.kind = JudgeVerdict::Kind::external;
    if (trimmed == "CORRECT") {
        v.correct = true;
    } else if (trimmed == "INCORRECT") {
        v.correct = false;
    } else {
        throw JudgeProtocolError("external judge replied '" + reply +
                                 "', expected CORRECT or INCORRECT");
    }
    v.rationale = "external reply: " + trimmed;
    return v;
}

std::map<std::string, std::map<std::string, AccuracyCell>> recount_cells(const AccuracyReport& report) {
    std::map<std::string, std::map<std::string, AccuracyCell>> cells;
    for (const auto& v : report.verdicts) {
        for (const std::string& row : {task_name(v.task), std::string("overall")}) {
            auto& cell = cells[row][v.variant];
            cell.total += 1;
            if (v.correct) cell.correct += 1;
        }
    }
    return cells;
}

AccuracyReport evaluate(const GenerateFn& generate, const std::vector<QAExample>& examples,
                        Judge& judge, const EvalOptions& opts) {
    if (examples.empty()) throw EvaluationError("evaluate: empty dataset split");
    AccuracyReport report;
    report.variants = {opts.variant};
    report.judge_kind = judge.kind();
    report.judge_prompt_hash = hex64(fnv1a64(std::string(kJudgePromptTemplate)));
    report.seed = opts.seed;
    report.checkpoint_hash = opts.checkpoint_hash;

    for (const auto& ex : examples) {
        std::string prediction = generate(ex);
        JudgeVerdict v = judge(ex, prediction);
        report.verdicts.push_back({ex.id, ex.task, opts.variant, prediction, ex.reference_short,
                                   v.correct});
    }
    report.cells = recount_cells(report);
    for (TaskTag t : {TaskTag::caption, TaskTag::count, TaskTag::color, TaskTag::glyph_read,
                      TaskTag::exist}) {
        if (report.cells.count(task_name(t))) report.row_order.push_back(task_name(t));
    }
    report.row_order.push_back("overall");
    return report;
}

AccuracyReport evaluate(const VlmModel& model, const std::vector<QAExample>& examples, Judge& judge,
                        const EvalOptions& opts) {
    const size_t max_seq = model.lm().config().max_seq_len;
    const size_t prompt_len =
        (model.config().abstractor.path_mode == PathMode::qformer_only
             ? model.config().abstractor.num_queries
         : model.config().abstractor.path_mode == PathMode::mlp_only
             ? model.vision().num_patches()
             : model.config().abstractor.num_queries + model.vision().num_patches());
    GenerateFn gen = [&](const QAExample& ex) {
        size_t instr_len = ex.instruction.size();
        size_t room = max_seq > prompt_len + instr_len + 2 ? max_seq - prompt_len - instr_len - 2 : 0;
        size_t budget = std::min(opts.max_new, room);
        return model.generate(ex.image(), ex.instruction, budget);
    };
    EvalOptions o = opts;
    if (o.checkpoint_hash.empty()) o.checkpoint_hash = hex64(model.content_checksum());
    return evaluate(gen, examples, judge, o);
}

std::string render_table_row(const TableRow& row) {
    std::string out = row.label;
    char buf[32];
    for (double v : row.values) {
        std::snprintf(buf, sizeof(buf), "%.1f", v);
        out += " | ";
        out += buf;
    }
    return out;
}

TableRow parse_table_row(const std::string& line) {
    TableRow row;
    std::vector<std::string> parts;
    std::string cur;
    for (size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == '|') {
            // trim
            size_t b = cur.find_first_not_of(" \t");
            size_t e = cur.find_last_not_of(" \t");
            parts.push_back(b == std::string::npos ? "" : cur.substr(b, e - b + 1));
            cur.clear();
        } else {
            cur.push_back(line[i]);
        }
    }
    if (parts.empty() || parts[0].empty()) {
        throw ContractError("parse_table_row: missing row label in '" + line + "'");
    }
    row.label = parts[0];
    for (size_t i = 1; i < parts.size(); ++i) {
        try {
            row.values.push_back(std::stod(parts[i]));
        } catch (const std::exception&) {
            throw ContractError("parse_table_row: bad numeric cell '" + parts[i] + "'");
        }
    }
    return row;
}

std::string render_report(const AccuracyReport& report) {
    std::ostringstream os;
    os << "task";
    for (const auto& v : report.variants) os << " | " << v;
    os << "\n";
    for (const auto& label : report.row_order) {
        TableRow row;
        row.label = label;
        auto it = report.cells.find(label);
        for (const auto& v : report.variants) {
            double pct = 0.0;
            if (it != report.cells.end()) {
                auto cit = it->second.find(v);
                if (cit != it->second.end()) pct = cit->second.percent();
            }
            row.values.push_back(pct);
        }
        os << render_table_row(row) << "\n";
    }
    return os.str();
}

void write_report_json(const std::string& path, const AccuracyReport& report) {
    json rows = json::array();
    for (const auto& label : report.row_order) {
        json cells = json::object();
        auto it = report.cells.find(label);
        if (it != report.cells.end()) {
            for (const auto& [variant, cell] : it->second) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.1f", cell.percent());
                cells[variant] = {{"correct", cell.correct}, {"total", cell.total}, {"accuracy", buf}};
            }
        }
        rows.push_back({{"label", label}, {"cells", cells}});
    }
    json j = {{"metadata",
               {{"checkpoint_hash", report.checkpoint_hash},
                {"judge_kind", report.judge_kind},
                {"judge_prompt_hash", report.judge_prompt_hash},
                {"seed", report.seed}}},
              {"rows", rows}};
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << j.dump(2) << "\n";
}

void write_verdicts_jsonl(const std::string& path, const AccuracyReport& report) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    for (const auto& v : report.verdicts) {
        json j = {{"id", v.id},          {"task", task_name(v.task)},
                  {"variant", v.variant}, {"prediction", v.prediction},
                  {"reference_short", v.reference_short}, {"correct", v.correct}};
        out << j.dump() << "\n";
    }
}

std::string AblationResult::render() const {
    std::ostringstream os;
    for (size_t s = 0; s < seeds.size(); ++s) {
        os << "seed " << seeds[s] << "\n" << render_report(seed_reports[s]) << "\n";
    }
    os << "mean over " << seeds.size() << " seeds\n";
    os << "task";
    for (const auto& v : variants) os << " | " << v;
    os << "\n";
    for (const auto& [label, per_variant] : mean_percent) {
        TableRow row;
        row.label = label;
        for (const auto& v : variants) {
            auto it = per_variant.find(v);
            row.values.push_back(it == per_variant.end() ? 0.0 : it->second);
        }
        os << render_table_row(row) << "\n";
    }
    for (const auto& [task, rivals] : dual_wins) {
        for (const auto& [rival, wins] : rivals) {
            os << task << ": dual_path vs " << rival << " wins " << wins << "/" << seeds.size() << "\n";
        }
    }
    return os.str();
}

AblationResult run_ablation(const ModelConfig& base_config,
                            const std::vector<QAExample>& caption_train,
                            const std::vector<QAExample>& qa_train,
                            const std::vector<QAExample>& pretrain_corpus,
                            const std::vector<QAExample>& test_set, const AblationOptions& opts) {
    bool has_dual = false;
    for (PathMode v : opts.variants) has_dual = has_dual || v == PathMode::dual;
    if (!has_dual) {
        throw ConfigError("ablation: variant set must contain dual_path as the comparison anchor");
    }
    if (opts.variants.size() < 2) {
        throw ConfigError("ablation: need at least one ablated variant next to dual_path");
    }
    if (opts.seeds.empty()) throw ConfigError("ablation: need at least one seed");

    AblationResult result;
    result.seeds = opts.seeds;
    for (PathMode v : opts.variants) result.variants.push_back(path_mode_name(v));

    for (uint64_t seed : opts.seeds) {
        // One LM fixture per trial, shared verbatim across variants.
        ModelConfig fixture_cfg = base_config;
        fixture_cfg.seed = seed;
        fixture_cfg.abstractor.path_mode = PathMode::dual;
        VlmModel fixture(fixture_cfg);
        PretrainConfig pre = opts.pretrain;
        pre.seed = seed;
        pretrain_lm(fixture, pretrain_corpus, pre);

        AccuracyReport merged;
        merged.variants = result.variants;
        merged.judge_kind = "exact";
        merged.judge_prompt_hash = hex64(fnv1a64(std::string(kJudgePromptTemplate)));
        merged.seed = seed;

        for (PathMode variant : opts.variants) {
            ModelConfig cfg = base_config;
            cfg.seed = seed;
            cfg.abstractor.path_mode = variant;
            VlmModel model(cfg);
            // Copy the shared LM fixture weights.
            for (auto& p : model.params().all()) {
                if (p->name().rfind("lm.", 0) == 0) {
                    p->tensor().mutable_data() = fixture.params().at(p->name()).tensor().data();
                }
            }

            TrainingStageConfig s1 = configure_stage(1, opts.profile);
            if (opts.stage1_epochs >= 0) s1.epochs = opts.stage1_epochs;
            s1.seed = seed;
            apply_freeze(model, s1);
            train_stage(model, caption_train, s1);

            TrainingStageConfig s2 = configure_stage(2, opts.profile);
            if (opts.stage2_epochs >= 0) s2.epochs = opts.stage2_epochs;
            s2.seed = seed;
            apply_freeze(model, s2);
            train_stage(model, qa_train, s2);

            ExactJudge judge;
            EvalOptions eo;
            eo.max_new = opts.eval_max_new;
            eo.variant = path_mode_name(variant);
            eo.seed = seed;
            AccuracyReport r = evaluate(model, test_set, judge, eo);
            merged.verdicts.insert(merged.verdicts.end(), r.verdicts.begin(), r.verdicts.end());
        }
        merged.cells = recount_cells(merged);
        for (TaskTag t : {TaskTag::caption, TaskTag::count, TaskTag::color, TaskTag::glyph_read,
                          TaskTag::exist}) {
            if (merged.cells.count(task_name(t))) merged.row_order.push_back(task_name(t));
        }
        merged.row_order.push_back("overall");
        result.seed_reports.push_back(std::move(merged));
    }

    // Aggregate means and dual-vs-rival win counts.
    for (const auto& report : result.seed_reports) {
        for (const auto& label : report.row_order) {
            const auto& per_variant = report.cells.at(label);
            for (const auto& vname : result.variants) {
                auto it = per_variant.find(vname);
                double pct = it == per_variant.end() ? 0.0 : it->second.percent();
                result.mean_percent[label][vname] += pct / static_cast<double>(result.seeds.size());
            }
            auto dual_it = per_variant.find("dual_path");
            if (dual_it == per_variant.end()) continue;
            for (const auto& vname : result.variants) {
                if (vname == "dual_path") continue;
                auto it = per_variant.find(vname);
                double rival = it == per_variant.end() ? 0.0 : it->second.percent();
                if (dual_it->second.percent() >= rival) result.dual_wins[label][vname] += 1;
            }
        }
    }
    return result;
}

}  // namespace dvlm
