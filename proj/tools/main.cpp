// dualvlm: desk-scale vision-language pipeline driver.
//
// Subcommands: gen-data, pretrain-lm, train, eval, ablate, inspect, infer,
// config-reference. Exit codes: 0 success, 1 usage/config error, 2
// runtime/numeric error, 3 IO error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "dvlm/checkpoint.hpp"
#include "dvlm/client.hpp"
#include "dvlm/config.hpp"
#include "dvlm/data.hpp"
#include "dvlm/errors.hpp"
#include "dvlm/evaluate.hpp"
#include "dvlm/image_io.hpp"
#include "dvlm/model.hpp"
#include "dvlm/rng.hpp"
#include "dvlm/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string file_hash_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw dvlm::IoError("cannot open '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return dvlm::hex64(dvlm::fnv1a64(bytes.data(), bytes.size()));
}

void print_banner(const std::string& command, const dvlm::RunConfig& cfg, uint64_t seed,
                  const std::vector<std::string>& input_paths, const std::string& extra = "") {
    std::ostringstream inputs;
    for (size_t i = 0; i < input_paths.size(); ++i) {
        inputs << (i ? "," : "") << file_hash_hex(input_paths[i]);
    }
    std::cout << "dualvlm " << command << " | config=" << dvlm::hex64(cfg.content_hash())
              << " seed=" << seed << " inputs=" << (input_paths.empty() ? "-" : inputs.str());
    if (!extra.empty()) std::cout << " | " << extra;
    std::cout << "\n";
}

dvlm::RunConfig load_config(const std::string& path) {
    return path.empty() ? dvlm::RunConfig::defaults() : dvlm::RunConfig::load(path);
}

std::vector<dvlm::QAExample> select_split(const std::vector<dvlm::QAExample>& all, dvlm::Split split) {
    std::vector<dvlm::QAExample> out;
    for (const auto& ex : all) {
        if (ex.split == split) out.push_back(ex);
    }
    return out;
}

std::vector<dvlm::QAExample> select_task(const std::vector<dvlm::QAExample>& all, dvlm::TaskTag task) {
    std::vector<dvlm::QAExample> out;
    for (const auto& ex : all) {
        if (ex.task == task) out.push_back(ex);
    }
    return out;
}

std::vector<uint64_t> parse_seed_list(const std::string& s) {
    std::vector<uint64_t> seeds;
    std::istringstream is(s);
    std::string part;
    while (std::getline(is, part, ',')) {
        if (part.empty()) continue;
        seeds.push_back(std::strtoull(part.c_str(), nullptr, 10));
    }
    if (seeds.empty()) throw dvlm::ConfigError("--seeds: no seeds given");
    return seeds;
}

int cmd_gen_data(const std::string& config_path, long size, long seed, const std::string& out_dir,
                 const std::string& task_mix, const std::string& dump_images) {
    dvlm::RunConfig cfg = load_config(config_path);
    if (size > 0) cfg.set("data.size", std::to_string(size));
    if (seed >= 0) cfg.set("data.seed", std::to_string(seed));
    if (!task_mix.empty()) cfg.set("data.task_mix", task_mix);

    uint64_t data_seed = static_cast<uint64_t>(cfg.get_int("data.seed"));
    print_banner("gen-data", cfg, data_seed, {});

    dvlm::TaskMix mix = cfg.task_mix();
    dvlm::GenOptions gen_opts = cfg.gen_options();
    auto examples = dvlm::generate_dataset(static_cast<size_t>(cfg.get_int("data.size")), mix,
                                           data_seed, gen_opts);
    if (cfg.get_bool("data.augment")) {
        std::unique_ptr<dvlm::HttpTextClient> expander;
        if (std::getenv("EXPANDER_URL")) {
            expander = std::make_unique<dvlm::HttpTextClient>(
                dvlm::HttpTextClient::Options{"EXPANDER_URL", "EXPANDER_KEY", out_dir + "/expander_cache"});
        }
        for (auto& ex : examples) ex = dvlm::augment_answer(std::move(ex), expander.get());
    }
    examples = dvlm::dedupe_and_rephrase(std::move(examples));
    dvlm::split_dataset(examples, cfg.get_double("data.ratio_train"), cfg.get_double("data.ratio_val"),
                        cfg.get_double("data.ratio_test"), data_seed);

    fs::create_directories(out_dir);
    json manifest;
    manifest["seed"] = data_seed;
    manifest["task_mix"] = cfg.get_string("data.task_mix");
    manifest["total"] = examples.size();
    for (dvlm::Split split : {dvlm::Split::train, dvlm::Split::val, dvlm::Split::test}) {
        auto part = select_split(examples, split);
        std::string name = dvlm::split_name(split) + ".jsonl";
        std::string path = out_dir + "/" + name;
        dvlm::write_jsonl(path, part);
        manifest["files"][name] = {{"count", part.size()}, {"hash", file_hash_hex(path)}};
    }
    std::ofstream mf(out_dir + "/manifest.json");
    if (!mf) throw dvlm::IoError("cannot write manifest in '" + out_dir + "'");
    mf << manifest.dump(2) << "\n";
    mf.close();

    if (!dump_images.empty()) {
        fs::create_directories(dump_images);
        for (const auto& ex : examples) {
            dvlm::write_ppm_file(dump_images + "/" + ex.id + ".ppm", dvlm::render_raster(ex.scene));
        }
    }
    std::cout << "wrote " << examples.size() << " examples to " << out_dir << " (manifest hash "
              << file_hash_hex(out_dir + "/manifest.json") << ")\n";
    return 0;
}

int cmd_pretrain_lm(const std::string& config_path, const std::string& data_path,
                    const std::string& out_path, const std::string& loss_csv) {
    dvlm::RunConfig cfg = load_config(config_path);
    dvlm::PretrainConfig pre = cfg.pretrain_config();
    print_banner("pretrain-lm", cfg, pre.seed, {data_path},
                 "epochs=" + std::to_string(pre.epochs) + " batch=" + std::to_string(pre.batch_size));

    auto all = dvlm::read_jsonl(data_path);
    auto train = select_split(all, dvlm::Split::train);
    if (train.empty()) train = all;

    dvlm::VlmModel model(cfg.model_config());
    dvlm::TrainResult result = dvlm::pretrain_lm(model, train, pre);
    for (size_t e = 0; e < result.curve.epoch_means.size(); ++e) {
        std::cout << "epoch " << e << " mean loss " << result.curve.epoch_means[e] << "\n";
    }
    if (!loss_csv.empty()) dvlm::write_loss_csv(loss_csv, result.curve);

    dvlm::CheckpointMeta meta;
    meta.stage = "pretrain_lm";
    meta.parent_stage = "init";
    meta.model_seed = model.config().seed;
    meta.train_seed = pre.seed;
    dvlm::save_checkpoint(out_path, model, meta);
    std::cout << "checkpoint " << out_path << " content "
              << dvlm::load_checkpoint(out_path).meta.content_checksum << "\n";
    return 0;
}

int cmd_train(int stage, const std::string& config_path, const std::string& data_path,
              const std::string& from_path, bool from_scratch, const std::string& out_path,
              const std::string& loss_csv, const std::string& plot_svg) {
    dvlm::RunConfig cfg = load_config(config_path);
    dvlm::TrainingStageConfig stage_cfg = cfg.stage_config(stage);

    std::ostringstream extra;
    extra << "epochs=" << stage_cfg.epochs << " batch=" << stage_cfg.batch_size << " lr="
          << stage_cfg.optimizer.learning_rate << " wd=" << stage_cfg.optimizer.weight_decay;
    std::vector<std::string> inputs = {data_path};
    if (!from_path.empty()) inputs.push_back(from_path);
    print_banner("train --stage " + std::to_string(stage), cfg, stage_cfg.seed, inputs, extra.str());

    std::unique_ptr<dvlm::VlmModel> model;
    std::string parent_stage = "init";
    if (!from_path.empty()) {
        auto ckpt = dvlm::load_checkpoint(from_path);
        model = dvlm::model_from_checkpoint(ckpt);
        parent_stage = ckpt.meta.stage;
    } else {
        model = std::make_unique<dvlm::VlmModel>(cfg.model_config());
        std::cerr << "warning: training from a fresh model (no --from checkpoint); the decoder is "
                     "untrained\n";
    }
    if (stage == 2 && parent_stage != "stage1" && !from_scratch) {
        throw dvlm::ConfigError("stage 2 requires a stage-1 checkpoint via --from (got stage '" +
                                parent_stage + "'); pass --from-scratch to override");
    }

    auto all = dvlm::read_jsonl(data_path);
    auto train = select_split(all, dvlm::Split::train);
    if (train.empty()) train = all;
    if (stage == 1) train = select_task(train, dvlm::TaskTag::caption);
    if (train.empty()) throw dvlm::ConfigError("no usable training examples for stage " +
                                               std::to_string(stage) + " in " + data_path);

    dvlm::apply_freeze(*model, stage_cfg);
    dvlm::TrainResult result = dvlm::train_stage(*model, train, stage_cfg);
    for (size_t e = 0; e < result.curve.epoch_means.size(); ++e) {
        std::cout << "epoch " << e << " mean loss " << result.curve.epoch_means[e] << "\n";
    }
    if (!loss_csv.empty()) dvlm::write_loss_csv(loss_csv, result.curve);
    if (!plot_svg.empty()) dvlm::write_loss_svg(plot_svg, result.curve);

    dvlm::CheckpointMeta meta;
    meta.stage = "stage" + std::to_string(stage);
    meta.parent_stage = parent_stage;
    meta.model_seed = model->config().seed;
    meta.train_seed = stage_cfg.seed;
    dvlm::save_checkpoint(out_path, *model, meta);
    std::cout << "checkpoint " << out_path << " content "
              << dvlm::load_checkpoint(out_path).meta.content_checksum << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path,
             const std::string& data_path, const std::string& judge_name,
             const std::string& split_name_arg, const std::string& out_prefix, bool echo_reference) {
    dvlm::RunConfig cfg = load_config(config_path);
    if (!judge_name.empty()) cfg.set("eval.judge", judge_name);
    if (!split_name_arg.empty()) cfg.set("eval.split", split_name_arg);

    std::vector<std::string> inputs = {data_path};
    if (!ckpt_path.empty()) inputs.push_back(ckpt_path);
    print_banner("eval", cfg, static_cast<uint64_t>(cfg.get_int("training.seed")), inputs,
                 "judge=" + cfg.get_string("eval.judge") + " split=" + cfg.get_string("eval.split"));

    auto all = dvlm::read_jsonl(data_path);
    auto subset = select_split(all, dvlm::split_from_name(cfg.get_string("eval.split")));
    if (subset.empty()) throw dvlm::EvaluationError("no examples in split '" +
                                                    cfg.get_string("eval.split") + "' of " + data_path);

    std::unique_ptr<dvlm::TextCompletionClient> client;
    std::unique_ptr<dvlm::Judge> judge;
    if (cfg.get_string("eval.judge") == "external") {
        auto http = std::make_unique<dvlm::HttpTextClient>(
            dvlm::HttpTextClient::Options{"JUDGE_URL", "JUDGE_KEY", out_prefix + "_judge_cache"});
        http->require_configured();
        client = std::move(http);
        judge = std::make_unique<dvlm::ExternalJudge>(*client);
    } else {
        judge = std::make_unique<dvlm::ExactJudge>();
    }

    dvlm::EvalOptions opts;
    opts.max_new = static_cast<size_t>(cfg.get_int("eval.max_new"));
    opts.seed = static_cast<uint64_t>(cfg.get_int("training.seed"));

    dvlm::AccuracyReport report;
    if (echo_reference) {
        opts.variant = "echo_reference";
        opts.checkpoint_hash = "echo";
        dvlm::GenerateFn echo = [](const dvlm::QAExample& ex) { return ex.reference_short; };
        report = dvlm::evaluate(echo, subset, *judge, opts);
    } else {
        if (ckpt_path.empty()) throw dvlm::ConfigError("eval: --ckpt is required (or --echo-reference)");
        auto ckpt = dvlm::load_checkpoint(ckpt_path);
        auto model = dvlm::model_from_checkpoint(ckpt);
        opts.variant = dvlm::path_mode_name(model->config().abstractor.path_mode);
        report = dvlm::evaluate(*model, subset, *judge, opts);
    }

    std::cout << dvlm::render_report(report);
    dvlm::write_report_json(out_prefix + "_report.json", report);
    dvlm::write_verdicts_jsonl(out_prefix + "_verdicts.jsonl", report);
    std::cout << "report " << out_prefix << "_report.json, verdicts " << out_prefix
              << "_verdicts.jsonl\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir,
               const std::string& variants_arg, const std::string& seeds_arg,
               const std::string& out_path) {
    dvlm::RunConfig cfg = load_config(config_path);
    dvlm::AblationOptions opts;
    opts.seeds = parse_seed_list(seeds_arg);
    opts.variants.clear();
    {
        std::istringstream is(variants_arg);
        std::string part;
        while (std::getline(is, part, ',')) {
            if (!part.empty()) opts.variants.push_back(dvlm::path_mode_from_name(part));
        }
    }
    opts.profile = cfg.profile();
    opts.pretrain = cfg.pretrain_config();
    opts.stage1_epochs = static_cast<int>(cfg.get_int("training.stage1_epochs"));
    opts.stage2_epochs = static_cast<int>(cfg.get_int("training.stage2_epochs"));
    opts.eval_max_new = static_cast<size_t>(cfg.get_int("eval.max_new"));

    std::string train_path = data_dir + "/train.jsonl";
    std::string test_path = data_dir + "/test.jsonl";
    print_banner("ablate", cfg, opts.seeds[0], {train_path, test_path},
                 "variants=" + variants_arg + " seeds=" + seeds_arg);

    auto train = dvlm::read_jsonl(train_path);
    auto test = dvlm::read_jsonl(test_path);
    auto caption_train = select_task(train, dvlm::TaskTag::caption);

    dvlm::AblationResult result = dvlm::run_ablation(cfg.model_config(), caption_train, train, train,
                                                     test, opts);
    std::cout << result.render();
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw dvlm::IoError("cannot open '" + out_path + "'");
        out << result.render();
    }
    return 0;
}

int cmd_inspect(const std::string& ckpt_path) {
    dvlm::LoadedCheckpoint ckpt = dvlm::load_checkpoint(ckpt_path);
    std::cout << "checkpoint " << ckpt_path << "\n";
    std::cout << "  stage: " << ckpt.meta.stage << " (from " << ckpt.meta.parent_stage << ")\n";
    std::cout << "  model seed: " << ckpt.meta.model_seed << "  train seed: " << ckpt.meta.train_seed
              << "\n";
    std::cout << "  fusion order: " << ckpt.meta.fusion_order << "\n";
    std::cout << "  created: " << ckpt.meta.created_at << "\n";
    std::cout << "  content checksum: " << ckpt.meta.content_checksum << "\n";
    size_t total = 0, frozen = 0;
    for (const auto& t : ckpt.tensors) {
        size_t n = 1;
        for (size_t d : t.shape) n *= d;
        total += n;
        if (t.frozen) frozen += n;
        std::cout << "  " << t.name << " " << dvlm::shape_str(t.shape) << (t.frozen ? " frozen" : "")
                  << "\n";
    }
    std::cout << "  tensors: " << ckpt.tensors.size() << ", scalars: " << total << " (" << frozen
              << " frozen)\n";
    return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& image_path,
              const std::string& instruction, long max_new) {
    auto ckpt = dvlm::load_checkpoint(ckpt_path);
    auto model = dvlm::model_from_checkpoint(ckpt);
    dvlm::ImageTensor image = dvlm::to_image_tensor(dvlm::read_ppm_file(image_path));
    std::string out = model->generate(image, instruction, static_cast<size_t>(max_new));
    std::cout << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale dual-path vision-language pipeline"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "worker cap for data-parallel phases")->check(CLI::Range(1, 256));

    std::string config_path;

    auto* gen = app.add_subcommand("gen-data", "generate synthetic dataset splits");
    long gen_size = -1, gen_seed = -1;
    std::string gen_out = "data", gen_mix, gen_dump;
    gen->add_option("--config", config_path, "run config file");
    gen->add_option("--size", gen_size, "examples to generate");
    gen->add_option("--seed", gen_seed, "generation seed");
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--task-mix", gen_mix, "e.g. caption=0.5,count=0.5");
    gen->add_option("--dump-images", gen_dump, "also write per-example PPM files here");

    auto* pre = app.add_subcommand("pretrain-lm", "build the frozen decoder fixture");
    std::string pre_data, pre_out = "lm_pretrained.ckpt", pre_csv;
    pre->add_option("--config", config_path, "run config file");
    pre->add_option("--data", pre_data, "training JSONL")->required();
    pre->add_option("--out", pre_out, "output checkpoint");
    pre->add_option("--loss-csv", pre_csv, "write per-step losses");

    auto* train = app.add_subcommand("train", "run training stage 1 or 2");
    int train_stage_id = 0;
    std::string train_data, train_from, train_out = "model.ckpt", train_csv, train_svg;
    bool train_from_scratch = false;
    train->add_option("--stage", train_stage_id, "1 or 2")->required();
    train->add_option("--config", config_path, "run config file");
    train->add_option("--data", train_data, "training JSONL")->required();
    train->add_option("--from", train_from, "starting checkpoint");
    train->add_flag("--from-scratch", train_from_scratch, "allow stage 2 without a stage-1 checkpoint");
    train->add_option("--out", train_out, "output checkpoint");
    train->add_option("--loss-csv", train_csv, "write per-step losses");
    train->add_option("--plot", train_svg, "write an SVG loss plot");

    auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint with a judge");
    std::string eval_ckpt, eval_data, eval_judge, eval_split, eval_out = "eval";
    bool eval_echo = false;
    evalc->add_option("--config", config_path, "run config file");
    evalc->add_option("--ckpt", eval_ckpt, "model checkpoint");
    evalc->add_option("--data", eval_data, "dataset JSONL")->required();
    evalc->add_option("--judge", eval_judge, "exact or external");
    evalc->add_option("--split", eval_split, "train, val or test");
    evalc->add_option("--out", eval_out, "output prefix for report/verdicts");
    evalc->add_flag("--echo-reference", eval_echo, "oracle mode: predictions echo reference_short");

    auto* ablate = app.add_subcommand("ablate", "train and compare abstractor path variants");
    std::string ab_dir, ab_variants = "dual_path,qformer_only,mlp_only", ab_seeds = "1,2,3,4,5",
                ab_out;
    ablate->add_option("--config", config_path, "run config file");
    ablate->add_option("--data-dir", ab_dir, "directory with train/test JSONL")->required();
    ablate->add_option("--variants", ab_variants, "comma list; must include dual_path");
    ablate->add_option("--seeds", ab_seeds, "comma list of trial seeds");
    ablate->add_option("--out", ab_out, "write the rendered report here");

    auto* inspect = app.add_subcommand("inspect", "describe a checkpoint");
    std::string ins_ckpt;
    inspect->add_option("--ckpt", ins_ckpt, "checkpoint path")->required();

    auto* infer = app.add_subcommand("infer", "answer one instruction about a PPM image");
    std::string inf_ckpt, inf_image, inf_instruction;
    long inf_max_new = 44;
    infer->add_option("--ckpt", inf_ckpt, "checkpoint path")->required();
    infer->add_option("--image", inf_image, "PPM (P6) image")->required();
    infer->add_option("--instruction", inf_instruction, "question or instruction")->required();
    infer->add_option("--max-new", inf_max_new, "generation budget");

    auto* cref = app.add_subcommand("config-reference", "print the generated config reference");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, gen_size, gen_seed, gen_out, gen_mix, gen_dump);
        if (pre->parsed()) return cmd_pretrain_lm(config_path, pre_data, pre_out, pre_csv);
        if (train->parsed()) {
            return cmd_train(train_stage_id, config_path, train_data, train_from, train_from_scratch,
                             train_out, train_csv, train_svg);
        }
        if (evalc->parsed()) {
            return cmd_eval(config_path, eval_ckpt, eval_data, eval_judge, eval_split, eval_out,
                            eval_echo);
        }
        if (ablate->parsed()) return cmd_ablate(config_path, ab_dir, ab_variants, ab_seeds, ab_out);
        if (inspect->parsed()) return cmd_inspect(ins_ckpt);
        if (infer->parsed()) return cmd_infer(inf_ckpt, inf_image, inf_instruction, inf_max_new);
        if (cref->parsed()) {
            dvlm::RunConfig::write_reference(std::cout);
            return 0;
        }
    } catch (const dvlm::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.category()) {
            case dvlm::ErrorCategory::usage: return 1;
            case dvlm::ErrorCategory::runtime: return 2;
            case dvlm::ErrorCategory::io: return 3;
        }
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
