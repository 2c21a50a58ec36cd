#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dvlm/data.hpp"
#include "dvlm/evaluate.hpp"
#include "dvlm/model.hpp"
#include "dvlm/train.hpp"

namespace dvlm {

// Flat key=value UTF-8 run configuration with a typed schema. Unknown keys and
// ill-typed values are rejected at load. `dualvlm config-reference` emits the
// generated reference file with every key, type, default and description.
class RunConfig {
public:
    static RunConfig defaults();
    static RunConfig load(const std::string& path);
    static void write_reference(std::ostream& os);

    void set(const std::string& key, const std::string& value);  // validates
    bool was_set(const std::string& key) const;                  // explicitly, not by default

    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::string get_string(const std::string& key) const;

    ModelConfig model_config() const;
    TrainingStageConfig stage_config(int stage) const;
    PretrainConfig pretrain_config() const;
    TaskMix task_mix() const;
    GenOptions gen_options() const;
    TrainProfile profile() const;

    // Hash over every resolved key=value pair; printed in command banners.
    uint64_t content_hash() const;

private:
    std::map<std::string, std::string> values_;
    std::map<std::string, bool> explicit_;
};

TaskMix parse_task_mix(const std::string& spec);

}  // namespace dvlm
