#include "dvlm/checkpoint.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "dvlm/errors.hpp"
#include "dvlm/rng.hpp"

namespace dvlm {

using json = nlohmann::json;

namespace {

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<uint8_t>& out, double d) {
    put_u64(out, std::bit_cast<uint64_t>(d));
}

struct Reader {
    const std::vector<uint8_t>& b;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > b.size()) {
            throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
        }
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = static_cast<uint16_t>(b[pos] | (b[pos + 1] << 8));
        pos += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
    std::string str(size_t n, const char* what) {
        need(n, what);
        std::string s(b.begin() + static_cast<long>(pos), b.begin() + static_cast<long>(pos + n));
        pos += n;
        return s;
    }
};

std::string timestamp_now() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json meta_to_json(const CheckpointMeta& m) {
    return {{"model_config", m.model_config},
            {"stage", m.stage},
            {"parent_stage", m.parent_stage},
            {"model_seed", m.model_seed},
            {"train_seed", m.train_seed},
            {"fusion_order", m.fusion_order},
            {"created_at", m.created_at},
            {"content_checksum", m.content_checksum},
            {"optimizer_reset_per_stage", m.optimizer_reset_per_stage}};
}

CheckpointMeta meta_from_json(const json& j) {
    CheckpointMeta m;
    m.model_config = j.at("model_config");
    m.stage = j.at("stage").get<std::string>();
    m.parent_stage = j.at("parent_stage").get<std::string>();
    m.model_seed = j.at("model_seed").get<uint64_t>();
    m.train_seed = j.at("train_seed").get<uint64_t>();
    m.fusion_order = j.at("fusion_order").get<std::string>();
    m.created_at = j.at("created_at").get<std::string>();
    m.content_checksum = j.at("content_checksum").get<std::string>();
    m.optimizer_reset_per_stage = j.at("optimizer_reset_per_stage").get<bool>();
    return m;
}

}  // namespace

std::string hex64(uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

const LoadedTensor* LoadedCheckpoint::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

json model_config_to_json(const ModelConfig& cfg) {
    return {{"seed", cfg.seed},
            {"image_height", cfg.image_height},
            {"image_width", cfg.image_width},
            {"vision",
             {{"patch_size", cfg.vision.patch_size},
              {"d_v", cfg.vision.d_v},
              {"n_blocks", cfg.vision.n_blocks},
              {"n_heads", cfg.vision.n_heads},
              {"mlp_ratio", cfg.vision.mlp_ratio}}},
            {"abstractor",
             {{"d_q", cfg.abstractor.d_q},
              {"num_queries", cfg.abstractor.num_queries},
              {"qformer_blocks", cfg.abstractor.qformer_blocks},
              {"qformer_heads", cfg.abstractor.qformer_heads},
              {"mlp_hidden", cfg.abstractor.mlp_hidden},
              {"instruction_conditioning", cfg.abstractor.instruction_conditioning},
              {"mlp_from_encoder", cfg.abstractor.mlp_from_encoder},
              {"path_mode", path_mode_name(cfg.abstractor.path_mode)}}},
            {"lm",
             {{"d_lm", cfg.lm.d_lm},
              {"n_layers", cfg.lm.n_layers},
              {"n_heads", cfg.lm.n_heads},
              {"n_kv_heads", cfg.lm.n_kv_heads},
              {"sliding_window", cfg.lm.sliding_window},
              {"max_seq_len", cfg.lm.max_seq_len}}}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.image_height = j.at("image_height").get<size_t>();
    cfg.image_width = j.at("image_width").get<size_t>();
    const auto& v = j.at("vision");
    cfg.vision.patch_size = v.at("patch_size").get<size_t>();
    cfg.vision.d_v = v.at("d_v").get<size_t>();
    cfg.vision.n_blocks = v.at("n_blocks").get<size_t>();
    cfg.vision.n_heads = v.at("n_heads").get<size_t>();
    cfg.vision.mlp_ratio = v.at("mlp_ratio").get<size_t>();
    const auto& a = j.at("abstractor");
    cfg.abstractor.d_q = a.at("d_q").get<size_t>();
    cfg.abstractor.num_queries = a.at("num_queries").get<size_t>();
    cfg.abstractor.qformer_blocks = a.at("qformer_blocks").get<size_t>();
    cfg.abstractor.qformer_heads = a.at("qformer_heads").get<size_t>();
    cfg.abstractor.instruction_conditioning = a.at("instruction_conditioning").get<bool>();
    cfg.abstractor.mlp_from_encoder = a.at("mlp_from_encoder").get<bool>();
    cfg.abstractor.mlp_hidden = a.at("mlp_hidden").get<size_t>();
    cfg.abstractor.path_mode = path_mode_from_name(a.at("path_mode").get<std::string>());
    const auto& l = j.at("lm");
    cfg.lm.d_lm = l.at("d_lm").get<size_t>();
    cfg.lm.n_layers = l.at("n_layers").get<size_t>();
    cfg.lm.n_heads = l.at("n_heads").get<size_t>();
    cfg.lm.n_kv_heads = l.at("n_kv_heads").get<size_t>();
    cfg.lm.sliding_window = l.at("sliding_window").get<size_t>();
    cfg.lm.max_seq_len = l.at("max_seq_len").get<size_t>();
    return cfg;
}

std::string checkpoint_content_checksum(const VlmModel& model, const CheckpointMeta& meta) {
    uint64_t h = fnv1a64(meta.model_config.dump());
    h = fnv1a64(meta.stage, h);
    h = fnv1a64(meta.fusion_order, h);
    uint64_t seeds[2] = {meta.model_seed, meta.train_seed};
    h = fnv1a64(seeds, sizeof(seeds), h);
    uint64_t params = model.content_checksum();
    h = fnv1a64(&params, sizeof(params), h);
    return hex64(h);
}

void save_checkpoint(const std::string& path, const VlmModel& model, CheckpointMeta meta) {
    if (meta.created_at.empty()) meta.created_at = timestamp_now();
    if (meta.model_config.is_null()) meta.model_config = model_config_to_json(model.config());
    meta.content_checksum = checkpoint_content_checksum(model, meta);

    std::vector<uint8_t> out;
    out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
    put_u32(out, kCheckpointVersion);
    std::string meta_str = meta_to_json(meta).dump();
    put_u64(out, meta_str.size());
    out.insert(out.end(), meta_str.begin(), meta_str.end());

    const auto& params = model.params().all();
    put_u64(out, params.size());
    for (const auto& p : params) {
        if (p->name().size() > 0xffff) throw CheckpointError("parameter name too long");
        put_u16(out, static_cast<uint16_t>(p->name().size()));
        out.insert(out.end(), p->name().begin(), p->name().end());
        out.push_back(0);  // dtype tag: f64
        out.push_back(p->frozen() ? 1 : 0);
        put_u32(out, static_cast<uint32_t>(p->tensor().rank()));
        for (size_t d : p->tensor().shape()) put_u64(out, d);
        for (double v : p->tensor().data()) put_f64(out, v);
    }
    put_u64(out, fnv1a64(out.data(), out.size()));

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
        throw CheckpointError("'" + path + "' is not a VGLM checkpoint");
    }
    uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) {
        stored |= static_cast<uint64_t>(bytes[bytes.size() - 8 + static_cast<size_t>(i)]) << (8 * i);
    }
    uint64_t computed = fnv1a64(bytes.data(), bytes.size() - 8);
    if (stored != computed) {
        throw CheckpointError("checksum mismatch in '" + path + "': stored " + hex64(stored) +
                              ", computed " + hex64(computed));
    }

    Reader r{bytes};
    r.pos = 4;
    uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported; this build reads version " +
                              std::to_string(kCheckpointVersion));
    }
    uint64_t meta_len = r.u64("metadata length");
    std::string meta_str = r.str(meta_len, "metadata");
    LoadedCheckpoint ckpt;
    try {
        ckpt.meta = meta_from_json(json::parse(meta_str));
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("bad checkpoint metadata: ") + e.what());
    }

    uint64_t count = r.u64("tensor count");
    std::set<std::string> names;
    for (uint64_t i = 0; i < count; ++i) {
        LoadedTensor t;
        uint16_t name_len = r.u16("name length");
        t.name = r.str(name_len, "name");
        if (!names.insert(t.name).second) {
            throw CheckpointError("duplicate tensor '" + t.name + "' in checkpoint");
        }
        r.need(2, "tensor header");
        uint8_t dtype = bytes[r.pos++];
        if (dtype != 0) throw CheckpointError("tensor '" + t.name + "': unsupported dtype tag");
        t.frozen = bytes[r.pos++] != 0;
        uint32_t rank = r.u32("rank");
        size_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            t.shape.push_back(r.u64("dim"));
            numel *= t.shape.back();
        }
        t.data.resize(numel);
        for (size_t k = 0; k < numel; ++k) t.data[k] = r.f64("payload");
        ckpt.tensors.push_back(std::move(t));
    }
    if (r.pos != bytes.size() - 8) {
        throw CheckpointError("trailing bytes after tensor table in '" + path + "'");
    }
    return ckpt;
}

std::unique_ptr<VlmModel> model_from_checkpoint(const LoadedCheckpoint& ckpt) {
    ModelConfig cfg = model_config_from_json(ckpt.meta.model_config);
    auto model = std::make_unique<VlmModel>(cfg);
    std::set<std::string> used;
    for (const auto& t : ckpt.tensors) {
        Parameter* p = model->params().find(t.name);
        if (!p) throw CheckpointError("checkpoint tensor '" + t.name + "' not part of this model");
        if (p->tensor().shape() != t.shape) {
            throw CheckpointError("tensor '" + t.name + "' shape " + shape_str(t.shape) +
                                  " does not match model shape " + shape_str(p->tensor().shape()));
        }
        p->tensor().mutable_data() = t.data;
        p->set_frozen(t.frozen);
        used.insert(t.name);
    }
    for (const auto& p : model->params().all()) {
        if (!used.count(p->name())) {
            throw CheckpointError("model parameter '" + p->name() + "' missing from checkpoint");
        }
    }
    return model;
}

}  // namespace dvlm
