#include "dvlm/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "json.hpp"

#include "dvlm/errors.hpp"
#include "dvlm/rng.hpp"

namespace dvlm {

using json = nlohmann::json;

namespace {

struct Rgb {
    uint8_t r, g, b;
};

constexpr Rgb kBackground{28, 28, 32};
constexpr Rgb kGlyphInk{210, 210, 210};
constexpr std::array<Rgb, 8> kPalette = {{
    {220, 40, 40},    // red
    {40, 180, 70},    // green
    {50, 90, 220},    // blue
    {230, 210, 60},   // yellow
    {60, 200, 210},   // cyan
    {200, 60, 190},   // magenta
    {235, 140, 50},   // orange
    {240, 240, 240},  // white
}};

constexpr std::array<const char*, 8> kColorNames = {"red",  "green",   "blue",   "yellow",
                                                    "cyan", "magenta", "orange", "white"};
constexpr std::array<const char*, 3> kShapeNames = {"square", "circle", "triangle"};

// 5x7 bitmaps for the glyph alphabet A..F, one 5-bit row value per scanline.
constexpr std::array<std::array<uint8_t, 7>, 6> kFont = {{
    {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},  // A
    {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},  // B
    {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E},  // C
    {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E},  // D
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F},  // E
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},  // F
}};

void put_pixel(RasterImage& img, size_t y, size_t x, Rgb c) {
    img.at(y, x, 0) = c.r;
    img.at(y, x, 1) = c.g;
    img.at(y, x, 2) = c.b;
}

void draw_object(RasterImage& img, const SceneObject& obj) {
    size_t y0 = static_cast<size_t>(obj.row) * kCellSize;
    size_t x0 = static_cast<size_t>(obj.col) * kCellSize;
    Rgb c = kPalette[static_cast<size_t>(obj.color)];
    switch (obj.shape) {
        case ShapeKind::square:
            for (size_t y = 3; y <= 12; ++y)
                for (size_t x = 3; x <= 12; ++x) put_pixel(img, y0 + y, x0 + x, c);
            break;
        case ShapeKind::circle:
            for (size_t y = 0; y < kCellSize; ++y) {
                for (size_t x = 0; x < kCellSize; ++x) {
                    long dy = 2 * static_cast<long>(y) - 15;
                    long dx = 2 * static_cast<long>(x) - 15;
                    if (dy * dy + dx * dx <= 11 * 11) put_pixel(img, y0 + y, x0 + x, c);
                }
            }
            break;
        case ShapeKind::triangle:
            for (size_t dy = 0; dy <= 9; ++dy) {
                size_t half = dy * 6 / 9;
                size_t lo = 7 - half;
                size_t hi = 8 + half;
                for (size_t x = lo; x <= hi; ++x) put_pixel(img, y0 + 3 + dy, x0 + x, c);
            }
            break;
    }
}

int glyph_index(char c) {
    const char* p = std::strchr(kGlyphAlphabet, c);
    if (!p || c == '\0') return -1;
    return static_cast<int>(p - kGlyphAlphabet);
}

}  // namespace

std::string shape_name(ShapeKind s) { return kShapeNames[static_cast<size_t>(s)]; }
std::string color_name(ObjColor c) { return kColorNames[static_cast<size_t>(c)]; }

ShapeKind shape_from_name(const std::string& s) {
    for (size_t i = 0; i < kShapeNames.size(); ++i) {
        if (s == kShapeNames[i]) return static_cast<ShapeKind>(i);
    }
    throw ConfigError("unknown shape '" + s + "'");
}

ObjColor color_from_name(const std::string& s) {
    for (size_t i = 0; i < kColorNames.size(); ++i) {
        if (s == kColorNames[i]) return static_cast<ObjColor>(i);
    }
    throw ConfigError("unknown color '" + s + "'");
}

void SceneSpec::validate() const {
    if (grid_rows <= 0 || grid_cols <= 0) throw ContractError("scene: grid must be positive");
    if (static_cast<size_t>(grid_rows) * kCellSize > kGlyphBandY ||
        static_cast<size_t>(grid_cols) * kCellSize > kImageSize) {
        throw ContractError("scene: grid does not fit the canvas");
    }
    std::set<std::pair<int, int>> cells;
    for (const auto& o : objects) {
        if (o.row < 0 || o.row >= grid_rows || o.col < 0 || o.col >= grid_cols) {
            throw ContractError("scene: object cell out of grid");
        }
        if (!cells.insert({o.row, o.col}).second) {
            throw ContractError("scene: more than one object in cell (" + std::to_string(o.row) + "," +
                                std::to_string(o.col) + ")");
        }
    }
    if (glyph_text.size() > 6) throw ContractError("scene: glyph_text longer than 6");
    for (char c : glyph_text) {
        if (glyph_index(c) < 0) {
            throw ContractError(std::string("scene: glyph '") + c + "' outside alphabet " + kGlyphAlphabet);
        }
    }
}

RasterImage render_raster(const SceneSpec& scene) {
    scene.validate();
    RasterImage img;
    img.width = kImageSize;
    img.height = kImageSize;
    img.rgb.assign(kImageSize * kImageSize * 3, 0);
    for (size_t y = 0; y < kImageSize; ++y)
        for (size_t x = 0; x < kImageSize; ++x) put_pixel(img, y, x, kBackground);

    for (const auto& obj : scene.objects) draw_object(img, obj);

    for (size_t k = 0; k < scene.glyph_text.size(); ++k) {
        int gi = glyph_index(scene.glyph_text[k]);
        for (size_t row = 0; row < 7; ++row) {
            uint8_t bits = kFont[static_cast<size_t>(gi)][row];
            for (size_t bit = 0; bit < 5; ++bit) {
                if ((bits >> (4 - bit)) & 1) {
                    put_pixel(img, kGlyphBandY + row, k * kGlyphCell + 1 + bit, kGlyphInk);
                }
            }
        }
    }

    // Scene-identity nonce: two near-background pixels in the otherwise unused
    // margin strip make every generated scene content-distinct without
    // touching any task-relevant region.
    uint64_t nonce = scene.seed;
    size_t slots = kImageSize * (kGlyphBandY - static_cast<size_t>(scene.grid_rows) * kCellSize);
    if (slots > 0) {
        size_t margin_y0 = static_cast<size_t>(scene.grid_rows) * kCellSize;
        size_t p0 = nonce % slots;
        size_t p1 = (nonce / slots) % slots;
        put_pixel(img, margin_y0 + p0 / kImageSize, p0 % kImageSize, Rgb{40, 40, 44});
        put_pixel(img, margin_y0 + p1 / kImageSize, p1 % kImageSize, Rgb{48, 48, 52});
    }
    return img;
}

ImageTensor render(const SceneSpec& scene) { return to_image_tensor(render_raster(scene)); }

uint64_t scene_hash(const SceneSpec& scene) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_int = [&h](long v) {
        int64_t x = v;
        h = fnv1a64(&x, sizeof(x), h);
    };
    mix_int(scene.grid_rows);
    mix_int(scene.grid_cols);
    for (const auto& o : scene.objects) {
        mix_int(o.row);
        mix_int(o.col);
        mix_int(static_cast<long>(o.shape));
        mix_int(static_cast<long>(o.color));
    }
    h = fnv1a64(scene.glyph_text, h);
    mix_int(static_cast<long>(scene.seed));
    return h;
}

std::string task_name(TaskTag t) {
    switch (t) {
        case TaskTag::caption: return "caption";
        case TaskTag::count: return "count";
        case TaskTag::color: return "color";
        case TaskTag::glyph_read: return "glyph_read";
        case TaskTag::exist: return "exist";
    }
    return "caption";
}

TaskTag task_from_name(const std::string& s) {
    for (TaskTag t : {TaskTag::caption, TaskTag::count, TaskTag::color, TaskTag::glyph_read, TaskTag::exist}) {
        if (s == task_name(t)) return t;
    }
    throw ConfigError("unknown task tag '" + s + "'");
}

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split split_from_name(const std::string& s) {
    for (Split sp : {Split::train, Split::val, Split::test}) {
        if (s == split_name(sp)) return sp;
    }
    throw ConfigError("unknown split '" + s + "'");
}

ImageTensor QAExample::image() const {
    if (image_ppm_b64) {
        return to_image_tensor(decode_ppm(base64_decode(*image_ppm_b64)));
    }
    return render(scene);
}

void TaskMix::validate(bool glyphs_enabled) const {
    for (double w : {caption, count, color, glyph_read, exist}) {
        if (w < 0.0) throw ConfigError("task mix: negative weight");
    }
    double s = caption + count + color + glyph_read + exist;
    if (std::abs(s - 1.0) > 1e-9) {
        throw ConfigError("task mix: weights sum to " + std::to_string(s) + ", expected 1");
    }
    if (!glyphs_enabled && glyph_read > 0.0) {
        throw ConfigError("task mix: glyph_read weight set but glyphs are disabled");
    }
}

double TaskMix::weight(TaskTag t) const {
    switch (t) {
        case TaskTag::caption: return caption;
        case TaskTag::count: return count;
        case TaskTag::color: return color;
        case TaskTag::glyph_read: return glyph_read;
        case TaskTag::exist: return exist;
    }
    return 0.0;
}

const std::vector<std::string>& instruction_bank(TaskTag t) {
    static const std::vector<std::string> caption = {
        "Describe the image.",
        "What does the image show?",
        "Give a short description of the image.",
        "Summarize the picture.",
        "Tell me what is in the image.",
    };
    static const std::vector<std::string> count = {
        "How many objects are in the image?",
        "Count the objects in the image.",
        "What is the number of objects shown?",
        "How many items does the picture contain?",
        "Give the object count.",
    };
    static const std::vector<std::string> color = {
        "What color is the {shape}?",
        "Identify the {shape}'s color.",
        "Which color does the {shape} have?",
        "Name the color of the {shape}.",
        "Tell me the {shape}'s color.",
    };
    static const std::vector<std::string> glyph = {
        "What does the text in the image say?",
        "Read the text in the image.",
        "What is written in the image?",
        "Transcribe the text shown in the image.",
        "Which letters appear in the image?",
    };
    static const std::vector<std::string> exist = {
        "Is there a {color} {shape} in the image?",
        "Does the image contain a {color} {shape}?",
        "Can you see a {color} {shape} in the image?",
        "Is a {color} {shape} present in the image?",
        "Does a {color} {shape} appear in the picture?",
    };
    switch (t) {
        case TaskTag::caption: return caption;
        case TaskTag::count: return count;
        case TaskTag::color: return color;
        case TaskTag::glyph_read: return glyph;
        case TaskTag::exist: return exist;
    }
    return caption;
}

namespace {

std::string substitute(std::string tmpl, const std::string& key, const std::string& value) {
    std::string token = "{" + key + "}";
    size_t pos;
    while ((pos = tmpl.find(token)) != std::string::npos) {
        tmpl.replace(pos, token.size(), value);
    }
    return tmpl;
}

std::optional<ObjColor> find_color_word(const std::string& text) {
    for (size_t i = 0; i < kColorNames.size(); ++i) {
        if (text.find(kColorNames[i]) != std::string::npos) return static_cast<ObjColor>(i);
    }
    return std::nullopt;
}

std::optional<ShapeKind> find_shape_word(const std::string& text) {
    for (size_t i = 0; i < kShapeNames.size(); ++i) {
        if (text.find(kShapeNames[i]) != std::string::npos) return static_cast<ShapeKind>(i);
    }
    return std::nullopt;
}

std::string render_instruction(TaskTag task, size_t variant, const SceneSpec& scene,
                               const std::string& old_instruction) {
    const auto& bank = instruction_bank(task);
    std::string tmpl = bank[variant % bank.size()];
    if (task == TaskTag::color) {
        std::optional<ShapeKind> shape = find_shape_word(old_instruction);
        if (!shape && scene.objects.size() == 1) shape = scene.objects[0].shape;
        if (!shape) throw ContractError("color instruction without a shape reference");
        tmpl = substitute(tmpl, "shape", shape_name(*shape));
    } else if (task == TaskTag::exist) {
        auto color = find_color_word(old_instruction);
        auto shape = find_shape_word(old_instruction);
        if (!color || !shape) throw ContractError("exist instruction without a color/shape pair");
        tmpl = substitute(tmpl, "color", color_name(*color));
        tmpl = substitute(tmpl, "shape", shape_name(*shape));
    }
    return tmpl;
}

std::vector<std::pair<int, int>> sample_distinct_cells(Rng& rng, const SceneSpec& scene, size_t n) {
    std::vector<std::pair<int, int>> cells;
    for (int r = 0; r < scene.grid_rows; ++r)
        for (int c = 0; c < scene.grid_cols; ++c) cells.push_back({r, c});
    rng.shuffle(cells);
    cells.resize(n);
    return cells;
}

std::string random_glyphs(Rng& rng, size_t max_len) {
    size_t len = 1 + rng.next_below(max_len);
    std::string s;
    for (size_t i = 0; i < len; ++i) s.push_back(kGlyphAlphabet[rng.next_below(6)]);
    return s;
}

}  // namespace

std::string ground_truth_short(const SceneSpec& scene, TaskTag task, const std::string& instruction) {
    switch (task) {
        case TaskTag::caption:
            if (scene.objects.empty() && !scene.glyph_text.empty()) return "text " + scene.glyph_text;
            if (scene.objects.size() == 1) {
                return color_name(scene.objects[0].color) + " " + shape_name(scene.objects[0].shape);
            }
            return std::to_string(scene.objects.size()) + " objects";
        case TaskTag::count:
            return std::to_string(scene.objects.size());
        case TaskTag::color: {
            std::optional<ShapeKind> shape = find_shape_word(instruction);
            if (!shape && scene.objects.size() == 1) shape = scene.objects[0].shape;
            if (shape) {
                for (const auto& o : scene.objects) {
                    if (o.shape == *shape) return color_name(o.color);
                }
            }
            if (!scene.objects.empty()) return color_name(scene.objects[0].color);
            throw ContractError("color task on a scene with no objects");
        }
        case TaskTag::glyph_read:
            return scene.glyph_text;
        case TaskTag::exist: {
            auto color = find_color_word(instruction);
            auto shape = find_shape_word(instruction);
            if (!color || !shape) throw ContractError("exist instruction without a color/shape pair");
            for (const auto& o : scene.objects) {
                if (o.color == *color && o.shape == *shape) return "yes";
            }
            return "no";
        }
    }
    throw ContractError("unknown task tag");
}

std::vector<QAExample> generate_dataset(size_t size, const TaskMix& mix, uint64_t seed,
                                        const GenOptions& opts) {
    if (size == 0) throw ConfigError("generate_dataset: size must be positive");
    mix.validate(opts.glyphs_enabled);

    std::vector<QAExample> out;
    out.reserve(size);
    const TaskTag order[] = {TaskTag::caption, TaskTag::count, TaskTag::color, TaskTag::glyph_read,
                             TaskTag::exist};
    for (size_t i = 0; i < size; ++i) {
        Rng rng(mix_seed(seed, i));
        double u = rng.next_double();
        TaskTag task = TaskTag::exist;
        double acc = 0.0;
        for (TaskTag t : order) {
            acc += mix.weight(t);
            if (u < acc) {
                task = t;
                break;
            }
        }

        QAExample ex;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "ex%06llu", static_cast<unsigned long long>(i));
        ex.id = idbuf;
        ex.task = task;
        ex.scene.seed = i;

        switch (task) {
            case TaskTag::caption: {
                bool glyph_caption = opts.glyphs_enabled && rng.next_double() < 0.3;
                if (glyph_caption) {
                    ex.scene.glyph_text = random_glyphs(rng, opts.max_glyph_len);
                } else {
                    auto cells = sample_distinct_cells(rng, ex.scene, 1);
                    ex.scene.objects.push_back({cells[0].first, cells[0].second,
                                                static_cast<ShapeKind>(rng.next_below(3)),
                                                static_cast<ObjColor>(rng.next_below(8))});
                }
                break;
            }
            case TaskTag::count: {
                size_t n = 1 + rng.next_below(6);
                auto cells = sample_distinct_cells(rng, ex.scene, n);
                for (auto [r, c] : cells) {
                    ex.scene.objects.push_back({r, c, static_cast<ShapeKind>(rng.next_below(3)),
                                                static_cast<ObjColor>(rng.next_below(8))});
                }
                break;
            }
            case TaskTag::color: {
                auto cells = sample_distinct_cells(rng, ex.scene, 1);
                ex.scene.objects.push_back({cells[0].first, cells[0].second,
                                            static_cast<ShapeKind>(rng.next_below(3)),
                                            static_cast<ObjColor>(rng.next_below(8))});
                break;
            }
            case TaskTag::glyph_read: {
                ex.scene.glyph_text = random_glyphs(rng, opts.max_glyph_len);
                break;
            }
            case TaskTag::exist: {
                size_t n = 1 + rng.next_below(3);
                auto cells = sample_distinct_cells(rng, ex.scene, n);
                for (auto [r, c] : cells) {
                    ex.scene.objects.push_back({r, c, static_cast<ShapeKind>(rng.next_below(3)),
                                                static_cast<ObjColor>(rng.next_below(8))});
                }
                break;
            }
        }

        std::string instr = instruction_bank(task)[0];
        if (task == TaskTag::color) {
            instr = substitute(instr, "shape", shape_name(ex.scene.objects[0].shape));
        } else if (task == TaskTag::exist) {
            ObjColor qc;
            ShapeKind qs;
            if (rng.next_double() < 0.5) {
                const auto& o = ex.scene.objects[rng.next_below(ex.scene.objects.size())];
                qc = o.color;
                qs = o.shape;
            } else {
                // Rejection-sample an absent (color, shape) pair.
                while (true) {
                    qc = static_cast<ObjColor>(rng.next_below(8));
                    qs = static_cast<ShapeKind>(rng.next_below(3));
                    bool present = false;
                    for (const auto& o : ex.scene.objects) {
                        present = present || (o.color == qc && o.shape == qs);
                    }
                    if (!present) break;
                }
            }
            instr = substitute(instr, "color", color_name(qc));
            instr = substitute(instr, "shape", shape_name(qs));
        }
        ex.instruction = instr;
        ex.reference_short = ground_truth_short(ex.scene, task, instr);
        ex.answer = ex.reference_short;
        if (opts.inline_images) {
            ex.image_ppm_b64 = base64_encode(encode_ppm(render_raster(ex.scene)));
        }
        out.push_back(std::move(ex));
    }
    return out;
}

QAExample augment_answer(QAExample example, TextCompletionClient* expander) {
    if (example.answer != example.reference_short) {
        return example;  // already expanded
    }
    const std::string& s = example.reference_short;
    std::string expanded;
    if (expander) {
        try {
            expanded = expander->complete("Rewrite the short answer as one full sentence.\nQuestion: " +
                                          example.instruction + "\nShort answer: " + s + "\nSentence:");
        } catch (const Error& e) {
            std::cerr << "warning: answer expander failed (" << e.what() << "), using template\n";
            expanded.clear();
        }
    }
    if (expanded.empty()) {
        switch (example.task) {
            case TaskTag::caption:
                expanded = (s.rfind("text ", 0) == 0) ? "The image shows the " + s + "."
                                                      : "The image shows a " + s + ".";
                break;
            case TaskTag::count:
                expanded = (s == "1") ? "There is 1 object in the image."
                                      : "There are " + s + " objects in the image.";
                break;
            case TaskTag::color:
                expanded = "The object shown in the image is " + s + ".";
                break;
            case TaskTag::glyph_read:
                expanded = "The text reads " + s + ".";
                break;
            case TaskTag::exist:
                expanded = (s == "yes") ? "Yes, there is." : "No, there is not.";
                break;
        }
    }
    example.answer = expanded;
    return example;
}

std::vector<QAExample> dedupe_and_rephrase(std::vector<QAExample> dataset) {
    // Pass 1: drop exact (instruction, answer, scene-hash) duplicates.
    std::set<std::tuple<std::string, std::string, uint64_t>> seen_triples;
    std::vector<QAExample> kept;
    kept.reserve(dataset.size());
    for (auto& ex : dataset) {
        auto key = std::make_tuple(ex.instruction, ex.answer, scene_hash(ex.scene));
        if (seen_triples.insert(key).second) kept.push_back(std::move(ex));
    }

    // Pass 2: paraphrase repeated instructions across different scenes by
    // cycling the per-task bank.
    std::map<std::string, size_t> instruction_uses;
    std::set<std::pair<std::string, uint64_t>> seen_pairs;
    for (auto& ex : kept) {
        size_t uses = instruction_uses[ex.instruction]++;
        if (uses > 0) {
            std::string rewritten =
                render_instruction(ex.task, uses, ex.scene, ex.instruction);
            size_t bump = uses;
            while (seen_pairs.count({rewritten, scene_hash(ex.scene)})) {
                ++bump;
                rewritten = render_instruction(ex.task, bump, ex.scene, ex.instruction);
                if (bump > uses + instruction_bank(ex.task).size()) {
                    rewritten = "Please answer: " + rewritten;
                    break;
                }
            }
            ex.instruction = rewritten;
        }
        seen_pairs.insert({ex.instruction, scene_hash(ex.scene)});
    }

    // Postcondition scan: no (instruction, scene-hash) pair repeats.
    std::set<std::pair<std::string, uint64_t>> check;
    for (const auto& ex : kept) {
        if (!check.insert({ex.instruction, scene_hash(ex.scene)}).second) {
            throw ContractError("dedupe: residual duplicate (instruction, scene) pair: '" +
                                ex.instruction + "'");
        }
    }
    return kept;
}

void split_dataset(std::vector<QAExample>& dataset, double train, double val, double test,
                   uint64_t seed) {
    if (dataset.size() < 3) {
        throw ContractError("split_dataset: need at least 3 examples, got " +
                            std::to_string(dataset.size()));
    }
    if (train <= 0.0 || val <= 0.0 || test <= 0.0 || std::abs(train + val + test - 1.0) > 1e-9) {
        throw ConfigError("split_dataset: ratios must be positive and sum to 1");
    }

    // Group example indices by scene hash so a scene never crosses splits.
    std::map<uint64_t, std::vector<size_t>> groups;
    for (size_t i = 0; i < dataset.size(); ++i) groups[scene_hash(dataset[i].scene)].push_back(i);
    std::vector<uint64_t> keys;
    keys.reserve(groups.size());
    for (const auto& [k, v] : groups) keys.push_back(k);
    Rng rng(mix_seed(seed, 0x73706c69ULL));
    rng.shuffle(keys);

    size_t n = dataset.size();
    std::array<size_t, 3> target{};
    target[0] = static_cast<size_t>(std::floor(train * static_cast<double>(n)));
    target[1] = static_cast<size_t>(std::floor(val * static_cast<double>(n)));
    target[2] = static_cast<size_t>(std::floor(test * static_cast<double>(n)));
    std::array<double, 3> frac = {train * n - target[0], val * n - target[1], test * n - target[2]};
    size_t leftover = n - (target[0] + target[1] + target[2]);
    while (leftover > 0) {
        size_t best = 0;
        for (size_t s = 1; s < 3; ++s) {
            if (frac[s] > frac[best]) best = s;
        }
        target[best] += 1;
        frac[best] = -1.0;
        --leftover;
    }

    std::array<size_t, 3> filled{};
    for (uint64_t key : keys) {
        const auto& idxs = groups[key];
        // Assign the group to the split with the largest remaining deficit.
        size_t best = 0;
        double best_deficit = -1e18;
        for (size_t s = 0; s < 3; ++s) {
            double deficit = static_cast<double>(target[s]) - static_cast<double>(filled[s]);
            if (deficit > best_deficit) {
                best_deficit = deficit;
                best = s;
            }
        }
        for (size_t i : idxs) dataset[i].split = static_cast<Split>(best);
        filled[best] += idxs.size();
    }
}

namespace {

json scene_to_json(const SceneSpec& s) {
    json objs = json::array();
    for (const auto& o : s.objects) {
        objs.push_back({{"cell", {o.row, o.col}},
                        {"shape", shape_name(o.shape)},
                        {"color", color_name(o.color)}});
    }
    return {{"grid", {s.grid_rows, s.grid_cols}},
            {"objects", objs},
            {"glyph_text", s.glyph_text},
            {"seed", s.seed}};
}

SceneSpec scene_from_json(const json& j) {
    SceneSpec s;
    s.grid_rows = j.at("grid")[0].get<int>();
    s.grid_cols = j.at("grid")[1].get<int>();
    for (const auto& o : j.at("objects")) {
        SceneObject obj;
        obj.row = o.at("cell")[0].get<int>();
        obj.col = o.at("cell")[1].get<int>();
        obj.shape = shape_from_name(o.at("shape").get<std::string>());
        obj.color = color_from_name(o.at("color").get<std::string>());
        s.objects.push_back(obj);
    }
    s.glyph_text = j.at("glyph_text").get<std::string>();
    s.seed = j.at("seed").get<uint64_t>();
    return s;
}

json example_to_json(const QAExample& ex) {
    json j = {{"id", ex.id},
              {"instruction", ex.instruction},
              {"answer", ex.answer},
              {"reference_short", ex.reference_short},
              {"task_tag", task_name(ex.task)},
              {"split", split_name(ex.split)}};
    if (ex.image_ppm_b64) {
        j["image_ppm_b64"] = *ex.image_ppm_b64;
    } else {
        j["scene"] = scene_to_json(ex.scene);
    }
    return j;
}

QAExample example_from_json(const json& j) {
    QAExample ex;
    ex.id = j.at("id").get<std::string>();
    ex.instruction = j.at("instruction").get<std::string>();
    ex.answer = j.at("answer").get<std::string>();
    ex.reference_short = j.at("reference_short").get<std::string>();
    ex.task = task_from_name(j.at("task_tag").get<std::string>());
    ex.split = split_from_name(j.at("split").get<std::string>());
    if (j.contains("image_ppm_b64")) {
        ex.image_ppm_b64 = j.at("image_ppm_b64").get<std::string>();
    } else {
        ex.scene = scene_from_json(j.at("scene"));
    }
    return ex;
}

}  // namespace

void write_jsonl(const std::string& path, const std::vector<QAExample>& examples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    for (const auto& ex : examples) {
        out << example_to_json(ex).dump() << "\n";
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<QAExample> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<QAExample> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(example_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw IoError("bad JSONL at " + path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

uint64_t dataset_hash(const std::vector<QAExample>& examples) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& ex : examples) {
        h = fnv1a64(example_to_json(ex).dump(), h);
        h = fnv1a64("\n", h);
    }
    return h;
}

}  // namespace dvlm
