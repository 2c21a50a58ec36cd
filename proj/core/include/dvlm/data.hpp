#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dvlm/client.hpp"
#include "dvlm/image_io.hpp"
#include "dvlm/vision.hpp"

namespace dvlm {

enum class ShapeKind : uint8_t { square, circle, triangle };
enum class ObjColor : uint8_t { red, green, blue, yellow, cyan, magenta, orange, white };

std::string shape_name(ShapeKind s);
std::string color_name(ObjColor c);
ShapeKind shape_from_name(const std::string& s);
ObjColor color_from_name(const std::string& s);

struct SceneObject {
    int row = 0;
    int col = 0;
    ShapeKind shape = ShapeKind::square;
    ObjColor color = ObjColor::red;
};

// Procedural scene: a grid of object cells over the top of a 48x48 canvas and
// a reserved bottom band where glyph_text is rasterized with a fixed 5x7
// bitmap font (alphabet A..F, at most 6 characters).
struct SceneSpec {
    int grid_rows = 2;
    int grid_cols = 3;
    std::vector<SceneObject> objects;
    std::string glyph_text;
    uint64_t seed = 0;

    void validate() const;
};

constexpr size_t kImageSize = 48;
constexpr size_t kCellSize = 16;
constexpr size_t kGlyphBandY = 40;  // glyph band occupies rows [40, 48)
constexpr size_t kGlyphCell = 8;
constexpr char kGlyphAlphabet[] = "ABCDEF";

// Deterministic integer-only rasterization; same scene -> identical bytes.
RasterImage render_raster(const SceneSpec& scene);
ImageTensor render(const SceneSpec& scene);

// Content hash over grid, objects and glyph text (the generator seed is
// excluded so visually identical scenes collide, which is what split
// disjointness needs).
uint64_t scene_hash(const SceneSpec& scene);

enum class TaskTag : uint8_t { caption, count, color, glyph_read, exist };
enum class Split : uint8_t { train, val, test };

std::string task_name(TaskTag t);
TaskTag task_from_name(const std::string& s);
std::string split_name(Split s);
Split split_from_name(const std::string& s);

struct QAExample {
    std::string id;
    SceneSpec scene;
    std::optional<std::string> image_ppm_b64;  // set when images are stored inline
    std::string instruction;
    std::string answer;
    std::string reference_short;
    TaskTag task = TaskTag::caption;
    Split split = Split::train;

    ImageTensor image() const;
};

struct TaskMix {
    double caption = 0.2;
    double count = 0.2;
    double color = 0.2;
    double glyph_read = 0.2;
    double exist = 0.2;

    void validate(bool glyphs_enabled) const;
    double weight(TaskTag t) const;
};

struct GenOptions {
    size_t max_glyph_len = 3;
    bool glyphs_enabled = true;
    bool inline_images = false;  // store base64 PPM instead of the scene spec
};

// Draws examples per the task mix with ground-truth short answers. Example i
// depends only on (seed, i). Scenes are content-distinct by construction.
// Near-duplicate instructions are expected here; dedupe is a separate op.
std::vector<QAExample> generate_dataset(size_t size, const TaskMix& mix, uint64_t seed,
                                        const GenOptions& opts = {});

// Recomputes the short-form answer from the scene (and, for parameterized
// tasks, the instruction text). Total and deterministic.
std::string ground_truth_short(const SceneSpec& scene, TaskTag task, const std::string& instruction);

// Replaces a short-form answer with a full sentence; the original short answer
// is retained in reference_short. The default expander is a template bank; an
// external client is pluggable and falls back to the template on failure.
QAExample augment_answer(QAExample example, TextCompletionClient* expander = nullptr);

// Removes exact (instruction, answer, scene-hash) duplicates, then rewrites
// duplicate instructions across different scenes by cycling a per-task
// paraphrase bank. Output has no repeated (instruction, scene-hash) pair.
std::vector<QAExample> dedupe_and_rephrase(std::vector<QAExample> dataset);

// Scene-hash-disjoint split; sizes within +-1 of the ratios.
void split_dataset(std::vector<QAExample>& dataset, double train, double val, double test,
                   uint64_t seed);

// JSONL schema: {"id","scene","instruction","answer","reference_short",
// "task_tag","split"}; "scene" is replaced by "image_ppm_b64" when images are
// stored inline.
void write_jsonl(const std::string& path, const std::vector<QAExample>& examples);
std::vector<QAExample> read_jsonl(const std::string& path);
uint64_t dataset_hash(const std::vector<QAExample>& examples);

const std::vector<std::string>& instruction_bank(TaskTag t);

}  // namespace dvlm
