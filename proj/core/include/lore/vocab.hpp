#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace lore {

// Token vocabulary.
//
//   0        PAD
//   1        NULL (unconditional slot)
//   2..7     shapes:    circle square triangle cross ring bar
//   8..13    colors:    red green blue yellow magenta cyan
//   14..17   positions: pos-tl pos-tr pos-bl pos-br (2x2 cell grid, row-major)
//   18..23   background colors: bg-red .. bg-cyan
//
// Prompt grammar: one clause [color shape position] per object in cell
// order, followed by the background tokens (one bg token for a solid
// background, two for a 2-tone checker), padded with PAD. An empty scene is
// just its background token(s).
enum class TokenRole : uint8_t { pad, null, shape, color, position, background };

inline constexpr int kPadToken = 0;
inline constexpr int kNullToken = 1;
inline constexpr int kShapeBase = 2;
inline constexpr int kColorBase = 8;
inline constexpr int kPositionBase = 14;
inline constexpr int kBackgroundBase = 18;
inline constexpr int kVocabSize = 24;

inline constexpr int kNumShapes = 6;
inline constexpr int kNumColors = 6;
inline constexpr int kNumCells = 4;
inline constexpr int kNumClasses = kNumShapes * kNumColors;

enum class ShapeKind : uint8_t { circle, square, triangle, cross, ring, bar };
enum class ColorKind : uint8_t { red, green, blue, yellow, magenta, cyan };

// (shape, color) pair; the unit every benchmark task replaces.
struct ObjectClass {
    ShapeKind shape = ShapeKind::circle;
    ColorKind color = ColorKind::red;

    bool operator==(const ObjectClass&) const = default;
};

inline int class_index(ObjectClass c) {
    return static_cast<int>(c.shape) * kNumColors + static_cast<int>(c.color);
}
inline ObjectClass class_from_index(int idx) {
    return ObjectClass{static_cast<ShapeKind>(idx / kNumColors),
                       static_cast<ColorKind>(idx % kNumColors)};
}

inline int shape_token(ShapeKind s) { return kShapeBase + static_cast<int>(s); }
inline int color_token(ColorKind c) { return kColorBase + static_cast<int>(c); }
inline int position_token(int cell) { return kPositionBase + cell; }
inline int background_token(ColorKind c) { return kBackgroundBase + static_cast<int>(c); }

TokenRole token_role(int id);
const char* token_name(int id);
std::optional<int> token_id(const std::string& name);
std::string class_name(ObjectClass c);

// Fixed-length token sequence fed to the model. Always padded to its
// capacity; a NULL prompt is all-NULL ids.
struct PromptSeq {
    std::vector<int> ids;

    static PromptSeq padded(std::vector<int> tokens, int max_len);
    static PromptSeq null_prompt(int max_len);

    int length() const { return static_cast<int>(ids.size()); }
    TokenRole role(int i) const { return token_role(ids.at(i)); }
    bool is_null() const;
    // index of the first occurrence of token `id`, or -1
    int find(int id) const;

    bool operator==(const PromptSeq&) const = default;
};

// Tokens for one rendered scene: object clauses in cell order, then
// background tokens.
struct SceneTokens {
    std::vector<int> tokens;
};

std::string prompt_to_string(const PromptSeq& p);
// Parses a whitespace-separated list of token names ("red circle pos-tl bg-blue").
std::vector<int> parse_tokens(const std::string& text);

}  // namespace lore
