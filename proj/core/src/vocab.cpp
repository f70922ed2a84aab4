#include "lore/vocab.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace lore {

namespace {

const char* kNames[kVocabSize] = {
    "<pad>",   "<null>",
    "circle",  "square", "triangle", "cross",   "ring",    "bar",
    "red",     "green",  "blue",     "yellow",  "magenta", "cyan",
    "pos-tl",  "pos-tr", "pos-bl",   "pos-br",
    "bg-red",  "bg-green", "bg-blue", "bg-yellow", "bg-magenta", "bg-cyan",
};

}  // namespace

TokenRole token_role(int id) {
    if (id == kPadToken) return TokenRole::pad;
    if (id == kNullToken) return TokenRole::null;
    if (id >= kShapeBase && id < kShapeBase + kNumShapes) return TokenRole::shape;
    if (id >= kColorBase && id < kColorBase + kNumColors) return TokenRole::color;
    if (id >= kPositionBase && id < kPositionBase + kNumCells) return TokenRole::position;
    if (id >= kBackgroundBase && id < kBackgroundBase + kNumColors) return TokenRole::background;
    throw std::invalid_argument("token id out of range: " + std::to_string(id));
}

const char* token_name(int id) {
    if (id < 0 || id >= kVocabSize)
        throw std::invalid_argument("token id out of range: " + std::to_string(id));
    return kNames[id];
}

std::optional<int> token_id(const std::string& name) {
    for (int i = 0; i < kVocabSize; ++i)
        if (name == kNames[i]) return i;
    return std::nullopt;
}

std::string class_name(ObjectClass c) {
    return std::string(token_name(color_token(c.color))) + " " +
           token_name(shape_token(c.shape));
}

PromptSeq PromptSeq::padded(std::vector<int> tokens, int max_len) {
    if (static_cast<int>(tokens.size()) > max_len)
        throw std::invalid_argument("prompt too long: " + std::to_string(tokens.size()) +
                                    " tokens, max " + std::to_string(max_len));
    for (int id : tokens) token_role(id);  // range check
    tokens.resize(max_len, kPadToken);
    return PromptSeq{std::move(tokens)};
}

PromptSeq PromptSeq::null_prompt(int max_len) {
    return PromptSeq{std::vector<int>(static_cast<size_t>(max_len), kNullToken)};
}

bool PromptSeq::is_null() const {
    return std::all_of(ids.begin(), ids.end(), [](int id) { return id == kNullToken; });
}

int PromptSeq::find(int id) const {
    for (size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == id) return static_cast<int>(i);
    return -1;
}

std::string prompt_to_string(const PromptSeq& p) {
    std::string out;
    for (int id : p.ids) {
        if (id == kPadToken) continue;
        if (!out.empty()) out += " ";
        out += token_name(id);
    }
    return out.empty() ? "<null>" : out;
}

std::vector<int> parse_tokens(const std::string& text) {
    std::vector<int> out;
    std::istringstream in(text);
    std::string word;
    while (in >> word) {
        auto id = token_id(word);
        if (!id) throw std::invalid_argument("unknown token: " + word);
        out.push_back(*id);
    }
    return out;
}

}  // namespace lore
