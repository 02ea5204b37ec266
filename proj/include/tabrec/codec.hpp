#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <json.hpp>

#include "tabrec/table.hpp"

namespace tabrec {

enum class Task { structure, bbox, content };

inline const char* task_name(Task t) {
    switch (t) {
        case Task::structure: return "structure";
        case Task::bbox: return "bbox";
        case Task::content: return "content";
    }
    return "?";
}

// Maximum decoded sequence lengths per task.
inline constexpr int kMaxLenStructure = 512;
inline constexpr int kMaxLenBbox = 1024;
inline constexpr int kMaxLenContent = 200;

inline int task_max_len(Task t) {
    switch (t) {
        case Task::structure: return kMaxLenStructure;
        case Task::bbox: return kMaxLenBbox;
        case Task::content: return kMaxLenContent;
    }
    return 0;
}

// Bijective token <-> id table with the four reserved specials at the front.
class Vocab {
   public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kNumSpecials = 4;

    Vocab() {
        for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(s);
    }

    int add(const std::string& token) {
        auto [it, inserted] = ids_.emplace(token, static_cast<int>(tokens_.size()));
        if (inserted) tokens_.push_back(token);
        return it->second;
    }

    int size() const { return static_cast<int>(tokens_.size()); }

    bool contains(const std::string& token) const { return ids_.count(token) > 0; }

    // Unknown tokens map to UNK.
    int encode(const std::string& token) const {
        auto it = ids_.find(token);
        return it == ids_.end() ? kUnk : it->second;
    }

    const std::string& decode(int id) const {
        if (id < 0 || id >= size()) throw std::out_of_range("Vocab::decode: id " + std::to_string(id));
        return tokens_[static_cast<size_t>(id)];
    }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
        return j;
    }

    static Vocab from_json(const nlohmann::json& j) {
        std::map<int, std::string> by_id;
        for (auto it = j.begin(); it != j.end(); ++it) by_id[it.value().get<int>()] = it.key();
        Vocab v;
        for (const auto& [id, token] : by_id)
            if (id >= kNumSpecials) v.add(token);
        return v;
    }

   private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

struct TokenSeq {
    std::vector<int> ids;
    Task task = Task::structure;
};

// The structure vocabulary: 4 specials, 11 tags (5 cell tokens, 6 section
// tokens) and 18 + 18 span attribute tokens covering n in [2, 19].
inline Vocab build_structure_vocab() {
    Vocab v;
    for (const std::string& t : {tok::thead_open, tok::thead_close, tok::tbody_open, tok::tbody_close, tok::tr_open,
                                 tok::tr_close, tok::cell_empty, tok::cell_full, tok::cell_open, tok::close_empty,
                                 tok::close_full})
        v.add(t);
    for (int n = tok::kSpanMin; n <= tok::kSpanMax; ++n) v.add(tok::rowspan(n));
    for (int n = tok::kSpanMin; n <= tok::kSpanMax; ++n) v.add(tok::colspan(n));
    return v;
}

// Coordinate vocabulary shared by both image axes: "0" .. "image_size".
inline Vocab build_coord_vocab(int image_size) {
    Vocab v;
    for (int i = 0; i <= image_size; ++i) v.add(std::to_string(i));
    return v;
}

// Character-granularity content vocabulary over the observed corpus alphabet,
// ordered by codepoint for stability.
inline Vocab build_content_vocab(const std::vector<std::string>& corpus) {
    std::set<char> alphabet;
    for (const auto& s : corpus)
        for (char c : s) alphabet.insert(c);
    Vocab v;
    for (char c : alphabet) v.add(std::string(1, c));
    return v;
}

// ---------------------------------------------------------------------------
// Structure grammar validation
// ---------------------------------------------------------------------------
struct GrammarError {
    size_t position = 0;
    std::string message;
};

inline std::vector<GrammarError> validate_structure(const std::vector<std::string>& tokens) {
    std::vector<GrammarError> errors;
    auto err = [&](size_t pos, std::string msg) { errors.push_back({pos, std::move(msg)}); };

    std::vector<std::string> sections;  // open <thead>/<tbody>
    bool in_tr = false;
    bool in_cell = false;  // between "<td" and its closer
    bool seen_rowspan = false, seen_colspan = false;

    for (size_t i = 0; i < tokens.size(); ++i) {
        const std::string& t = tokens[i];
        const bool is_span_attr =
            tok::span_value(t, "rowspan").has_value() || tok::span_value(t, "colspan").has_value();

        if (in_cell && !is_span_attr && !tok::is_cell_closer(t)) {
            err(i, "open '<td' must be followed by span attributes and a closing token, got '" + t + "'");
            in_cell = false;
        }

        if (t == tok::thead_open || t == tok::tbody_open) {
            if (in_tr) err(i, "'" + t + "' inside a row");
            sections.push_back(t);
        } else if (t == tok::thead_close || t == tok::tbody_close) {
            const std::string expect = t == tok::thead_close ? tok::thead_open : tok::tbody_open;
            if (in_tr) err(i, "'" + t + "' closes a section while a row is open");
            if (sections.empty() || sections.back() != expect)
                err(i, "unmatched '" + t + "'");
            else
                sections.pop_back();
        } else if (t == tok::tr_open) {
            if (sections.empty()) err(i, "'<tr>' outside <thead>/<tbody>");
            if (in_tr) err(i, "nested '<tr>'");
            in_tr = true;
        } else if (t == tok::tr_close) {
            if (!in_tr) err(i, "unmatched '</tr>'");
            in_tr = false;
        } else if (t == tok::cell_empty || t == tok::cell_full) {
            if (!in_tr) err(i, "cell token outside a row");
        } else if (t == tok::cell_open) {
            if (!in_tr) err(i, "'<td' outside a row");
            in_cell = true;
            seen_rowspan = seen_colspan = false;
        } else if (is_span_attr) {
            if (!in_cell) {
                err(i, "span attribute '" + t + "' outside an open cell");
            } else {
                const bool is_rowspan = tok::span_value(t, "rowspan").has_value();
                if (is_rowspan && seen_rowspan) err(i, "duplicate rowspan attribute");
                if (!is_rowspan && seen_colspan) err(i, "duplicate colspan attribute");
                (is_rowspan ? seen_rowspan : seen_colspan) = true;
            }
        } else if (tok::is_cell_closer(t)) {
            if (!in_cell)
                err(i, "'" + t + "' without an open '<td'");
            else
                in_cell = false;
        } else {
            err(i, "unknown token '" + t + "'");
        }
    }
    if (in_cell) err(tokens.size(), "unclosed '<td'");
    if (in_tr) err(tokens.size(), "unclosed '<tr>'");
    for (const auto& s : sections) err(tokens.size(), "unclosed '" + s + "'");
    return errors;
}

// ---------------------------------------------------------------------------
// Bbox quantization and (de)serialization
// ---------------------------------------------------------------------------
struct QuantizedBox {
    int x_min = 0, y_min = 0, x_max = 0, y_max = 0;
    bool clamped = false;  // any coordinate fell outside [0, image_size]

    bool degenerate() const { return x_min >= x_max || y_min >= y_max; }
};

// Round half up, then clamp into [0, image_size]. NaN coordinates are
// rejected; the clamp flag feeds the linter.
inline QuantizedBox quantize_bbox(const BBox& b, int image_size) {
    if (image_size <= 0) throw std::invalid_argument("quantize_bbox: image_size must be positive");
    for (float v : {b.x_min, b.y_min, b.x_max, b.y_max})
        if (std::isnan(v)) throw std::invalid_argument("quantize_bbox: NaN coordinate");
    QuantizedBox q;
    auto quant = [&](float v) {
        const int r = static_cast<int>(std::floor(v + 0.5f));
        const int c = std::clamp(r, 0, image_size);
        if (c != r) q.clamped = true;
        return c;
    };
    q.x_min = quant(b.x_min);
    q.y_min = quant(b.y_min);
    q.x_max = quant(b.x_max);
    q.y_max = quant(b.y_max);
    return q;
}

// Reading order: cluster boxes into row bands by y-center (tolerance: half
// the median box height), then left to right within a band.
inline std::vector<size_t> reading_order(const std::vector<BBox>& boxes) {
    std::vector<size_t> order(boxes.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (boxes.size() < 2) return order;

    std::vector<float> heights;
    heights.reserve(boxes.size());
    for (const auto& b : boxes) heights.push_back(std::abs(b.height()));
    std::sort(heights.begin(), heights.end());
    const float tol = heights[heights.size() / 2] * 0.5f;

    auto yc = [&](size_t i) { return (boxes[i].y_min + boxes[i].y_max) * 0.5f; };
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return yc(a) < yc(b); });

    std::vector<size_t> out;
    size_t band_start = 0;
    for (size_t i = 1; i <= order.size(); ++i) {
        if (i == order.size() || yc(order[i]) > yc(order[band_start]) + tol) {
            std::stable_sort(order.begin() + static_cast<long>(band_start), order.begin() + static_cast<long>(i),
                             [&](size_t a, size_t b) { return boxes[a].x_min < boxes[b].x_min; });
            band_start = i;
        }
    }
    return order;
}

struct SerializeError {
    size_t box_index = 0;
    std::string message;
};

// Quantizes, sorts into reading order and flattens quadruples into a token
// sequence over the coordinate vocabulary. Token id = specials + coordinate.
inline std::variant<TokenSeq, SerializeError> serialize_bboxes(const std::vector<BBox>& boxes, int image_size) {
    const size_t needed = boxes.size() * 4 + 2;
    if (needed > static_cast<size_t>(kMaxLenBbox))
        return SerializeError{(static_cast<size_t>(kMaxLenBbox) - 2) / 4,
                              "bbox sequence of " + std::to_string(needed) + " tokens exceeds " +
                                  std::to_string(kMaxLenBbox) + "; box " +
                                  std::to_string((static_cast<size_t>(kMaxLenBbox) - 2) / 4) + " overflows"};
    TokenSeq seq;
    seq.task = Task::bbox;
    seq.ids.push_back(Vocab::kBos);
    for (size_t i : reading_order(boxes)) {
        const QuantizedBox q = quantize_bbox(boxes[i], image_size);
        for (int v : {q.x_min, q.y_min, q.x_max, q.y_max}) seq.ids.push_back(Vocab::kNumSpecials + v);
    }
    seq.ids.push_back(Vocab::kEos);
    return seq;
}

struct DeserializedBoxes {
    std::vector<BBox> boxes;
    std::vector<bool> degenerate;  // per box
    int remainder = 0;             // trailing tokens that did not fill a quadruple
};

// Strips specials, groups coordinates by four and rebuilds boxes. Degenerate
// boxes are kept but flagged; a ragged tail is truncated and reported.
inline DeserializedBoxes deserialize_bboxes(const TokenSeq& seq, int image_size) {
    std::vector<int> coords;
    for (int id : seq.ids) {
        if (id < Vocab::kNumSpecials) continue;
        const int v = id - Vocab::kNumSpecials;
        if (v > image_size) continue;  // not a coordinate token
        coords.push_back(v);
    }
    DeserializedBoxes out;
    out.remainder = static_cast<int>(coords.size() % 4);
    for (size_t i = 0; i + 3 < coords.size(); i += 4) {
        BBox b{static_cast<float>(coords[i]), static_cast<float>(coords[i + 1]), static_cast<float>(coords[i + 2]),
               static_cast<float>(coords[i + 3])};
        out.boxes.push_back(b);
        out.degenerate.push_back(!b.valid());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Content codec: one token per character.
// ---------------------------------------------------------------------------
inline TokenSeq encode_content(const Vocab& vocab, const std::string& text) {
    TokenSeq seq;
    seq.task = Task::content;
    seq.ids.push_back(Vocab::kBos);
    for (char c : text) seq.ids.push_back(vocab.encode(std::string(1, c)));
    seq.ids.push_back(Vocab::kEos);
    return seq;
}

inline std::string decode_content(const Vocab& vocab, const TokenSeq& seq) {
    std::string out;
    for (int id : seq.ids) {
        if (id < Vocab::kNumSpecials) continue;
        out += vocab.decode(id);
    }
    return out;
}

inline TokenSeq encode_structure(const Vocab& vocab, const std::vector<std::string>& tokens) {
    TokenSeq seq;
    seq.task = Task::structure;
    seq.ids.push_back(Vocab::kBos);
    for (const auto& t : tokens) seq.ids.push_back(vocab.encode(t));
    seq.ids.push_back(Vocab::kEos);
    return seq;
}

inline std::vector<std::string> decode_structure(const Vocab& vocab, const TokenSeq& seq) {
    std::vector<std::string> out;
    for (int id : seq.ids) {
        if (id < Vocab::kNumSpecials) continue;
        out.push_back(vocab.decode(id));
    }
    return out;
}

// ---------------------------------------------------------------------------
// merge_html: inserts contents back into the non-empty cells and reassembles
// spanning-cell fragments into <td rowspan=".." colspan="..">.
// ---------------------------------------------------------------------------
struct MergeError {
    size_t placeholders = 0;
    size_t contents = 0;
    std::string message;
};

inline std::variant<std::string, MergeError> merge_html(const std::vector<std::string>& structure_tokens,
                                                        const std::vector<std::string>& contents) {
    size_t placeholders = 0;
    for (const auto& t : structure_tokens)
        if (tok::is_non_empty_cell(t)) ++placeholders;
    if (placeholders != contents.size())
        return MergeError{placeholders, contents.size(),
                          "structure has " + std::to_string(placeholders) + " non-empty cells but " +
                              std::to_string(contents.size()) + " contents were provided"};

    std::string html = "<table>";
    size_t next = 0;
    size_t i = 0;
    while (i < structure_tokens.size()) {
        const std::string& t = structure_tokens[i];
        if (t == tok::cell_empty) {
            html += "<td></td>";
            ++i;
        } else if (t == tok::cell_full) {
            html += "<td>" + contents[next++] + "</td>";
            ++i;
        } else if (t == tok::cell_open) {
            int rs = 1, cs = 1;
            ++i;
            while (i < structure_tokens.size() && !tok::is_cell_closer(structure_tokens[i])) {
                if (auto v = tok::span_value(structure_tokens[i], "rowspan")) rs = *v;
                if (auto v = tok::span_value(structure_tokens[i], "colspan")) cs = *v;
                ++i;
            }
            html += "<td";
            if (rs > 1) html += " rowspan=\"" + std::to_string(rs) + "\"";
            if (cs > 1) html += " colspan=\"" + std::to_string(cs) + "\"";
            html += ">";
            if (i < structure_tokens.size() && structure_tokens[i] == tok::close_full) html += contents[next++];
            html += "</td>";
            if (i < structure_tokens.size()) ++i;
        } else {
            html += t;
            ++i;
        }
    }
    html += "</table>";
    return html;
}

}  // namespace tabrec
