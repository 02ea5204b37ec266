#pragma once

#include <optional>
#include <string>
#include <vector>

namespace tabrec {

// Cell bounding box in pixel coordinates.
struct BBox {
    float x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    bool valid() const { return x_min < x_max && y_min < y_max; }
    float width() const { return x_max - x_min; }
    float height() const { return y_max - y_min; }
    bool operator==(const BBox&) const = default;
};

// Structure token sequence S, cell boxes B and cell contents C. B and C hold
// one entry per non-empty cell, in reading order, so they are the same length
// and never longer than the cell tokens in S.
struct Annotation {
    std::vector<std::string> structure_tokens;
    std::vector<BBox> bboxes;
    std::vector<std::string> contents;
};

enum class TableStyle { finance, scientific, marketing, sparse };

inline const char* style_name(TableStyle s) {
    switch (s) {
        case TableStyle::finance: return "finance";
        case TableStyle::scientific: return "scientific";
        case TableStyle::marketing: return "marketing";
        case TableStyle::sparse: return "sparse";
    }
    return "?";
}

inline std::optional<TableStyle> style_from_name(const std::string& name) {
    for (TableStyle s : {TableStyle::finance, TableStyle::scientific, TableStyle::marketing, TableStyle::sparse})
        if (name == style_name(s)) return s;
    return std::nullopt;
}

struct SpanSpec {
    int row = 0, col = 0;
    int rowspan = 1, colspan = 1;
};

// Logical table: grid dimensions, header depth, span layout and per-cell
// text. Cells covered by a span anchor carry no content of their own.
struct TableSpec {
    int n_rows = 0, n_cols = 0;
    int header_rows = 0;
    std::vector<SpanSpec> spans;
    std::vector<std::optional<std::string>> cells;  // row-major, nullopt = empty cell
    TableStyle style = TableStyle::finance;

    std::optional<std::string>& cell(int r, int c) { return cells[static_cast<size_t>(r) * n_cols + c]; }
    const std::optional<std::string>& cell(int r, int c) const { return cells[static_cast<size_t>(r) * n_cols + c]; }

    const SpanSpec* span_at(int r, int c) const {
        for (const auto& s : spans)
            if (s.row == r && s.col == c) return &s;
        return nullptr;
    }

    // True if (r, c) lies inside some span but is not its anchor.
    bool covered(int r, int c) const {
        for (const auto& s : spans)
            if (r >= s.row && r < s.row + s.rowspan && c >= s.col && c < s.col + s.colspan && !(r == s.row && c == s.col))
                return true;
        return false;
    }
};

// The structure-tag inventory: plain and spanning cell markers plus the
// section tags. Spanning cells open with "<td", carry span attribute tokens
// and close with "></td>" (empty) or ">[]</td>" (non-empty).
namespace tok {
inline const std::string thead_open = "<thead>";
inline const std::string thead_close = "</thead>";
inline const std::string tbody_open = "<tbody>";
inline const std::string tbody_close = "</tbody>";
inline const std::string tr_open = "<tr>";
inline const std::string tr_close = "</tr>";
inline const std::string cell_empty = "<td></td>";
inline const std::string cell_full = "<td>[]</td>";
inline const std::string cell_open = "<td";
inline const std::string close_empty = "></td>";
inline const std::string close_full = ">[]</td>";

inline constexpr int kSpanMin = 2;
inline constexpr int kSpanMax = 19;

inline std::string rowspan(int n) { return "rowspan=\"" + std::to_string(n) + "\""; }
inline std::string colspan(int n) { return "colspan=\"" + std::to_string(n) + "\""; }

// Parses rowspan="n"/colspan="n"; returns n or nullopt.
inline std::optional<int> span_value(const std::string& token, const char* attr) {
    const std::string prefix = std::string(attr) + "=\"";
    if (token.size() < prefix.size() + 2 || token.compare(0, prefix.size(), prefix) != 0 || token.back() != '"')
        return std::nullopt;
    int v = 0;
    for (size_t i = prefix.size(); i + 1 < token.size(); ++i) {
        if (token[i] < '0' || token[i] > '9') return std::nullopt;
        v = v * 10 + (token[i] - '0');
    }
    return v;
}

inline bool is_non_empty_cell(const std::string& t) { return t == cell_full || t == close_full; }
inline bool is_cell_closer(const std::string& t) { return t == close_empty || t == close_full; }
}  // namespace tok

// ---------------------------------------------------------------------------
// Grid resolution: replays a token sequence into concrete grid coordinates,
// mirroring HTML table layout (each cell takes the first free column of its
// row; spans mark occupancy downward/rightward).
// ---------------------------------------------------------------------------
struct ResolvedCell {
    int row = 0, col = 0;
    int rowspan = 1, colspan = 1;
    bool non_empty = false;
};

struct ResolvedGrid {
    int n_rows = 0, n_cols = 0;
    std::vector<ResolvedCell> cells;  // document order == reading order

    std::vector<ResolvedCell> non_empty_cells() const {
        std::vector<ResolvedCell> out;
        for (const auto& c : cells)
            if (c.non_empty) out.push_back(c);
        return out;
    }
};

// Returns nullopt for sequences that do not replay into a consistent grid.
inline std::optional<ResolvedGrid> resolve_grid(const std::vector<std::string>& tokens) {
    ResolvedGrid grid;
    std::vector<std::vector<bool>> taken;  // [row][col]
    int row = -1;
    bool in_tr = false;
    int cursor = 0;

    auto ensure = [&](int r, int c) {
        while (static_cast<int>(taken.size()) <= r) taken.emplace_back();
        for (auto& rowv : taken)
            while (static_cast<int>(rowv.size()) <= c) rowv.push_back(false);
    };

    auto place = [&](int rowspan, int colspan, bool non_empty) -> bool {
        if (!in_tr) return false;
        ensure(row, cursor);
        while (cursor < static_cast<int>(taken[static_cast<size_t>(row)].size()) &&
               taken[static_cast<size_t>(row)][static_cast<size_t>(cursor)])
            ++cursor;
        ensure(row + rowspan - 1, cursor + colspan - 1);
        for (int r = row; r < row + rowspan; ++r)
            for (int c = cursor; c < cursor + colspan; ++c) {
                if (taken[static_cast<size_t>(r)][static_cast<size_t>(c)]) return false;  // overlapping spans
                taken[static_cast<size_t>(r)][static_cast<size_t>(c)] = true;
            }
        grid.cells.push_back({row, cursor, rowspan, colspan, non_empty});
        cursor += colspan;
        return true;
    };

    size_t i = 0;
    while (i < tokens.size()) {
        const std::string& t = tokens[i];
        if (t == tok::thead_open || t == tok::thead_close || t == tok::tbody_open || t == tok::tbody_close) {
            if (in_tr) return std::nullopt;
            ++i;
        } else if (t == tok::tr_open) {
            if (in_tr) return std::nullopt;
            in_tr = true;
            ++row;
            cursor = 0;
            ensure(row, 0);
            ++i;
        } else if (t == tok::tr_close) {
            if (!in_tr) return std::nullopt;
            in_tr = false;
            ++i;
        } else if (t == tok::cell_empty || t == tok::cell_full) {
            if (!place(1, 1, t == tok::cell_full)) return std::nullopt;
            ++i;
        } else if (t == tok::cell_open) {
            int rs = 1, cs = 1;
            ++i;
            while (i < tokens.size() && !tok::is_cell_closer(tokens[i])) {
                if (auto v = tok::span_value(tokens[i], "rowspan"))
                    rs = *v;
                else if (auto v2 = tok::span_value(tokens[i], "colspan"))
                    cs = *v2;
                else
                    return std::nullopt;
                ++i;
            }
            if (i >= tokens.size()) return std::nullopt;  // unterminated cell
            if (!place(rs, cs, tokens[i] == tok::close_full)) return std::nullopt;
            ++i;
        } else {
            return std::nullopt;  // stray token
        }
    }
    if (in_tr) return std::nullopt;

    grid.n_rows = static_cast<int>(taken.size());
    for (const auto& r : taken) grid.n_cols = std::max(grid.n_cols, static_cast<int>(r.size()));
    return grid;
}

}  // namespace tabrec
