#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabrec/codec.hpp"
#include "tabrec/corpus.hpp"
#include "tabrec/font5x7.hpp"
#include "tabrec/image.hpp"
#include "tabrec/rng.hpp"
#include "tabrec/table.hpp"

namespace tabrec {

struct Rgb {
    float r = 1, g = 1, b = 1;
};

inline Rgb hsv(float h, float s, float v) {
    const float c = v * s;
    const float hp = h * 6.0f;
    const float x = c * (1.0f - std::abs(std::fmod(hp, 2.0f) - 1.0f));
    const float m = v - c;
    float r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: r = c, g = x; break;
        case 1: r = x, g = c; break;
        case 2: g = c, b = x; break;
        case 3: g = x, b = c; break;
        case 4: r = x, b = c; break;
        default: r = c, b = x; break;
    }
    return {r + m, g + m, b + m};
}

// Per-style rendering knobs. Sparse keeps at least half the cells empty;
// marketing never draws on a white background.
struct StyleParams {
    Rgb background;
    Rgb header_shade;
    Rgb row_shade;
    float grid_line_prob = 1.0f;
    int grid_thickness = 1;
    Rgb grid_color;
    float row_shading_prob = 0.0f;
    float empty_cell_prob = 0.1f;
    Rgb text_color{0.05f, 0.05f, 0.05f};
};

inline StyleParams style_params(TableStyle style, Rng& rng) {
    StyleParams p;
    switch (style) {
        case TableStyle::finance: {
            p.background = {1, 1, 1};
            p.header_shade = {0.85f, 0.87f, 0.90f};
            p.row_shade = {0.93f, 0.94f, 0.96f};
            p.grid_line_prob = 0.4f;
            p.grid_color = {0.45f, 0.45f, 0.45f};
            p.row_shading_prob = 0.6f;
            p.empty_cell_prob = 0.08f;
            break;
        }
        case TableStyle::scientific: {
            p.background = {1, 1, 1};
            p.header_shade = {0.92f, 0.92f, 0.92f};
            p.row_shade = {1, 1, 1};
            p.grid_line_prob = 0.9f;
            p.grid_color = {0.2f, 0.2f, 0.2f};
            p.empty_cell_prob = 0.1f;
            break;
        }
        case TableStyle::marketing: {
            // Saturated background with a continuous hue; never white.
            p.background = hsv(static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform(0.35, 0.75)),
                               static_cast<float>(rng.uniform(0.45, 0.95)));
            const float dim = 0.75f;
            p.header_shade = {p.background.r * dim, p.background.g * dim, p.background.b * dim};
            p.row_shade = {std::min(1.0f, p.background.r * 1.12f), std::min(1.0f, p.background.g * 1.12f),
                           std::min(1.0f, p.background.b * 1.12f)};
            p.grid_line_prob = 0.5f;
            p.grid_color = {1, 1, 1};
            p.row_shading_prob = 0.5f;
            p.empty_cell_prob = 0.12f;
            const float luma = 0.299f * p.background.r + 0.587f * p.background.g + 0.114f * p.background.b;
            p.text_color = luma < 0.5f ? Rgb{0.97f, 0.97f, 0.97f} : Rgb{0.05f, 0.05f, 0.05f};
            break;
        }
        case TableStyle::sparse: {
            p.background = {1, 1, 1};
            p.header_shade = {0.95f, 0.95f, 0.95f};
            p.row_shade = {1, 1, 1};
            p.grid_line_prob = 0.5f;
            p.grid_color = {0.6f, 0.6f, 0.6f};
            p.empty_cell_prob = 0.6f;
            break;
        }
    }
    return p;
}

// Knobs for sample_spec / make_corpus.
struct GenConfig {
    int min_rows = 2, max_rows = 5;
    int min_cols = 2, max_cols = 5;
    double span_prob = 0.15;
    int max_span = 3;  // capped by grid extent and the [2,19] grammar range
    double header_prob = 0.8;
    int max_text_len = 4;
    std::vector<TableStyle> styles = {TableStyle::finance, TableStyle::scientific, TableStyle::marketing,
                                      TableStyle::sparse};
    int image_size = 112;
    // Fault injection: number of samples to corrupt per fault type.
    int fault_out_of_bounds = 0;
    int fault_overlap = 0;
    int fault_wordwise = 0;
    int fault_stray = 0;

    static GenConfig from_json(const nlohmann::json& j) {
        GenConfig c;
        c.min_rows = j.value("min_rows", c.min_rows);
        c.max_rows = j.value("max_rows", c.max_rows);
        c.min_cols = j.value("min_cols", c.min_cols);
        c.max_cols = j.value("max_cols", c.max_cols);
        c.span_prob = j.value("span_prob", c.span_prob);
        c.max_span = j.value("max_span", c.max_span);
        c.header_prob = j.value("header_prob", c.header_prob);
        c.max_text_len = j.value("max_text_len", c.max_text_len);
        c.image_size = j.value("image_size", c.image_size);
        c.fault_out_of_bounds = j.value("fault_out_of_bounds", 0);
        c.fault_overlap = j.value("fault_overlap", 0);
        c.fault_wordwise = j.value("fault_wordwise", 0);
        c.fault_stray = j.value("fault_stray", 0);
        if (j.contains("styles")) {
            c.styles.clear();
            for (const auto& s : j["styles"]) {
                auto st = style_from_name(s.get<std::string>());
                if (!st) throw std::invalid_argument("unknown style '" + s.get<std::string>() + "'");
                c.styles.push_back(*st);
            }
        }
        return c;
    }
};

namespace detail {

inline std::string random_cell_text(Rng& rng, TableStyle style, int max_len) {
    const int len = rng.range(1, std::max(1, max_len));
    std::string out;
    const std::string digits = "0123456789";
    const std::string upper = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";
    const std::string lower = "abcdefghijklmnopqrstuvwxyz";
    enum Kind { number, money, percent, word };
    Kind kind;
    switch (style) {
        case TableStyle::finance: kind = static_cast<Kind>(rng.below(3)); break;
        case TableStyle::marketing: kind = rng.chance(0.7) ? word : number; break;
        default: kind = rng.chance(0.5) ? number : word; break;
    }
    switch (kind) {
        case money: out += '$'; [[fallthrough]];
        case number: {
            while (static_cast<int>(out.size()) < len) {
                char c = digits[rng.below(10)];
                if (out.size() > 0 && static_cast<int>(out.size()) + 1 < len && rng.chance(0.15)) c = '.';
                out += c;
            }
            break;
        }
        case percent: {
            while (static_cast<int>(out.size()) + 1 < std::max(2, len)) out += digits[rng.below(10)];
            out += '%';
            break;
        }
        case word: {
            out += upper[rng.below(26)];
            while (static_cast<int>(out.size()) < len) out += lower[rng.below(26)];
            break;
        }
    }
    return out.substr(0, static_cast<size_t>(std::max(1, max_len)));
}

}  // namespace detail

// Draws a table layout satisfying all TableSpec invariants; deterministic for
// a fixed generator state. Infeasible span draws are skipped, never emitted.
inline TableSpec sample_spec(Rng& rng, const GenConfig& cfg) {
    TableSpec spec;
    spec.n_rows = rng.range(cfg.min_rows, cfg.max_rows);
    spec.n_cols = rng.range(cfg.min_cols, cfg.max_cols);
    spec.header_rows = rng.chance(cfg.header_prob) ? 1 : 0;
    spec.style = cfg.styles[rng.below(cfg.styles.size())];
    spec.cells.assign(static_cast<size_t>(spec.n_rows) * spec.n_cols, std::nullopt);

    StyleParams sp = style_params(spec.style, rng);

    // Span placement: row-major pass, each anchor claims a free rectangle.
    std::vector<bool> covered(static_cast<size_t>(spec.n_rows) * spec.n_cols, false);
    auto taken = [&](int r, int c) { return covered[static_cast<size_t>(r) * spec.n_cols + c]; };
    for (int r = 0; r < spec.n_rows; ++r)
        for (int c = 0; c < spec.n_cols; ++c) {
            if (taken(r, c) || !rng.chance(cfg.span_prob)) continue;
            const int max_rs = std::min({cfg.max_span, tok::kSpanMax, spec.n_rows - r});
            const int max_cs = std::min({cfg.max_span, tok::kSpanMax, spec.n_cols - c});
            int rs = rng.range(1, std::max(1, max_rs));
            int cs = rng.range(1, std::max(1, max_cs));
            if (rs < tok::kSpanMin && cs < tok::kSpanMin) continue;  // not actually spanning
            bool free = true;
            for (int rr = r; rr < r + rs && free; ++rr)
                for (int cc = c; cc < c + cs && free; ++cc) free = !taken(rr, cc);
            if (!free) continue;
            for (int rr = r; rr < r + rs; ++rr)
                for (int cc = c; cc < c + cs; ++cc) covered[static_cast<size_t>(rr) * spec.n_cols + cc] = true;
            spec.spans.push_back({r, c, rs, cs});
        }

    for (int r = 0; r < spec.n_rows; ++r)
        for (int c = 0; c < spec.n_cols; ++c) {
            if (spec.covered(r, c)) continue;
            const bool header = r < spec.header_rows;
            const double empty_p = header ? 0.05 : sp.empty_cell_prob;
            if (rng.chance(empty_p)) continue;
            spec.cell(r, c) = detail::random_cell_text(rng, spec.style, cfg.max_text_len);
        }
    return spec;
}

// Expands a spec into the structure-tag sequence: <thead> wraps the first
// header_rows rows (when any), <tbody> the rest; span anchors open with "<td",
// rowspan attribute before colspan.
inline std::vector<std::string> spec_to_structure_tokens(const TableSpec& spec) {
    std::vector<std::string> out;
    auto emit_row = [&](int r) {
        out.push_back(tok::tr_open);
        for (int c = 0; c < spec.n_cols; ++c) {
            if (spec.covered(r, c)) continue;
            const SpanSpec* span = spec.span_at(r, c);
            const bool non_empty = spec.cell(r, c).has_value();
            if (span) {
                out.push_back(tok::cell_open);
                if (span->rowspan > 1) out.push_back(tok::rowspan(span->rowspan));
                if (span->colspan > 1) out.push_back(tok::colspan(span->colspan));
                out.push_back(non_empty ? tok::close_full : tok::close_empty);
            } else {
                out.push_back(non_empty ? tok::cell_full : tok::cell_empty);
            }
        }
        out.push_back(tok::tr_close);
    };
    if (spec.header_rows > 0) {
        out.push_back(tok::thead_open);
        for (int r = 0; r < std::min(spec.header_rows, spec.n_rows); ++r) emit_row(r);
        out.push_back(tok::thead_close);
    }
    if (spec.header_rows < spec.n_rows) {
        out.push_back(tok::tbody_open);
        for (int r = spec.header_rows; r < spec.n_rows; ++r) emit_row(r);
        out.push_back(tok::tbody_close);
    }
    return out;
}

struct RenderResult {
    RasterImage image;
    Annotation annotation;
    BBox table_region;
    std::vector<std::string> truncation_log;  // per-cell notes, usually empty
};

namespace detail {

inline void fill_rect(RasterImage& img, int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = std::max(0, y0); y < std::min(img.height, y1); ++y)
        for (int x = std::max(0, x0); x < std::min(img.width, x1); ++x) {
            img.at(y, x, 0) = c.r;
            img.at(y, x, 1) = c.g;
            img.at(y, x, 2) = c.b;
        }
}

inline void draw_text(RasterImage& img, int x0, int y0, const std::string& text, Rgb color) {
    int pen = x0;
    for (char ch : text) {
        auto it = font5x7::glyphs().find(ch);
        if (it != font5x7::glyphs().end()) {
            const auto& g = it->second;
            for (int ry = 0; ry < font5x7::kGlyphHeight; ++ry)
                for (int rx = 0; rx < font5x7::kGlyphWidth; ++rx)
                    if (g.rows[static_cast<size_t>(ry)] & (1u << (4 - rx))) {
                        const int y = y0 + ry, x = pen + rx;
                        if (y >= 0 && y < img.height && x >= 0 && x < img.width) {
                            img.at(y, x, 0) = color.r;
                            img.at(y, x, 1) = color.g;
                            img.at(y, x, 2) = color.b;
                        }
                    }
        }
        pen += font5x7::kAdvance;
    }
}

}  // namespace detail

// Rasterizes a spec. Every non-empty cell yields exactly one cell-wise bbox
// tightly covering its drawn text; text that would overflow its cell is
// truncated and logged, and the annotation records what was actually drawn.
inline RenderResult render(const TableSpec& spec, int image_size, Rng& rng) {
    StyleParams sp = style_params(spec.style, rng);
    RenderResult res;
    res.image = RasterImage(image_size, image_size, 3);
    res.image.fill(sp.background.r, sp.background.g, sp.background.b);

    const int margin = rng.range(3, 8);
    const int x_lo = margin, x_hi = image_size - margin;
    const int y_lo = margin, y_hi = image_size - margin;
    res.table_region = {static_cast<float>(x_lo), static_cast<float>(y_lo), static_cast<float>(x_hi),
                        static_cast<float>(y_hi)};

    std::vector<int> col_edge(static_cast<size_t>(spec.n_cols) + 1), row_edge(static_cast<size_t>(spec.n_rows) + 1);
    for (int c = 0; c <= spec.n_cols; ++c)
        col_edge[static_cast<size_t>(c)] = x_lo + (x_hi - x_lo) * c / spec.n_cols;
    for (int r = 0; r <= spec.n_rows; ++r)
        row_edge[static_cast<size_t>(r)] = y_lo + (y_hi - y_lo) * r / spec.n_rows;

    // Shading first, then grid lines, then glyphs.
    if (spec.header_rows > 0)
        detail::fill_rect(res.image, x_lo, y_lo, x_hi, row_edge[static_cast<size_t>(spec.header_rows)], sp.header_shade);
    const bool shade_rows = rng.chance(sp.row_shading_prob);
    for (int r = spec.header_rows; r < spec.n_rows; ++r)
        if (shade_rows && (r - spec.header_rows) % 2 == 1)
            detail::fill_rect(res.image, x_lo, row_edge[static_cast<size_t>(r)], x_hi, row_edge[static_cast<size_t>(r + 1)],
                              sp.row_shade);

    if (rng.chance(sp.grid_line_prob)) {
        const int t = sp.grid_thickness;
        for (int r = 0; r <= spec.n_rows; ++r)
            detail::fill_rect(res.image, x_lo, row_edge[static_cast<size_t>(r)], x_hi,
                              row_edge[static_cast<size_t>(r)] + t, sp.grid_color);
        for (int c = 0; c <= spec.n_cols; ++c)
            detail::fill_rect(res.image, col_edge[static_cast<size_t>(c)], y_lo,
                              col_edge[static_cast<size_t>(c)] + t, y_hi + 1, sp.grid_color);
    }

    res.annotation.structure_tokens = spec_to_structure_tokens(spec);

    for (int r = 0; r < spec.n_rows; ++r)
        for (int c = 0; c < spec.n_cols; ++c) {
            if (spec.covered(r, c) || !spec.cell(r, c).has_value()) continue;
            const SpanSpec* span = spec.span_at(r, c);
            const int rs = span ? span->rowspan : 1;
            const int cs = span ? span->colspan : 1;
            const int cx0 = col_edge[static_cast<size_t>(c)], cx1 = col_edge[static_cast<size_t>(c + cs)];
            // Text sits in the anchor row band even for rowspan cells, so the
            // pixel reading order matches the token reading order.
            const int cy0 = row_edge[static_cast<size_t>(r)], cy1 = row_edge[static_cast<size_t>(r + 1)];
            (void)rs;
            const int pad = 2;
            const int inner_w = cx1 - cx0 - 2 * pad;

            std::string text = *spec.cell(r, c);
            const int max_chars = std::max(1, (inner_w + 1) / font5x7::kAdvance);
            if (static_cast<int>(text.size()) > max_chars) {
                res.truncation_log.push_back("cell (" + std::to_string(r) + "," + std::to_string(c) + "): '" + text +
                                             "' truncated to " + std::to_string(max_chars) + " chars");
                text = text.substr(0, static_cast<size_t>(max_chars));
            }
            const int tw = font5x7::text_width(text);
            const int tx = cx0 + pad;
            const int ty = cy0 + std::max(pad, (cy1 - cy0 - font5x7::kGlyphHeight) / 2);
            detail::draw_text(res.image, tx, ty, text, sp.text_color);
            res.annotation.bboxes.push_back({static_cast<float>(tx), static_cast<float>(ty),
                                             static_cast<float>(tx + tw), static_cast<float>(ty + font5x7::kGlyphHeight)});
            res.annotation.contents.push_back(text);
        }
    return res;
}

struct CorpusManifest {
    int count = 0;
    int image_size = 0;
    uint64_t seed = 0;
    std::map<std::string, int> style_counts;
    std::map<std::string, std::vector<int>> fault_indices;  // fault type -> sample indices

    nlohmann::json to_json() const {
        return {{"count", count},
                {"image_size", image_size},
                {"seed", seed},
                {"style_counts", style_counts},
                {"fault_indices", fault_indices}};
    }
};

namespace detail {

// Deterministically corrupts an annotation in place.
inline void inject_fault(Sample& s, const std::string& kind) {
    auto& boxes = s.annotation.bboxes;
    auto& contents = s.annotation.contents;
    if (kind == "out_of_bounds") {
        if (boxes.empty()) {
            boxes.push_back({-4.6f, 1.0f, 19.5f, 8.0f});
            contents.push_back("x");
        } else {
            boxes[0].x_min = -4.6f;
        }
    } else if (kind == "overlap") {
        if (boxes.size() >= 2) {
            boxes[1] = {boxes[0].x_min + 1.0f, boxes[0].y_min, boxes[0].x_max + 1.0f, boxes[0].y_max};
        } else if (!boxes.empty()) {
            boxes.push_back(boxes[0]);
            contents.push_back(contents[0]);
        } else {
            boxes.push_back({10, 10, 20, 17});
            boxes.push_back({10, 10, 20, 17});
            contents.push_back("x");
            contents.push_back("x");
        }
    } else if (kind == "wordwise") {
        // Split the first box into two word boxes; contents stay cell-wise,
        // so |B| != |C|.
        if (boxes.empty()) {
            boxes.push_back({10, 10, 20, 17});
            boxes.push_back({22, 10, 30, 17});
            contents.push_back("x");
        } else {
            const BBox b = boxes[0];
            const float mid = (b.x_min + b.x_max) / 2;
            boxes[0] = {b.x_min, b.y_min, mid - 1, b.y_max};
            boxes.insert(boxes.begin() + 1, {mid + 1, b.y_min, b.x_max, b.y_max});
        }
    } else if (kind == "stray") {
        // A box for text outside the table region, still inside the image.
        boxes.push_back({1.0f, 0.0f, 12.0f, 2.0f});
        contents.push_back("NB");
    }
}

}  // namespace detail

// Writes count samples under out_dir: img_%05d.ppm files, corpus.jsonl (one
// sample per line) and manifest.json. Per-sample child seeds make generation
// order-independent and reruns byte-identical.
inline CorpusManifest make_corpus(const GenConfig& cfg, uint64_t seed, int count, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::ofstream jsonl(fs::path(out_dir) / "corpus.jsonl", std::ios::binary);
    if (!jsonl) throw std::runtime_error("make_corpus: cannot write to " + out_dir);

    CorpusManifest manifest;
    manifest.count = count;
    manifest.image_size = cfg.image_size;
    manifest.seed = seed;
    for (TableStyle st : cfg.styles) manifest.style_counts[style_name(st)] = 0;

    // Choose disjoint fault victims up front.
    Rng fault_rng = Rng(seed).child(0xFA);
    std::vector<int> order(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) order[static_cast<size_t>(i)] = i;
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[fault_rng.below(i)]);
    std::map<int, std::string> fault_of;
    size_t cursor = 0;
    auto assign = [&](const std::string& kind, int n) {
        auto& list = manifest.fault_indices[kind];
        for (int i = 0; i < n && cursor < order.size(); ++i, ++cursor) {
            fault_of[order[cursor]] = kind;
            list.push_back(order[cursor]);
        }
        std::sort(list.begin(), list.end());
    };
    assign("out_of_bounds", cfg.fault_out_of_bounds);
    assign("overlap", cfg.fault_overlap);
    assign("wordwise", cfg.fault_wordwise);
    assign("stray", cfg.fault_stray);

    const Rng base(seed);
    for (int i = 0; i < count; ++i) {
        Rng rng = base.child(static_cast<uint64_t>(i));
        const TableSpec spec = sample_spec(rng, cfg);
        RenderResult r = render(spec, cfg.image_size, rng);

        char name[32];
        std::snprintf(name, sizeof(name), "img_%05d.ppm", i);
        write_ppm(r.image, (fs::path(out_dir) / name).string());

        Sample s;
        s.image_path = name;
        s.annotation = std::move(r.annotation);
        s.style = style_name(spec.style);
        s.table_region = r.table_region;
        manifest.style_counts[s.style] += 1;
        if (auto it = fault_of.find(i); it != fault_of.end()) detail::inject_fault(s, it->second);

        jsonl << sample_to_json(s).dump() << "\n";
    }
    jsonl.close();
    if (!jsonl) throw std::runtime_error("make_corpus: write failed, output in " + out_dir + " is partial");

    std::ofstream mf(fs::path(out_dir) / "manifest.json", std::ios::binary);
    mf << manifest.to_json().dump(2) << "\n";
    return manifest;
}

}  // namespace tabrec
