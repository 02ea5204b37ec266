#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "tabrec/table.hpp"

namespace tabrec {

// ---------------------------------------------------------------------------
// HTML table tree
// ---------------------------------------------------------------------------
struct HtmlNode {
    std::string tag;
    int rowspan = 1;
    int colspan = 1;
    std::string content;  // leaf cells only
    std::vector<HtmlNode> children;
};

struct ParseError {
    size_t position = 0;
    std::string message;
};

// Parses the codec's tag inventory: table/thead/tbody/tr/td with optional
// rowspan/colspan attributes (either order) and plain text inside td.
inline std::variant<HtmlNode, ParseError> html_to_tree(const std::string& html) {
    struct Frame {
        HtmlNode node;
        size_t open_pos;
    };
    std::vector<Frame> stack;
    std::optional<HtmlNode> root;
    size_t i = 0;

    auto fail = [](size_t pos, std::string msg) { return ParseError{pos, std::move(msg)}; };

    while (i < html.size()) {
        if (html[i] != '<') {
            const size_t start = i;
            std::string text;
            while (i < html.size() && html[i] != '<') text += html[i++];
            if (!stack.empty() && stack.back().node.tag == "td") {
                stack.back().node.content += text;
            } else if (text.find_first_not_of(" \t\n\r") != std::string::npos) {
                return fail(start, "text outside a <td> cell");
            }
            continue;
        }
        const size_t tag_pos = i;
        const size_t end = html.find('>', i);
        if (end == std::string::npos) return fail(tag_pos, "unterminated tag");
        std::string inner = html.substr(i + 1, end - i - 1);
        i = end + 1;

        const bool closing = !inner.empty() && inner[0] == '/';
        if (closing) inner = inner.substr(1);
        const size_t name_end = inner.find_first_of(" \t");
        const std::string name = inner.substr(0, name_end);
        if (name != "table" && name != "thead" && name != "tbody" && name != "tr" && name != "td")
            return fail(tag_pos, "unknown tag <" + name + ">");

        if (closing) {
            if (stack.empty() || stack.back().node.tag != name)
                return fail(tag_pos, "unbalanced </" + name + ">");
            Frame done = std::move(stack.back());
            stack.pop_back();
            if (done.node.tag == "td" && !done.node.children.empty())
                return fail(tag_pos, "<td> must be a leaf");
            if (stack.empty()) {
                if (done.node.tag != "table") return fail(tag_pos, "root element must be <table>");
                if (root) return fail(tag_pos, "multiple root tables");
                root = std::move(done.node);
            } else {
                stack.back().node.children.push_back(std::move(done.node));
            }
            continue;
        }

        HtmlNode node;
        node.tag = name;
        if (name_end != std::string::npos) {
            std::string attrs = inner.substr(name_end);
            for (const char* key : {"rowspan", "colspan"}) {
                const std::string pat = std::string(key) + "=\"";
                const size_t at = attrs.find(pat);
                if (at == std::string::npos) continue;
                const size_t vstart = at + pat.size();
                const size_t vend = attrs.find('"', vstart);
                if (vend == std::string::npos) return fail(tag_pos, "unterminated attribute value");
                int v = 0;
                for (size_t k = vstart; k < vend; ++k) {
                    if (attrs[k] < '0' || attrs[k] > '9') return fail(tag_pos, "non-numeric span attribute");
                    v = v * 10 + (attrs[k] - '0');
                }
                if (v < 1) return fail(tag_pos, "span attribute must be >= 1");
                (std::string(key) == "rowspan" ? node.rowspan : node.colspan) = v;
            }
        }
        if (node.tag == "table" && !stack.empty()) return fail(tag_pos, "nested <table>");
        stack.push_back({std::move(node), tag_pos});
    }
    if (!stack.empty()) return fail(stack.back().open_pos, "unclosed <" + stack.back().node.tag + ">");
    if (!root) return fail(0, "no <table> element");
    return *root;
}

inline size_t tree_size(const HtmlNode& n) {
    size_t total = 1;
    for (const auto& c : n.children) total += tree_size(c);
    return total;
}

// ---------------------------------------------------------------------------
// Ordered tree edit distance (Zhang-Shasha) with unit insert/delete cost.
// Rename costs 1 when (tag, rowspan, colspan) differ; otherwise 0 for
// structure-only comparison, or the normalized string edit distance between
// cell contents for the full comparison.
// ---------------------------------------------------------------------------
inline size_t levenshtein(const std::string& a, const std::string& b) {
    std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline double normalized_levenshtein(const std::string& a, const std::string& b) {
    const size_t m = std::max(a.size(), b.size());
    return m == 0 ? 0.0 : static_cast<double>(levenshtein(a, b)) / static_cast<double>(m);
}

namespace detail {

struct FlatTree {
    // 1-based postorder arrays.
    std::vector<const HtmlNode*> node;
    std::vector<int> lld;  // leftmost leaf descendant
    std::vector<int> keyroots;

    explicit FlatTree(const HtmlNode& root) {
        node.push_back(nullptr);
        lld.push_back(0);
        walk(root);
        std::vector<bool> seen(lld.size(), false);
        for (int i = static_cast<int>(node.size()) - 1; i >= 1; --i) {
            if (!seen[static_cast<size_t>(lld[static_cast<size_t>(i)])]) {
                keyroots.push_back(i);
                seen[static_cast<size_t>(lld[static_cast<size_t>(i)])] = true;
            }
        }
        std::sort(keyroots.begin(), keyroots.end());
    }

    int size() const { return static_cast<int>(node.size()) - 1; }

   private:
    int walk(const HtmlNode& n) {
        int first_leaf = -1;
        for (const auto& c : n.children) {
            const int l = walk(c);
            if (first_leaf < 0) first_leaf = l;
        }
        node.push_back(&n);
        const int idx = static_cast<int>(node.size()) - 1;
        lld.push_back(first_leaf < 0 ? idx : first_leaf);
        return lld.back();
    }
};

inline double rename_cost(const HtmlNode& a, const HtmlNode& b, bool structure_only) {
    if (a.tag != b.tag || a.rowspan != b.rowspan || a.colspan != b.colspan) return 1.0;
    if (!structure_only && a.tag == "td") return normalized_levenshtein(a.content, b.content);
    return 0.0;
}

}  // namespace detail

inline double tree_edit_distance(const HtmlNode& a, const HtmlNode& b, bool structure_only) {
    detail::FlatTree ta(a), tb(b);
    const int n = ta.size(), m = tb.size();
    std::vector<std::vector<double>> td(static_cast<size_t>(n) + 1, std::vector<double>(static_cast<size_t>(m) + 1, 0.0));
    std::vector<std::vector<double>> fd(static_cast<size_t>(n) + 2, std::vector<double>(static_cast<size_t>(m) + 2, 0.0));

    for (int x : ta.keyroots)
        for (int y : tb.keyroots) {
            const int lx = ta.lld[static_cast<size_t>(x)], ly = tb.lld[static_cast<size_t>(y)];
            fd[static_cast<size_t>(lx - 1)][static_cast<size_t>(ly - 1)] = 0.0;
            for (int i = lx; i <= x; ++i)
                fd[static_cast<size_t>(i)][static_cast<size_t>(ly - 1)] =
                    fd[static_cast<size_t>(i - 1)][static_cast<size_t>(ly - 1)] + 1.0;
            for (int j = ly; j <= y; ++j)
                fd[static_cast<size_t>(lx - 1)][static_cast<size_t>(j)] =
                    fd[static_cast<size_t>(lx - 1)][static_cast<size_t>(j - 1)] + 1.0;
            for (int i = lx; i <= x; ++i)
                for (int j = ly; j <= y; ++j) {
                    const double del = fd[static_cast<size_t>(i - 1)][static_cast<size_t>(j)] + 1.0;
                    const double ins = fd[static_cast<size_t>(i)][static_cast<size_t>(j - 1)] + 1.0;
                    if (ta.lld[static_cast<size_t>(i)] == lx && tb.lld[static_cast<size_t>(j)] == ly) {
                        const double ren = fd[static_cast<size_t>(i - 1)][static_cast<size_t>(j - 1)] +
                                           detail::rename_cost(*ta.node[static_cast<size_t>(i)],
                                                               *tb.node[static_cast<size_t>(j)], structure_only);
                        fd[static_cast<size_t>(i)][static_cast<size_t>(j)] = std::min({del, ins, ren});
                        td[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                            fd[static_cast<size_t>(i)][static_cast<size_t>(j)];
                    } else {
                        const double sub =
                            fd[static_cast<size_t>(ta.lld[static_cast<size_t>(i)] - 1)]
                              [static_cast<size_t>(tb.lld[static_cast<size_t>(j)] - 1)] +
                            td[static_cast<size_t>(i)][static_cast<size_t>(j)];
                        fd[static_cast<size_t>(i)][static_cast<size_t>(j)] = std::min({del, ins, sub});
                    }
                }
        }
    return td[static_cast<size_t>(n)][static_cast<size_t>(m)];
}

struct TedsResult {
    double score = 0.0;
    std::string note;  // set when a side failed to parse
};

// TEDS = 1 - TED / max(|T_pred|, |T_gt|). An unparseable side scores 0 so
// corpus evaluation stays total over malformed predictions.
inline TedsResult teds(const std::string& pred_html, const std::string& gt_html, bool structure_only) {
    auto pred = html_to_tree(pred_html);
    auto gt = html_to_tree(gt_html);
    if (std::holds_alternative<ParseError>(pred))
        return {0.0, "prediction failed to parse: " + std::get<ParseError>(pred).message};
    if (std::holds_alternative<ParseError>(gt))
        return {0.0, "groundtruth failed to parse: " + std::get<ParseError>(gt).message};
    const HtmlNode& a = std::get<HtmlNode>(pred);
    const HtmlNode& b = std::get<HtmlNode>(gt);
    const double dist = tree_edit_distance(a, b, structure_only);
    const double denom = static_cast<double>(std::max(tree_size(a), tree_size(b)));
    // The distance can exceed the larger tree size for unrelated shapes; the
    // score is clamped to keep its [0,1] contract.
    return {std::clamp(1.0 - dist / denom, 0.0, 1.0), ""};
}

// ---------------------------------------------------------------------------
// Cell adjacency relations
// ---------------------------------------------------------------------------
enum class Direction { horizontal, vertical };

struct AdjacencyRelation {
    int cell_a = 0;  // ids index the non-empty cells in reading order
    int cell_b = 0;
    Direction direction = Direction::horizontal;

    auto operator<=>(const AdjacencyRelation&) const = default;
};

// For each non-empty cell, its nearest non-empty neighbor to the right in any
// shared row and below in any shared column; empty cells are skipped and a
// span occupies all of its grid positions. Relations are deduplicated.
inline std::set<AdjacencyRelation> car_relations(const ResolvedGrid& grid) {
    std::vector<ResolvedCell> cells = grid.non_empty_cells();
    std::vector<std::vector<int>> owner(static_cast<size_t>(grid.n_rows),
                                        std::vector<int>(static_cast<size_t>(grid.n_cols), -1));
    for (size_t id = 0; id < cells.size(); ++id)
        for (int r = cells[id].row; r < cells[id].row + cells[id].rowspan; ++r)
            for (int c = cells[id].col; c < cells[id].col + cells[id].colspan; ++c)
                owner[static_cast<size_t>(r)][static_cast<size_t>(c)] = static_cast<int>(id);

    std::set<AdjacencyRelation> rels;
    for (size_t id = 0; id < cells.size(); ++id) {
        const ResolvedCell& cell = cells[id];
        for (int r = cell.row; r < cell.row + cell.rowspan; ++r)
            for (int c = cell.col + cell.colspan; c < grid.n_cols; ++c) {
                const int other = owner[static_cast<size_t>(r)][static_cast<size_t>(c)];
                if (other >= 0 && other != static_cast<int>(id)) {
                    rels.insert({static_cast<int>(id), other, Direction::horizontal});
                    break;
                }
            }
        for (int c = cell.col; c < cell.col + cell.colspan; ++c)
            for (int r = cell.row + cell.rowspan; r < grid.n_rows; ++r) {
                const int other = owner[static_cast<size_t>(r)][static_cast<size_t>(c)];
                if (other >= 0 && other != static_cast<int>(id)) {
                    rels.insert({static_cast<int>(id), other, Direction::vertical});
                    break;
                }
            }
    }
    return rels;
}

// ---------------------------------------------------------------------------
// IoU and box matching
// ---------------------------------------------------------------------------
inline double iou(const BBox& a, const BBox& b) {
    if (!a.valid() || !b.valid()) return 0.0;
    const double ix = std::max(0.0f, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    const double iy = std::max(0.0f, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    const double inter = ix * iy;
    const double uni = static_cast<double>(a.width()) * a.height() + static_cast<double>(b.width()) * b.height() - inter;
    return uni <= 0.0 ? 0.0 : inter / uni;
}

// Greedy one-to-one matching by descending IoU; pairs below the threshold
// stay unmatched. Returns gt index per prediction (-1 when unmatched).
inline std::vector<int> greedy_iou_match(const std::vector<BBox>& pred, const std::vector<BBox>& gt,
                                         double iou_threshold) {
    struct Pair {
        double overlap;
        int p, g;
    };
    std::vector<Pair> pairs;
    for (size_t p = 0; p < pred.size(); ++p)
        for (size_t g = 0; g < gt.size(); ++g) {
            const double ov = iou(pred[p], gt[g]);
            if (ov >= iou_threshold) pairs.push_back({ov, static_cast<int>(p), static_cast<int>(g)});
        }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.overlap != b.overlap) return a.overlap > b.overlap;
        if (a.p != b.p) return a.p < b.p;
        return a.g < b.g;
    });
    std::vector<int> match(pred.size(), -1);
    std::vector<bool> taken(gt.size(), false);
    std::vector<bool> used(pred.size(), false);
    for (const Pair& pr : pairs) {
        if (used[static_cast<size_t>(pr.p)] || taken[static_cast<size_t>(pr.g)]) continue;
        used[static_cast<size_t>(pr.p)] = true;
        taken[static_cast<size_t>(pr.g)] = true;
        match[static_cast<size_t>(pr.p)] = pr.g;
    }
    return match;
}

struct CarScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    size_t true_positives = 0;
    size_t predicted = 0;
    size_t groundtruth = 0;
};

// Aligns predicted boxes to groundtruth cells by IoU, induces the predicted
// relation list through the matched identities and scores it against the
// groundtruth relations.
inline CarScore car_f1(const std::vector<BBox>& pred_boxes, const std::vector<BBox>& gt_boxes,
                       const std::set<AdjacencyRelation>& gt_relations, double iou_threshold) {
    if (iou_threshold <= 0.0 || iou_threshold > 1.0)
        throw std::invalid_argument("car_f1: iou_threshold must lie in (0, 1]");
    const std::vector<int> match = greedy_iou_match(pred_boxes, gt_boxes, iou_threshold);
    std::set<int> matched_gt;
    for (int g : match)
        if (g >= 0) matched_gt.insert(g);

    CarScore s;
    s.groundtruth = gt_relations.size();
    for (const auto& r : gt_relations)
        if (matched_gt.count(r.cell_a) && matched_gt.count(r.cell_b)) {
            ++s.predicted;
            ++s.true_positives;
        }
    if (s.predicted == 0 && s.groundtruth == 0) {
        s.precision = s.recall = s.f1 = 1.0;
        return s;
    }
    s.precision = s.predicted == 0 ? 0.0 : static_cast<double>(s.true_positives) / static_cast<double>(s.predicted);
    s.recall = s.groundtruth == 0 ? 0.0 : static_cast<double>(s.true_positives) / static_cast<double>(s.groundtruth);
    s.f1 = (s.precision + s.recall) == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

// IoU-weighted average of F1 at thresholds 0.6/0.7/0.8/0.9 (denominator 3.0).
inline double wavg_f1(const std::map<double, double>& f1_at) {
    const std::vector<double> required = {0.6, 0.7, 0.8, 0.9};
    if (f1_at.size() != required.size()) throw std::invalid_argument("wavg_f1: need F1 at exactly {0.6, 0.7, 0.8, 0.9}");
    double num = 0.0, den = 0.0;
    for (double t : required) {
        auto it = f1_at.find(t);
        if (it == f1_at.end()) throw std::invalid_argument("wavg_f1: missing threshold " + std::to_string(t));
        num += t * it->second;
        den += t;
    }
    return num / den;
}

// ---------------------------------------------------------------------------
// COCO-style average precision
// ---------------------------------------------------------------------------
struct DetectionSet {
    std::vector<BBox> boxes;
    std::vector<float> scores;  // empty for groundtruth
};

struct ApResult {
    double map = 0.0;
    double ap50 = 0.0;
    double ap75 = 0.0;
    std::map<double, double> per_threshold;
};

inline std::vector<double> default_ap_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
    return t;
}

namespace detail {

// 101-point interpolated AP from per-detection TP flags sorted by score.
inline double interpolated_ap(const std::vector<bool>& tp_sorted, size_t total_gt) {
    if (total_gt == 0) return tp_sorted.empty() ? 1.0 : 0.0;
    std::vector<double> precision, recall;
    size_t tp = 0;
    for (size_t i = 0; i < tp_sorted.size(); ++i) {
        if (tp_sorted[i]) ++tp;
        precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
    }
    double ap = 0.0;
    for (int k = 0; k <= 100; ++k) {
        const double r = static_cast<double>(k) / 100.0;
        double best = 0.0;
        for (size_t i = 0; i < precision.size(); ++i)
            if (recall[i] >= r) best = std::max(best, precision[i]);
        ap += best;
    }
    return ap / 101.0;
}

}  // namespace detail

// Pooled evaluation over parallel prediction/groundtruth sets (one entry per
// image). Detections match greedily, best unclaimed IoU first, within their
// own image.
inline ApResult coco_ap_pooled(const std::vector<DetectionSet>& preds, const std::vector<DetectionSet>& gts,
                               const std::vector<double>& thresholds = default_ap_thresholds()) {
    if (preds.size() != gts.size()) throw std::invalid_argument("coco_ap: prediction/groundtruth image count mismatch");
    struct Det {
        float score;
        size_t img, idx;
    };
    std::vector<Det> dets;
    size_t total_gt = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].scores.size() != preds[i].boxes.size())
            throw std::invalid_argument("coco_ap: every prediction needs a score");
        for (size_t k = 0; k < preds[i].boxes.size(); ++k) dets.push_back({preds[i].scores[k], i, k});
        total_gt += gts[i].boxes.size();
    }
    std::sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.img != b.img) return a.img < b.img;
        return a.idx < b.idx;
    });

    ApResult res;
    for (double t : thresholds) {
        std::vector<std::vector<bool>> claimed(gts.size());
        for (size_t i = 0; i < gts.size(); ++i) claimed[i].assign(gts[i].boxes.size(), false);
        std::vector<bool> tp;
        tp.reserve(dets.size());
        for (const Det& d : dets) {
            const auto& gt_boxes = gts[d.img].boxes;
            double best = 0.0;
            int best_g = -1;
            for (size_t g = 0; g < gt_boxes.size(); ++g) {
                if (claimed[d.img][g]) continue;
                const double ov = iou(preds[d.img].boxes[d.idx], gt_boxes[g]);
                if (ov > best) {
                    best = ov;
                    best_g = static_cast<int>(g);
                }
            }
            if (best_g >= 0 && best >= t) {
                claimed[d.img][static_cast<size_t>(best_g)] = true;
                tp.push_back(true);
            } else {
                tp.push_back(false);
            }
        }
        res.per_threshold[t] = detail::interpolated_ap(tp, total_gt);
    }

    double sum = 0.0;
    for (const auto& [t, ap] : res.per_threshold) sum += ap;
    res.map = res.per_threshold.empty() ? 0.0 : sum / static_cast<double>(res.per_threshold.size());
    if (auto it = res.per_threshold.find(0.5); it != res.per_threshold.end()) res.ap50 = it->second;
    if (auto it = res.per_threshold.find(0.75); it != res.per_threshold.end()) res.ap75 = it->second;
    return res;
}

inline ApResult coco_ap(const DetectionSet& pred, const DetectionSet& gt,
                        const std::vector<double>& thresholds = default_ap_thresholds()) {
    return coco_ap_pooled({pred}, {gt}, thresholds);
}

}  // namespace tabrec
