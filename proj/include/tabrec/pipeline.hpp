#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabrec/codec.hpp"
#include "tabrec/corpus.hpp"
#include "tabrec/metrics.hpp"
#include "tabrec/model.hpp"

namespace tabrec {

// ---------------------------------------------------------------------------
// crop: the inference-side cell cutter. Same letterbox path as training.
// ---------------------------------------------------------------------------
inline CropResult crop(const RasterImage& image, const BBox& box, int target_size) {
    return letterbox_crop(image, box.x_min, box.y_min, box.x_max, box.y_max, target_size);
}

// ---------------------------------------------------------------------------
// End-to-end inference. Model-output pathologies never abort the pipeline;
// each one turns into a flag on the result.
// ---------------------------------------------------------------------------
struct InferenceFlags {
    bool structure_truncated = false;
    bool bbox_truncated = false;
    bool content_truncated = false;
    bool structure_invalid = false;  // grammar violations; HTML omitted
    bool count_mismatch = false;     // |bboxes| != non-empty cell count
    int degenerate_boxes = 0;

    nlohmann::json to_json() const {
        return {{"structure_truncated", structure_truncated},
                {"bbox_truncated", bbox_truncated},
                {"content_truncated", content_truncated},
                {"structure_invalid", structure_invalid},
                {"count_mismatch", count_mismatch},
                {"degenerate_boxes", degenerate_boxes}};
    }
};

struct InferenceResult {
    std::vector<std::string> structure_tokens;
    std::vector<BBox> bboxes;
    std::vector<float> bbox_scores;  // mean token probability per box
    std::vector<std::string> contents;
    std::string html;  // empty when the structure did not validate
    InferenceFlags flags;

    nlohmann::json to_json() const {
        nlohmann::json boxes = nlohmann::json::array();
        for (const BBox& b : bboxes)
            boxes.push_back({detail::json_coord(b.x_min), detail::json_coord(b.y_min), detail::json_coord(b.x_max),
                             detail::json_coord(b.y_max)});
        return {{"structure_tokens", structure_tokens}, {"bboxes", boxes},   {"bbox_scores", bbox_scores},
                {"contents", contents},                 {"html", html},      {"flags", flags.to_json()}};
    }
};

// Decoding order: structure, then all cell boxes, then per-cell content.
inline InferenceResult infer(const RasterImage& image, const TaskModel& structure_model, const TaskModel& bbox_model,
                             const TaskModel& content_model) {
    InferenceResult res;

    DecodeResult s = greedy_decode(structure_model, image);
    res.flags.structure_truncated = s.truncated;
    res.structure_tokens = decode_structure(structure_model.vocab, s.seq);

    DecodeResult b = greedy_decode(bbox_model, image);
    res.flags.bbox_truncated = b.truncated;
    const int bbox_image_size = bbox_model.vocab.size() - Vocab::kNumSpecials - 1;
    DeserializedBoxes boxes = deserialize_bboxes(b.seq, bbox_image_size);
    res.bboxes = boxes.boxes;
    for (bool d : boxes.degenerate) res.flags.degenerate_boxes += d;
    // Per-box confidence: mean probability of its four coordinate tokens.
    {
        std::vector<float> coord_probs;
        for (size_t i = 1; i < b.seq.ids.size(); ++i) {
            const int id = b.seq.ids[i];
            if (id >= Vocab::kNumSpecials && id - Vocab::kNumSpecials <= bbox_image_size)
                coord_probs.push_back(b.probs[i - 1]);
        }
        for (size_t k = 0; k + 3 < coord_probs.size(); k += 4)
            res.bbox_scores.push_back((coord_probs[k] + coord_probs[k + 1] + coord_probs[k + 2] + coord_probs[k + 3]) /
                                      4.0f);
    }

    // Cells are independent; decode content per predicted box.
    const int crop_size = content_model.config.encoder.image_size;
    for (const BBox& box : res.bboxes) {
        CropResult c = crop(image, box, crop_size);
        DecodeResult d = greedy_decode(content_model, c.image);
        res.flags.content_truncated |= d.truncated;
        res.contents.push_back(decode_content(content_model.vocab, d.seq));
    }

    if (!validate_structure(res.structure_tokens).empty()) {
        res.flags.structure_invalid = true;
        return res;
    }
    size_t placeholders = 0;
    for (const auto& t : res.structure_tokens)
        if (tok::is_non_empty_cell(t)) ++placeholders;
    res.flags.count_mismatch = placeholders != res.contents.size();
    // Merge the minimum prefix; missing contents render as empty cells.
    std::vector<std::string> merged(res.contents.begin(),
                                    res.contents.begin() + std::min(placeholders, res.contents.size()));
    merged.resize(placeholders, "");
    auto html = merge_html(res.structure_tokens, merged);
    if (std::holds_alternative<std::string>(html)) res.html = std::get<std::string>(html);
    return res;
}

// ---------------------------------------------------------------------------
// Annotation linter
// ---------------------------------------------------------------------------
struct OobFinding {
    int box_index = 0;
    std::string sides;  // comma-joined violated constraints
};

struct OverlapFinding {
    int box_a = 0, box_b = 0;
    double overlap_iou = 0.0;
};

struct LintFindings {
    std::vector<OobFinding> out_of_bounds;
    std::vector<OverlapFinding> overlaps;
    std::optional<std::pair<size_t, size_t>> count_mismatch;  // (|B|, |C|)
    std::vector<int> stray;  // boxes fully outside the table region

    bool any() const {
        return !out_of_bounds.empty() || !overlaps.empty() || count_mismatch.has_value() || !stray.empty();
    }

    nlohmann::json to_json() const {
        nlohmann::json oob = nlohmann::json::array();
        for (const auto& f : out_of_bounds) oob.push_back({{"box", f.box_index}, {"sides", f.sides}});
        nlohmann::json ov = nlohmann::json::array();
        for (const auto& f : overlaps) ov.push_back({{"a", f.box_a}, {"b", f.box_b}, {"iou", f.overlap_iou}});
        nlohmann::json j = {{"out_of_bounds", oob}, {"overlaps", ov}, {"stray", stray}};
        if (count_mismatch) j["count_mismatch"] = {{"bboxes", count_mismatch->first}, {"contents", count_mismatch->second}};
        return j;
    }
};

// Flags out-of-bounds and degenerate boxes, overlapping pairs past the IoU
// threshold, |B| != |C|, and (when the table region is known) boxes entirely
// outside the table. Accepts any input; never throws on malformed data.
inline LintFindings lint_annotation(const Annotation& ann, float image_w, float image_h, double overlap_threshold = 0.1,
                                    const std::optional<BBox>& table_region = std::nullopt) {
    LintFindings out;
    for (size_t i = 0; i < ann.bboxes.size(); ++i) {
        const BBox& b = ann.bboxes[i];
        std::string sides;
        auto flag = [&](bool bad, const char* what) {
            if (!bad) return;
            if (!sides.empty()) sides += ",";
            sides += what;
        };
        flag(b.x_min < 0, "x_min<0");
        flag(b.y_min < 0, "y_min<0");
        flag(b.x_max > image_w, "x_max>width");
        flag(b.y_max > image_h, "y_max>height");
        flag(b.x_min >= b.x_max, "x_min>=x_max");
        flag(b.y_min >= b.y_max, "y_min>=y_max");
        if (!sides.empty()) out.out_of_bounds.push_back({static_cast<int>(i), sides});
    }
    for (size_t i = 0; i < ann.bboxes.size(); ++i)
        for (size_t j = i + 1; j < ann.bboxes.size(); ++j) {
            const double ov = iou(ann.bboxes[i], ann.bboxes[j]);
            if (ov > overlap_threshold) out.overlaps.push_back({static_cast<int>(i), static_cast<int>(j), ov});
        }
    if (ann.bboxes.size() != ann.contents.size())
        out.count_mismatch = {ann.bboxes.size(), ann.contents.size()};
    if (table_region)
        for (size_t i = 0; i < ann.bboxes.size(); ++i) {
            const BBox& b = ann.bboxes[i];
            const bool intersects = b.x_max > table_region->x_min && b.x_min < table_region->x_max &&
                                    b.y_max > table_region->y_min && b.y_min < table_region->y_max;
            if (!intersects && b.valid()) out.stray.push_back(static_cast<int>(i));
        }
    return out;
}

struct LintReport {
    size_t total = 0;
    size_t affected = 0;
    size_t unreadable = 0;
    double fraction = 0.0;  // affected / total, exact
    std::vector<std::pair<size_t, LintFindings>> findings;  // only samples with findings

    nlohmann::json to_json() const {
        nlohmann::json per_sample = nlohmann::json::array();
        for (const auto& [idx, f] : findings) per_sample.push_back({{"sample", idx}, {"findings", f.to_json()}});
        return {{"total", total},       {"affected", affected}, {"unreadable", unreadable},
                {"fraction", fraction}, {"per_sample", per_sample}};
    }
};

inline LintReport lint_corpus(const std::string& jsonl_path, double overlap_threshold = 0.1) {
    std::ifstream is(jsonl_path);
    if (!is) throw std::runtime_error("lint_corpus: cannot open " + jsonl_path);

    // Image dimensions come from the adjacent manifest when present.
    float image_w = 0, image_h = 0;
    const auto manifest_path = std::filesystem::path(jsonl_path).parent_path() / "manifest.json";
    if (std::ifstream mf(manifest_path); mf) {
        nlohmann::json m = nlohmann::json::parse(mf, nullptr, false);
        if (!m.is_discarded() && m.contains("image_size")) image_w = image_h = m["image_size"].get<float>();
    }

    LintReport report;
    std::string line;
    size_t index = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            ++report.unreadable;
            ++report.total;
            ++index;
            continue;
        }
        Sample s;
        try {
            s = sample_from_json(j);
        } catch (const std::exception&) {
            ++report.unreadable;
            ++report.total;
            ++index;
            continue;
        }
        float w = image_w, h = image_h;
        if (w <= 0) {
            RasterImage img = read_ppm((std::filesystem::path(jsonl_path).parent_path() / s.image_path).string());
            w = static_cast<float>(img.width);
            h = static_cast<float>(img.height);
        }
        LintFindings f = lint_annotation(s.annotation, w, h, overlap_threshold, s.table_region);
        if (f.any()) {
            ++report.affected;
            report.findings.emplace_back(index, std::move(f));
        }
        ++report.total;
        ++index;
    }
    report.fraction = report.total == 0 ? 0.0 : static_cast<double>(report.affected) / static_cast<double>(report.total);
    return report;
}

// ---------------------------------------------------------------------------
// Corpus evaluation
// ---------------------------------------------------------------------------
struct EvalReport {
    std::map<std::string, double> aggregates;                     // metric -> value
    std::vector<std::map<std::string, double>> per_sample;        // teds/steds per sample
    nlohmann::json to_json() const {
        nlohmann::json per = nlohmann::json::array();
        for (const auto& m : per_sample) per.push_back(m);
        return {{"aggregates", aggregates}, {"per_sample", per}};
    }
};

inline std::string gt_html(const Sample& s) {
    auto html = merge_html(s.annotation.structure_tokens, s.annotation.contents);
    if (std::holds_alternative<MergeError>(html))
        throw std::runtime_error("groundtruth failed to merge: " + std::get<MergeError>(html).message);
    return std::get<std::string>(html);
}

// Structure-only prediction HTML: placeholders filled with empty strings.
inline std::string structure_html(const std::vector<std::string>& tokens) {
    size_t placeholders = 0;
    for (const auto& t : tokens)
        if (tok::is_non_empty_cell(t)) ++placeholders;
    auto html = merge_html(tokens, std::vector<std::string>(placeholders, ""));
    return std::holds_alternative<std::string>(html) ? std::get<std::string>(html) : "";
}

// Evaluates the requested metric families over a corpus. structure_model is
// always required; bbox_model for wf1/ap; all three for full TEDS.
inline EvalReport evaluate_corpus(const Corpus& corpus, const TaskModel* structure_model, const TaskModel* bbox_model,
                                  const TaskModel* content_model, const std::set<std::string>& metrics) {
    const bool want_steds = metrics.count("steds") > 0;
    const bool want_teds = metrics.count("teds") > 0;
    const bool want_wf1 = metrics.count("wf1") > 0;
    const bool want_ap = metrics.count("ap") > 0;
    if ((want_steds || want_teds) && !structure_model) throw std::invalid_argument("evaluate_corpus: steds/teds need a structure model");
    if ((want_wf1 || want_ap) && !bbox_model) throw std::invalid_argument("evaluate_corpus: wf1/ap need a bbox model");
    if (want_teds && !content_model) throw std::invalid_argument("evaluate_corpus: teds needs a content model");

    EvalReport report;
    double steds_sum = 0, teds_sum = 0;
    const std::vector<double> car_thresholds = {0.6, 0.7, 0.8, 0.9};
    std::map<double, std::array<size_t, 3>> car_counts;  // threshold -> {tp, pred, gt}
    for (double t : car_thresholds) car_counts[t] = {0, 0, 0};
    std::vector<DetectionSet> ap_preds, ap_gts;

    for (size_t i = 0; i < corpus.samples.size(); ++i) {
        const Sample& s = corpus.samples[i];
        RasterImage img = corpus.load_image(i);
        std::map<std::string, double> row;

        std::vector<std::string> pred_tokens;
        if (structure_model) {
            DecodeResult sd = greedy_decode(*structure_model, img);
            pred_tokens = decode_structure(structure_model->vocab, sd.seq);
        }
        if (want_steds) {
            const double score = teds(structure_html(pred_tokens), gt_html(s), true).score;
            steds_sum += score;
            row["steds"] = score;
        }
        if (want_teds) {
            InferenceResult r = infer(img, *structure_model, *bbox_model, *content_model);
            const double score = teds(r.html, gt_html(s), false).score;
            teds_sum += score;
            row["teds"] = score;
        }
        if (want_wf1 || want_ap) {
            DecodeResult bd = greedy_decode(*bbox_model, img);
            const int bbox_image_size = bbox_model->vocab.size() - Vocab::kNumSpecials - 1;
            DeserializedBoxes pred_boxes = deserialize_bboxes(bd.seq, bbox_image_size);
            if (want_wf1) {
                auto grid = resolve_grid(s.annotation.structure_tokens);
                if (grid) {
                    auto rels = car_relations(*grid);
                    for (double t : car_thresholds) {
                        CarScore cs = car_f1(pred_boxes.boxes, s.annotation.bboxes, rels, t);
                        car_counts[t][0] += cs.true_positives;
                        car_counts[t][1] += cs.predicted;
                        car_counts[t][2] += cs.groundtruth;
                    }
                }
            }
            if (want_ap) {
                // Box confidence: mean probability of its four coordinate tokens.
                DetectionSet pred;
                pred.boxes = pred_boxes.boxes;
                std::vector<float> coord_probs;
                for (size_t k = 1; k < bd.seq.ids.size(); ++k) {
                    const int id = bd.seq.ids[k];
                    if (id >= Vocab::kNumSpecials && id - Vocab::kNumSpecials <= bbox_image_size)
                        coord_probs.push_back(bd.probs[k - 1]);
                }
                for (size_t k = 0; k + 3 < coord_probs.size(); k += 4)
                    pred.scores.push_back(
                        (coord_probs[k] + coord_probs[k + 1] + coord_probs[k + 2] + coord_probs[k + 3]) / 4.0f);
                pred.scores.resize(pred.boxes.size(), 0.5f);
                DetectionSet gt;
                gt.boxes = s.annotation.bboxes;
                ap_preds.push_back(std::move(pred));
                ap_gts.push_back(std::move(gt));
            }
        }
        report.per_sample.push_back(std::move(row));
    }

    const double n = static_cast<double>(corpus.samples.size());
    if (want_steds) report.aggregates["steds"] = n ? steds_sum / n : 0.0;
    if (want_teds) report.aggregates["teds"] = n ? teds_sum / n : 0.0;
    if (want_wf1) {
        std::map<double, double> f1_at;
        for (double t : car_thresholds) {
            const auto [tp, pred, gt] = car_counts[t];
            const double p = pred ? static_cast<double>(tp) / static_cast<double>(pred) : (gt ? 0.0 : 1.0);
            const double r = gt ? static_cast<double>(tp) / static_cast<double>(gt) : (pred ? 0.0 : 1.0);
            f1_at[t] = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
        }
        report.aggregates["f1_iou06"] = f1_at[0.6];
        report.aggregates["wf1"] = wavg_f1(f1_at);
    }
    if (want_ap) {
        ApResult ap = coco_ap_pooled(ap_preds, ap_gts);
        report.aggregates["map"] = ap.map;
        report.aggregates["ap50"] = ap.ap50;
        report.aggregates["ap75"] = ap.ap75;
    }
    return report;
}

}  // namespace tabrec
