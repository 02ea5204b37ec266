#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabrec/image.hpp"
#include "tabrec/table.hpp"

namespace tabrec {

// One corpus record: a rendered table image plus its groundtruth annotation.
// table_region is the pixel rectangle the table occupies, used by the linter
// to spot stray annotations outside the table.
struct Sample {
    std::string image_path;
    Annotation annotation;
    std::string style;
    std::optional<BBox> table_region;
};

namespace detail {
// Rounded to 1e-4 so JSON round-trips print cleanly and deterministically.
inline double json_coord(float v) { return std::round(static_cast<double>(v) * 10000.0) / 10000.0; }
}  // namespace detail

inline nlohmann::json sample_to_json(const Sample& s) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const BBox& b : s.annotation.bboxes)
        boxes.push_back({detail::json_coord(b.x_min), detail::json_coord(b.y_min), detail::json_coord(b.x_max),
                         detail::json_coord(b.y_max)});
    nlohmann::json j = {{"image_path", s.image_path},
                        {"structure_tokens", s.annotation.structure_tokens},
                        {"bboxes", boxes},
                        {"contents", s.annotation.contents},
                        {"style", s.style}};
    if (s.table_region)
        j["table_region"] = {detail::json_coord(s.table_region->x_min), detail::json_coord(s.table_region->y_min),
                             detail::json_coord(s.table_region->x_max), detail::json_coord(s.table_region->y_max)};
    return j;
}

inline Sample sample_from_json(const nlohmann::json& j) {
    Sample s;
    s.image_path = j.at("image_path").get<std::string>();
    s.annotation.structure_tokens = j.at("structure_tokens").get<std::vector<std::string>>();
    for (const auto& b : j.at("bboxes"))
        s.annotation.bboxes.push_back(
            {b.at(0).get<float>(), b.at(1).get<float>(), b.at(2).get<float>(), b.at(3).get<float>()});
    s.annotation.contents = j.at("contents").get<std::vector<std::string>>();
    s.style = j.value("style", "");
    if (j.contains("table_region")) {
        const auto& r = j["table_region"];
        s.table_region = BBox{r.at(0).get<float>(), r.at(1).get<float>(), r.at(2).get<float>(), r.at(3).get<float>()};
    }
    return s;
}

struct Corpus {
    std::filesystem::path root;  // directory holding corpus.jsonl and images
    std::vector<Sample> samples;

    RasterImage load_image(size_t index) const {
        return read_ppm((root / samples.at(index).image_path).string());
    }
};

inline Corpus load_corpus(const std::string& jsonl_path) {
    std::ifstream is(jsonl_path);
    if (!is) throw std::runtime_error("load_corpus: cannot open " + jsonl_path);
    Corpus corpus;
    corpus.root = std::filesystem::path(jsonl_path).parent_path();
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        corpus.samples.push_back(sample_from_json(nlohmann::json::parse(line)));
    }
    return corpus;
}

}  // namespace tabrec
