// tabrec command line: corpus synthesis, tokenizer/encoder/task training,
// evaluation, linting and end-to-end inference.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tabrec/pipeline.hpp"
#include "tabrec/ssp.hpp"
#include "tabrec/synthgen.hpp"
#include "tabrec/vqvae.hpp"

using nlohmann::json;
using namespace tabrec;

namespace {

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config " + path);
    return json::parse(is);
}

json section(const json& cfg, const char* name) { return cfg.contains(name) ? cfg[name] : json::object(); }

EncoderConfig encoder_from_config(const json& j, int default_image_size) {
    EncoderConfig c = j.contains("preset") ? encoder_preset(j["preset"].get<std::string>()) : encoder_preset("tiny");
    c.image_size = default_image_size;
    if (j.contains("variant"))
        c.variant = j["variant"].get<std::string>() == "hybrid_conv_stem" ? EncoderVariant::hybrid_conv_stem
                                                                          : EncoderVariant::linear_projection;
    if (j.contains("layers")) c.layers = j["layers"].get<int>();
    if (j.contains("heads")) c.heads = j["heads"].get<int>();
    if (j.contains("width")) c.width = j["width"].get<int>();
    if (j.contains("patch_size")) c.patch_size = j["patch_size"].get<int>();
    if (j.contains("image_size")) c.image_size = j["image_size"].get<int>();
    if (j.contains("mlp_ratio")) c.mlp_ratio = j["mlp_ratio"].get<int>();
    return c;
}

int corpus_image_size(const std::string& jsonl_path) {
    const auto manifest = std::filesystem::path(jsonl_path).parent_path() / "manifest.json";
    if (std::ifstream mf(manifest); mf) {
        json m = json::parse(mf, nullptr, false);
        if (!m.is_discarded() && m.contains("image_size")) return m["image_size"].get<int>();
    }
    Corpus c = load_corpus(jsonl_path);
    if (c.samples.empty()) throw std::runtime_error("cannot determine image size of empty corpus " + jsonl_path);
    return c.load_image(0).width;
}

std::vector<RasterImage> corpus_images(const Corpus& corpus) {
    std::vector<RasterImage> images;
    images.reserve(corpus.samples.size());
    for (size_t i = 0; i < corpus.samples.size(); ++i) images.push_back(corpus.load_image(i));
    return images;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << text;
}

int default_max_len(Task task) { return task_max_len(task); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"table recognition toolkit"};
    app.require_subcommand(1);

    uint64_t seed = 0;
    std::string config_path;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--seed", seed, "random seed")->capture_default_str();
        sub->add_option("--config", config_path, "JSON config file");
    };

    // --- synth ---------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    add_common(synth);
    std::string synth_out;
    int synth_count = 100;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--count", synth_count, "number of samples")->capture_default_str();

    // --- train-vqvae ----------------------------------------------------
    auto* tvq = app.add_subcommand("train-vqvae", "train the visual tokenizer");
    add_common(tvq);
    std::string tvq_corpus, tvq_out, tvq_log;
    tvq->add_option("--corpus", tvq_corpus, "corpus.jsonl path")->required();
    tvq->add_option("--out", tvq_out, "checkpoint output path")->required();
    tvq->add_option("--log", tvq_log, "training log CSV path");

    // --- pretrain ---------------------------------------------------------
    auto* pre = app.add_subcommand("pretrain", "masked-patch pretraining of the visual encoder");
    add_common(pre);
    std::string pre_corpus, pre_vqvae, pre_out, pre_log;
    pre->add_option("--corpus", pre_corpus, "corpus.jsonl path")->required();
    pre->add_option("--vqvae", pre_vqvae, "tokenizer checkpoint")->required();
    pre->add_option("--out", pre_out, "encoder checkpoint output")->required();
    pre->add_option("--log", pre_log, "training log CSV path");

    // --- finetune ---------------------------------------------------------
    auto* fin = app.add_subcommand("finetune", "train a task model");
    add_common(fin);
    std::string fin_task, fin_init = "scratch", fin_ssp, fin_corpus, fin_out, fin_log;
    fin->add_option("--task", fin_task, "structure | bbox | content")->required();
    fin->add_option("--init", fin_init, "scratch | ssp")->capture_default_str();
    fin->add_option("--ssp", fin_ssp, "encoder checkpoint for --init ssp");
    fin->add_option("--corpus", fin_corpus, "corpus.jsonl path")->required();
    fin->add_option("--out", fin_out, "checkpoint output path")->required();
    fin->add_option("--log", fin_log, "training log CSV path");

    // --- eval -------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "evaluate models over a corpus");
    add_common(ev);
    std::string ev_metric = "all", ev_corpus, ev_structure, ev_bbox, ev_content, ev_report;
    ev->add_option("--metric", ev_metric, "steds | teds | wf1 | ap | all")->capture_default_str();
    ev->add_option("--corpus", ev_corpus, "corpus.jsonl path")->required();
    ev->add_option("--structure", ev_structure, "structure model checkpoint");
    ev->add_option("--bbox", ev_bbox, "bbox model checkpoint");
    ev->add_option("--content", ev_content, "content model checkpoint");
    ev->add_option("--report", ev_report, "write the full JSON report here");

    // --- lint -------------------------------------------------------------
    auto* li = app.add_subcommand("lint", "annotation consistency report for a corpus");
    add_common(li);
    std::string li_corpus, li_report;
    double li_theta = 0.1;
    li->add_option("--corpus", li_corpus, "corpus.jsonl path")->required();
    li->add_option("--theta", li_theta, "overlap IoU threshold")->capture_default_str();
    li->add_option("--report", li_report, "write the JSON report here");

    // --- infer ------------------------------------------------------------
    auto* in = app.add_subcommand("infer", "image to HTML");
    add_common(in);
    std::string in_image, in_structure, in_bbox, in_content, in_out, in_html;
    in->add_option("--image", in_image, "input PPM image")->required();
    in->add_option("--structure", in_structure, "structure model checkpoint")->required();
    in->add_option("--bbox", in_bbox, "bbox model checkpoint")->required();
    in->add_option("--content", in_content, "content model checkpoint")->required();
    in->add_option("--out", in_out, "result JSON path");
    in->add_option("--html", in_html, "HTML output path");

    // --- tokens -------------------------------------------------------------
    auto* tok_cmd = app.add_subcommand("tokens", "dump the tokenizer index grid for an image");
    add_common(tok_cmd);
    std::string tk_image, tk_vqvae, tk_out;
    tok_cmd->add_option("--image", tk_image, "input PPM image")->required();
    tok_cmd->add_option("--vqvae", tk_vqvae, "tokenizer checkpoint")->required();
    tok_cmd->add_option("--out", tk_out, "grid text output path");

    CLI11_PARSE(app, argc, argv);

    try {
        const json cfg = load_config(config_path);

        if (*synth) {
            GenConfig gen = GenConfig::from_json(section(cfg, "gen"));
            CorpusManifest m = make_corpus(gen, seed, synth_count, synth_out);
            std::printf("wrote %d samples to %s\n", m.count, synth_out.c_str());
            for (const auto& [style, n] : m.style_counts) std::printf("  %-12s %d\n", style.c_str(), n);
            for (const auto& [kind, idxs] : m.fault_indices)
                if (!idxs.empty()) std::printf("  injected %-14s %zu\n", kind.c_str(), idxs.size());
        } else if (*tvq) {
            VqvaeConfig vcfg = VqvaeConfig::from_json(section(cfg, "vqvae"));
            Corpus corpus = load_corpus(tvq_corpus);
            VqvaeTrainResult r = train_vqvae(corpus_images(corpus), vcfg, seed);
            if (!tvq_log.empty()) write_text(tvq_log, r.log_csv);
            if (r.error) {
                std::fprintf(stderr, "error: %s\n", r.error->c_str());
                return 1;
            }
            save_checkpoint(vqvae_checkpoint(r.model, vcfg.steps), tvq_out);
            std::printf("final loss %.6f over %zu steps; checkpoint %s\n", r.loss_curve.back(), r.loss_curve.size(),
                        tvq_out.c_str());
        } else if (*pre) {
            VqvaeModel vq = vqvae_from_checkpoint(load_checkpoint(pre_vqvae));
            Corpus corpus = load_corpus(pre_corpus);
            const int img_size = corpus_image_size(pre_corpus);
            EncoderConfig enc = encoder_from_config(section(cfg, "encoder"), img_size);
            SspConfig scfg = SspConfig::from_json(section(cfg, "ssp"));
            SspTrainResult r = pretrain(corpus_images(corpus), vq, enc, scfg, seed);
            if (!pre_log.empty()) write_text(pre_log, r.log_csv);
            if (r.error) {
                std::fprintf(stderr, "error: %s\n", r.error->c_str());
                return 1;
            }
            save_checkpoint(ssp_encoder_checkpoint(r.model, scfg.steps), pre_out);
            std::printf("masked top-1 %.4f; encoder checkpoint %s\n", r.final_masked_top1, pre_out.c_str());
        } else if (*fin) {
            Task task = fin_task == "structure" ? Task::structure
                        : fin_task == "bbox"    ? Task::bbox
                        : fin_task == "content" ? Task::content
                                                : throw std::runtime_error("unknown task " + fin_task);
            Corpus corpus = load_corpus(fin_corpus);
            const int img_size = corpus_image_size(fin_corpus);
            const json mcfg_json = section(cfg, "model");
            const int enc_default = task == Task::content ? mcfg_json.value("crop_size", 32) : img_size;
            TaskModelConfig mcfg;
            mcfg.encoder = encoder_from_config(section(cfg, "encoder"), enc_default);
            mcfg.decoder_layers = mcfg_json.value("decoder_layers", 4);
            mcfg.task = task;
            mcfg.max_len = mcfg_json.value("max_len", default_max_len(task));
            mcfg.dropout = mcfg_json.value("dropout", 0.1f);

            Vocab vocab = build_task_vocab(task, corpus, img_size);
            Rng init_rng = Rng(seed).child(1);
            TaskModel model = TaskModel::make(mcfg, std::move(vocab), init_rng);
            if (fin_init == "ssp") {
                if (fin_ssp.empty()) throw std::runtime_error("--init ssp requires --ssp <checkpoint>");
                LoadReport rep = load_ssp_encoder(model, load_checkpoint(fin_ssp));
                std::printf("loaded %zu encoder tensors, 0 unmatched\n", rep.matched);
            } else if (fin_init != "scratch") {
                throw std::runtime_error("--init must be scratch or ssp");
            }
            auto pairs = build_task_dataset(task, corpus, model.vocab, mcfg.encoder.image_size, img_size);
            TrainConfig tcfg = TrainConfig::from_json(section(cfg, "train"));
            TrainResult r = train_task_model(model, pairs, tcfg, seed);
            if (!fin_log.empty()) write_text(fin_log, r.log_csv);
            if (r.error) {
                std::fprintf(stderr, "error: %s\n", r.error->c_str());
                return 1;
            }
            save_checkpoint(task_model_checkpoint(model, r.steps_run), fin_out);
            std::printf("final loss %.6f after %d steps; checkpoint %s\n", r.final_loss, r.steps_run, fin_out.c_str());
        } else if (*ev) {
            Corpus corpus = load_corpus(ev_corpus);
            std::optional<TaskModel> structure, bbox, content;
            if (!ev_structure.empty()) structure = task_model_from_checkpoint(load_checkpoint(ev_structure));
            if (!ev_bbox.empty()) bbox = task_model_from_checkpoint(load_checkpoint(ev_bbox));
            if (!ev_content.empty()) content = task_model_from_checkpoint(load_checkpoint(ev_content));
            std::set<std::string> metrics;
            if (ev_metric == "all") {
                metrics = {"steds"};
                if (bbox) metrics.insert({"wf1", "ap"});
                if (bbox && content) metrics.insert("teds");
            } else {
                metrics = {ev_metric};
            }
            EvalReport report = evaluate_corpus(corpus, structure ? &*structure : nullptr, bbox ? &*bbox : nullptr,
                                                content ? &*content : nullptr, metrics);
            if (!ev_report.empty()) write_text(ev_report, report.to_json().dump(2) + "\n");
            if (ev_metric != "all") {
                const char* key = ev_metric == "steds"  ? "steds"
                                  : ev_metric == "teds" ? "teds"
                                  : ev_metric == "wf1"  ? "wf1"
                                                        : "map";
                std::printf("%.4f\n", report.aggregates.at(key));
            } else {
                // The usual table-recognition metric columns.
                static const std::pair<const char*, const char*> rows[] = {
                    {"steds", "S-TEDS"}, {"teds", "TEDS"},          {"ap50", "AP50"}, {"ap75", "AP75"},
                    {"map", "mAP"},      {"f1_iou06", "IoU-0.6 F1"}, {"wf1", "WF1"}};
                for (const auto& [key, label] : rows)
                    if (report.aggregates.count(key)) std::printf("%-12s %.4f\n", label, report.aggregates.at(key));
            }
        } else if (*li) {
            LintReport report = lint_corpus(li_corpus, li_theta);
            if (!li_report.empty()) write_text(li_report, report.to_json().dump(2) + "\n");
            std::printf("%.4f\n", report.fraction);
            std::printf("%zu of %zu annotations have findings (%zu unreadable lines)\n", report.affected, report.total,
                        report.unreadable);
        } else if (*in) {
            TaskModel structure = task_model_from_checkpoint(load_checkpoint(in_structure));
            TaskModel bbox = task_model_from_checkpoint(load_checkpoint(in_bbox));
            TaskModel content = task_model_from_checkpoint(load_checkpoint(in_content));
            RasterImage image = read_ppm(in_image);
            InferenceResult res = infer(image, structure, bbox, content);
            if (!in_out.empty()) write_text(in_out, res.to_json().dump(2) + "\n");
            if (!in_html.empty()) write_text(in_html, res.html + "\n");
            std::printf("%zu structure tokens, %zu boxes, %zu contents%s\n", res.structure_tokens.size(),
                        res.bboxes.size(), res.contents.size(), res.flags.structure_invalid ? " (structure invalid)" : "");
            if (!res.html.empty()) std::printf("%s\n", res.html.c_str());
        } else if (*tok_cmd) {
            VqvaeModel vq = vqvae_from_checkpoint(load_checkpoint(tk_vqvae));
            TokenGrid grid = dump_token_grid(vq, read_ppm(tk_image));
            if (!tk_out.empty()) write_text(tk_out, grid.text);
            std::printf("%s", grid.text.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
