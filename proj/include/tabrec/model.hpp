#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabrec/checkpoint.hpp"
#include "tabrec/codec.hpp"
#include "tabrec/corpus.hpp"
#include "tabrec/encoder.hpp"
#include "tabrec/optim.hpp"
#include "tabrec/transformer.hpp"

namespace tabrec {

struct TaskModelConfig {
    EncoderConfig encoder;
    int decoder_layers = 4;
    Task task = Task::structure;
    int max_len = kMaxLenStructure;
    float dropout = 0.1f;

    nlohmann::json to_json() const {
        return {{"encoder", encoder.to_json()},
                {"decoder_layers", decoder_layers},
                {"task", task_name(task)},
                {"max_len", max_len},
                {"dropout", dropout}};
    }

    static TaskModelConfig from_json(const nlohmann::json& j) {
        TaskModelConfig c;
        c.encoder = EncoderConfig::from_json(j.at("encoder"));
        c.decoder_layers = j.at("decoder_layers").get<int>();
        const std::string t = j.at("task").get<std::string>();
        c.task = t == "bbox" ? Task::bbox : t == "content" ? Task::content : Task::structure;
        c.max_len = j.at("max_len").get<int>();
        c.dropout = j.value("dropout", 0.1f);
        return c;
    }
};

// One image-to-sequence model: visual encoder + autoregressive decoder over
// the task vocabulary. The decoder never knows which task it serves; only the
// vocabulary, maximum length and training pairs differ.
struct TaskModel {
    TaskModelConfig config;
    Vocab vocab;
    VisualEncoder encoder;
    Tensor tok_emb;  // (V, width)
    Tensor dec_pos;  // (max_len, width)
    std::vector<DecoderBlock> dec_blocks;
    LayerNormParams dec_lnf;
    Linear head;

    static TaskModel make(const TaskModelConfig& cfg, Vocab vocab, Rng& rng) {
        TaskModel m;
        m.config = cfg;
        m.vocab = std::move(vocab);
        m.encoder = VisualEncoder::make(cfg.encoder, rng);
        const int D = cfg.encoder.width;
        m.tok_emb = randn({m.vocab.size(), D}, 0.02f, rng);
        m.dec_pos = randn({cfg.max_len, D}, 0.02f, rng);
        for (int i = 0; i < cfg.decoder_layers; ++i)
            m.dec_blocks.push_back(DecoderBlock::make(D, cfg.encoder.heads, cfg.encoder.mlp_ratio, rng));
        m.dec_lnf = LayerNormParams::make(D);
        m.head = Linear::make(D, m.vocab.size(), rng);
        return m;
    }

    NamedParams named_params() const {
        NamedParams out;
        encoder.collect(out, "enc");
        reg(out, "dec.tok", tok_emb);
        reg(out, "dec.pos", dec_pos);
        for (size_t i = 0; i < dec_blocks.size(); ++i) dec_blocks[i].collect(out, "dec.b" + std::to_string(i));
        dec_lnf.collect(out, "dec.lnf");
        head.collect(out, "dec.head");
        return out;
    }

    // Decoder stack over already-encoded memory. input_ids is (B, L) flattened
    // row-major; returns logits (B, L, V).
    Tensor decode_logits(const Tensor& memory, std::span<const int> input_ids, int B, int L, float drop_p,
                         Rng* drop_rng) const {
        if (L > config.max_len)
            throw std::invalid_argument("decoder input of length " + std::to_string(L) + " exceeds max_len " +
                                        std::to_string(config.max_len));
        Tensor x = reshape(embedding(tok_emb, input_ids), {B, L, config.encoder.width});
        std::vector<int> pos(static_cast<size_t>(L));
        for (int i = 0; i < L; ++i) pos[static_cast<size_t>(i)] = i;
        x = add(x, embedding(dec_pos, pos));
        Tensor mask = causal_mask(L);
        for (const auto& b : dec_blocks) x = b(x, memory, mask, drop_p, drop_rng);
        return head(dec_lnf(x));
    }

    Tensor encode(const std::vector<RasterImage>& images, float drop_p = 0.0f, Rng* drop_rng = nullptr) const {
        return encoder(images, drop_p, drop_rng);
    }
};

// Teacher-forced forward for one image: target_ids is the full sequence
// starting at BOS; row i of the logits scores the token following prefix
// target_ids[0..i].
inline Tensor forward_teacher_forced(const TaskModel& model, const RasterImage& image, std::span<const int> target_ids) {
    Tensor memory = model.encode({image});
    return reshape(model.decode_logits(memory, target_ids, 1, static_cast<int>(target_ids.size()), 0.0f, nullptr),
                   {static_cast<int>(target_ids.size()), model.vocab.size()});
}

struct DecodeResult {
    TokenSeq seq;               // BOS ... EOS (EOS absent when truncated)
    std::vector<float> probs;   // model probability of each emitted token
    bool truncated = false;
};

// Greedy autoregressive decoding: argmax each step (ties to the lowest id),
// stop at EOS or max_len tokens total.
inline DecodeResult greedy_decode(const TaskModel& model, const RasterImage& image, int max_len = 0) {
    if (max_len <= 0) max_len = model.config.max_len;
    max_len = std::min(max_len, model.config.max_len);
    DecodeResult res;
    res.seq.task = model.config.task;
    res.seq.ids = {Vocab::kBos};
    Tensor memory = model.encode({image});
    const int V = model.vocab.size();
    while (static_cast<int>(res.seq.ids.size()) < max_len) {
        const int L = static_cast<int>(res.seq.ids.size());
        Tensor logits = model.decode_logits(memory, res.seq.ids, 1, L, 0.0f, nullptr);
        const float* row = logits.data() + static_cast<int64_t>(L - 1) * V;
        int best = 0;
        for (int k = 1; k < V; ++k)
            if (row[k] > row[best]) best = k;
        // Softmax probability of the chosen token.
        float mx = row[0];
        for (int k = 1; k < V; ++k) mx = std::max(mx, row[k]);
        double denom = 0.0;
        for (int k = 0; k < V; ++k) denom += std::exp(static_cast<double>(row[k]) - mx);
        res.probs.push_back(static_cast<float>(std::exp(static_cast<double>(row[best]) - mx) / denom));
        res.seq.ids.push_back(best);
        if (best == Vocab::kEos) return res;
    }
    res.truncated = true;
    return res;
}

// ---------------------------------------------------------------------------
// Datasets: (image, token sequence) pairs assembled through the codec.
// ---------------------------------------------------------------------------
struct TrainPair {
    RasterImage image;
    std::vector<int> ids;  // BOS ... EOS
};

inline std::vector<TrainPair> build_task_dataset(Task task, const Corpus& corpus, const Vocab& vocab,
                                                 int encoder_image_size, int corpus_image_size) {
    std::vector<TrainPair> pairs;
    for (size_t i = 0; i < corpus.samples.size(); ++i) {
        const Sample& s = corpus.samples[i];
        RasterImage img = corpus.load_image(i);
        switch (task) {
            case Task::structure: {
                pairs.push_back({std::move(img), encode_structure(vocab, s.annotation.structure_tokens).ids});
                break;
            }
            case Task::bbox: {
                auto seq = serialize_bboxes(s.annotation.bboxes, corpus_image_size);
                if (std::holds_alternative<SerializeError>(seq))
                    throw std::runtime_error("build_task_dataset: " + std::get<SerializeError>(seq).message);
                pairs.push_back({std::move(img), std::get<TokenSeq>(seq).ids});
                break;
            }
            case Task::content: {
                // One pair per non-empty cell: the quantized groundtruth box
                // cut from the image, letterboxed to the model input size.
                for (size_t k = 0; k < s.annotation.bboxes.size() && k < s.annotation.contents.size(); ++k) {
                    const QuantizedBox q = quantize_bbox(s.annotation.bboxes[k], corpus_image_size);
                    CropResult crop = letterbox_crop(img, static_cast<float>(q.x_min), static_cast<float>(q.y_min),
                                                     static_cast<float>(q.x_max), static_cast<float>(q.y_max),
                                                     encoder_image_size);
                    pairs.push_back({std::move(crop.image), encode_content(vocab, s.annotation.contents[k]).ids});
                }
                break;
            }
        }
    }
    return pairs;
}

inline Vocab build_task_vocab(Task task, const Corpus& corpus, int image_size) {
    switch (task) {
        case Task::structure: return build_structure_vocab();
        case Task::bbox: return build_coord_vocab(image_size);
        case Task::content: {
            std::vector<std::string> contents;
            for (const Sample& s : corpus.samples)
                for (const auto& c : s.annotation.contents) contents.push_back(c);
            return build_content_vocab(contents);
        }
    }
    throw std::invalid_argument("build_task_vocab: bad task");
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------
struct TrainConfig {
    int steps = 300;
    int warmup_steps = 30;
    float lr = 1e-3f;
    float weight_decay = 0.01f;
    float clip_norm = 1.0f;
    int batch_size = 8;
    float dropout = 0.1f;
    int check_every = 0;  // 0: never call stop_check

    nlohmann::json to_json() const {
        return {{"steps", steps},       {"warmup_steps", warmup_steps}, {"lr", lr},
                {"weight_decay", weight_decay}, {"clip_norm", clip_norm}, {"batch_size", batch_size},
                {"dropout", dropout},   {"check_every", check_every}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.steps = j.value("steps", c.steps);
        c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.dropout = j.value("dropout", c.dropout);
        c.check_every = j.value("check_every", c.check_every);
        return c;
    }
};

struct TrainResult {
    std::string log_csv;  // step,loss,lr,token_acc
    double final_loss = 0.0;
    int steps_run = 0;
    std::optional<std::string> error;
};

// Minimizes the sequence negative log-likelihood with AdamW under the
// cosine-warmup schedule; teacher forcing with PAD masked out of the loss.
// stop_check, when configured, may end training early (used for exact-match
// memorization checks); it must not touch any of the training RNG streams.
inline TrainResult train_task_model(TaskModel& model, const std::vector<TrainPair>& pairs, const TrainConfig& cfg,
                                    uint64_t seed,
                                    const std::function<bool(const TaskModel&, int)>& stop_check = nullptr) {
    if (pairs.empty()) throw std::invalid_argument("train_task_model: no training pairs");
    for (const auto& p : pairs)
        if (static_cast<int>(p.ids.size()) > model.config.max_len)
            throw std::invalid_argument("train_task_model: sequence of " + std::to_string(p.ids.size()) +
                                        " tokens exceeds max_len " + std::to_string(model.config.max_len));

    Rng order_rng = Rng(seed).child(11);
    Rng drop_rng = Rng(seed).child(12);

    NamedParams named = model.named_params();
    std::vector<Tensor> params;
    for (auto& [n, t] : named)
        if (t.requires_grad()) params.push_back(t);
    AdamWState opt(AdamWConfig{.lr = cfg.lr, .weight_decay = cfg.weight_decay});
    LrSchedule sched{cfg.lr, cfg.warmup_steps, cfg.steps};

    TrainResult res;
    res.log_csv = "step,loss,lr,token_acc\n";
    const int B = std::min<int>(cfg.batch_size, static_cast<int>(pairs.size()));
    std::vector<size_t> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size();
    char line[96];

    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<size_t> batch;
        for (int b = 0; b < B; ++b) {
            if (cursor == order.size()) {
                for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
                cursor = 0;
            }
            batch.push_back(order[cursor++]);
        }
        int Lmax = 2;
        for (size_t idx : batch) Lmax = std::max(Lmax, static_cast<int>(pairs[idx].ids.size()));
        const int L = Lmax - 1;

        std::vector<int> inputs(static_cast<size_t>(B) * L, Vocab::kPad);
        std::vector<int> targets(static_cast<size_t>(B) * L, Vocab::kPad);
        std::vector<float> mask(static_cast<size_t>(B) * L, 0.0f);
        std::vector<RasterImage> images;
        for (int b = 0; b < B; ++b) {
            const auto& p = pairs[batch[static_cast<size_t>(b)]];
            images.push_back(p.image);
            for (size_t k = 0; k + 1 < p.ids.size(); ++k) {
                inputs[static_cast<size_t>(b) * L + k] = p.ids[k];
                targets[static_cast<size_t>(b) * L + k] = p.ids[k + 1];
                mask[static_cast<size_t>(b) * L + k] = 1.0f;
            }
        }

        Tape tape;
        double loss_val = 0.0;
        double acc = 0.0;
        {
            TapeScope scope(tape);
            Tensor memory = model.encode(images, cfg.dropout, &drop_rng);
            Tensor logits = model.decode_logits(memory, inputs, B, L, cfg.dropout, &drop_rng);
            Tensor flat = reshape(logits, {B * L, model.vocab.size()});
            Tensor loss = cross_entropy(flat, targets, mask);
            loss_val = loss.item();

            int64_t hits = 0, total = 0;
            const int V = model.vocab.size();
            for (int64_t r = 0; r < static_cast<int64_t>(B) * L; ++r) {
                if (mask[static_cast<size_t>(r)] == 0.0f) continue;
                const float* row = flat.data() + r * V;
                int best = 0;
                for (int k = 1; k < V; ++k)
                    if (row[k] > row[best]) best = k;
                hits += best == targets[static_cast<size_t>(r)];
                ++total;
            }
            acc = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;

            backward(tape, loss);
        }

        const float lr = lr_at(sched, step);
        clip_grad_norm(params, cfg.clip_norm);
        if (auto err = adamw_step(params, opt, lr)) {
            res.error = *err;
            return res;
        }
        zero_grads(params);

        std::snprintf(line, sizeof(line), "%d,%.6f,%.6g,%.4f\n", step, loss_val, lr, acc);
        res.log_csv += line;
        res.final_loss = loss_val;
        res.steps_run = step + 1;

        if (stop_check && cfg.check_every > 0 && (step + 1) % cfg.check_every == 0 && stop_check(model, step + 1)) {
            res.log_csv += "# early stop at step " + std::to_string(step + 1) + "\n";
            return res;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Checkpointing and encoder transfer
// ---------------------------------------------------------------------------
inline Checkpoint task_model_checkpoint(const TaskModel& m, int step) {
    Checkpoint ckpt;
    ckpt.meta = {{"kind", "task_model"},
                 {"config", m.config.to_json()},
                 {"vocab", m.vocab.to_json()},
                 {"step", step}};
    for (const auto& [name, t] : m.named_params()) ckpt.add(name, t);
    return ckpt;
}

inline TaskModel task_model_from_checkpoint(const Checkpoint& ckpt) {
    TaskModelConfig cfg = TaskModelConfig::from_json(ckpt.meta.at("config"));
    Vocab vocab = Vocab::from_json(ckpt.meta.at("vocab"));
    Rng rng(0);
    TaskModel m = TaskModel::make(cfg, std::move(vocab), rng);
    for (auto& [name, t] : m.named_params()) {
        const Tensor* src = ckpt.find(name);
        if (!src) throw std::runtime_error("task_model_from_checkpoint: missing tensor " + name);
        if (src->shape() != t.shape())
            throw std::runtime_error("task_model_from_checkpoint: shape mismatch for " + name);
        std::copy(src->values().begin(), src->values().end(), t.values().begin());
    }
    return m;
}

struct LoadReport {
    size_t matched = 0;
    std::vector<std::string> unmatched_model;       // encoder tensors the checkpoint lacks
    std::vector<std::string> unmatched_checkpoint;  // checkpoint tensors the model lacks
};

// Replaces the encoder weights from a pretraining checkpoint; the decoder is
// untouched. Any shape or name mismatch rejects the whole load.
inline LoadReport load_ssp_encoder(TaskModel& model, const Checkpoint& ckpt) {
    if (ckpt.meta.contains("encoder_config")) {
        const EncoderConfig from_ckpt = EncoderConfig::from_json(ckpt.meta.at("encoder_config"));
        if (!(from_ckpt == model.config.encoder))
            throw std::runtime_error("load_ssp_encoder: encoder config mismatch: checkpoint " +
                                     from_ckpt.to_json().dump() + " vs model " +
                                     model.config.encoder.to_json().dump());
    }
    NamedParams enc_params;
    model.encoder.collect(enc_params, "enc");

    LoadReport report;
    std::vector<std::pair<Tensor, const Tensor*>> staged;
    for (auto& [name, t] : enc_params) {
        const Tensor* src = ckpt.find(name);
        if (!src) {
            report.unmatched_model.push_back(name);
            continue;
        }
        if (src->shape() != t.shape())
            throw std::runtime_error("load_ssp_encoder: shape mismatch for " + name + ": checkpoint " +
                                     shape_str(src->shape()) + " vs model " + shape_str(t.shape()));
        staged.emplace_back(t, src);
    }
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.rfind("enc.", 0) != 0) continue;
        bool known = false;
        for (const auto& [n2, t2] : enc_params) known |= n2 == name;
        if (!known) report.unmatched_checkpoint.push_back(name);
    }
    if (!report.unmatched_model.empty() || !report.unmatched_checkpoint.empty()) {
        std::string msg = "load_ssp_encoder: tensor name mismatch;";
        for (const auto& n : report.unmatched_model) msg += " model-only " + n;
        for (const auto& n : report.unmatched_checkpoint) msg += " checkpoint-only " + n;
        throw std::runtime_error(msg);
    }
    for (auto& [dst, src] : staged) {
        std::copy(src->values().begin(), src->values().end(), dst.values().begin());
        ++report.matched;
    }
    return report;
}

}  // namespace tabrec
