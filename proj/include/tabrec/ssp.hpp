#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "tabrec/checkpoint.hpp"
#include "tabrec/encoder.hpp"
#include "tabrec/optim.hpp"
#include "tabrec/vqvae.hpp"

namespace tabrec {

// Sorted masked-patch index set.
struct MaskPlan {
    std::vector<int> indices;
    float ratio = 0.0f;
};

// Uniform sample without replacement of round(ratio * N) patch positions.
inline MaskPlan sample_mask(int num_patches, float ratio, Rng& rng) {
    if (ratio <= 0.0f || ratio >= 1.0f) throw std::invalid_argument("sample_mask: ratio must lie in (0, 1)");
    const int count = static_cast<int>(std::floor(static_cast<double>(ratio) * num_patches + 0.5));
    if (count == 0) throw std::invalid_argument("sample_mask: round(ratio*N) is zero");
    std::vector<int> all(static_cast<size_t>(num_patches));
    for (int i = 0; i < num_patches; ++i) all[static_cast<size_t>(i)] = i;
    for (int i = 0; i < count; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(num_patches - i)));
        std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(j)]);
    }
    MaskPlan plan;
    plan.ratio = ratio;
    plan.indices.assign(all.begin(), all.begin() + count);
    std::sort(plan.indices.begin(), plan.indices.end());
    return plan;
}

// Masked-patch token predictor: the visual encoder plus a learned MASK
// embedding and a per-position classification head over the codebook.
struct SspModel {
    VisualEncoder encoder;
    Tensor mask_emb;  // (1, width)
    LayerNormParams head_ln;
    Linear head;      // width -> K
    int codebook_size = 0;

    static SspModel make(const EncoderConfig& cfg, int codebook_size, Rng& rng) {
        SspModel m;
        m.encoder = VisualEncoder::make(cfg, rng);
        m.mask_emb = randn({1, cfg.width}, 0.02f, rng);
        m.head_ln = LayerNormParams::make(cfg.width);
        m.head = Linear::make(cfg.width, codebook_size, rng);
        m.codebook_size = codebook_size;
        return m;
    }

    NamedParams named_params() const {
        NamedParams out;
        encoder.collect(out, "enc");
        reg(out, "ssp.mask", mask_emb);
        head_ln.collect(out, "ssp.head_ln");
        head.collect(out, "ssp.head");
        return out;
    }
};

// Per-position codebook logits with masked patches replaced by the MASK
// embedding: x = emb * (1 - M) + m ⊗ mask_emb, then the shared encoder stack.
inline Tensor ssp_logits(const SspModel& m, const std::vector<RasterImage>& images,
                         const std::vector<MaskPlan>& plans, float drop_p = 0.0f, Rng* drop_rng = nullptr) {
    const int B = static_cast<int>(images.size());
    const int N = m.encoder.config.num_patches();
    const int D = m.encoder.config.width;
    if (plans.size() != images.size()) throw std::invalid_argument("ssp_logits: one mask plan per image required");

    Tensor x = m.encoder.embed(images);  // (B, N, D)
    Tensor keep = Tensor::full({B, N, D}, 1.0f);
    Tensor mask_col = Tensor::zeros({B, N, 1});
    for (int b = 0; b < B; ++b)
        for (int idx : plans[static_cast<size_t>(b)].indices) {
            if (idx < 0 || idx >= N)
                throw std::invalid_argument("ssp_logits: mask index " + std::to_string(idx) + " outside the " +
                                            std::to_string(N) + "-patch grid");
            mask_col.data()[(static_cast<int64_t>(b) * N + idx)] = 1.0f;
            float* row = keep.data() + (static_cast<int64_t>(b) * N + idx) * D;
            std::fill(row, row + D, 0.0f);
        }
    x = add(mul(x, keep), matmul(mask_col, m.mask_emb));
    x = m.encoder.encode_embedded(x, drop_p, drop_rng);
    return m.head(m.head_ln(x));  // (B, N, K)
}

// Groundtruth visual tokens for an image batch under a frozen tokenizer.
inline std::vector<int> vqvae_tokens(const VqvaeModel& vq, const std::vector<RasterImage>& images) {
    std::vector<int> out;
    for (const auto& img : images) {
        std::vector<int> grid = quantize(encode_logits(vq, img));
        out.insert(out.end(), grid.begin(), grid.end());
    }
    return out;
}

// Cross-entropy over masked positions only, averaged over the masked count.
inline Tensor ssp_loss(const SspModel& m, const VqvaeModel& vq, const std::vector<RasterImage>& images,
                       const std::vector<MaskPlan>& plans, float drop_p = 0.0f, Rng* drop_rng = nullptr) {
    const int N = m.encoder.config.num_patches();
    if (vq.config.patch_size != m.encoder.config.patch_size)
        throw std::invalid_argument("ssp_loss: tokenizer stride " + std::to_string(vq.config.patch_size) +
                                    " differs from encoder patch size " + std::to_string(m.encoder.config.patch_size));
    Tensor logits = ssp_logits(m, images, plans, drop_p, drop_rng);
    const std::vector<int> targets = vqvae_tokens(vq, images);
    std::vector<float> mask(targets.size(), 0.0f);
    for (size_t b = 0; b < plans.size(); ++b)
        for (int idx : plans[b].indices) mask[b * static_cast<size_t>(N) + static_cast<size_t>(idx)] = 1.0f;
    return cross_entropy(reshape(logits, {static_cast<int>(targets.size()), m.codebook_size}), targets, mask);
}

struct SspConfig {
    float mask_ratio = 0.4f;
    int steps = 400;
    int warmup_steps = 40;
    float lr = 1e-3f;
    float weight_decay = 0.01f;
    int batch_size = 8;
    float dropout = 0.0f;

    nlohmann::json to_json() const {
        return {{"mask_ratio", mask_ratio}, {"steps", steps},           {"warmup_steps", warmup_steps},
                {"lr", lr},                 {"weight_decay", weight_decay}, {"batch_size", batch_size},
                {"dropout", dropout}};
    }

    static SspConfig from_json(const nlohmann::json& j) {
        SspConfig c;
        c.mask_ratio = j.value("mask_ratio", c.mask_ratio);
        c.steps = j.value("steps", c.steps);
        c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.dropout = j.value("dropout", c.dropout);
        return c;
    }
};

struct SspTrainResult {
    SspModel model;
    std::string log_csv;  // step,loss,lr,masked_top1
    double final_masked_top1 = 0.0;
    std::optional<std::string> error;
};

// Masked top-1 accuracy of the head over a fixed probe set.
inline double masked_top1_accuracy(const SspModel& m, const VqvaeModel& vq, const std::vector<RasterImage>& images,
                                   const std::vector<MaskPlan>& plans) {
    Tensor logits = ssp_logits(m, images, plans);
    const std::vector<int> targets = vqvae_tokens(vq, images);
    const int N = m.encoder.config.num_patches();
    const int K = m.codebook_size;
    int64_t hits = 0, total = 0;
    for (size_t b = 0; b < plans.size(); ++b)
        for (int idx : plans[b].indices) {
            const int64_t row = static_cast<int64_t>(b) * N + idx;
            const float* r = logits.data() + row * K;
            int best = 0;
            for (int k = 1; k < K; ++k)
                if (r[k] > r[best]) best = k;
            hits += best == targets[static_cast<size_t>(row)];
            ++total;
        }
    return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

// Self-supervised pretraining against a frozen tokenizer. The returned model
// exports its encoder (and only its encoder) for task initialization.
inline SspTrainResult pretrain(const std::vector<RasterImage>& corpus, const VqvaeModel& vq, const EncoderConfig& enc_cfg,
                               const SspConfig& cfg, uint64_t seed) {
    if (corpus.empty()) throw std::invalid_argument("pretrain: empty corpus");
    Rng init_rng = Rng(seed).child(21);
    Rng order_rng = Rng(seed).child(22);
    Rng mask_rng = Rng(seed).child(23);
    Rng drop_rng = Rng(seed).child(24);

    SspTrainResult res{SspModel::make(enc_cfg, vq.config.codebook_size, init_rng), "step,loss,lr,masked_top1\n", 0.0,
                       std::nullopt};
    SspModel& model = res.model;
    const int N = enc_cfg.num_patches();

    NamedParams named = model.named_params();
    std::vector<Tensor> params;
    for (auto& [n, t] : named) params.push_back(t);
    AdamWState opt(AdamWConfig{.lr = cfg.lr, .weight_decay = cfg.weight_decay});
    LrSchedule sched{cfg.lr, cfg.warmup_steps, cfg.steps};

    const int B = std::min<int>(cfg.batch_size, static_cast<int>(corpus.size()));
    std::vector<size_t> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size();
    char line[96];

    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<RasterImage> images;
        std::vector<MaskPlan> plans;
        for (int b = 0; b < B; ++b) {
            if (cursor == order.size()) {
                for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
                cursor = 0;
            }
            images.push_back(corpus[order[cursor++]]);
            plans.push_back(sample_mask(N, cfg.mask_ratio, mask_rng));
        }

        Tape tape;
        double loss_val = 0.0;
        {
            TapeScope scope(tape);
            Tensor loss = ssp_loss(model, vq, images, plans, cfg.dropout, &drop_rng);
            loss_val = loss.item();
            backward(tape, loss);
        }
        const float lr = lr_at(sched, step);
        clip_grad_norm(params, 1.0);
        if (auto err = adamw_step(params, opt, lr)) {
            res.error = *err;
            return res;
        }
        zero_grads(params);

        double top1 = -1.0;
        if ((step + 1) % 50 == 0 || step + 1 == cfg.steps) {
            Rng probe_rng(1234);
            std::vector<RasterImage> probe;
            std::vector<MaskPlan> probe_plans;
            for (size_t i = 0; i < corpus.size() && i < 32; ++i) {
                probe.push_back(corpus[i]);
                probe_plans.push_back(sample_mask(N, cfg.mask_ratio, probe_rng));
            }
            top1 = masked_top1_accuracy(model, vq, probe, probe_plans);
            res.final_masked_top1 = top1;
        }
        std::snprintf(line, sizeof(line), "%d,%.6f,%.6g,%.4f\n", step, loss_val, lr, top1);
        res.log_csv += line;
    }
    return res;
}

// Encoder-only weights: patch embedder, position embeddings, blocks, final
// norm. The MASK embedding and head stay behind.
inline Checkpoint ssp_encoder_checkpoint(const SspModel& m, int step) {
    Checkpoint ckpt;
    ckpt.meta = {{"kind", "ssp_encoder"}, {"encoder_config", m.encoder.config.to_json()}, {"step", step}};
    NamedParams enc;
    m.encoder.collect(enc, "enc");
    for (const auto& [name, t] : enc) ckpt.add(name, t);
    return ckpt;
}

}  // namespace tabrec
