#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabrec/checkpoint.hpp"
#include "tabrec/image.hpp"
#include "tabrec/optim.hpp"
#include "tabrec/rng.hpp"
#include "tabrec/tensor.hpp"
#include "tabrec/transformer.hpp"

namespace tabrec {

struct VqvaeConfig {
    int codebook_size = 256;  // K; full-scale runs use 8192 or 16384 entries
    int code_dim = 64;        // D; unstated in print, config knob
    int patch_size = 16;      // total encoder stride
    int channels = 3;
    float tau_start = 1.0f;
    float tau_min = 0.0625f;
    bool straight_through = false;  // hard one-hot forward with soft gradients
    float lr = 3e-4f;
    int batch_size = 8;
    int steps = 300;
    int warmup_steps = 30;

    nlohmann::json to_json() const {
        return {{"codebook_size", codebook_size}, {"code_dim", code_dim},   {"patch_size", patch_size},
                {"channels", channels},           {"tau_start", tau_start}, {"tau_min", tau_min},
                {"straight_through", straight_through}, {"lr", lr},         {"batch_size", batch_size},
                {"steps", steps},                 {"warmup_steps", warmup_steps}};
    }

    static VqvaeConfig from_json(const nlohmann::json& j) {
        VqvaeConfig c;
        c.codebook_size = j.value("codebook_size", c.codebook_size);
        c.code_dim = j.value("code_dim", c.code_dim);
        c.patch_size = j.value("patch_size", c.patch_size);
        c.channels = j.value("channels", c.channels);
        c.tau_start = j.value("tau_start", c.tau_start);
        c.tau_min = j.value("tau_min", c.tau_min);
        c.straight_through = j.value("straight_through", c.straight_through);
        c.lr = j.value("lr", c.lr);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.steps = j.value("steps", c.steps);
        c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
        return c;
    }
};

// Discrete image tokenizer: a strided conv encoder emits per-cell codebook
// logits, Gumbel-Softmax picks (softly) a codebook row, and a mirrored
// transposed-conv decoder rebuilds the image from the chosen embeddings.
struct VqvaeModel {
    VqvaeConfig config;
    std::vector<Tensor> enc_w, enc_b;  // four stride-2 conv blocks
    Tensor head_w, head_b;             // 1x1 conv, code_dim -> K logits
    Tensor codebook;                   // (K, code_dim)
    std::vector<Tensor> dec_w, dec_b;  // four stride-2 transposed conv blocks

    static VqvaeModel make(const VqvaeConfig& cfg, Rng& rng) {
        if (cfg.patch_size != 16)
            throw std::invalid_argument("VqvaeModel: the four stride-2 stages fix the total stride at 16");
        VqvaeModel m;
        m.config = cfg;
        int cin = cfg.channels;
        for (int cout : {32, 64, 128, cfg.code_dim}) {
            m.enc_w.push_back(randn({cout, cin, 3, 3}, std::sqrt(2.0f / static_cast<float>(cin * 9)), rng));
            m.enc_b.push_back(Tensor::zeros({cout}, true));
            cin = cout;
        }
        m.head_w = randn({cfg.codebook_size, cfg.code_dim, 1, 1}, 0.02f, rng);
        m.head_b = Tensor::zeros({cfg.codebook_size}, true);
        m.codebook = randn({cfg.codebook_size, cfg.code_dim}, 0.02f, rng);
        cin = cfg.code_dim;
        for (int cout : {128, 64, 32, cfg.channels}) {
            m.dec_w.push_back(randn({cin, cout, 2, 2}, std::sqrt(2.0f / static_cast<float>(cin * 4)), rng));
            m.dec_b.push_back(Tensor::zeros({cout}, true));
            cin = cout;
        }
        return m;
    }

    NamedParams named_params() const {
        NamedParams out;
        for (size_t i = 0; i < enc_w.size(); ++i) {
            reg(out, "vq.enc" + std::to_string(i) + ".w", enc_w[i]);
            reg(out, "vq.enc" + std::to_string(i) + ".b", enc_b[i]);
        }
        reg(out, "vq.head.w", head_w);
        reg(out, "vq.head.b", head_b);
        reg(out, "vq.codebook", codebook);
        for (size_t i = 0; i < dec_w.size(); ++i) {
            reg(out, "vq.dec" + std::to_string(i) + ".w", dec_w[i]);
            reg(out, "vq.dec" + std::to_string(i) + ".b", dec_b[i]);
        }
        return out;
    }
};

// Logits over the codebook per grid cell. Batched input (B,Ch,H,W) yields
// (B, H/P, W/P, K); a single image yields (H/P, W/P, K).
inline Tensor encode_logits(const VqvaeModel& m, const Tensor& images) {
    const bool batched = images.shape().size() == 4;
    const int H = images.shape()[batched ? 2 : 1], W = images.shape()[batched ? 3 : 2];
    if (H % m.config.patch_size != 0 || W % m.config.patch_size != 0)
        throw std::invalid_argument("encode_logits: image " + std::to_string(H) + "x" + std::to_string(W) +
                                    " not divisible by stride " + std::to_string(m.config.patch_size));
    Tensor x = images;
    for (size_t i = 0; i < m.enc_w.size(); ++i) x = gelu(conv2d(x, m.enc_w[i], m.enc_b[i], 2, 1));
    x = conv2d(x, m.head_w, m.head_b, 1, 0);  // (B?, K, h, w)
    return batched ? permute(x, {0, 2, 3, 1}) : permute(x, {1, 2, 0});
}

inline Tensor encode_logits(const VqvaeModel& m, const RasterImage& img) { return encode_logits(m, image_to_tensor(img)); }

// Relaxed one-hot weights softmax((logits + g)/tau) with explicit noise, for
// tests that pin g = 0.
inline Tensor gumbel_softmax(const Tensor& logits, float tau, const Tensor& noise) {
    if (tau <= 0.0f) throw std::invalid_argument("gumbel_softmax: tau must be positive");
    if (noise.shape() != logits.shape()) shape_error("gumbel_softmax", logits.shape(), noise.shape());
    return softmax(mul_scalar(add(logits, noise), 1.0f / tau));
}

inline Tensor gumbel_softmax(const Tensor& logits, float tau, Rng& rng) {
    Tensor noise = Tensor::zeros(logits.shape());
    for (int64_t i = 0; i < noise.numel(); ++i) noise.data()[i] = static_cast<float>(rng.gumbel());
    return gumbel_softmax(logits, tau, noise);
}

// Per-cell argmax over the last axis; ties break to the lowest index.
inline std::vector<int> quantize(const Tensor& logits) {
    const int K = logits.shape().back();
    const int64_t cells = logits.numel() / K;
    std::vector<int> out(static_cast<size_t>(cells));
    for (int64_t c = 0; c < cells; ++c) {
        const float* row = logits.data() + c * K;
        int best = 0;
        for (int k = 1; k < K; ++k)
            if (row[k] > row[best]) best = k;
        out[static_cast<size_t>(c)] = best;
    }
    return out;
}

// Decodes code weights (B?, h, w, K) back to an image tensor through the
// codebook: embedding = weights x Z.
inline Tensor decode(const VqvaeModel& m, const Tensor& weights) {
    const bool batched = weights.shape().size() == 4;
    const int B = batched ? weights.shape()[0] : 1;
    const int h = weights.shape()[batched ? 1 : 0], w = weights.shape()[batched ? 2 : 1];
    const int K = weights.shape().back();
    if (K != m.config.codebook_size) shape_error("decode", weights.shape(), m.codebook.shape());
    Tensor flat = reshape(weights, {B * h * w, K});
    Tensor embedded = matmul(flat, m.codebook);  // (B*h*w, D)
    Tensor x = permute(reshape(embedded, {B, h, w, m.config.code_dim}), {0, 3, 1, 2});
    for (size_t i = 0; i < m.dec_w.size(); ++i) {
        x = conv_transpose2d(x, m.dec_w[i], m.dec_b[i], 2);
        if (i + 1 < m.dec_w.size()) x = gelu(x);
    }
    x = sigmoid(x);
    return batched ? x : reshape(x, {m.config.channels, h * m.config.patch_size, w * m.config.patch_size});
}

// Hard decode from token indices.
inline Tensor decode_indices(const VqvaeModel& m, const std::vector<int>& grid, int h, int w) {
    Tensor weights = Tensor::zeros({h, w, m.config.codebook_size});
    for (int i = 0; i < h * w; ++i) weights.data()[static_cast<int64_t>(i) * m.config.codebook_size + grid[static_cast<size_t>(i)]] = 1.0f;
    return decode(m, weights);
}

struct VqvaeTrainResult {
    VqvaeModel model;
    std::vector<double> loss_curve;
    std::string log_csv;           // step,loss,tau,lr
    std::optional<std::string> error;  // set when training diverged
};

inline float tau_at(const VqvaeConfig& cfg, int step) {
    const int anneal = std::max(1, cfg.steps / 2);
    if (step >= anneal) return cfg.tau_min;
    const double t = static_cast<double>(step) / static_cast<double>(anneal);
    return static_cast<float>(cfg.tau_start * std::pow(cfg.tau_min / cfg.tau_start, t));
}

// The step-0 model train_vqvae(seed) starts from.
inline VqvaeModel initial_vqvae_model(const VqvaeConfig& cfg, uint64_t seed) {
    Rng init_rng = Rng(seed).child(1);
    return VqvaeModel::make(cfg, init_rng);
}

// Maximizes the Gaussian reconstruction likelihood (pixel MSE) through the
// Gumbel-Softmax relaxation, annealing tau over the first half of training.
// Divergence past 10x the initial loss aborts with a diagnostic.
inline VqvaeTrainResult train_vqvae(const std::vector<RasterImage>& corpus, const VqvaeConfig& cfg, uint64_t seed) {
    if (corpus.empty()) throw std::invalid_argument("train_vqvae: empty corpus");
    Rng order_rng = Rng(seed).child(2);
    Rng noise_rng = Rng(seed).child(3);

    VqvaeTrainResult res{initial_vqvae_model(cfg, seed), {}, "step,loss,tau,lr\n", std::nullopt};
    VqvaeModel& model = res.model;

    NamedParams named = model.named_params();
    std::vector<Tensor> params;
    for (auto& [n, t] : named) params.push_back(t);
    AdamWState opt(AdamWConfig{.lr = cfg.lr, .weight_decay = 0.0f});
    LrSchedule sched{cfg.lr, cfg.warmup_steps, cfg.steps};

    const int B = std::min<int>(cfg.batch_size, static_cast<int>(corpus.size()));
    std::vector<size_t> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size();

    double initial_loss = -1.0;
    char line[96];
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<float> batch_data;
        for (int b = 0; b < B; ++b) {
            if (cursor == order.size()) {
                for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
                cursor = 0;
            }
            Tensor t = image_to_tensor(corpus[order[cursor++]]);
            batch_data.insert(batch_data.end(), t.values().begin(), t.values().end());
        }
        const int H = corpus[0].height, W = corpus[0].width;
        Tensor images = Tensor::from({B, cfg.channels, H, W}, std::move(batch_data));

        const float tau = tau_at(cfg, step);
        Tape tape;
        double loss_val = 0.0;
        {
            TapeScope scope(tape);
            Tensor logits = encode_logits(model, images);
            Tensor weights = gumbel_softmax(logits, tau, noise_rng);
            if (cfg.straight_through) {
                // Hard one-hot forward values, soft gradients.
                Tensor hard = Tensor::zeros(weights.shape());
                const int K = cfg.codebook_size;
                for (int64_t c = 0; c < weights.numel() / K; ++c) {
                    const float* row = weights.data() + c * K;
                    int best = 0;
                    for (int k = 1; k < K; ++k)
                        if (row[k] > row[best]) best = k;
                    hard.data()[c * K + best] = 1.0f;
                }
                for (int64_t i = 0; i < hard.numel(); ++i) hard.data()[i] -= weights.data()[i];
                weights = add(weights, hard);
            }
            Tensor recon = decode(model, weights);
            Tensor diff = sub(recon, images);
            Tensor loss = mean(mul(diff, diff));
            loss_val = loss.item();
            backward(tape, loss);
        }

        res.loss_curve.push_back(loss_val);
        if (initial_loss < 0) initial_loss = loss_val;
        if (loss_val > 10.0 * initial_loss || !std::isfinite(loss_val)) {
            res.error = "training diverged at step " + std::to_string(step) + ": loss " + std::to_string(loss_val) +
                        " vs initial " + std::to_string(initial_loss);
            return res;
        }

        const float lr = lr_at(sched, step);
        clip_grad_norm(params, 1.0);
        if (auto err = adamw_step(params, opt, lr)) {
            res.error = *err;
            return res;
        }
        zero_grads(params);
        std::snprintf(line, sizeof(line), "%d,%.6f,%.4f,%.6g\n", step, loss_val, tau, lr);
        res.log_csv += line;
    }
    return res;
}

struct TokenGrid {
    int h = 0, w = 0;
    std::vector<int> indices;
    std::string text;  // aligned rows of indices for eyeballing
};

// The token-index view of an image under a trained tokenizer.
inline TokenGrid dump_token_grid(const VqvaeModel& m, const RasterImage& img) {
    Tensor logits = encode_logits(m, img);
    TokenGrid grid;
    grid.h = logits.shape()[0];
    grid.w = logits.shape()[1];
    grid.indices = quantize(logits);
    int width = 1;
    for (int v : grid.indices) width = std::max(width, static_cast<int>(std::to_string(v).size()));
    for (int y = 0; y < grid.h; ++y) {
        for (int x = 0; x < grid.w; ++x) {
            std::string s = std::to_string(grid.indices[static_cast<size_t>(y * grid.w + x)]);
            grid.text += std::string(static_cast<size_t>(width - static_cast<int>(s.size()) + (x ? 1 : 0)), ' ') + s;
        }
        grid.text += "\n";
    }
    return grid;
}

inline Checkpoint vqvae_checkpoint(const VqvaeModel& m, int step) {
    Checkpoint ckpt;
    ckpt.meta = {{"kind", "vqvae"}, {"config", m.config.to_json()}, {"step", step}};
    for (const auto& [name, t] : m.named_params()) ckpt.add(name, t);
    return ckpt;
}

inline VqvaeModel vqvae_from_checkpoint(const Checkpoint& ckpt) {
    VqvaeConfig cfg = VqvaeConfig::from_json(ckpt.meta.at("config"));
    Rng rng(0);
    VqvaeModel m = VqvaeModel::make(cfg, rng);
    for (auto& [name, t] : m.named_params()) {
        const Tensor* src = ckpt.find(name);
        if (!src) throw std::runtime_error("vqvae_from_checkpoint: missing tensor " + name);
        if (src->shape() != t.shape()) throw std::runtime_error("vqvae_from_checkpoint: shape mismatch for " + name);
        std::copy(src->values().begin(), src->values().end(), t.values().begin());
        t.set_requires_grad(false);  // tokenizers load frozen
    }
    return m;
}

}  // namespace tabrec
