#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "tabrec/image.hpp"
#include "tabrec/transformer.hpp"

namespace tabrec {

enum class EncoderVariant { linear_projection, hybrid_conv_stem };

inline const char* variant_name(EncoderVariant v) {
    return v == EncoderVariant::linear_projection ? "linear_projection" : "hybrid_conv_stem";
}

struct EncoderConfig {
    EncoderVariant variant = EncoderVariant::linear_projection;
    int layers = 2;
    int heads = 4;
    int width = 128;
    int patch_size = 16;
    int image_size = 112;
    int channels = 3;
    int mlp_ratio = 4;

    int grid() const { return image_size / patch_size; }
    int num_patches() const { return grid() * grid(); }

    bool operator==(const EncoderConfig&) const = default;

    nlohmann::json to_json() const {
        return {{"variant", variant_name(variant)}, {"layers", layers},         {"heads", heads},
                {"width", width},                   {"patch_size", patch_size}, {"image_size", image_size},
                {"channels", channels},             {"mlp_ratio", mlp_ratio}};
    }

    static EncoderConfig from_json(const nlohmann::json& j) {
        EncoderConfig c;
        c.variant = j.at("variant").get<std::string>() == "hybrid_conv_stem" ? EncoderVariant::hybrid_conv_stem
                                                                             : EncoderVariant::linear_projection;
        c.layers = j.at("layers").get<int>();
        c.heads = j.at("heads").get<int>();
        c.width = j.at("width").get<int>();
        c.patch_size = j.at("patch_size").get<int>();
        c.image_size = j.at("image_size").get<int>();
        c.channels = j.value("channels", 3);
        c.mlp_ratio = j.value("mlp_ratio", 4);
        return c;
    }
};

// Named presets. tiny is the
// desk-scale default that trains in minutes on a CPU; base and large match
// the full-scale configurations.
inline EncoderConfig encoder_preset(const std::string& name) {
    EncoderConfig c;
    if (name == "tiny") {
        c.layers = 2;
        c.heads = 4;
        c.width = 128;
    } else if (name == "base") {
        c.layers = 4;
        c.heads = 8;
        c.width = 512;
        c.image_size = 448;
    } else if (name == "large") {
        c.layers = 12;
        c.heads = 12;
        c.width = 768;
        c.image_size = 448;
    } else {
        throw std::invalid_argument("unknown encoder preset '" + name + "' (expected tiny, base or large)");
    }
    return c;
}

// Splits an image into flattened P x P patches, row-major over the patch
// grid, each row laid out (y, x, channel).
inline std::vector<float> patchify(const RasterImage& img, int P) {
    if (img.height % P != 0 || img.width % P != 0)
        throw std::invalid_argument("patchify: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                                    " not divisible by patch size " + std::to_string(P));
    const int gh = img.height / P, gw = img.width / P;
    std::vector<float> rows;
    rows.reserve(static_cast<size_t>(gh) * gw * P * P * img.channels);
    for (int py = 0; py < gh; ++py)
        for (int px = 0; px < gw; ++px)
            for (int y = 0; y < P; ++y)
                for (int x = 0; x < P; ++x)
                    for (int c = 0; c < img.channels; ++c) rows.push_back(img.at(py * P + y, px * P + x, c));
    return rows;
}

inline RasterImage unpatchify(const std::vector<float>& rows, int P, int height, int width, int channels) {
    RasterImage img(height, width, channels);
    const int gw = width / P;
    size_t i = 0;
    for (int py = 0; py < height / P; ++py)
        for (int px = 0; px < gw; ++px)
            for (int y = 0; y < P; ++y)
                for (int x = 0; x < P; ++x)
                    for (int c = 0; c < channels; ++c) img.at(py * P + y, px * P + x, c) = rows[i++];
    return img;
}

// Residual downsampling stage of the hybrid stem: 3x3 stride-2 conv + 3x3
// conv with a 1x1 stride-2 skip.
struct StemStage {
    Tensor w1, b1, w2, b2, wskip, bskip;

    static StemStage make(int cin, int cout, Rng& rng) {
        StemStage s;
        const float std1 = std::sqrt(2.0f / static_cast<float>(cin * 9));
        const float std2 = std::sqrt(2.0f / static_cast<float>(cout * 9));
        s.w1 = randn({cout, cin, 3, 3}, std1, rng);
        s.b1 = Tensor::zeros({cout}, true);
        s.w2 = randn({cout, cout, 3, 3}, std2, rng);
        s.b2 = Tensor::zeros({cout}, true);
        s.wskip = randn({cout, cin, 1, 1}, std::sqrt(2.0f / static_cast<float>(cin)), rng);
        s.bskip = Tensor::zeros({cout}, true);
        return s;
    }

    Tensor operator()(const Tensor& x) const {
        Tensor h = conv2d(gelu(conv2d(x, w1, b1, 2, 1)), w2, b2, 1, 1);
        Tensor skip = conv2d(x, wskip, bskip, 2, 0);
        return gelu(add(h, skip));
    }

    void collect(NamedParams& out, const std::string& prefix) const {
        reg(out, prefix + ".c1.w", w1);
        reg(out, prefix + ".c1.b", b1);
        reg(out, prefix + ".c2.w", w2);
        reg(out, prefix + ".c2.b", b2);
        reg(out, prefix + ".skip.w", wskip);
        reg(out, prefix + ".skip.b", bskip);
    }
};

// Visual encoder: patch embedding (linear projection or conv stem), learned
// 1-D position embeddings, pre-norm transformer blocks, final layer norm.
// Both variants emit the same (B, N, width) memory so decoders never care
// which front end produced it.
struct VisualEncoder {
    EncoderConfig config;
    Linear patch_proj;            // linear_projection variant
    std::vector<StemStage> stem;  // hybrid_conv_stem variant
    Tensor pos_emb;
    std::vector<EncoderBlock> blocks;
    LayerNormParams ln_f;

    static VisualEncoder make(const EncoderConfig& cfg, Rng& rng) {
        VisualEncoder e;
        e.config = cfg;
        if (cfg.variant == EncoderVariant::linear_projection) {
            e.patch_proj = Linear::make(cfg.patch_size * cfg.patch_size * cfg.channels, cfg.width, rng);
        } else {
            // Total stride 16 across four stages.
            int cin = cfg.channels;
            for (int cout : {16, 32, 64, cfg.width}) {
                e.stem.push_back(StemStage::make(cin, cout, rng));
                cin = cout;
            }
        }
        e.pos_emb = randn({cfg.num_patches(), cfg.width}, 0.02f, rng);
        for (int i = 0; i < cfg.layers; ++i) e.blocks.push_back(EncoderBlock::make(cfg.width, cfg.heads, cfg.mlp_ratio, rng));
        e.ln_f = LayerNormParams::make(cfg.width);
        return e;
    }

    // Patch embeddings before position embeddings, shape (B, N, width).
    Tensor embed(const std::vector<RasterImage>& images) const {
        const int B = static_cast<int>(images.size());
        for (const auto& img : images)
            if (img.height != config.image_size || img.width != config.image_size || img.channels != config.channels)
                throw std::invalid_argument("encoder expects " + std::to_string(config.image_size) + "x" +
                                            std::to_string(config.image_size) + "x" + std::to_string(config.channels) +
                                            " images, got " + std::to_string(img.height) + "x" +
                                            std::to_string(img.width) + "x" + std::to_string(img.channels));
        if (config.variant == EncoderVariant::linear_projection) {
            const int row = config.patch_size * config.patch_size * config.channels;
            std::vector<float> data;
            data.reserve(static_cast<size_t>(B) * config.num_patches() * row);
            for (const auto& img : images) {
                auto rows = patchify(img, config.patch_size);
                data.insert(data.end(), rows.begin(), rows.end());
            }
            Tensor x = Tensor::from({B, config.num_patches(), row}, std::move(data));
            return patch_proj(x);
        }
        std::vector<float> data;
        data.reserve(static_cast<size_t>(B) * config.channels * config.image_size * config.image_size);
        for (const auto& img : images) {
            Tensor t = image_to_tensor(img);
            data.insert(data.end(), t.values().begin(), t.values().end());
        }
        Tensor x = Tensor::from({B, config.channels, config.image_size, config.image_size}, std::move(data));
        for (const auto& stage : stem) x = stage(x);
        // (B, width, g, g) -> (B, N, width)
        const int g = config.grid();
        return reshape(permute(x, {0, 2, 3, 1}), {B, g * g, config.width});
    }

    Tensor encode_embedded(Tensor x, float drop_p, Rng* drop_rng) const {
        x = add(x, pos_emb);
        for (const auto& b : blocks) x = b(x, drop_p, drop_rng);
        return ln_f(x);
    }

    Tensor operator()(const std::vector<RasterImage>& images, float drop_p = 0.0f, Rng* drop_rng = nullptr) const {
        return encode_embedded(embed(images), drop_p, drop_rng);
    }

    void collect(NamedParams& out, const std::string& prefix) const {
        if (config.variant == EncoderVariant::linear_projection) {
            patch_proj.collect(out, prefix + ".patch");
        } else {
            for (size_t i = 0; i < stem.size(); ++i) stem[i].collect(out, prefix + ".stem" + std::to_string(i));
        }
        reg(out, prefix + ".pos", pos_emb);
        for (size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + ".b" + std::to_string(i));
        ln_f.collect(out, prefix + ".lnf");
    }

    NamedParams named_params() const {
        NamedParams out;
        collect(out, "enc");
        return out;
    }
};

}  // namespace tabrec
