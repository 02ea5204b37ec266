// Acceptance suite: one binary, one pass/fail line per criterion, nonzero
// exit when anything fails. Criteria that train models reuse each other's
// artifacts (tokenizer -> pretrained encoder -> finetuned models) the same way
// the CLI pipeline does.

#include <cstdarg>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "helpers/finite_diff.hpp"
#include "helpers/grid_oracle.hpp"
#include "helpers/ted_oracle.hpp"
#include "tabrec/pipeline.hpp"
#include "tabrec/ssp.hpp"
#include "tabrec/synthgen.hpp"
#include "tabrec/vqvae.hpp"

using namespace tabrec;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;
std::chrono::steady_clock::time_point g_start;

void begin(int) { g_start = std::chrono::steady_clock::now(); }

void report(int num, const std::string& name, bool pass, const std::string& detail) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - g_start).count();
    std::printf("[%s] criterion %2d: %s — %s (%.1fs)\n", pass ? "PASS" : "FAIL", num, name.c_str(), detail.c_str(),
                secs);
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

std::string fmt(const char* f, ...) {
    char buf[256];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

Tensor rand_tensor(Shape shape, Rng& rng, bool rg = true) {
    Tensor t = Tensor::zeros(std::move(shape), rg);
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<float>(rng.uniform(-2.0, 2.0));
    return t;
}

// Worst norm-relative gradient error over all inputs of one expression.
// h = 4e-3 balances central-difference truncation against the f32 noise
// floor of the differenced loss.
double grad_suite_case(std::vector<Tensor> inputs, const std::function<Tensor()>& make_loss) {
    for (Tensor& in : inputs) in.zero_grad();
    Tape tape;
    {
        TapeScope scope(tape);
        backward(tape, make_loss());
    }
    auto forward = [&]() { return static_cast<double>(make_loss().item()); };
    double worst = 0.0;
    for (Tensor& in : inputs) {
        if (!in.grad_if_any()) return 1.0;
        auto fd = testutil::fd_gradient(in, forward, 4e-3);
        worst = std::max(worst, testutil::grad_rel_error(*in.grad_if_any(), fd));
    }
    return worst;
}

std::vector<RasterImage> images_of(const Corpus& corpus, size_t lo, size_t hi) {
    std::vector<RasterImage> out;
    for (size_t i = lo; i < hi && i < corpus.samples.size(); ++i) out.push_back(corpus.load_image(i));
    return out;
}

TaskModelConfig tiny_task_config(Task task, EncoderVariant variant, int image_size, int max_len) {
    TaskModelConfig cfg;
    cfg.encoder = encoder_preset("tiny");
    cfg.encoder.variant = variant;
    cfg.encoder.image_size = image_size;
    cfg.task = task;
    cfg.max_len = max_len;
    cfg.dropout = 0.0f;
    return cfg;
}

double mean_steds(const TaskModel& model, const Corpus& corpus, size_t lo, size_t hi) {
    double sum = 0;
    size_t n = 0;
    for (size_t i = lo; i < hi && i < corpus.samples.size(); ++i) {
        RasterImage img = corpus.load_image(i);
        DecodeResult d = greedy_decode(model, img);
        const std::string pred = structure_html(decode_structure(model.vocab, d.seq));
        sum += teds(pred, gt_html(corpus.samples[i]), true).score;
        ++n;
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// 1. Gradient suite
// ---------------------------------------------------------------------------
static void criterion_1() {
    begin(1);
    Rng rng(101);
    int cases = 0;
    double worst_prim = 0.0;
    auto roll = [&](int lo, int hi) { return rng.range(lo, hi); };

    for (int rep = 0; rep < 13; ++rep) {
        const int a = roll(2, 8), b = roll(2, 8), c = roll(2, 8), d = roll(2, 6);
        {
            Tensor x = rand_tensor({a, b}, rng), y = rand_tensor({a, b}, rng), bias = rand_tensor({b}, rng);
            Tensor w = rand_tensor({a, b}, rng, false);
            worst_prim = std::max(worst_prim, grad_suite_case({x, y, bias}, [&]() {
                                      return sum(mul(w, mul(add(sub(x, y), bias), x)));
                                  }));
            ++cases;
            worst_prim = std::max(worst_prim, grad_suite_case({x}, [&]() {
                                      return sum(mul(w, add_scalar(mul_scalar(x, 1.3f), -0.2f)));
                                  }));
            ++cases;
        }
        {
            Tensor x = rand_tensor({a, b}, rng), y = rand_tensor({b, c}, rng);
            Tensor w = rand_tensor({a, c}, rng, false);
            worst_prim = std::max(worst_prim, grad_suite_case({x, y}, [&]() { return sum(mul(w, matmul(x, y))); }));
            ++cases;
            Tensor xb = rand_tensor({d, a, b}, rng), yb = rand_tensor({d, b, c}, rng);
            Tensor wb = rand_tensor({d, a, c}, rng, false);
            worst_prim = std::max(worst_prim, grad_suite_case({xb, yb}, [&]() { return sum(mul(wb, matmul(xb, yb))); }));
            ++cases;
            worst_prim = std::max(worst_prim, grad_suite_case({xb, y}, [&]() { return sum(mul(wb, matmul(xb, y))); }));
            ++cases;
        }
        {
            Tensor x = rand_tensor({a, b}, rng);
            Tensor w = rand_tensor({a, b}, rng, false);
            worst_prim = std::max(worst_prim, grad_suite_case({x}, [&]() { return sum(mul(w, gelu(x))); }));
            ++cases;
            worst_prim = std::max(worst_prim, grad_suite_case({x}, [&]() { return sum(mul(w, sigmoid(x))); }));
            ++cases;
            worst_prim = std::max(worst_prim, grad_suite_case({x}, [&]() { return sum(mul(w, softmax(x))); }));
            ++cases;
            // Width >= 3: over two columns the normalized row is pinned at
            // (+1, -1) and the input gradient is identically zero, which the
            // FD oracle cannot resolve. A fixed ramp keeps row variance away
            // from the eps floor.
            const int ln_d = std::max(3, b);
            Tensor xs = rand_tensor({a, ln_d}, rng);
            for (int r = 0; r < a; ++r)
                for (int col = 0; col < ln_d; ++col)
                    xs.data()[r * ln_d + col] = 0.5f * xs.data()[r * ln_d + col] + (col % 2 ? 0.9f : -0.9f);
            Tensor wl = rand_tensor({a, ln_d}, rng, false);
            Tensor g = rand_tensor({ln_d}, rng), beta = rand_tensor({ln_d}, rng);
            worst_prim = std::max(
                worst_prim, grad_suite_case({xs, g, beta}, [&]() { return sum(mul(wl, layer_norm(xs, g, beta))); }));
            ++cases;
            worst_prim = std::max(worst_prim, grad_suite_case({x}, [&]() { return mean(mul(w, x)); }));
            ++cases;
        }
        {
            Tensor table = rand_tensor({a + 2, b}, rng);
            std::vector<int> ids;
            for (int i = 0; i < c; ++i) ids.push_back(roll(0, a + 1));
            Tensor w = rand_tensor({c, b}, rng, false);
            worst_prim =
                std::max(worst_prim, grad_suite_case({table}, [&]() { return sum(mul(w, embedding(table, ids))); }));
            ++cases;
        }
        {
            Tensor logits = rand_tensor({a, b + 2}, rng);
            std::vector<int> targets;
            std::vector<float> mask;
            for (int i = 0; i < a; ++i) {
                targets.push_back(roll(0, b + 1));
                mask.push_back(i == 0 ? 1.0f : (rng.chance(0.7) ? 1.0f : 0.0f));
            }
            worst_prim =
                std::max(worst_prim, grad_suite_case({logits}, [&]() { return cross_entropy(logits, targets, mask); }));
            ++cases;
        }
        {
            const int cin = roll(1, 3), cout = roll(1, 3), hw = roll(4, 7);
            Tensor x = rand_tensor({2, cin, hw, hw}, rng);
            Tensor wt = rand_tensor({cout, cin, 3, 3}, rng);
            Tensor bias = rand_tensor({cout}, rng);
            const int ho = (hw + 2 - 3) / 2 + 1;
            Tensor w = rand_tensor({2, cout, ho, ho}, rng, false);
            worst_prim = std::max(worst_prim, grad_suite_case({x, wt, bias}, [&]() {
                                      return sum(mul(w, conv2d(x, wt, bias, 2, 1)));
                                  }));
            ++cases;
            Tensor xt = rand_tensor({2, cin, d, d}, rng);
            Tensor wtt = rand_tensor({cin, cout, 2, 2}, rng);
            Tensor wo = rand_tensor({2, cout, d * 2, d * 2}, rng, false);
            worst_prim = std::max(worst_prim, grad_suite_case({xt, wtt, bias}, [&]() {
                                      return sum(mul(wo, conv_transpose2d(xt, wtt, bias, 2)));
                                  }));
            ++cases;
        }
        {
            Tensor x = rand_tensor({a, b, c}, rng);
            Tensor w = rand_tensor({c * b, a}, rng, false);
            worst_prim = std::max(worst_prim, grad_suite_case({x}, [&]() {
                                      return sum(mul(w, reshape(permute(x, {2, 1, 0}), {c * b, a})));
                                  }));
            ++cases;
            Tensor logits = rand_tensor({a, c}, rng);
            Tensor noise = Tensor::zeros({a, c});
            for (int64_t i = 0; i < noise.numel(); ++i) noise.data()[i] = static_cast<float>(rng.gumbel());
            Tensor wg = rand_tensor({a, c}, rng, false);
            worst_prim = std::max(worst_prim, grad_suite_case({logits}, [&]() {
                                      return sum(mul(wg, gumbel_softmax(logits, 0.7f, noise)));
                                  }));
            ++cases;
        }
    }

    // Composed 1-layer task model, probed parameter-by-parameter.
    double worst_model = 0.0;
    int model_probes = 0;
    {
        Rng mrng(23);
        Vocab vocab = build_content_vocab({"ab"});
        TaskModelConfig cfg = tiny_task_config(Task::content, EncoderVariant::linear_projection, 32, 16);
        cfg.encoder.layers = 1;
        cfg.encoder.heads = 2;
        cfg.encoder.width = 32;
        cfg.decoder_layers = 1;
        TaskModel m = TaskModel::make(cfg, vocab, mrng);
        RasterImage img(32, 32, 3);
        for (auto& v : img.px) v = static_cast<float>(mrng.uniform());
        std::vector<int> ids = {Vocab::kBos, 4, 5, Vocab::kEos};
        std::vector<int> targets = {4, 5, Vocab::kEos, Vocab::kEos};
        auto loss_fn = [&]() { return cross_entropy(forward_teacher_forced(m, img, ids), targets); };

        NamedParams named = m.named_params();
        std::vector<Tensor> params;
        for (auto& [n, t] : named) {
            t.zero_grad();
            params.push_back(t);
        }
        Tape tape;
        {
            TapeScope scope(tape);
            backward(tape, loss_fn());
        }
        auto forward = [&]() { return static_cast<double>(loss_fn().item()); };
        Rng pick(31);
        for (auto& [name, t] : named) {
            if (!t.grad_if_any()) continue;
            std::vector<int64_t> idxs;
            for (int k = 0; k < 2; ++k) idxs.push_back(static_cast<int64_t>(pick.below(static_cast<uint64_t>(t.numel()))));
            auto fd = testutil::fd_gradient_at(t, idxs, forward);
            const auto& g = *t.grad_if_any();
            for (size_t k = 0; k < idxs.size(); ++k) {
                const double a = g[static_cast<size_t>(idxs[k])];
                const double b = fd[k];
                const double rel = std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
                worst_model = std::max(worst_model, rel);
                ++model_probes;
            }
        }
    }

    const bool pass = worst_prim < 1e-3 && worst_model < 1e-2 && cases >= 190;
    report(1, "gradient suite", pass,
           fmt("%d primitive cases worst rel err %.2e (< 1e-3); %d composed-model probes worst %.2e (< 1e-2)", cases,
               worst_prim, model_probes, worst_model));
}

// ---------------------------------------------------------------------------
// 2. Codec round-trips
// ---------------------------------------------------------------------------
static void criterion_2() {
    begin(2);
    GenConfig gen;
    gen.span_prob = 0.25;
    gen.max_rows = 6;
    gen.max_cols = 6;
    gen.max_span = 4;
    const Vocab svocab = build_structure_vocab();
    Rng rng(202);
    int structure_ok = 0, bbox_ok = 0, content_ok = 0, grammar_ok = 0;
    std::vector<std::string> all_contents;
    std::vector<RenderResult> renders;
    for (int i = 0; i < 1000; ++i) {
        Rng child = rng.child(static_cast<uint64_t>(i));
        RenderResult r = render(sample_spec(child, gen), gen.image_size, child);
        for (const auto& c : r.annotation.contents) all_contents.push_back(c);
        renders.push_back(std::move(r));
    }
    const Vocab cvocab = build_content_vocab(all_contents);

    double worst_quant = 0.0;
    for (const RenderResult& r : renders) {
        const auto& ann = r.annotation;
        if (decode_structure(svocab, encode_structure(svocab, ann.structure_tokens)) == ann.structure_tokens)
            ++structure_ok;
        if (validate_structure(ann.structure_tokens).empty()) ++grammar_ok;

        std::vector<BBox> quantized;
        for (const BBox& b : ann.bboxes) {
            QuantizedBox q = quantize_bbox(b, gen.image_size);
            worst_quant = std::max({worst_quant, static_cast<double>(std::abs(q.x_min - b.x_min)),
                                    static_cast<double>(std::abs(q.y_min - b.y_min)),
                                    static_cast<double>(std::abs(q.x_max - b.x_max)),
                                    static_cast<double>(std::abs(q.y_max - b.y_max))});
            quantized.push_back({static_cast<float>(q.x_min), static_cast<float>(q.y_min), static_cast<float>(q.x_max),
                                 static_cast<float>(q.y_max)});
        }
        auto seq = serialize_bboxes(quantized, gen.image_size);
        if (std::holds_alternative<TokenSeq>(seq) &&
            deserialize_bboxes(std::get<TokenSeq>(seq), gen.image_size).boxes == quantized)
            ++bbox_ok;

        bool contents_match = true;
        for (const auto& c : ann.contents) contents_match &= decode_content(cvocab, encode_content(cvocab, c)) == c;
        if (contents_match) ++content_ok;
    }

    // 20 hand-built malformed sequences the validator must reject.
    using V = std::vector<std::string>;
    const std::string rs2 = tok::rowspan(2), cs2 = tok::colspan(2);
    const V malformed[] = {
        {tok::tr_open, tok::thead_close},
        {tok::thead_open},
        {tok::tbody_close},
        {tok::tr_open},
        {tok::tr_close},
        {tok::cell_empty},
        {tok::tbody_open, tok::cell_empty, tok::tbody_close},
        {tok::tbody_open, tok::tr_open, tok::cell_open, tok::tr_close, tok::tbody_close},
        {tok::tbody_open, tok::tr_open, tok::close_full, tok::tr_close, tok::tbody_close},
        {tok::tbody_open, tok::tr_open, rs2, tok::tr_close, tok::tbody_close},
        {tok::tbody_open, tok::tr_open, tok::cell_open, rs2, rs2, tok::close_full, tok::tr_close, tok::tbody_close},
        {tok::tbody_open, tok::tr_open, tok::cell_open, cs2, cs2, tok::close_empty, tok::tr_close, tok::tbody_close},
        {tok::tbody_open, tok::tr_open, tok::cell_open, tok::cell_empty, tok::close_full, tok::tr_close, tok::tbody_close},
        {tok::tbody_open, tok::tr_open, tok::tr_open, tok::tr_close, tok::tr_close, tok::tbody_close},
        {tok::thead_open, tok::tr_open, tok::cell_empty, tok::tr_close, tok::tbody_close},
        {tok::tbody_open, tok::tr_open, tok::cell_empty, tok::tbody_close, tok::tr_close},
        {tok::tbody_open, tok::tr_open, tok::cell_empty, tok::tr_close},
        {tok::tbody_open, tok::tr_open, tok::cell_open, rs2, tok::tr_close, tok::tbody_close},
        {tok::thead_open, tok::thead_close, tok::tbody_open, tok::tr_open, "<table>", tok::tr_close, tok::tbody_close},
        {tok::tbody_open, tok::tr_open, tok::cell_full, tok::close_empty, tok::tr_close, tok::tbody_close},
    };
    int rejected = 0;
    for (const auto& seq : malformed) rejected += !validate_structure(seq).empty();

    const bool pass = structure_ok == 1000 && bbox_ok == 1000 && content_ok == 1000 && grammar_ok == 1000 &&
                      worst_quant <= 0.5 && rejected == 20;
    report(2, "codec round-trips", pass,
           fmt("structure %d/1000, bbox %d/1000 (max quant err %.3f px), content %d/1000, grammar accept %d/1000, "
               "malformed rejected %d/20",
               structure_ok, bbox_ok, worst_quant, content_ok, grammar_ok, rejected));
}

// ---------------------------------------------------------------------------
// 3. TEDS oracle equivalence
// ---------------------------------------------------------------------------
static void criterion_3() {
    begin(3);
    Rng rng(303);
    int pairs = 0, structure_exact = 0, full_exact = 0;
    for (int i = 0; i < 500; ++i) {
        HtmlNode a = testutil::random_tag_tree(rng, 8);
        HtmlNode b = testutil::random_tag_tree(rng, 8);
        structure_exact += tree_edit_distance(a, b, true) == testutil::ted_oracle(a, b, true);
        full_exact += std::abs(tree_edit_distance(a, b, false) - testutil::ted_oracle(a, b, false)) <= 1e-9;
        ++pairs;
    }
    const bool pass = structure_exact == pairs && full_exact == pairs;
    report(3, "tree edit distance vs exhaustive oracle", pass,
           fmt("%d pairs, unit-cost exact %d/%d, content-cost within 1e-9 %d/%d", pairs, structure_exact, pairs,
               full_exact, pairs));
}

// ---------------------------------------------------------------------------
// 4. Metric arithmetic
// ---------------------------------------------------------------------------
static void criterion_4() {
    begin(4);
    const double wf1 = wavg_f1({{0.6, 0.8}, {0.7, 0.6}, {0.8, 0.4}, {0.9, 0.2}});
    const bool wf1_ok = std::abs(wf1 - 0.4667) <= 1e-4;
    const double j = iou({0, 0, 2, 2}, {1, 1, 3, 3});
    const bool iou_ok = std::abs(j - 1.0 / 7.0) <= 1e-9;

    DetectionSet gt{{{0, 0, 10, 10}}, {}};
    ApResult two = coco_ap({{{0, 0, 10, 10}, {50, 50, 60, 60}}, {0.9f, 0.8f}}, gt);
    const bool ap_case1 = two.ap50 == 1.0;
    ApResult shifted = coco_ap({{{0, 2.5f, 10, 12.5f}}, {0.9f}}, gt);
    const bool ap_case2 = shifted.ap50 == 1.0 && shifted.ap75 == 0.0;

    report(4, "metric arithmetic", wf1_ok && iou_ok && ap_case1 && ap_case2,
           fmt("WF1 %.4f (want 0.4667), IoU %.9f (want 1/7), AP cases %s/%s", wf1, j, ap_case1 ? "ok" : "BAD",
               ap_case2 ? "ok" : "BAD"));
}

// ---------------------------------------------------------------------------
// 5-9 share corpora and checkpoints under a scratch directory.
// ---------------------------------------------------------------------------
struct SharedState {
    fs::path work;
    Corpus desk;           // 560 mixed-style samples at 112
    VqvaeModel vqvae;      // K=256 tokenizer trained on the desk corpus
    bool vqvae_ready = false;
    Checkpoint ssp_ckpt;   // pretrained tiny encoder
    bool ssp_ready = false;
};

// Hard-decode reconstruction error of a tokenizer over an image set.
static double heldout_mse(const VqvaeModel& m, const std::vector<RasterImage>& images) {
    double total = 0;
    int64_t n = 0;
    for (const auto& img : images) {
        Tensor logits = encode_logits(m, img);
        Tensor recon = decode_indices(m, quantize(logits), logits.shape()[0], logits.shape()[1]);
        Tensor t = image_to_tensor(img);
        for (int64_t i = 0; i < t.numel(); ++i) {
            const double d = recon.data()[i] - t.data()[i];
            total += d * d;
        }
        n += t.numel();
    }
    return total / static_cast<double>(n);
}

static void criterion_5(SharedState& st) {
    begin(5);
    std::vector<RasterImage> train = images_of(st.desk, 0, 512);
    std::vector<RasterImage> held = images_of(st.desk, 512, 560);

    // (a) 512-image desk corpus: held-out reconstruction MSE of the trained
    // tokenizer under 20% of its step-0 value.
    VqvaeConfig cfg;
    cfg.codebook_size = 256;
    cfg.code_dim = 64;
    cfg.steps = 500;
    cfg.warmup_steps = 20;
    cfg.batch_size = 8;
    cfg.lr = 2e-3f;
    const double init_mse = heldout_mse(initial_vqvae_model(cfg, 501), held);
    VqvaeTrainResult main_run = train_vqvae(train, cfg, 501);
    const double final_mse = main_run.error ? init_mse : heldout_mse(main_run.model, held);
    const bool main_ok = !main_run.error && final_mse < 0.2 * init_mse;
    if (!main_run.error) {
        st.vqvae = std::move(main_run.model);
        st.vqvae_ready = true;
    }

    // Token-grid semantics: a pure-background image should map nearly every
    // grid cell to one dominant "background" token.
    double dominant = 0.0;
    if (st.vqvae_ready) {
        TokenGrid grid = dump_token_grid(st.vqvae, RasterImage(112, 112, 3, 1.0f));
        std::map<int, int> counts;
        for (int v : grid.indices) ++counts[v];
        int best = 0;
        for (const auto& [idx, n] : counts) best = std::max(best, n);
        dominant = static_cast<double>(best) / static_cast<double>(grid.indices.size());
    }
    const bool grid_ok = dominant >= 0.9;

    // (b) identical constant images fit to near-zero MSE.
    std::vector<RasterImage> constant(16, RasterImage(32, 32, 3, 0.65f));
    VqvaeConfig ccfg;
    ccfg.codebook_size = 16;
    ccfg.code_dim = 8;
    ccfg.steps = 400;
    ccfg.warmup_steps = 10;
    ccfg.batch_size = 8;
    ccfg.lr = 3e-3f;
    VqvaeTrainResult const_run = train_vqvae(constant, ccfg, 502);
    const bool const_ok = !const_run.error && const_run.loss_curve.back() < 1e-4;

    // (c) capacity direction on a colorful corpus: K=256 beats K=16.
    GenConfig mgen;
    mgen.image_size = 48;
    mgen.styles = {TableStyle::marketing};
    Rng mrng(505);
    std::vector<RasterImage> colorful;
    for (int i = 0; i < 96; ++i) {
        Rng child = mrng.child(static_cast<uint64_t>(i));
        colorful.push_back(render(sample_spec(child, mgen), mgen.image_size, child).image);
    }
    // Hard (straight-through) assignment: soft mixtures would let even a
    // 16-row codebook blend arbitrary background hues, hiding the capacity
    // difference the comparison is after.
    VqvaeConfig kcfg;
    kcfg.code_dim = 32;
    kcfg.steps = 400;
    kcfg.warmup_steps = 10;
    kcfg.batch_size = 8;
    kcfg.lr = 2e-3f;
    kcfg.straight_through = true;
    kcfg.codebook_size = 16;
    VqvaeTrainResult k16 = train_vqvae(colorful, kcfg, 503);
    kcfg.codebook_size = 256;
    VqvaeTrainResult k256 = train_vqvae(colorful, kcfg, 503);
    auto tail_mean = [](const std::vector<double>& v) {
        double s = 0;
        for (size_t i = v.size() - 20; i < v.size(); ++i) s += v[i];
        return s / 20.0;
    };
    const bool k_ok = !k16.error && !k256.error && tail_mean(k256.loss_curve) < tail_mean(k16.loss_curve);

    report(5, "vqvae training", main_ok && grid_ok && const_ok && k_ok,
           fmt("held-out MSE %.4f -> %.4f (%.1f%% of step 0); background token covers %.0f%% of cells; "
               "constant-corpus MSE %.2e (< 1e-4); K16 %.4f vs K256 %.4f",
               init_mse, final_mse, 100.0 * final_mse / init_mse, 100.0 * dominant,
               const_run.error ? 1.0 : const_run.loss_curve.back(), k16.error ? -1.0 : tail_mean(k16.loss_curve),
               k256.error ? -1.0 : tail_mean(k256.loss_curve)));
}

static void criterion_6(SharedState& st) {
    begin(6);
    if (!st.vqvae_ready) {
        report(6, "ssp pretraining", false, "skipped: tokenizer from criterion 5 unavailable");
        return;
    }
    const int K = st.vqvae.config.codebook_size;
    EncoderConfig enc = encoder_preset("tiny");
    enc.image_size = 112;

    // Initial masked loss sits at ln K.
    std::vector<RasterImage> probe = images_of(st.desk, 0, 8);
    Rng init_rng(601);
    SspModel fresh = SspModel::make(enc, K, init_rng);
    Rng mask_rng(602);
    std::vector<MaskPlan> plans;
    for (size_t i = 0; i < probe.size(); ++i) plans.push_back(sample_mask(enc.num_patches(), 0.4f, mask_rng));
    const double init_loss = ssp_loss(fresh, st.vqvae, probe, plans).item();
    const double lnk = std::log(static_cast<double>(K));
    const bool init_ok = std::abs(init_loss - lnk) / lnk <= 0.02;

    // Pretrain, then check masked top-1 against chance.
    SspConfig cfg;
    cfg.steps = 250;
    cfg.warmup_steps = 20;
    cfg.batch_size = 8;
    cfg.lr = 1e-3f;
    SspTrainResult run = pretrain(images_of(st.desk, 0, 512), st.vqvae, enc, cfg, 603);
    const double chance = 5.0 / static_cast<double>(K);
    const bool acc_ok = !run.error && run.final_masked_top1 >= chance;

    // Export loads into a task model with zero unmatched tensors and
    // bit-identical step-0 encoding.
    bool transfer_ok = false;
    if (!run.error) {
        st.ssp_ckpt = ssp_encoder_checkpoint(run.model, cfg.steps);
        st.ssp_ready = true;
        TaskModelConfig mcfg = tiny_task_config(Task::structure, EncoderVariant::linear_projection, 112, 64);
        Rng mrng(604);
        TaskModel model = TaskModel::make(mcfg, build_structure_vocab(), mrng);
        LoadReport rep = load_ssp_encoder(model, st.ssp_ckpt);
        RasterImage img = st.desk.load_image(0);
        transfer_ok = rep.unmatched_model.empty() && rep.unmatched_checkpoint.empty() &&
                      run.model.encoder({img}).values() == model.encode({img}).values();
    }

    report(6, "ssp pretraining", init_ok && acc_ok && transfer_ok,
           fmt("init loss %.4f vs ln K %.4f (%.2f%%); masked top-1 %.4f (>= %.4f); encoder transfer %s", init_loss,
               lnk, 100.0 * std::abs(init_loss - lnk) / lnk, run.error ? -1.0 : run.final_masked_top1, chance,
               transfer_ok ? "bit-exact" : "BAD"));
}

static void criterion_7(SharedState& st) {
    begin(7);
    if (!st.ssp_ready) {
        report(7, "ssp-benefit trend", false, "skipped: pretrained encoder unavailable");
        return;
    }
    const Vocab vocab = build_structure_vocab();
    TaskModelConfig mcfg = tiny_task_config(Task::structure, EncoderVariant::linear_projection, 112, 64);
    auto pairs = build_task_dataset(Task::structure, st.desk, vocab, 112, 112);
    std::vector<TrainPair> train_pairs(pairs.begin(), pairs.begin() + 512);

    TrainConfig tcfg;
    tcfg.steps = 600;
    tcfg.warmup_steps = 40;
    tcfg.batch_size = 8;
    tcfg.lr = 1e-3f;
    tcfg.dropout = 0.0f;

    int ssp_wins = 0;
    std::string detail;
    for (uint64_t seed : {701ULL, 702ULL, 703ULL}) {
        Rng r1(seed);
        TaskModel scratch = TaskModel::make(mcfg, vocab, r1);
        train_task_model(scratch, train_pairs, tcfg, seed);
        const double scratch_steds = mean_steds(scratch, st.desk, 512, 560);

        Rng r2(seed);
        TaskModel warm = TaskModel::make(mcfg, vocab, r2);
        load_ssp_encoder(warm, st.ssp_ckpt);
        train_task_model(warm, train_pairs, tcfg, seed);
        const double warm_steds = mean_steds(warm, st.desk, 512, 560);

        ssp_wins += warm_steds >= scratch_steds;
        detail += fmt("[seed %llu: ssp %.4f vs scratch %.4f] ", static_cast<unsigned long long>(seed), warm_steds,
                      scratch_steds);
    }
    report(7, "ssp-benefit trend", ssp_wins >= 2, detail + fmt("ssp >= scratch on %d/3 seeds", ssp_wins));
}

static void criterion_8(SharedState& st) {
    begin(8);
    const Vocab vocab = build_structure_vocab();
    auto pairs = build_task_dataset(Task::structure, st.desk, vocab, 112, 112);
    std::vector<TrainPair> train_pairs(pairs.begin(), pairs.begin() + 64);

    // Both variants run to a memorization plateau; mid-training snapshots
    // would compare learning speed (where the conv stem is ahead), not the
    // objective.
    TrainConfig tcfg;
    tcfg.steps = 1400;
    tcfg.warmup_steps = 50;
    tcfg.batch_size = 8;
    tcfg.lr = 1e-3f;
    tcfg.dropout = 0.0f;

    TaskModelConfig linear_cfg = tiny_task_config(Task::structure, EncoderVariant::linear_projection, 112, 64);
    Rng r1(801);
    TaskModel linear = TaskModel::make(linear_cfg, vocab, r1);
    train_task_model(linear, train_pairs, tcfg, 801);
    const double linear_steds = mean_steds(linear, st.desk, 0, 64);

    TaskModelConfig hybrid_cfg = tiny_task_config(Task::structure, EncoderVariant::hybrid_conv_stem, 112, 64);
    Rng r2(801);
    TaskModel hybrid = TaskModel::make(hybrid_cfg, vocab, r2);
    train_task_model(hybrid, train_pairs, tcfg, 801);
    const double hybrid_steds = mean_steds(hybrid, st.desk, 0, 64);

    const double gap = std::abs(hybrid_steds - linear_steds);
    const int64_t linear_params = param_count(linear.named_params());
    const int64_t hybrid_params = param_count(hybrid.named_params());
    report(8, "architecture-agnostic objective", gap <= 0.05,
           fmt("hybrid S-TEDS %.4f vs linear %.4f (|gap| %.2f pp <= 5 pp); params %lld vs %lld", hybrid_steds,
               linear_steds, 100.0 * gap, static_cast<long long>(hybrid_params), static_cast<long long>(linear_params)));
}

static void criterion_9(SharedState& st) {
    begin(9);
    // 16 fixed small tables.
    GenConfig gen;
    gen.min_rows = 2;
    gen.max_rows = 3;
    gen.min_cols = 2;
    gen.max_cols = 3;
    gen.span_prob = 0.15;
    gen.max_span = 2;
    gen.max_text_len = 4;
    const fs::path dir = st.work / "memorize";
    make_corpus(gen, 901, 16, dir.string());
    Corpus corpus = load_corpus((dir / "corpus.jsonl").string());

    TrainConfig tcfg;
    tcfg.steps = 2000;
    tcfg.warmup_steps = 40;
    tcfg.batch_size = 16;
    tcfg.lr = 1e-3f;
    tcfg.dropout = 0.0f;
    tcfg.check_every = 50;

    // Structure model with exact-match early stop.
    const Vocab svocab = build_structure_vocab();
    auto spairs = build_task_dataset(Task::structure, corpus, svocab, 112, 112);
    TaskModelConfig scfg = tiny_task_config(Task::structure, EncoderVariant::linear_projection, 112, 48);
    Rng r1(902);
    TaskModel structure_model = TaskModel::make(scfg, svocab, r1);
    auto all_exact = [](const TaskModel& m, const std::vector<TrainPair>& pairs) {
        for (const auto& p : pairs)
            if (greedy_decode(m, p.image).seq.ids != p.ids) return false;
        return true;
    };
    TrainResult sres = train_task_model(structure_model, spairs, tcfg, 902,
                                        [&](const TaskModel& m, int) { return all_exact(m, spairs); });

    // Bbox model.
    const Vocab bvocab = build_coord_vocab(112);
    auto bpairs = build_task_dataset(Task::bbox, corpus, bvocab, 112, 112);
    TaskModelConfig bcfg = tiny_task_config(Task::bbox, EncoderVariant::linear_projection, 112, 64);
    Rng r2(903);
    TaskModel bbox_model = TaskModel::make(bcfg, bvocab, r2);
    TrainResult bres = train_task_model(bbox_model, bpairs, tcfg, 903,
                                        [&](const TaskModel& m, int) { return all_exact(m, bpairs); });

    // Content model on groundtruth-quantized crops.
    const Vocab cvocab = build_task_vocab(Task::content, corpus, 112);
    auto cpairs = build_task_dataset(Task::content, corpus, cvocab, 32, 112);
    TaskModelConfig ccfg = tiny_task_config(Task::content, EncoderVariant::linear_projection, 32, 16);
    Rng r3(904);
    TaskModel content_model = TaskModel::make(ccfg, cvocab, r3);
    TrainResult cres = train_task_model(content_model, cpairs, tcfg, 904,
                                        [&](const TaskModel& m, int) { return all_exact(m, cpairs); });

    // End-to-end inference: TEDS 1.0 everywhere, boxes within quantization
    // tolerance, contents exact.
    int teds_perfect = 0, boxes_ok = 0, contents_ok = 0;
    for (size_t i = 0; i < corpus.samples.size(); ++i) {
        const Sample& s = corpus.samples[i];
        RasterImage img = corpus.load_image(i);
        InferenceResult res = infer(img, structure_model, bbox_model, content_model);
        teds_perfect += teds(res.html, gt_html(s), false).score == 1.0;
        bool all_boxes = res.bboxes.size() == s.annotation.bboxes.size();
        for (size_t k = 0; all_boxes && k < res.bboxes.size(); ++k) {
            const BBox& p = res.bboxes[k];
            const BBox& g = s.annotation.bboxes[k];
            all_boxes &= std::abs(p.x_min - g.x_min) <= 0.5f && std::abs(p.y_min - g.y_min) <= 0.5f &&
                         std::abs(p.x_max - g.x_max) <= 0.5f && std::abs(p.y_max - g.y_max) <= 0.5f;
        }
        boxes_ok += all_boxes;
        contents_ok += res.contents == s.annotation.contents;
    }
    const bool pass = teds_perfect == 16 && boxes_ok == 16 && contents_ok == 16;
    report(9, "end-to-end memorization", pass,
           fmt("TEDS=1.0 on %d/16, boxes within tolerance on %d/16, contents exact on %d/16 (steps: s=%d b=%d c=%d)",
               teds_perfect, boxes_ok, contents_ok, sres.steps_run, bres.steps_run, cres.steps_run));
}

static void criterion_10(SharedState& st) {
    begin(10);
    GenConfig gen;
    gen.fault_out_of_bounds = 531;
    const fs::path dir = st.work / "lint1000";
    CorpusManifest manifest = make_corpus(gen, 1001, 1000, dir.string());
    LintReport rep = lint_corpus((dir / "corpus.jsonl").string());

    std::set<int> flagged;
    for (const auto& [idx, f] : rep.findings) flagged.insert(static_cast<int>(idx));
    std::set<int> injected(manifest.fault_indices["out_of_bounds"].begin(),
                           manifest.fault_indices["out_of_bounds"].end());

    Annotation oob_example;
    oob_example.bboxes = {{-4.6f, 278.6f, 19.5f, 292.4f}};
    oob_example.contents = {"x"};
    LintFindings f = lint_annotation(oob_example, 448, 448);
    const bool example_ok = f.out_of_bounds.size() == 1 && f.out_of_bounds[0].sides.find("x_min<0") != std::string::npos;

    const bool pass = rep.fraction == 0.531 && flagged == injected && example_ok;
    report(10, "linter fidelity", pass,
           fmt("fraction %.4f (want 0.5310), flagged==injected: %s, example box flagged: %s", rep.fraction,
               flagged == injected ? "yes" : "NO", example_ok ? "yes" : "NO"));
}

static void criterion_11(SharedState& st) {
    begin(11);
    const fs::path dir = st.work / "determinism";
    fs::create_directories(dir);
    bool ok = true;
    std::string detail;

    // Corpus generation.
    GenConfig gen;
    gen.image_size = 32;
    gen.max_rows = 2;
    gen.max_cols = 2;
    make_corpus(gen, 42, 24, (dir / "a").string());
    make_corpus(gen, 42, 24, (dir / "b").string());
    const bool synth_ok = slurp(dir / "a" / "corpus.jsonl") == slurp(dir / "b" / "corpus.jsonl") &&
                          slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json") &&
                          slurp(dir / "a" / "img_00007.ppm") == slurp(dir / "b" / "img_00007.ppm");
    ok &= synth_ok;
    detail += std::string("synth ") + (synth_ok ? "ok" : "BAD") + "; ";
    Corpus corpus = load_corpus((dir / "a" / "corpus.jsonl").string());
    std::vector<RasterImage> images = images_of(corpus, 0, 24);

    // Tokenizer training: logs and checkpoints byte-identical.
    VqvaeConfig vcfg;
    vcfg.codebook_size = 16;
    vcfg.code_dim = 8;
    vcfg.steps = 15;
    vcfg.warmup_steps = 2;
    vcfg.batch_size = 4;
    VqvaeTrainResult v1 = train_vqvae(images, vcfg, 7);
    VqvaeTrainResult v2 = train_vqvae(images, vcfg, 7);
    save_checkpoint(vqvae_checkpoint(v1.model, vcfg.steps), (dir / "v1.ckpt").string());
    save_checkpoint(vqvae_checkpoint(v2.model, vcfg.steps), (dir / "v2.ckpt").string());
    const bool vq_ok = v1.log_csv == v2.log_csv && slurp(dir / "v1.ckpt") == slurp(dir / "v2.ckpt");
    ok &= vq_ok;
    detail += std::string("vqvae ") + (vq_ok ? "ok" : "BAD") + "; ";

    // Pretraining.
    EncoderConfig enc;
    enc.layers = 1;
    enc.heads = 2;
    enc.width = 32;
    enc.image_size = 32;
    SspConfig scfg;
    scfg.steps = 8;
    scfg.warmup_steps = 2;
    scfg.batch_size = 4;
    SspTrainResult s1 = pretrain(images, v1.model, enc, scfg, 9);
    SspTrainResult s2 = pretrain(images, v1.model, enc, scfg, 9);
    save_checkpoint(ssp_encoder_checkpoint(s1.model, scfg.steps), (dir / "s1.ckpt").string());
    save_checkpoint(ssp_encoder_checkpoint(s2.model, scfg.steps), (dir / "s2.ckpt").string());
    const bool ssp_ok = s1.log_csv == s2.log_csv && slurp(dir / "s1.ckpt") == slurp(dir / "s2.ckpt");
    ok &= ssp_ok;
    detail += std::string("pretrain ") + (ssp_ok ? "ok" : "BAD") + "; ";

    // Task training (with dropout active to cover its RNG stream too).
    const Vocab vocab = build_structure_vocab();
    auto pairs = build_task_dataset(Task::structure, corpus, vocab, 32, 32);
    TaskModelConfig mcfg = tiny_task_config(Task::structure, EncoderVariant::linear_projection, 32, 48);
    mcfg.encoder.layers = 1;
    mcfg.encoder.heads = 2;
    mcfg.encoder.width = 32;
    mcfg.decoder_layers = 1;
    TrainConfig tcfg;
    tcfg.steps = 10;
    tcfg.warmup_steps = 2;
    tcfg.batch_size = 4;
    tcfg.dropout = 0.1f;
    Rng mr1(11);
    TaskModel m1 = TaskModel::make(mcfg, vocab, mr1);
    TrainResult t1 = train_task_model(m1, pairs, tcfg, 13);
    Rng mr2(11);
    TaskModel m2 = TaskModel::make(mcfg, vocab, mr2);
    TrainResult t2 = train_task_model(m2, pairs, tcfg, 13);
    save_checkpoint(task_model_checkpoint(m1, t1.steps_run), (dir / "t1.ckpt").string());
    save_checkpoint(task_model_checkpoint(m2, t2.steps_run), (dir / "t2.ckpt").string());
    const bool train_ok = t1.log_csv == t2.log_csv && slurp(dir / "t1.ckpt") == slurp(dir / "t2.ckpt");
    ok &= train_ok;
    detail += std::string("finetune ") + (train_ok ? "ok" : "BAD") + "; ";

    // Inference.
    const Vocab bvocab = build_coord_vocab(32);
    TaskModelConfig bcfg = mcfg;
    bcfg.task = Task::bbox;
    bcfg.max_len = 64;
    Rng br(17);
    TaskModel bm = TaskModel::make(bcfg, bvocab, br);
    const Vocab cvocab = build_task_vocab(Task::content, corpus, 32);
    TaskModelConfig ccfg = mcfg;
    ccfg.task = Task::content;
    ccfg.max_len = 16;
    Rng cr(19);
    TaskModel cm = TaskModel::make(ccfg, cvocab, cr);
    InferenceResult i1 = infer(images[0], m1, bm, cm);
    InferenceResult i2 = infer(images[0], m1, bm, cm);
    const bool infer_ok = i1.to_json().dump() == i2.to_json().dump();
    ok &= infer_ok;
    detail += std::string("infer ") + (infer_ok ? "ok" : "BAD");

    report(11, "determinism", ok, detail);
}

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    auto want = [&](int n) { return only.empty() || only.count(n) > 0; };

    SharedState st;
    st.work = fs::temp_directory_path() / "tabrec_acceptance";
    fs::remove_all(st.work);
    fs::create_directories(st.work);

    if (want(1)) criterion_1();
    if (want(2)) criterion_2();
    if (want(3)) criterion_3();
    if (want(4)) criterion_4();

    const bool need_desk = want(5) || want(6) || want(7) || want(8);
    if (need_desk) {
        GenConfig gen;  // desk defaults: 112x112, all four styles
        make_corpus(gen, 555, 560, (st.work / "desk").string());
        st.desk = load_corpus((st.work / "desk" / "corpus.jsonl").string());
    }
    if (want(5)) criterion_5(st);
    if (want(6)) criterion_6(st);
    if (want(7)) criterion_7(st);
    if (want(8)) criterion_8(st);
    if (want(9)) criterion_9(st);
    if (want(10)) criterion_10(st);
    if (want(11)) criterion_11(st);

    if (g_failures == 0)
        std::printf("acceptance: all criteria passed\n");
    else
        std::printf("acceptance: %d criterion(s) FAILED\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
