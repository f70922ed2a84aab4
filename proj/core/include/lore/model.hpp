#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lore/tensor.hpp"
#include "lore/vocab.hpp"

namespace lore {

struct ModelConfig {
    int image_size = 32;
    int patch = 4;
    int d_model = 64;
    int heads = 4;
    int layers = 4;
    int vocab_size = kVocabSize;
    int max_text_tokens = 12;
    int time_embed_dim = 64;

    int grid() const { return image_size / patch; }
    int n_image_tokens() const { return grid() * grid(); }
    int patch_dim() const { return patch * patch * 3; }
    int d_head() const { return d_model / heads; }
    int seq_len() const { return max_text_tokens + n_image_tokens(); }

    void validate() const {
        if (image_size <= 0 || patch <= 0 || image_size % patch != 0)
            throw std::invalid_argument("ModelConfig: image_size must be a multiple of patch");
        if (d_model <= 0 || heads <= 0 || d_model % heads != 0)
            throw std::invalid_argument("ModelConfig: d_model must be divisible by heads");
        if (layers <= 0 || vocab_size <= 0 || max_text_tokens <= 0 || time_embed_dim <= 0 ||
            time_embed_dim % 2 != 0)
            throw std::invalid_argument("ModelConfig: invalid field");
    }

    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerParams {
    Tensor<T> ln1_g, ln1_b;
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<T> ln2_g, ln2_b;
    Tensor<T> mlp1_w, mlp1_b, mlp2_w, mlp2_b;
    Tensor<T> ada_w, ada_b;  // -> [shift1 scale1 gate1 shift2 scale2 gate2]
};

template <typename T>
struct ModelParams {
    ModelConfig cfg;
    Tensor<T> tok_emb;             // [vocab, d]
    Tensor<T> pos_emb;             // [seq, d]
    Tensor<T> patch_in_w, patch_in_b;
    Tensor<T> t_mlp1_w, t_mlp1_b;  // sinusoidal features -> d
    Tensor<T> t_mlp2_w, t_mlp2_b;
    std::vector<LayerParams<T>> layer;
    Tensor<T> lnf_g, lnf_b;
    Tensor<T> head_w, head_b;      // zero-initialized velocity head

    std::vector<std::pair<std::string, Tensor<T>*>> named_params() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        auto put = [&](const std::string& n, Tensor<T>& t) { out.emplace_back(n, &t); };
        put("tok_emb", tok_emb);
        put("pos_emb", pos_emb);
        put("patch_in_w", patch_in_w);
        put("patch_in_b", patch_in_b);
        put("t_mlp1_w", t_mlp1_w);
        put("t_mlp1_b", t_mlp1_b);
        put("t_mlp2_w", t_mlp2_w);
        put("t_mlp2_b", t_mlp2_b);
        for (size_t l = 0; l < layer.size(); ++l) {
            const std::string p = "layers." + std::to_string(l) + ".";
            auto& L = layer[l];
            put(p + "ln1_g", L.ln1_g);
            put(p + "ln1_b", L.ln1_b);
            put(p + "wq", L.wq);
            put(p + "bq", L.bq);
            put(p + "wk", L.wk);
            put(p + "bk", L.bk);
            put(p + "wv", L.wv);
            put(p + "bv", L.bv);
            put(p + "wo", L.wo);
            put(p + "bo", L.bo);
            put(p + "ln2_g", L.ln2_g);
            put(p + "ln2_b", L.ln2_b);
            put(p + "mlp1_w", L.mlp1_w);
            put(p + "mlp1_b", L.mlp1_b);
            put(p + "mlp2_w", L.mlp2_w);
            put(p + "mlp2_b", L.mlp2_b);
            put(p + "ada_w", L.ada_w);
            put(p + "ada_b", L.ada_b);
        }
        put("lnf_g", lnf_g);
        put("lnf_b", lnf_b);
        put("head_w", head_w);
        put("head_b", head_b);
        return out;
    }

    void set_requires_grad(bool b) {
        for (auto& [name, t] : named_params()) t->set_requires_grad(b);
    }

    int64_t param_count() {
        int64_t n = 0;
        for (auto& [name, t] : named_params()) n += t->numel();
        return n;
    }

    template <typename U>
    ModelParams<U> cast() {
        ModelParams<U> out;
        out.cfg = cfg;
        out.layer.resize(layer.size());
        auto src = named_params();
        auto dst = out.named_params();
        for (size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<U>();
        return out;
    }
};

// Scaled Gaussian init (std 0.02); velocity head and AdaLN modulation start
// at zero so the network is the identity flow at initialization.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const T std02 = T(0.02);
    const int d = cfg.d_model;
    const int pd = cfg.patch_dim();
    auto w = [&](Shape s) { return Tensor<T>::randn(std::move(s), rng, std02, true); };
    auto zeros = [&](Shape s) { return Tensor<T>::zeros(std::move(s), true); };
    auto ones = [&](Shape s) { return Tensor<T>::full(std::move(s), T(1), true); };

    ModelParams<T> p;
    p.cfg = cfg;
    p.tok_emb = w({cfg.vocab_size, d});
    p.pos_emb = w({cfg.seq_len(), d});
    p.patch_in_w = w({pd, d});
    p.patch_in_b = zeros({d});
    p.t_mlp1_w = w({cfg.time_embed_dim, d});
    p.t_mlp1_b = zeros({d});
    p.t_mlp2_w = w({d, d});
    p.t_mlp2_b = zeros({d});
    p.layer.resize(cfg.layers);
    for (auto& L : p.layer) {
        L.ln1_g = ones({d});
        L.ln1_b = zeros({d});
        L.wq = w({d, d});
        L.bq = zeros({d});
        L.wk = w({d, d});
        L.bk = zeros({d});
        L.wv = w({d, d});
        L.bv = zeros({d});
        L.wo = w({d, d});
        L.bo = zeros({d});
        L.ln2_g = ones({d});
        L.ln2_b = zeros({d});
        L.mlp1_w = w({d, 4 * d});
        L.mlp1_b = zeros({4 * d});
        L.mlp2_w = w({4 * d, d});
        L.mlp2_b = zeros({d});
        L.ada_w = zeros({d, 6 * d});
        L.ada_b = zeros({6 * d});
    }
    p.lnf_g = ones({d});
    p.lnf_b = zeros({d});
    p.head_w = zeros({d, pd});
    p.head_b = zeros({pd});
    return p;
}

// ---------------------------------------------------------------------------
// patchify: 32x32x3 image (row-major y, x, rgb) <-> [n_tokens, patch_dim]
// Token (ty, tx) covers pixels y in [4ty, 4ty+4), x in [4tx, 4tx+4); inside a
// token values are ordered (py, px, rgb). Lossless permutation.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> patchify(std::span<const T> image, const ModelConfig& cfg) {
    const int s = cfg.image_size, pp = cfg.patch, g = cfg.grid();
    if (static_cast<int64_t>(image.size()) != int64_t(s) * s * 3)
        throw std::invalid_argument("patchify: expected " + std::to_string(s) + "x" +
                                    std::to_string(s) + "x3 image");
    Tensor<T> out = Tensor<T>::zeros({cfg.n_image_tokens(), cfg.patch_dim()});
    auto ov = out.values_mut();
    for (int ty = 0; ty < g; ++ty)
        for (int tx = 0; tx < g; ++tx) {
            T* tok = ov.data() + (ty * g + tx) * cfg.patch_dim();
            for (int py = 0; py < pp; ++py)
                for (int px = 0; px < pp; ++px)
                    for (int c = 0; c < 3; ++c)
                        tok[(py * pp + px) * 3 + c] =
                            image[((ty * pp + py) * s + (tx * pp + px)) * 3 + c];
        }
    return out;
}

template <typename T>
std::vector<T> unpatchify(const Tensor<T>& grid, const ModelConfig& cfg) {
    const int s = cfg.image_size, pp = cfg.patch, g = cfg.grid();
    if (grid.rows() != cfg.n_image_tokens() || grid.cols() != cfg.patch_dim())
        throw std::invalid_argument("unpatchify: wrong latent shape");
    std::vector<T> image(static_cast<size_t>(s) * s * 3);
    auto gv = grid.values();
    for (int ty = 0; ty < g; ++ty)
        for (int tx = 0; tx < g; ++tx) {
            const T* tok = gv.data() + (ty * g + tx) * cfg.patch_dim();
            for (int py = 0; py < pp; ++py)
                for (int px = 0; px < pp; ++px)
                    for (int c = 0; c < 3; ++c)
                        image[((ty * pp + py) * s + (tx * pp + px)) * 3 + c] =
                            tok[(py * pp + px) * 3 + c];
        }
    return image;
}

// ---------------------------------------------------------------------------
// forward pass
// ---------------------------------------------------------------------------

struct ProbeConfig {
    bool record_attention = false;
    bool record_values = false;
    // Debug aid: also keep the full [seq, seq] maps (memory heavy).
    bool record_full_attention = false;
    // Aggregation sets used by extract_map; empty = all.
    std::vector<int> layer_set;
    std::vector<int> head_set;
};

// Cross-attention blocks captured during one forward pass. cross[l][h] is
// the [n_image_tokens, max_text_tokens] slice of that head's attention map:
// image-token queries attending to text-token keys.
template <typename T>
struct AttentionRecord {
    int step = -1;
    T timestep = T(0);
    std::vector<int> prompt_ids;
    std::vector<std::vector<Tensor<T>>> cross;
    std::vector<std::vector<Tensor<T>>> full;  // only with record_full_attention

    bool empty() const { return cross.empty(); }
};

// Per-layer replacement rows for masked value injection. keep[i] != 0 marks
// an edited token whose live value row is kept; all other image rows are
// overwritten with the cached row.
template <typename T>
struct ValueInjection {
    std::vector<std::span<const T>> layer_rows;  // [layers] x [n_img * d_model]
    std::vector<uint8_t> keep;                   // [n_img]
};

template <typename T>
struct ForwardResult {
    Tensor<T> velocity;  // [B * n_img, patch_dim]
    AttentionRecord<T> record;
    std::vector<std::vector<T>> values;  // per layer, post-injection image V rows
};

template <typename T>
Tensor<T> sinusoidal_features(std::span<const T> ts, int dim) {
    const int half = dim / 2;
    const int64_t b = static_cast<int64_t>(ts.size());
    Tensor<T> out = Tensor<T>::zeros({b, dim});
    auto ov = out.values_mut();
    for (int64_t i = 0; i < b; ++i)
        for (int j = 0; j < half; ++j) {
            const double omega = std::exp(std::log(10000.0) * double(j) / double(half));
            const double a = double(ts[i]) * omega;
            ov[i * dim + j] = static_cast<T>(std::sin(a));
            ov[i * dim + half + j] = static_cast<T>(std::cos(a));
        }
    return out;
}

// Joint-sequence DiT velocity field over B stacked samples. z holds
// [B * n_img, patch_dim] latents; prompts/ts give per-sample conditioning.
// Attention/value probing and value injection require B == 1.
template <typename T>
ForwardResult<T> forward_batch(Tape<T>& tape, const ModelParams<T>& params, const Tensor<T>& z,
                               std::span<const PromptSeq> prompts, std::span<const T> ts,
                               const ProbeConfig& probe = {},
                               const ValueInjection<T>* inject = nullptr) {
    const ModelConfig& cfg = params.cfg;
    const int64_t b = static_cast<int64_t>(prompts.size());
    const int st = cfg.max_text_tokens, si = cfg.n_image_tokens(), s = cfg.seq_len();
    const int d = cfg.d_model, dh = cfg.d_head();
    if (b < 1 || static_cast<int64_t>(ts.size()) != b)
        throw std::invalid_argument("forward: prompts/ts size mismatch");
    if (z.rows() != b * si || z.cols() != cfg.patch_dim())
        throw std::invalid_argument("forward: latent shape mismatch");
    for (const T t : ts)
        if (!(t >= T(0) && t <= T(1))) throw std::invalid_argument("forward: t out of range [0,1]");
    for (const auto& p : prompts)
        if (p.length() != st) throw std::invalid_argument("forward: prompt length mismatch");
    const bool probing = (probe.record_attention || probe.record_values ||
                          probe.record_full_attention);
    if ((probing || inject) && b != 1)
        throw std::invalid_argument("forward: probing/injection requires batch size 1");
    if (inject && static_cast<int>(inject->layer_rows.size()) != cfg.layers)
        throw std::invalid_argument("forward: injection must cover every layer");

    ForwardResult<T> res;
    if (probe.record_attention || probe.record_full_attention) {
        res.record.timestep = ts[0];
        res.record.prompt_ids = prompts[0].ids;
        if (probe.record_attention)
            res.record.cross.assign(cfg.layers, std::vector<Tensor<T>>(cfg.heads));
        if (probe.record_full_attention)
            res.record.full.assign(cfg.layers, std::vector<Tensor<T>>(cfg.heads));
    }

    // embed text and image tokens, interleave per sample
    Tensor<T> img_emb = add(tape, matmul(tape, z, params.patch_in_w), params.patch_in_b);
    std::vector<Tensor<T>> parts;
    parts.reserve(2 * b);
    for (int64_t i = 0; i < b; ++i) {
        parts.push_back(embedding(tape, params.tok_emb, std::span<const int>(prompts[i].ids)));
        parts.push_back(slice_rows(tape, img_emb, i * si, si));
    }
    Tensor<T> x = concat_rows(tape, parts);
    x = add(tape, x, tile_rows(tape, params.pos_emb, b));

    // timestep conditioning
    Tensor<T> tfeat = sinusoidal_features<T>(ts, cfg.time_embed_dim);
    Tensor<T> temb = silu(tape, add(tape, matmul(tape, tfeat, params.t_mlp1_w), params.t_mlp1_b));
    temb = add(tape, matmul(tape, temb, params.t_mlp2_w), params.t_mlp2_b);

    const T inv_sqrt_dh = T(1) / std::sqrt(T(dh));
    for (int l = 0; l < cfg.layers; ++l) {
        const auto& L = params.layer[l];
        Tensor<T> mod = add(tape, matmul(tape, silu(tape, temb), L.ada_w), L.ada_b);
        auto mod_slice = [&](int idx) {
            return repeat_rows(tape, slice_cols(tape, mod, int64_t(idx) * d, d), s);
        };
        Tensor<T> shift1 = mod_slice(0), scale1 = mod_slice(1), gate1 = mod_slice(2);
        Tensor<T> shift2 = mod_slice(3), scale2 = mod_slice(4), gate2 = mod_slice(5);

        Tensor<T> h = layernorm(tape, x, L.ln1_g, L.ln1_b, T(1e-5));
        h = add(tape, mul(tape, h, add_const(tape, scale1, T(1))), shift1);
        Tensor<T> q = add(tape, matmul(tape, h, L.wq), L.bq);
        Tensor<T> k = add(tape, matmul(tape, h, L.wk), L.bk);
        Tensor<T> v = add(tape, matmul(tape, h, L.wv), L.bv);

        if (inject) {
            Tensor<T> v_img = slice_rows(tape, v, st, si);
            v_img = mix_rows(tape, v_img, inject->layer_rows[l], inject->keep);
            v = concat_rows(tape, {slice_rows(tape, v, 0, st), v_img});
        }
        if (probe.record_values) {
            auto vv = v.values();
            res.values.emplace_back(vv.begin() + st * d, vv.begin() + (st + si) * d);
        }

        std::vector<Tensor<T>> sample_ctx;
        sample_ctx.reserve(b);
        std::vector<Tensor<T>> qh(cfg.heads), kh(cfg.heads), vh(cfg.heads);
        for (int hh = 0; hh < cfg.heads; ++hh) {
            qh[hh] = slice_cols(tape, q, int64_t(hh) * dh, dh);
            kh[hh] = slice_cols(tape, k, int64_t(hh) * dh, dh);
            vh[hh] = slice_cols(tape, v, int64_t(hh) * dh, dh);
        }
        for (int64_t i = 0; i < b; ++i) {
            std::vector<Tensor<T>> heads;
            heads.reserve(cfg.heads);
            for (int hh = 0; hh < cfg.heads; ++hh) {
                Tensor<T> qs = slice_rows(tape, qh[hh], i * s, s);
                Tensor<T> ks = slice_rows(tape, kh[hh], i * s, s);
                Tensor<T> vs = slice_rows(tape, vh[hh], i * s, s);
                Tensor<T> scores =
                    scale(tape, matmul(tape, qs, transpose(tape, ks)), inv_sqrt_dh);
                Tensor<T> attn = softmax_lastdim(tape, scores);
                if (probe.record_attention)
                    res.record.cross[l][hh] =
                        slice_cols(tape, slice_rows(tape, attn, st, si), 0, st);
                if (probe.record_full_attention) res.record.full[l][hh] = attn;
                heads.push_back(matmul(tape, attn, vs));
            }
            sample_ctx.push_back(concat_cols(tape, heads));
        }
        Tensor<T> ctx = b == 1 ? sample_ctx[0] : concat_rows(tape, sample_ctx);
        Tensor<T> attn_out = add(tape, matmul(tape, ctx, L.wo), L.bo);
        x = add(tape, x, mul(tape, attn_out, gate1));

        Tensor<T> h2 = layernorm(tape, x, L.ln2_g, L.ln2_b, T(1e-5));
        h2 = add(tape, mul(tape, h2, add_const(tape, scale2, T(1))), shift2);
        Tensor<T> m = gelu(tape, add(tape, matmul(tape, h2, L.mlp1_w), L.mlp1_b));
        m = add(tape, matmul(tape, m, L.mlp2_w), L.mlp2_b);
        x = add(tape, x, mul(tape, m, gate2));
    }

    std::vector<Tensor<T>> img_parts;
    img_parts.reserve(b);
    for (int64_t i = 0; i < b; ++i) img_parts.push_back(slice_rows(tape, x, i * s + st, si));
    Tensor<T> io = b == 1 ? img_parts[0] : concat_rows(tape, img_parts);
    io = layernorm(tape, io, params.lnf_g, params.lnf_b, T(1e-5));
    res.velocity = add(tape, matmul(tape, io, params.head_w), params.head_b);
    return res;
}

// Single-sample convenience wrapper: z is one [n_img, patch_dim] latent.
template <typename T>
ForwardResult<T> forward_velocity(Tape<T>& tape, const ModelParams<T>& params, const Tensor<T>& z,
                                  const PromptSeq& prompt, T t, const ProbeConfig& probe = {},
                                  const ValueInjection<T>* inject = nullptr) {
    const PromptSeq prompts[1] = {prompt};
    const T ts[1] = {t};
    return forward_batch(tape, params, z, std::span<const PromptSeq>(prompts),
                         std::span<const T>(ts), probe, inject);
}

}  // namespace lore
