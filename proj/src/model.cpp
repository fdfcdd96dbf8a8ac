#include "cpfx/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "cpfx/rng.hpp"

namespace cpfx {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kInitStd = 0.02;

Tensor normal_init(size_t rows, size_t cols, std::mt19937_64& rng, double std = kInitStd) {
    Tensor t(rows, cols);
    for (auto& v : t.data()) v = rand_normal(rng, 0.0, std);
    return t;
}

Tensor ones(size_t rows, size_t cols) {
    Tensor t(rows, cols);
    for (auto& v : t.data()) v = 1.0;
    return t;
}

AttnWeights init_attn(const std::string& base, int d, std::mt19937_64& rng) {
    AttnWeights w;
    w.Wq = Parameter(base + ".Wq", normal_init(d, d, rng));
    w.bq = Parameter(base + ".bq", Tensor(1, d));
    w.Wk = Parameter(base + ".Wk", normal_init(d, d, rng));
    w.bk = Parameter(base + ".bk", Tensor(1, d));
    w.Wv = Parameter(base + ".Wv", normal_init(d, d, rng));
    w.bv = Parameter(base + ".bv", Tensor(1, d));
    w.Wo = Parameter(base + ".Wo", normal_init(d, d, rng));
    w.bo = Parameter(base + ".bo", Tensor(1, d));
    w.ln_g = Parameter(base + ".ln.g", ones(1, d));
    w.ln_b = Parameter(base + ".ln.b", Tensor(1, d));
    return w;
}

FfnWeights init_ffn(const std::string& base, int d, int ffn, std::mt19937_64& rng) {
    FfnWeights w;
    w.W1 = Parameter(base + ".W1", normal_init(d, ffn, rng));
    w.b1 = Parameter(base + ".b1", Tensor(1, ffn));
    w.W2 = Parameter(base + ".W2", normal_init(ffn, d, rng));
    w.b2 = Parameter(base + ".b2", Tensor(1, d));
    w.ln_g = Parameter(base + ".ln.g", ones(1, d));
    w.ln_b = Parameter(base + ".ln.b", Tensor(1, d));
    return w;
}

// sinusoidal position rows, constant (not a parameter)
Tensor position_rows(size_t n, int d) {
    Tensor pe(n, d);
    for (size_t pos = 0; pos < n; ++pos)
        for (int i = 0; i < d; ++i) {
            const double angle =
                double(pos) / std::pow(10000.0, 2.0 * double(i / 2) / double(d));
            pe.at(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return pe;
}

void add_ffn_params(std::vector<Parameter*>& out, FfnWeights& w) {
    out.push_back(&w.ln_g);
    out.push_back(&w.ln_b);
    out.push_back(&w.W1);
    out.push_back(&w.b1);
    out.push_back(&w.W2);
    out.push_back(&w.b2);
}

void add_attn_params(std::vector<Parameter*>& out, AttnWeights& w) {
    out.push_back(&w.ln_g);
    out.push_back(&w.ln_b);
    out.push_back(&w.Wq);
    out.push_back(&w.bq);
    out.push_back(&w.Wk);
    out.push_back(&w.bk);
    out.push_back(&w.Wv);
    out.push_back(&w.bv);
    out.push_back(&w.Wo);
    out.push_back(&w.bo);
}

}  // namespace

Tensor attention(const Tensor& Q, const Tensor& K, const Tensor& V,
                 const std::optional<AugKV>& aug, MaskKind mask, int heads,
                 const std::vector<Tensor>* head_bias) {
    const size_t d = Q.cols();
    if (heads <= 0 || d % static_cast<size_t>(heads) != 0)
        throw std::invalid_argument("attention: head count does not divide d");
    if (K.cols() != d || V.cols() != d || K.rows() != V.rows())
        throw std::invalid_argument("attention: K/V shape mismatch");

    size_t rho = 0;
    Tensor Kfull = K, Vfull = V;
    if (aug && aug->k.rows() > 0) {
        if (aug->k.cols() != d || aug->v.cols() != d || aug->k.rows() != aug->v.rows())
            throw std::invalid_argument("attention: augmented K/V rows must be [rho, d]");
        rho = aug->k.rows();
        Kfull = concat_rows(aug->k, K);
        Vfull = concat_rows(aug->v, V);
    }

    const size_t N = Q.rows(), M = K.rows(), Mt = rho + M;
    const size_t dh = d / static_cast<size_t>(heads);
    if (head_bias && head_bias->size() != static_cast<size_t>(heads))
        throw std::invalid_argument("attention: one bias matrix per head required");

    // additive causal mask, aligned at the end of the sequence keys; prefix
    // columns are never masked
    std::vector<double> maskv;
    const std::vector<double>* maskp = nullptr;
    if (mask == MaskKind::causal) {
        maskv.assign(N * Mt, 0.0);
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(M) - static_cast<std::ptrdiff_t>(N);
        for (size_t i = 0; i < N; ++i)
            for (size_t j = 0; j < M; ++j)
                if (static_cast<std::ptrdiff_t>(j) > static_cast<std::ptrdiff_t>(i) + shift)
                    maskv[i * Mt + rho + j] = kNegInf;
        maskp = &maskv;
    }

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor out;
    for (int h = 0; h < heads; ++h) {
        Tensor Qh = slice_cols(Q, h * dh, (h + 1) * dh);
        Tensor Kh = slice_cols(Kfull, h * dh, (h + 1) * dh);
        Tensor Vh = slice_cols(Vfull, h * dh, (h + 1) * dh);
        Tensor scores = scale(matmul_nt(Qh, Kh), inv_sqrt_dh);
        if (head_bias) {
            const Tensor& b = (*head_bias)[h];
            if (b.rows() != N || b.cols() != Mt)
                throw std::invalid_argument("attention: bias shape must be [N, rho+M]");
            scores = add(scores, b);
        }
        Tensor probs = softmax_rows(scores, maskp);
        Tensor ctx = matmul(probs, Vh);
        out = h == 0 ? ctx : concat_cols(out, ctx);
    }
    return out;
}

int rel_position_bucket(int relative_position, bool bidirectional,
                        int num_buckets, int max_distance) {
    int bucket = 0;
    int rp = relative_position;
    if (bidirectional) {
        num_buckets /= 2;
        if (rp > 0) bucket += num_buckets;
        rp = std::abs(rp);
    } else {
        rp = -std::min(rp, 0);
    }
    const int max_exact = num_buckets / 2;
    if (rp < max_exact) return bucket + rp;
    const int large =
        max_exact + static_cast<int>(std::log(double(rp) / max_exact) /
                                     std::log(double(max_distance) / max_exact) *
                                     (num_buckets - max_exact));
    return bucket + std::min(large, num_buckets - 1);
}

Tensor rel_bias_with_prefix(const Tensor& bias_table, int N, int M,
                            int rho_total, bool causal) {
    if (bias_table.cols() != 1 || bias_table.rows() != kRelBuckets)
        throw std::invalid_argument("rel_bias_with_prefix: table must be [buckets, 1]");
    // index kRelBuckets of the augmented table is a constant zero row, used
    // for every prefix column
    Tensor aug_table = concat_rows(bias_table, Tensor(1, 1));
    std::vector<int> ids;
    ids.reserve(static_cast<size_t>(N) * (rho_total + M));
    for (int i = 0; i < N; ++i) {
        for (int p = 0; p < rho_total; ++p) ids.push_back(kRelBuckets);
        const int q_pos = i + (M - N);  // queries aligned at the end
        for (int j = 0; j < M; ++j)
            ids.push_back(rel_position_bucket(j - q_pos, !causal));
    }
    return reshape(embed_rows(aug_table, ids), N, rho_total + M);
}

Tensor self_attention_sublayer(const AttnWeights& w, const Tensor& x,
                               const std::optional<AugKV>& aug, MaskKind mask,
                               int heads, const std::vector<Tensor>* head_bias) {
    Tensor h = layer_norm(x, w.ln_g.value, w.ln_b.value);
    Tensor q = add_rowvec(matmul(h, w.Wq.value), w.bq.value);
    Tensor k = add_rowvec(matmul(h, w.Wk.value), w.bk.value);
    Tensor v = add_rowvec(matmul(h, w.Wv.value), w.bv.value);
    Tensor ctx = attention(q, k, v, aug, mask, heads, head_bias);
    Tensor o = add_rowvec(matmul(ctx, w.Wo.value), w.bo.value);
    return add(x, o);
}

namespace {

Tensor cross_attention_sublayer(const AttnWeights& w, const Tensor& x,
                                const Tensor& enc_out, const std::optional<AugKV>& aug,
                                int heads) {
    Tensor h = layer_norm(x, w.ln_g.value, w.ln_b.value);
    Tensor q = add_rowvec(matmul(h, w.Wq.value), w.bq.value);
    Tensor k = add_rowvec(matmul(enc_out, w.Wk.value), w.bk.value);
    Tensor v = add_rowvec(matmul(enc_out, w.Wv.value), w.bv.value);
    Tensor ctx = attention(q, k, v, aug, MaskKind::none, heads);
    Tensor o = add_rowvec(matmul(ctx, w.Wo.value), w.bo.value);
    return add(x, o);
}

Tensor ffn_sublayer(const FfnWeights& w, const Tensor& x) {
    Tensor h = layer_norm(x, w.ln_g.value, w.ln_b.value);
    h = gelu(add_rowvec(matmul(h, w.W1.value), w.b1.value));
    h = add_rowvec(matmul(h, w.W2.value), w.b2.value);
    return add(x, h);
}

}  // namespace

Model Model::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    auto rng = named_rng(seed, "model");
    // scaled at lookup by sqrt(d); 1/sqrt(d) init keeps token content and the
    // unit-scale sinusoidal positions comparable at the input
    m.tok_embed = Parameter("embed.tok",
                            normal_init(cfg.vocab, cfg.d, rng, 1.0 / std::sqrt(double(cfg.d))));
    for (int l = 0; l < cfg.L; ++l) {
        EncoderLayer el;
        el.self = init_attn("enc." + std::to_string(l) + ".self", cfg.d, rng);
        el.ffn = init_ffn("enc." + std::to_string(l) + ".ffn", cfg.d, cfg.ffn_dim, rng);
        m.enc.push_back(std::move(el));
        DecoderLayer dl;
        dl.self = init_attn("dec." + std::to_string(l) + ".self", cfg.d, rng);
        dl.cross = init_attn("dec." + std::to_string(l) + ".cross", cfg.d, rng);
        dl.ffn = init_ffn("dec." + std::to_string(l) + ".ffn", cfg.d, cfg.ffn_dim, rng);
        m.dec.push_back(std::move(dl));
    }
    m.enc_ln_g = Parameter("enc.ln.g", ones(1, cfg.d));
    m.enc_ln_b = Parameter("enc.ln.b", Tensor(1, cfg.d));
    m.dec_ln_g = Parameter("dec.ln.g", ones(1, cfg.d));
    m.dec_ln_b = Parameter("dec.ln.b", Tensor(1, cfg.d));
    if (cfg.rel_bias) {
        m.rel_e = Parameter("rel.E", normal_init(kRelBuckets, cfg.heads, rng));
        m.rel_dm = Parameter("rel.Dm", normal_init(kRelBuckets, cfg.heads, rng));
    }
    return m;
}

void Model::set_trainable_specials(const std::vector<int>& token_ids) {
    special_rows.clear();
    Tensor overlay(token_ids.size(), cfg.d);
    for (size_t i = 0; i < token_ids.size(); ++i) {
        const int id = token_ids[i];
        if (id < 0 || id >= cfg.vocab)
            throw std::out_of_range("set_trainable_specials: token id out of range");
        special_rows[id] = static_cast<int>(i);
        for (int c = 0; c < cfg.d; ++c)
            overlay.at(i, c) = tok_embed.value.at(id, c);
    }
    special_embed = Parameter("embed.special", std::move(overlay), false);
}

void Model::freeze_base() {
    for (Parameter* p : base_parameters()) {
        p->frozen = true;
        p->value.node()->requires_grad = false;
        p->value.node()->grad.clear();
    }
    frozen_ = true;
}

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out = base_parameters();
    if (special_embed.value.defined() && special_embed.value.rows() > 0)
        out.push_back(&special_embed);
    return out;
}

std::vector<Parameter*> Model::base_parameters() {
    std::vector<Parameter*> out;
    out.push_back(&tok_embed);
    for (auto& l : enc) {
        add_attn_params(out, l.self);
        add_ffn_params(out, l.ffn);
    }
    for (auto& l : dec) {
        add_attn_params(out, l.self);
        add_attn_params(out, l.cross);
        add_ffn_params(out, l.ffn);
    }
    out.push_back(&enc_ln_g);
    out.push_back(&enc_ln_b);
    out.push_back(&dec_ln_g);
    out.push_back(&dec_ln_b);
    if (cfg.rel_bias) {
        out.push_back(&rel_e);
        out.push_back(&rel_dm);
    }
    return out;
}

std::vector<const Parameter*> Model::base_parameters() const {
    auto v = const_cast<Model*>(this)->base_parameters();
    return {v.begin(), v.end()};
}

Tensor Model::embed(const std::vector<int>& ids) const {
    for (int id : ids)
        if (id < 0 || id >= cfg.vocab)
            throw std::out_of_range("embed: unknown token id " + std::to_string(id));
    Tensor e = scale(embed_rows(tok_embed.value, ids, special_embed.value, special_rows),
                     std::sqrt(double(cfg.d)));
    if (!cfg.rel_bias) e = add(e, position_rows(ids.size(), cfg.d));
    return e;
}

namespace {

std::optional<AugKV> layer_aug(const Tensor& stack, int layer, int d) {
    if (stack.rows() == 0) return std::nullopt;
    auto [k, v] = stack_layer_kv(stack, layer, d);
    return AugKV{k, v};
}

}  // namespace

Tensor Model::run_encoder(const std::vector<int>& x, const Tensor& stack_e) const {
    Tensor h = embed(x);
    const int rho_total = static_cast<int>(stack_e.rows());
    std::vector<Tensor> bias;
    std::vector<Tensor>* biasp = nullptr;
    if (cfg.rel_bias) {
        const int n = static_cast<int>(x.size());
        for (int hh = 0; hh < cfg.heads; ++hh)
            bias.push_back(rel_bias_with_prefix(slice_cols(rel_e.value, hh, hh + 1),
                                                n, n, rho_total, false));
        biasp = &bias;
    }
    for (int l = 0; l < cfg.L; ++l) {
        h = self_attention_sublayer(enc[l].self, h, layer_aug(stack_e, l, cfg.d),
                                    MaskKind::none, cfg.heads, biasp);
        h = ffn_sublayer(enc[l].ffn, h);
    }
    return layer_norm(h, enc_ln_g.value, enc_ln_b.value);
}

Tensor Model::run_decoder(const Tensor& enc_out, const std::vector<int>& dec_in,
                          const Tensor& stack_dm, const Tensor& stack_dc) const {
    Tensor h = embed(dec_in);
    const int rho_total = static_cast<int>(stack_dm.rows());
    std::vector<Tensor> bias;
    std::vector<Tensor>* biasp = nullptr;
    if (cfg.rel_bias) {
        const int n = static_cast<int>(dec_in.size());
        for (int hh = 0; hh < cfg.heads; ++hh)
            bias.push_back(rel_bias_with_prefix(slice_cols(rel_dm.value, hh, hh + 1),
                                                n, n, rho_total, true));
        biasp = &bias;
    }
    for (int l = 0; l < cfg.L; ++l) {
        h = self_attention_sublayer(dec[l].self, h, layer_aug(stack_dm, l, cfg.d),
                                    MaskKind::causal, cfg.heads, biasp);
        h = cross_attention_sublayer(dec[l].cross, h, enc_out,
                                     layer_aug(stack_dc, l, cfg.d), cfg.heads);
        h = ffn_sublayer(dec[l].ffn, h);
    }
    h = layer_norm(h, dec_ln_g.value, dec_ln_b.value);
    // tied output head: project onto the effective embedding table so the
    // trainable special rows stay consistent between input and output sides
    std::vector<int> iota(cfg.vocab);
    for (int i = 0; i < cfg.vocab; ++i) iota[i] = i;
    Tensor table = embed_rows(tok_embed.value, iota, special_embed.value, special_rows);
    return matmul_nt(h, table);
}

Tensor Model::encode(const std::vector<int>& x, const PrefixBank& bank,
                     const ResolvedGuidance& rg) const {
    return run_encoder(x, materialize_stack(bank, rg, AttentionClass::E));
}

Tensor Model::forward(const std::vector<int>& x, const std::vector<int>& y,
                      const PrefixBank& bank, const ResolvedGuidance& rg) const {
    if (y.empty()) throw std::invalid_argument("forward: empty target");
    Tensor enc_out = run_encoder(x, materialize_stack(bank, rg, AttentionClass::E));
    std::vector<int> dec_in;
    dec_in.push_back(1 /* bos */);
    dec_in.insert(dec_in.end(), y.begin(), y.end() - 1);
    return run_decoder(enc_out, dec_in,
                       materialize_stack(bank, rg, AttentionClass::Dm),
                       materialize_stack(bank, rg, AttentionClass::Dc));
}

EncodedInput Model::encode_for_decoding(const std::vector<int>& x, const PrefixBank& bank,
                                        const ResolvedGuidance& rg) const {
    EncodedInput ei;
    ei.enc_out = run_encoder(x, materialize_stack(bank, rg, AttentionClass::E));
    ei.stack_dm = materialize_stack(bank, rg, AttentionClass::Dm);
    ei.stack_dc = materialize_stack(bank, rg, AttentionClass::Dc);
    return ei;
}

Tensor Model::step_logits(const EncodedInput& ei, const std::vector<int>& dec_in) const {
    return run_decoder(ei.enc_out, dec_in, ei.stack_dm, ei.stack_dc);
}

}  // namespace cpfx
