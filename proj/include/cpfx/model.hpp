#pragma once

// Encoder-decoder transformer with per-layer, per-class key/value prefix
// injection. Prefix rows substitute directly for post-projection K/V rows and
// are visible to every query position regardless of causal masking.

#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "cpfx/config.hpp"
#include "cpfx/guidance.hpp"
#include "cpfx/prefix.hpp"
#include "cpfx/tensor.hpp"

namespace cpfx {

// prefix K/V rows for one layer and class, ordered [controls..., general]
struct AugKV {
    Tensor k;  // [rho_total, d]
    Tensor v;
};

enum class MaskKind { none, causal };

// Multi-head attention over already-projected Q/K/V. Prefix rows, when given,
// are prepended to the keys and values; causal masking is aligned at the end
// of the key sequence so prefix keys stay visible to every query.
// head_bias, when given, holds one [N, rho_total+M] additive score matrix per head.
Tensor attention(const Tensor& Q, const Tensor& K, const Tensor& V,
                 const std::optional<AugKV>& aug, MaskKind mask, int heads,
                 const std::vector<Tensor>* head_bias = nullptr);

constexpr int kRelBuckets = 16;
constexpr int kRelMaxDistance = 32;

// Bucketed relative-position bias for one head, with the columns of prefix
// keys forced to exactly zero. bias_table is [kRelBuckets, 1].
Tensor rel_bias_with_prefix(const Tensor& bias_table, int N, int M,
                            int rho_total, bool causal);
int rel_position_bucket(int relative_position, bool bidirectional,
                        int num_buckets = kRelBuckets,
                        int max_distance = kRelMaxDistance);

struct AttnWeights {
    Parameter Wq, bq, Wk, bk, Wv, bv, Wo, bo;
    Parameter ln_g, ln_b;  // pre-norm of the sublayer
};

struct FfnWeights {
    Parameter W1, b1, W2, b2;
    Parameter ln_g, ln_b;
};

struct EncoderLayer {
    AttnWeights self;
    FfnWeights ffn;
};

struct DecoderLayer {
    AttnWeights self;   // Dm
    AttnWeights cross;  // Dc
    FfnWeights ffn;
};

// projections + attention of one self-attention sublayer (residual included);
// exposed so cost accounting can measure a single sublayer
Tensor self_attention_sublayer(const AttnWeights& w, const Tensor& x,
                               const std::optional<AugKV>& aug, MaskKind mask,
                               int heads, const std::vector<Tensor>* head_bias = nullptr);

// encoder output plus the decoder-side prefix stacks, reused across decode steps
struct EncodedInput {
    Tensor enc_out;
    Tensor stack_dm;  // [rho_total, 2dL]
    Tensor stack_dc;
};

class Model {
public:
    ModelConfig cfg;

    // [vocab, d]; also the output projection (tied: logits = h * embed^T)
    Parameter tok_embed;
    std::vector<EncoderLayer> enc;
    std::vector<DecoderLayer> dec;
    Parameter enc_ln_g, enc_ln_b;
    Parameter dec_ln_g, dec_ln_b;
    Parameter rel_e, rel_dm;  // [kRelBuckets, heads], present iff cfg.rel_bias

    Parameter special_embed;          // trainable overlay rows, may be empty
    std::map<int, int> special_rows;  // token id -> overlay row

    static Model init(const ModelConfig& cfg, uint64_t seed);

    // copies the embedding rows of the given token ids into a trainable
    // overlay; these are the only embeddings trained once the base is frozen
    void set_trainable_specials(const std::vector<int>& token_ids);
    void freeze_base();
    bool base_frozen() const { return frozen_; }

    std::vector<Parameter*> parameters();              // deterministic order
    std::vector<Parameter*> base_parameters();         // phi (excludes overlay)
    std::vector<const Parameter*> base_parameters() const;

    Tensor embed(const std::vector<int>& ids) const;   // + sinusoidal positions

    Tensor encode(const std::vector<int>& x, const PrefixBank& bank,
                  const ResolvedGuidance& rg) const;
    // teacher-forced logits, one row per target token
    Tensor forward(const std::vector<int>& x, const std::vector<int>& y,
                   const PrefixBank& bank, const ResolvedGuidance& rg) const;

    EncodedInput encode_for_decoding(const std::vector<int>& x, const PrefixBank& bank,
                                     const ResolvedGuidance& rg) const;
    // logits over the whole current decoder input; callers take the last row
    Tensor step_logits(const EncodedInput& ei, const std::vector<int>& dec_in) const;

private:
    bool frozen_ = false;
    Tensor run_encoder(const std::vector<int>& x, const Tensor& stack_e) const;
    Tensor run_decoder(const Tensor& enc_out, const std::vector<int>& dec_in,
                       const Tensor& stack_dm, const Tensor& stack_dc) const;
};

}  // namespace cpfx
