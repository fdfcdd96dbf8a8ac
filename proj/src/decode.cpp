#include "cpfx/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cpfx/tokenizer.hpp"

namespace cpfx {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> last_row(const Tensor& logits) {
    const size_t R = logits.rows(), C = logits.cols();
    return {logits.data().begin() + (R - 1) * C, logits.data().end()};
}

std::vector<double> log_softmax(const std::vector<double>& v) {
    double mx = kNegInf;
    for (double x : v) mx = std::max(mx, x);
    double denom = 0.0;
    for (double x : v) denom += x == kNegInf ? 0.0 : std::exp(x - mx);
    const double lse = mx + std::log(denom);
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] == kNegInf ? kNegInf : v[i] - lse;
    return out;
}

// Next-token log distribution under the decode constraints. Structural
// tokens (pad/bos/oov) are never generated; EOS is banned before min_len and
// forced (renormalized to log-prob 0) at max_len. If blocking bans every
// word while EOS is still length-banned, EOS is re-allowed so the
// distribution stays well defined.
std::vector<double> step_distribution(const Model& model, const EncodedInput& ei,
                                      const std::vector<int>& out_tokens,
                                      const DecodeConfig& cfg) {
    std::vector<int> dec_in;
    dec_in.reserve(out_tokens.size() + 1);
    dec_in.push_back(Tokenizer::kBos);
    dec_in.insert(dec_in.end(), out_tokens.begin(), out_tokens.end());
    std::vector<double> logits = last_row(model.step_logits(ei, dec_in));
    const double raw_eos = logits[Tokenizer::kEos];

    if (cfg.no_repeat_trigram) logits = block_repeat_trigrams(std::move(logits), out_tokens);
    logits[Tokenizer::kPad] = kNegInf;
    logits[Tokenizer::kBos] = kNegInf;
    logits[Tokenizer::kOov] = kNegInf;
    const int len = static_cast<int>(out_tokens.size());
    if (len < cfg.min_len) logits[Tokenizer::kEos] = kNegInf;
    if (len >= cfg.max_len)
        for (size_t t = 0; t < logits.size(); ++t)
            if (t != Tokenizer::kEos) logits[t] = kNegInf;
    if (*std::max_element(logits.begin(), logits.end()) == kNegInf)
        logits[Tokenizer::kEos] = raw_eos;
    return log_softmax(logits);
}

double normalized_score(double logprob, size_t out_len, double alpha) {
    return logprob / std::pow(static_cast<double>(out_len + 1), alpha);
}

}  // namespace

void DecodeConfig::validate() const {
    if (beam < 1) throw std::invalid_argument("decode: beam must be >= 1");
    if (min_len < 0 || min_len > max_len)
        throw std::invalid_argument("decode: need 0 <= min_len <= max_len");
}

std::vector<double> block_repeat_trigrams(std::vector<double> logits,
                                          const std::vector<int>& history) {
    if (history.size() < 2) return logits;
    const int a = history[history.size() - 2];
    const int b = history[history.size() - 1];
    for (size_t i = 0; i + 2 < history.size(); ++i)
        if (history[i] == a && history[i + 1] == b) {
            const int banned = history[i + 2];
            if (banned >= 0 && static_cast<size_t>(banned) < logits.size())
                logits[banned] = kNegInf;
        }
    return logits;
}

std::vector<int> greedy_decode(const Model& model, const PrefixBank& bank,
                               const ResolvedGuidance& rg, const std::vector<int>& x,
                               const DecodeConfig& cfg) {
    cfg.validate();
    NoGradGuard ng;
    EncodedInput ei = model.encode_for_decoding(x, bank, rg);
    std::vector<int> out;
    while (true) {
        const auto lp = step_distribution(model, ei, out, cfg);
        int best = 0;
        for (size_t t = 1; t < lp.size(); ++t)
            if (lp[t] > lp[best]) best = static_cast<int>(t);
        if (best == Tokenizer::kEos) break;
        out.push_back(best);
    }
    return out;
}

BeamResult beam_search(const Model& model, const PrefixBank& bank,
                       const ResolvedGuidance& rg, const std::vector<int>& x,
                       const DecodeConfig& cfg) {
    cfg.validate();
    NoGradGuard ng;
    EncodedInput ei = model.encode_for_decoding(x, bank, rg);

    struct Hyp {
        std::vector<int> tokens;
        double logprob = 0.0;
    };
    std::vector<Hyp> alive{Hyp{}};
    std::vector<BeamResult> finished;
    const size_t beam = static_cast<size_t>(cfg.beam);

    // EOS competes with word continuations for the top-`beam` candidate
    // slots: an EOS candidate ranked within them finishes its hypothesis,
    // words fill the next beam. The search ends once `beam` hypotheses have
    // finished (at width 1 this reduces exactly to greedy decoding).
    while (!alive.empty() && finished.size() < beam) {
        struct Cand {
            size_t parent;
            int token;
            double logprob;
        };
        std::vector<Cand> cands;
        for (size_t p = 0; p < alive.size(); ++p) {
            const auto lp = step_distribution(model, ei, alive[p].tokens, cfg);
            for (size_t t = 0; t < lp.size(); ++t)
                if (lp[t] != kNegInf)
                    cands.push_back({p, static_cast<int>(t), alive[p].logprob + lp[t]});
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.logprob != b.logprob) return a.logprob > b.logprob;
            if (a.parent != b.parent) return a.parent < b.parent;
            return a.token < b.token;
        });

        std::vector<Hyp> next;
        for (size_t i = 0; i < cands.size(); ++i) {
            const Cand& c = cands[i];
            if (c.token == Tokenizer::kEos) {
                if (i < beam) {
                    BeamResult r;
                    r.tokens = alive[c.parent].tokens;
                    r.logprob = c.logprob;
                    r.normalized = normalized_score(c.logprob, r.tokens.size(), cfg.ln_alpha);
                    finished.push_back(std::move(r));
                }
            } else if (next.size() < beam) {
                Hyp h;
                h.tokens = alive[c.parent].tokens;
                h.tokens.push_back(c.token);
                h.logprob = c.logprob;
                next.push_back(std::move(h));
            }
            if (i + 1 >= beam && next.size() >= beam) break;
        }
        alive = std::move(next);
    }

    if (finished.empty()) throw std::logic_error("beam_search: no finished hypothesis");
    auto best = std::max_element(
        finished.begin(), finished.end(), [](const BeamResult& a, const BeamResult& b) {
            if (a.normalized != b.normalized) return a.normalized < b.normalized;
            return b.tokens < a.tokens;  // prefer lexicographically smaller
        });
    return *best;
}

}  // namespace cpfx
