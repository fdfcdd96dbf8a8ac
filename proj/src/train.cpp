#include "cpfx/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cpfx/metrics.hpp"
#include "cpfx/rng.hpp"
#include "cpfx/tokenizer.hpp"

namespace cpfx {

ValMetric val_metric_from(const std::string& s) {
    if (s == "seq_acc") return ValMetric::seq_acc;
    if (s == "bleu") return ValMetric::bleu;
    if (s == "neg_loss") return ValMetric::neg_loss;
    throw std::invalid_argument("unknown checkpoint metric: " + s);
}

const char* to_string(ValMetric m) {
    switch (m) {
        case ValMetric::seq_acc: return "seq_acc";
        case ValMetric::bleu: return "bleu";
        case ValMetric::neg_loss: return "neg_loss";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (warmup_steps < 0 || total_steps < 0 || warmup_steps > total_steps)
        throw std::invalid_argument("train: need 0 <= warmup_steps <= total_steps");
    if (batch < 1 || accum < 1)
        throw std::invalid_argument("train: batch and accum must be >= 1");
    if (lr < 0.0) throw std::invalid_argument("train: lr must be >= 0");
}

double lr_at(int step, const TrainConfig& cfg) {
    if (step < 0) throw std::invalid_argument("lr_at: negative step");
    if (cfg.total_steps == 0) return 0.0;
    if (step >= cfg.total_steps) return 0.0;
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
        return cfg.lr * double(step) / double(cfg.warmup_steps);
    if (cfg.total_steps == cfg.warmup_steps) return cfg.lr;
    return cfg.lr * double(cfg.total_steps - step) / double(cfg.total_steps - cfg.warmup_steps);
}

ParamSnapshot snapshot_params(const std::vector<Parameter*>& params) {
    ParamSnapshot snap;
    for (const Parameter* p : params) snap[p->name] = p->value.data();
    return snap;
}

void restore_params(const ParamSnapshot& snap, std::vector<Parameter*>& params) {
    for (Parameter* p : params) {
        auto it = snap.find(p->name);
        if (it == snap.end())
            throw std::invalid_argument("restore: missing parameter '" + p->name + "'");
        if (it->second.size() != p->value.numel())
            throw std::invalid_argument("restore: size mismatch for '" + p->name + "'");
        p->value.data() = it->second;
    }
}

Tensor batch_loss(const Model& model, const PrefixBank& bank,
                  const std::vector<const TrainExample*>& batch,
                  const std::vector<ResolvedGuidance>& resolved) {
    if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
    size_t total_tokens = 0;
    for (const auto* e : batch) total_tokens += e->y.size() + 1;  // + EOS
    Tensor total;
    for (size_t i = 0; i < batch.size(); ++i) {
        std::vector<int> y = batch[i]->y;
        y.push_back(Tokenizer::kEos);
        Tensor logits = model.forward(batch[i]->x, y, bank, resolved[i]);
        Tensor nll = nll_sum(logits, y);
        total = i == 0 ? nll : add(total, nll);
    }
    return scale(total, 1.0 / double(total_tokens));
}

double batch_loss_value(const Model& model, const PrefixBank& bank,
                        const std::vector<const TrainExample*>& batch,
                        const std::vector<ResolvedGuidance>& resolved) {
    NoGradGuard ng;
    return batch_loss(model, bank, batch, resolved).item();
}

namespace {

struct AdamState {
    std::vector<double> m, v;
    int64_t t = 0;
};

class AdamW {
public:
    AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

    void step(const std::vector<Parameter*>& params, double lr) {
        for (Parameter* p : params) {
            if (p->frozen) continue;
            auto& node = *p->value.node();
            if (node.grad.size() != node.val.size()) continue;  // untouched this step
            AdamState& st = state_[p->name];
            if (st.m.empty()) {
                st.m.assign(node.val.size(), 0.0);
                st.v.assign(node.val.size(), 0.0);
            }
            ++st.t;
            const double bc1 = 1.0 - std::pow(cfg_.beta1, double(st.t));
            const double bc2 = 1.0 - std::pow(cfg_.beta2, double(st.t));
            for (size_t i = 0; i < node.val.size(); ++i) {
                const double g = node.grad[i];
                st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
                st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = st.m[i] / bc1;
                const double vhat = st.v[i] / bc2;
                node.val[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.adam_eps) +
                                     cfg_.weight_decay * node.val[i]);
            }
        }
    }

private:
    TrainConfig cfg_;
    std::map<std::string, AdamState> state_;
};

std::vector<std::vector<int>> decode_all(const Model& model, const PrefixBank& bank,
                                         const std::vector<TrainExample>& data,
                                         const DecodeConfig& dec) {
    std::vector<std::vector<int>> out;
    auto rng = named_rng(0, "eval");  // infer-mode resolve consumes no draws
    for (const auto& e : data) {
        ResolvedGuidance rg = resolve(bank.schema, e.g, ResolveMode::infer, rng);
        out.push_back(greedy_decode(model, bank, rg, e.x, dec));
    }
    return out;
}

}  // namespace

double evaluate_metric(const Model& model, const PrefixBank& bank,
                       const std::vector<TrainExample>& data, ValMetric metric,
                       const DecodeConfig& dec) {
    if (data.empty()) throw std::invalid_argument("evaluate_metric: empty dataset");
    if (metric == ValMetric::neg_loss) {
        std::vector<const TrainExample*> ptrs;
        std::vector<ResolvedGuidance> resolved;
        auto rng = named_rng(0, "eval");
        for (const auto& e : data) {
            ptrs.push_back(&e);
            resolved.push_back(resolve(bank.schema, e.g, ResolveMode::infer, rng));
        }
        return -batch_loss_value(model, bank, ptrs, resolved);
    }
    auto hyps = decode_all(model, bank, data, dec);
    std::vector<std::vector<int>> refs;
    for (const auto& e : data) refs.push_back(e.y);
    return metric == ValMetric::seq_acc ? sequence_accuracy(hyps, refs) : bleu(hyps, refs);
}

TrainResult train(Model& model, PrefixBank& bank,
                  const std::vector<TrainExample>& train_data,
                  const std::vector<TrainExample>& val_data,
                  const TrainConfig& cfg, const DecodeConfig& eval_decode) {
    cfg.validate();
    if (train_data.empty()) throw std::invalid_argument("train: empty dataset");

    std::vector<Parameter*> params = model.parameters();
    for (Parameter* p : bank.params()) params.push_back(p);

    TrainResult result;
    auto eval_and_track = [&](int step) {
        if (val_data.empty()) return 0.0;
        const double val =
            evaluate_metric(model, bank, val_data, cfg.checkpoint_metric, eval_decode);
        if (result.best_step < 0 || val > result.best_val) {
            result.best_val = val;
            result.best_step = step;
            result.best = snapshot_params(params);
        }
        return val;
    };

    if (cfg.total_steps == 0) {
        // checkpoint equals initialization
        result.best = snapshot_params(params);
        result.best_step = 0;
        if (!val_data.empty())
            result.best_val =
                evaluate_metric(model, bank, val_data, cfg.checkpoint_metric, eval_decode);
        return result;
    }

    auto shuffle_rng = named_rng(cfg.seed, "train.shuffle");
    auto oov_rng = named_rng(cfg.seed, "train.oov");

    std::vector<size_t> order(train_data.size());
    std::iota(order.begin(), order.end(), 0);
    size_t cursor = order.size();  // forces a shuffle on first use
    auto next_index = [&]() {
        if (cursor >= order.size()) {
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            cursor = 0;
        }
        return order[cursor++];
    };

    ResolvePolicy policy;
    policy.oov_train_prob = cfg.oov_train_prob;

    AdamW opt(cfg);
    for (int step = 0; step < cfg.total_steps; ++step) {
        // draw the whole effective batch first so micro-partitioning does not
        // change the token normalizer or the rng stream
        std::vector<const TrainExample*> eff;
        std::vector<ResolvedGuidance> eff_rg;
        for (int i = 0; i < cfg.batch * cfg.accum; ++i) {
            const TrainExample& e = train_data[next_index()];
            eff.push_back(&e);
            eff_rg.push_back(resolve(bank.schema, e.g, ResolveMode::train, oov_rng, policy));
        }
        size_t total_tokens = 0;
        for (const auto* e : eff) total_tokens += e->y.size() + 1;

        for (Parameter* p : params)
            if (!p->frozen) p->value.node()->grad.clear();

        double step_loss = 0.0;
        for (int micro = 0; micro < cfg.accum; ++micro) {
            Tensor sum;
            for (int i = 0; i < cfg.batch; ++i) {
                const size_t idx = micro * cfg.batch + i;
                std::vector<int> y = eff[idx]->y;
                y.push_back(Tokenizer::kEos);
                Tensor logits = model.forward(eff[idx]->x, y, bank, eff_rg[idx]);
                Tensor nll = nll_sum(logits, y);
                sum = i == 0 ? nll : add(sum, nll);
            }
            Tensor micro_loss = scale(sum, 1.0 / double(total_tokens));
            const double lv = micro_loss.item();
            if (!std::isfinite(lv))
                throw divergence_error("train: non-finite loss at step " +
                                       std::to_string(step));
            step_loss += lv;
            backward(micro_loss);
        }

        const double lr = lr_at(step, cfg);
        opt.step(params, lr);

        MetricPoint mp;
        mp.step = step + 1;
        mp.loss = step_loss;
        mp.lr = lr;
        const bool eval_now = (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) ||
                              step + 1 == cfg.total_steps;
        if (eval_now && !val_data.empty()) {
            mp.val = eval_and_track(step + 1);
            mp.has_val = true;
        }
        result.history.push_back(mp);
    }
    if (result.best_step < 0) {
        result.best = snapshot_params(params);
        result.best_step = cfg.total_steps;
    }
    return result;
}

TrainResult train_stages(Model& model, PrefixBank& bank,
                         const std::vector<StageSpec>& stages,
                         const std::vector<TrainExample>& val_data,
                         const DecodeConfig& eval_decode) {
    if (stages.empty()) throw std::invalid_argument("train_stages: no stages");
    TrainResult last;
    for (size_t s = 0; s < stages.size(); ++s)
        last = train(model, bank, *stages[s].data, val_data, stages[s].cfg, eval_decode);

    std::vector<Parameter*> params = model.parameters();
    for (Parameter* p : bank.params()) params.push_back(p);
    restore_params(last.best, params);
    return last;
}

void audit_trainable(const std::vector<Parameter*>& params) {
    auto allowed = [](const std::string& name) {
        return name.rfind("prefix.", 0) == 0 || name.rfind("reparam.", 0) == 0 ||
               name == "embed.special";
    };
    for (const Parameter* p : params) {
        if (!p->frozen && !allowed(p->name))
            throw std::logic_error("audit: unexpected trainable parameter '" + p->name + "'");
        if (p->frozen && allowed(p->name))
            throw std::logic_error("audit: adaptation parameter '" + p->name +
                                   "' must not be frozen");
    }
}

uint64_t params_checksum(const std::vector<const Parameter*>& params) {
    uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, size_t len) {
        const unsigned char* b = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < len; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    for (const Parameter* p : params) {
        mix(p->name.data(), p->name.size());
        mix(p->value.data().data(), p->value.data().size() * sizeof(double));
    }
    return h;
}

}  // namespace cpfx
