#pragma once

// Optimizes the trainable set (compact prefixes, shared expanders, designated
// special-token embeddings) with the base model frozen. Decoupled-weight-decay
// Adam, linear warmup then linear decay, gradient accumulation.

#include <stdexcept>
#include <string>
#include <vector>

#include "cpfx/decode.hpp"
#include "cpfx/model.hpp"
#include "cpfx/prefix.hpp"
#include "cpfx/tensor.hpp"

namespace cpfx {

struct TrainExample {
    std::vector<int> x;
    std::vector<int> y;
    Guidance g;
};

enum class ValMetric { seq_acc, bleu, neg_loss };

ValMetric val_metric_from(const std::string& s);
const char* to_string(ValMetric m);

struct TrainConfig {
    double lr = 1e-3;
    int warmup_steps = 0;
    int total_steps = 100;
    int batch = 8;
    int accum = 1;  // effective batch = batch * accum
    uint64_t seed = 1;
    ValMetric checkpoint_metric = ValMetric::seq_acc;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int eval_every = 50;  // 0: evaluate only at the end
    double oov_train_prob = 0.02;

    void validate() const;
};

// linear 0 -> lr over warmup, then linear lr -> 0 over the remaining steps
double lr_at(int step, const TrainConfig& cfg);

struct MetricPoint {
    int step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double val = 0.0;
    bool has_val = false;
};

using ParamSnapshot = std::map<std::string, std::vector<double>>;
ParamSnapshot snapshot_params(const std::vector<Parameter*>& params);
void restore_params(const ParamSnapshot& snap, std::vector<Parameter*>& params);

struct TrainResult {
    ParamSnapshot best;  // trainable parameters at the best validation point
    double best_val = 0.0;
    int best_step = -1;
    std::vector<MetricPoint> history;
};

struct divergence_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mean token-level NLL (teacher forcing, EOS appended per example) for one
// batch, as a differentiable scalar. Guidance must already be resolved.
Tensor batch_loss(const Model& model, const PrefixBank& bank,
                  const std::vector<const TrainExample*>& batch,
                  const std::vector<ResolvedGuidance>& resolved);
double batch_loss_value(const Model& model, const PrefixBank& bank,
                        const std::vector<const TrainExample*>& batch,
                        const std::vector<ResolvedGuidance>& resolved);

// Runs the optimization; the model/bank are left at their final state and the
// best-by-validation trainable snapshot is returned. Throws divergence_error
// when the loss turns non-finite.
TrainResult train(Model& model, PrefixBank& bank,
                  const std::vector<TrainExample>& train_data,
                  const std::vector<TrainExample>& val_data,
                  const TrainConfig& cfg, const DecodeConfig& eval_decode);

struct StageSpec {
    const std::vector<TrainExample>* data = nullptr;
    TrainConfig cfg;
};

// Sequential stages sharing model/bank state; the best checkpoint of the
// final stage is restored into the model/bank and returned.
TrainResult train_stages(Model& model, PrefixBank& bank,
                         const std::vector<StageSpec>& stages,
                         const std::vector<TrainExample>& val_data,
                         const DecodeConfig& eval_decode);

// decoded greedy outputs scored against references
double evaluate_metric(const Model& model, const PrefixBank& bank,
                       const std::vector<TrainExample>& data, ValMetric metric,
                       const DecodeConfig& dec);

// Trainable parameters must be exactly the compact prefixes, the expanders and
// the special-token embedding overlay; anything else trainable (or one of
// those frozen) throws.
void audit_trainable(const std::vector<Parameter*>& params);

uint64_t params_checksum(const std::vector<const Parameter*>& params);

}  // namespace cpfx
