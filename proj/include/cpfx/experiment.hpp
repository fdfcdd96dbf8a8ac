#pragma once

// Toy-task pipelines: tokenizer/schema assembly, base-model pretraining (the
// frozen starting point), and the adaptation arms compared in the experiments
// (control prefixes, pure prefix-tuning, control tokens, disjoint expanders).

#include <string>
#include <vector>

#include "cpfx/checkpoint.hpp"
#include "cpfx/decode.hpp"
#include "cpfx/metrics.hpp"
#include "cpfx/model.hpp"
#include "cpfx/tasks.hpp"
#include "cpfx/train.hpp"

namespace cpfx {

struct TaskBundle {
    Tokenizer tok;
    AttributeSchema schema;
    std::vector<TrainExample> train, val, test;
    std::vector<TrainExample> unseen;            // d2t zero-shot split
    EmbeddingFixture fixture;                    // d2t label vectors
    std::vector<std::string> task_specials;      // embeddings trained during adaptation
};

TrainExample to_train_example(const ToyExample& e, const AttributeSchema& schema,
                              const Tokenizer& tok);
std::vector<TrainExample> to_train_examples(const std::vector<ToyExample>& es,
                                            const AttributeSchema& schema,
                                            const Tokenizer& tok);

TaskBundle prepare_d2t(uint64_t seed, int n, int R, int rho_c);
TaskBundle prepare_length(uint64_t seed, int n, int rho_c);

std::vector<TrainExample> strip_guidance(const std::vector<TrainExample>& data);

// control-token baseline: one token per (attribute, label) plus an OOV token
// per attribute, prepended to the input in schema order
std::vector<std::string> control_token_strings(const AttributeSchema& schema);
std::vector<TrainExample> with_control_tokens(const std::vector<TrainExample>& data,
                                              const AttributeSchema& schema,
                                              const Tokenizer& tok);

// Full fine-tuning on guidance-free data; mimics starting from a pretrained
// model. Returns a snapshot of every model parameter.
ParamSnapshot pretrain_base(Model& model, const TaskBundle& bundle,
                            const TrainConfig& cfg, const DecodeConfig& dec);
Model model_from_snapshot(const ModelConfig& cfg, const ParamSnapshot& snap);

enum class Arm { control_prefixes, prefix_only, control_tokens, disjoint_expanders };

struct ArmResult {
    Model model;
    PrefixBank bank;
    TrainResult train;
};

// Restores the pretrained base, freezes it, builds the arm's bank/data
// variant and trains the adaptation parameters.
ArmResult run_arm(Arm arm, const TaskBundle& bundle, const ModelConfig& cfg,
                  const ParamSnapshot& base, const TrainConfig& adapt,
                  const DecodeConfig& eval_dec, uint64_t seed);

// greedy/beam accuracy on a labelled set; unknown labels route through OOV or
// zero-shot depending on the policy
double eval_accuracy(const Model& model, const PrefixBank& bank,
                     const std::vector<TrainExample>& data, const DecodeConfig& dec,
                     const ResolvePolicy& policy = {});

// decodes each source once per requested ratio with the matching bin label
LengthComplianceReport eval_length_control(const Model& model, const PrefixBank& bank,
                                           const std::vector<TrainExample>& sources,
                                           const std::vector<double>& targets,
                                           const DecodeConfig& dec);

uint64_t count_elems(const std::vector<const Parameter*>& params);

}  // namespace cpfx
