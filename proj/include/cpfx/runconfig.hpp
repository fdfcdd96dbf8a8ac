#pragma once

// `key = value` run configuration with [model]/[schema]/[train]/[decode]/[data]
// sections. Parsing is total: every error names the offending line, unknown
// keys are rejected.

#include <stdexcept>
#include <string>

#include "cpfx/config.hpp"
#include "cpfx/decode.hpp"
#include "cpfx/guidance.hpp"
#include "cpfx/train.hpp"

namespace cpfx {

struct config_error : std::runtime_error {
    int line;
    config_error(int line_, const std::string& msg)
        : std::runtime_error("config line " + std::to_string(line_) + ": " + msg),
          line(line_) {}
};

struct RunConfig {
    ModelConfig model;        // vocab is filled from data at train time
    AttributeSchema schema;
    TrainConfig train;
    DecodeConfig decode;

    // [data]
    std::string task = "jsonl";  // d2t | length | jsonl
    std::string train_path, val_path, test_path, fixture_path;
    std::string stage2_train_path;
    std::string trainable_specials;  // comma-separated token strings
    bool control_tokens = false;

    // base-model pretraining (the frozen starting point)
    int pretrain_steps = 0;
    double pretrain_lr = 1e-3;
    int pretrain_warmup = 0;

    // optional second stage
    double stage2_lr = 0.0;
    int stage2_steps = 0;
    int stage2_warmup = 0;
};

RunConfig parse_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text);

}  // namespace cpfx
