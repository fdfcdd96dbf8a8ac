#pragma once

// Self-describing binary checkpoints: magic + version, model config, schema,
// tokenizer vocab, named fp64 parameter records (little-endian) and a
// checksum footer. A checkpoint loads without any external config.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cpfx/model.hpp"
#include "cpfx/prefix.hpp"
#include "cpfx/tokenizer.hpp"
#include "cpfx/train.hpp"

namespace cpfx {

struct Checkpoint {
    uint32_t version = 1;
    uint64_t seed = 0;
    bool folded = false;
    ModelConfig config;
    AttributeSchema schema;
    std::vector<std::string> vocab;
    std::map<int, int> special_rows;  // token id -> overlay row
    std::vector<MetricPoint> history;

    struct Rec {
        std::string name;
        uint64_t rows = 0, cols = 0;
        bool frozen = false;
        std::vector<double> data;
    };
    std::vector<Rec> params;
};

Checkpoint make_checkpoint(Model& model, PrefixBank& bank, const Tokenizer& tok,
                           uint64_t seed, const std::vector<MetricPoint>& history);

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct LoadedState {
    Model model;
    PrefixBank bank;
    Tokenizer tok;
    uint64_t seed = 0;
    std::vector<MetricPoint> history;
};

// rebuilds a usable model/bank/tokenizer from checkpoint records
LoadedState instantiate(const Checkpoint& ck);

}  // namespace cpfx
