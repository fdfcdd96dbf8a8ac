#include "cpfx/runconfig.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "cpfx/tasks.hpp"

namespace cpfx {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(s);
    while (std::getline(ss, cur, sep)) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

bool parse_bool(const std::string& v, int line) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    throw config_error(line, "expected boolean, got '" + v + "'");
}

int parse_int(const std::string& v, int line) {
    try {
        size_t pos = 0;
        const int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw config_error(line, "expected integer, got '" + v + "'");
    }
}

double parse_double(const std::string& v, int line) {
    try {
        size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw config_error(line, "expected number, got '" + v + "'");
    }
}

uint64_t parse_u64(const std::string& v, int line) {
    try {
        size_t pos = 0;
        const unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw config_error(line, "expected unsigned integer, got '" + v + "'");
    }
}

// attribute = name=category labels=a,b,c rho_c=2 oov=true
Attribute parse_attribute(const std::string& value, int line) {
    Attribute a;
    bool have_name = false, have_labels = false;
    for (const auto& tok : split_list(value, ' ')) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos)
            throw config_error(line, "attribute fields must look like key=value");
        const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
        if (k == "name") {
            a.name = v;
            have_name = true;
        } else if (k == "labels") {
            if (v == "@ratio_bins") {
                for (int b = 0; b < kRatioBins; ++b) a.labels.push_back(ratio_bin_label(b));
            } else {
                a.labels = split_list(v, ',');
            }
            have_labels = true;
        } else if (k == "rho_c") {
            a.rho_c = parse_int(v, line);
        } else if (k == "oov") {
            a.oov_enabled = parse_bool(v, line);
        } else {
            throw config_error(line, "unknown attribute field '" + k + "'");
        }
    }
    if (!have_name || !have_labels)
        throw config_error(line, "attribute needs name= and labels=");
    return a;
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text) {
    RunConfig rc;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;

    static const std::set<std::string> kSections = {"model", "schema", "train",
                                                    "decode", "data"};
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw config_error(lineno, "unterminated section header");
            section = t.substr(1, t.size() - 2);
            if (!kSections.count(section))
                throw config_error(lineno, "unknown section [" + section + "]");
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw config_error(lineno, "expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (section.empty())
            throw config_error(lineno, "key outside of any section");

        if (section == "model") {
            if (key == "d") rc.model.d = parse_int(value, lineno);
            else if (key == "layers") rc.model.L = parse_int(value, lineno);
            else if (key == "heads") rc.model.heads = parse_int(value, lineno);
            else if (key == "ffn") rc.model.ffn_dim = parse_int(value, lineno);
            else if (key == "rel_bias") rc.model.rel_bias = parse_bool(value, lineno);
            else if (key == "dropout") rc.model.dropout = parse_double(value, lineno);
            else if (key == "rho") rc.model.rho = parse_int(value, lineno);
            else if (key == "reparam_k") rc.model.reparam_k = parse_int(value, lineno);
            else throw config_error(lineno, "unknown [model] key '" + key + "'");
        } else if (section == "schema") {
            if (key == "attribute") rc.schema.attributes.push_back(parse_attribute(value, lineno));
            else throw config_error(lineno, "unknown [schema] key '" + key + "'");
        } else if (section == "train") {
            if (key == "lr") rc.train.lr = parse_double(value, lineno);
            else if (key == "warmup_steps") rc.train.warmup_steps = parse_int(value, lineno);
            else if (key == "total_steps") rc.train.total_steps = parse_int(value, lineno);
            else if (key == "batch") rc.train.batch = parse_int(value, lineno);
            else if (key == "accum") rc.train.accum = parse_int(value, lineno);
            else if (key == "seed") rc.train.seed = parse_u64(value, lineno);
            else if (key == "weight_decay") rc.train.weight_decay = parse_double(value, lineno);
            else if (key == "eval_every") rc.train.eval_every = parse_int(value, lineno);
            else if (key == "oov_train_prob") rc.train.oov_train_prob = parse_double(value, lineno);
            else if (key == "checkpoint_metric") {
                try {
                    rc.train.checkpoint_metric = val_metric_from(value);
                } catch (const std::exception& e) {
                    throw config_error(lineno, e.what());
                }
            } else if (key == "pretrain_steps") rc.pretrain_steps = parse_int(value, lineno);
            else if (key == "pretrain_lr") rc.pretrain_lr = parse_double(value, lineno);
            else if (key == "pretrain_warmup") rc.pretrain_warmup = parse_int(value, lineno);
            else if (key == "stage2_lr") rc.stage2_lr = parse_double(value, lineno);
            else if (key == "stage2_steps") rc.stage2_steps = parse_int(value, lineno);
            else if (key == "stage2_warmup") rc.stage2_warmup = parse_int(value, lineno);
            else throw config_error(lineno, "unknown [train] key '" + key + "'");
        } else if (section == "decode") {
            if (key == "beam") rc.decode.beam = parse_int(value, lineno);
            else if (key == "ln_alpha") rc.decode.ln_alpha = parse_double(value, lineno);
            else if (key == "min_len") rc.decode.min_len = parse_int(value, lineno);
            else if (key == "max_len") rc.decode.max_len = parse_int(value, lineno);
            else if (key == "no_repeat_trigram") rc.decode.no_repeat_trigram = parse_bool(value, lineno);
            else throw config_error(lineno, "unknown [decode] key '" + key + "'");
        } else if (section == "data") {
            if (key == "task") {
                if (value != "d2t" && value != "length" && value != "jsonl")
                    throw config_error(lineno, "task must be d2t, length or jsonl");
                rc.task = value;
            } else if (key == "train") rc.train_path = value;
            else if (key == "val") rc.val_path = value;
            else if (key == "test") rc.test_path = value;
            else if (key == "fixture") rc.fixture_path = value;
            else if (key == "stage2_train") rc.stage2_train_path = value;
            else if (key == "trainable_specials") rc.trainable_specials = value;
            else if (key == "control_tokens") rc.control_tokens = parse_bool(value, lineno);
            else throw config_error(lineno, "unknown [data] key '" + key + "'");
        }
    }

    try {
        rc.schema.validate();
    } catch (const std::exception& e) {
        throw config_error(0, e.what());
    }
    return rc;
}

RunConfig parse_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config_text(ss.str());
}

}  // namespace cpfx
