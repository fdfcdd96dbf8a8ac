#include "cpfx/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cpfx {

namespace {

constexpr char kMagic[8] = {'C', 'P', 'F', 'X', 'C', 'K', 'P', 'T'};

class Writer {
public:
    void bytes(const void* p, size_t n) {
        const char* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void u8(uint8_t v) { bytes(&v, 1); }
    void u32(uint32_t v) { bytes(&v, 4); }
    void u64(uint64_t v) { bytes(&v, 8); }
    void f64(double v) { bytes(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    const std::vector<char>& buffer() const { return buf_; }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    Reader(std::vector<char> buf) : buf_(std::move(buf)) {}
    void bytes(void* p, size_t n) {
        if (pos_ + n > buf_.size()) throw std::runtime_error("checkpoint: truncated file");
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    uint8_t u8() { uint8_t v; bytes(&v, 1); return v; }
    uint32_t u32() { uint32_t v; bytes(&v, 4); return v; }
    uint64_t u64() { uint64_t v; bytes(&v, 8); return v; }
    double f64() { double v; bytes(&v, 8); return v; }
    std::string str() {
        const uint32_t n = u32();
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    size_t pos() const { return pos_; }
    const std::vector<char>& buffer() const { return buf_; }

private:
    std::vector<char> buf_;
    size_t pos_ = 0;
};

uint64_t fnv1a(const char* data, size_t n) {
    uint64_t h = 1469598103934665603ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<Parameter*> all_params(Model& model, PrefixBank& bank) {
    std::vector<Parameter*> out = model.parameters();
    for (Parameter* p : bank.params()) out.push_back(p);
    return out;
}

}  // namespace

Checkpoint make_checkpoint(Model& model, PrefixBank& bank, const Tokenizer& tok,
                           uint64_t seed, const std::vector<MetricPoint>& history) {
    if (!bank.folded && !expander_sharing_check(bank))
        throw std::logic_error("checkpoint: disjoint-expander banks are not serializable");
    Checkpoint ck;
    ck.seed = seed;
    ck.folded = bank.folded;
    ck.config = model.cfg;
    ck.schema = bank.schema;
    ck.vocab = tok.vocab();
    ck.special_rows = model.special_rows;
    ck.history = history;
    for (Parameter* p : all_params(model, bank)) {
        Checkpoint::Rec r;
        r.name = p->name;
        r.rows = p->value.rows();
        r.cols = p->value.cols();
        r.frozen = p->frozen;
        r.data = p->value.data();
        ck.params.push_back(std::move(r));
    }
    return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    Writer w;
    w.bytes(kMagic, sizeof(kMagic));
    w.u32(ck.version);
    w.u64(ck.seed);
    w.u8(ck.folded ? 1 : 0);

    const ModelConfig& c = ck.config;
    w.u32(c.d);
    w.u32(c.L);
    w.u32(c.heads);
    w.u32(c.vocab);
    w.u32(c.ffn_dim);
    w.u8(c.rel_bias ? 1 : 0);
    w.f64(c.dropout);
    w.u32(c.rho);
    w.u32(c.reparam_k);

    w.u32(static_cast<uint32_t>(ck.schema.attributes.size()));
    for (const auto& a : ck.schema.attributes) {
        w.str(a.name);
        w.u32(static_cast<uint32_t>(a.labels.size()));
        for (const auto& l : a.labels) w.str(l);
        w.u32(a.rho_c);
        w.u8(a.oov_enabled ? 1 : 0);
    }

    w.u32(static_cast<uint32_t>(ck.vocab.size()));
    for (const auto& t : ck.vocab) w.str(t);

    w.u32(static_cast<uint32_t>(ck.special_rows.size()));
    for (const auto& [id, row] : ck.special_rows) {
        w.u32(id);
        w.u32(row);
    }

    w.u32(static_cast<uint32_t>(ck.history.size()));
    for (const auto& m : ck.history) {
        w.u32(m.step);
        w.f64(m.loss);
        w.f64(m.lr);
        w.f64(m.val);
        w.u8(m.has_val ? 1 : 0);
    }

    w.u32(static_cast<uint32_t>(ck.params.size()));
    for (const auto& r : ck.params) {
        w.str(r.name);
        w.u64(r.rows);
        w.u64(r.cols);
        w.u8(r.frozen ? 1 : 0);
        w.bytes(r.data.data(), r.data.size() * sizeof(double));
    }

    const uint64_t checksum = fnv1a(w.buffer().data(), w.buffer().size());
    Writer footer;
    footer.u64(checksum);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    out.write(footer.buffer().data(), 8);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::vector<char> buf((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(kMagic) + 8)
        throw std::runtime_error("checkpoint: file too small");

    const uint64_t stored_sum = [&] {
        uint64_t v;
        std::memcpy(&v, buf.data() + buf.size() - 8, 8);
        return v;
    }();
    if (fnv1a(buf.data(), buf.size() - 8) != stored_sum)
        throw std::runtime_error("checkpoint: checksum mismatch");
    buf.resize(buf.size() - 8);

    Reader r(std::move(buf));
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic");

    Checkpoint ck;
    ck.version = r.u32();
    if (ck.version != 1) throw std::runtime_error("checkpoint: unsupported version");
    ck.seed = r.u64();
    ck.folded = r.u8() != 0;

    ck.config.d = static_cast<int>(r.u32());
    ck.config.L = static_cast<int>(r.u32());
    ck.config.heads = static_cast<int>(r.u32());
    ck.config.vocab = static_cast<int>(r.u32());
    ck.config.ffn_dim = static_cast<int>(r.u32());
    ck.config.rel_bias = r.u8() != 0;
    ck.config.dropout = r.f64();
    ck.config.rho = static_cast<int>(r.u32());
    ck.config.reparam_k = static_cast<int>(r.u32());

    const uint32_t n_attrs = r.u32();
    for (uint32_t i = 0; i < n_attrs; ++i) {
        Attribute a;
        a.name = r.str();
        const uint32_t n_labels = r.u32();
        for (uint32_t j = 0; j < n_labels; ++j) a.labels.push_back(r.str());
        a.rho_c = static_cast<int>(r.u32());
        a.oov_enabled = r.u8() != 0;
        ck.schema.attributes.push_back(std::move(a));
    }

    const uint32_t n_vocab = r.u32();
    for (uint32_t i = 0; i < n_vocab; ++i) ck.vocab.push_back(r.str());

    const uint32_t n_special = r.u32();
    for (uint32_t i = 0; i < n_special; ++i) {
        const int id = static_cast<int>(r.u32());
        ck.special_rows[id] = static_cast<int>(r.u32());
    }

    const uint32_t n_hist = r.u32();
    for (uint32_t i = 0; i < n_hist; ++i) {
        MetricPoint m;
        m.step = static_cast<int>(r.u32());
        m.loss = r.f64();
        m.lr = r.f64();
        m.val = r.f64();
        m.has_val = r.u8() != 0;
        ck.history.push_back(m);
    }

    const uint32_t n_params = r.u32();
    for (uint32_t i = 0; i < n_params; ++i) {
        Checkpoint::Rec rec;
        rec.name = r.str();
        rec.rows = r.u64();
        rec.cols = r.u64();
        rec.frozen = r.u8() != 0;
        rec.data.resize(rec.rows * rec.cols);
        r.bytes(rec.data.data(), rec.data.size() * sizeof(double));
        ck.params.push_back(std::move(rec));
    }
    return ck;
}

LoadedState instantiate(const Checkpoint& ck) {
    LoadedState st;
    st.seed = ck.seed;
    st.history = ck.history;
    st.tok = Tokenizer::from_vocab(ck.vocab);
    st.model = Model::init(ck.config, 0);
    if (!ck.special_rows.empty()) {
        std::vector<int> ids(ck.special_rows.size());
        for (const auto& [id, row] : ck.special_rows) ids[row] = id;
        st.model.set_trainable_specials(ids);
    }
    st.bank = PrefixBank::init(ck.config, ck.schema, 0);
    if (ck.folded) {
        // replace compact storage with expanded-shape parameters
        auto refit = [&](PrefixSet& s) {
            for (size_t c = 0; c < 3; ++c) {
                const size_t rows = s.mats[c].value.rows();
                s.mats[c] = Parameter(s.mats[c].name,
                                      Tensor(rows, 2 * ck.config.d * ck.config.L), false);
                s.expanders[c].reset();
            }
        };
        refit(st.bank.general);
        for (auto& sets : st.bank.controls)
            for (auto& s : sets) refit(s);
        for (auto& e : st.bank.shared) e.reset();
        st.bank.folded = true;
    }

    std::map<std::string, Parameter*> by_name;
    for (Parameter* p : st.model.parameters()) by_name[p->name] = p;
    for (Parameter* p : st.bank.params()) by_name[p->name] = p;

    for (const auto& rec : ck.params) {
        auto it = by_name.find(rec.name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint: unexpected parameter '" + rec.name + "'");
        Parameter* p = it->second;
        if (p->value.rows() != rec.rows || p->value.cols() != rec.cols)
            throw std::runtime_error("checkpoint: shape mismatch for '" + rec.name + "'");
        p->value.data() = rec.data;
        p->frozen = rec.frozen;
        p->value.node()->requires_grad = !rec.frozen;
        p->value.node()->grad.clear();
        by_name.erase(it);
    }
    if (!by_name.empty())
        throw std::runtime_error("checkpoint: missing parameter '" +
                                 by_name.begin()->first + "'");

    // the frozen flags decide whether the base counts as frozen
    bool any_base_trainable = false;
    for (const Parameter* p : st.model.base_parameters())
        if (!p->frozen) any_base_trainable = true;
    if (!any_base_trainable) {
        // mark via freeze_base to keep the internal flag consistent
        st.model.freeze_base();
    }
    return st;
}

}  // namespace cpfx
