#include "cpfx/prefix.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "cpfx/rng.hpp"

namespace cpfx {

namespace {

constexpr double kPrefixInitStd = 0.02;

Tensor compact_init(int rows, int d, uint64_t seed, const std::string& name) {
    auto rng = named_rng(seed, name);
    Tensor t(rows, d);
    for (auto& v : t.data()) v = rand_normal(rng, 0.0, kPrefixInitStd);
    return t;
}

PrefixSet make_set(const std::string& base, int rows, int d, uint64_t seed,
                   const std::array<std::shared_ptr<ClassExpander>, 3>& shared) {
    PrefixSet s;
    for (size_t c = 0; c < 3; ++c) {
        const std::string name = base + "." + to_string(kAttentionClasses[c]);
        s.mats[c] = Parameter(name, compact_init(rows, d, seed, name));
        s.expanders[c] = shared[c];
    }
    return s;
}

}  // namespace

PrefixBank PrefixBank::init(const ModelConfig& cfg, const AttributeSchema& schema,
                            uint64_t seed) {
    cfg.validate();
    schema.validate();
    PrefixBank bank;
    bank.cfg = cfg;
    bank.schema = schema;
    for (size_t c = 0; c < 3; ++c)
        bank.shared[c] = ClassExpander::init(kAttentionClasses[c], cfg.d,
                                             cfg.reparam_k, cfg.L, seed);
    bank.general = make_set("prefix.general", cfg.rho, cfg.d, seed, bank.shared);
    for (const auto& attr : schema.attributes) {
        std::vector<PrefixSet> sets;
        for (const auto& label : attr.labels)
            sets.push_back(make_set("prefix.ctrl." + attr.name + "." + label,
                                    attr.rho_c, cfg.d, seed, bank.shared));
        sets.push_back(make_set("prefix.oov." + attr.name, attr.rho_c, cfg.d,
                                seed, bank.shared));
        bank.controls.push_back(std::move(sets));
    }
    return bank;
}

int PrefixBank::rho_total() const {
    int total = cfg.rho;
    for (const auto& attr : schema.attributes) total += attr.rho_c;
    return total;
}

std::vector<Parameter*> PrefixBank::params() {
    std::vector<Parameter*> out;
    auto add_set = [&](PrefixSet& s) {
        for (auto& m : s.mats) out.push_back(&m);
    };
    add_set(general);
    for (auto& sets : controls)
        for (auto& s : sets) add_set(s);
    if (!folded) {
        for (auto& e : shared)
            for (auto* p : e->params()) out.push_back(p);
        // disjoint clones, when present
        for (auto& sets : controls)
            for (auto& s : sets)
                for (size_t c = 0; c < 3; ++c)
                    if (s.expanders[c] != shared[c])
                        for (auto* p : s.expanders[c]->params()) out.push_back(p);
    }
    return out;
}

void PrefixBank::make_disjoint_expanders(uint64_t seed) {
    if (folded) throw std::logic_error("make_disjoint_expanders: bank already folded");
    for (size_t a = 0; a < controls.size(); ++a) {
        const auto& attr = schema.attributes[a];
        for (size_t i = 0; i < controls[a].size(); ++i) {
            const std::string label =
                i < attr.labels.size() ? attr.labels[i] : std::string("<oov>");
            for (size_t c = 0; c < 3; ++c)
                controls[a][i].expanders[c] = shared[c]->clone(
                    "reparam.ctrl." + attr.name + "." + label,
                    splitmix64(seed + a * 131 + i));
        }
    }
}

namespace {

Tensor set_rows(const PrefixBank& bank, const PrefixSet& s, size_t cls_idx) {
    if (bank.folded) return s.mats[cls_idx].value;
    return s.expanders[cls_idx]->expand(s.mats[cls_idx].value);
}

}  // namespace

Tensor materialize_stack(const PrefixBank& bank, const ResolvedGuidance& rg,
                         AttentionClass cls) {
    if (rg.slots.size() != bank.controls.size())
        throw std::invalid_argument("materialize: guidance does not match schema");
    const size_t ci = static_cast<size_t>(cls);
    const int width = 2 * bank.cfg.d * bank.cfg.L;

    Tensor stacked = Tensor(0, width);
    bool any = false;
    // reverse declaration order: attribute 1 ends up adjacent to the general rows
    for (size_t a = bank.controls.size(); a-- > 0;) {
        const auto& slot = rg.slots[a];
        size_t idx;
        if (slot.oov()) {
            if (!bank.schema.attributes[a].oov_enabled)
                throw std::invalid_argument("materialize: OOV disabled for attribute '" +
                                            bank.schema.attributes[a].name + "'");
            idx = bank.oov_index(a);
        } else {
            idx = static_cast<size_t>(slot.label);
            if (idx >= bank.schema.attributes[a].labels.size())
                throw std::out_of_range("materialize: label index out of range");
        }
        Tensor rows = set_rows(bank, bank.controls[a][idx], ci);
        stacked = any ? concat_rows(stacked, rows) : rows;
        any = true;
    }
    if (bank.cfg.rho > 0) {
        Tensor rows = set_rows(bank, bank.general, ci);
        stacked = any ? concat_rows(stacked, rows) : rows;
        any = true;
    }
    if (!any) return Tensor(0, width);
    return stacked;
}

std::pair<Tensor, Tensor> stack_layer_kv(const Tensor& stacked, int layer, int d) {
    const size_t off = static_cast<size_t>(layer) * 2 * d;
    if (off + 2 * static_cast<size_t>(d) > stacked.cols())
        throw std::out_of_range("stack_layer_kv: layer out of range");
    return {slice_cols(stacked, off, off + d), slice_cols(stacked, off + d, off + 2 * d)};
}

std::pair<Tensor, Tensor> materialize(const PrefixBank& bank, const ResolvedGuidance& rg,
                                      AttentionClass cls, int layer) {
    if (layer < 0 || layer >= bank.cfg.L)
        throw std::out_of_range("materialize: layer out of range");
    return stack_layer_kv(materialize_stack(bank, rg, cls), layer, bank.cfg.d);
}

ParamCountReport param_count(const AttributeSchema& schema, const ModelConfig& cfg) {
    cfg.validate();
    schema.validate();
    ParamCountReport r;
    const uint64_t d = cfg.d, L = cfg.L, k = cfg.reparam_k, rho = cfg.rho;
    const uint64_t two_dL = 2 * d * L;
    r.general_compact = 3 * rho * d;
    r.expanded_general = rho * 6 * d * L;
    for (const auto& attr : schema.attributes) {
        const uint64_t labels = attr.labels.size() + 1;  // + OOV
        r.controls_compact += labels * 3 * static_cast<uint64_t>(attr.rho_c) * d;
        r.expanded_controls += labels * static_cast<uint64_t>(attr.rho_c) * 6 * d * L;
    }
    r.expander = 3 * (d * k + k + k * two_dL + two_dL);
    r.trainable_compact = r.general_compact + r.controls_compact + r.expander;
    r.inference_expanded = r.expanded_general + r.expanded_controls;
    return r;
}

FoldReport fold(PrefixBank& bank) {
    if (bank.folded) throw std::logic_error("fold: bank already folded");
    FoldReport report;
    for (auto* p : bank.params()) report.compact_params += p->value.numel();

    auto fold_set = [&](PrefixSet& s) {
        for (size_t c = 0; c < 3; ++c) {
            Tensor expanded = s.expanders[c]->expand(s.mats[c].value).detach();
            s.mats[c] = Parameter(s.mats[c].name, std::move(expanded), false);
            s.expanders[c].reset();
        }
    };
    fold_set(bank.general);
    for (auto& sets : bank.controls)
        for (auto& s : sets) fold_set(s);
    for (auto& e : bank.shared) e.reset();
    bank.folded = true;

    for (auto* p : bank.params()) report.folded_params += p->value.numel();
    return report;
}

bool expander_sharing_check(const PrefixBank& bank) {
    if (bank.folded) return false;
    for (size_t c = 0; c < 3; ++c) {
        if (bank.general.expanders[c] != bank.shared[c]) return false;
        for (const auto& sets : bank.controls)
            for (const auto& s : sets)
                if (s.expanders[c] != bank.shared[c]) return false;
    }
    return true;
}

ExportedRows export_rows(const PrefixBank& bank, const std::string& attribute,
                         AttentionClass cls) {
    if (!bank.folded) throw std::logic_error("export_rows: bank must be folded");
    size_t ai = bank.controls.size();
    for (size_t a = 0; a < bank.schema.attributes.size(); ++a)
        if (bank.schema.attributes[a].name == attribute) ai = a;
    if (ai == bank.controls.size())
        throw std::invalid_argument("export_rows: unknown attribute '" + attribute + "'");

    const auto& attr = bank.schema.attributes[ai];
    const size_t ci = static_cast<size_t>(cls);
    const size_t width = static_cast<size_t>(attr.rho_c) * 2 * bank.cfg.d * bank.cfg.L;

    ExportedRows ex;
    ex.labels = attr.labels;
    ex.rows = Tensor(attr.labels.size(), width);
    for (size_t i = 0; i < attr.labels.size(); ++i) {
        const Tensor& m = bank.controls[ai][i].mats[ci].value;
        std::copy(m.data().begin(), m.data().end(),
                  ex.rows.data().begin() + i * width);
    }
    ex.projection = pca_project2(ex.rows);
    return ex;
}

Tensor pca_project2(const Tensor& m) {
    const size_t R = m.rows(), D = m.cols();
    Tensor out(R, 2);
    if (R == 0 || D == 0) return out;

    std::vector<double> centered(m.data());
    for (size_t c = 0; c < D; ++c) {
        double mean = 0.0;
        for (size_t r = 0; r < R; ++r) mean += centered[r * D + c];
        mean /= static_cast<double>(R);
        for (size_t r = 0; r < R; ++r) centered[r * D + c] -= mean;
    }

    auto mat_vec = [&](const std::vector<double>& v, std::vector<double>& tmp_r,
                       std::vector<double>& out_v) {
        // out = X^T (X v)
        for (size_t r = 0; r < R; ++r) {
            double acc = 0.0;
            for (size_t c = 0; c < D; ++c) acc += centered[r * D + c] * v[c];
            tmp_r[r] = acc;
        }
        std::fill(out_v.begin(), out_v.end(), 0.0);
        for (size_t r = 0; r < R; ++r)
            for (size_t c = 0; c < D; ++c) out_v[c] += centered[r * D + c] * tmp_r[r];
    };

    std::vector<std::vector<double>> comps;
    std::vector<double> tmp_r(R), next(D);
    for (int comp = 0; comp < 2; ++comp) {
        std::vector<double> v(D);
        for (size_t i = 0; i < D; ++i) v[i] = 1.0 / std::sqrt(double(D));
        for (const auto& prev : comps) {
            double dot = 0.0;
            for (size_t i = 0; i < D; ++i) dot += v[i] * prev[i];
            for (size_t i = 0; i < D; ++i) v[i] -= dot * prev[i];
        }
        for (int it = 0; it < 200; ++it) {
            mat_vec(v, tmp_r, next);
            for (const auto& prev : comps) {
                double dot = 0.0;
                for (size_t i = 0; i < D; ++i) dot += next[i] * prev[i];
                for (size_t i = 0; i < D; ++i) next[i] -= dot * prev[i];
            }
            double norm = 0.0;
            for (double x : next) norm += x * x;
            norm = std::sqrt(norm);
            if (norm < 1e-12) {
                std::fill(next.begin(), next.end(), 0.0);
                break;
            }
            for (size_t i = 0; i < D; ++i) v[i] = next[i] / norm;
        }
        comps.push_back(v);
    }
    for (size_t r = 0; r < R; ++r)
        for (int comp = 0; comp < 2; ++comp) {
            double acc = 0.0;
            for (size_t c = 0; c < D; ++c) acc += centered[r * D + c] * comps[comp][c];
            out.at(r, comp) = acc;
        }
    return out;
}

void write_rows_csv(const ExportedRows& ex, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(17);
    out << "label";
    for (size_t c = 0; c < ex.rows.cols(); ++c) out << ",dim_" << c;
    out << "\n";
    for (size_t r = 0; r < ex.rows.rows(); ++r) {
        out << ex.labels[r];
        for (size_t c = 0; c < ex.rows.cols(); ++c) out << ',' << ex.rows.at(r, c);
        out << "\n";
    }
}

void write_pca_csv(const ExportedRows& ex, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(17);
    out << "label,x,y\n";
    for (size_t r = 0; r < ex.projection.rows(); ++r)
        out << ex.labels[r] << ',' << ex.projection.at(r, 0) << ','
            << ex.projection.at(r, 1) << "\n";
}

void write_pca_svg(const ExportedRows& ex, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    const double W = 640, H = 480, pad = 50;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (ex.projection.rows() > 0) {
        xmin = xmax = ex.projection.at(0, 0);
        ymin = ymax = ex.projection.at(0, 1);
        for (size_t r = 0; r < ex.projection.rows(); ++r) {
            xmin = std::min(xmin, ex.projection.at(r, 0));
            xmax = std::max(xmax, ex.projection.at(r, 0));
            ymin = std::min(ymin, ex.projection.at(r, 1));
            ymax = std::max(ymax, ex.projection.at(r, 1));
        }
    }
    if (xmax - xmin < 1e-12) xmax = xmin + 1;
    if (ymax - ymin < 1e-12) ymax = ymin + 1;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
        << "\" height=\"" << H << "\">\n";
    for (size_t r = 0; r < ex.projection.rows(); ++r) {
        const double x = pad + (ex.projection.at(r, 0) - xmin) / (xmax - xmin) * (W - 2 * pad);
        const double y = H - pad - (ex.projection.at(r, 1) - ymin) / (ymax - ymin) * (H - 2 * pad);
        out << "  <circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"4\" fill=\"steelblue\"/>\n";
        out << "  <text x=\"" << x + 6 << "\" y=\"" << y - 6 << "\" font-size=\"11\">"
            << ex.labels[r] << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace cpfx
