#pragma once

// The prefix bank owns the general task prefix and every attribute-label
// control prefix, in compact form while training (expanded on the fly through
// the shared class expanders) or in folded form for inference.

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "cpfx/config.hpp"
#include "cpfx/guidance.hpp"
#include "cpfx/reparam.hpp"
#include "cpfx/tensor.hpp"

namespace cpfx {

struct PrefixSet {
    // per attention class: compact [rows x d] before fold, [rows x 2dL] after
    std::array<Parameter, 3> mats;
    // expander used per class; aliases the bank-level shared ones unless a
    // disjoint-reparameterization experiment clones them; empty after fold
    std::array<std::shared_ptr<ClassExpander>, 3> expanders;
};

class PrefixBank {
public:
    ModelConfig cfg;           // d, L, rho, reparam_k are what matter here
    AttributeSchema schema;
    bool folded = false;

    PrefixSet general;                            // rho rows (rho may be 0)
    // controls[attr][label]; the final entry of each attribute is its OOV prefix
    std::vector<std::vector<PrefixSet>> controls;
    std::array<std::shared_ptr<ClassExpander>, 3> shared;

    static PrefixBank init(const ModelConfig& cfg, const AttributeSchema& schema,
                           uint64_t seed);

    size_t oov_index(size_t attr) const { return schema.attributes[attr].labels.size(); }
    int rho_total() const;

    // every prefix/expander parameter, deterministic order
    std::vector<Parameter*> params();

    // replaces each control prefix's expanders with freshly initialized
    // clones (the unstable disjoint-reparameterization variant)
    void make_disjoint_expanders(uint64_t seed);
};

// Prefix key/value rows for one attention class and layer, ordered
// [C(attr_n); ...; C(attr_1); P] so the general prefix sits next to the
// sequence keys. First of the pair is K rows, second is V rows, each
// [rho_total x d].
std::pair<Tensor, Tensor> materialize(const PrefixBank& bank,
                                      const ResolvedGuidance& rg,
                                      AttentionClass cls, int layer);

// All-layer stack for one class: [rho_total x 2dL]; slice per layer with
// stack_layer_kv. Used by the model so each expansion happens once per pass.
Tensor materialize_stack(const PrefixBank& bank, const ResolvedGuidance& rg,
                         AttentionClass cls);
std::pair<Tensor, Tensor> stack_layer_kv(const Tensor& stacked, int layer, int d);

struct ParamCountReport {
    uint64_t general_compact = 0;     // 3 * rho * d
    uint64_t controls_compact = 0;    // per attr: (labels + oov) * 3 * rho_c * d
    uint64_t expander = 0;            // 3 * (d*k + k + k*2dL + 2dL)
    uint64_t trainable_compact = 0;   // sum of the above
    uint64_t expanded_general = 0;    // rho * 6dL
    uint64_t expanded_controls = 0;   // per label incl. oov: rho_c * 6dL
    uint64_t inference_expanded = 0;  // expanded_general + expanded_controls
};

ParamCountReport param_count(const AttributeSchema& schema, const ModelConfig& cfg);

struct FoldReport {
    uint64_t compact_params = 0;   // |theta~|: compact matrices + expanders
    uint64_t folded_params = 0;    // |theta|: expanded matrices
};

// Replaces every compact matrix by its expansion and drops the expanders.
FoldReport fold(PrefixBank& bank);

// true iff all prefixes of each class reference that class's shared expander
bool expander_sharing_check(const PrefixBank& bank);

struct ExportedRows {
    std::vector<std::string> labels;
    Tensor rows;        // [labels x rho_c*2dL]
    Tensor projection;  // [labels x 2], PCA
};

// One flattened row per label of the attribute (folded bank only).
ExportedRows export_rows(const PrefixBank& bank, const std::string& attribute,
                         AttentionClass cls);

void write_rows_csv(const ExportedRows& ex, const std::string& path);
void write_pca_csv(const ExportedRows& ex, const std::string& path);
void write_pca_svg(const ExportedRows& ex, const std::string& path);

// top-2 principal component projection of the rows of m (centered)
Tensor pca_project2(const Tensor& m);

}  // namespace cpfx
