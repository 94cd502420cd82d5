#pragma once

// Shared-model registry: body parameters plus one head per registered
// objective. Incoming objective modules are merged so that parameters equal
// by name and value become one shared storage entry, while conflicting or
// randomly initialized parameters stay distinct.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "adaptorx/model.hpp"

namespace adaptorx {

class Objective;

struct MergeRecord {
    std::string name;       // incoming name
    std::string stored_as;  // storage key after resolution
    std::string reason;     // "value_mismatch" | "shape_mismatch"
};

struct MergeReport {
    std::vector<std::string> shared_names;    // resolved to existing storage
    std::vector<std::string> distinct_names;  // inserted as new storage entries
    std::vector<MergeRecord> conflicts;       // same name+shape, different values
    std::vector<MergeRecord> warnings;        // same name, different shape
    long before_elements = 0;                 // storage + incoming, in elements
    long after_elements = 0;                  // storage after the merge

    // before - after always equals the element total of shared_names.
    long shared_elements() const { return before_elements - after_elements; }
};

class LangModule {
public:
    LangModule(ModelConfig config, uint64_t seed);
    // Starts from an explicit body (fine-tuning from a checkpoint).
    LangModule(ModelConfig config, uint64_t seed, const ParamSet<Real>& initial_body);

    struct Registration {
        std::string head_id;
        MergeReport report;
    };

    // Merges the objective's explicit module, or attaches a fresh head of the
    // objective's compatible kind, and updates the routing table.
    Registration register_objective(Objective& objective);

    // Shares every incoming parameter that matches an existing entry by name,
    // shape, and exact value; mismatches are kept distinct under a
    // head-scoped name. Returns the accounting report.
    MergeReport merge_shared_parameters(const ParamSet<Real>& incoming, const std::string& scope);

    const Head<Real>& head_for(const std::string& objective_id) const;
    bool has_objective(const std::string& objective_id) const;
    const std::vector<std::string>& objective_ids() const { return objective_order_; }

    const ModelConfig& config() const { return config_; }
    uint64_t seed() const { return seed_; }
    const ParamSet<Real>& storage() const { return storage_; }
    const ParamSet<Real>& body() const { return body_; }
    const std::map<std::string, std::string>& sharing() const { return sharing_; }

    // Physically unique trainable parameters in name order.
    std::vector<ParamPtr<Real>> trainable_params() const;
    // Subset whose gradients are currently populated.
    std::vector<ParamPtr<Real>> params_with_grads() const;
    void zero_grads() const;

private:
    MergeReport merge_impl(const ParamSet<Real>& incoming, const std::string& scope,
                           std::map<std::string, ParamPtr<Real>>* resolved);

    ModelConfig config_;
    uint64_t seed_ = 0;
    ParamSet<Real> storage_;
    ParamSet<Real> body_;
    std::map<std::string, Head<Real>> heads_;
    std::vector<std::string> objective_order_;
    std::map<std::string, std::string> sharing_;  // parameter name -> "shared" | objective id
};

}  // namespace adaptorx
