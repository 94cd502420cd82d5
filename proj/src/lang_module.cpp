#include "adaptorx/lang_module.hpp"

#include <cstring>
#include <set>

#include "adaptorx/objectives.hpp"

namespace adaptorx {

namespace {

bool same_shape(const ParamPtr<Real>& a, const ParamPtr<Real>& b) {
    return a->tensor.shape() == b->tensor.shape();
}

bool bit_equal(const ParamPtr<Real>& a, const ParamPtr<Real>& b) {
    const auto& av = a->tensor.data();
    const auto& bv = b->tensor.data();
    return av.size() == bv.size() &&
           std::memcmp(av.data(), bv.data(), av.size() * sizeof(Real)) == 0;
}

}  // namespace

LangModule::LangModule(ModelConfig config, uint64_t seed) : config_(config), seed_(seed) {
    config_.validate();
    body_ = build_body<Real>(config_, seed_);
    for (const auto& [name, p] : body_) {
        storage_.insert(p);
        sharing_[name] = "shared";
    }
}

LangModule::LangModule(ModelConfig config, uint64_t seed, const ParamSet<Real>& initial_body)
    : config_(config), seed_(seed) {
    config_.validate();
    const auto& embed = initial_body.at("body.embed.tok");
    if (embed->tensor.dim(0) != config_.vocab_size || embed->tensor.dim(1) != config_.d_model) {
        throw ConfigError("LangModule: initial body embedding shape " +
                          shape_str(embed->tensor.shape()) + " does not match config");
    }
    for (const auto& [name, p] : initial_body) {
        if (name.rfind("body.", 0) != 0) continue;
        body_.insert(p);
        storage_.insert(p);
        sharing_[name] = "shared";
    }
}

MergeReport LangModule::merge_impl(const ParamSet<Real>& incoming, const std::string& scope,
                                   std::map<std::string, ParamPtr<Real>>* resolved) {
    MergeReport report;
    report.before_elements = storage_.total_elements() + incoming.total_elements();

    for (const auto& [name, p] : incoming) {
        if (storage_.contains(name)) {
            const ParamPtr<Real>& base = storage_.at(name);
            if (same_shape(base, p) && bit_equal(base, p)) {
                report.shared_names.push_back(name);
                sharing_[name] = "shared";
                if (resolved) (*resolved)[name] = base;
                continue;
            }
            MergeRecord rec;
            rec.name = name;
            rec.reason = same_shape(base, p) ? "value_mismatch" : "shape_mismatch";

            std::string scoped = "head." + scope + "." + name;
            if (storage_.contains(scoped) && same_shape(storage_.at(scoped), p) &&
                bit_equal(storage_.at(scoped), p)) {
                // Re-merge of a module we already scoped: resolve to our copy.
                rec.stored_as = scoped;
                report.shared_names.push_back(scoped);
                if (resolved) (*resolved)[name] = storage_.at(scoped);
            } else {
                while (storage_.contains(scoped)) scoped += "+";
                auto kept = std::make_shared<Parameter<Real>>(scoped, p->tensor);
                storage_.insert(kept);
                sharing_[scoped] = scope;
                rec.stored_as = scoped;
                report.distinct_names.push_back(scoped);
                if (resolved) (*resolved)[name] = kept;
            }
            if (rec.reason == "shape_mismatch") report.warnings.push_back(rec);
            else report.conflicts.push_back(rec);
        } else {
            storage_.insert(p);
            sharing_[name] = scope;
            report.distinct_names.push_back(name);
            if (resolved) (*resolved)[name] = p;
        }
    }
    report.after_elements = storage_.total_elements();
    return report;
}

MergeReport LangModule::merge_shared_parameters(const ParamSet<Real>& incoming,
                                                const std::string& scope) {
    return merge_impl(incoming, scope, nullptr);
}

LangModule::Registration LangModule::register_objective(Objective& objective) {
    const std::string& id = objective.objective_id();
    if (heads_.count(id)) {
        throw RoutingError("registration: objective id already registered: " + id);
    }
    const HeadKind kind = objective.compatible_head();
    if (kind != HeadKind::seq2seq_lm && objective.n_labels() < 1) {
        throw RoutingError("compatibility: objective " + id + " declares " +
                           head_kind_name(kind) + " but has no labels");
    }

    Registration out;
    Head<Real> head;
    head.kind = kind;
    head.n_labels = kind == HeadKind::seq2seq_lm ? config_.vocab_size : objective.n_labels();

    if (objective.objective_module().has_value()) {
        std::map<std::string, ParamPtr<Real>> resolved;
        out.report = merge_impl(*objective.objective_module(), id, &resolved);
        for (const auto& [orig_name, p] : resolved) {
            if (orig_name.rfind("head.", 0) != 0) continue;
            head.params.insert_ref(p->name, p);
            if (orig_name.size() >= 7 && orig_name.compare(orig_name.size() - 7, 7, ".proj.w") == 0) {
                head.proj_w = p;
            }
            if (orig_name.size() >= 7 && orig_name.compare(orig_name.size() - 7, 7, ".proj.b") == 0) {
                head.proj_b = p;
            }
        }
        if (head.proj_w) {
            if (head.proj_w->tensor.rank() != 2 || head.proj_w->tensor.dim(0) != config_.d_model ||
                head.proj_w->tensor.dim(1) != head.n_labels) {
                throw RoutingError("compatibility: head projection " + head.proj_w->name +
                                   " shaped " + shape_str(head.proj_w->tensor.shape()) +
                                   " does not produce " + std::to_string(head.n_labels) +
                                   " outputs from d_model " + std::to_string(config_.d_model));
            }
        }
    } else {
        head = build_head<Real>(config_, kind, id, objective.n_labels(), seed_);
        long inserted = 0;
        for (const auto& [name, p] : head.params) {
            storage_.insert(p);
            sharing_[name] = id;
            out.report.distinct_names.push_back(name);
            inserted += p->tensor.size();
        }
        out.report.after_elements = storage_.total_elements();
        out.report.before_elements = out.report.after_elements;  // nothing shared
    }

    heads_[id] = head;
    objective_order_.push_back(id);
    out.head_id = "head." + id;
    return out;
}

const Head<Real>& LangModule::head_for(const std::string& objective_id) const {
    auto it = heads_.find(objective_id);
    if (it == heads_.end()) {
        throw RoutingError("routing: no head registered for objective " + objective_id);
    }
    return it->second;
}

bool LangModule::has_objective(const std::string& objective_id) const {
    return heads_.count(objective_id) != 0;
}

std::vector<ParamPtr<Real>> LangModule::trainable_params() const {
    std::vector<ParamPtr<Real>> out;
    std::set<const void*> seen;
    for (const auto& [_, p] : storage_) {
        if (seen.insert(p->tensor.node().get()).second) out.push_back(p);
    }
    return out;
}

std::vector<ParamPtr<Real>> LangModule::params_with_grads() const {
    std::vector<ParamPtr<Real>> out;
    for (const auto& p : trainable_params()) {
        if (p->tensor.has_grad()) out.push_back(p);
    }
    return out;
}

void LangModule::zero_grads() const {
    for (const auto& p : trainable_params()) {
        if (p->tensor.has_grad()) p->tensor.zero_grad();
    }
}

}  // namespace adaptorx
