#pragma once

// Objectives own sample encoding and loss computation for one head, plus
// their own evaluation and convergence state. The training flow itself is
// guided by a Schedule.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "adaptorx/batch.hpp"
#include "adaptorx/data.hpp"
#include "adaptorx/evaluation.hpp"
#include "adaptorx/model.hpp"

namespace adaptorx {

class LangModule;

struct TextPair {
    std::string text;
    std::string label;
};

struct ObjectiveState {
    long steps_taken = 0;
    long epochs_completed = 0;
    std::vector<float> train_loss_history;
    std::vector<float> val_loss_history;
    bool converged = false;
    std::map<std::string, double> last_eval;
    long skipped_pairs = 0;        // e.g. empty back-translation outputs
    size_t convergence_window = 0; // val_loss_history offset convergence is judged from
};

struct NoiseConfig {
    double permute_fraction = 1.0;  // fraction of positions covered by shuffling windows
    int window = 3;                 // local shuffle window size
    uint64_t seed = 0;
};

// Shuffles positions within consecutive windows covering the first
// ceil(permute_fraction * len) positions. The token multiset is preserved;
// inputs of length <= 1 come back unchanged.
std::vector<std::string> permute_noise(std::vector<std::string> tokens, const NoiseConfig& cfg,
                                       RngStream& rs);

// (pseudo_source, target) via the reverse-direction translator; nullopt when
// the translator emits an empty pseudo-source (pair skipped and counted).
std::optional<TextPair> make_backtranslation_pair(const std::string& target_text,
                                                  const ReverseTranslator& translator);

struct ObjectiveConfig {
    std::string objective_id;
    TextPairSource train;
    TextPairSource val;
    int batch_size = 16;
    std::shared_ptr<Vocab> vocab;
    std::vector<Evaluator> evaluators;
    ConvergenceCriterion convergence;
    // Explicit module: merged into the LangModule instead of attaching a
    // fresh head (parameters equal by name and value end up shared).
    std::optional<ParamSet<Real>> objective_module;
};

class Objective {
public:
    explicit Objective(ObjectiveConfig cfg);
    virtual ~Objective() = default;

    virtual HeadKind compatible_head() const = 0;
    virtual int n_labels() const { return 0; }

    // Raw (text, label) for dataset row `index`; nullopt skips the row.
    virtual std::optional<TextPair> training_pair(long epoch, long index);
    // Row used for evaluation; defaults to the raw pair.
    virtual std::optional<TextPair> validation_pair(Split split, long index);

    const std::string& objective_id() const { return cfg_.objective_id; }
    int batch_size() const { return cfg_.batch_size; }
    const TextPairSource& source(Split split) const;
    const std::optional<ParamSet<Real>>& objective_module() const { return cfg_.objective_module; }
    const Vocab& vocab() const { return *cfg_.vocab; }
    const std::vector<Evaluator>& evaluators() const { return cfg_.evaluators; }
    const ConvergenceCriterion& convergence_criterion() const { return cfg_.convergence; }

    // Head-kind dispatched encoding of one raw pair.
    EncodedExample encode(const TextPair& pair) const;

    EncodedBatch make_batch(const std::vector<long>& indices, long epoch, Split split);

    // Cross-entropy against the batch labels; records the value into
    // train_loss_history.
    Tensor<Real> compute_loss(const Tensor<Real>& logits, const EncodedBatch& batch);

    // Val loss plus every registered evaluator for the split; appends to the
    // loss history and updates the convergence flag.
    std::map<std::string, double> evaluate(Split split, const LangModule& lang_module);

    ObjectiveState& state() { return state_; }
    const ObjectiveState& state() const { return state_; }

    // Starts a fresh convergence window (sequential schedules call this when
    // the objective's phase begins).
    void begin_convergence_window();

protected:
    virtual std::vector<int> encode_labels_for(const TextPair& pair,
                                               const std::vector<int>& source_tokens) const;

    ObjectiveConfig cfg_;
    ObjectiveState state_;
};

class Seq2SeqObjective : public Objective {
public:
    using Objective::Objective;
    HeadKind compatible_head() const override { return HeadKind::seq2seq_lm; }
};

// Unsupervised instance of the seq2seq objective: maps token-permuted text
// back to the original. Sources are re-noised every epoch.
class DenoisingObjective : public Seq2SeqObjective {
public:
    DenoisingObjective(ObjectiveConfig cfg, NoiseConfig noise);

    std::optional<TextPair> training_pair(long epoch, long index) override;
    std::optional<TextPair> validation_pair(Split split, long index) override;

    const NoiseConfig& noise() const { return noise_; }

private:
    NoiseConfig noise_;
};

// Unsupervised seq2seq over target-side text: pseudo-sources come from a
// reverse-direction translator, which is never updated. Pairs are rebuilt
// every epoch unless cache_pairs is set.
class BackTranslationObjective : public Seq2SeqObjective {
public:
    BackTranslationObjective(ObjectiveConfig cfg, ReverseTranslator translator,
                             bool cache_pairs = false);

    std::optional<TextPair> training_pair(long epoch, long index) override;
    std::optional<TextPair> validation_pair(Split split, long index) override;

private:
    std::optional<TextPair> build_pair(const std::string& target);

    ReverseTranslator translator_;
    bool cache_pairs_;
    std::map<long, std::optional<TextPair>> cache_;
};

// Labels are whitespace-aligned, one per source token.
class TokenClassificationObjective : public Objective {
public:
    TokenClassificationObjective(ObjectiveConfig cfg, std::vector<std::string> label_names = {});

    HeadKind compatible_head() const override { return HeadKind::token_classification; }
    int n_labels() const override { return static_cast<int>(label_names_.size()); }
    const std::vector<std::string>& label_names() const { return label_names_; }

protected:
    std::vector<int> encode_labels_for(const TextPair& pair,
                                       const std::vector<int>& source_tokens) const override;

    int label_id(const std::string& name) const;
    std::vector<std::string> label_names_;
};

class SequenceClassificationObjective : public TokenClassificationObjective {
public:
    using TokenClassificationObjective::TokenClassificationObjective;

    HeadKind compatible_head() const override { return HeadKind::sequence_classification; }

protected:
    std::vector<int> encode_labels_for(const TextPair& pair,
                                       const std::vector<int>& source_tokens) const override;
};

}  // namespace adaptorx
