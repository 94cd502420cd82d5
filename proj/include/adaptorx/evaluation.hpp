#pragma once

#include <string>
#include <vector>

#include "adaptorx/autodiff.hpp"

namespace adaptorx {

enum class Split { train, val };

const char* split_name(Split split);

enum class Metric { bleu, token_accuracy, exact_match, val_loss };

const char* metric_name(Metric metric);
Metric metric_from(const std::string& name);

// Metric attached to an objective. Generative metrics decode candidates with
// the objective's head; max_examples caps how many rows are decoded during
// training-time evaluation (0 = all).
struct Evaluator {
    Metric metric = Metric::val_loss;
    Split split = Split::val;
    bool decode_needed = false;
    long max_examples = 0;
};

Evaluator make_evaluator(Metric metric, Split split = Split::val, long max_examples = 0);

// Papineni corpus BLEU over token sequences: modified n-gram precisions
// (n = 1..4) pooled over the corpus, geometric mean, brevity penalty
// exp(1 - r/c) when c < r. Returns 0 if any pooled precision is 0.
double corpus_bleu(const std::vector<std::vector<int>>& candidates,
                   const std::vector<std::vector<int>>& references);

// Matched positions / total reference positions; candidate positions past the
// shared prefix count as wrong.
double token_accuracy(const std::vector<std::vector<int>>& candidates,
                      const std::vector<std::vector<int>>& references);

// Fraction of exactly identical sequences.
double exact_match(const std::vector<std::vector<int>>& candidates,
                   const std::vector<std::vector<int>>& references);

struct ConvergenceCriterion {
    int patience = 5;
    double min_delta = 1e-3;
};

// True iff each of the last `patience` evaluations failed to improve the
// best-so-far loss by at least min_delta. Histories shorter than patience
// never converge.
bool detect_convergence(const std::vector<float>& val_loss_history,
                        const ConvergenceCriterion& criterion);

}  // namespace adaptorx
