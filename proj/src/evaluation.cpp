#include "adaptorx/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace adaptorx {

const char* split_name(Split split) { return split == Split::train ? "train" : "val"; }

const char* metric_name(Metric metric) {
    switch (metric) {
        case Metric::bleu: return "bleu";
        case Metric::token_accuracy: return "token_accuracy";
        case Metric::exact_match: return "exact_match";
        case Metric::val_loss: return "val_loss";
    }
    return "?";
}

Metric metric_from(const std::string& name) {
    if (name == "bleu") return Metric::bleu;
    if (name == "token_accuracy") return Metric::token_accuracy;
    if (name == "exact_match") return Metric::exact_match;
    if (name == "val_loss") return Metric::val_loss;
    throw ValueError("unknown metric: " + name);
}

Evaluator make_evaluator(Metric metric, Split split, long max_examples) {
    Evaluator e;
    e.metric = metric;
    e.split = split;
    e.max_examples = max_examples;
    e.decode_needed = metric == Metric::bleu || metric == Metric::exact_match ||
                      metric == Metric::token_accuracy;
    return e;
}

namespace {

void check_corpus(const char* what, const std::vector<std::vector<int>>& candidates,
                  const std::vector<std::vector<int>>& references) {
    if (candidates.size() != references.size() || candidates.empty()) {
        throw ValueError(std::string(what) + ": need equal, non-zero corpus sizes, got " +
                         std::to_string(candidates.size()) + " and " +
                         std::to_string(references.size()));
    }
}

}  // namespace

double corpus_bleu(const std::vector<std::vector<int>>& candidates,
                   const std::vector<std::vector<int>>& references) {
    check_corpus("corpus_bleu", candidates, references);

    long cand_len = 0, ref_len = 0;
    double log_precision_sum = 0.0;
    for (int n = 1; n <= 4; ++n) {
        long matched = 0, total = 0;
        for (size_t s = 0; s < candidates.size(); ++s) {
            const auto& c = candidates[s];
            const auto& r = references[s];
            if (n == 1) {
                cand_len += static_cast<long>(c.size());
                ref_len += static_cast<long>(r.size());
            }
            if (static_cast<int>(c.size()) < n) continue;
            std::map<std::vector<int>, long> ref_counts;
            if (static_cast<int>(r.size()) >= n) {
                for (size_t i = 0; i + n <= r.size(); ++i) {
                    ++ref_counts[std::vector<int>(r.begin() + i, r.begin() + i + n)];
                }
            }
            std::map<std::vector<int>, long> cand_counts;
            for (size_t i = 0; i + n <= c.size(); ++i) {
                ++cand_counts[std::vector<int>(c.begin() + i, c.begin() + i + n)];
            }
            for (const auto& [gram, count] : cand_counts) {
                total += count;
                auto it = ref_counts.find(gram);
                if (it != ref_counts.end()) matched += std::min(count, it->second);
            }
        }
        if (total == 0 || matched == 0) return 0.0;
        log_precision_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
    }
    const double bp =
        cand_len < ref_len
            ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len))
            : 1.0;
    return 100.0 * bp * std::exp(log_precision_sum / 4.0);
}

double token_accuracy(const std::vector<std::vector<int>>& candidates,
                      const std::vector<std::vector<int>>& references) {
    check_corpus("token_accuracy", candidates, references);
    long matched = 0, total = 0;
    for (size_t s = 0; s < candidates.size(); ++s) {
        const auto& c = candidates[s];
        const auto& r = references[s];
        total += static_cast<long>(r.size());
        const size_t upto = std::min(c.size(), r.size());
        for (size_t i = 0; i < upto; ++i) matched += c[i] == r[i] ? 1 : 0;
    }
    return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
}

double exact_match(const std::vector<std::vector<int>>& candidates,
                   const std::vector<std::vector<int>>& references) {
    check_corpus("exact_match", candidates, references);
    long hits = 0;
    for (size_t s = 0; s < candidates.size(); ++s) hits += candidates[s] == references[s] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(candidates.size());
}

bool detect_convergence(const std::vector<float>& val_loss_history,
                        const ConvergenceCriterion& criterion) {
    const int patience = criterion.patience;
    if (patience < 1) throw ValueError("detect_convergence: patience must be >= 1");
    if (static_cast<int>(val_loss_history.size()) < patience) return false;

    // improved[i]: evaluation i beat the best loss seen before it by min_delta.
    double best = std::numeric_limits<double>::infinity();
    std::vector<bool> improved(val_loss_history.size());
    for (size_t i = 0; i < val_loss_history.size(); ++i) {
        const double v = val_loss_history[i];
        improved[i] = (best - v) >= criterion.min_delta;
        best = std::min(best, v);
    }
    for (size_t i = val_loss_history.size() - static_cast<size_t>(patience);
         i < val_loss_history.size(); ++i) {
        if (improved[i]) return false;
    }
    return true;
}

}  // namespace adaptorx
