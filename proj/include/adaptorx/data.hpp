#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "adaptorx/errors.hpp"
#include "adaptorx/rng.hpp"

namespace adaptorx {

// Whitespace token <-> id bijection with fixed special ids.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    Vocab();

    int id(const std::string& token) const;  // kUnk when absent
    const std::string& token(int id) const;
    bool contains(const std::string& token) const { return token_to_id_.count(token) != 0; }
    int size() const { return static_cast<int>(id_to_token_.size()); }

    std::vector<int> tokenize(const std::string& text) const;
    // Joins with single spaces; pad/bos/eos are stripped, unk keeps its surface form.
    std::string detokenize(const std::vector<int>& ids) const;

    const std::vector<std::string>& tokens() const { return id_to_token_; }

    // Restores a vocab from an explicit id-ordered token list (checkpoints).
    static Vocab from_tokens(const std::vector<std::string>& id_to_token);

private:
    friend Vocab build_vocab(const std::vector<std::string>& lines);

    std::vector<std::string> id_to_token_;
    std::map<std::string, int> token_to_id_;
};

// Tokens sorted by (frequency desc, lexicographic) after the four specials.
Vocab build_vocab(const std::vector<std::string>& lines);

std::vector<std::string> split_tokens(const std::string& text);
std::string join_tokens(const std::vector<std::string>& tokens);

// Line-aligned (text, label) corpus; in-memory or loaded from files.
struct TextPairSource {
    std::vector<std::string> texts;
    std::vector<std::string> labels;

    static TextPairSource from_lines(std::vector<std::string> texts, std::vector<std::string> labels);
    static TextPairSource from_files(const std::string& texts_path, const std::string& labels_path);

    size_t size() const { return texts.size(); }
    bool empty() const { return texts.empty(); }
};

std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);

// --- synthetic multi-domain corpus -------------------------------------------

enum class DomainTransform { reverse_order, identity };

struct SyntheticDomainSpec {
    std::string domain_id;        // ID | AD | OOD
    int vocab_lo = 0;             // token range, inclusive
    int vocab_hi = 0;
    DomainTransform transform = DomainTransform::identity;
    int len_lo = 4;
    int len_hi = 12;
    long train_size = 2000;
    long val_size = 200;
    std::vector<int> cipher;      // explicit bijection over [vocab_lo, vocab_hi]; empty = generate
};

// The default three-domain setup: ID and AD overlap on part of the vocabulary
// and are forced to disagree there, so adapting to AD measurably damages ID.
std::vector<SyntheticDomainSpec> default_domain_specs();

struct DomainData {
    SyntheticDomainSpec spec;
    std::vector<int> cipher;  // cipher[t - vocab_lo] = substituted token index
    TextPairSource train;
    TextPairSource val;
};

struct SyntheticData {
    std::map<std::string, DomainData> domains;

    const DomainData& at(const std::string& domain_id) const;
    std::vector<std::string> all_lines() const;  // every text and label line
};

// Deterministic per master_seed. Targets are transform(cipher(source)); val
// sources are deduplicated against train by exact match.
SyntheticData generate_synthetic_domains(uint64_t master_seed,
                                         const std::vector<SyntheticDomainSpec>& specs);
SyntheticData generate_synthetic_domains(uint64_t master_seed);

using ReverseTranslator = std::function<std::string(const std::string&)>;

// Exact inverse of the domain's target construction: undoes the order
// transform, then applies the inverse cipher. Recovers the true source.
ReverseTranslator oracle_reverse_translator(const DomainData& domain);

// Writes <dir>/<domain>.{train,val}.{src,tgt}; returns written paths.
std::vector<std::string> write_domain_files(const SyntheticData& data, const std::string& dir);

}  // namespace adaptorx
