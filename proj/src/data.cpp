#include "adaptorx/data.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace adaptorx {

namespace {
const std::vector<std::string> kSpecials = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocab::Vocab() {
    id_to_token_ = kSpecials;
    for (size_t i = 0; i < id_to_token_.size(); ++i) {
        token_to_id_[id_to_token_[i]] = static_cast<int>(i);
    }
}

int Vocab::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) {
        throw ShapeError("Vocab: token id " + std::to_string(id) + " out of range [0," +
                         std::to_string(size()) + ")");
    }
    return id_to_token_[static_cast<size_t>(id)];
}

std::vector<int> Vocab::tokenize(const std::string& text) const {
    std::vector<int> out;
    for (const auto& tok : split_tokens(text)) out.push_back(id(tok));
    return out;
}

std::string Vocab::detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id == kPad || id == kBos || id == kEos) continue;
        if (!out.empty()) out += ' ';
        out += token(id);
    }
    return out;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& id_to_token) {
    if (id_to_token.size() < kSpecials.size()) {
        throw ValueError("Vocab: token list too short for specials");
    }
    for (size_t i = 0; i < kSpecials.size(); ++i) {
        if (id_to_token[i] != kSpecials[i]) {
            throw ValueError("Vocab: special token mismatch at id " + std::to_string(i));
        }
    }
    Vocab v;
    for (size_t i = kSpecials.size(); i < id_to_token.size(); ++i) {
        v.token_to_id_[id_to_token[i]] = static_cast<int>(i);
        v.id_to_token_.push_back(id_to_token[i]);
    }
    return v;
}

std::vector<std::string> split_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) out.push_back(std::move(tok));
    return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

Vocab build_vocab(const std::vector<std::string>& lines) {
    std::map<std::string, long> freq;
    for (const auto& line : lines) {
        for (const auto& tok : split_tokens(line)) ++freq[tok];
    }
    std::vector<std::pair<std::string, long>> entries(freq.begin(), freq.end());
    std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab v;
    for (const auto& [tok, _] : entries) {
        if (v.contains(tok)) continue;  // corpus may contain special surface forms
        v.token_to_id_[tok] = v.size();
        v.id_to_token_.push_back(tok);
    }
    return v;
}

TextPairSource TextPairSource::from_lines(std::vector<std::string> texts,
                                          std::vector<std::string> labels) {
    if (texts.size() != labels.size()) {
        throw DataError("TextPairSource: " + std::to_string(texts.size()) + " texts vs " +
                        std::to_string(labels.size()) + " labels");
    }
    return TextPairSource{std::move(texts), std::move(labels)};
}

TextPairSource TextPairSource::from_files(const std::string& texts_path,
                                          const std::string& labels_path) {
    return from_lines(read_lines(texts_path), read_lines(labels_path));
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        out.push_back(line);
    }
    return out;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& line : lines) out << line << '\n';
    if (!out) throw IoError("write failed for " + path);
}

// --- synthetic domains ---------------------------------------------------------

std::vector<SyntheticDomainSpec> default_domain_specs() {
    std::vector<SyntheticDomainSpec> specs(3);
    specs[0] = {"ID", 0, 39, DomainTransform::reverse_order, 4, 12, 2000, 200, {}};
    specs[1] = {"AD", 24, 63, DomainTransform::identity, 4, 12, 2000, 200, {}};
    specs[2] = {"OOD", 0, 63, DomainTransform::reverse_order, 4, 12, 2000, 200, {}};
    return specs;
}

namespace {

std::string token_name(int index) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "t%02d", index);
    return buf;
}

void check_bijection(const SyntheticDomainSpec& spec, const std::vector<int>& cipher) {
    const int n = spec.vocab_hi - spec.vocab_lo + 1;
    if (static_cast<int>(cipher.size()) != n) {
        throw ValueError("domain " + spec.domain_id + ": cipher size " +
                         std::to_string(cipher.size()) + " != vocab subset size " +
                         std::to_string(n));
    }
    std::vector<bool> seen(static_cast<size_t>(n), false);
    for (int v : cipher) {
        if (v < spec.vocab_lo || v > spec.vocab_hi || seen[static_cast<size_t>(v - spec.vocab_lo)]) {
            throw ValueError("domain " + spec.domain_id + ": cipher is not a bijection on [" +
                             std::to_string(spec.vocab_lo) + "," + std::to_string(spec.vocab_hi) +
                             "]");
        }
        seen[static_cast<size_t>(v - spec.vocab_lo)] = true;
    }
}

std::vector<int> random_cipher(const SyntheticDomainSpec& spec, RngStream& rs) {
    std::vector<int> cipher;
    for (int t = spec.vocab_lo; t <= spec.vocab_hi; ++t) cipher.push_back(t);
    shuffle(cipher, rs);
    return cipher;
}

int cipher_at(const DomainData& d, int token_index) {
    return d.cipher[static_cast<size_t>(token_index - d.spec.vocab_lo)];
}

std::vector<int> random_source(const SyntheticDomainSpec& spec, RngStream& rs) {
    const int len =
        spec.len_lo + static_cast<int>(rs.next_below(static_cast<uint64_t>(spec.len_hi - spec.len_lo + 1)));
    std::vector<int> toks(static_cast<size_t>(len));
    const int span = spec.vocab_hi - spec.vocab_lo + 1;
    for (auto& t : toks) {
        t = spec.vocab_lo + static_cast<int>(rs.next_below(static_cast<uint64_t>(span)));
    }
    return toks;
}

std::string target_for(const DomainData& d, const std::vector<int>& source_toks) {
    std::vector<int> out;
    out.reserve(source_toks.size());
    for (int t : source_toks) out.push_back(cipher_at(d, t));
    if (d.spec.transform == DomainTransform::reverse_order) std::reverse(out.begin(), out.end());
    std::vector<std::string> names;
    names.reserve(out.size());
    for (int t : out) names.push_back(token_name(t));
    return join_tokens(names);
}

std::string source_text(const std::vector<int>& toks) {
    std::vector<std::string> names;
    names.reserve(toks.size());
    for (int t : toks) names.push_back(token_name(t));
    return join_tokens(names);
}

// Where domain vocabularies overlap, force the ciphers apart so the mappings
// genuinely conflict (otherwise "forgetting" could be invisible).
void force_disagreement(DomainData& base, DomainData& other) {
    const int lo = std::max(base.spec.vocab_lo, other.spec.vocab_lo);
    const int hi = std::min(base.spec.vocab_hi, other.spec.vocab_hi);
    if (lo > hi) return;
    auto conflicts = [&](int t) {
        return cipher_at(base, t) == cipher_at(other, t);
    };
    const int span = other.spec.vocab_hi - other.spec.vocab_lo + 1;
    for (int t = lo; t <= hi; ++t) {
        if (!conflicts(t)) continue;
        // Swap other's assignment at t with a partner that stays conflict-free.
        for (int step = 1; step < span; ++step) {
            const int u = other.spec.vocab_lo + ((t - other.spec.vocab_lo) + step) % span;
            const size_t it = static_cast<size_t>(t - other.spec.vocab_lo);
            const size_t iu = static_cast<size_t>(u - other.spec.vocab_lo);
            std::swap(other.cipher[it], other.cipher[iu]);
            const bool bad_t = conflicts(t);
            const bool bad_u = (u >= lo && u <= hi) && conflicts(u);
            if (!bad_t && !bad_u) break;
            std::swap(other.cipher[it], other.cipher[iu]);  // undo and keep looking
        }
        if (conflicts(t)) {
            throw ValueError("could not force cipher disagreement at token " + std::to_string(t));
        }
    }
}

}  // namespace

SyntheticData generate_synthetic_domains(uint64_t master_seed,
                                         const std::vector<SyntheticDomainSpec>& specs) {
    const Rng rng(master_seed);
    SyntheticData data;
    for (const auto& spec : specs) {
        if (spec.vocab_hi < spec.vocab_lo || spec.len_lo < 1 || spec.len_hi < spec.len_lo) {
            throw ValueError("domain " + spec.domain_id + ": invalid spec ranges");
        }
        DomainData d;
        d.spec = spec;
        if (spec.cipher.empty()) {
            auto rs = rng.stream("cipher/" + spec.domain_id);
            d.cipher = random_cipher(spec, rs);
        } else {
            check_bijection(spec, spec.cipher);
            d.cipher = spec.cipher;
        }
        data.domains.emplace(spec.domain_id, std::move(d));
    }

    // ID and AD must disagree everywhere their vocabularies overlap.
    if (data.domains.count("ID") && data.domains.count("AD")) {
        force_disagreement(data.domains.at("ID"), data.domains.at("AD"));
    }

    for (auto& [id, d] : data.domains) {
        auto rs = rng.stream("data/" + id);
        std::set<std::string> train_set;
        for (long i = 0; i < d.spec.train_size; ++i) {
            const auto toks = random_source(d.spec, rs);
            const std::string src = source_text(toks);
            d.train.texts.push_back(src);
            d.train.labels.push_back(target_for(d, toks));
            train_set.insert(src);
        }
        long attempts = 0;
        const long max_attempts = d.spec.val_size * 1000 + 1000;
        std::set<std::string> val_set;
        while (static_cast<long>(d.val.texts.size()) < d.spec.val_size) {
            if (++attempts > max_attempts) {
                throw ValueError("domain " + id + ": cannot deduplicate validation split");
            }
            const auto toks = random_source(d.spec, rs);
            const std::string src = source_text(toks);
            if (train_set.count(src) || val_set.count(src)) continue;
            val_set.insert(src);
            d.val.texts.push_back(src);
            d.val.labels.push_back(target_for(d, toks));
        }
    }
    return data;
}

SyntheticData generate_synthetic_domains(uint64_t master_seed) {
    return generate_synthetic_domains(master_seed, default_domain_specs());
}

const DomainData& SyntheticData::at(const std::string& domain_id) const {
    auto it = domains.find(domain_id);
    if (it == domains.end()) throw DataError("unknown domain " + domain_id);
    return it->second;
}

std::vector<std::string> SyntheticData::all_lines() const {
    std::vector<std::string> out;
    for (const auto& [_, d] : domains) {
        for (const auto* src : {&d.train, &d.val}) {
            out.insert(out.end(), src->texts.begin(), src->texts.end());
            out.insert(out.end(), src->labels.begin(), src->labels.end());
        }
    }
    return out;
}

ReverseTranslator oracle_reverse_translator(const DomainData& domain) {
    // Inverse cipher keyed by substituted token name.
    std::map<std::string, std::string> inverse;
    for (int t = domain.spec.vocab_lo; t <= domain.spec.vocab_hi; ++t) {
        inverse[token_name(cipher_at(domain, t))] = token_name(t);
    }
    const bool reversed = domain.spec.transform == DomainTransform::reverse_order;
    return [inverse, reversed](const std::string& target) -> std::string {
        auto toks = split_tokens(target);
        if (reversed) std::reverse(toks.begin(), toks.end());
        std::vector<std::string> out;
        out.reserve(toks.size());
        for (const auto& t : toks) {
            auto it = inverse.find(t);
            if (it == inverse.end()) return "";  // outside the domain: no pseudo-source
            out.push_back(it->second);
        }
        return join_tokens(out);
    };
}

std::vector<std::string> write_domain_files(const SyntheticData& data, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::string> written;
    for (const auto& [id, d] : data.domains) {
        const std::array<std::pair<const TextPairSource*, const char*>, 2> splits = {
            std::make_pair(&d.train, "train"), std::make_pair(&d.val, "val")};
        for (const auto& [src, name] : splits) {
            const std::string base = dir + "/" + id + "." + name;
            write_lines(base + ".src", src->texts);
            write_lines(base + ".tgt", src->labels);
            written.push_back(base + ".src");
            written.push_back(base + ".tgt");
        }
    }
    return written;
}

}  // namespace adaptorx
