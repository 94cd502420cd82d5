#pragma once

#include <string>
#include <vector>

#include "adaptorx/autodiff.hpp"

namespace adaptorx {

// Special token ids, fixed across the whole pipeline.
constexpr int kPadId = 0;
constexpr int kBosId = 1;
constexpr int kEosId = 2;
constexpr int kUnkId = 3;

// Objective-tagged encoded inputs, padded to the batch max length. Labels use
// kIgnoreId at padding; sequence classification stores one class id per row.
struct EncodedBatch {
    std::string objective_id;
    IdMatrix source_ids;
    IdMatrix source_mask;         // 1 = real token, 0 = padding
    IdMatrix decoder_input_ids;   // seq2seq only
    IdMatrix labels;
    std::vector<std::string> raw_refs;  // original target texts, for generative metrics

    int rows() const { return static_cast<int>(source_ids.size()); }
    bool has_decoder_inputs() const { return !decoder_input_ids.empty(); }
};

// One encoded example, pre-padding.
struct EncodedExample {
    std::vector<int> source_ids;
    std::vector<int> decoder_input_ids;
    std::vector<int> labels;
    std::string raw_ref;
};

// Pads examples to their max length and tags the batch.
EncodedBatch assemble_batch(const std::string& objective_id,
                            const std::vector<EncodedExample>& examples);

}  // namespace adaptorx
