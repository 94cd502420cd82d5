#include "adaptorx/model.hpp"

#include <algorithm>
#include <cmath>

namespace adaptorx {

EncodedBatch assemble_batch(const std::string& objective_id,
                            const std::vector<EncodedExample>& examples) {
    EncodedBatch b;
    b.objective_id = objective_id;
    if (examples.empty()) return b;
    size_t src_len = 0, dec_len = 0, lab_len = 0;
    for (const auto& ex : examples) {
        src_len = std::max(src_len, ex.source_ids.size());
        dec_len = std::max(dec_len, ex.decoder_input_ids.size());
        lab_len = std::max(lab_len, ex.labels.size());
    }
    for (const auto& ex : examples) {
        std::vector<int> src = ex.source_ids;
        std::vector<int> mask(src.size(), 1);
        src.resize(src_len, kPadId);
        mask.resize(src_len, 0);
        b.source_ids.push_back(std::move(src));
        b.source_mask.push_back(std::move(mask));
        if (!ex.decoder_input_ids.empty()) {
            std::vector<int> dec = ex.decoder_input_ids;
            dec.resize(dec_len, kPadId);
            b.decoder_input_ids.push_back(std::move(dec));
        }
        std::vector<int> lab = ex.labels;
        lab.resize(lab_len, kIgnoreId);
        b.labels.push_back(std::move(lab));
        b.raw_refs.push_back(ex.raw_ref);
    }
    return b;
}

void ModelConfig::validate() const {
    if (vocab_size < 4) throw ConfigError("ModelConfig: vocab_size must cover the special tokens");
    if (d_model <= 0 || n_heads <= 0 || enc_layers <= 0 || dec_layers <= 0 || ffn_dim <= 0 ||
        max_len <= 0) {
        throw ConfigError("ModelConfig: dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("ModelConfig: d_model " + std::to_string(d_model) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("ModelConfig: dropout out of [0,1)");
}

const char* head_kind_name(HeadKind kind) {
    switch (kind) {
        case HeadKind::seq2seq_lm: return "seq2seq_lm";
        case HeadKind::token_classification: return "token_classification";
        case HeadKind::sequence_classification: return "sequence_classification";
    }
    return "?";
}

HeadKind head_kind_from(const std::string& name) {
    if (name == "seq2seq_lm") return HeadKind::seq2seq_lm;
    if (name == "token_classification") return HeadKind::token_classification;
    if (name == "sequence_classification") return HeadKind::sequence_classification;
    throw ConfigError("unknown head kind: " + name);
}

namespace {

template <typename T>
ParamPtr<T> init_matrix(const std::string& name, int in, int out, const Rng& rng) {
    auto rs = rng.stream("init/" + name);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<T> data(static_cast<size_t>(in) * out);
    for (auto& v : data) v = static_cast<T>(rs.uniform(-bound, bound));
    return std::make_shared<Parameter<T>>(name, Tensor<T>::from_data({in, out}, std::move(data)));
}

template <typename T>
ParamPtr<T> init_embedding(const std::string& name, int rows, int cols, const Rng& rng) {
    auto rs = rng.stream("init/" + name);
    std::vector<T> data(static_cast<size_t>(rows) * cols);
    for (auto& v : data) v = static_cast<T>(rs.normal(0.0, 0.02));
    return std::make_shared<Parameter<T>>(name, Tensor<T>::from_data({rows, cols}, std::move(data)));
}

template <typename T>
ParamPtr<T> init_const_vector(const std::string& name, int n, T value) {
    return std::make_shared<Parameter<T>>(name, Tensor<T>::full({n}, value));
}

template <typename T>
void add_layer_norm(ParamSet<T>& ps, const std::string& prefix, int d) {
    ps.insert(init_const_vector<T>(prefix + ".gain", d, T(1)));
    ps.insert(init_const_vector<T>(prefix + ".bias", d, T(0)));
}

template <typename T>
void add_attention(ParamSet<T>& ps, const std::string& prefix, int d, const Rng& rng) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
        ps.insert(init_matrix<T>(prefix + "." + w, d, d, rng));
    }
    for (const char* b : {"bq", "bk", "bv", "bo"}) {
        ps.insert(init_const_vector<T>(prefix + "." + b, d, T(0)));
    }
}

template <typename T>
void add_ffn(ParamSet<T>& ps, const std::string& prefix, int d, int f, const Rng& rng) {
    ps.insert(init_matrix<T>(prefix + ".w1", d, f, rng));
    ps.insert(init_const_vector<T>(prefix + ".b1", f, T(0)));
    ps.insert(init_matrix<T>(prefix + ".w2", f, d, rng));
    ps.insert(init_const_vector<T>(prefix + ".b2", d, T(0)));
}

// Sinusoidal position table [len, d].
template <typename T>
Tensor<T> position_table(int len, int d) {
    std::vector<T> data(static_cast<size_t>(len) * d);
    for (int p = 0; p < len; ++p) {
        for (int i = 0; i < d; i += 2) {
            const double rate = std::pow(10000.0, static_cast<double>(i) / d);
            data[static_cast<size_t>(p) * d + i] = static_cast<T>(std::sin(p / rate));
            if (i + 1 < d) {
                data[static_cast<size_t>(p) * d + i + 1] = static_cast<T>(std::cos(p / rate));
            }
        }
    }
    return Tensor<T>::from_data({len, d}, std::move(data));
}

// Padding bias [B,1,1,S]: 0 on real tokens, -1e9 on padding. A row with no
// real tokens attends to position 0 as a sentinel so softmax stays finite.
template <typename T>
Tensor<T> padding_bias(const IdMatrix& mask) {
    const int b = static_cast<int>(mask.size());
    const int s = static_cast<int>(mask[0].size());
    std::vector<T> data(static_cast<size_t>(b) * s, T(0));
    for (int i = 0; i < b; ++i) {
        bool any_real = false;
        for (int j = 0; j < s; ++j) {
            if (mask[i][j] != 0) any_real = true;
            else data[static_cast<size_t>(i) * s + j] = T(-1e9);
        }
        if (!any_real) data[static_cast<size_t>(i) * s] = T(0);
    }
    return Tensor<T>::from_data({b, 1, 1, s}, std::move(data));
}

template <typename T>
Tensor<T> causal_bias(int s) {
    std::vector<T> data(static_cast<size_t>(s) * s, T(0));
    for (int i = 0; i < s; ++i) {
        for (int j = i + 1; j < s; ++j) data[static_cast<size_t>(i) * s + j] = T(-1e9);
    }
    return Tensor<T>::from_data({1, 1, s, s}, std::move(data));
}

template <typename T>
struct ForwardCtx {
    const ModelConfig& cfg;
    const ParamSet<T>& params;
    const ForwardOptions<T>& opts;

    Tensor<T> dropout(Tensor<T> x) const {
        if (!opts.train || cfg.dropout <= 0.0) return x;
        if (!opts.dropout_rng) {
            throw ConfigError("forward: dropout > 0 in training mode requires a dropout stream");
        }
        const T keep = static_cast<T>(1.0 - cfg.dropout);
        std::vector<T> m(static_cast<size_t>(x.size()));
        for (auto& v : m) {
            v = (opts.dropout_rng->next_double() < cfg.dropout) ? T(0) : T(1) / keep;
        }
        return mul(x, Tensor<T>::from_data(x.shape(), std::move(m)));
    }

    Tensor<T> linear(const Tensor<T>& x, const std::string& w, const std::string& b) const {
        return add(matmul(x, params.at(w)->tensor), params.at(b)->tensor);
    }

    Tensor<T> attention(const Tensor<T>& x_q, const Tensor<T>& x_kv, const Tensor<T>& bias,
                        const std::string& prefix) const {
        const int bsz = x_q.dim(0);
        const int sq = x_q.dim(1);
        const int skv = x_kv.dim(1);
        const int h = cfg.n_heads;
        const int dh = cfg.d_model / h;

        auto heads = [&](const Tensor<T>& x, int s, const char* w, const char* b) {
            Tensor<T> y = linear(x, prefix + "." + w, prefix + "." + b);
            return transpose(reshape(y, {bsz, s, h, dh}), 1, 2);  // [B,h,s,dh]
        };
        Tensor<T> q = heads(x_q, sq, "wq", "bq");
        Tensor<T> k = heads(x_kv, skv, "wk", "bk");
        Tensor<T> v = heads(x_kv, skv, "wv", "bv");

        Tensor<T> scores = scale(matmul(q, transpose(k, 2, 3)),
                                 static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
        scores = add(scores, bias);
        Tensor<T> attn = softmax(scores);
        if (opts.attention_out) opts.attention_out->push_back(attn);
        Tensor<T> ctx = reshape(transpose(matmul(attn, v), 1, 2), {bsz, sq, cfg.d_model});
        return linear(ctx, prefix + ".wo", prefix + ".bo");
    }

    Tensor<T> ffn(const Tensor<T>& x, const std::string& prefix) const {
        return linear(gelu(linear(x, prefix + ".w1", prefix + ".b1")), prefix + ".w2",
                      prefix + ".b2");
    }

    Tensor<T> ln(const Tensor<T>& x, const std::string& prefix) const {
        return layer_norm(x, params.at(prefix + ".gain")->tensor,
                          params.at(prefix + ".bias")->tensor);
    }

    Tensor<T> embed(const IdMatrix& ids) const {
        const int s = static_cast<int>(ids[0].size());
        Tensor<T> x = scale(embedding_lookup(params.at("body.embed.tok")->tensor, ids),
                            static_cast<T>(std::sqrt(static_cast<double>(cfg.d_model))));
        Tensor<T> pos = reshape(slice(position_table<T>(cfg.max_len, cfg.d_model), 0, 0, s),
                                {1, s, cfg.d_model});
        return add(x, pos);
    }

    Tensor<T> encode(const EncodedBatch& batch, const Tensor<T>& src_bias) const {
        Tensor<T> x = embed(batch.source_ids);
        for (int l = 0; l < cfg.enc_layers; ++l) {
            const std::string base = "body.encoder.layer" + std::to_string(l);
            Tensor<T> h = ln(x, base + ".ln1");
            x = add(x, dropout(attention(h, h, src_bias, base + ".attn")));
            x = add(x, dropout(ffn(ln(x, base + ".ln2"), base + ".ffn")));
        }
        return ln(x, "body.encoder.ln_f");
    }

    Tensor<T> decode(const EncodedBatch& batch, const Tensor<T>& enc_out,
                     const Tensor<T>& src_bias) const {
        const int st = static_cast<int>(batch.decoder_input_ids[0].size());
        Tensor<T> causal = causal_bias<T>(st);
        Tensor<T> y = embed(batch.decoder_input_ids);
        for (int l = 0; l < cfg.dec_layers; ++l) {
            const std::string base = "body.decoder.layer" + std::to_string(l);
            Tensor<T> h1 = ln(y, base + ".ln1");
            y = add(y, dropout(attention(h1, h1, causal, base + ".self_attn")));
            y = add(y, dropout(attention(ln(y, base + ".ln2"), enc_out, src_bias,
                                         base + ".cross_attn")));
            y = add(y, dropout(ffn(ln(y, base + ".ln3"), base + ".ffn")));
        }
        return ln(y, "body.decoder.ln_f");
    }
};

// Mean over real source positions; an all-padding row pools to zeros.
template <typename T>
Tensor<T> masked_mean_pool(const Tensor<T>& enc_out, const IdMatrix& mask) {
    const int b = enc_out.dim(0);
    const int s = enc_out.dim(1);
    std::vector<T> w(static_cast<size_t>(b) * s, T(0));
    for (int i = 0; i < b; ++i) {
        int count = 0;
        for (int j = 0; j < s; ++j) count += mask[i][j] != 0 ? 1 : 0;
        if (count == 0) continue;
        for (int j = 0; j < s; ++j) {
            if (mask[i][j] != 0) w[static_cast<size_t>(i) * s + j] = T(1) / static_cast<T>(count);
        }
    }
    Tensor<T> weights = Tensor<T>::from_data({b, 1, s}, std::move(w));
    return reshape(matmul(weights, enc_out), {b, enc_out.dim(2)});
}

}  // namespace

template <typename T>
ParamSet<T> build_body(const ModelConfig& config, uint64_t seed) {
    config.validate();
    const Rng rng(seed);
    ParamSet<T> ps;
    ps.insert(init_embedding<T>("body.embed.tok", config.vocab_size, config.d_model, rng));
    for (int l = 0; l < config.enc_layers; ++l) {
        const std::string base = "body.encoder.layer" + std::to_string(l);
        add_layer_norm(ps, base + ".ln1", config.d_model);
        add_attention(ps, base + ".attn", config.d_model, rng);
        add_layer_norm(ps, base + ".ln2", config.d_model);
        add_ffn(ps, base + ".ffn", config.d_model, config.ffn_dim, rng);
    }
    add_layer_norm(ps, "body.encoder.ln_f", config.d_model);
    for (int l = 0; l < config.dec_layers; ++l) {
        const std::string base = "body.decoder.layer" + std::to_string(l);
        add_layer_norm(ps, base + ".ln1", config.d_model);
        add_attention(ps, base + ".self_attn", config.d_model, rng);
        add_layer_norm(ps, base + ".ln2", config.d_model);
        add_attention(ps, base + ".cross_attn", config.d_model, rng);
        add_layer_norm(ps, base + ".ln3", config.d_model);
        add_ffn(ps, base + ".ffn", config.d_model, config.ffn_dim, rng);
    }
    add_layer_norm(ps, "body.decoder.ln_f", config.d_model);
    return ps;
}

template <typename T>
Head<T> build_head(const ModelConfig& config, HeadKind kind, const std::string& objective_id,
                   int n_labels, uint64_t seed) {
    config.validate();
    if (kind == HeadKind::seq2seq_lm) {
        n_labels = config.vocab_size;
    } else if (n_labels < 1) {
        throw RoutingError("build_head: " + std::string(head_kind_name(kind)) +
                           " needs n_labels >= 1 for objective " + objective_id);
    }
    const Rng rng(seed);
    Head<T> head;
    head.kind = kind;
    head.n_labels = n_labels;
    const std::string prefix = "head." + objective_id + ".proj";
    head.proj_w = init_matrix<T>(prefix + ".w", config.d_model, n_labels, rng);
    head.proj_b = init_const_vector<T>(prefix + ".b", n_labels, T(0));
    head.params.insert(head.proj_w);
    head.params.insert(head.proj_b);
    return head;
}

template <typename T>
Tensor<T> model_forward(const ModelConfig& config, const ParamSet<T>& params, const Head<T>& head,
                        const EncodedBatch& batch, const ForwardOptions<T>& opts) {
    config.validate();
    if (batch.rows() == 0) throw ShapeError("forward: empty batch");
    const int src_len = static_cast<int>(batch.source_ids[0].size());
    if (src_len > config.max_len) {
        throw ShapeError("forward: source length " + std::to_string(src_len) + " exceeds max_len " +
                         std::to_string(config.max_len));
    }
    if ((head.kind == HeadKind::seq2seq_lm) != batch.has_decoder_inputs()) {
        throw ShapeError("forward: decoder inputs must be present iff the head is seq2seq_lm");
    }
    if (!head.proj_w || !head.proj_b) {
        throw RoutingError("forward: head has no projection parameters");
    }

    ForwardCtx<T> ctx{config, params, opts};
    Tensor<T> src_bias = padding_bias<T>(batch.source_mask);
    Tensor<T> enc_out = ctx.encode(batch, src_bias);

    auto project = [&](const Tensor<T>& x) {
        return add(matmul(x, head.proj_w->tensor), head.proj_b->tensor);
    };

    switch (head.kind) {
        case HeadKind::seq2seq_lm: {
            const int tgt_len = static_cast<int>(batch.decoder_input_ids[0].size());
            if (tgt_len > config.max_len) {
                throw ShapeError("forward: target length " + std::to_string(tgt_len) +
                                 " exceeds max_len " + std::to_string(config.max_len));
            }
            return project(ctx.decode(batch, enc_out, src_bias));
        }
        case HeadKind::token_classification:
            return project(enc_out);
        case HeadKind::sequence_classification:
            return project(masked_mean_pool(enc_out, batch.source_mask));
    }
    throw RoutingError("forward: unknown head kind");
}

template <typename T>
std::vector<std::vector<int>> greedy_decode_batch(const ModelConfig& config,
                                                  const ParamSet<T>& params, const Head<T>& head,
                                                  const IdMatrix& sources, int max_new_tokens) {
    if (head.kind != HeadKind::seq2seq_lm) {
        throw RoutingError("greedy_decode: head must be seq2seq_lm");
    }
    NoGradGuard no_grad;
    const int b = static_cast<int>(sources.size());
    if (b == 0) return {};
    const int limit = std::min(max_new_tokens, config.max_len - 1);

    size_t src_len = 0;
    for (const auto& s : sources) src_len = std::max(src_len, s.size());
    EncodedBatch batch;
    batch.objective_id = "decode";
    for (const auto& s : sources) {
        std::vector<int> src = s;
        std::vector<int> mask(src.size(), 1);
        src.resize(src_len, kPadId);
        mask.resize(src_len, 0);
        batch.source_ids.push_back(std::move(src));
        batch.source_mask.push_back(std::move(mask));
    }

    std::vector<std::vector<int>> out(static_cast<size_t>(b));
    std::vector<bool> done(static_cast<size_t>(b), false);
    batch.decoder_input_ids.assign(static_cast<size_t>(b), {kBosId});

    for (int step = 0; step < limit; ++step) {
        Tensor<T> logits = model_forward(config, params, head, batch);
        const int tgt_len = static_cast<int>(batch.decoder_input_ids[0].size());
        const int vocab = logits.dim(2);
        bool all_done = true;
        for (int r = 0; r < b; ++r) {
            if (done[static_cast<size_t>(r)]) {
                batch.decoder_input_ids[static_cast<size_t>(r)].push_back(kPadId);
                continue;
            }
            const T* row =
                logits.data().data() + (static_cast<long>(r) * tgt_len + (tgt_len - 1)) * vocab;
            int best = 0;
            for (int v = 1; v < vocab; ++v) {
                if (row[v] > row[best]) best = v;  // ties keep the lowest id
            }
            if (best == kEosId) {
                done[static_cast<size_t>(r)] = true;
                batch.decoder_input_ids[static_cast<size_t>(r)].push_back(kPadId);
            } else {
                out[static_cast<size_t>(r)].push_back(best);
                batch.decoder_input_ids[static_cast<size_t>(r)].push_back(best);
                all_done = false;
            }
        }
        if (all_done) break;
    }
    return out;
}

template <typename T>
std::vector<int> greedy_decode(const ModelConfig& config, const ParamSet<T>& params,
                               const Head<T>& head, const std::vector<int>& source_ids,
                               int max_new_tokens) {
    return greedy_decode_batch(config, params, head, IdMatrix{source_ids}, max_new_tokens)[0];
}

#define ADAPTORX_INSTANTIATE_MODEL(T)                                                             \
    template ParamSet<T> build_body<T>(const ModelConfig&, uint64_t);                             \
    template Head<T> build_head<T>(const ModelConfig&, HeadKind, const std::string&, int,         \
                                   uint64_t);                                                     \
    template Tensor<T> model_forward<T>(const ModelConfig&, const ParamSet<T>&, const Head<T>&,   \
                                        const EncodedBatch&, const ForwardOptions<T>&);           \
    template std::vector<int> greedy_decode<T>(const ModelConfig&, const ParamSet<T>&,            \
                                               const Head<T>&, const std::vector<int>&, int);     \
    template std::vector<std::vector<int>> greedy_decode_batch<T>(                                \
        const ModelConfig&, const ParamSet<T>&, const Head<T>&, const IdMatrix&, int);

ADAPTORX_INSTANTIATE_MODEL(float)
ADAPTORX_INSTANTIATE_MODEL(double)

#undef ADAPTORX_INSTANTIATE_MODEL

}  // namespace adaptorx
