#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "miditex/kernels.hpp"
#include "miditex/token_grammar.hpp"

namespace miditex {

// Desk-scale Transformer VAE: a bidirectional encoder summarizes each bar
// into a diagonal-Gaussian latent; a causal decoder predicts the next token
// with the bar's (latent ⊕ condition-embedding) projection added to the
// input of every layer across that bar's positions.
struct ModelConfig {
    int embed_dim = 128;
    int encoder_layers = 2;
    int decoder_layers = 2;
    int heads = 4;
    int latent_dim = 32;
    int condition_embed_dim = 32; // split evenly between the two bar attributes
    double beta = 1.0;            // β-VAE coefficient
    double free_bits = 0.25;      // λ, nats per latent dimension
    int context_length = 1024;
    int vocab_size = 0;
    int bar_classes = 8;          // rhythmicity/polyphonicity class count
    double logvar_min = -8.0;
    double logvar_max = 8.0;

    void check() const;
};

struct BarLatent {
    std::vector<double> mean;
    std::vector<double> logvar;
};

// A tokenized training/inference item: token ids with, per position, the
// bar whose condition applies (BOS keys bar 0), the bar token spans for the
// encoder, and per-bar condition classes.
struct SeqExample {
    std::vector<int> ids;
    std::vector<int> bar_of_pos;
    std::vector<std::pair<int, int>> bar_spans;      // [start, end) per bar
    std::vector<std::pair<int, int>> bar_classes;    // (rhythmicity, polyphonicity), 1-based
    int bars() const { return static_cast<int>(bar_spans.size()); }
};

SeqExample make_example(const TokenSequence& seq, const TextureProfile& profile,
                        const Vocabulary& vocab);

struct LossBreakdown {
    double total = 0.0;
    double recon = 0.0; // mean token cross-entropy
    double kl = 0.0;    // free-bits-clamped KL, per-sequence sum averaged over the batch
};

struct Param {
    Mat w;
    Mat g;
};

// One pre-LN transformer layer's parameters (shared shape between the
// bidirectional encoder and the causal decoder).
struct TransformerLayerParams {
    int heads = 1;
    Param ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    Param ln2_g, ln2_b, w1, b1, w2, b2;
};

class Model {
public:
    Model() = default;
    Model(ModelConfig config, uint64_t seed);

    const ModelConfig& config() const { return config_; }

    // Named parameter tensors in a stable order (checkpoint layout, Adam
    // state alignment, gradient checks). Pointers are valid until the model
    // is moved or destroyed; rebuilt on every call.
    std::vector<std::pair<std::string, Param*>> tensors();
    void zero_grad();

    // β-VAE objective with free bits. eps_seed fixes the reparameterization
    // noise, making the loss a deterministic function of the parameters.
    LossBreakdown loss(const std::vector<SeqExample>& batch, uint64_t eps_seed, bool with_grad,
                       std::optional<double> beta_override = std::nullopt);

    // Per-bar posterior parameters; each bar is encoded from its own tokens
    // only. Deterministic.
    std::vector<BarLatent> encode_bars(const SeqExample& example) const;
    std::vector<BarLatent> encode_bars(const TokenSequence& seq, const Vocabulary& vocab) const;

    // Next-token distribution after the given prefix (full recompute; the
    // incremental DecoderSession matches it bitwise).
    std::vector<double> decode_distribution(const std::vector<int>& prefix_ids,
                                            const std::vector<int>& bar_of_pos,
                                            const std::vector<std::vector<double>>& bar_latents,
                                            const std::vector<std::pair<int, int>>& bar_conditions) const;

    // Projection row added to the decoder input for one bar.
    std::vector<double> condition_row(const std::vector<double>& latent, int rhythmicity_class,
                                      int polyphonicity_class) const;

    void save(const std::string& path) const;
    static Model load(const std::string& path);

private:
    friend class DecoderSession;

    void init_params(uint64_t seed);

    ModelConfig config_;
    Param tok_embed_, pos_dec_, pos_enc_;
    std::vector<TransformerLayerParams> enc_, dec_;
    Param enc_ln_g_, enc_ln_b_, dec_ln_g_, dec_ln_b_;
    Param mu_w_, mu_b_, lv_w_, lv_b_;
    Param cond_rhy_, cond_poly_; // [classes, condition_embed_dim/2]
    Param ia_w_, ia_b_;          // [(latent+cond), embed] in-attention projection
    Param out_w_, out_b_;
};

// Incremental decoding over a shared read-only model: per-layer KV caches,
// one appended token at a time.
class DecoderSession {
public:
    DecoderSession(const Model& model, std::vector<std::vector<double>> bar_latents,
                   std::vector<std::pair<int, int>> bar_conditions);

    void append(int token_id, int bar);
    // Distribution over the vocabulary for the next token.
    const std::vector<double>& next_distribution() const { return dist_; }
    int length() const { return length_; }

private:
    const Model& model_;
    std::vector<std::vector<double>> latents_;
    std::vector<std::pair<int, int>> conditions_;
    std::vector<Mat> key_cache_, value_cache_; // per decoder layer, [t, d]
    std::vector<double> dist_;
    int length_ = 0;
};

struct TrainOptions {
    int steps = 2000;
    int batch_size = 4;
    double lr = 1e-3;
    double grad_clip = 1.0; // global norm; 0 disables
    uint64_t seed = 1;
    std::string log_path;      // JSON lines (step, losses); empty = no log
    int snapshot_every = 200;  // divergence rollback granularity
    int log_every = 25;
};

struct TrainResult {
    double initial_recon = 0.0;
    double final_recon = 0.0;
    int steps_run = 0;
    bool diverged = false;
};

TrainResult train_model(Model& model, const std::vector<SeqExample>& corpus,
                        const TrainOptions& options);

} // namespace miditex
