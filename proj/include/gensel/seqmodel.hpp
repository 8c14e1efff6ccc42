#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gensel/core.hpp"
#include "gensel/tensor.hpp"

namespace gensel {

enum class KlForm { paper, standard };

struct ModelConfig {
    int embed_dim = 64;
    int layers = 2;           // encoder and decoder both
    int heads = 8;
    int ff_dim = 256;
    int latent_dim = 64;
    int eval_hidden = 200;    // two hidden layers of this width
    int max_len = 0;          // 0: derived as n_features + 2 at build time
    bool variational = true;  // off: plain deterministic autoencoder
    KlForm kl_form = KlForm::paper;

    void validate() const;
};

struct TrainConfig {
    double alpha = 0.8;      // reconstruction weight
    double beta = 0.2;       // evaluator weight
    double gamma = 0.001;    // KL weight
    std::size_t batch_size = 1024;   // clamps to the record count
    int epochs = 400;
    double lr = 1e-4;
    std::uint64_t seed = 0;
    int threads = 0;         // 0: hardware concurrency

    void validate() const;
};

struct LatentPoint {
    std::vector<double> m;
    std::vector<double> sigma;    // log-scale; empty when the model is not variational
    std::vector<double> e_star;   // set by reparameterize
};

// ---- parameter containers ----

struct LayerNormP {
    Mat gamma, beta;   // 1 x d
};
struct AttentionP {
    Mat wq, bq, wk, bk, wv, bv, wo, bo;
};
struct FfnP {
    Mat w1, b1, w2, b2;
};
struct BlockP {
    LayerNormP ln1;
    AttentionP attn;
    LayerNormP ln2;
    FfnP ffn;
};
struct StackP {
    std::vector<BlockP> blocks;
    LayerNormP final_ln;
};
struct EvaluatorP {
    Mat w1, b1, w2, b2, w3, b3;
};

struct ModelParams {
    ModelConfig cfg;
    int vocab_size = 0;

    Mat tok_emb;              // vocab x d, shared by encoder and decoder inputs
    StackP encoder;
    StackP decoder;           // causal; position 0 carries the latent
    Mat w_m, b_m;             // pooled encoder state -> latent mean
    Mat w_s, b_s;             // pooled encoder state -> latent log-scale (variational only)
    Mat w_le, b_le;           // latent -> decoder prefix slot
    Mat w_out, b_out;         // d -> vocab logits
    EvaluatorP evaluator;

    Mat posenc;               // derived, not trained

    int max_len() const { return cfg.max_len; }

    // fixed enumeration of every trainable tensor
    void visit(const std::function<void(const std::string&, Mat&)>& fn);
};

struct EpochStats {
    int epoch = 0;
    double rec = 0.0, evt = 0.0, kl = 0.0, joint = 0.0;
};

struct SequenceTooLongError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnknownTokenError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NaNLossError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- model ----

ModelParams init_params(const ModelConfig& cfg, int vocab_size, std::uint64_t seed);

// Deterministic (m, sigma) from the mean-pooled encoder output. Trailing PADs
// are ignored; remaining tokens must be feature tokens.
LatentPoint encode(const TokenSequence& seq, const ModelParams& params);

// e* = m + eps (.) exp(sigma); eps = 0 is the deterministic inference path.
std::vector<double> reparameterize(const LatentPoint& lp, const std::vector<double>& eps);

// Next-token logits given a prefix that starts with SOS.
std::vector<double> decode_logits(const std::vector<double>& e_star, const TokenSequence& prefix,
                                  const ModelParams& params);

// Sum of next-token NLLs over seq plus the trailing EOS (teacher forcing).
double reconstruction_loss(const std::vector<double>& e_star, const TokenSequence& seq,
                           const ModelParams& params);

double evaluator_value(const ModelParams& params, const std::vector<double>& e);
std::vector<double> evaluator_input_grad(const ModelParams& params, const std::vector<double>& e);
double evaluator_loss(const std::vector<double>& e_star, double v, const ModelParams& params);

// Summed over latent dims per the configured form; 0 when not variational.
double kl_loss(const LatentPoint& lp, const ModelConfig& cfg);

double joint_loss(double rec, double evt, double kl, const TrainConfig& cfg);

// Minibatch training of encoder, decoder and evaluator on the joint loss.
// Deterministic given cfg seeds (threading uses a fixed partition).
ModelParams train(const std::vector<SubsetRecord>& records, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, int vocab_size,
                  std::vector<EpochStats>* curve = nullptr);

// One example's loss components on a fixed noise draw; when grads is non-null,
// scale * d(joint)/d(theta) is accumulated into it. eps is ignored on
// non-variational models.
struct ExampleLosses {
    double rec = 0.0, evt = 0.0, kl = 0.0;
};
ExampleLosses example_gradients(const ModelParams& params, const TokenSequence& seq, double v,
                                const std::vector<double>& eps, const TrainConfig& weights,
                                double scale, ModelParams* grads);

ModelParams zero_params_like(const ModelParams& params);

// Teacher-forced argmax accuracy over all next-token positions (eps = 0 path).
double teacher_forced_accuracy(const std::vector<SubsetRecord>& records, const ModelParams& params);

void save_checkpoint(const ModelParams& params, const TrainConfig& train_cfg, const std::string& path);
struct Checkpoint {
    ModelParams params;
    TrainConfig train_cfg;
};
Checkpoint load_checkpoint(const std::string& path);

} // namespace gensel
