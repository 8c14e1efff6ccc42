#include "gensel/seqmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "gensel/kernels.hpp"
#include "gensel/rng.hpp"

namespace gensel {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kAdamB1 = 0.9, kAdamB2 = 0.999, kAdamEps = 1e-8;

const kernels::Ops& K() { return kernels::ops(); }

// y = x * w + b, row-broadcast bias
void linear(const Mat& x, const Mat& w, const Mat& b, Mat& y) {
    y = Mat(x.rows, w.cols);
    for (std::size_t i = 0; i < y.rows; ++i) std::copy_n(b.data.data(), w.cols, y.row(i));
    K().gemm(false, false, x.rows, w.cols, x.cols, 1.0, x.data.data(), x.cols, w.data.data(), w.cols,
             1.0, y.data.data(), y.cols);
}

void add_col_sums(const Mat& dy, Mat& gb) {
    for (std::size_t i = 0; i < dy.rows; ++i) K().vadd(dy.row(i), gb.data.data(), dy.cols);
}

// ---- layer norm ----

struct LnCache {
    Mat xhat;
    std::vector<double> rstd;
};

void ln_forward(const LayerNormP& p, const Mat& x, Mat& y, LnCache& c) {
    const std::size_t t = x.rows, d = x.cols;
    c.xhat = Mat(t, d);
    c.rstd.assign(t, 0.0);
    if (&y != &x) y = Mat(t, d);
    for (std::size_t i = 0; i < t; ++i) {
        const double* xi = x.row(i);
        const double mean = K().sum(xi, d) / static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= static_cast<double>(d);
        const double rstd = 1.0 / std::sqrt(var + kLnEps);
        c.rstd[i] = rstd;
        double* xh = c.xhat.row(i);
        double* yi = y.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            xh[j] = (xi[j] - mean) * rstd;
            yi[j] = p.gamma.data[j] * xh[j] + p.beta.data[j];
        }
    }
}

void ln_backward(const LayerNormP& p, const LnCache& c, const Mat& dy, Mat& dx, LayerNormP& g) {
    const std::size_t t = dy.rows, d = dy.cols;
    std::vector<double> dxh(d);
    for (std::size_t i = 0; i < t; ++i) {
        const double* dyi = dy.row(i);
        const double* xh = c.xhat.row(i);
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dxh[j] = dyi[j] * p.gamma.data[j];
            m1 += dxh[j];
            m2 += dxh[j] * xh[j];
            g.gamma.data[j] += dyi[j] * xh[j];
            g.beta.data[j] += dyi[j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        double* dxi = dx.row(i);
        const double rstd = c.rstd[i];
        for (std::size_t j = 0; j < d; ++j) dxi[j] += rstd * (dxh[j] - m1 - xh[j] * m2);
    }
}

// ---- attention ----

struct AttnCache {
    Mat q, k, v;     // t x d
    Mat probs;       // (heads*t) x t, per-head blocks
    Mat z;           // t x d
};

void attn_forward(const AttentionP& p, const Mat& xn, int heads, bool causal, Mat& out, AttnCache& c) {
    const std::size_t t = xn.rows, d = xn.cols;
    const std::size_t h = static_cast<std::size_t>(heads), dh = d / h;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    linear(xn, p.wq, p.bq, c.q);
    linear(xn, p.wk, p.bk, c.k);
    linear(xn, p.wv, p.bv, c.v);
    c.probs = Mat(h * t, t);
    c.z = Mat(t, d);

    for (std::size_t hd = 0; hd < h; ++hd) {
        double* probs_h = c.probs.row(hd * t);
        K().gemm(false, true, t, t, dh, scale, c.q.data.data() + hd * dh, d,
                 c.k.data.data() + hd * dh, d, 0.0, probs_h, t);
        for (std::size_t i = 0; i < t; ++i) {
            double* row = probs_h + i * t;
            const std::size_t valid = causal ? i + 1 : t;
            K().softmax(row, valid);
            for (std::size_t j = valid; j < t; ++j) row[j] = 0.0;
        }
        K().gemm(false, false, t, dh, t, 1.0, probs_h, t, c.v.data.data() + hd * dh, d, 0.0,
                 c.z.data.data() + hd * dh, d);
    }
    linear(c.z, p.wo, p.bo, out);
}

void attn_backward(const AttentionP& p, const AttnCache& c, const Mat& xn, int heads, bool causal,
                   const Mat& dout, Mat& dxn, AttentionP& g) {
    const std::size_t t = xn.rows, d = xn.cols;
    const std::size_t h = static_cast<std::size_t>(heads), dh = d / h;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat dz(t, d), dq(t, d), dk(t, d), dv(t, d), dp(t, t);
    K().gemm(false, true, t, d, d, 1.0, dout.data.data(), d, p.wo.data.data(), d, 0.0, dz.data.data(), d);
    K().gemm(true, false, d, d, t, 1.0, c.z.data.data(), d, dout.data.data(), d, 1.0, g.wo.data.data(), d);
    add_col_sums(dout, g.bo);

    for (std::size_t hd = 0; hd < h; ++hd) {
        const double* probs_h = c.probs.row(hd * t);
        // dP = dZ_h V_h^T ; dV_h = P^T dZ_h
        K().gemm(false, true, t, t, dh, 1.0, dz.data.data() + hd * dh, d, c.v.data.data() + hd * dh,
                 d, 0.0, dp.data.data(), t);
        K().gemm(true, false, t, dh, t, 1.0, probs_h, t, dz.data.data() + hd * dh, d, 0.0,
                 dv.data.data() + hd * dh, d);
        // softmax backward row by row, masked tail stays zero
        for (std::size_t i = 0; i < t; ++i) {
            double* dpi = dp.row(i);
            const double* pi = probs_h + i * t;
            const std::size_t valid = causal ? i + 1 : t;
            const double rowdot = K().dot(dpi, pi, valid);
            for (std::size_t j = 0; j < valid; ++j) dpi[j] = pi[j] * (dpi[j] - rowdot);
            for (std::size_t j = valid; j < t; ++j) dpi[j] = 0.0;
        }
        K().gemm(false, false, t, dh, t, scale, dp.data.data(), t, c.k.data.data() + hd * dh, d, 0.0,
                 dq.data.data() + hd * dh, d);
        K().gemm(true, false, t, dh, t, scale, dp.data.data(), t, c.q.data.data() + hd * dh, d, 0.0,
                 dk.data.data() + hd * dh, d);
    }

    K().gemm(false, true, t, d, d, 1.0, dq.data.data(), d, p.wq.data.data(), d, 1.0, dxn.data.data(), d);
    K().gemm(false, true, t, d, d, 1.0, dk.data.data(), d, p.wk.data.data(), d, 1.0, dxn.data.data(), d);
    K().gemm(false, true, t, d, d, 1.0, dv.data.data(), d, p.wv.data.data(), d, 1.0, dxn.data.data(), d);
    K().gemm(true, false, d, d, t, 1.0, xn.data.data(), d, dq.data.data(), d, 1.0, g.wq.data.data(), d);
    K().gemm(true, false, d, d, t, 1.0, xn.data.data(), d, dk.data.data(), d, 1.0, g.wk.data.data(), d);
    K().gemm(true, false, d, d, t, 1.0, xn.data.data(), d, dv.data.data(), d, 1.0, g.wv.data.data(), d);
    add_col_sums(dq, g.bq);
    add_col_sums(dk, g.bk);
    add_col_sums(dv, g.bv);
}

// ---- feed-forward ----

struct FfnCache {
    Mat h1;   // pre-activation, t x f
    Mat r;    // relu output
};

void ffn_forward(const FfnP& p, const Mat& xn, Mat& out, FfnCache& c) {
    linear(xn, p.w1, p.b1, c.h1);
    c.r = Mat(c.h1.rows, c.h1.cols);
    K().relu(c.h1.data.data(), c.r.data.data(), c.h1.size());
    linear(c.r, p.w2, p.b2, out);
}

void ffn_backward(const FfnP& p, const FfnCache& c, const Mat& xn, const Mat& dout, Mat& dxn, FfnP& g) {
    const std::size_t t = xn.rows, d = xn.cols, f = p.w1.cols;
    Mat dr(t, f), dh1(t, f);
    K().gemm(false, true, t, f, d, 1.0, dout.data.data(), d, p.w2.data.data(), d, 0.0, dr.data.data(), f);
    K().gemm(true, false, f, d, t, 1.0, c.r.data.data(), f, dout.data.data(), d, 1.0, g.w2.data.data(), d);
    add_col_sums(dout, g.b2);
    K().relu_bwd(c.h1.data.data(), dr.data.data(), dh1.data.data(), dh1.size());
    K().gemm(false, true, t, d, f, 1.0, dh1.data.data(), f, p.w1.data.data(), f, 0.0, dxn.data.data(), d);
    K().gemm(true, false, d, f, t, 1.0, xn.data.data(), d, dh1.data.data(), f, 1.0, g.w1.data.data(), f);
    add_col_sums(dh1, g.b1);
}

// ---- transformer block and stack ----

struct BlockCache {
    LnCache ln1c;
    Mat xn1;
    AttnCache attnc;
    LnCache ln2c;
    Mat xn2;
    FfnCache ffnc;
};

struct StackCache {
    std::vector<BlockCache> blocks;
    LnCache finalc;
};

// pre-LN residual blocks, final layer norm; x is transformed in place
void stack_forward(const StackP& sp, Mat& x, int heads, bool causal, StackCache& c) {
    c.blocks.resize(sp.blocks.size());
    Mat tmp;
    for (std::size_t l = 0; l < sp.blocks.size(); ++l) {
        const BlockP& bp = sp.blocks[l];
        BlockCache& bc = c.blocks[l];
        ln_forward(bp.ln1, x, bc.xn1, bc.ln1c);
        attn_forward(bp.attn, bc.xn1, heads, causal, tmp, bc.attnc);
        K().vadd(tmp.data.data(), x.data.data(), x.size());
        ln_forward(bp.ln2, x, bc.xn2, bc.ln2c);
        ffn_forward(bp.ffn, bc.xn2, tmp, bc.ffnc);
        K().vadd(tmp.data.data(), x.data.data(), x.size());
    }
    ln_forward(sp.final_ln, x, x, c.finalc);
}

// dx arrives as the gradient of the stack output and leaves as the gradient
// of the embedded input
void stack_backward(const StackP& sp, const StackCache& c, Mat& dx, int heads, bool causal, StackP& g) {
    Mat dh = dx;
    dx.zero();
    ln_backward(sp.final_ln, c.finalc, dh, dx, g.final_ln);
    Mat dxn(dx.rows, dx.cols);
    for (std::size_t l = sp.blocks.size(); l-- > 0;) {
        const BlockP& bp = sp.blocks[l];
        const BlockCache& bc = c.blocks[l];
        dxn.zero();
        ffn_backward(bp.ffn, bc.ffnc, bc.xn2, dx, dxn, g.blocks[l].ffn);
        ln_backward(bp.ln2, bc.ln2c, dxn, dx, g.blocks[l].ln2);
        dxn.zero();
        attn_backward(bp.attn, bc.attnc, bc.xn1, heads, causal, dx, dxn, g.blocks[l].attn);
        ln_backward(bp.ln1, bc.ln1c, dxn, dx, g.blocks[l].ln1);
    }
}

// ---- embedding builders ----

Mat encoder_input(const TokenSequence& seq, const ModelParams& p) {
    const std::size_t d = static_cast<std::size_t>(p.cfg.embed_dim);
    Mat x(seq.size(), d);
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const double* emb = p.tok_emb.row(static_cast<std::size_t>(seq[i]));
        const double* pe = p.posenc.row(i);
        double* xi = x.row(i);
        for (std::size_t j = 0; j < d; ++j) xi[j] = emb[j] + pe[j];
    }
    return x;
}

// rows: [latent slot, SOS, tokens...]
Mat decoder_input(const std::vector<double>& e_star, const TokenSequence& tokens, const ModelParams& p) {
    const std::size_t d = static_cast<std::size_t>(p.cfg.embed_dim);
    Mat x(tokens.size() + 2, d);
    double* slot = x.row(0);
    std::copy_n(p.b_le.data.data(), d, slot);
    K().gemm(false, false, 1, d, static_cast<std::size_t>(p.cfg.latent_dim), 1.0, e_star.data(),
             e_star.size(), p.w_le.data.data(), d, 1.0, slot, d);
    K().vadd(p.posenc.row(0), slot, d);
    for (std::size_t i = 0; i + 1 < x.rows; ++i) {
        const TokenId tok = i == 0 ? Vocabulary::SOS : tokens[i - 1];
        const double* emb = p.tok_emb.row(static_cast<std::size_t>(tok));
        const double* pe = p.posenc.row(i + 1);
        double* xi = x.row(i + 1);
        for (std::size_t j = 0; j < d; ++j) xi[j] = emb[j] + pe[j];
    }
    return x;
}

TokenSequence strip_trailing_pads(const TokenSequence& seq) {
    std::size_t len = seq.size();
    while (len > 0 && seq[len - 1] == Vocabulary::PAD) --len;
    return TokenSequence(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(len));
}

void check_feature_tokens(const TokenSequence& seq, const ModelParams& p) {
    if (seq.size() > static_cast<std::size_t>(p.cfg.max_len)) {
        throw SequenceTooLongError("encode: sequence length " + std::to_string(seq.size()) +
                                   " exceeds max_len " + std::to_string(p.cfg.max_len));
    }
    for (TokenId t : seq) {
        if (t < Vocabulary::FIRST_FEATURE || t >= p.vocab_size) {
            throw UnknownTokenError("encode: token " + std::to_string(t) + " not a feature token");
        }
    }
}

// ---- evaluator ----
// tanh hidden units: the latent-space search differentiates through this MLP,
// so the gradient field must be smooth

struct EvalCache {
    Mat h1, h2;   // 1 x hidden, post-activation
    double value = 0.0;
};

void evaluator_forward(const EvaluatorP& p, const double* e, std::size_t z, EvalCache& c) {
    const std::size_t h = p.w1.cols;
    Mat ein(1, z);
    std::copy_n(e, z, ein.data.begin());
    linear(ein, p.w1, p.b1, c.h1);
    for (auto& x : c.h1.data) x = std::tanh(x);
    linear(c.h1, p.w2, p.b2, c.h2);
    for (auto& x : c.h2.data) x = std::tanh(x);
    c.value = p.b3.data[0] + K().dot(c.h2.data.data(), p.w3.data.data(), h);
}

// accumulates weight grads (when g != nullptr) and returns d(value)/d(e) scaled by dv
void evaluator_backward(const EvaluatorP& p, const EvalCache& c, const double* e, std::size_t z,
                        double dv, EvaluatorP* g, double* de) {
    const std::size_t h = p.w1.cols;
    Mat dh2(1, h), dh1(1, h);
    if (g) {
        K().axpy(dv, c.h2.data.data(), g->w3.data.data(), h);
        g->b3.data[0] += dv;
    }
    for (std::size_t j = 0; j < h; ++j) {
        dh2.data[j] = dv * p.w3.data[j] * (1.0 - c.h2.data[j] * c.h2.data[j]);
    }
    if (g) {
        K().gemm(true, false, h, h, 1, 1.0, c.h1.data.data(), h, dh2.data.data(), h, 1.0,
                 g->w2.data.data(), h);
        K().vadd(dh2.data.data(), g->b2.data.data(), h);
    }
    K().gemm(false, true, 1, h, h, 1.0, dh2.data.data(), h, p.w2.data.data(), h, 0.0, dh1.data.data(), h);
    for (std::size_t j = 0; j < h; ++j) {
        dh1.data[j] *= 1.0 - c.h1.data[j] * c.h1.data[j];
    }
    if (g) {
        Mat ein(1, z);
        std::copy_n(e, z, ein.data.begin());
        K().gemm(true, false, z, h, 1, 1.0, ein.data.data(), z, dh1.data.data(), h, 1.0,
                 g->w1.data.data(), h);
        K().vadd(dh1.data.data(), g->b1.data.data(), h);
    }
    K().gemm(false, true, 1, z, h, 1.0, dh1.data.data(), h, p.w1.data.data(), h, 0.0, de, z);
}

// ---- encoder/decoder forward passes used by training and inference ----

struct EncoderFwd {
    Mat x;            // stack output (t x d)
    StackCache cache;
    Mat pooled;       // 1 x d
    LatentPoint lp;
};

EncoderFwd encoder_forward(const TokenSequence& seq, const ModelParams& p) {
    EncoderFwd out;
    out.x = encoder_input(seq, p);
    stack_forward(p.encoder, out.x, p.cfg.heads, false, out.cache);

    const std::size_t d = static_cast<std::size_t>(p.cfg.embed_dim);
    out.pooled = Mat(1, d);
    for (std::size_t i = 0; i < out.x.rows; ++i) K().vadd(out.x.row(i), out.pooled.data.data(), d);
    K().scale(1.0 / static_cast<double>(out.x.rows), out.pooled.data.data(), d);

    Mat m, s;
    linear(out.pooled, p.w_m, p.b_m, m);
    out.lp.m = std::move(m.data);
    if (p.cfg.variational) {
        linear(out.pooled, p.w_s, p.b_s, s);
        out.lp.sigma = std::move(s.data);
    }
    return out;
}

struct DecoderFwd {
    Mat x;            // stack output ((q+2) x d)
    StackCache cache;
    Mat logits;       // (q+1) x vocab, positions 1..q+1
    Mat probs;
    double rec_loss = 0.0;
};

DecoderFwd decoder_forward(const std::vector<double>& e_star, const TokenSequence& tokens,
                           const ModelParams& p, bool with_loss) {
    DecoderFwd out;
    out.x = decoder_input(e_star, tokens, p);
    stack_forward(p.decoder, out.x, p.cfg.heads, true, out.cache);

    const std::size_t v = static_cast<std::size_t>(p.vocab_size);
    const std::size_t steps = tokens.size() + 1;
    out.logits = Mat(steps, v);
    for (std::size_t s = 0; s < steps; ++s) {
        std::copy_n(p.b_out.data.data(), v, out.logits.row(s));
    }
    K().gemm(false, false, steps, v, static_cast<std::size_t>(p.cfg.embed_dim), 1.0, out.x.row(1),
             out.x.cols, p.w_out.data.data(), v, 1.0, out.logits.data.data(), v);

    if (with_loss) {
        out.probs = out.logits;
        for (std::size_t s = 0; s < steps; ++s) {
            double* row = out.probs.row(s);
            K().softmax(row, v);
            const TokenId target = s < tokens.size() ? tokens[s] : Vocabulary::EOS;
            out.rec_loss -= std::log(std::max(row[static_cast<std::size_t>(target)], 1e-300));
        }
    }
    return out;
}

double kl_term(double m, double s, KlForm form) {
    if (form == KlForm::paper) return std::exp(s) - (1.0 + s) + m * m;
    return 0.5 * (std::exp(2.0 * s) - 1.0 - 2.0 * s + m * m);
}

// ---- init ----

void fill_xavier(Mat& w, Rng& rng) {
    const double s = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
    for (auto& x : w.data) x = rng.uniform(-s, s);
}

Mat make_posenc(int rows, int d) {
    Mat pe(static_cast<std::size_t>(rows), static_cast<std::size_t>(d));
    for (int pos = 0; pos < rows; ++pos) {
        for (int j = 0; j < d; j += 2) {
            const double angle = static_cast<double>(pos) /
                                 std::pow(10000.0, static_cast<double>(j) / static_cast<double>(d));
            pe.at(static_cast<std::size_t>(pos), static_cast<std::size_t>(j)) = std::sin(angle);
            if (j + 1 < d) {
                pe.at(static_cast<std::size_t>(pos), static_cast<std::size_t>(j + 1)) = std::cos(angle);
            }
        }
    }
    return pe;
}

ModelParams make_params(const ModelConfig& cfg, int vocab_size) {
    cfg.validate();
    if (vocab_size < 4) throw ConfigError("model: vocab must include at least one feature token");
    if (cfg.max_len <= 0) throw ConfigError("model: max_len must be resolved before building params");

    const auto d = static_cast<std::size_t>(cfg.embed_dim);
    const auto f = static_cast<std::size_t>(cfg.ff_dim);
    const auto z = static_cast<std::size_t>(cfg.latent_dim);
    const auto h = static_cast<std::size_t>(cfg.eval_hidden);
    const auto v = static_cast<std::size_t>(vocab_size);

    ModelParams p;
    p.cfg = cfg;
    p.vocab_size = vocab_size;
    p.tok_emb = Mat(v, d);
    auto make_stack = [&](StackP& sp) {
        sp.blocks.resize(static_cast<std::size_t>(cfg.layers));
        for (auto& b : sp.blocks) {
            b.ln1 = {Mat(1, d), Mat(1, d)};
            b.attn = {Mat(d, d), Mat(1, d), Mat(d, d), Mat(1, d),
                      Mat(d, d), Mat(1, d), Mat(d, d), Mat(1, d)};
            b.ln2 = {Mat(1, d), Mat(1, d)};
            b.ffn = {Mat(d, f), Mat(1, f), Mat(f, d), Mat(1, d)};
        }
        sp.final_ln = {Mat(1, d), Mat(1, d)};
    };
    make_stack(p.encoder);
    make_stack(p.decoder);
    p.w_m = Mat(d, z);
    p.b_m = Mat(1, z);
    if (cfg.variational) {
        p.w_s = Mat(d, z);
        p.b_s = Mat(1, z);
    }
    p.w_le = Mat(z, d);
    p.b_le = Mat(1, d);
    p.w_out = Mat(d, v);
    p.b_out = Mat(1, v);
    p.evaluator = {Mat(z, h), Mat(1, h), Mat(h, h), Mat(1, h), Mat(h, 1), Mat(1, 1)};
    p.posenc = make_posenc(cfg.max_len + 2, cfg.embed_dim);
    return p;
}

std::vector<Mat*> tensor_list(ModelParams& p) {
    std::vector<Mat*> out;
    p.visit([&](const std::string&, Mat& m) { out.push_back(&m); });
    return out;
}

} // namespace

void ModelConfig::validate() const {
    if (embed_dim <= 0 || layers <= 0 || heads <= 0 || ff_dim <= 0 || latent_dim <= 0 ||
        eval_hidden <= 0) {
        throw ConfigError("model: all dimensions must be positive");
    }
    if (embed_dim % heads != 0) throw ConfigError("model: heads must divide embed_dim");
}

void TrainConfig::validate() const {
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) throw ConfigError("train: loss weights must be >= 0");
    if (batch_size == 0 || epochs <= 0) throw ConfigError("train: batch size and epochs must be positive");
    if (lr <= 0.0) throw ConfigError("train: learning rate must be positive");
}

void ModelParams::visit(const std::function<void(const std::string&, Mat&)>& fn) {
    fn("tok_emb", tok_emb);
    auto visit_stack = [&](const std::string& prefix, StackP& sp) {
        for (std::size_t l = 0; l < sp.blocks.size(); ++l) {
            const std::string b = prefix + ".block" + std::to_string(l);
            BlockP& bl = sp.blocks[l];
            fn(b + ".ln1.gamma", bl.ln1.gamma);
            fn(b + ".ln1.beta", bl.ln1.beta);
            fn(b + ".attn.wq", bl.attn.wq);
            fn(b + ".attn.bq", bl.attn.bq);
            fn(b + ".attn.wk", bl.attn.wk);
            fn(b + ".attn.bk", bl.attn.bk);
            fn(b + ".attn.wv", bl.attn.wv);
            fn(b + ".attn.bv", bl.attn.bv);
            fn(b + ".attn.wo", bl.attn.wo);
            fn(b + ".attn.bo", bl.attn.bo);
            fn(b + ".ln2.gamma", bl.ln2.gamma);
            fn(b + ".ln2.beta", bl.ln2.beta);
            fn(b + ".ffn.w1", bl.ffn.w1);
            fn(b + ".ffn.b1", bl.ffn.b1);
            fn(b + ".ffn.w2", bl.ffn.w2);
            fn(b + ".ffn.b2", bl.ffn.b2);
        }
        fn(prefix + ".final_ln.gamma", sp.final_ln.gamma);
        fn(prefix + ".final_ln.beta", sp.final_ln.beta);
    };
    visit_stack("encoder", encoder);
    visit_stack("decoder", decoder);
    fn("w_m", w_m);
    fn("b_m", b_m);
    if (cfg.variational) {
        fn("w_s", w_s);
        fn("b_s", b_s);
    }
    fn("w_le", w_le);
    fn("b_le", b_le);
    fn("w_out", w_out);
    fn("b_out", b_out);
    fn("eval.w1", evaluator.w1);
    fn("eval.b1", evaluator.b1);
    fn("eval.w2", evaluator.w2);
    fn("eval.b2", evaluator.b2);
    fn("eval.w3", evaluator.w3);
    fn("eval.b3", evaluator.b3);
}

ModelParams init_params(const ModelConfig& cfg, int vocab_size, std::uint64_t seed) {
    ModelParams p = make_params(cfg, vocab_size);
    Rng rng(derive_seed(seed, 0x5EED));
    p.visit([&](const std::string& name, Mat& m) {
        if (name == "tok_emb") {
            for (auto& x : m.data) x = 0.1 * rng.normal();
        } else if (name.ends_with("gamma")) {
            std::fill(m.data.begin(), m.data.end(), 1.0);
        } else if (name.ends_with("beta") || m.rows == 1) {
            m.zero();   // biases
        } else {
            fill_xavier(m, rng);
        }
    });
    return p;
}

LatentPoint encode(const TokenSequence& raw, const ModelParams& params) {
    const TokenSequence seq = strip_trailing_pads(raw);
    if (seq.empty()) throw UnknownTokenError("encode: empty sequence");
    check_feature_tokens(seq, params);
    EncoderFwd fwd = encoder_forward(seq, params);
    return std::move(fwd.lp);
}

std::vector<double> reparameterize(const LatentPoint& lp, const std::vector<double>& eps) {
    std::vector<double> e = lp.m;
    if (lp.sigma.empty()) return e;
    if (!eps.empty()) {
        for (std::size_t i = 0; i < e.size(); ++i) e[i] += eps[i] * std::exp(lp.sigma[i]);
    }
    return e;
}

std::vector<double> decode_logits(const std::vector<double>& e_star, const TokenSequence& prefix,
                                  const ModelParams& params) {
    if (prefix.empty() || prefix[0] != Vocabulary::SOS) {
        throw UnknownTokenError("decode_logits: prefix must begin with SOS");
    }
    const TokenSequence tokens(prefix.begin() + 1, prefix.end());
    if (tokens.size() > static_cast<std::size_t>(params.cfg.max_len)) {
        throw SequenceTooLongError("decode_logits: prefix exceeds max_len");
    }
    DecoderFwd fwd = decoder_forward(e_star, tokens, params, false);
    const std::size_t last = fwd.logits.rows - 1;
    return std::vector<double>(fwd.logits.row(last), fwd.logits.row(last) + fwd.logits.cols);
}

double reconstruction_loss(const std::vector<double>& e_star, const TokenSequence& raw,
                           const ModelParams& params) {
    const TokenSequence seq = strip_trailing_pads(raw);
    check_feature_tokens(seq, params);
    return decoder_forward(e_star, seq, params, true).rec_loss;
}

double evaluator_value(const ModelParams& params, const std::vector<double>& e) {
    EvalCache c;
    evaluator_forward(params.evaluator, e.data(), e.size(), c);
    return c.value;
}

std::vector<double> evaluator_input_grad(const ModelParams& params, const std::vector<double>& e) {
    EvalCache c;
    evaluator_forward(params.evaluator, e.data(), e.size(), c);
    std::vector<double> de(e.size(), 0.0);
    evaluator_backward(params.evaluator, c, e.data(), e.size(), 1.0, nullptr, de.data());
    return de;
}

double evaluator_loss(const std::vector<double>& e_star, double v, const ModelParams& params) {
    const double diff = v - evaluator_value(params, e_star);
    return diff * diff;
}

double kl_loss(const LatentPoint& lp, const ModelConfig& cfg) {
    if (!cfg.variational || lp.sigma.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < lp.m.size(); ++i) acc += kl_term(lp.m[i], lp.sigma[i], cfg.kl_form);
    return acc;
}

double joint_loss(double rec, double evt, double kl, const TrainConfig& cfg) {
    return cfg.alpha * rec + cfg.beta * evt + cfg.gamma * kl;
}

// ---- full example forward/backward ----

namespace {

// Accumulates scale * d(alpha*rec + beta*evt + gamma*kl)/d(theta) into grads.
ExampleLosses example_forward_backward(const ModelParams& p, const TokenSequence& seq, double v,
                                       const std::vector<double>& eps, const TrainConfig& tc,
                                       double scale, ModelParams* grads) {
    const std::size_t d = static_cast<std::size_t>(p.cfg.embed_dim);
    const std::size_t z = static_cast<std::size_t>(p.cfg.latent_dim);
    const bool var = p.cfg.variational;

    EncoderFwd enc = encoder_forward(seq, p);
    std::vector<double> e_star = reparameterize(enc.lp, var ? eps : std::vector<double>{});

    DecoderFwd dec = decoder_forward(e_star, seq, p, true);

    EvalCache evc;
    evaluator_forward(p.evaluator, e_star.data(), z, evc);
    const double evt_diff = evc.value - v;

    ExampleLosses losses;
    losses.rec = dec.rec_loss;
    losses.evt = evt_diff * evt_diff;
    losses.kl = kl_loss(enc.lp, p.cfg);
    if (!grads) return losses;
    ModelParams& g = *grads;

    // --- decoder side ---
    const std::size_t steps = seq.size() + 1;
    const std::size_t vsz = static_cast<std::size_t>(p.vocab_size);
    Mat dlogits = dec.probs;
    K().scale(tc.alpha * scale, dlogits.data.data(), dlogits.size());
    for (std::size_t s = 0; s < steps; ++s) {
        const TokenId target = s < seq.size() ? seq[s] : Vocabulary::EOS;
        dlogits.at(s, static_cast<std::size_t>(target)) -= tc.alpha * scale;
    }

    Mat dx_dec(dec.x.rows, d);
    K().gemm(false, true, steps, d, vsz, 1.0, dlogits.data.data(), vsz, p.w_out.data.data(), vsz,
             0.0, dx_dec.row(1), d);
    K().gemm(true, false, d, vsz, steps, 1.0, dec.x.row(1), d, dlogits.data.data(), vsz, 1.0,
             g.w_out.data.data(), vsz);
    add_col_sums(dlogits, g.b_out);

    stack_backward(p.decoder, dec.cache, dx_dec, p.cfg.heads, true, g.decoder);

    // token rows feed the shared embedding; row 0 feeds the latent projection
    for (std::size_t i = 1; i < dx_dec.rows; ++i) {
        const TokenId tok = i == 1 ? Vocabulary::SOS : seq[i - 2];
        K().vadd(dx_dec.row(i), g.tok_emb.row(static_cast<std::size_t>(tok)), d);
    }
    std::vector<double> de(z, 0.0);
    K().gemm(false, true, 1, z, d, 1.0, dx_dec.row(0), d, p.w_le.data.data(), d, 0.0, de.data(), z);
    K().gemm(true, false, z, d, 1, 1.0, e_star.data(), z, dx_dec.row(0), d, 1.0, g.w_le.data.data(), d);
    K().vadd(dx_dec.row(0), g.b_le.data.data(), d);

    // --- evaluator side ---
    const double dv = tc.beta * scale * 2.0 * evt_diff;
    std::vector<double> de_eval(z, 0.0);
    evaluator_backward(p.evaluator, evc, e_star.data(), z, dv, &g.evaluator, de_eval.data());
    K().vadd(de_eval.data(), de.data(), z);

    // --- latent and KL ---
    std::vector<double> dm = de;
    std::vector<double> dsigma;
    if (var) {
        dsigma.assign(z, 0.0);
        for (std::size_t i = 0; i < z; ++i) {
            dsigma[i] = de[i] * eps[i] * std::exp(enc.lp.sigma[i]);
        }
        const double kw = tc.gamma * scale;
        for (std::size_t i = 0; i < z; ++i) {
            if (p.cfg.kl_form == KlForm::paper) {
                dm[i] += kw * 2.0 * enc.lp.m[i];
                dsigma[i] += kw * (std::exp(enc.lp.sigma[i]) - 1.0);
            } else {
                dm[i] += kw * enc.lp.m[i];
                dsigma[i] += kw * (std::exp(2.0 * enc.lp.sigma[i]) - 1.0);
            }
        }
    }

    // --- encoder side ---
    Mat dpooled(1, d);
    K().gemm(false, true, 1, d, z, 1.0, dm.data(), z, p.w_m.data.data(), z, 0.0, dpooled.data.data(), d);
    K().gemm(true, false, d, z, 1, 1.0, enc.pooled.data.data(), d, dm.data(), z, 1.0, g.w_m.data.data(), z);
    K().vadd(dm.data(), g.b_m.data.data(), z);
    if (var) {
        K().gemm(false, true, 1, d, z, 1.0, dsigma.data(), z, p.w_s.data.data(), z, 1.0,
                 dpooled.data.data(), d);
        K().gemm(true, false, d, z, 1, 1.0, enc.pooled.data.data(), d, dsigma.data(), z, 1.0,
                 g.w_s.data.data(), z);
        K().vadd(dsigma.data(), g.b_s.data.data(), z);
    }

    Mat dx_enc(enc.x.rows, d);
    const double inv_len = 1.0 / static_cast<double>(enc.x.rows);
    for (std::size_t i = 0; i < dx_enc.rows; ++i) {
        K().axpy(inv_len, dpooled.data.data(), dx_enc.row(i), d);
    }
    stack_backward(p.encoder, enc.cache, dx_enc, p.cfg.heads, false, g.encoder);
    for (std::size_t i = 0; i < dx_enc.rows; ++i) {
        K().vadd(dx_enc.row(i), g.tok_emb.row(static_cast<std::size_t>(seq[i])), d);
    }
    return losses;
}

} // namespace

ExampleLosses example_gradients(const ModelParams& params, const TokenSequence& raw, double v,
                                const std::vector<double>& eps, const TrainConfig& weights,
                                double scale, ModelParams* grads) {
    const TokenSequence seq = strip_trailing_pads(raw);
    if (seq.empty()) throw UnknownTokenError("example_gradients: empty sequence");
    check_feature_tokens(seq, params);
    return example_forward_backward(params, seq, v, eps, weights, scale, grads);
}

ModelParams zero_params_like(const ModelParams& params) {
    return make_params(params.cfg, params.vocab_size);
}

ModelParams train(const std::vector<SubsetRecord>& records, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, int vocab_size, std::vector<EpochStats>* curve) {
    train_cfg.validate();
    if (records.empty()) throw ConfigError("train: no records");

    ModelConfig cfg = model_cfg;
    if (cfg.max_len == 0) cfg.max_len = (vocab_size - 3) + 2;
    ModelParams params = init_params(cfg, vocab_size, train_cfg.seed);
    for (const auto& rec : records) {
        const TokenSequence seq = strip_trailing_pads(rec.sequence);
        if (seq.empty()) throw UnknownTokenError("train: record with empty sequence");
        check_feature_tokens(seq, params);
    }

    ModelParams adam_m = make_params(cfg, vocab_size);
    ModelParams adam_v = make_params(cfg, vocab_size);
    const std::vector<Mat*> p_list = tensor_list(params);
    const std::vector<Mat*> m_list = tensor_list(adam_m);
    const std::vector<Mat*> v_list = tensor_list(adam_v);

    const std::size_t n = records.size();
    const std::size_t batch = std::min<std::size_t>(train_cfg.batch_size, n);
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    const std::size_t n_threads =
        std::max<std::size_t>(1, std::min<std::size_t>(train_cfg.threads > 0
                                                           ? static_cast<std::size_t>(train_cfg.threads)
                                                           : hw,
                                                       batch));

    std::vector<ModelParams> thread_grads;
    thread_grads.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) thread_grads.push_back(make_params(cfg, vocab_size));
    std::vector<std::vector<Mat*>> g_lists;
    for (auto& tg : thread_grads) g_lists.push_back(tensor_list(tg));

    Rng order_rng(derive_seed(train_cfg.seed, 0x0BDE));
    Rng eps_rng(derive_seed(train_cfg.seed, 0xE952));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    const std::size_t z = static_cast<std::size_t>(cfg.latent_dim);
    int adam_step_no = 0;

    for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        EpochStats stats{epoch, 0.0, 0.0, 0.0, 0.0};

        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t bsz = std::min(batch, n - start);
            Mat eps(bsz, z);
            if (cfg.variational) {
                for (auto& x : eps.data) x = eps_rng.normal();
            }

            for (auto& gl : g_lists) {
                for (Mat* g : gl) g->zero();
            }

            std::vector<double> rec_l(bsz), evt_l(bsz), kl_l(bsz);
            const double scale = 1.0 / static_cast<double>(bsz);
            auto worker = [&](std::size_t tid) {
                const std::size_t chunk = (bsz + n_threads - 1) / n_threads;
                const std::size_t lo = tid * chunk;
                const std::size_t hi = std::min(bsz, lo + chunk);
                for (std::size_t b = lo; b < hi; ++b) {
                    const SubsetRecord& rec = records[order[start + b]];
                    const TokenSequence seq = strip_trailing_pads(rec.sequence);
                    std::vector<double> e(eps.row(b), eps.row(b) + z);
                    const ExampleLosses l = example_forward_backward(
                        params, seq, rec.utility, e, train_cfg, scale, &thread_grads[tid]);
                    rec_l[b] = l.rec;
                    evt_l[b] = l.evt;
                    kl_l[b] = l.kl;
                }
            };
            if (n_threads == 1) {
                worker(0);
            } else {
                std::vector<std::thread> pool;
                for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker, t);
                for (auto& th : pool) th.join();
            }

            // deterministic reduction: thread-order sum into buffer 0
            for (std::size_t t = 1; t < n_threads; ++t) {
                for (std::size_t i = 0; i < g_lists[0].size(); ++i) {
                    K().vadd(g_lists[t][i]->data.data(), g_lists[0][i]->data.data(),
                             g_lists[0][i]->size());
                }
            }

            ++adam_step_no;
            const double c1 = 1.0 / (1.0 - std::pow(kAdamB1, adam_step_no));
            const double c2 = 1.0 / (1.0 - std::pow(kAdamB2, adam_step_no));
            for (std::size_t i = 0; i < p_list.size(); ++i) {
                K().adam_step(p_list[i]->data.data(), m_list[i]->data.data(), v_list[i]->data.data(),
                              g_lists[0][i]->data.data(), p_list[i]->size(), train_cfg.lr, kAdamB1,
                              kAdamB2, kAdamEps, c1, c2);
            }
            for (const Mat* pm : p_list) {
                if (!pm->all_finite()) {
                    throw NaNLossError("train: non-finite parameters at epoch " +
                                       std::to_string(epoch) + ", batch " +
                                       std::to_string(start / batch));
                }
            }

            for (std::size_t b = 0; b < bsz; ++b) {
                stats.rec += rec_l[b];
                stats.evt += evt_l[b];
                stats.kl += kl_l[b];
            }
        }

        const double inv_n = 1.0 / static_cast<double>(n);
        stats.rec *= inv_n;
        stats.evt *= inv_n;
        stats.kl *= inv_n;
        stats.joint = joint_loss(stats.rec, stats.evt, stats.kl, train_cfg);
        if (curve) curve->push_back(stats);
    }
    return params;
}

double teacher_forced_accuracy(const std::vector<SubsetRecord>& records, const ModelParams& params) {
    std::size_t correct = 0, total = 0;
    for (const auto& rec : records) {
        const TokenSequence seq = strip_trailing_pads(rec.sequence);
        check_feature_tokens(seq, params);
        EncoderFwd enc = encoder_forward(seq, params);
        const std::vector<double> e = enc.lp.m;
        DecoderFwd dec = decoder_forward(e, seq, params, false);
        for (std::size_t s = 0; s < dec.logits.rows; ++s) {
            const double* row = dec.logits.row(s);
            std::size_t best = 0;
            for (std::size_t j = 1; j < dec.logits.cols; ++j) {
                if (row[j] > row[best]) best = j;
            }
            const TokenId target = s < seq.size() ? seq[s] : Vocabulary::EOS;
            correct += best == static_cast<std::size_t>(target) ? 1 : 0;
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

// ---- checkpoint ----

namespace {
constexpr char kMagic[] = "GENSELCKPT1\n";
}

void save_checkpoint(const ModelParams& params, const TrainConfig& train_cfg, const std::string& path) {
    nlohmann::json header;
    header["model"] = {
        {"embed_dim", params.cfg.embed_dim},     {"layers", params.cfg.layers},
        {"heads", params.cfg.heads},             {"ff_dim", params.cfg.ff_dim},
        {"latent_dim", params.cfg.latent_dim},   {"eval_hidden", params.cfg.eval_hidden},
        {"max_len", params.cfg.max_len},         {"variational", params.cfg.variational},
        {"kl_form", params.cfg.kl_form == KlForm::paper ? "paper" : "standard"},
    };
    header["train"] = {
        {"alpha", train_cfg.alpha}, {"beta", train_cfg.beta},   {"gamma", train_cfg.gamma},
        {"batch_size", train_cfg.batch_size}, {"epochs", train_cfg.epochs}, {"lr", train_cfg.lr},
        {"seed", train_cfg.seed},
    };
    header["vocab_size"] = params.vocab_size;
    nlohmann::json tensors = nlohmann::json::array();
    auto& mutable_params = const_cast<ModelParams&>(params);
    mutable_params.visit([&](const std::string& name, Mat& m) {
        tensors.push_back({{"name", name}, {"rows", m.rows}, {"cols", m.cols}});
    });
    header["tensors"] = tensors;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint: " + path);
    const std::string hdr = header.dump();
    const std::uint64_t hlen = hdr.size();
    out.write(kMagic, sizeof(kMagic) - 1);
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    mutable_params.visit([&](const std::string&, Mat& m) {
        out.write(reinterpret_cast<const char*>(m.data.data()),
                  static_cast<std::streamsize>(m.size() * sizeof(double)));
    });
    if (!out) throw CheckpointError("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    char magic[sizeof(kMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw CheckpointError("bad checkpoint magic: " + path);
    }
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in || hlen > (1u << 20)) throw CheckpointError("bad checkpoint header length");
    std::string hdr(hlen, '\0');
    in.read(hdr.data(), static_cast<std::streamsize>(hlen));
    nlohmann::json header = nlohmann::json::parse(hdr, nullptr, false);
    if (header.is_discarded()) throw CheckpointError("unparsable checkpoint header");

    Checkpoint ckpt;
    const auto& jm = header.at("model");
    ModelConfig cfg;
    cfg.embed_dim = jm.at("embed_dim").get<int>();
    cfg.layers = jm.at("layers").get<int>();
    cfg.heads = jm.at("heads").get<int>();
    cfg.ff_dim = jm.at("ff_dim").get<int>();
    cfg.latent_dim = jm.at("latent_dim").get<int>();
    cfg.eval_hidden = jm.at("eval_hidden").get<int>();
    cfg.max_len = jm.at("max_len").get<int>();
    cfg.variational = jm.at("variational").get<bool>();
    cfg.kl_form = jm.at("kl_form").get<std::string>() == "standard" ? KlForm::standard : KlForm::paper;

    const auto& jt = header.at("train");
    ckpt.train_cfg.alpha = jt.at("alpha").get<double>();
    ckpt.train_cfg.beta = jt.at("beta").get<double>();
    ckpt.train_cfg.gamma = jt.at("gamma").get<double>();
    ckpt.train_cfg.batch_size = jt.at("batch_size").get<std::size_t>();
    ckpt.train_cfg.epochs = jt.at("epochs").get<int>();
    ckpt.train_cfg.lr = jt.at("lr").get<double>();
    ckpt.train_cfg.seed = jt.at("seed").get<std::uint64_t>();

    ckpt.params = make_params(cfg, header.at("vocab_size").get<int>());
    std::size_t idx = 0;
    const auto& tensors = header.at("tensors");
    ckpt.params.visit([&](const std::string& name, Mat& m) {
        if (idx >= tensors.size()) throw CheckpointError("checkpoint tensor list too short");
        const auto& t = tensors[idx++];
        if (t.at("name").get<std::string>() != name || t.at("rows").get<std::size_t>() != m.rows ||
            t.at("cols").get<std::size_t>() != m.cols) {
            throw CheckpointError("checkpoint tensor mismatch at " + name);
        }
        in.read(reinterpret_cast<char*>(m.data.data()),
                static_cast<std::streamsize>(m.size() * sizeof(double)));
    });
    if (idx != tensors.size() || !in) throw CheckpointError("checkpoint truncated: " + path);
    return ckpt;
}

} // namespace gensel
