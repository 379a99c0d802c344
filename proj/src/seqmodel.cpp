#include "miditex/seqmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "miditex/errors.hpp"
#include "miditex/json_io.hpp"
#include "miditex/rng.hpp"

namespace miditex {

using nlohmann::json;

void ModelConfig::check() const {
    if (embed_dim <= 0 || encoder_layers <= 0 || decoder_layers <= 0 || heads <= 0 ||
        latent_dim <= 0 || condition_embed_dim <= 0 || context_length <= 0 || vocab_size <= 0)
        fail(ErrorKind::BadRequest, "model config fields must be positive");
    if (embed_dim % heads != 0)
        fail(ErrorKind::BadRequest, "embed_dim must be divisible by the head count");
    if (condition_embed_dim % 2 != 0)
        fail(ErrorKind::BadRequest, "condition_embed_dim must be even (two attributes)");
    if (beta < 0 || free_bits < 0)
        fail(ErrorKind::BadRequest, "beta and free_bits must be non-negative");
}

SeqExample make_example(const TokenSequence& seq, const TextureProfile& profile,
                        const Vocabulary& vocab) {
    SeqExample ex;
    ex.ids.reserve(seq.tokens.size());
    for (const auto& t : seq.tokens) ex.ids.push_back(vocab.id_of(t));

    int bars = 0;
    for (const auto& t : seq.tokens)
        if (t.kind == TokenKind::Bar) ++bars;
    if (bars == 0) fail(ErrorKind::BadRequest, "sequence has no bars");

    ex.bar_of_pos.assign(seq.tokens.size(), 0);
    ex.bar_spans.assign(bars, {0, 0});
    int bar = -1;
    for (size_t p = 0; p < seq.tokens.size(); ++p) {
        const Token& t = seq.tokens[p];
        if (t.kind == TokenKind::Bar) {
            if (bar >= 0) ex.bar_spans[bar].second = static_cast<int>(p);
            ++bar;
            ex.bar_spans[bar].first = static_cast<int>(p);
        }
        if (t.kind == TokenKind::EOS && bar >= 0) ex.bar_spans[bar].second = static_cast<int>(p);
        ex.bar_of_pos[p] = std::max(bar, 0);
    }
    if (ex.bar_spans[bars - 1].second == 0) // no EOS: the bar runs to the end
        ex.bar_spans[bars - 1].second = static_cast<int>(seq.tokens.size());

    if (static_cast<int>(profile.bars.size()) < bars)
        fail(ErrorKind::IncompleteProfile, "profile covers fewer bars than the token sequence");
    for (int b = 0; b < bars; ++b) {
        int rc = profile.bars[b].rhythmicity_class;
        int pc = profile.bars[b].polyphonicity_class;
        if (rc < 1 || pc < 1)
            fail(ErrorKind::IncompleteProfile,
                 "bar " + std::to_string(b) + " lacks bar-level classes; fit or load a bin table");
        ex.bar_classes.emplace_back(rc, pc);
    }
    return ex;
}

namespace {

constexpr double kLnEps = 1e-5;

Mat gather_rows(const Mat& table, const std::vector<int>& ids, int begin, int end) {
    Mat out(end - begin, table.cols);
    for (int i = begin; i < end; ++i)
        std::memcpy(out.row(i - begin), table.row(ids[i]), sizeof(double) * table.cols);
    return out;
}

void scatter_rows_add(Mat& grad, const std::vector<int>& ids, int begin, int end, const Mat& d) {
    for (int i = begin; i < end; ++i) {
        double* g = grad.row(ids[i]);
        const double* src = d.row(i - begin);
        for (int c = 0; c < grad.cols; ++c) g[c] += src[c];
    }
}

void add_table_rows(Mat& x, const Mat& table, int first_row) {
    for (int r = 0; r < x.rows; ++r) {
        const double* t = table.row(first_row + r);
        double* xr = x.row(r);
        for (int c = 0; c < x.cols; ++c) xr[c] += t[c];
    }
}

void add_bias(Mat& x, const Mat& b) {
    for (int r = 0; r < x.rows; ++r) {
        double* xr = x.row(r);
        for (int c = 0; c < x.cols; ++c) xr[c] += b.v[c];
    }
}

void add_colsum(Mat& acc, const Mat& d) {
    for (int r = 0; r < d.rows; ++r) {
        const double* dr = d.row(r);
        for (int c = 0; c < d.cols; ++c) acc.v[c] += dr[c];
    }
}

void add_inplace(Mat& x, const Mat& y) {
    for (size_t i = 0; i < x.v.size(); ++i) x.v[i] += y.v[i];
}

struct LnCache {
    Mat xhat;
    std::vector<double> rstd;
};

Mat ln_forward(const Mat& x, const Mat& gamma, const Mat& beta, LnCache& cache) {
    Mat out(x.rows, x.cols);
    cache.xhat = Mat(x.rows, x.cols);
    cache.rstd.resize(x.rows);
    for (int r = 0; r < x.rows; ++r) {
        const double* xr = x.row(r);
        double mean = 0.0;
        for (int c = 0; c < x.cols; ++c) mean += xr[c];
        mean /= x.cols;
        double var = 0.0;
        for (int c = 0; c < x.cols; ++c) {
            double d = xr[c] - mean;
            var += d * d;
        }
        var /= x.cols;
        double rstd = 1.0 / std::sqrt(var + kLnEps);
        cache.rstd[r] = rstd;
        double* xh = cache.xhat.row(r);
        double* o = out.row(r);
        for (int c = 0; c < x.cols; ++c) {
            xh[c] = (xr[c] - mean) * rstd;
            o[c] = xh[c] * gamma.v[c] + beta.v[c];
        }
    }
    return out;
}

Mat ln_backward(const LnCache& cache, const Mat& gamma, const Mat& dy, Mat& dgamma, Mat& dbeta) {
    Mat dx(dy.rows, dy.cols);
    int n = dy.cols;
    for (int r = 0; r < dy.rows; ++r) {
        const double* dyr = dy.row(r);
        const double* xh = cache.xhat.row(r);
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int c = 0; c < n; ++c) {
            dgamma.v[c] += dyr[c] * xh[c];
            dbeta.v[c] += dyr[c];
            double dxhat = dyr[c] * gamma.v[c];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xh[c];
        }
        double rstd = cache.rstd[r];
        double* dxr = dx.row(r);
        for (int c = 0; c < n; ++c) {
            double dxhat = dyr[c] * gamma.v[c];
            dxr[c] = rstd * (dxhat - sum_dxhat / n - xh[c] * sum_dxhat_xhat / n);
        }
    }
    return dx;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double gelu_grad(double x) {
    double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

Mat slice_cols(const Mat& x, int c0, int n) {
    Mat out(x.rows, n);
    for (int r = 0; r < x.rows; ++r)
        std::memcpy(out.row(r), x.row(r) + c0, sizeof(double) * n);
    return out;
}

void place_cols(Mat& x, const Mat& src, int c0) {
    for (int r = 0; r < x.rows; ++r)
        std::memcpy(x.row(r) + c0, src.row(r), sizeof(double) * src.cols);
}

void place_cols_add(Mat& x, const Mat& src, int c0) {
    for (int r = 0; r < x.rows; ++r) {
        double* xr = x.row(r) + c0;
        const double* s = src.row(r);
        for (int c = 0; c < src.cols; ++c) xr[c] += s[c];
    }
}

struct LayerCache {
    Mat x, a, q, k, v, o, x2, b, f1, g;
    LnCache ln1, ln2;
    std::vector<Mat> p; // attention rows per head
};

Mat layer_forward(const TransformerLayerParams& lp, const Mat& x, bool causal, LayerCache& cache) {
    int d = x.cols;
    cache.x = x;
    Mat a = ln_forward(x, lp.ln1_g.w, lp.ln1_b.w, cache.ln1);
    cache.a = a;
    Mat q = kernels::matmul(a, lp.wq.w);
    add_bias(q, lp.bq.w);
    Mat k = kernels::matmul(a, lp.wk.w);
    add_bias(k, lp.bk.w);
    Mat v = kernels::matmul(a, lp.wv.w);
    add_bias(v, lp.bv.w);
    cache.q = q;
    cache.k = k;
    cache.v = v;

    int heads = static_cast<int>(lp.heads);
    int dh = d / heads;
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat o(x.rows, d);
    cache.p.clear();
    for (int h = 0; h < heads; ++h) {
        Mat qh = slice_cols(q, h * dh, dh);
        Mat kh = slice_cols(k, h * dh, dh);
        Mat vh = slice_cols(v, h * dh, dh);
        Mat s = kernels::matmul_nt(qh, kh);
        for (auto& e : s.v) e *= scale;
        kernels::softmax_rows(s, causal ? 0 : -1);
        Mat oh = kernels::matmul(s, vh);
        place_cols(o, oh, h * dh);
        cache.p.push_back(std::move(s));
    }
    cache.o = o;
    Mat ao = kernels::matmul(o, lp.wo.w);
    add_bias(ao, lp.bo.w);

    Mat x2 = x;
    add_inplace(x2, ao);
    cache.x2 = x2;

    Mat b = ln_forward(x2, lp.ln2_g.w, lp.ln2_b.w, cache.ln2);
    cache.b = b;
    Mat f1 = kernels::matmul(b, lp.w1.w);
    add_bias(f1, lp.b1.w);
    cache.f1 = f1;
    Mat g(f1.rows, f1.cols);
    for (size_t i = 0; i < f1.v.size(); ++i) g.v[i] = gelu(f1.v[i]);
    cache.g = g;
    Mat f2 = kernels::matmul(g, lp.w2.w);
    add_bias(f2, lp.b2.w);

    Mat y = x2;
    add_inplace(y, f2);
    return y;
}

Mat layer_backward(TransformerLayerParams& lp, const LayerCache& cache, const Mat& dy, bool causal) {
    int d = dy.cols;
    int heads = static_cast<int>(lp.heads);
    int dh = d / heads;
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // y = x2 + f2
    Mat dx2 = dy;
    const Mat& df2 = dy;
    Mat dg = kernels::matmul_nt(df2, lp.w2.w);
    add_inplace(lp.w2.g, kernels::matmul_tn(cache.g, df2));
    add_colsum(lp.b2.g, df2);

    Mat df1 = dg;
    for (size_t i = 0; i < df1.v.size(); ++i) df1.v[i] *= gelu_grad(cache.f1.v[i]);

    Mat db = kernels::matmul_nt(df1, lp.w1.w);
    add_inplace(lp.w1.g, kernels::matmul_tn(cache.b, df1));
    add_colsum(lp.b1.g, df1);

    add_inplace(dx2, ln_backward(cache.ln2, lp.ln2_g.w, db, lp.ln2_g.g, lp.ln2_b.g));

    // x2 = x + attn_out
    Mat dx = dx2;
    const Mat& dao = dx2;
    Mat do_ = kernels::matmul_nt(dao, lp.wo.w);
    add_inplace(lp.wo.g, kernels::matmul_tn(cache.o, dao));
    add_colsum(lp.bo.g, dao);

    Mat dq(dy.rows, d), dk(dy.rows, d), dv(dy.rows, d);
    for (int h = 0; h < heads; ++h) {
        Mat doh = slice_cols(do_, h * dh, dh);
        Mat qh = slice_cols(cache.q, h * dh, dh);
        Mat kh = slice_cols(cache.k, h * dh, dh);
        Mat vh = slice_cols(cache.v, h * dh, dh);
        const Mat& p = cache.p[h];

        Mat dvh = kernels::matmul_tn(p, doh);
        Mat dp = kernels::matmul_nt(doh, vh);
        // softmax backward: ds = p ⊙ (dp − rowsum(dp ⊙ p)); masked entries
        // have p == 0 and stay zero.
        Mat ds(p.rows, p.cols);
        for (int r = 0; r < p.rows; ++r) {
            const double* pr = p.row(r);
            const double* dpr = dp.row(r);
            double dot = 0.0;
            for (int c = 0; c < p.cols; ++c) dot += pr[c] * dpr[c];
            double* dsr = ds.row(r);
            for (int c = 0; c < p.cols; ++c) dsr[c] = pr[c] * (dpr[c] - dot);
        }
        for (auto& e : ds.v) e *= scale;
        Mat dqh = kernels::matmul(ds, kh);
        Mat dkh = kernels::matmul_tn(ds, qh);
        place_cols_add(dq, dqh, h * dh);
        place_cols_add(dk, dkh, h * dh);
        place_cols_add(dv, dvh, h * dh);
    }
    (void)causal;

    Mat da = kernels::matmul_nt(dq, lp.wq.w);
    add_inplace(da, kernels::matmul_nt(dk, lp.wk.w));
    add_inplace(da, kernels::matmul_nt(dv, lp.wv.w));
    add_inplace(lp.wq.g, kernels::matmul_tn(cache.a, dq));
    add_inplace(lp.wk.g, kernels::matmul_tn(cache.a, dk));
    add_inplace(lp.wv.g, kernels::matmul_tn(cache.a, dv));
    add_colsum(lp.bq.g, dq);
    add_colsum(lp.bk.g, dk);
    add_colsum(lp.bv.g, dv);

    add_inplace(dx, ln_backward(cache.ln1, lp.ln1_g.w, da, lp.ln1_g.g, lp.ln1_b.g));
    return dx;
}

} // namespace

Model::Model(ModelConfig config, uint64_t seed) : config_(config) {
    config_.check();
    init_params(seed);
}

namespace {

void init_mat(Mat& m, int rows, int cols, Rng& rng, double scale) {
    m = Mat(rows, cols);
    if (scale > 0)
        for (auto& e : m.v) e = rng.uniform(-scale, scale);
}

void init_param(Param& p, int rows, int cols, Rng& rng, double scale) {
    init_mat(p.w, rows, cols, rng, scale);
    p.g = Mat(rows, cols);
}

void init_linear(Param& w, Param& b, int in, int out, Rng& rng) {
    double scale = std::sqrt(6.0 / (in + out));
    init_param(w, in, out, rng, scale);
    init_param(b, 1, out, rng, 0.0);
}

void init_ln(Param& g, Param& b, int d) {
    g.w = Mat(1, d);
    std::fill(g.w.v.begin(), g.w.v.end(), 1.0);
    g.g = Mat(1, d);
    b.w = Mat(1, d);
    b.g = Mat(1, d);
}

} // namespace

void Model::init_params(uint64_t seed) {
    Rng rng(derive_seed(seed, 0x6d6f64656cull));
    int d = config_.embed_dim;
    init_param(tok_embed_, config_.vocab_size, d, rng, 0.02);
    init_param(pos_dec_, config_.context_length, d, rng, 0.02);
    init_param(pos_enc_, config_.context_length, d, rng, 0.02);

    auto init_layer = [&](TransformerLayerParams& lp) {
        lp.heads = config_.heads;
        init_ln(lp.ln1_g, lp.ln1_b, d);
        init_linear(lp.wq, lp.bq, d, d, rng);
        init_linear(lp.wk, lp.bk, d, d, rng);
        init_linear(lp.wv, lp.bv, d, d, rng);
        init_linear(lp.wo, lp.bo, d, d, rng);
        init_ln(lp.ln2_g, lp.ln2_b, d);
        init_linear(lp.w1, lp.b1, d, 4 * d, rng);
        init_linear(lp.w2, lp.b2, 4 * d, d, rng);
    };
    enc_.resize(config_.encoder_layers);
    for (auto& lp : enc_) init_layer(lp);
    dec_.resize(config_.decoder_layers);
    for (auto& lp : dec_) init_layer(lp);

    init_ln(enc_ln_g_, enc_ln_b_, d);
    init_ln(dec_ln_g_, dec_ln_b_, d);
    init_linear(mu_w_, mu_b_, d, config_.latent_dim, rng);
    init_linear(lv_w_, lv_b_, d, config_.latent_dim, rng);

    int half = config_.condition_embed_dim / 2;
    init_param(cond_rhy_, config_.bar_classes, half, rng, 0.02);
    init_param(cond_poly_, config_.bar_classes, half, rng, 0.02);
    init_linear(ia_w_, ia_b_, config_.latent_dim + config_.condition_embed_dim, d, rng);
    init_linear(out_w_, out_b_, d, config_.vocab_size, rng);
}

std::vector<std::pair<std::string, Param*>> Model::tensors() {
    std::vector<std::pair<std::string, Param*>> registry;
    auto reg = [&](const std::string& name, Param& p) { registry.emplace_back(name, &p); };
    reg("tok_embed", tok_embed_);
    reg("pos_dec", pos_dec_);
    reg("pos_enc", pos_enc_);
    auto reg_layer = [&](const std::string& prefix, TransformerLayerParams& lp) {
        reg(prefix + ".ln1.g", lp.ln1_g);
        reg(prefix + ".ln1.b", lp.ln1_b);
        reg(prefix + ".wq", lp.wq);
        reg(prefix + ".bq", lp.bq);
        reg(prefix + ".wk", lp.wk);
        reg(prefix + ".bk", lp.bk);
        reg(prefix + ".wv", lp.wv);
        reg(prefix + ".bv", lp.bv);
        reg(prefix + ".wo", lp.wo);
        reg(prefix + ".bo", lp.bo);
        reg(prefix + ".ln2.g", lp.ln2_g);
        reg(prefix + ".ln2.b", lp.ln2_b);
        reg(prefix + ".w1", lp.w1);
        reg(prefix + ".b1", lp.b1);
        reg(prefix + ".w2", lp.w2);
        reg(prefix + ".b2", lp.b2);
    };
    for (size_t i = 0; i < enc_.size(); ++i) reg_layer("enc" + std::to_string(i), enc_[i]);
    for (size_t i = 0; i < dec_.size(); ++i) reg_layer("dec" + std::to_string(i), dec_[i]);
    reg("enc_ln.g", enc_ln_g_);
    reg("enc_ln.b", enc_ln_b_);
    reg("dec_ln.g", dec_ln_g_);
    reg("dec_ln.b", dec_ln_b_);
    reg("mu.w", mu_w_);
    reg("mu.b", mu_b_);
    reg("lv.w", lv_w_);
    reg("lv.b", lv_b_);
    reg("cond_rhy", cond_rhy_);
    reg("cond_poly", cond_poly_);
    reg("ia.w", ia_w_);
    reg("ia.b", ia_b_);
    reg("out.w", out_w_);
    reg("out.b", out_b_);
    return registry;
}

void Model::zero_grad() {
    for (auto& [name, p] : tensors()) p->g.zero();
}

std::vector<double> Model::condition_row(const std::vector<double>& latent, int rc, int pc) const {
    if (rc < 1 || rc > config_.bar_classes || pc < 1 || pc > config_.bar_classes)
        fail(ErrorKind::BadRequest, "bar condition class out of range");
    int half = config_.condition_embed_dim / 2;
    Mat zin(1, config_.latent_dim + config_.condition_embed_dim);
    for (int i = 0; i < config_.latent_dim; ++i) zin.v[i] = latent[i];
    for (int i = 0; i < half; ++i) zin.v[config_.latent_dim + i] = cond_rhy_.w(rc - 1, i);
    for (int i = 0; i < half; ++i) zin.v[config_.latent_dim + half + i] = cond_poly_.w(pc - 1, i);
    Mat c = kernels::matmul(zin, ia_w_.w);
    add_bias(c, ia_b_.w);
    return c.v;
}

namespace {

struct EncoderBarCache {
    std::vector<LayerCache> layers;
    LnCache ln;
    Mat e;       // input embeddings
    Mat xn;      // final LN output
    std::vector<double> mu, lv_raw, lv, eps, z;
};

} // namespace

std::vector<BarLatent> Model::encode_bars(const SeqExample& ex) const {
    std::vector<BarLatent> out;
    for (int b = 0; b < ex.bars(); ++b) {
        auto [s, e] = ex.bar_spans[b];
        int len = e - s;
        if (len > config_.context_length)
            fail(ErrorKind::BadRequest, "bar " + std::to_string(b) + " has " + std::to_string(len) +
                                            " tokens, beyond the context length " +
                                            std::to_string(config_.context_length));
        Mat x = gather_rows(tok_embed_.w, ex.ids, s, e);
        add_table_rows(x, pos_enc_.w, 0);
        LayerCache cache;
        for (const auto& lp : enc_) x = layer_forward(lp, x, /*causal=*/false, cache);
        LnCache lnc;
        Mat xn = ln_forward(x, enc_ln_g_.w, enc_ln_b_.w, lnc);
        Mat h(1, config_.embed_dim);
        std::memcpy(h.row(0), xn.row(0), sizeof(double) * config_.embed_dim);
        Mat mu = kernels::matmul(h, mu_w_.w);
        add_bias(mu, mu_b_.w);
        Mat lv = kernels::matmul(h, lv_w_.w);
        add_bias(lv, lv_b_.w);
        BarLatent lat;
        lat.mean = mu.v;
        lat.logvar.resize(config_.latent_dim);
        for (int i = 0; i < config_.latent_dim; ++i)
            lat.logvar[i] = std::clamp(lv.v[i], config_.logvar_min, config_.logvar_max);
        out.push_back(std::move(lat));
    }
    return out;
}

std::vector<BarLatent> Model::encode_bars(const TokenSequence& seq, const Vocabulary& vocab) const {
    // Bar-level classes are irrelevant to the encoder; a constant dummy
    // profile supplies them so make_example can build the spans.
    int bars = 0;
    for (const auto& t : seq.tokens)
        if (t.kind == TokenKind::Bar) ++bars;
    TextureProfile dummy;
    dummy.bars.resize(std::max(bars, 1));
    for (auto& b : dummy.bars) {
        b.rhythmicity_class = 1;
        b.polyphonicity_class = 1;
    }
    return encode_bars(make_example(seq, dummy, vocab));
}

LossBreakdown Model::loss(const std::vector<SeqExample>& batch, uint64_t eps_seed, bool with_grad,
                          std::optional<double> beta_override) {
    if (batch.empty()) fail(ErrorKind::BadRequest, "loss needs a non-empty batch");
    double beta = beta_override.value_or(config_.beta);
    double lambda = config_.free_bits;
    int d = config_.embed_dim;
    int latent = config_.latent_dim;
    int half = config_.condition_embed_dim / 2;

    if (with_grad) zero_grad();

    int64_t total_tokens = 0;
    for (const auto& ex : batch) total_tokens += static_cast<int64_t>(ex.ids.size()) - 1;
    if (total_tokens <= 0) fail(ErrorKind::BadRequest, "batch has no predictable tokens");

    double recon_sum = 0.0;
    double kl_sum = 0.0;

    for (size_t item = 0; item < batch.size(); ++item) {
        const SeqExample& ex = batch[item];
        int n = static_cast<int>(ex.ids.size());
        int m = n - 1;
        if (m > config_.context_length)
            fail(ErrorKind::BadRequest, "sequence of " + std::to_string(n) +
                                            " tokens exceeds the context length");
        int bars = ex.bars();
        Rng eps_rng(derive_seed(eps_seed, item));

        // ---- encoder per bar ----
        std::vector<EncoderBarCache> benc(bars);
        for (int b = 0; b < bars; ++b) {
            auto [s, e] = ex.bar_spans[b];
            if (e - s > config_.context_length)
                fail(ErrorKind::BadRequest, "bar " + std::to_string(b) + " exceeds the context length");
            EncoderBarCache& c = benc[b];
            c.e = gather_rows(tok_embed_.w, ex.ids, s, e);
            add_table_rows(c.e, pos_enc_.w, 0);
            Mat x = c.e;
            c.layers.resize(enc_.size());
            for (size_t l = 0; l < enc_.size(); ++l) x = layer_forward(enc_[l], x, false, c.layers[l]);
            c.xn = ln_forward(x, enc_ln_g_.w, enc_ln_b_.w, c.ln);

            Mat h(1, d);
            std::memcpy(h.row(0), c.xn.row(0), sizeof(double) * d);
            Mat mu = kernels::matmul(h, mu_w_.w);
            add_bias(mu, mu_b_.w);
            Mat lv = kernels::matmul(h, lv_w_.w);
            add_bias(lv, lv_b_.w);
            c.mu = mu.v;
            c.lv_raw = lv.v;
            c.lv.resize(latent);
            c.eps.resize(latent);
            c.z.resize(latent);
            for (int i = 0; i < latent; ++i) {
                c.lv[i] = std::clamp(c.lv_raw[i], config_.logvar_min, config_.logvar_max);
                c.eps[i] = eps_rng.normal();
                c.z[i] = c.mu[i] + std::exp(0.5 * c.lv[i]) * c.eps[i];
                double kl_dim = 0.5 * (c.mu[i] * c.mu[i] + std::exp(c.lv[i]) - 1.0 - c.lv[i]);
                kl_sum += std::max(kl_dim - lambda, 0.0);
            }
        }

        // ---- condition rows ----
        Mat zin(bars, latent + config_.condition_embed_dim);
        for (int b = 0; b < bars; ++b) {
            auto [rc, pc] = ex.bar_classes[b];
            double* row = zin.row(b);
            for (int i = 0; i < latent; ++i) row[i] = benc[b].z[i];
            for (int i = 0; i < half; ++i) row[latent + i] = cond_rhy_.w(rc - 1, i);
            for (int i = 0; i < half; ++i) row[latent + half + i] = cond_poly_.w(pc - 1, i);
        }
        Mat cbar = kernels::matmul(zin, ia_w_.w);
        add_bias(cbar, ia_b_.w);
        Mat cmat(m, d);
        for (int p = 0; p < m; ++p)
            std::memcpy(cmat.row(p), cbar.row(ex.bar_of_pos[p]), sizeof(double) * d);

        // ---- decoder ----
        Mat h0 = gather_rows(tok_embed_.w, ex.ids, 0, m);
        add_table_rows(h0, pos_dec_.w, 0);
        std::vector<LayerCache> dcache(dec_.size());
        Mat h = h0;
        for (size_t l = 0; l < dec_.size(); ++l) {
            Mat xin = h;
            add_inplace(xin, cmat);
            h = layer_forward(dec_[l], xin, /*causal=*/true, dcache[l]);
        }
        LnCache dln;
        Mat hn = ln_forward(h, dec_ln_g_.w, dec_ln_b_.w, dln);
        Mat logits = kernels::matmul(hn, out_w_.w);
        add_bias(logits, out_b_.w);

        // ---- cross entropy ----
        Mat dlogits(m, logits.cols);
        for (int p = 0; p < m; ++p) {
            double* lr = logits.row(p);
            int target = ex.ids[p + 1];
            double mx = lr[0];
            for (int c = 1; c < logits.cols; ++c) mx = std::max(mx, lr[c]);
            double sum = 0.0;
            for (int c = 0; c < logits.cols; ++c) sum += std::exp(lr[c] - mx);
            double lse = mx + std::log(sum);
            recon_sum += lse - lr[target];
            if (with_grad) {
                double* dl = dlogits.row(p);
                double inv = 1.0 / (static_cast<double>(total_tokens) * sum);
                for (int c = 0; c < logits.cols; ++c) dl[c] = std::exp(lr[c] - mx) * inv;
                dl[target] -= 1.0 / static_cast<double>(total_tokens);
            }
        }
        if (!std::isfinite(recon_sum) || !std::isfinite(kl_sum))
            fail(ErrorKind::Internal, "non-finite loss at batch index " + std::to_string(item));
        if (!with_grad) continue;

        // ---- backward: output head ----
        Mat dhn = kernels::matmul_nt(dlogits, out_w_.w);
        add_inplace(out_w_.g, kernels::matmul_tn(hn, dlogits));
        add_colsum(out_b_.g, dlogits);
        Mat dh = ln_backward(dln, dec_ln_g_.w, dhn, dec_ln_g_.g, dec_ln_b_.g);

        // ---- backward: decoder stack ----
        Mat dcmat(m, d);
        for (int l = static_cast<int>(dec_.size()) - 1; l >= 0; --l) {
            Mat dxin = layer_backward(dec_[l], dcache[l], dh, true);
            add_inplace(dcmat, dxin);
            dh = std::move(dxin);
        }
        scatter_rows_add(tok_embed_.g, ex.ids, 0, m, dh);
        for (int p = 0; p < m; ++p) {
            double* g = pos_dec_.g.row(p);
            const double* src = dh.row(p);
            for (int c = 0; c < d; ++c) g[c] += src[c];
        }

        // ---- backward: conditions ----
        Mat dcbar(bars, d);
        for (int p = 0; p < m; ++p) {
            double* g = dcbar.row(ex.bar_of_pos[p]);
            const double* src = dcmat.row(p);
            for (int c = 0; c < d; ++c) g[c] += src[c];
        }
        Mat dzin = kernels::matmul_nt(dcbar, ia_w_.w);
        add_inplace(ia_w_.g, kernels::matmul_tn(zin, dcbar));
        add_colsum(ia_b_.g, dcbar);

        // ---- backward: encoder per bar ----
        double kl_scale = beta / static_cast<double>(batch.size());
        for (int b = 0; b < bars; ++b) {
            EncoderBarCache& c = benc[b];
            auto [rc, pc] = ex.bar_classes[b];
            const double* dzrow = dzin.row(b);
            for (int i = 0; i < half; ++i) cond_rhy_.g(rc - 1, i) += dzrow[latent + i];
            for (int i = 0; i < half; ++i) cond_poly_.g(pc - 1, i) += dzrow[latent + half + i];

            Mat dmu(1, latent), dlv(1, latent);
            for (int i = 0; i < latent; ++i) {
                double dz = dzrow[i];
                dmu.v[i] = dz;
                dlv.v[i] = dz * c.eps[i] * 0.5 * std::exp(0.5 * c.lv[i]);
                double kl_dim = 0.5 * (c.mu[i] * c.mu[i] + std::exp(c.lv[i]) - 1.0 - c.lv[i]);
                if (kl_dim > lambda) {
                    dmu.v[i] += kl_scale * c.mu[i];
                    dlv.v[i] += kl_scale * 0.5 * (std::exp(c.lv[i]) - 1.0);
                }
                if (c.lv_raw[i] <= config_.logvar_min || c.lv_raw[i] >= config_.logvar_max)
                    dlv.v[i] = 0.0; // clamped
            }

            Mat h(1, d);
            std::memcpy(h.row(0), c.xn.row(0), sizeof(double) * d);
            Mat dhrow = kernels::matmul_nt(dmu, mu_w_.w);
            add_inplace(dhrow, kernels::matmul_nt(dlv, lv_w_.w));
            add_inplace(mu_w_.g, kernels::matmul_tn(h, dmu));
            add_colsum(mu_b_.g, dmu);
            add_inplace(lv_w_.g, kernels::matmul_tn(h, dlv));
            add_colsum(lv_b_.g, dlv);

            Mat dxn(c.xn.rows, d);
            std::memcpy(dxn.row(0), dhrow.row(0), sizeof(double) * d);
            Mat dx = ln_backward(c.ln, enc_ln_g_.w, dxn, enc_ln_g_.g, enc_ln_b_.g);
            for (int l = static_cast<int>(enc_.size()) - 1; l >= 0; --l)
                dx = layer_backward(enc_[l], c.layers[l], dx, false);
            auto [s, e] = ex.bar_spans[b];
            scatter_rows_add(tok_embed_.g, ex.ids, s, e, dx);
            for (int r = 0; r < dx.rows; ++r) {
                double* g = pos_enc_.g.row(r);
                const double* src = dx.row(r);
                for (int col = 0; col < d; ++col) g[col] += src[col];
            }
        }
    }

    LossBreakdown out;
    out.recon = recon_sum / static_cast<double>(total_tokens);
    out.kl = kl_sum / static_cast<double>(batch.size());
    out.total = out.recon + beta * out.kl;
    if (!std::isfinite(out.total)) fail(ErrorKind::Internal, "non-finite total loss");
    return out;
}

std::vector<double> Model::decode_distribution(
    const std::vector<int>& prefix_ids, const std::vector<int>& bar_of_pos,
    const std::vector<std::vector<double>>& bar_latents,
    const std::vector<std::pair<int, int>>& bar_conditions) const {
    if (prefix_ids.size() != bar_of_pos.size())
        fail(ErrorKind::BadRequest, "prefix ids and bar mapping must have equal length");
    DecoderSession session(*this, bar_latents, bar_conditions);
    for (size_t p = 0; p < prefix_ids.size(); ++p) session.append(prefix_ids[p], bar_of_pos[p]);
    return session.next_distribution();
}

// ---------------------------------------------------------------------------
// DecoderSession
// ---------------------------------------------------------------------------

DecoderSession::DecoderSession(const Model& model, std::vector<std::vector<double>> bar_latents,
                               std::vector<std::pair<int, int>> bar_conditions)
    : model_(model), latents_(std::move(bar_latents)), conditions_(std::move(bar_conditions)) {
    if (latents_.size() != conditions_.size())
        fail(ErrorKind::BadRequest, "latents and conditions must cover the same bars");
    key_cache_.assign(model_.dec_.size(), Mat());
    value_cache_.assign(model_.dec_.size(), Mat());
}

void DecoderSession::append(int token_id, int bar) {
    const ModelConfig& cfg = model_.config_;
    if (length_ >= cfg.context_length)
        fail(ErrorKind::BadRequest, "decoder session exceeded the context length");
    if (bar < 0 || bar >= static_cast<int>(latents_.size()))
        fail(ErrorKind::BadRequest, "bar " + std::to_string(bar) + " has no latent/condition");
    int d = cfg.embed_dim;
    int heads = cfg.heads;
    int dh = d / heads;
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<double> crow =
        model_.condition_row(latents_[bar], conditions_[bar].first, conditions_[bar].second);

    Mat h(1, d);
    std::memcpy(h.row(0), model_.tok_embed_.w.row(token_id), sizeof(double) * d);
    add_table_rows(h, model_.pos_dec_.w, length_);

    for (size_t l = 0; l < model_.dec_.size(); ++l) {
        const auto& lp = model_.dec_[l];
        Mat x = h;
        for (int c = 0; c < d; ++c) x.v[c] += crow[c];

        LnCache lnc;
        Mat a = ln_forward(x, lp.ln1_g.w, lp.ln1_b.w, lnc);
        Mat q = kernels::matmul(a, lp.wq.w);
        add_bias(q, lp.bq.w);
        Mat k = kernels::matmul(a, lp.wk.w);
        add_bias(k, lp.bk.w);
        Mat v = kernels::matmul(a, lp.wv.w);
        add_bias(v, lp.bv.w);

        Mat& kc = key_cache_[l];
        Mat& vc = value_cache_[l];
        Mat knew(length_ + 1, d), vnew(length_ + 1, d);
        if (length_ > 0) {
            std::memcpy(knew.v.data(), kc.v.data(), sizeof(double) * kc.v.size());
            std::memcpy(vnew.v.data(), vc.v.data(), sizeof(double) * vc.v.size());
        }
        std::memcpy(knew.row(length_), k.row(0), sizeof(double) * d);
        std::memcpy(vnew.row(length_), v.row(0), sizeof(double) * d);
        kc = std::move(knew);
        vc = std::move(vnew);

        Mat o(1, d);
        for (int hd = 0; hd < heads; ++hd) {
            Mat qh = slice_cols(q, hd * dh, dh);
            Mat kh = slice_cols(kc, hd * dh, dh);
            Mat vh = slice_cols(vc, hd * dh, dh);
            Mat s = kernels::matmul_nt(qh, kh); // [1, length+1]
            for (auto& e : s.v) e *= scale;
            kernels::softmax_rows(s);
            Mat oh = kernels::matmul(s, vh);
            place_cols(o, oh, hd * dh);
        }
        Mat ao = kernels::matmul(o, lp.wo.w);
        add_bias(ao, lp.bo.w);
        Mat x2 = x;
        add_inplace(x2, ao);

        LnCache ln2c;
        Mat b = ln_forward(x2, lp.ln2_g.w, lp.ln2_b.w, ln2c);
        Mat f1 = kernels::matmul(b, lp.w1.w);
        add_bias(f1, lp.b1.w);
        for (auto& e : f1.v) e = gelu(e);
        Mat f2 = kernels::matmul(f1, lp.w2.w);
        add_bias(f2, lp.b2.w);
        h = x2;
        add_inplace(h, f2);
    }

    LnCache dln;
    Mat hn = ln_forward(h, model_.dec_ln_g_.w, model_.dec_ln_b_.w, dln);
    Mat logits = kernels::matmul(hn, model_.out_w_.w);
    add_bias(logits, model_.out_b_.w);
    double mx = logits.v[0];
    for (double e : logits.v) mx = std::max(mx, e);
    double sum = 0.0;
    dist_.resize(logits.v.size());
    for (size_t i = 0; i < logits.v.size(); ++i) {
        dist_[i] = std::exp(logits.v[i] - mx);
        sum += dist_[i];
    }
    for (auto& e : dist_) e /= sum;
    ++length_;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr uint32_t kCkptMagic = 0x4d545843u; // "MTXC"
constexpr uint32_t kCkptVersion = 1;

template <typename T>
void put_raw(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get_raw(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

} // namespace

void Model::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write checkpoint '" + path + "'");
    put_raw(out, kCkptMagic);
    put_raw(out, kCkptVersion);
    std::string cfg = model_config_to_json(config_).dump();
    put_raw(out, static_cast<uint64_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    auto registry = const_cast<Model*>(this)->tensors(); // read-only use
    put_raw(out, static_cast<uint64_t>(registry.size()));
    for (const auto& [name, p] : registry) {
        put_raw(out, static_cast<uint64_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_raw(out, static_cast<uint32_t>(p->w.rows));
        put_raw(out, static_cast<uint32_t>(p->w.cols));
        out.write(reinterpret_cast<const char*>(p->w.v.data()),
                  static_cast<std::streamsize>(p->w.v.size() * sizeof(double)));
    }
    if (!out) fail(ErrorKind::Io, "short write to checkpoint '" + path + "'");
}

Model Model::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open checkpoint '" + path + "'");
    if (get_raw<uint32_t>(in) != kCkptMagic) fail(ErrorKind::Format, "not a checkpoint file");
    uint32_t version = get_raw<uint32_t>(in);
    if (version != kCkptVersion)
        fail(ErrorKind::Format, "unsupported checkpoint version " + std::to_string(version));
    auto cfg_len = get_raw<uint64_t>(in);
    std::string cfg(cfg_len, '\0');
    in.read(cfg.data(), static_cast<std::streamsize>(cfg_len));
    Model model(model_config_from_json(json::parse(cfg)), 0);
    auto count = get_raw<uint64_t>(in);
    std::map<std::string, Param*> by_name;
    for (auto& [name, p] : model.tensors()) by_name[name] = p;
    for (uint64_t i = 0; i < count; ++i) {
        auto name_len = get_raw<uint64_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        uint32_t rows = get_raw<uint32_t>(in);
        uint32_t cols = get_raw<uint32_t>(in);
        auto it = by_name.find(name);
        if (it == by_name.end()) fail(ErrorKind::Format, "unknown tensor '" + name + "' in checkpoint");
        Mat& w = it->second->w;
        if (w.rows != static_cast<int>(rows) || w.cols != static_cast<int>(cols))
            fail(ErrorKind::Format, "tensor '" + name + "' shape mismatch");
        in.read(reinterpret_cast<char*>(w.v.data()),
                static_cast<std::streamsize>(w.v.size() * sizeof(double)));
    }
    if (!in) fail(ErrorKind::Format, "truncated checkpoint '" + path + "'");
    return model;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct Adam {
    std::vector<Mat> m, v;
    int t = 0;

    void init(std::vector<std::pair<std::string, Param*>>& tensors) {
        for (auto& [name, p] : tensors) {
            m.emplace_back(p->w.rows, p->w.cols);
            v.emplace_back(p->w.rows, p->w.cols);
        }
    }

    void step(std::vector<std::pair<std::string, Param*>>& tensors, double lr, double clip) {
        ++t;
        double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        double scale = 1.0;
        if (clip > 0) {
            double sq = 0.0;
            for (auto& [name, p] : tensors)
                for (double g : p->g.v) sq += g * g;
            double norm = std::sqrt(sq);
            if (norm > clip) scale = clip / norm;
        }
        double bc1 = 1.0 - std::pow(b1, t);
        double bc2 = 1.0 - std::pow(b2, t);
        for (size_t i = 0; i < tensors.size(); ++i) {
            Mat& w = tensors[i].second->w;
            Mat& g = tensors[i].second->g;
            for (size_t j = 0; j < w.v.size(); ++j) {
                double gj = g.v[j] * scale;
                m[i].v[j] = b1 * m[i].v[j] + (1 - b1) * gj;
                v[i].v[j] = b2 * v[i].v[j] + (1 - b2) * gj * gj;
                double mhat = m[i].v[j] / bc1;
                double vhat = v[i].v[j] / bc2;
                w.v[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

} // namespace

TrainResult train_model(Model& model, const std::vector<SeqExample>& corpus,
                        const TrainOptions& options) {
    if (corpus.empty()) fail(ErrorKind::BadRequest, "training corpus is empty");
    auto tensors = model.tensors();
    Adam adam;
    adam.init(tensors);

    std::ofstream log;
    if (!options.log_path.empty()) {
        log.open(options.log_path, std::ios::trunc);
        if (!log) fail(ErrorKind::Io, "cannot write training log '" + options.log_path + "'");
    }

    Rng order_rng(derive_seed(options.seed, 0x7368756666ull));
    std::vector<int> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    order_rng.shuffle(order);
    size_t cursor = 0;

    // Divergence rollback state.
    std::vector<Mat> snapshot;
    auto take_snapshot = [&] {
        snapshot.clear();
        for (auto& [name, p] : tensors) snapshot.push_back(p->w);
    };
    take_snapshot();

    TrainResult result;
    std::vector<double> first_recons, window;
    for (int step = 1; step <= options.steps; ++step) {
        std::vector<SeqExample> batch;
        for (int i = 0; i < options.batch_size; ++i) {
            if (cursor >= order.size()) {
                order_rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(corpus[order[cursor++]]);
        }
        LossBreakdown lb;
        try {
            lb = model.loss(batch, derive_seed(options.seed, 0x1000000ull + step), true);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Internal) throw;
            // Divergence: restore the last good parameters and stop.
            for (size_t i = 0; i < tensors.size(); ++i) tensors[i].second->w = snapshot[i];
            result.diverged = true;
            if (log) log << json{{"step", step}, {"event", "diverged"}, {"detail", e.what()}}.dump() << "\n";
            break;
        }
        adam.step(tensors, options.lr, options.grad_clip);
        result.steps_run = step;

        if (static_cast<int>(first_recons.size()) < 5) first_recons.push_back(lb.recon);
        window.push_back(lb.recon);
        if (static_cast<int>(window.size()) > 5) window.erase(window.begin());

        if (log && (step % options.log_every == 0 || step == 1 || step == options.steps))
            log << json{{"step", step}, {"total", lb.total}, {"recon", lb.recon}, {"kl", lb.kl}}.dump()
                << "\n";
        if (step % options.snapshot_every == 0) take_snapshot();
    }

    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    result.initial_recon = mean(first_recons);
    result.final_recon = mean(window);
    return result;
}

} // namespace miditex
