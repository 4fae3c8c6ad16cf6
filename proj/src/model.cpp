#include "vulsatd/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "vulsatd/error.hpp"

namespace vulsatd {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kLnEps = 1e-5;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kInitStd = 0.02;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
}

// y = gamma .* xhat + beta row-wise; caches xhat and 1/std per row
void ln_forward(const Matrix& x, const Matrix& gamma, const Matrix& beta, Matrix& xhat,
                std::vector<double>& rstd, Matrix& y) {
    const int n = x.cols;
    for (int t = 0; t < x.rows; ++t) {
        const double* xt = x[t];
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += xt[i];
        mean /= n;
        double var = 0.0;
        for (int i = 0; i < n; ++i) {
            const double d = xt[i] - mean;
            var += d * d;
        }
        var /= n;
        const double r = 1.0 / std::sqrt(var + kLnEps);
        rstd[static_cast<std::size_t>(t)] = r;
        double* xh = xhat[t];
        double* yt = y[t];
        for (int i = 0; i < n; ++i) {
            xh[i] = (xt[i] - mean) * r;
            yt[i] = gamma[0][i] * xh[i] + beta[0][i];
        }
    }
}

// dx assigned; dgamma/dbeta accumulated
void ln_backward(const Matrix& dy, const Matrix& xhat, const std::vector<double>& rstd,
                 const Matrix& gamma, Matrix& dgamma, Matrix& dbeta, Matrix& dx) {
    const int n = dy.cols;
    for (int t = 0; t < dy.rows; ++t) {
        const double* dyt = dy[t];
        const double* xh = xhat[t];
        double* dxt = dx[t];
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int i = 0; i < n; ++i) {
            const double dxh = dyt[i] * gamma[0][i];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[i];
            dgamma[0][i] += dyt[i] * xh[i];
            dbeta[0][i] += dyt[i];
        }
        const double mean_dxhat = sum_dxhat / n;
        const double mean_dxhat_xhat = sum_dxhat_xhat / n;
        const double r = rstd[static_cast<std::size_t>(t)];
        for (int i = 0; i < n; ++i) {
            const double dxh = dyt[i] * gamma[0][i];
            dxt[i] = r * (dxh - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
}

// out = x * w + bias (bias broadcast over rows)
void linear(const Matrix& x, const Matrix& w, const Matrix& bias, Matrix& out) {
    matmul(x, w, out);
    for (int t = 0; t < out.rows; ++t) {
        double* ot = out[t];
        for (int j = 0; j < out.cols; ++j) ot[j] += bias[0][j];
    }
}

void add_colsum(const Matrix& d, Matrix& dbias) {
    for (int t = 0; t < d.rows; ++t) {
        const double* dt = d[t];
        for (int j = 0; j < d.cols; ++j) dbias[0][j] += dt[j];
    }
}



// weighted two-class cross-entropy and its logit gradient
double task_ce(const std::array<double, 2>& logits, bool label, const ClassWeights& w,
               std::array<double, 2>* dlogits, double scale) {
    const auto p = binary_softmax(logits);
    const int y = label ? 1 : 0;
    const double wy = label ? w.positive : w.negative;
    if (dlogits) {
        (*dlogits)[0] += scale * wy * (p[0] - (y == 0 ? 1.0 : 0.0));
        (*dlogits)[1] += scale * wy * (p[1] - (y == 1 ? 1.0 : 0.0));
    }
    // clamp to keep the loss finite at saturated logits
    const double py = std::max(p[static_cast<std::size_t>(y)], 1e-300);
    return -wy * std::log(py);
}

}  // namespace

std::array<double, 2> binary_softmax(const std::array<double, 2>& logits) {
    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m);
    const double e1 = std::exp(logits[1] - m);
    const double z = e0 + e1;
    return {e0 / z, e1 / z};
}

std::string to_string(TaskMode mode) {
    switch (mode) {
        case TaskMode::StSatd: return "st_satd";
        case TaskMode::StVuln: return "st_vuln";
        case TaskMode::Multi: return "multi";
    }
    return "multi";
}

TaskMode task_mode_from_string(std::string_view s) {
    if (s == "st_satd" || s == "satd") return TaskMode::StSatd;
    if (s == "st_vuln" || s == "vuln") return TaskMode::StVuln;
    if (s == "multi") return TaskMode::Multi;
    throw InputError("unknown task mode '" + std::string(s) +
                     "' (expected satd, vuln, or multi)");
}

ClassWeights class_weights(const std::vector<bool>& labels, int num_classes) {
    if (labels.empty()) throw InputError("class_weights: no labels");
    long long pos = 0;
    for (bool b : labels) pos += b ? 1 : 0;
    const long long neg = static_cast<long long>(labels.size()) - pos;
    if (pos == 0 || neg == 0)
        throw InputError("class_weights undefined: labels contain a single class");
    const double n = static_cast<double>(labels.size());
    const double k = static_cast<double>(num_classes);
    return {n / (k * static_cast<double>(neg)), n / (k * static_cast<double>(pos))};
}

struct Model::RecordCache {
    std::vector<int> ids;
    Matrix x0, drop0;
    struct Layer {
        Matrix x_in, xhat1, h1, q, k, v, ctx, drop1, x_mid, xhat2, h2, ff_pre, ff_act, drop2;
        std::vector<double> r1, r2;
        std::vector<Matrix> att;
    };
    std::vector<Layer> layers;
    Matrix x_final;
    // final layer norm is evaluated on the CLS row only
    std::vector<double> xhatf;
    double rf = 0.0;
    std::vector<double> cls, clsd, dropc;
};

int Model::add_param(const std::string& name, int rows, int cols) {
    Param p;
    p.name = name;
    p.w = Matrix(rows, cols);
    p.g = Matrix(rows, cols);
    p.m = Matrix(rows, cols);
    p.v = Matrix(rows, cols);
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
}

Model::Model(const ModelConfig& config)
    : config_(config), dropout_rng_(derive_seed(config.seed, "dropout")) {
    if (config_.hidden <= 0 || config_.layers <= 0 || config_.heads <= 0 ||
        config_.vocab_size <= TokenizerModel::kSpecialCount || config_.max_len < 3)
        throw InputError("invalid model config: non-positive dimension");
    if (config_.hidden % config_.heads != 0)
        throw InputError("invalid model config: hidden (" + std::to_string(config_.hidden) +
                         ") must be divisible by heads (" + std::to_string(config_.heads) + ")");
    if (config_.dropout < 0.0 || config_.dropout >= 1.0)
        throw InputError("invalid model config: dropout must lie in [0, 1)");

    const int h = config_.hidden;
    const int f = 4 * h;
    tok_emb_ = add_param("tok_emb", config_.vocab_size, h);
    pos_emb_ = add_param("pos_emb", config_.max_len, h);
    for (int l = 0; l < config_.layers; ++l) {
        const std::string pfx = "layer" + std::to_string(l) + ".";
        LayerIdx idx{};
        idx.ln1_g = add_param(pfx + "ln1.gamma", 1, h);
        idx.ln1_b = add_param(pfx + "ln1.beta", 1, h);
        idx.wq = add_param(pfx + "attn.wq", h, h);
        idx.bq = add_param(pfx + "attn.bq", 1, h);
        idx.wk = add_param(pfx + "attn.wk", h, h);
        idx.bk = add_param(pfx + "attn.bk", 1, h);
        idx.wv = add_param(pfx + "attn.wv", h, h);
        idx.bv = add_param(pfx + "attn.bv", 1, h);
        idx.wo = add_param(pfx + "attn.wo", h, h);
        idx.bo = add_param(pfx + "attn.bo", 1, h);
        idx.ln2_g = add_param(pfx + "ln2.gamma", 1, h);
        idx.ln2_b = add_param(pfx + "ln2.beta", 1, h);
        idx.w1 = add_param(pfx + "ffn.w1", h, f);
        idx.b1 = add_param(pfx + "ffn.b1", 1, f);
        idx.w2 = add_param(pfx + "ffn.w2", f, h);
        idx.b2 = add_param(pfx + "ffn.b2", 1, h);
        layer_idx_.push_back(idx);
    }
    lnf_g_ = add_param("lnf.gamma", 1, h);
    lnf_b_ = add_param("lnf.beta", 1, h);
    if (config_.task_mode == TaskMode::StSatd || config_.task_mode == TaskMode::Multi) {
        satd_head_w_ = add_param("head.satd.w", h, 2);
        satd_head_b_ = add_param("head.satd.b", 1, 2);
    }
    if (config_.task_mode == TaskMode::StVuln || config_.task_mode == TaskMode::Multi) {
        vuln_head_w_ = add_param("head.vuln.w", h, 2);
        vuln_head_b_ = add_param("head.vuln.b", 1, 2);
    }
    init_weights();
}

void Model::init_weights() {
    // The encoder and each head draw from their own seed streams, so the
    // encoder initialization is identical across task modes with equal seeds.
    Rng enc(derive_seed(config_.seed, "encoder"));
    auto gauss_fill = [](Matrix& m, Rng& rng) {
        for (double& x : m.a) x = kInitStd * rng.gauss();
    };
    gauss_fill(params_[static_cast<std::size_t>(tok_emb_)].w, enc);
    gauss_fill(params_[static_cast<std::size_t>(pos_emb_)].w, enc);
    for (const LayerIdx& idx : layer_idx_) {
        for (double& x : params_[static_cast<std::size_t>(idx.ln1_g)].w.a) x = 1.0;
        gauss_fill(params_[static_cast<std::size_t>(idx.wq)].w, enc);
        gauss_fill(params_[static_cast<std::size_t>(idx.wk)].w, enc);
        gauss_fill(params_[static_cast<std::size_t>(idx.wv)].w, enc);
        gauss_fill(params_[static_cast<std::size_t>(idx.wo)].w, enc);
        for (double& x : params_[static_cast<std::size_t>(idx.ln2_g)].w.a) x = 1.0;
        gauss_fill(params_[static_cast<std::size_t>(idx.w1)].w, enc);
        gauss_fill(params_[static_cast<std::size_t>(idx.w2)].w, enc);
    }
    for (double& x : params_[static_cast<std::size_t>(lnf_g_)].w.a) x = 1.0;
    if (satd_head_w_ >= 0) {
        Rng head(derive_seed(config_.seed, "head.satd"));
        gauss_fill(params_[static_cast<std::size_t>(satd_head_w_)].w, head);
    }
    if (vuln_head_w_ >= 0) {
        Rng head(derive_seed(config_.seed, "head.vuln"));
        gauss_fill(params_[static_cast<std::size_t>(vuln_head_w_)].w, head);
    }
}

void Model::validate_input(const EncodedPair& input) const {
    const int len = static_cast<int>(input.input_ids.size());
    if (len > config_.max_len)
        throw InputError("record '" + input.id + "': sequence length " + std::to_string(len) +
                         " exceeds max_len " + std::to_string(config_.max_len));
    if (len < 3) throw InputError("record '" + input.id + "': sequence too short");
    for (int id : input.input_ids)
        if (id < 0 || id >= config_.vocab_size)
            throw InputError("record '" + input.id + "': token id " + std::to_string(id) +
                             " outside the model vocabulary");
}

TaskLogits Model::forward_record(const EncodedPair& input, bool training, RecordCache* cache,
                                 std::vector<std::vector<Matrix>>* att_probs) {
    validate_input(input);
    const int L = static_cast<int>(input.input_ids.size());
    const int H = config_.hidden;
    const int nh = config_.heads;
    const int dh = H / nh;
    const int F = 4 * H;
    const double p = training ? config_.dropout : 0.0;
    const double keep_scale = p > 0.0 ? 1.0 / (1.0 - p) : 1.0;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    auto sample_mask = [&](Matrix& mask) {
        for (double& x : mask.a) x = dropout_rng_.uniform() < p ? 0.0 : keep_scale;
    };
    auto apply_mask = [](Matrix& x, const Matrix& mask) {
        for (std::size_t i = 0; i < x.a.size(); ++i) x.a[i] *= mask.a[i];
    };

    const Matrix& te = params_[static_cast<std::size_t>(tok_emb_)].w;
    const Matrix& pe = params_[static_cast<std::size_t>(pos_emb_)].w;

    Matrix x(L, H);
    for (int t = 0; t < L; ++t) {
        const double* et = te[input.input_ids[static_cast<std::size_t>(t)]];
        const double* pt = pe[t];
        double* xt = x[t];
        for (int i = 0; i < H; ++i) xt[i] = et[i] + pt[i];
    }
    Matrix drop0;
    if (p > 0.0) {
        drop0 = Matrix(L, H);
        sample_mask(drop0);
        apply_mask(x, drop0);
    }
    if (cache) {
        cache->ids = input.input_ids;
        cache->x0 = x;
        cache->drop0 = std::move(drop0);
        cache->layers.resize(static_cast<std::size_t>(config_.layers));
    }
    if (att_probs) att_probs->assign(static_cast<std::size_t>(config_.layers), {});

    std::vector<double> row(static_cast<std::size_t>(L));
    for (int l = 0; l < config_.layers; ++l) {
        const LayerIdx& idx = layer_idx_[static_cast<std::size_t>(l)];
        RecordCache::Layer* lc = cache ? &cache->layers[static_cast<std::size_t>(l)] : nullptr;
        if (lc) lc->x_in = x;

        Matrix xhat1(L, H), h1(L, H);
        std::vector<double> r1(static_cast<std::size_t>(L));
        ln_forward(x, params_[static_cast<std::size_t>(idx.ln1_g)].w,
                   params_[static_cast<std::size_t>(idx.ln1_b)].w, xhat1, r1, h1);

        Matrix q(L, H), k(L, H), v(L, H);
        linear(h1, params_[static_cast<std::size_t>(idx.wq)].w,
               params_[static_cast<std::size_t>(idx.bq)].w, q);
        linear(h1, params_[static_cast<std::size_t>(idx.wk)].w,
               params_[static_cast<std::size_t>(idx.bk)].w, k);
        linear(h1, params_[static_cast<std::size_t>(idx.wv)].w,
               params_[static_cast<std::size_t>(idx.bv)].w, v);

        Matrix ctx(L, H);
        std::vector<Matrix> att(static_cast<std::size_t>(nh));
        for (int h = 0; h < nh; ++h) {
            const int off = h * dh;
            Matrix& prob = att[static_cast<std::size_t>(h)];
            prob = Matrix(L, L);
            for (int t = 0; t < L; ++t) {
                const double* qt = q[t];
                double maxv = -std::numeric_limits<double>::infinity();
                for (int u = 0; u < L; ++u) {
                    const double* ku = k[u];
                    double s = 0.0;
                    for (int a = 0; a < dh; ++a) s += qt[off + a] * ku[off + a];
                    row[static_cast<std::size_t>(u)] = s * inv_sqrt_dh;
                    maxv = std::max(maxv, row[static_cast<std::size_t>(u)]);
                }
                double z = 0.0;
                for (int u = 0; u < L; ++u) {
                    row[static_cast<std::size_t>(u)] =
                        std::exp(row[static_cast<std::size_t>(u)] - maxv);
                    z += row[static_cast<std::size_t>(u)];
                }
                double* pt = prob[t];
                for (int u = 0; u < L; ++u) pt[u] = row[static_cast<std::size_t>(u)] / z;
            }
            for (int t = 0; t < L; ++t) {
                const double* pt = prob[t];
                double* ct = ctx[t];
                for (int a = 0; a < dh; ++a) {
                    double s = 0.0;
                    for (int u = 0; u < L; ++u) s += pt[u] * v[u][off + a];
                    ct[off + a] = s;
                }
            }
        }
        if (att_probs) (*att_probs)[static_cast<std::size_t>(l)] = att;

        Matrix ao(L, H);
        linear(ctx, params_[static_cast<std::size_t>(idx.wo)].w,
               params_[static_cast<std::size_t>(idx.bo)].w, ao);
        Matrix drop1;
        if (p > 0.0) {
            drop1 = Matrix(L, H);
            sample_mask(drop1);
            apply_mask(ao, drop1);
        }
        Matrix x_mid(L, H);
        for (std::size_t i = 0; i < x.a.size(); ++i) x_mid.a[i] = x.a[i] + ao.a[i];

        Matrix xhat2(L, H), h2(L, H);
        std::vector<double> r2(static_cast<std::size_t>(L));
        ln_forward(x_mid, params_[static_cast<std::size_t>(idx.ln2_g)].w,
                   params_[static_cast<std::size_t>(idx.ln2_b)].w, xhat2, r2, h2);

        Matrix ff_pre(L, F);
        linear(h2, params_[static_cast<std::size_t>(idx.w1)].w,
               params_[static_cast<std::size_t>(idx.b1)].w, ff_pre);
        Matrix ff_act(L, F);
        for (std::size_t i = 0; i < ff_pre.a.size(); ++i) ff_act.a[i] = gelu(ff_pre.a[i]);
        Matrix ff2(L, H);
        linear(ff_act, params_[static_cast<std::size_t>(idx.w2)].w,
               params_[static_cast<std::size_t>(idx.b2)].w, ff2);
        Matrix drop2;
        if (p > 0.0) {
            drop2 = Matrix(L, H);
            sample_mask(drop2);
            apply_mask(ff2, drop2);
        }
        Matrix x_out(L, H);
        for (std::size_t i = 0; i < x.a.size(); ++i) x_out.a[i] = x_mid.a[i] + ff2.a[i];

        if (lc) {
            lc->xhat1 = std::move(xhat1);
            lc->h1 = std::move(h1);
            lc->q = std::move(q);
            lc->k = std::move(k);
            lc->v = std::move(v);
            lc->ctx = std::move(ctx);
            lc->drop1 = std::move(drop1);
            lc->x_mid = std::move(x_mid);
            lc->xhat2 = std::move(xhat2);
            lc->h2 = std::move(h2);
            lc->ff_pre = std::move(ff_pre);
            lc->ff_act = std::move(ff_act);
            lc->drop2 = std::move(drop2);
            lc->r1 = std::move(r1);
            lc->r2 = std::move(r2);
            lc->att = std::move(att);
        }
        x = std::move(x_out);
    }

    // final layer norm on the CLS row only; the heads read nothing else
    const Matrix& gf = params_[static_cast<std::size_t>(lnf_g_)].w;
    const Matrix& bf = params_[static_cast<std::size_t>(lnf_b_)].w;
    const double* x0 = x[0];
    double mean = 0.0;
    for (int i = 0; i < H; ++i) mean += x0[i];
    mean /= H;
    double var = 0.0;
    for (int i = 0; i < H; ++i) {
        const double d = x0[i] - mean;
        var += d * d;
    }
    var /= H;
    const double rf = 1.0 / std::sqrt(var + kLnEps);
    std::vector<double> xhatf(static_cast<std::size_t>(H)), cls(static_cast<std::size_t>(H));
    for (int i = 0; i < H; ++i) {
        xhatf[static_cast<std::size_t>(i)] = (x0[i] - mean) * rf;
        cls[static_cast<std::size_t>(i)] = gf[0][i] * xhatf[static_cast<std::size_t>(i)] + bf[0][i];
    }
    std::vector<double> clsd = cls, dropc;
    if (p > 0.0) {
        dropc.resize(static_cast<std::size_t>(H));
        for (int i = 0; i < H; ++i) {
            dropc[static_cast<std::size_t>(i)] = dropout_rng_.uniform() < p ? 0.0 : keep_scale;
            clsd[static_cast<std::size_t>(i)] *= dropc[static_cast<std::size_t>(i)];
        }
    }

    TaskLogits out;
    auto head_logits = [&](int w_idx, int b_idx) {
        const Matrix& w = params_[static_cast<std::size_t>(w_idx)].w;
        const Matrix& b = params_[static_cast<std::size_t>(b_idx)].w;
        std::array<double, 2> logit{b[0][0], b[0][1]};
        for (int i = 0; i < H; ++i) {
            logit[0] += clsd[static_cast<std::size_t>(i)] * w[i][0];
            logit[1] += clsd[static_cast<std::size_t>(i)] * w[i][1];
        }
        return logit;
    };
    if (satd_head_w_ >= 0) out.satd = head_logits(satd_head_w_, satd_head_b_);
    if (vuln_head_w_ >= 0) out.vuln = head_logits(vuln_head_w_, vuln_head_b_);

    if (cache) {
        cache->x_final = std::move(x);
        cache->xhatf = std::move(xhatf);
        cache->rf = rf;
        cache->cls = std::move(cls);
        cache->clsd = std::move(clsd);
        cache->dropc = std::move(dropc);
    }
    return out;
}

void Model::backward_record(const RecordCache& cache, const TaskLogits& dlogits) {
    const int L = static_cast<int>(cache.ids.size());
    const int H = config_.hidden;
    const int nh = config_.heads;
    const int dh = H / nh;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    // heads
    std::vector<double> dclsd(static_cast<std::size_t>(H), 0.0);
    auto head_backward = [&](int w_idx, int b_idx, const std::array<double, 2>& dl) {
        const Matrix& w = params_[static_cast<std::size_t>(w_idx)].w;
        Matrix& dw = params_[static_cast<std::size_t>(w_idx)].g;
        Matrix& db = params_[static_cast<std::size_t>(b_idx)].g;
        for (int i = 0; i < H; ++i) {
            dclsd[static_cast<std::size_t>(i)] += dl[0] * w[i][0] + dl[1] * w[i][1];
            dw[i][0] += cache.clsd[static_cast<std::size_t>(i)] * dl[0];
            dw[i][1] += cache.clsd[static_cast<std::size_t>(i)] * dl[1];
        }
        db[0][0] += dl[0];
        db[0][1] += dl[1];
    };
    if (dlogits.satd && satd_head_w_ >= 0) head_backward(satd_head_w_, satd_head_b_, *dlogits.satd);
    if (dlogits.vuln && vuln_head_w_ >= 0) head_backward(vuln_head_w_, vuln_head_b_, *dlogits.vuln);

    // CLS dropout, then the final layer norm (CLS row only)
    std::vector<double> dcls = dclsd;
    if (!cache.dropc.empty())
        for (int i = 0; i < H; ++i) dcls[static_cast<std::size_t>(i)] *= cache.dropc[static_cast<std::size_t>(i)];

    const Matrix& gf = params_[static_cast<std::size_t>(lnf_g_)].w;
    Matrix& dgf = params_[static_cast<std::size_t>(lnf_g_)].g;
    Matrix& dbf = params_[static_cast<std::size_t>(lnf_b_)].g;
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (int i = 0; i < H; ++i) {
        const double dxh = dcls[static_cast<std::size_t>(i)] * gf[0][i];
        sum_dxhat += dxh;
        sum_dxhat_xhat += dxh * cache.xhatf[static_cast<std::size_t>(i)];
        dgf[0][i] += dcls[static_cast<std::size_t>(i)] * cache.xhatf[static_cast<std::size_t>(i)];
        dbf[0][i] += dcls[static_cast<std::size_t>(i)];
    }
    Matrix dx(L, H);
    for (int i = 0; i < H; ++i) {
        const double dxh = dcls[static_cast<std::size_t>(i)] * gf[0][i];
        dx[0][i] = cache.rf * (dxh - sum_dxhat / H -
                               cache.xhatf[static_cast<std::size_t>(i)] * sum_dxhat_xhat / H);
    }

    for (int l = config_.layers - 1; l >= 0; --l) {
        const LayerIdx& idx = layer_idx_[static_cast<std::size_t>(l)];
        const RecordCache::Layer& lc = cache.layers[static_cast<std::size_t>(l)];
        const int F = 4 * H;

        // x_out = x_mid + dropout(ffn)
        Matrix dff2 = dx;  // copy
        if (lc.drop2.a.size())
            for (std::size_t i = 0; i < dff2.a.size(); ++i) dff2.a[i] *= lc.drop2.a[i];

        Matrix dff_act(L, F);
        matmul_a_bt(dff2, params_[static_cast<std::size_t>(idx.w2)].w, dff_act);
        matmul_at_b(lc.ff_act, dff2, params_[static_cast<std::size_t>(idx.w2)].g, true);
        add_colsum(dff2, params_[static_cast<std::size_t>(idx.b2)].g);

        Matrix dff_pre(L, F);
        for (std::size_t i = 0; i < dff_pre.a.size(); ++i)
            dff_pre.a[i] = dff_act.a[i] * gelu_grad(lc.ff_pre.a[i]);

        Matrix dh2(L, H);
        matmul_a_bt(dff_pre, params_[static_cast<std::size_t>(idx.w1)].w, dh2);
        matmul_at_b(lc.h2, dff_pre, params_[static_cast<std::size_t>(idx.w1)].g, true);
        add_colsum(dff_pre, params_[static_cast<std::size_t>(idx.b1)].g);

        Matrix dx_mid(L, H);
        ln_backward(dh2, lc.xhat2, lc.r2, params_[static_cast<std::size_t>(idx.ln2_g)].w,
                    params_[static_cast<std::size_t>(idx.ln2_g)].g,
                    params_[static_cast<std::size_t>(idx.ln2_b)].g, dx_mid);
        for (std::size_t i = 0; i < dx_mid.a.size(); ++i) dx_mid.a[i] += dx.a[i];

        // x_mid = x_in + dropout(attn)
        Matrix dao = dx_mid;  // copy
        if (lc.drop1.a.size())
            for (std::size_t i = 0; i < dao.a.size(); ++i) dao.a[i] *= lc.drop1.a[i];

        Matrix dctx(L, H);
        matmul_a_bt(dao, params_[static_cast<std::size_t>(idx.wo)].w, dctx);
        matmul_at_b(lc.ctx, dao, params_[static_cast<std::size_t>(idx.wo)].g, true);
        add_colsum(dao, params_[static_cast<std::size_t>(idx.bo)].g);

        Matrix dq(L, H), dk(L, H), dv(L, H);
        std::vector<double> dprow(static_cast<std::size_t>(L));
        for (int h = 0; h < nh; ++h) {
            const int off = h * dh;
            const Matrix& prob = lc.att[static_cast<std::size_t>(h)];
            for (int t = 0; t < L; ++t) {
                const double* pt = prob[t];
                // dP row and dV
                double dot = 0.0;
                for (int u = 0; u < L; ++u) {
                    double s = 0.0;
                    const double* vu = lc.v[u];
                    const double* dct = dctx[t];
                    for (int a = 0; a < dh; ++a) s += dct[off + a] * vu[off + a];
                    dprow[static_cast<std::size_t>(u)] = s;
                    dot += s * pt[u];
                }
                for (int u = 0; u < L; ++u) {
                    const double ds = pt[u] * (dprow[static_cast<std::size_t>(u)] - dot);
                    // dq/dk via the scaled scores
                    const double* ku = lc.k[u];
                    const double* qt = lc.q[t];
                    double* dqt = dq[t];
                    double* dku = dk[u];
                    const double c = ds * inv_sqrt_dh;
                    for (int a = 0; a < dh; ++a) {
                        dqt[off + a] += c * ku[off + a];
                        dku[off + a] += c * qt[off + a];
                    }
                    double* dvu = dv[u];
                    const double* dct = dctx[t];
                    for (int a = 0; a < dh; ++a) dvu[off + a] += pt[u] * dct[off + a];
                }
            }
        }

        Matrix dh1(L, H);
        matmul_a_bt(dq, params_[static_cast<std::size_t>(idx.wq)].w, dh1);
        matmul_a_bt(dk, params_[static_cast<std::size_t>(idx.wk)].w, dh1, true);
        matmul_a_bt(dv, params_[static_cast<std::size_t>(idx.wv)].w, dh1, true);
        matmul_at_b(lc.h1, dq, params_[static_cast<std::size_t>(idx.wq)].g, true);
        matmul_at_b(lc.h1, dk, params_[static_cast<std::size_t>(idx.wk)].g, true);
        matmul_at_b(lc.h1, dv, params_[static_cast<std::size_t>(idx.wv)].g, true);
        add_colsum(dq, params_[static_cast<std::size_t>(idx.bq)].g);
        add_colsum(dk, params_[static_cast<std::size_t>(idx.bk)].g);
        add_colsum(dv, params_[static_cast<std::size_t>(idx.bv)].g);

        Matrix dx_in(L, H);
        ln_backward(dh1, lc.xhat1, lc.r1, params_[static_cast<std::size_t>(idx.ln1_g)].w,
                    params_[static_cast<std::size_t>(idx.ln1_g)].g,
                    params_[static_cast<std::size_t>(idx.ln1_b)].g, dx_in);
        for (std::size_t i = 0; i < dx_in.a.size(); ++i) dx_in.a[i] += dx_mid.a[i];
        dx = std::move(dx_in);
    }

    if (cache.drop0.a.size())
        for (std::size_t i = 0; i < dx.a.size(); ++i) dx.a[i] *= cache.drop0.a[i];
    Matrix& dte = params_[static_cast<std::size_t>(tok_emb_)].g;
    Matrix& dpe = params_[static_cast<std::size_t>(pos_emb_)].g;
    for (int t = 0; t < L; ++t) {
        const double* dxt = dx[t];
        double* dtok = dte[cache.ids[static_cast<std::size_t>(t)]];
        double* dpos = dpe[t];
        for (int i = 0; i < H; ++i) {
            dtok[i] += dxt[i];
            dpos[i] += dxt[i];
        }
    }
}

std::vector<TaskLogits> Model::forward(const std::vector<EncodedPair>& batch, bool training) {
    if (batch.empty()) throw InputError("forward: empty batch");
    std::vector<TaskLogits> out;
    out.reserve(batch.size());
    for (const EncodedPair& e : batch)
        out.push_back(forward_record(e, training, nullptr, nullptr));
    return out;
}

std::vector<Prediction> Model::predict(const std::vector<EncodedPair>& inputs) {
    std::vector<Prediction> out;
    out.reserve(inputs.size());
    for (const EncodedPair& e : inputs) {
        const TaskLogits logits = forward_record(e, false, nullptr, nullptr);
        Prediction p;
        if (logits.satd) {
            p.satd_probs = binary_softmax(*logits.satd);
            p.satd = (*logits.satd)[1] > (*logits.satd)[0];
        }
        if (logits.vuln) {
            p.vuln_probs = binary_softmax(*logits.vuln);
            p.vuln = (*logits.vuln)[1] > (*logits.vuln)[0];
        }
        out.push_back(p);
    }
    return out;
}

double Model::example_loss(const TaskLogits& logits, const TaskLabels& labels,
                           const TaskWeights& weights, double l2_lambda) const {
    double loss = 0.0;
    if (satd_head_w_ >= 0) {
        if (!logits.satd || !labels.satd)
            throw InputError("loss: satd task is active but logits or label missing");
        loss += task_ce(*logits.satd, *labels.satd, weights.satd, nullptr, 0.0);
    }
    if (vuln_head_w_ >= 0) {
        if (!logits.vuln || !labels.vuln)
            throw InputError("loss: vuln task is active but logits or label missing");
        loss += task_ce(*logits.vuln, *labels.vuln, weights.vuln, nullptr, 0.0);
    }
    if (l2_lambda != 0.0) {
        double sq = 0.0;
        for (const Param& p : params_)
            for (double x : p.w.a) sq += x * x;
        loss += l2_lambda * sq;
    }
    return loss;
}

void Model::zero_gradients() {
    for (Param& p : params_) p.g.zero();
}

double Model::batch_loss_and_gradients(const std::vector<LabeledExample>& batch,
                                       const TaskWeights& weights, double l2_lambda) {
    if (batch.empty()) throw InputError("empty batch");
    zero_gradients();
    const double scale = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const LabeledExample& ex : batch) {
        RecordCache cache;
        const TaskLogits logits = forward_record(ex.input, true, &cache, nullptr);
        TaskLogits dlogits;
        if (satd_head_w_ >= 0) {
            if (!ex.labels.satd)
                throw InputError("record '" + ex.input.id + "' lacks a satd label");
            dlogits.satd = {0.0, 0.0};
            total += scale * task_ce(*logits.satd, *ex.labels.satd, weights.satd,
                                     &*dlogits.satd, scale);
        }
        if (vuln_head_w_ >= 0) {
            if (!ex.labels.vuln)
                throw InputError("record '" + ex.input.id + "' lacks a vuln label");
            dlogits.vuln = {0.0, 0.0};
            total += scale * task_ce(*logits.vuln, *ex.labels.vuln, weights.vuln,
                                     &*dlogits.vuln, scale);
        }
        backward_record(cache, dlogits);
    }
    if (l2_lambda != 0.0) {
        double sq = 0.0;
        for (Param& p : params_) {
            for (std::size_t i = 0; i < p.w.a.size(); ++i) {
                sq += p.w.a[i] * p.w.a[i];
                p.g.a[i] += 2.0 * l2_lambda * p.w.a[i];
            }
        }
        total += l2_lambda * sq;
    }
    return total;
}

double Model::batch_loss(const std::vector<LabeledExample>& batch, const TaskWeights& weights,
                         double l2_lambda) {
    if (batch.empty()) throw InputError("empty batch");
    const double scale = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const LabeledExample& ex : batch) {
        const TaskLogits logits = forward_record(ex.input, false, nullptr, nullptr);
        if (satd_head_w_ >= 0) {
            if (!ex.labels.satd)
                throw InputError("record '" + ex.input.id + "' lacks a satd label");
            total += scale * task_ce(*logits.satd, *ex.labels.satd, weights.satd, nullptr, 0.0);
        }
        if (vuln_head_w_ >= 0) {
            if (!ex.labels.vuln)
                throw InputError("record '" + ex.input.id + "' lacks a vuln label");
            total += scale * task_ce(*logits.vuln, *ex.labels.vuln, weights.vuln, nullptr, 0.0);
        }
    }
    if (l2_lambda != 0.0) {
        double sq = 0.0;
        for (const Param& p : params_)
            for (double x : p.w.a) sq += x * x;
        total += l2_lambda * sq;
    }
    return total;
}

void Model::adam_step(double lr) {
    ++adam_t_;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam_t_));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam_t_));
    for (Param& p : params_) {
        for (std::size_t i = 0; i < p.w.a.size(); ++i) {
            const double g = p.g.a[i];
            p.m.a[i] = kAdamBeta1 * p.m.a[i] + (1.0 - kAdamBeta1) * g;
            p.v.a[i] = kAdamBeta2 * p.v.a[i] + (1.0 - kAdamBeta2) * g * g;
            const double mhat = p.m.a[i] / bc1;
            const double vhat = p.v.a[i] / bc2;
            p.w.a[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
        }
    }
}

Model::EvalResult Model::evaluate(const std::vector<LabeledExample>& data,
                                  const TaskWeights& weights) {
    if (data.empty()) throw InputError("evaluate: empty data");
    EvalResult out;
    std::vector<bool> satd_pred, satd_true, vuln_pred, vuln_true;
    double loss = 0.0;
    for (const LabeledExample& ex : data) {
        const TaskLogits logits = forward_record(ex.input, false, nullptr, nullptr);
        if (satd_head_w_ >= 0) {
            if (!ex.labels.satd)
                throw InputError("record '" + ex.input.id + "' lacks a satd label");
            loss += task_ce(*logits.satd, *ex.labels.satd, weights.satd, nullptr, 0.0);
            satd_pred.push_back((*logits.satd)[1] > (*logits.satd)[0]);
            satd_true.push_back(*ex.labels.satd);
        }
        if (vuln_head_w_ >= 0) {
            if (!ex.labels.vuln)
                throw InputError("record '" + ex.input.id + "' lacks a vuln label");
            loss += task_ce(*logits.vuln, *ex.labels.vuln, weights.vuln, nullptr, 0.0);
            vuln_pred.push_back((*logits.vuln)[1] > (*logits.vuln)[0]);
            vuln_true.push_back(*ex.labels.vuln);
        }
    }
    out.loss = loss / static_cast<double>(data.size());
    if (!satd_pred.empty()) out.satd = compute_metrics(satd_pred, satd_true);
    if (!vuln_pred.empty()) out.vuln = compute_metrics(vuln_pred, vuln_true);
    return out;
}

TrainResult Model::train(const std::vector<LabeledExample>& train_set,
                         const std::vector<LabeledExample>& val_set, const TrainConfig& tc) {
    if (train_set.empty() || val_set.empty())
        throw InputError("train: empty train or validation split");
    if (tc.epochs <= 0 || tc.batch_size <= 0)
        throw InputError("train: epochs and batch_size must be positive");

    TaskWeights weights;
    if (tc.weighted_loss) {
        auto collect = [&](bool satd) {
            std::vector<bool> labels;
            labels.reserve(train_set.size());
            for (const LabeledExample& ex : train_set) {
                const auto& l = satd ? ex.labels.satd : ex.labels.vuln;
                if (!l)
                    throw InputError("record '" + ex.input.id + "' lacks a " +
                                     (satd ? std::string("satd") : std::string("vuln")) +
                                     " label");
                labels.push_back(*l);
            }
            return class_weights(labels);
        };
        if (satd_head_w_ >= 0) weights.satd = collect(true);
        if (vuln_head_w_ >= 0) weights.vuln = collect(false);
    }

    // fresh optimizer and dropout stream per training run
    for (Param& p : params_) {
        p.m.zero();
        p.v.zero();
    }
    adam_t_ = 0;
    dropout_rng_ = Rng(derive_seed(tc.seed, "dropout"));
    Rng shuffle_rng(derive_seed(tc.seed, "shuffle"));

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainResult result;
    result.weights = weights;
    double best_f1 = -1.0;
    std::vector<Matrix> best_params;

    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(tc.batch_size)) {
            const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(tc.batch_size));
            std::vector<LabeledExample> items;
            items.reserve(e - b);
            for (std::size_t i = b; i < e; ++i) items.push_back(train_set[order[i]]);
            batch_loss_and_gradients(items, weights, tc.l2_lambda);
            adam_step(tc.learning_rate);
        }

        EpochStats es;
        es.epoch = epoch;
        const EvalResult tr = evaluate(train_set, weights);
        const EvalResult va = evaluate(val_set, weights);
        es.train_loss = tr.loss;
        es.val_loss = va.loss;
        es.train_satd = tr.satd;
        es.train_vuln = tr.vuln;
        es.val_satd = va.satd;
        es.val_vuln = va.vuln;
        double f1_sum = 0.0;
        int f1_n = 0;
        if (va.satd) {
            f1_sum += va.satd->f1;
            ++f1_n;
        }
        if (va.vuln) {
            f1_sum += va.vuln->f1;
            ++f1_n;
        }
        es.val_selection_f1 = f1_n ? f1_sum / f1_n : 0.0;
        if (es.val_selection_f1 > best_f1) {
            best_f1 = es.val_selection_f1;
            result.best_epoch = epoch;
            best_params.clear();
            best_params.reserve(params_.size());
            for (const Param& p : params_) best_params.push_back(p.w);
        }
        result.history.push_back(std::move(es));
    }

    if (!best_params.empty())
        for (std::size_t i = 0; i < params_.size(); ++i) params_[i].w = best_params[i];
    return result;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const Param& p : params_) n += p.w.a.size();
    return n;
}

std::vector<std::vector<Matrix>> Model::attention_probs(const EncodedPair& input) {
    std::vector<std::vector<Matrix>> probs;
    forward_record(input, false, nullptr, &probs);
    return probs;
}

void Model::save(const std::filesystem::path& path) const {
    ordered_json header;
    header["format"] = 1;
    header["config"] = {{"vocab_size", config_.vocab_size}, {"hidden", config_.hidden},
                        {"layers", config_.layers},         {"heads", config_.heads},
                        {"max_len", config_.max_len},       {"dropout", config_.dropout},
                        {"task_mode", to_string(config_.task_mode)},
                        {"seed", config_.seed}};
    ordered_json tensors = ordered_json::array();
    for (const Param& p : params_)
        tensors.push_back({{"name", p.name}, {"rows", p.w.rows}, {"cols", p.w.cols}});
    header["params"] = tensors;
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write checkpoint: " + path.string());
    out.write("VULSATD_CKPT1\n", 14);
    const std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const Param& p : params_)
        out.write(reinterpret_cast<const char*>(p.w.a.data()),
                  static_cast<std::streamsize>(p.w.a.size() * sizeof(double)));
    if (!out) throw InputError("failed writing checkpoint: " + path.string());
}

Model Model::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint: " + path.string());
    char magic[14];
    in.read(magic, 14);
    if (!in || std::memcmp(magic, "VULSATD_CKPT1\n", 14) != 0)
        throw InputError("not a checkpoint file: " + path.string());
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw InputError("truncated checkpoint header: " + path.string());
    const auto header = nlohmann::json::parse(hs, nullptr, false);
    if (header.is_discarded()) throw InputError("corrupt checkpoint header: " + path.string());

    ModelConfig config;
    const auto& c = header.at("config");
    config.vocab_size = c.at("vocab_size").get<int>();
    config.hidden = c.at("hidden").get<int>();
    config.layers = c.at("layers").get<int>();
    config.heads = c.at("heads").get<int>();
    config.max_len = c.at("max_len").get<int>();
    config.dropout = c.at("dropout").get<double>();
    config.task_mode = task_mode_from_string(c.at("task_mode").get<std::string>());
    config.seed = c.at("seed").get<std::uint64_t>();

    Model model(config);
    const auto& tensors = header.at("params");
    if (tensors.size() != model.params_.size())
        throw InputError("checkpoint parameter list does not match the config: " + path.string());
    for (std::size_t i = 0; i < model.params_.size(); ++i) {
        Param& p = model.params_[i];
        const auto& t = tensors.at(i);
        if (t.at("name").get<std::string>() != p.name || t.at("rows").get<int>() != p.w.rows ||
            t.at("cols").get<int>() != p.w.cols)
            throw InputError("checkpoint tensor mismatch at '" + p.name + "': " + path.string());
        in.read(reinterpret_cast<char*>(p.w.a.data()),
                static_cast<std::streamsize>(p.w.a.size() * sizeof(double)));
    }
    if (!in) throw InputError("truncated checkpoint tensors: " + path.string());
    return model;
}

GradCheckResult grad_check(const ModelConfig& config, double fd_step) {
    if (config.dropout != 0.0) throw InputError("grad_check requires dropout = 0");
    Model model(config);

    // fixed tiny batch: ids cycle through the non-special vocabulary
    const int usable = config.vocab_size - TokenizerModel::kSpecialCount;
    auto make_example = [&](int salt, int content_len, std::optional<bool> satd,
                            std::optional<bool> vuln) {
        EncodedPair e;
        e.id = "gc" + std::to_string(salt);
        e.input_ids.push_back(TokenizerModel::kCls);
        for (int i = 0; i < content_len; ++i) {
            if (i == content_len / 2) e.input_ids.push_back(TokenizerModel::kSep);
            e.input_ids.push_back(TokenizerModel::kSpecialCount + (salt * 7 + i * 3) % usable);
        }
        e.input_ids.push_back(TokenizerModel::kEos);
        LabeledExample ex;
        ex.input = std::move(e);
        ex.labels = {satd, vuln};
        return ex;
    };
    std::vector<LabeledExample> batch;
    batch.push_back(make_example(1, 6, true, false));
    batch.push_back(make_example(2, 9, false, false));
    batch.push_back(make_example(3, 4, true, true));

    const TaskWeights weights{{0.8, 1.7}, {1.3, 0.6}};
    const double l2 = 1e-3;

    model.batch_loss_and_gradients(batch, weights, l2);
    std::vector<Matrix> analytic;
    analytic.reserve(model.params().size());
    for (const Param& p : model.params()) analytic.push_back(p.g);

    GradCheckResult result;
    for (std::size_t pi = 0; pi < model.params().size(); ++pi) {
        Param& p = model.params()[pi];
        const std::size_t n = p.w.a.size();
        // full check for small tensors, strided samples for embeddings
        std::size_t stride = 1;
        if (n > 512) stride = n / 128;
        for (std::size_t i = 0; i < n; i += stride) {
            const double orig = p.w.a[i];
            p.w.a[i] = orig + fd_step;
            const double up = model.batch_loss(batch, weights, l2);
            p.w.a[i] = orig - fd_step;
            const double down = model.batch_loss(batch, weights, l2);
            p.w.a[i] = orig;
            const double numeric = (up - down) / (2.0 * fd_step);
            const double a = analytic[pi].a[i];
            const double rel = std::abs(a - numeric) /
                               std::max(std::abs(a) + std::abs(numeric), 1e-4);
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = p.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return result;
}

}  // namespace vulsatd
