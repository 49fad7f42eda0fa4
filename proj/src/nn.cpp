#include "scan/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "scan/kernels.hpp"

namespace scan::nn {

namespace {

Tensor he_normal(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
    Tensor t(shape);
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * std;
    return t;
}

Tensor xavier_normal(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
    Tensor t(shape);
    const double std = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * std;
    return t;
}

void add_bias_rows(Tensor& y, const Tensor& b) {
    const int64_t m = y.shape()[0], n = y.shape()[1];
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) y[i * n + j] += b[j];
}

void accumulate_col_sums(const Tensor& gy, Tensor& gb) {
    const int64_t m = gy.shape()[0], n = gy.shape()[1];
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) gb[j] += gy[i * n + j];
}

// Small serial matmuls for per-head attention slices.
void small_mm(const double* a, const double* b, double* c, int64_t m, int64_t k,
              int64_t n) {
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
}

void small_mm_nt(const double* a, const double* b, double* c, int64_t m, int64_t k,
                 int64_t n) {  // c[m,n] = a[m,k] * b[n,k]^T
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
            c[i * n + j] = acc;
        }
}

void small_mm_tn(const double* a, const double* b, double* c, int64_t m, int64_t k,
                 int64_t n) {  // c[k,n] = a[m,k]^T * b[m,n]
    for (int64_t i = 0; i < k; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < m; ++p) acc += a[p * k + i] * b[p * n + j];
            c[i * n + j] = acc;
        }
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, int64_t in_ch, int64_t out_ch, int64_t kernel,
               int64_t stride, int64_t pad, Rng& rng)
    : w_(name + ".w", he_normal({out_ch, in_ch, kernel, kernel},
                                in_ch * kernel * kernel, rng)),
      b_(name + ".b", Tensor({out_ch})),
      stride_(stride),
      pad_(pad) {}

Tensor Conv2d::forward(const Tensor& x) {
    cached_x_ = x;
    const auto& s = x.shape();
    const int64_t k = w_.value.shape()[2];
    const int64_t oh = (s[2] + 2 * pad_ - k) / stride_ + 1;
    const int64_t ow = (s[3] + 2 * pad_ - k) / stride_ + 1;
    Tensor y({s[0], w_.value.shape()[0], oh, ow});
    kernels::conv2d_forward(x, w_.value, b_.value, stride_, pad_, y);
    return y;
}

Tensor Conv2d::backward(const Tensor& gy, bool want_param_grads) {
    if (want_param_grads)
        kernels::conv2d_backward_weight(gy, cached_x_, stride_, pad_, w_.grad, b_.grad);
    Tensor gx(cached_x_.shape());
    kernels::conv2d_backward_input(gy, w_.value, stride_, pad_, gx);
    return gx;
}

void Conv2d::collect_params(std::vector<Param*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(std::string name, int64_t in_ch, int64_t out_ch,
                                 int64_t kernel, int64_t stride, int64_t pad, Rng& rng)
    : w_(name + ".w", he_normal({in_ch, out_ch, kernel, kernel},
                                in_ch * kernel * kernel, rng)),
      b_(name + ".b", Tensor({out_ch})),
      stride_(stride),
      pad_(pad) {}

Tensor ConvTranspose2d::forward(const Tensor& x) {
    cached_x_ = x;
    const auto& s = x.shape();
    const int64_t k = w_.value.shape()[2];
    const int64_t oh = (s[2] - 1) * stride_ - 2 * pad_ + k;
    const int64_t ow = (s[3] - 1) * stride_ - 2 * pad_ + k;
    Tensor y({s[0], w_.value.shape()[1], oh, ow});
    kernels::conv_transpose2d_forward(x, w_.value, b_.value, stride_, pad_, y);
    return y;
}

Tensor ConvTranspose2d::backward(const Tensor& gy, bool want_param_grads) {
    if (want_param_grads)
        kernels::conv_transpose2d_backward_weight(gy, cached_x_, stride_, pad_, w_.grad,
                                                  b_.grad);
    Tensor gx(cached_x_.shape());
    kernels::conv_transpose2d_backward_input(gy, w_.value, stride_, pad_, gx);
    return gx;
}

void ConvTranspose2d::collect_params(std::vector<Param*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, int64_t in_dim, int64_t out_dim, Rng& rng)
    : w_(name + ".w", xavier_normal({out_dim, in_dim}, in_dim, rng)),
      b_(name + ".b", Tensor({out_dim})) {}

Tensor Linear::forward(const Tensor& x) {
    cached_x_ = x;
    Tensor y({x.shape()[0], w_.value.shape()[0]});
    kernels::matmul_nt(x, w_.value, y);
    add_bias_rows(y, b_.value);
    return y;
}

Tensor Linear::backward(const Tensor& gy, bool want_param_grads) {
    if (want_param_grads) {
        Tensor gw({w_.value.shape()[0], w_.value.shape()[1]});
        kernels::matmul_tn(gy, cached_x_, gw);
        for (int64_t i = 0; i < gw.numel(); ++i) w_.grad[i] += gw[i];
        accumulate_col_sums(gy, b_.grad);
    }
    Tensor gx(cached_x_.shape());
    kernels::matmul(gy, w_.value, gx);
    return gx;
}

void Linear::collect_params(std::vector<Param*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
}

// ------------------------------------------------------------ activations

Tensor ReLU::forward(const Tensor& x) {
    cached_x_ = x;
    Tensor y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
}

Tensor ReLU::backward(const Tensor& gy, bool) {
    Tensor gx(gy.shape());
    for (int64_t i = 0; i < gy.numel(); ++i)
        gx[i] = cached_x_[i] > 0.0 ? gy[i] : 0.0;
    return gx;
}

Tensor GELU::forward(const Tensor& x) {
    cached_x_ = x;
    Tensor y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i)
        y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * M_SQRT1_2));
    return y;
}

Tensor GELU::backward(const Tensor& gy, bool) {
    Tensor gx(gy.shape());
    const double inv_sqrt_2pi = 0.3989422804014327;
    for (int64_t i = 0; i < gy.numel(); ++i) {
        const double x = cached_x_[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
        gx[i] = gy[i] * (cdf + x * pdf);
    }
    return gx;
}

// --------------------------------------------------------------- GroupNorm

int64_t GroupNorm::default_groups(int64_t channels) {
    for (int64_t g = 8; g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

GroupNorm::GroupNorm(std::string name, int64_t channels, int64_t groups)
    : gamma_(name + ".gamma", Tensor::full({channels}, 1.0)),
      beta_(name + ".beta", Tensor({channels})),
      groups_(groups) {
    if (channels % groups != 0)
        throw std::invalid_argument("GroupNorm: channels not divisible by groups");
}

Tensor GroupNorm::forward(const Tensor& x) {
    const auto& s = x.shape();
    const int64_t n = s[0], c = s[1], hw = s[2] * s[3];
    const int64_t cg = c / groups_;
    const int64_t m = cg * hw;
    Tensor xhat(x.shape());
    Tensor invstd({n * groups_});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t g = 0; g < groups_; ++g) {
            const double* base = x.data() + (i * c + g * cg) * hw;
            double mean = 0.0;
            for (int64_t j = 0; j < m; ++j) mean += base[j];
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (int64_t j = 0; j < m; ++j) {
                const double d = base[j] - mean;
                var += d * d;
            }
            var /= static_cast<double>(m);
            const double is = 1.0 / std::sqrt(var + 1e-5);
            invstd[i * groups_ + g] = is;
            double* xh = xhat.data() + (i * c + g * cg) * hw;
            for (int64_t j = 0; j < m; ++j) xh[j] = (base[j] - mean) * is;
        }
    cached_xhat_ = xhat;
    cached_invstd_ = invstd;
    Tensor y(x.shape());
    for (int64_t i = 0; i < n; ++i)
        for (int64_t ch = 0; ch < c; ++ch) {
            const double ga = gamma_.value[ch], be = beta_.value[ch];
            const double* xh = xhat.data() + (i * c + ch) * hw;
            double* yp = y.data() + (i * c + ch) * hw;
            for (int64_t j = 0; j < hw; ++j) yp[j] = ga * xh[j] + be;
        }
    return y;
}

Tensor GroupNorm::backward(const Tensor& gy, bool want_param_grads) {
    const auto& s = gy.shape();
    const int64_t n = s[0], c = s[1], hw = s[2] * s[3];
    const int64_t cg = c / groups_;
    const int64_t m = cg * hw;
    if (want_param_grads) {
        for (int64_t i = 0; i < n; ++i)
            for (int64_t ch = 0; ch < c; ++ch) {
                const double* g = gy.data() + (i * c + ch) * hw;
                const double* xh = cached_xhat_.data() + (i * c + ch) * hw;
                double dg = 0.0, db = 0.0;
                for (int64_t j = 0; j < hw; ++j) {
                    dg += g[j] * xh[j];
                    db += g[j];
                }
                gamma_.grad[ch] += dg;
                beta_.grad[ch] += db;
            }
    }
    Tensor gx(gy.shape());
    for (int64_t i = 0; i < n; ++i)
        for (int64_t g = 0; g < groups_; ++g) {
            const int64_t off = (i * c + g * cg) * hw;
            const double* gyp = gy.data() + off;
            const double* xh = cached_xhat_.data() + off;
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (int64_t j = 0; j < m; ++j) {
                const double dxh = gyp[j] * gamma_.value[g * cg + j / hw];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh[j];
            }
            mean_dxh /= static_cast<double>(m);
            mean_dxh_xh /= static_cast<double>(m);
            const double is = cached_invstd_[i * groups_ + g];
            double* gxp = gx.data() + off;
            for (int64_t j = 0; j < m; ++j) {
                const double dxh = gyp[j] * gamma_.value[g * cg + j / hw];
                gxp[j] = is * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
            }
        }
    return gx;
}

void GroupNorm::collect_params(std::vector<Param*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
}

// --------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(std::string name, int64_t dim)
    : gamma_(name + ".gamma", Tensor::full({dim}, 1.0)),
      beta_(name + ".beta", Tensor({dim})) {}

Tensor LayerNorm::forward(const Tensor& x) {
    const int64_t m = x.shape()[0], d = x.shape()[1];
    Tensor xhat(x.shape());
    Tensor invstd({m});
    Tensor y(x.shape());
    for (int64_t i = 0; i < m; ++i) {
        const double* xp = x.data() + i * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += xp[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double dv = xp[j] - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + 1e-5);
        invstd[i] = is;
        double* xh = xhat.data() + i * d;
        double* yp = y.data() + i * d;
        for (int64_t j = 0; j < d; ++j) {
            xh[j] = (xp[j] - mean) * is;
            yp[j] = gamma_.value[j] * xh[j] + beta_.value[j];
        }
    }
    cached_xhat_ = xhat;
    cached_invstd_ = invstd;
    return y;
}

Tensor LayerNorm::backward(const Tensor& gy, bool want_param_grads) {
    const int64_t m = gy.shape()[0], d = gy.shape()[1];
    if (want_param_grads) {
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < d; ++j) {
                gamma_.grad[j] += gy[i * d + j] * cached_xhat_[i * d + j];
                beta_.grad[j] += gy[i * d + j];
            }
    }
    Tensor gx(gy.shape());
    for (int64_t i = 0; i < m; ++i) {
        const double* gyp = gy.data() + i * d;
        const double* xh = cached_xhat_.data() + i * d;
        double mean_dxh = 0.0, mean_dxh_xh = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double dxh = gyp[j] * gamma_.value[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh /= static_cast<double>(d);
        mean_dxh_xh /= static_cast<double>(d);
        const double is = cached_invstd_[i];
        double* gxp = gx.data() + i * d;
        for (int64_t j = 0; j < d; ++j) {
            const double dxh = gyp[j] * gamma_.value[j];
            gxp[j] = is * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    return gx;
}

void LayerNorm::collect_params(std::vector<Param*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
}

// ------------------------------------------------- MultiHeadSelfAttention

MultiHeadSelfAttention::MultiHeadSelfAttention(std::string name, int64_t dim,
                                               int64_t heads, Rng& rng)
    : wqkv_(name + ".wqkv", xavier_normal({3 * dim, dim}, dim, rng)),
      bqkv_(name + ".bqkv", Tensor({3 * dim})),
      wo_(name + ".wo", xavier_normal({dim, dim}, dim, rng)),
      bo_(name + ".bo", Tensor({dim})),
      dim_(dim),
      heads_(heads) {
    if (dim % heads != 0)
        throw std::invalid_argument("attention: dim not divisible by heads");
}

Tensor MultiHeadSelfAttention::forward(const Tensor& x) {
    const int64_t n = x.shape()[0], t = x.shape()[1], d = x.shape()[2];
    const int64_t hd = d / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    cached_x_ = x;

    Tensor xr = x.reshaped({n * t, d});
    Tensor qkv({n * t, 3 * d});
    kernels::matmul_nt(xr, wqkv_.value, qkv);
    add_bias_rows(qkv, bqkv_.value);
    cached_qkv_ = qkv;

    Tensor probs({n * heads_, t, t});
    Tensor attn({n * t, d});
    std::vector<double> q(t * hd), k(t * hd), v(t * hd), scores(t * t), out(t * hd);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t h = 0; h < heads_; ++h) {
            for (int64_t r = 0; r < t; ++r) {
                const double* row = qkv.data() + (i * t + r) * 3 * d + h * hd;
                for (int64_t j = 0; j < hd; ++j) {
                    q[r * hd + j] = row[j];
                    k[r * hd + j] = row[d + j];
                    v[r * hd + j] = row[2 * d + j];
                }
            }
            small_mm_nt(q.data(), k.data(), scores.data(), t, hd, t);
            double* p = probs.data() + (i * heads_ + h) * t * t;
            for (int64_t r = 0; r < t; ++r) {
                double mx = scores[r * t] * scale;
                for (int64_t j = 1; j < t; ++j)
                    mx = std::max(mx, scores[r * t + j] * scale);
                double sum = 0.0;
                for (int64_t j = 0; j < t; ++j) {
                    const double e = std::exp(scores[r * t + j] * scale - mx);
                    p[r * t + j] = e;
                    sum += e;
                }
                for (int64_t j = 0; j < t; ++j) p[r * t + j] /= sum;
            }
            small_mm(p, v.data(), out.data(), t, t, hd);
            for (int64_t r = 0; r < t; ++r)
                for (int64_t j = 0; j < hd; ++j)
                    attn[(i * t + r) * d + h * hd + j] = out[r * hd + j];
        }
    cached_probs_ = probs;
    cached_attn_ = attn;

    Tensor y({n * t, d});
    kernels::matmul_nt(attn, wo_.value, y);
    add_bias_rows(y, bo_.value);
    return y.reshaped({n, t, d});
}

Tensor MultiHeadSelfAttention::backward(const Tensor& gy, bool want_param_grads) {
    const int64_t n = gy.shape()[0], t = gy.shape()[1], d = gy.shape()[2];
    const int64_t hd = d / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Tensor gyr = gy.reshaped({n * t, d});
    if (want_param_grads) {
        Tensor gwo({d, d});
        kernels::matmul_tn(gyr, cached_attn_, gwo);
        for (int64_t i = 0; i < gwo.numel(); ++i) wo_.grad[i] += gwo[i];
        accumulate_col_sums(gyr, bo_.grad);
    }
    Tensor gattn({n * t, d});
    kernels::matmul(gyr, wo_.value, gattn);

    Tensor gqkv({n * t, 3 * d});
    std::vector<double> q(t * hd), k(t * hd), v(t * hd), go(t * hd), gp(t * t),
        gs(t * t), gq(t * hd), gk(t * hd), gv(t * hd);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t h = 0; h < heads_; ++h) {
            for (int64_t r = 0; r < t; ++r) {
                const double* row = cached_qkv_.data() + (i * t + r) * 3 * d + h * hd;
                for (int64_t j = 0; j < hd; ++j) {
                    q[r * hd + j] = row[j];
                    k[r * hd + j] = row[d + j];
                    v[r * hd + j] = row[2 * d + j];
                }
                const double* g = gattn.data() + (i * t + r) * d + h * hd;
                for (int64_t j = 0; j < hd; ++j) go[r * hd + j] = g[j];
            }
            const double* p = cached_probs_.data() + (i * heads_ + h) * t * t;
            small_mm_nt(go.data(), v.data(), gp.data(), t, hd, t);
            small_mm_tn(p, go.data(), gv.data(), t, t, hd);
            for (int64_t r = 0; r < t; ++r) {
                double dot = 0.0;
                for (int64_t j = 0; j < t; ++j) dot += gp[r * t + j] * p[r * t + j];
                for (int64_t j = 0; j < t; ++j)
                    gs[r * t + j] = p[r * t + j] * (gp[r * t + j] - dot) * scale;
            }
            small_mm(gs.data(), k.data(), gq.data(), t, t, hd);
            small_mm_tn(gs.data(), q.data(), gk.data(), t, t, hd);
            for (int64_t r = 0; r < t; ++r) {
                double* row = gqkv.data() + (i * t + r) * 3 * d + h * hd;
                for (int64_t j = 0; j < hd; ++j) {
                    row[j] = gq[r * hd + j];
                    row[d + j] = gk[r * hd + j];
                    row[2 * d + j] = gv[r * hd + j];
                }
            }
        }

    if (want_param_grads) {
        Tensor xr = cached_x_.reshaped({n * t, d});
        Tensor gw({3 * d, d});
        kernels::matmul_tn(gqkv, xr, gw);
        for (int64_t i = 0; i < gw.numel(); ++i) wqkv_.grad[i] += gw[i];
        accumulate_col_sums(gqkv, bqkv_.grad);
    }
    Tensor gx({n * t, d});
    kernels::matmul(gqkv, wqkv_.value, gx);
    return gx.reshaped({n, t, d});
}

void MultiHeadSelfAttention::collect_params(std::vector<Param*>& out) {
    out.push_back(&wqkv_);
    out.push_back(&bqkv_);
    out.push_back(&wo_);
    out.push_back(&bo_);
}

// --------------------------------------------------------- TransformerBlock

TransformerBlock::TransformerBlock(std::string name, int64_t dim, int64_t heads,
                                   int64_t mlp_ratio, Rng& rng)
    : ln1_(name + ".ln1", dim),
      ln2_(name + ".ln2", dim),
      attn_(name + ".attn", dim, heads, rng),
      fc1_(name + ".fc1", dim, mlp_ratio * dim, rng),
      fc2_(name + ".fc2", mlp_ratio * dim, dim, rng) {}

Tensor TransformerBlock::forward(const Tensor& x) {
    token_shape_ = x.shape();
    const int64_t n = x.shape()[0], t = x.shape()[1], d = x.shape()[2];
    Tensor xr = x.reshaped({n * t, d});
    Tensor a = attn_.forward(ln1_.forward(xr).reshaped({n, t, d}));
    Tensor y1({n * t, d});
    for (int64_t i = 0; i < y1.numel(); ++i) y1[i] = xr[i] + a[i];
    Tensor m = fc2_.forward(act_.forward(fc1_.forward(ln2_.forward(y1))));
    Tensor y(y1.shape());
    for (int64_t i = 0; i < y.numel(); ++i) y[i] = y1[i] + m[i];
    return y.reshaped({n, t, d});
}

Tensor TransformerBlock::backward(const Tensor& gy, bool want_param_grads) {
    const int64_t n = token_shape_[0], t = token_shape_[1], d = token_shape_[2];
    Tensor g = gy.reshaped({n * t, d});
    Tensor gm = ln2_.backward(
        fc1_.backward(act_.backward(fc2_.backward(g, want_param_grads),
                                    want_param_grads),
                      want_param_grads),
        want_param_grads);
    Tensor gy1(g.shape());
    for (int64_t i = 0; i < gy1.numel(); ++i) gy1[i] = g[i] + gm[i];
    Tensor ga = ln1_.backward(
        attn_.backward(gy1.reshaped({n, t, d}), want_param_grads)
            .reshaped({n * t, d}),
        want_param_grads);
    Tensor gx(gy1.shape());
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] = gy1[i] + ga[i];
    return gx.reshaped({n, t, d});
}

void TransformerBlock::collect_params(std::vector<Param*>& out) {
    ln1_.collect_params(out);
    attn_.collect_params(out);
    ln2_.collect_params(out);
    fc1_.collect_params(out);
    fc2_.collect_params(out);
}

// ------------------------------------------------------------ ResidualBlock

ResidualBlock::ResidualBlock(std::string name, int64_t channels, Rng& rng)
    : conv1_(name + ".conv1", channels, channels, 3, 1, 1, rng),
      conv2_(name + ".conv2", channels, channels, 3, 1, 1, rng),
      gn1_(name + ".gn1", channels, GroupNorm::default_groups(channels)),
      gn2_(name + ".gn2", channels, GroupNorm::default_groups(channels)) {}

Tensor ResidualBlock::forward(const Tensor& x) {
    Tensor h = gn2_.forward(conv2_.forward(act1_.forward(gn1_.forward(conv1_.forward(x)))));
    Tensor sum(h.shape());
    for (int64_t i = 0; i < sum.numel(); ++i) sum[i] = h[i] + x[i];
    cached_sum_ = sum;
    Tensor y(sum.shape());
    for (int64_t i = 0; i < y.numel(); ++i) y[i] = sum[i] > 0.0 ? sum[i] : 0.0;
    return y;
}

Tensor ResidualBlock::backward(const Tensor& gy, bool want_param_grads) {
    Tensor g(gy.shape());
    for (int64_t i = 0; i < g.numel(); ++i)
        g[i] = cached_sum_[i] > 0.0 ? gy[i] : 0.0;
    Tensor gb = conv1_.backward(
        gn1_.backward(act1_.backward(conv2_.backward(gn2_.backward(g, want_param_grads),
                                                     want_param_grads),
                                     want_param_grads),
                      want_param_grads),
        want_param_grads);
    Tensor gx(g.shape());
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] = g[i] + gb[i];
    return gx;
}

void ResidualBlock::collect_params(std::vector<Param*>& out) {
    conv1_.collect_params(out);
    gn1_.collect_params(out);
    conv2_.collect_params(out);
    gn2_.collect_params(out);
}

// ------------------------------------------------------------ GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x) {
    in_shape_ = x.shape();
    const int64_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    Tensor y({n, c});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t ch = 0; ch < c; ++ch) {
            const double* p = x.data() + (i * c + ch) * hw;
            double acc = 0.0;
            for (int64_t j = 0; j < hw; ++j) acc += p[j];
            y[i * c + ch] = acc / static_cast<double>(hw);
        }
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& gy, bool) {
    const int64_t n = in_shape_[0], c = in_shape_[1], hw = in_shape_[2] * in_shape_[3];
    Tensor gx(in_shape_);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t ch = 0; ch < c; ++ch) {
            const double g = gy[i * c + ch] / static_cast<double>(hw);
            double* p = gx.data() + (i * c + ch) * hw;
            for (int64_t j = 0; j < hw; ++j) p[j] = g;
        }
    return gx;
}

// ------------------------------------------------------------------- Adam

Adam::Adam(std::vector<Param*> params, double lr, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const Param* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::zero_grad() {
    for (Param* p : params_) p->grad.fill(0.0);
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Param& p = *params_[pi];
        Tensor& m = m_[pi];
        Tensor& v = v_[pi];
        for (int64_t i = 0; i < p.value.numel(); ++i) {
            const double g = p.grad[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            p.value[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        }
    }
}

// ------------------------------------------------------------------- misc

double softmax_cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels,
                             Tensor* grad) {
    const int64_t n = logits.shape()[0], k = logits.shape()[1];
    if (static_cast<int64_t>(labels.size()) != n)
        throw std::invalid_argument("cross entropy: label count mismatch");
    if (grad != nullptr) *grad = Tensor({n, k});
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double* row = logits.data() + i * k;
        double mx = row[0];
        for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
        const double lse = mx + std::log(sum);
        loss += lse - row[labels[i]];
        if (grad != nullptr) {
            double* g = grad->data() + i * k;
            for (int64_t j = 0; j < k; ++j)
                g[j] = std::exp(row[j] - lse) / static_cast<double>(n);
            g[labels[i]] -= 1.0 / static_cast<double>(n);
        }
    }
    return loss / static_cast<double>(n);
}

int64_t param_count(const std::vector<Param*>& params) {
    int64_t total = 0;
    for (const Param* p : params) total += p->value.numel();
    return total;
}

}  // namespace scan::nn
