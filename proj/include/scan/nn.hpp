#pragma once

#include <memory>
#include <string>
#include <vector>

#include "scan/rng.hpp"
#include "scan/tensor.hpp"

namespace scan::nn {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor(value.shape());
    }
};

/// Layers cache whatever the backward pass needs during forward.
/// backward(gy, want_param_grads=false) propagates input gradients only,
/// which is the mode gradient-map extraction runs in.
class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x) = 0;
    virtual Tensor backward(const Tensor& gy, bool want_param_grads) = 0;
    virtual void collect_params(std::vector<Param*>& out) {}
};

using LayerPtr = std::unique_ptr<Layer>;

class Conv2d : public Layer {
public:
    Conv2d(std::string name, int64_t in_ch, int64_t out_ch, int64_t kernel,
           int64_t stride, int64_t pad, Rng& rng);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& gy, bool want_param_grads) override;
    void collect_params(std::vector<Param*>& out) override;

private:
    Param w_, b_;
    int64_t stride_, pad_;
    Tensor cached_x_;
};

class ConvTranspose2d : public Layer {
public:
    ConvTranspose2d(std::string name, int64_t in_ch, int64_t out_ch, int64_t kernel,
                    int64_t stride, int64_t pad, Rng& rng);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& gy, bool want_param_grads) override;
    void collect_params(std::vector<Param*>& out) override;

private:
    Param w_, b_;
    int64_t stride_, pad_;
    Tensor cached_x_;
};

/// x[M,in] -> y[M,out]; weight stored [out,in].
class Linear : public Layer {
public:
    Linear(std::string name, int64_t in_dim, int64_t out_dim, Rng& rng);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& gy, bool want_param_grads) override;
    void collect_params(std::vector<Param*>& out) override;

private:
    Param w_, b_;
    Tensor cached_x_;
};

class ReLU : public Layer {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& gy, bool want_param_grads) override;

private:
    Tensor cached_x_;
};

class GELU : public Layer {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& gy, bool want_param_grads) override;

private:
    Tensor cached_x_;
};

class GroupNorm : public Layer {
public:
    GroupNorm(std::string name, int64_t channels, int64_t groups);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& gy, bool want_param_grads) override;
    void collect_params(std::vector<Param*>& out) override;

    // Largest divisor of `channels` not exceeding 8.
    static int64_t default_groups(int64_t channels);

private:
    Param gamma_, beta_;
    int64_t groups_;
    Tensor cached_xhat_;
    Tensor cached_invstd_;  // [N*groups]
};

/// Normalizes the last dimension of [M,D].
class LayerNorm : public Layer {
public:
    LayerNorm(std::string name, int64_t dim);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& gy, bool want_param_grads) override;
    void collect_params(std::vector<Param*>& out) override;

private:
    Param gamma_, beta_;
    Tensor cached_xhat_;
    Tensor cached_invstd_;  // [M]
};

/// Self-attention over [N,T,D] with pre-softmax 1/sqrt(head_dim) scaling.
class MultiHeadSelfAttention : public Layer {
public:
    MultiHeadSelfAttention(std::string name, int64_t dim, int64_t heads, Rng& rng);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& gy, bool want_param_grads) override;
    void collect_params(std::vector<Param*>& out) override;

private:
    Param wqkv_, bqkv_, wo_, bo_;
    int64_t dim_, heads_;
    Tensor cached_x_;     // [N,T,D]
    Tensor cached_qkv_;   // [N*T, 3D]
    Tensor cached_probs_; // [N*heads, T, T]
    Tensor cached_attn_;  // [N*T, D] concat of head outputs pre-projection
};

/// Pre-norm transformer block: x + attn(ln1(x)), then + mlp(ln2(.)).
class TransformerBlock : public Layer {
public:
    TransformerBlock(std::string name, int64_t dim, int64_t heads, int64_t mlp_ratio,
                     Rng& rng);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& gy, bool want_param_grads) override;
    void collect_params(std::vector<Param*>& out) override;

private:
    LayerNorm ln1_, ln2_;
    MultiHeadSelfAttention attn_;
    Linear fc1_, fc2_;
    GELU act_;
    std::vector<int64_t> token_shape_;
};

/// conv3x3 -> GN -> ReLU -> conv3x3 -> GN, identity skip, ReLU after the add.
class ResidualBlock : public Layer {
public:
    ResidualBlock(std::string name, int64_t channels, Rng& rng);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& gy, bool want_param_grads) override;
    void collect_params(std::vector<Param*>& out) override;

private:
    Conv2d conv1_, conv2_;
    GroupNorm gn1_, gn2_;
    ReLU act1_;
    Tensor cached_sum_;  // pre-activation of the output ReLU
};

/// [N,C,H,W] -> [N,C]
class GlobalAvgPool : public Layer {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& gy, bool want_param_grads) override;

private:
    std::vector<int64_t> in_shape_;
};

// --------------------------------------------------------------------------

class Adam {
public:
    explicit Adam(std::vector<Param*> params, double lr = 1e-3, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);
    void zero_grad();
    void step();

private:
    std::vector<Param*> params_;
    std::vector<Tensor> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

// Mean cross-entropy over the batch; writes d(loss)/d(logits) when
// grad != nullptr. logits [N,K].
double softmax_cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels,
                             Tensor* grad);

int64_t param_count(const std::vector<Param*>& params);

}  // namespace scan::nn
