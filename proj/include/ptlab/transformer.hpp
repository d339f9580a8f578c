#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ptlab/matrix.hpp"
#include "ptlab/rng.hpp"

namespace ptlab {

/// One attention head. W_q, W_k, W_v are s x d and W_o is d x s.
struct AttentionHeadWeights {
    Matrix W_q;
    Matrix W_k;
    Matrix W_v;
    Matrix W_o;

    std::size_t d() const noexcept { return W_q.cols(); }
    std::size_t head_size() const noexcept { return W_q.rows(); }
    void validate() const;
};

/// Residual ReLU MLP: x -> W_2 relu(W_1 x + b_1) + b_2 + x.
struct MlpWeights {
    Matrix W_1;  // r x d
    Vector b_1;  // r
    Matrix W_2;  // d x r
    Vector b_2;  // d

    std::size_t d() const noexcept { return W_1.cols(); }
    std::size_t width() const noexcept { return W_1.rows(); }
    void validate() const;
};

struct TransformerLayerWeights {
    std::vector<AttentionHeadWeights> heads;
    MlpWeights mlp;

    std::size_t d() const noexcept { return mlp.d(); }
    void validate() const;
};

struct TransformerStack {
    std::vector<TransformerLayerWeights> layers;

    std::size_t d() const noexcept { return layers.empty() ? 0 : layers.front().d(); }
    void validate() const;
};

struct Prompt {
    Matrix tokens;  // d x m_p; m_p may be zero

    std::size_t length() const noexcept { return tokens.cols(); }
};

/// Numerically stable softmax (max subtraction).
Vector softmax(std::span<const double> logits);

/// Softmax weights of one head for query x over the columns of X.
Vector attention_weights(std::span<const double> x, const Matrix& X, const AttentionHeadWeights& head);

/// Single-head output W_o W_v X softmax((W_k X)^T W_q x).
Vector attend_token_head(std::span<const double> x, const Matrix& X, const AttentionHeadWeights& head);

/// Sum of all head outputs for query x over the keys X.
Vector attend_token(std::span<const double> x, const Matrix& X, const TransformerLayerWeights& w);
Vector attend_token(std::span<const double> x, const Matrix& X, std::span<const AttentionHeadWeights> heads);

/// Column k is attend_token(X1[:, k], X2, w).
Matrix attend_seq(const Matrix& X1, const Matrix& X2, const TransformerLayerWeights& w);
Matrix attend_seq(const Matrix& X1, const Matrix& X2, std::span<const AttentionHeadWeights> heads);

/// MLP applied to a single token.
Vector mlp_token(std::span<const double> x, const MlpWeights& w);
Matrix mlp_forward(const Matrix& X, const MlpWeights& w);

/// tau(X) = MLP(Att(X, X) + X).
Matrix layer_forward(const Matrix& X, const TransformerLayerWeights& w);
Matrix stack_forward(const Matrix& X, const TransformerStack& stack);

/// Runs [P, X] through the stack and returns the last m columns.
Matrix prompted_forward(const Prompt& P, const Matrix& X, const TransformerStack& stack);

/// Share of head attention that query x puts on the columns of X1, relative
/// to all columns of X3. X1's columns must be a sub-multiset of X3's.
double attention_mass(const Matrix& X1, std::span<const double> x, const Matrix& X3,
                      const AttentionHeadWeights& head);

struct InitOptions {
    std::size_t d = 0;
    std::size_t heads = 1;
    std::size_t head_size = 0;  // 0 means d
    std::size_t hidden = 0;     // 0 means d
    bool contractive_mlp = false;
    bool identity_output = false;  // W_o = I, i.e. the output projection folded into the MLP
};

/// Entries uniform on (-1/sqrt(fan_in), 1/sqrt(fan_in)). With contractive_mlp
/// the MLP weights are rescaled so that ||W_1|| ||W_2|| = 0.9.
TransformerLayerWeights init_layer(const InitOptions& opts, Rng& rng);
MlpWeights init_mlp(std::size_t d, std::size_t hidden, bool contractive, Rng& rng);
AttentionHeadWeights init_head(std::size_t d, std::size_t head_size, Rng& rng);

/// Rescales W_1 and W_2 by the same factor so that ||W_1|| ||W_2|| = target.
void rescale_mlp(MlpWeights& w, double target);

}  // namespace ptlab
