#include "ptlab/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ptlab/errors.hpp"
#include "ptlab/numerics.hpp"

namespace ptlab {

namespace {

void check_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* name) {
    if (m.rows() != rows || m.cols() != cols)
        throw Error(ErrorKind::InvalidInput, std::string(name) + " has shape " + std::to_string(m.rows()) + "x" +
                                                 std::to_string(m.cols()) + ", expected " + std::to_string(rows) +
                                                 "x" + std::to_string(cols));
}

void check_tokens(const Matrix& X, std::size_t d, const char* what) {
    if (X.rows() != d)
        throw Error(ErrorKind::InvalidInput, std::string(what) + ": token dimension " + std::to_string(X.rows()) +
                                                 " != " + std::to_string(d));
}

void check_heads(std::span<const AttentionHeadWeights> heads) {
    require(!heads.empty(), ErrorKind::InvalidInput, "attention needs at least one head");
}

// Keys and value projections of one head over a key sequence.
struct HeadCache {
    Matrix keys;    // s x m: W_k X
    Matrix values;  // d x m: W_o W_v X
};

HeadCache cache_head(const Matrix& X, const AttentionHeadWeights& head) {
    return {head.W_k * X, head.W_o * (head.W_v * X)};
}

void accumulate_head(std::span<const double> x, const AttentionHeadWeights& head, const HeadCache& cache,
                     std::span<double> out) {
    const Vector q = head.W_q * x;
    const Vector a = softmax(transpose_times(cache.keys, q));
    for (std::size_t r = 0; r < cache.values.rows(); ++r) out[r] += dot(cache.values.row(r), a);
}

}  // namespace

void AttentionHeadWeights::validate() const {
    const std::size_t s = W_q.rows();
    const std::size_t dd = W_q.cols();
    require(s > 0 && dd > 0, ErrorKind::InvalidInput, "attention head has empty W_q");
    check_shape(W_k, s, dd, "W_k");
    check_shape(W_v, s, dd, "W_v");
    check_shape(W_o, dd, s, "W_o");
}

void MlpWeights::validate() const {
    const std::size_t r = W_1.rows();
    const std::size_t dd = W_1.cols();
    require(r > 0 && dd > 0, ErrorKind::InvalidInput, "MLP has empty W_1");
    require(b_1.size() == r, ErrorKind::InvalidInput, "b_1 length must equal hidden width");
    check_shape(W_2, dd, r, "W_2");
    require(b_2.size() == dd, ErrorKind::InvalidInput, "b_2 length must equal d");
}

void TransformerLayerWeights::validate() const {
    mlp.validate();
    require(!heads.empty(), ErrorKind::InvalidInput, "layer needs at least one head");
    for (const auto& h : heads) {
        h.validate();
        require(h.d() == mlp.d(), ErrorKind::InvalidInput, "head and MLP disagree on d");
    }
}

void TransformerStack::validate() const {
    require(!layers.empty(), ErrorKind::InvalidInput, "stack needs at least one layer");
    for (const auto& l : layers) {
        l.validate();
        require(l.d() == layers.front().d(), ErrorKind::InvalidInput, "layers disagree on d");
    }
}

Vector softmax(std::span<const double> logits) {
    require(!logits.empty(), ErrorKind::InvalidInput, "softmax of empty vector");
    const double mx = *std::max_element(logits.begin(), logits.end());
    Vector p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

Vector attention_weights(std::span<const double> x, const Matrix& X, const AttentionHeadWeights& head) {
    require(x.size() == head.d(), ErrorKind::InvalidInput, "query dimension mismatch");
    check_tokens(X, head.d(), "attention_weights");
    require(X.cols() > 0, ErrorKind::InvalidInput, "attention over an empty sequence");
    const Vector q = head.W_q * x;
    return softmax(transpose_times(head.W_k * X, q));
}

Vector attend_token_head(std::span<const double> x, const Matrix& X, const AttentionHeadWeights& head) {
    const Vector a = attention_weights(x, X, head);
    return head.W_o * (head.W_v * (X * a));
}

Vector attend_token(std::span<const double> x, const Matrix& X, std::span<const AttentionHeadWeights> heads) {
    check_heads(heads);
    const std::size_t d = heads.front().d();
    require(x.size() == d, ErrorKind::InvalidInput, "query dimension mismatch");
    check_tokens(X, d, "attend_token");
    require(X.cols() > 0, ErrorKind::InvalidInput, "attention over an empty sequence");
    Vector out(d, 0.0);
    for (const auto& h : heads) accumulate_head(x, h, cache_head(X, h), out);
    return out;
}

Vector attend_token(std::span<const double> x, const Matrix& X, const TransformerLayerWeights& w) {
    return attend_token(x, X, std::span<const AttentionHeadWeights>(w.heads));
}

Matrix attend_seq(const Matrix& X1, const Matrix& X2, std::span<const AttentionHeadWeights> heads) {
    check_heads(heads);
    const std::size_t d = heads.front().d();
    check_tokens(X1, d, "attend_seq queries");
    check_tokens(X2, d, "attend_seq keys");
    require(X2.cols() > 0, ErrorKind::InvalidInput, "attention over an empty sequence");
    Matrix out(d, X1.cols());
    Vector col(d);
    for (const auto& h : heads) {
        const HeadCache cache = cache_head(X2, h);
        for (std::size_t k = 0; k < X1.cols(); ++k) {
            std::fill(col.begin(), col.end(), 0.0);
            accumulate_head(X1.col(k), h, cache, col);
            for (std::size_t r = 0; r < d; ++r) out(r, k) += col[r];
        }
    }
    return out;
}

Matrix attend_seq(const Matrix& X1, const Matrix& X2, const TransformerLayerWeights& w) {
    return attend_seq(X1, X2, std::span<const AttentionHeadWeights>(w.heads));
}

Vector mlp_token(std::span<const double> x, const MlpWeights& w) {
    require(x.size() == w.d(), ErrorKind::InvalidInput, "MLP input dimension mismatch");
    Vector h = w.W_1 * x;
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::max(h[i] + w.b_1[i], 0.0);
    Vector y = w.W_2 * h;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += w.b_2[i] + x[i];
    return y;
}

Matrix mlp_forward(const Matrix& X, const MlpWeights& w) {
    check_tokens(X, w.d(), "mlp_forward");
    Matrix out(X.rows(), X.cols());
    for (std::size_t k = 0; k < X.cols(); ++k) out.set_col(k, mlp_token(X.col(k), w));
    return out;
}

Matrix layer_forward(const Matrix& X, const TransformerLayerWeights& w) {
    return mlp_forward(attend_seq(X, X, w) + X, w.mlp);
}

Matrix stack_forward(const Matrix& X, const TransformerStack& stack) {
    require(!stack.layers.empty(), ErrorKind::InvalidInput, "empty stack");
    Matrix cur = X;
    for (const auto& layer : stack.layers) cur = layer_forward(cur, layer);
    return cur;
}

Matrix prompted_forward(const Prompt& P, const Matrix& X, const TransformerStack& stack) {
    require(!stack.layers.empty(), ErrorKind::InvalidInput, "empty stack");
    check_tokens(X, stack.d(), "prompted_forward input");
    if (P.length() == 0) return stack_forward(X, stack);
    check_tokens(P.tokens, stack.d(), "prompted_forward prompt");
    const Matrix out = stack_forward(hcat(P.tokens, X), stack);
    return out.cols_range(P.length(), X.cols());
}

double attention_mass(const Matrix& X1, std::span<const double> x, const Matrix& X3,
                      const AttentionHeadWeights& head) {
    const std::size_t d = head.d();
    check_tokens(X1, d, "attention_mass X1");
    check_tokens(X3, d, "attention_mass X3");
    require(x.size() == d, ErrorKind::InvalidInput, "attention_mass query dimension mismatch");
    require(X1.cols() > 0 && X3.cols() > 0, ErrorKind::InvalidInput, "attention_mass of empty sequence");

    // Multiset containment of X1's columns in X3's columns.
    std::vector<bool> taken(X3.cols(), false);
    for (std::size_t i = 0; i < X1.cols(); ++i) {
        const Vector c = X1.col(i);
        bool found = false;
        for (std::size_t j = 0; j < X3.cols() && !found; ++j) {
            if (taken[j]) continue;
            if (X3.col(j) == c) {
                taken[j] = true;
                found = true;
            }
        }
        require(found, ErrorKind::InvalidInput, "attention_mass: X1 is not a subset of X3");
    }

    const Vector q = head.W_q * x;
    const Vector l1 = transpose_times(head.W_k * X1, q);
    const Vector l3 = transpose_times(head.W_k * X3, q);
    const double mx = *std::max_element(l3.begin(), l3.end());
    double num = 0.0, den = 0.0;
    for (double v : l1) num += std::exp(v - mx);
    for (double v : l3) den += std::exp(v - mx);
    return std::min(num / den, 1.0);
}

AttentionHeadWeights init_head(std::size_t d, std::size_t head_size, Rng& rng) {
    require(d > 0 && head_size > 0, ErrorKind::InvalidInput, "init_head: sizes must be positive");
    const double a = 1.0 / std::sqrt(static_cast<double>(d));
    const double o = 1.0 / std::sqrt(static_cast<double>(head_size));
    AttentionHeadWeights h;
    h.W_q = rng.uniform_matrix(head_size, d, -a, a);
    h.W_k = rng.uniform_matrix(head_size, d, -a, a);
    h.W_v = rng.uniform_matrix(head_size, d, -a, a);
    h.W_o = rng.uniform_matrix(d, head_size, -o, o);
    return h;
}

void rescale_mlp(MlpWeights& w, double target) {
    require(target > 0.0, ErrorKind::InvalidInput, "rescale_mlp: target must be positive");
    const double n1 = spectral_norm(w.W_1);
    const double n2 = spectral_norm(w.W_2);
    require(n1 > 0.0 && n2 > 0.0, ErrorKind::InvalidMatrix, "rescale_mlp: zero weight matrix");
    const double s = std::sqrt(target / (n1 * n2));
    w.W_1 *= s;
    w.W_2 *= s;
}

MlpWeights init_mlp(std::size_t d, std::size_t hidden, bool contractive, Rng& rng) {
    require(d > 0 && hidden > 0, ErrorKind::InvalidInput, "init_mlp: sizes must be positive");
    const double a = 1.0 / std::sqrt(static_cast<double>(d));
    const double b = 1.0 / std::sqrt(static_cast<double>(hidden));
    MlpWeights w;
    w.W_1 = rng.uniform_matrix(hidden, d, -a, a);
    w.b_1 = rng.uniform_vector(hidden, -a, a);
    w.W_2 = rng.uniform_matrix(d, hidden, -b, b);
    w.b_2 = rng.uniform_vector(d, -b, b);
    if (contractive) rescale_mlp(w, 0.9);
    return w;
}

TransformerLayerWeights init_layer(const InitOptions& opts, Rng& rng) {
    require(opts.d > 0 && opts.heads > 0, ErrorKind::InvalidInput, "init_layer: d and heads must be positive");
    const std::size_t s = opts.head_size == 0 ? opts.d : opts.head_size;
    const std::size_t r = opts.hidden == 0 ? opts.d : opts.hidden;
    TransformerLayerWeights w;
    require(!opts.identity_output || s == opts.d, ErrorKind::InvalidInput,
            "init_layer: identity output projection needs head_size == d");
    for (std::size_t i = 0; i < opts.heads; ++i) {
        w.heads.push_back(init_head(opts.d, s, rng));
        if (opts.identity_output) w.heads.back().W_o = Matrix::identity(opts.d);
    }
    w.mlp = init_mlp(opts.d, r, opts.contractive_mlp, rng);
    return w;
}

}  // namespace ptlab
