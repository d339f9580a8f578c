#include "ptlab/lipschitz.hpp"

#include <algorithm>
#include <cmath>

#include "ptlab/errors.hpp"
#include "ptlab/numerics.hpp"
#include "ptlab/parallel.hpp"

namespace ptlab {

namespace {

void check_D(double D, std::size_t m) {
    require(D >= 0.0 && std::isfinite(D), ErrorKind::InvalidInput, "D must be finite and nonnegative");
    require(m >= 1, ErrorKind::InvalidInput, "token count must be at least 1");
}

}  // namespace

void CompactnessConstants::validate() const {
    for (double D : D_per_layer) require(D >= 0.0, ErrorKind::InvalidInput, "negative D");
    require(D_X >= 0.0 && D_P >= 0.0 && alpha >= 0.0 && beta >= 0.0, ErrorKind::InvalidInput,
            "compactness constants must be nonnegative");
    require(m >= 1, ErrorKind::InvalidInput, "m must be at least 1");
}

double query_key_norm(const AttentionHeadWeights& head) {
    head.validate();
    return spectral_norm(head.W_k.transpose() * head.W_q);
}

double bound_single_head(const AttentionHeadWeights& head, double D, std::size_t m) {
    check_D(D, m);
    const double kq = query_key_norm(head);
    return (1.0 + 8.0 * std::sqrt(static_cast<double>(m)) * D * D * kq) * spectral_norm(head.W_v);
}

double bound_attention_block(const TransformerLayerWeights& layer, double D, std::size_t m) {
    require(!layer.heads.empty(), ErrorKind::InvalidInput, "layer has no heads");
    double s = 0.0;
    for (const auto& h : layer.heads) {
        const double b = spectral_norm(h.W_o) * bound_single_head(h, D, m);
        s += b * b;
    }
    return std::sqrt(s);
}

double bound_mlp(const MlpWeights& mlp) {
    mlp.validate();
    return spectral_norm(mlp.W_1) * spectral_norm(mlp.W_2);
}

double bound_encoder_layer(const TransformerLayerWeights& layer, double D, std::size_t m) {
    return (1.0 + bound_attention_block(layer, D, m)) * (1.0 + bound_mlp(layer.mlp));
}

LipschitzReport lipschitz_report(const TransformerLayerWeights& layer, const CompactnessConstants& constants,
                                 std::size_t layer_index) {
    constants.validate();
    require(layer_index < constants.D_per_layer.size(), ErrorKind::InvalidInput, "no D for this layer");
    const double D = constants.D_per_layer[layer_index];
    LipschitzReport r;
    r.constants_used = constants;
    for (const auto& h : layer.heads) r.per_head_bounds.push_back(spectral_norm(h.W_o) * bound_single_head(h, D, constants.m));
    double s = 0.0;
    for (double b : r.per_head_bounds) s += b * b;
    r.block_bound = std::sqrt(s);
    r.mlp_bound = bound_mlp(layer.mlp);
    r.layer_bound = (1.0 + r.block_bound) * (1.0 + r.mlp_bound);
    return r;
}

double bound_prompted_head_joint(const AttentionHeadWeights& head, double D_X, double D_P, std::size_t m_total) {
    check_D(D_X, m_total);
    check_D(D_P, m_total);
    const double kq = query_key_norm(head);
    return (1.0 + 8.0 * std::sqrt(static_cast<double>(m_total)) * (D_X * D_X + D_P * D_P) * kq) *
           spectral_norm(head.W_v);
}

double bound_prompted_head_xpart(const AttentionHeadWeights& head, double D_X, double alpha, std::size_t m_X) {
    check_D(D_X, m_X);
    require(alpha >= 0.0 && std::isfinite(alpha), ErrorKind::InvalidInput, "alpha must be finite and nonnegative");
    const double kq = query_key_norm(head);
    const double a2 = 1.0 + alpha * alpha;
    return (std::sqrt(a2) + 8.0 * std::sqrt(static_cast<double>(m_X)) * D_X * D_X * a2 * kq) *
           spectral_norm(head.W_v);
}

double prompted_improvement_threshold(const AttentionHeadWeights& head, double D, double alpha, std::size_t m) {
    check_D(D, m);
    require(alpha >= 0.0 && std::isfinite(alpha), ErrorKind::InvalidInput, "alpha must be finite and nonnegative");
    const double a2 = 1.0 + alpha * alpha;
    const double kq = query_key_norm(head);
    if (alpha == 0.0) return D;
    if (kq == 0.0) throw Error(ErrorKind::NoImprovement, "attention is constant; the prompted bound only grows");
    const double radicand = D * D / a2 + (1.0 - std::sqrt(a2)) / (8.0 * std::sqrt(static_cast<double>(m)) * a2 * kq);
    if (radicand < 0.0)
        throw Error(ErrorKind::NoImprovement, "prompted bound exceeds the unprompted bound for every D_X");
    return std::sqrt(radicand);
}

double attention_diff_bound(double G_norm, std::size_t m) {
    require(G_norm >= 0.0 && m >= 1, ErrorKind::InvalidInput, "attention_diff_bound: invalid arguments");
    return 2.0 * std::sqrt(static_cast<double>(m)) * G_norm;
}

double matrix_G_bound(const AttentionHeadWeights& head, double D, const Matrix& X1, const Matrix& X2) {
    require(X1.rows() == X2.rows() && X1.cols() == X2.cols(), ErrorKind::InvalidInput, "X1 and X2 differ in shape");
    check_D(D, std::max<std::size_t>(X1.cols(), 1));
    return 2.0 * D * query_key_norm(head) * spectral_norm(X1 - X2);
}

Matrix logit_matrix(const Matrix& X, const AttentionHeadWeights& head) {
    head.validate();
    require(X.rows() == head.d(), ErrorKind::InvalidInput, "logit_matrix: dimension mismatch");
    return (head.W_k * X).transpose() * (head.W_q * X);
}

Matrix softmax_matrix(const Matrix& X, const AttentionHeadWeights& head) {
    const Matrix Z = logit_matrix(X, head);
    Matrix A(Z.rows(), Z.cols());
    for (std::size_t j = 0; j < Z.cols(); ++j) A.set_col(j, softmax(Z.col(j)));
    return A;
}

Vector matrix_G_diagonal(const AttentionHeadWeights& head, const Matrix& X1, const Matrix& X2) {
    require(X1.rows() == X2.rows() && X1.cols() == X2.cols(), ErrorKind::InvalidInput, "X1 and X2 differ in shape");
    const Matrix E = logit_matrix(X1, head) - logit_matrix(X2, head);
    Vector g(E.cols());
    for (std::size_t j = 0; j < E.cols(); ++j) {
        double lo = E(0, j), hi = E(0, j);
        for (std::size_t i = 1; i < E.rows(); ++i) {
            lo = std::min(lo, E(i, j));
            hi = std::max(hi, E(i, j));
        }
        g[j] = hi - lo;
    }
    return g;
}

Matrix sample_in_ball(std::size_t d, std::size_t m, double radius, Rng& rng) {
    require(d > 0 && m > 0 && radius >= 0.0, ErrorKind::InvalidInput, "sample_in_ball: invalid arguments");
    Matrix X = rng.uniform_matrix(d, m, -1.0, 1.0);
    const double t = 1.0 - rng.uniform();  // (0, 1]
    const double n = spectral_norm(X);
    if (n > 0.0) X *= radius * t / n;
    return X;
}

double empirical_lipschitz(const SequenceMap& f, RngSeed seed, const EmpiricalLipschitzOptions& opts) {
    require(opts.n_pairs >= 1, ErrorKind::InvalidInput, "n_pairs must be at least 1");
    require(opts.d > 0 && opts.m > 0, ErrorKind::InvalidInput, "empirical_lipschitz needs d and m");
    require(opts.input_radius > opts.perturbation, ErrorKind::InvalidInput, "radius must exceed the perturbation");
    const std::size_t period =
        opts.perturbation_fraction > 0.0 ? static_cast<std::size_t>(std::llround(1.0 / opts.perturbation_fraction)) : 0;

    std::vector<double> best(worker_count(opts.n_pairs), 0.0);
    parallel_for(opts.n_pairs, [&](std::size_t worker, std::size_t k) {
        Rng rng(mix_seed(seed.value, k));
        Matrix X1, X2;
        if (period > 0 && k % period == period - 1) {
            // Local pair: keep X2 = X1 + eps * Delta inside the ball.
            X1 = sample_in_ball(opts.d, opts.m, opts.input_radius - opts.perturbation, rng);
            Matrix delta = rng.uniform_matrix(opts.d, opts.m, -1.0, 1.0);
            const double dn = spectral_norm(delta);
            if (dn == 0.0) return;
            delta *= opts.perturbation / dn;
            X2 = X1 + delta;
        } else {
            X1 = sample_in_ball(opts.d, opts.m, opts.input_radius, rng);
            X2 = sample_in_ball(opts.d, opts.m, opts.input_radius, rng);
        }
        const double dx = spectral_norm(X1 - X2);
        if (dx < opts.min_distance) return;
        const double ratio = spectral_norm(f(X1) - f(X2)) / dx;
        best[worker] = std::max(best[worker], ratio);
    });
    return *std::max_element(best.begin(), best.end());
}

CompactnessConstants estimate_compactness(const TransformerStack& stack, const std::function<Matrix(Rng&)>& sampler,
                                          std::size_t n_samples, RngSeed seed) {
    stack.validate();
    require(n_samples >= 1, ErrorKind::InvalidInput, "n_samples must be at least 1");
    CompactnessConstants c;
    c.D_per_layer.assign(stack.layers.size(), 0.0);
    c.sample_size = n_samples;
    Rng rng(seed);
    for (std::size_t s = 0; s < n_samples; ++s) {
        Matrix X = sampler(rng);
        c.m = X.cols();
        for (std::size_t l = 0; l < stack.layers.size(); ++l) {
            c.D_per_layer[l] = std::max(c.D_per_layer[l], spectral_norm(X));
            if (l + 1 < stack.layers.size()) X = layer_forward(X, stack.layers[l]);
        }
    }
    c.D_X = c.D_per_layer.front();
    return c;
}

}  // namespace ptlab
