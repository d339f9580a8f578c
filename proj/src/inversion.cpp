#include "ptlab/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ptlab/errors.hpp"
#include "ptlab/numerics.hpp"

namespace ptlab {

namespace {

void check_options(const FixedPointOptions& opts) {
    require(opts.max_iter >= 1, ErrorKind::InvalidInput, "max_iter must be at least 1");
    require(opts.tol > 0.0, ErrorKind::InvalidInput, "tol must be positive");
}

// Non-residual MLP branch W_2 relu(W_1 x + b_1) + b_2.
Vector mlp_branch(std::span<const double> x, const MlpWeights& w) {
    Vector h = w.W_1 * x;
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::max(h[i] + w.b_1[i], 0.0);
    Vector g = w.W_2 * h;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += w.b_2[i];
    return g;
}

}  // namespace

Vector invert_mlp_from(std::span<const double> y, std::span<const double> start, const MlpWeights& mlp,
                       const FixedPointOptions& opts, FixedPointTrace* trace) {
    check_options(opts);
    mlp.validate();
    require(y.size() == mlp.d() && start.size() == mlp.d(), ErrorKind::InvalidInput, "invert_mlp: dimension mismatch");
    const double lip = bound_mlp(mlp);
    if (lip >= 1.0)
        throw Error(ErrorKind::NotContractive, "MLP branch bound " + std::to_string(lip) + " is not below 1");

    Vector x(start.begin(), start.end());
    for (int it = 0; it < opts.max_iter; ++it) {
        const Vector g = mlp_branch(x, mlp);
        // Residual of the current iterate: ||x + g(x) - y||.
        double r2 = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double r = x[i] + g[i] - y[i];
            r2 += r * r;
        }
        const double res = std::sqrt(r2);
        if (trace) trace->residuals.push_back(res);
        if (res <= opts.tol) return x;
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = y[i] - g[i];
    }
    const double final_res = norm2(sub(mlp_token(x, mlp), y));
    if (final_res <= opts.tol) return x;
    throw Error(ErrorKind::NotConverged, "MLP inversion residual " + std::to_string(final_res) + " after " +
                                             std::to_string(opts.max_iter) + " iterations");
}

Vector invert_mlp(std::span<const double> y, const MlpWeights& mlp, const FixedPointOptions& opts,
                  FixedPointTrace* trace) {
    return invert_mlp_from(y, y, mlp, opts, trace);
}

Matrix invert_mlp_seq(const Matrix& Y, const MlpWeights& mlp, const FixedPointOptions& opts) {
    Matrix X(Y.rows(), Y.cols());
    for (std::size_t k = 0; k < Y.cols(); ++k) X.set_col(k, invert_mlp(Y.col(k), mlp, opts));
    return X;
}

Matrix invert_attention_residual(const Matrix& Z, const TransformerLayerWeights& layer, double D,
                                 const FixedPointOptions& opts, FixedPointTrace* trace) {
    check_options(opts);
    require(Z.rows() == layer.d() && Z.cols() >= 1, ErrorKind::InvalidInput, "invert_attention_residual: bad shape");
    const double lip = bound_attention_block(layer, D, Z.cols());
    if (lip >= 1.0)
        throw Error(ErrorKind::NotContractive, "attention block bound " + std::to_string(lip) + " is not below 1");

    Matrix X = Z;
    for (int it = 0; it < opts.max_iter; ++it) {
        const Matrix att = attend_seq(X, X, layer);
        const double res = spectral_norm(X + att - Z);
        if (trace) trace->residuals.push_back(res);
        if (res <= opts.tol) return X;
        X = Z - att;
    }
    const double final_res = spectral_norm(X + attend_seq(X, X, layer) - Z);
    if (final_res <= opts.tol) return X;
    throw Error(ErrorKind::NotConverged, "attention inversion residual " + std::to_string(final_res) + " after " +
                                             std::to_string(opts.max_iter) + " iterations");
}

InvertibilityCertificate certify_invertible(const TransformerStack& stack, const CompactnessConstants& constants) {
    stack.validate();
    constants.validate();
    require(constants.D_per_layer.size() == stack.layers.size(), ErrorKind::InvalidInput,
            "one D value per layer is required");
    InvertibilityCertificate cert;
    cert.constants_used = constants;
    double worst = 0.0;
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        const double a = bound_attention_block(stack.layers[l], constants.D_per_layer[l], constants.m);
        const double b = bound_mlp(stack.layers[l].mlp);
        cert.per_layer_attention_bound.push_back(a);
        cert.per_layer_mlp_bound.push_back(b);
        worst = std::max({worst, a, b});
    }
    cert.margin = 1.0 - worst;
    cert.certified = worst < 1.0;
    return cert;
}

Matrix invert_stack(const Matrix& Y, const TransformerStack& stack, const InvertibilityCertificate& certificate,
                    const FixedPointOptions& opts) {
    if (!certificate.certified) throw Error(ErrorKind::NotCertified, "stack is not certified invertible");
    require(certificate.constants_used.D_per_layer.size() == stack.layers.size(), ErrorKind::InvalidInput,
            "certificate does not match the stack depth");
    Matrix cur = Y;
    for (std::size_t l = stack.layers.size(); l-- > 0;) {
        const auto& layer = stack.layers[l];
        cur = invert_mlp_seq(cur, layer.mlp, opts);
        cur = invert_attention_residual(cur, layer, certificate.constants_used.D_per_layer[l], opts);
    }
    const double res = spectral_norm(stack_forward(cur, stack) - Y);
    if (res > kStackResidualTol)
        throw Error(ErrorKind::NotConverged, "stack inversion residual " + std::to_string(res));
    return cur;
}

void scale_attention_to_bound(TransformerLayerWeights& layer, double D, std::size_t m, double target) {
    require(target >= 0.0, ErrorKind::InvalidInput, "target bound must be nonnegative");
    const double current = bound_attention_block(layer, D, m);
    require(current > 0.0, ErrorKind::InvalidMatrix, "attention block bound is zero");
    // The block bound is linear in a common scale of the value matrices.
    for (auto& h : layer.heads) h.W_v *= target / current;
}

}  // namespace ptlab
