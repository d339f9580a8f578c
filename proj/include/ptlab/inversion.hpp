#pragma once

#include <cstddef>
#include <vector>

#include "ptlab/lipschitz.hpp"
#include "ptlab/matrix.hpp"
#include "ptlab/transformer.hpp"

namespace ptlab {

struct FixedPointOptions {
    int max_iter = 5000;
    double tol = 1e-8;
};

struct InvertibilityCertificate {
    std::vector<double> per_layer_attention_bound;
    std::vector<double> per_layer_mlp_bound;
    bool certified = false;
    double margin = 0.0;  // 1 - largest bound
    CompactnessConstants constants_used;
};

/// Residual trace of a fixed-point solve, one entry per iteration.
struct FixedPointTrace {
    std::vector<double> residuals;
};

/// Solves mlp_token(x) = y by iterating x <- y - g(x) from x = y.
/// Throws NotContractive when ||W_1|| ||W_2|| >= 1 and NotConverged when the
/// residual is still above tol after max_iter iterations.
Vector invert_mlp(std::span<const double> y, const MlpWeights& mlp, const FixedPointOptions& opts = {},
                  FixedPointTrace* trace = nullptr);

/// Same iteration from an explicit starting point.
Vector invert_mlp_from(std::span<const double> y, std::span<const double> start, const MlpWeights& mlp,
                       const FixedPointOptions& opts = {}, FixedPointTrace* trace = nullptr);

/// Column-wise invert_mlp.
Matrix invert_mlp_seq(const Matrix& Y, const MlpWeights& mlp, const FixedPointOptions& opts = {});

/// Solves X + attend_seq(X, X) = Z by iterating X <- Z - attend_seq(X, X).
/// D bounds the spectral norm of the iterates and enters the block bound,
/// which must be below 1.
Matrix invert_attention_residual(const Matrix& Z, const TransformerLayerWeights& layer, double D,
                                 const FixedPointOptions& opts = {}, FixedPointTrace* trace = nullptr);

InvertibilityCertificate certify_invertible(const TransformerStack& stack, const CompactnessConstants& constants);

/// Inverts the stack layer by layer in reverse order. The final forward
/// residual must be at most kStackResidualTol.
Matrix invert_stack(const Matrix& Y, const TransformerStack& stack, const InvertibilityCertificate& certificate,
                    const FixedPointOptions& opts = {.max_iter = 5000, .tol = 1e-10});

inline constexpr double kStackResidualTol = 1e-6;

/// Rescales every W_v of the layer so that the attention block bound at (D, m)
/// equals target. Requires a nonzero current bound.
void scale_attention_to_bound(TransformerLayerWeights& layer, double D, std::size_t m, double target);

}  // namespace ptlab
