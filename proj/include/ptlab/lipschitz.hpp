#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "ptlab/matrix.hpp"
#include "ptlab/rng.hpp"
#include "ptlab/transformer.hpp"

namespace ptlab {

struct CompactnessConstants {
    std::vector<double> D_per_layer;  // bound on the spectral norm of each layer's input
    double D_X = 0.0;
    double D_P = 0.0;
    double alpha = 0.0;
    double beta = 0.0;  // carried for completeness; no bound consumes it
    std::size_t m = 1;
    std::size_t sample_size = 0;  // 0 when the D values were supplied by the caller

    void validate() const;
};

struct LipschitzReport {
    std::vector<double> per_head_bounds;  // single-head bound times ||W_o||
    double block_bound = 0.0;
    double mlp_bound = 0.0;
    double layer_bound = 0.0;
    CompactnessConstants constants_used;
};

/// ||W_k^T W_q||_2, the query-key interaction norm shared by all bounds.
double query_key_norm(const AttentionHeadWeights& head);

/// (1 + 8 sqrt(m) D^2 ||W_k^T W_q||) ||W_v||.
double bound_single_head(const AttentionHeadWeights& head, double D, std::size_t m);

/// sqrt(sum_i (||W_o^i|| * bound_single_head_i)^2).
double bound_attention_block(const TransformerLayerWeights& layer, double D, std::size_t m);

/// ||W_1|| ||W_2||, a bound on the non-residual MLP branch.
double bound_mlp(const MlpWeights& mlp);

/// (1 + block bound)(1 + MLP bound).
double bound_encoder_layer(const TransformerLayerWeights& layer, double D, std::size_t m);

LipschitzReport lipschitz_report(const TransformerLayerWeights& layer, const CompactnessConstants& constants,
                                 std::size_t layer_index = 0);

/// Bound over the whole prompted sequence: (1 + 8 sqrt(m_total)(D_X^2 + D_P^2)||W_k^T W_q||)||W_v||.
double bound_prompted_head_joint(const AttentionHeadWeights& head, double D_X, double D_P, std::size_t m_total);

/// Bound with respect to the input part when ||P1 - P2|| <= alpha ||X1 - X2||:
/// (sqrt(1 + a^2) + 8 sqrt(m_X) D_X^2 (1 + a^2) ||W_k^T W_q||) ||W_v||.
double bound_prompted_head_xpart(const AttentionHeadWeights& head, double D_X, double alpha, std::size_t m_X);

/// Largest D_X for which the input-part bound is below the unprompted bound at D.
/// Throws NoImprovement when no nonnegative D_X qualifies.
double prompted_improvement_threshold(const AttentionHeadWeights& head, double D, double alpha, std::size_t m);

/// 2 sqrt(m) ||G||.
double attention_diff_bound(double G_norm, std::size_t m);

/// 2 D ||W_k^T W_q|| ||X1 - X2||.
double matrix_G_bound(const AttentionHeadWeights& head, double D, const Matrix& X1, const Matrix& X2);

/// Logits (W_k x_i)^T (W_q x_j): row i is the key, column j the query.
Matrix logit_matrix(const Matrix& X, const AttentionHeadWeights& head);

/// Column-stochastic attention matrix; column j holds query j's weights.
Matrix softmax_matrix(const Matrix& X, const AttentionHeadWeights& head);

/// Diagonal of G for the logit difference E = Z(X1) - Z(X2): the spread
/// max_{i,i'} |E_ij - E_i'j| of each query column.
Vector matrix_G_diagonal(const AttentionHeadWeights& head, const Matrix& X1, const Matrix& X2);

using SequenceMap = std::function<Matrix(const Matrix&)>;

struct EmpiricalLipschitzOptions {
    std::size_t d = 0;
    std::size_t m = 0;
    std::size_t n_pairs = 1000;
    double input_radius = 1.0;
    double perturbation = 1e-4;
    double perturbation_fraction = 0.1;
    double min_distance = 1e-9;
};

/// Largest observed ||f(X1) - f(X2)|| / ||X1 - X2|| over seeded pairs with
/// ||X_i|| <= input_radius. Pair k draws from mix_seed(seed, k), so the result
/// does not depend on scheduling.
double empirical_lipschitz(const SequenceMap& f, RngSeed seed, const EmpiricalLipschitzOptions& opts);

/// A d x m matrix with entries uniform on [-1, 1], rescaled to spectral norm radius * t, t uniform on (0, 1].
Matrix sample_in_ball(std::size_t d, std::size_t m, double radius, Rng& rng);

/// Estimates D for every layer as the largest input spectral norm seen over
/// n_samples draws of sampler, propagated through the preceding layers.
CompactnessConstants estimate_compactness(const TransformerStack& stack, const std::function<Matrix(Rng&)>& sampler,
                                          std::size_t n_samples, RngSeed seed);

}  // namespace ptlab
