#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "ptlab/dataset.hpp"
#include "ptlab/rng.hpp"
#include "ptlab/transformer.hpp"

namespace ptlab {

inline constexpr double kAngleTol = 1e-4;
inline constexpr double kAlphaRange = 1e4;
/// Inversion tolerance used wherever certificates are built or re-checked.
inline constexpr double kCertificateInversionTol = 1e-12;
inline constexpr int kConstructionAttempts = 20;

struct AlignmentResult {
    Vector x1;
    double alpha = 0.0;
    double angle = 0.0;  // angle between the attention output and c
    bool bracketed = false;
    bool trivial = false;  // M x0 was already parallel to c and x1 = x0
};

/// Finds x1 = alpha M^{-1} c - x0, with M = W_o W_v, such that the attention
/// output of query x0 over [x0, x1] points along c within angle_tol.
/// Requires a single head with invertible M.
/// Throws PerpendicularObstruction when W_q x0 is orthogonal to W_k M^{-1} c,
/// and NoAlignment when no alpha in range points along +c (the solution for
/// -c then exists instead).
AlignmentResult solve_parallel_alignment_detail(std::span<const double> x0, std::span<const double> c,
                                                const TransformerLayerWeights& layer, double angle_tol = kAngleTol);

inline Vector solve_parallel_alignment(std::span<const double> x0, std::span<const double> c,
                                       const TransformerLayerWeights& layer, double angle_tol = kAngleTol) {
    return solve_parallel_alignment_detail(x0, c, layer, angle_tol).x1;
}

/// Tries c, then -c. Returns the alignment and the direction actually used.
AlignmentResult align_up_to_sign(std::span<const double> x0, Vector& c, const TransformerLayerWeights& layer,
                                 double angle_tol = kAngleTol);

struct UnlearnableCertificate {
    Vector c1;
    Vector c2;
    std::array<double, 2> angle_residuals{};
    double cone_margin = 0.0;
    Vector a;  // MLP preimage of the first supervised target
    Vector b;  // MLP preimage of the second supervised target
    std::size_t attempts = 0;
};

struct UnlearnablePair {
    SeqDataset dataset;
    UnlearnableCertificate certificate;
};

/// Two examples sharing the last token x0 that no prompt of any length can fit.
UnlearnablePair build_unlearnable_pair(RngSeed seed, std::size_t d, const TransformerLayerWeights& layer);

struct VerificationResult {
    bool ok = true;
    std::vector<std::string> reasons;
};

/// Recomputes preimages, angles, orthogonality and the cone margin from scratch.
VerificationResult verify_unlearnable_certificate(const SeqDataset& dataset, const UnlearnableCertificate& cert,
                                                  const TransformerLayerWeights& layer);

struct LowerBoundDataset {
    SeqDataset dataset;
    std::vector<Vector> directions;  // the c_i, equal to the last input tokens
    std::vector<Vector> preimages;   // a_i = MLP^{-1}(y_i1)
    double min_feature_gap = 0.0;    // smallest pairwise distance of the attention outputs
};

/// n examples [x_i0, x_i] for which memorization needs at least n prompt tokens.
/// Throws DimensionTooSmall when n >= d.
LowerBoundDataset build_lower_bound_dataset(RngSeed seed, std::size_t n, std::size_t d,
                                            const TransformerLayerWeights& layer);

/// Rank of W_v P A, where column i of A holds the head-0 softmax weights of the
/// last token of example i over the prompt columns.
std::size_t prompt_rank_condition(const Prompt& P, const SeqDataset& dataset, const TransformerLayerWeights& layer);

}  // namespace ptlab
