#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "ptlab/dataset.hpp"
#include "ptlab/rng.hpp"
#include "ptlab/transformer.hpp"

namespace ptlab {

enum class TrainMethod { Prompt, FinetuneMlp, Lora };

std::string_view to_string(TrainMethod method);
/// Accepts "prompt", "finetune", "finetune_mlp" and "lora".
TrainMethod parse_train_method(std::string_view name);

/// Additive low-rank factors: W_1 += B1 A1, W_2 += B2 A2, b_1 += delta_b1.
/// A1 is k x d, B1 is r x k, A2 is k x r, B2 is d x k.
struct LoraFactors {
    Matrix A1;
    Matrix B1;
    Matrix A2;
    Matrix B2;
    Vector delta_b1;

    std::size_t rank() const noexcept { return A1.rows(); }
    std::size_t parameter_count() const noexcept {
        return A1.size() + B1.size() + A2.size() + B2.size() + delta_b1.size();
    }
};

/// Standard zero-init LoRA: A factors uniform, B factors and delta_b1 zero.
LoraFactors init_lora(const MlpWeights& mlp, std::size_t rank, Rng& rng);

/// MLP weights with the factors folded in.
MlpWeights apply_lora(const MlpWeights& mlp, const LoraFactors& lora);

/// Everything a training run can touch. An absent mlp means the layer's own
/// MLP is used; an absent lora means no adapter.
struct TrainParams {
    Prompt prompt;
    std::optional<MlpWeights> mlp;
    std::optional<LoraFactors> lora;
};

struct LossGrad {
    double loss = 0.0;
    Matrix prompt;            // d x m_p
    MlpWeights mlp;           // gradient w.r.t. the effective MLP
    std::optional<LoraFactors> lora;
};

/// Per-element MSE over the masked output columns of [P, X_i] and its
/// gradient w.r.t. the prompt, the effective MLP weights and (when present)
/// the LoRA factors.
LossGrad loss_and_grad(const TransformerLayerWeights& layer, const TrainParams& params, const SeqDataset& dataset);

/// Loss only; agrees with the first member of loss_and_grad.
double evaluate_loss(const TransformerLayerWeights& layer, const TrainParams& params, const SeqDataset& dataset);

/// Contiguous views of the parameters optimized by a method.
std::vector<std::span<double>> trainable_blocks(TrainMethod method, TrainParams& params);
std::vector<std::span<const double>> gradient_blocks(TrainMethod method, const LossGrad& grad);

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Vector m;
    Vector v;
    std::size_t t = 0;
};

/// One bias-corrected Adam update in place. The state is sized on first use.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               const AdamOptions& opts = {});

struct TrainConfig {
    TrainMethod method = TrainMethod::Prompt;
    std::size_t steps = 50000;
    double learning_rate = 0.1;
    std::size_t prompt_length = 0;
    std::size_t lora_rank = 2;
    RngSeed seed{0};
    std::size_t log_every = 100;
    std::size_t convergence_window = 500;
    double convergence_tol = 1e-12;
    bool stop_on_convergence = true;

    /// Learning rate and step budget defaults for the method.
    static TrainConfig defaults(TrainMethod method);
    void validate() const;
};

struct TrainRecord {
    std::vector<std::pair<std::size_t, double>> loss_history;
    std::vector<std::pair<std::size_t, double>> prompt_spectral_norm_history;  // prompt method only
    TrainParams final_params;  // the iterate with the smallest loss
    bool converged = false;
    std::size_t steps_run = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;       // loss at final_params
    double last_iterate_loss = 0.0;  // loss at the last Adam iterate
};

/// Adam on the selected parameters. Convergence is declared when the best
/// loss so far improved by less than convergence_tol (relative) over the
/// last convergence_window steps. Fixed-rate Adam can jump away from a
/// minimum once its second-moment estimate decays, so the best iterate is
/// kept. Throws Diverged on a non-finite loss.
TrainRecord train(const TransformerLayerWeights& layer, const SeqDataset& dataset, const TrainConfig& config);

/// Initial parameters used by train for a config.
TrainParams initial_params(const TransformerLayerWeights& layer, const SeqDataset& dataset, const TrainConfig& config);

struct SweepRow {
    std::size_t prompt_length = 0;
    double mean_mse = 0.0;
    double std_mse = 0.0;
    std::size_t n_diverged = 0;
    std::vector<double> final_losses;  // non-diverged runs only
};

/// Trains `runs` seeds per prompt length. Run r of length L uses seed
/// mix_seed(mix_seed(config.seed, L), r). Diverged runs are counted and
/// excluded from the statistics.
std::vector<SweepRow> sweep_prompt_length(const TransformerLayerWeights& layer, const SeqDataset& dataset,
                                          std::span<const std::size_t> lengths, const TrainConfig& config,
                                          std::size_t runs = 5);

struct GradcheckOptions {
    std::size_t configs = 50;
    double h = 1e-5;
    double tol = 1e-5;
    double denominator_floor = 1e-6;
    double kink_margin = 1e-4;  // configs with a ReLU preactivation this close to 0 are resampled
};

struct GradcheckReport {
    std::size_t configs = 0;
    std::size_t coordinates = 0;
    std::size_t failures = 0;
    std::size_t resampled = 0;
    double max_rel_error_prompt = 0.0;
    double max_rel_error_mlp = 0.0;
    double max_rel_error_lora = 0.0;

    double max_rel_error() const noexcept;
    bool passed(double tol) const noexcept { return failures == 0 && max_rel_error() <= tol; }
};

/// Random small configurations (d <= 6, m <= 3, m_p <= 3, heads <= 2) checked
/// against central differences.
GradcheckReport run_gradcheck(RngSeed seed, const GradcheckOptions& opts = {});

/// Closed-form update that makes the MLP memorize the last column of every
/// example. Only the first n hidden units are rewritten.
struct LoraUpdate {
    Matrix W1_left;   // r x n, selects the rewritten units
    Matrix W1_right;  // n x d
    Matrix W2_left;   // d x n
    Matrix W2_right;  // n x r
    Vector delta_b1;  // r
    std::size_t parameter_count = 0;

    Vector direction;                // the unit vector a
    std::vector<std::size_t> order;  // examples sorted by projection
    Vector projections;              // z, sorted
    Vector thresholds;               // b_1 < z_1 < b_2 < ... < z_n
    double triangular_residual = 0.0;
};

MlpWeights apply_lora_update(const MlpWeights& mlp, const LoraUpdate& update);

/// Post-attention features attend_token(x, X) + x of the last column of every example.
std::vector<Vector> post_attention_features(const TransformerLayerWeights& layer, const SeqDataset& dataset);

LoraUpdate build_lora_memorizer(const TransformerLayerWeights& layer, const SeqDataset& dataset,
                                RngSeed seed = RngSeed{0});

}  // namespace ptlab
