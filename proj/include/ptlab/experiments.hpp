#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ptlab/constructions.hpp"
#include "ptlab/io.hpp"
#include "ptlab/lipschitz.hpp"
#include "ptlab/transformer.hpp"
#include "ptlab/tuning.hpp"

namespace ptlab {

/// Layer used by the separation experiments: one head, W_o = I, contractive MLP.
TransformerLayerWeights experiment_layer(std::size_t d, RngSeed seed);

/// A depth-layer stack whose attention and MLP bounds are all equal to target
/// for inputs sampled in the ball of the given radius. constants receives the
/// compactness constants (estimated D inflated by 20%) the stack was scaled for.
TransformerStack make_certified_stack(std::size_t d, std::size_t depth, std::size_t m, double radius, double target,
                                      Rng& rng, CompactnessConstants& constants);

struct BoundsValidationOptions {
    std::size_t configs = 200;
    std::size_t pairs = 1000;
    std::size_t max_d = 8;
    std::size_t max_m = 6;
    std::size_t max_heads = 3;
};

struct BoundsValidationCase {
    std::size_t d = 0;
    std::size_t m = 0;
    std::size_t heads = 0;
    double D = 0.0;
    double head_ratio = 0.0;
    double head_bound = 0.0;
    double block_ratio = 0.0;
    double block_bound = 0.0;
    double layer_ratio = 0.0;
    double layer_bound = 0.0;

    bool violated() const noexcept {
        return head_ratio > head_bound || block_ratio > block_bound || layer_ratio > layer_bound;
    }
};

struct BoundsValidationReport {
    std::vector<BoundsValidationCase> cases;
    std::size_t violations = 0;
    double max_tightness = 0.0;  // largest empirical ratio / bound over all cases and maps
};

/// Config k draws its layer from mix_seed(seed, k). The single-head bound is
/// checked on head 0's value map X -> W_v X softmax, the block bound on the
/// summed attention and the layer bound on the full encoder layer.
BoundsValidationReport validate_bounds(RngSeed seed, const BoundsValidationOptions& opts = {});

struct Figure1Options {
    std::size_t d = 10;
    RngSeed layer_seed{1};
    std::vector<std::uint64_t> dataset_seeds{1, 2, 3};
    std::vector<std::size_t> lengths{1, 2, 5, 10, 20, 50, 100};
    std::size_t runs = 5;
    std::size_t lora_rank = 2;
    std::size_t prompt_steps = 50000;
    std::size_t finetune_steps = 20000;
};

struct BaselineSummary {
    double mean_mse = 0.0;
    double max_mse = 0.0;
    std::vector<double> final_losses;
};

struct Figure1Dataset {
    std::uint64_t seed = 0;
    UnlearnablePair pair;
    std::vector<SweepRow> prompt;
    BaselineSummary finetune;
    BaselineSummary lora;
};

struct Figure1Result {
    TransformerLayerWeights layer;
    std::vector<Figure1Dataset> datasets;
};

/// One shared layer, one unlearnable pair per dataset seed, a prompt-length
/// sweep and finetune / LoRA baselines on each. Baseline run r on dataset s
/// uses seed mix_seed(s, r).
Figure1Result figure1_experiment(const Figure1Options& opts = {});

io::Json figure1_to_json(const Figure1Result& result);

struct PromptNormOptions {
    std::size_t runs = 20;        // qualifying runs to collect
    std::size_t max_attempts = 200;
    std::size_t d = 6;
    std::size_t m = 2;
    std::size_t n = 3;
    std::size_t prompt_length = 4;
    std::size_t steps = 20000;
    double min_loss_drop = 10.0;  // a run qualifies when initial / final loss >= this
};

struct PromptNormRun {
    std::uint64_t seed = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double initial_norm = 0.0;
    double final_norm = 0.0;
};

struct PromptNormResult {
    std::vector<PromptNormRun> runs;  // qualifying runs only
    std::size_t attempts = 0;
    std::size_t increased = 0;
};

/// Toy prompt-tuning runs on random-target datasets. Attempt k builds its
/// layer and data from mix_seed(seed, k).
PromptNormResult prompt_norm_experiment(RngSeed seed, const PromptNormOptions& opts = {});

io::Json prompt_norm_to_json(const PromptNormResult& result);

struct PromptSearchResult {
    std::size_t samples = 0;
    double min_loss = 0.0;
    Prompt best;
};

/// Evaluates the loss of random prompts with lengths uniform on
/// [1, max_length] and entries uniform on [-range, range].
PromptSearchResult random_prompt_search(const TransformerLayerWeights& layer, const SeqDataset& dataset,
                                        std::size_t samples, std::size_t max_length, double range, RngSeed seed);

}  // namespace ptlab
