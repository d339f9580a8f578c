#include "ptlab/experiments.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>

#include "ptlab/errors.hpp"
#include "ptlab/inversion.hpp"
#include "ptlab/numerics.hpp"
#include "ptlab/parallel.hpp"

namespace ptlab {

TransformerLayerWeights experiment_layer(std::size_t d, RngSeed seed) {
    Rng rng(seed);
    return init_layer({.d = d, .heads = 1, .contractive_mlp = true, .identity_output = true}, rng);
}

TransformerStack make_certified_stack(std::size_t d, std::size_t depth, std::size_t m, double radius, double target,
                                      Rng& rng, CompactnessConstants& constants) {
    require(depth >= 1, ErrorKind::InvalidInput, "stack depth must be at least 1");
    require(target > 0.0 && target < 1.0, ErrorKind::InvalidInput, "target bound must lie in (0, 1)");
    TransformerStack st;
    for (std::size_t l = 0; l < depth; ++l)
        st.layers.push_back(init_layer({.d = d, .heads = 2, .contractive_mlp = true}, rng));
    auto sampler = [&](Rng& r) { return sample_in_ball(d, m, radius, r); };
    // Scale front to back so each D reflects the already-scaled prefix.
    for (std::size_t l = 0; l < depth; ++l) {
        constants = estimate_compactness(st, sampler, 200, RngSeed{99});
        for (auto& D : constants.D_per_layer) D *= 1.2;
        scale_attention_to_bound(st.layers[l], constants.D_per_layer[l], m, target);
        rescale_mlp(st.layers[l].mlp, target);
    }
    constants = estimate_compactness(st, sampler, 200, RngSeed{99});
    for (auto& D : constants.D_per_layer) D *= 1.2;
    return st;
}

BoundsValidationReport validate_bounds(RngSeed seed, const BoundsValidationOptions& opts) {
    require(opts.configs >= 1 && opts.pairs >= 1, ErrorKind::InvalidInput, "need at least one config and pair");
    require(opts.max_d >= 1 && opts.max_m >= 1 && opts.max_heads >= 1, ErrorKind::InvalidInput,
            "dimension limits must be positive");
    BoundsValidationReport report;
    report.cases.resize(opts.configs);
    for (std::size_t k = 0; k < opts.configs; ++k) {
        const std::uint64_t s = mix_seed(seed.value, k);
        Rng rng(s);
        BoundsValidationCase& c = report.cases[k];
        c.d = rng.uniform_int(1, opts.max_d);
        c.m = rng.uniform_int(1, opts.max_m);
        c.heads = rng.uniform_int(1, opts.max_heads);
        c.D = rng.uniform(0.25, 2.0);
        const auto layer = init_layer({.d = c.d, .heads = c.heads}, rng);
        const auto& h = layer.heads[0];
        const EmpiricalLipschitzOptions eo{.d = c.d, .m = c.m, .n_pairs = opts.pairs, .input_radius = c.D};

        c.head_bound = bound_single_head(h, c.D, c.m);
        c.block_bound = bound_attention_block(layer, c.D, c.m);
        c.layer_bound = bound_encoder_layer(layer, c.D, c.m);
        c.head_ratio = empirical_lipschitz([&](const Matrix& X) { return h.W_v * X * softmax_matrix(X, h); },
                                           RngSeed{mix_seed(s, 1)}, eo);
        c.block_ratio =
            empirical_lipschitz([&](const Matrix& X) { return attend_seq(X, X, layer); }, RngSeed{mix_seed(s, 2)}, eo);
        c.layer_ratio =
            empirical_lipschitz([&](const Matrix& X) { return layer_forward(X, layer); }, RngSeed{mix_seed(s, 3)}, eo);

        if (c.violated()) ++report.violations;
        report.max_tightness = std::max({report.max_tightness, c.head_ratio / c.head_bound,
                                         c.block_ratio / c.block_bound, c.layer_ratio / c.layer_bound});
    }
    return report;
}

namespace {

BaselineSummary run_baseline(const TransformerLayerWeights& layer, const SeqDataset& ds, TrainMethod method,
                             const Figure1Options& opts, std::uint64_t dataset_seed) {
    BaselineSummary out;
    out.final_losses.resize(opts.runs);
    parallel_for(opts.runs, [&](std::size_t, std::size_t r) {
        TrainConfig cfg = TrainConfig::defaults(method);
        cfg.steps = opts.finetune_steps;
        cfg.lora_rank = opts.lora_rank;
        cfg.seed = RngSeed{mix_seed(dataset_seed, r)};
        out.final_losses[r] = train(layer, ds, cfg).final_loss;
    });
    out.mean_mse = std::accumulate(out.final_losses.begin(), out.final_losses.end(), 0.0) / double(opts.runs);
    out.max_mse = *std::max_element(out.final_losses.begin(), out.final_losses.end());
    return out;
}

io::Json losses_to_json(const std::vector<double>& v) {
    io::Json a = io::Json::array();
    for (double x : v) a.push_back(io::number_to_json(x));
    return a;
}

}  // namespace

Figure1Result figure1_experiment(const Figure1Options& opts) {
    require(!opts.dataset_seeds.empty(), ErrorKind::InvalidInput, "figure 1 needs at least one dataset seed");
    require(opts.runs >= 1, ErrorKind::InvalidInput, "figure 1 needs at least one run");
    Figure1Result result;
    result.layer = experiment_layer(opts.d, opts.layer_seed);
    for (std::uint64_t s : opts.dataset_seeds) {
        Figure1Dataset entry;
        entry.seed = s;
        entry.pair = build_unlearnable_pair(RngSeed{s}, opts.d, result.layer);
        TrainConfig cfg = TrainConfig::defaults(TrainMethod::Prompt);
        cfg.steps = opts.prompt_steps;
        cfg.seed = RngSeed{s};
        entry.prompt = sweep_prompt_length(result.layer, entry.pair.dataset, opts.lengths, cfg, opts.runs);
        entry.finetune = run_baseline(result.layer, entry.pair.dataset, TrainMethod::FinetuneMlp, opts, s);
        entry.lora = run_baseline(result.layer, entry.pair.dataset, TrainMethod::Lora, opts, s);
        result.datasets.push_back(std::move(entry));
    }
    return result;
}

io::Json figure1_to_json(const Figure1Result& result) {
    io::Json datasets = io::Json::array();
    for (const auto& e : result.datasets) {
        io::Json baseline = io::Json::object();
        for (const auto& [name, b] : {std::pair{"finetune", &e.finetune}, std::pair{"lora", &e.lora}})
            baseline[name] = {{"mean_mse", io::number_to_json(b->mean_mse)},
                              {"max_mse", io::number_to_json(b->max_mse)},
                              {"final_losses", losses_to_json(b->final_losses)}};
        datasets.push_back({{"seed", e.seed},
                            {"prompt", io::sweep_to_json(e.prompt)},
                            {"finetune", baseline["finetune"]},
                            {"lora", baseline["lora"]},
                            {"certificate", io::certificate_to_json(e.pair.certificate)}});
    }
    return {{"d", result.layer.d()}, {"datasets", datasets}};
}

PromptNormResult prompt_norm_experiment(RngSeed seed, const PromptNormOptions& opts) {
    require(opts.runs >= 1 && opts.max_attempts >= opts.runs, ErrorKind::InvalidInput,
            "max_attempts must be at least runs");
    require(opts.d >= 1 && opts.m >= 1 && opts.n >= 1 && opts.prompt_length >= 1, ErrorKind::InvalidInput,
            "prompt-norm sizes must be positive");
    PromptNormResult result;
    // Attempts run in batches of one per worker and are consumed in index
    // order, so the result does not depend on the worker count.
    const std::size_t batch = worker_count(opts.max_attempts);
    while (result.runs.size() < opts.runs && result.attempts < opts.max_attempts) {
        const std::size_t lo = result.attempts, hi = std::min(opts.max_attempts, lo + batch);
        std::vector<std::optional<PromptNormRun>> found(hi - lo);
        parallel_for(hi - lo, [&](std::size_t, std::size_t i) {
            const std::uint64_t s = mix_seed(seed.value, lo + i);
            Rng rng(s);
            const auto layer = init_layer({.d = opts.d, .heads = 1}, rng);
            SeqDataset ds;
            ds.loss_mask = {opts.m - 1};
            for (std::size_t k = 0; k < opts.n; ++k)
                ds.examples.push_back({rng.uniform_matrix(opts.d, opts.m, 0, 1), rng.uniform_matrix(opts.d, opts.m, 0, 1)});
            TrainConfig cfg = TrainConfig::defaults(TrainMethod::Prompt);
            cfg.prompt_length = opts.prompt_length;
            cfg.steps = opts.steps;
            cfg.seed = RngSeed{mix_seed(s, 1)};
            const auto rec = train(layer, ds, cfg);
            if (rec.initial_loss < opts.min_loss_drop * rec.final_loss) return;
            found[i] = PromptNormRun{s, rec.initial_loss, rec.final_loss, rec.prompt_spectral_norm_history.front().second,
                                     spectral_norm(rec.final_params.prompt.tokens)};
        });
        for (const auto& f : found) {
            ++result.attempts;
            if (!f) continue;
            result.runs.push_back(*f);
            if (f->final_norm > f->initial_norm) ++result.increased;
            if (result.runs.size() == opts.runs) break;
        }
    }
    return result;
}

io::Json prompt_norm_to_json(const PromptNormResult& result) {
    io::Json runs = io::Json::array();
    for (const auto& r : result.runs)
        runs.push_back({{"seed", r.seed},
                        {"initial_loss", io::number_to_json(r.initial_loss)},
                        {"final_loss", io::number_to_json(r.final_loss)},
                        {"initial_norm", io::number_to_json(r.initial_norm)},
                        {"final_norm", io::number_to_json(r.final_norm)}});
    return {{"attempts", result.attempts}, {"qualifying", result.runs.size()}, {"increased", result.increased},
            {"runs", runs}};
}

PromptSearchResult random_prompt_search(const TransformerLayerWeights& layer, const SeqDataset& dataset,
                                        std::size_t samples, std::size_t max_length, double range, RngSeed seed) {
    require(samples >= 1 && max_length >= 1 && range > 0.0, ErrorKind::InvalidInput, "invalid prompt search settings");
    dataset.validate();
    constexpr std::size_t kChunk = 4096;
    const std::size_t chunks = (samples + kChunk - 1) / kChunk;
    std::vector<PromptSearchResult> best(chunks, {0, std::numeric_limits<double>::infinity(), {}});
    parallel_for(chunks, [&](std::size_t, std::size_t c) {
        Rng rng(mix_seed(seed.value, c));
        const std::size_t hi = std::min(samples, (c + 1) * kChunk);
        for (std::size_t k = c * kChunk; k < hi; ++k) {
            const std::size_t L = rng.uniform_int(1, max_length);
            TrainParams p{Prompt{rng.uniform_matrix(layer.d(), L, -range, range)}, std::nullopt, std::nullopt};
            const double loss = evaluate_loss(layer, p, dataset);
            ++best[c].samples;
            if (loss < best[c].min_loss) {
                best[c].min_loss = loss;
                best[c].best = std::move(p.prompt);
            }
        }
    });
    PromptSearchResult out{0, std::numeric_limits<double>::infinity(), {}};
    for (auto& b : best) {
        out.samples += b.samples;
        if (b.min_loss < out.min_loss) {
            out.min_loss = b.min_loss;
            out.best = std::move(b.best);
        }
    }
    return out;
}

}  // namespace ptlab
