// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "ptlab/constructions.hpp"
#include "ptlab/errors.hpp"
#include "ptlab/experiments.hpp"
#include "ptlab/inversion.hpp"
#include "ptlab/lipschitz.hpp"
#include "ptlab/numerics.hpp"
#include "ptlab/tuning.hpp"

using namespace ptlab;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Outcome gradient_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = run_gradcheck(RngSeed{1});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {rep.configs == 50 && rep.passed(1e-5) && secs <= 60.0,
            fmt("%zu configs, %zu coordinates, max rel err prompt %.2e mlp %.2e lora %.2e, %zu failures, %.1fs",
                rep.configs, rep.coordinates, rep.max_rel_error_prompt, rep.max_rel_error_mlp, rep.max_rel_error_lora,
                rep.failures, secs)};
}

Outcome lipschitz_soundness() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = validate_bounds(RngSeed{0}, {.configs = 200, .pairs = 1000, .max_d = 8, .max_m = 6});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {rep.cases.size() == 200 && rep.violations == 0 && secs <= 300.0,
            fmt("200 configs x 1000 pairs, %zu violations, max ratio/bound %.3f, %.1fs", rep.violations,
                rep.max_tightness, secs)};
}

Outcome mlp_inversion() {
    std::size_t failures = 0, max_iters = 0;
    double max_res = 0.0, max_err = 0.0, max_lip = 0.0;
    for (std::uint64_t k = 0; k < 100; ++k) {
        Rng rng(mix_seed(3, k));
        const std::size_t d = rng.uniform_int(2, 10), r = rng.uniform_int(2, 20);
        const auto mlp = init_mlp(d, r, true, rng);
        max_lip = std::max(max_lip, bound_mlp(mlp));
        const Vector x = rng.uniform_vector(d, -1.0, 1.0);
        const Vector y = mlp_token(x, mlp);
        FixedPointTrace trace;
        try {
            const Vector xh = invert_mlp(y, mlp, {.max_iter = 5000, .tol = 1e-8}, &trace);
            const double res = norm2(sub(mlp_token(xh, mlp), y)), err = norm2(sub(xh, x));
            max_res = std::max(max_res, res);
            max_err = std::max(max_err, err);
            max_iters = std::max(max_iters, trace.residuals.size());
            if (res > 1e-8 || err > 1e-7) ++failures;
        } catch (const Error&) {
            ++failures;
        }
    }
    return {failures == 0 && max_lip <= 0.9 + 1e-12 && max_iters <= 5000,
            fmt("100 MLPs (max ||W1||||W2|| %.6f), max iterations %zu, max residual %.2e, max recovery error %.2e, "
                "%zu failures",
                max_lip, max_iters, max_res, max_err, failures)};
}

Outcome stack_invertibility() {
    std::size_t failures = 0, uncertified = 0;
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 20; ++k) {
        Rng rng(mix_seed(4, k));
        const std::size_t depth = 2 + k % 2, d = rng.uniform_int(3, 6), m = rng.uniform_int(2, 4);
        CompactnessConstants c;
        const auto st = make_certified_stack(d, depth, m, 1.0, 0.8, rng, c);
        const auto cert = certify_invertible(st, c);
        if (!cert.certified) {
            ++uncertified;
            continue;
        }
        for (int t = 0; t < 50; ++t) {
            const Matrix X = sample_in_ball(d, m, 1.0, rng);
            try {
                const double e = spectral_norm(invert_stack(stack_forward(X, st), st, cert) - X);
                worst = std::max(worst, e);
                if (e > 1e-6) ++failures;
            } catch (const Error&) {
                ++failures;
            }
        }
    }
    return {failures == 0 && uncertified == 0,
            fmt("20 stacks of depth 2-3, 50 inputs each, %zu uncertified, max ||X_hat - X|| %.2e, %zu failures",
                uncertified, worst, failures)};
}

struct SharedFigure1 {
    Figure1Result result;
    double seconds = 0.0;
    bool ran = false;
};

SharedFigure1& figure1() {
    static SharedFigure1 shared;
    if (!shared.ran) {
        const auto t0 = std::chrono::steady_clock::now();
        shared.result = figure1_experiment();
        shared.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        shared.ran = true;
    }
    return shared;
}

double mean_at(const std::vector<SweepRow>& rows, std::size_t length) {
    for (const auto& r : rows)
        if (r.prompt_length == length) return r.mean_mse;
    return std::nan("");
}

Outcome figure1_reproduction() {
    const auto& f = figure1();
    bool ok = f.seconds <= 1800.0 && f.result.datasets.size() == 3;
    std::string detail;
    for (const auto& e : f.result.datasets) {
        double best_prompt = std::numeric_limits<double>::infinity();
        bool complete = e.prompt.size() == 7;
        for (const auto& r : e.prompt) {
            complete = complete && r.n_diverged == 0 && std::isfinite(r.mean_mse);
            best_prompt = std::min(best_prompt, r.mean_mse);
        }
        const double plateau = mean_at(e.prompt, 10) / mean_at(e.prompt, 100);
        const double separation = best_prompt / e.lora.mean_mse;
        const bool ds_ok = complete && e.finetune.max_mse <= 1e-10 && e.lora.max_mse <= 1e-10 && separation >= 1e6 &&
                           plateau <= 100.0;
        ok = ok && ds_ok;
        detail += fmt("[seed %llu: finetune %.1e, lora %.1e, best prompt %.3e, prompt/lora %.1e, L10/L100 %.2f] ",
                      static_cast<unsigned long long>(e.seed), e.finetune.max_mse, e.lora.max_mse, best_prompt,
                      separation, plateau);
    }
    return {ok, detail + fmt("%.0fs", f.seconds)};
}

Outcome unlearnable_certificates() {
    const auto layer = experiment_layer(10, RngSeed{1});
    std::size_t bad = 0, built = 0;
    double worst_angle = 0.0, min_margin = std::numeric_limits<double>::infinity();
    std::vector<UnlearnablePair> pairs;
    for (const auto& e : figure1().result.datasets) pairs.push_back(e.pair);
    for (std::uint64_t s = 4; s <= 20; ++s) {
        try {
            pairs.push_back(build_unlearnable_pair(RngSeed{s}, 10, layer));
        } catch (const Error&) {
            ++bad;
        }
    }
    for (const auto& p : pairs) {
        ++built;
        const auto v = verify_unlearnable_certificate(p.dataset, p.certificate, layer);
        const double angle = std::max(p.certificate.angle_residuals[0], p.certificate.angle_residuals[1]);
        worst_angle = std::max(worst_angle, angle);
        min_margin = std::min(min_margin, p.certificate.cone_margin);
        if (!v.ok || angle >= 1e-4 || p.certificate.cone_margin <= 1e-7 ||
            std::abs(dot(p.certificate.c1, p.certificate.c2)) > 1e-9)
            ++bad;
    }
    double min_search = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < 3 && i < pairs.size(); ++i)
        min_search = std::min(min_search,
                              random_prompt_search(layer, pairs[i].dataset, 1000000, 50, 10.0, RngSeed{600 + i}).min_loss);
    return {bad == 0 && built == 20 && min_search >= 1e-3,
            fmt("%zu certificates, %zu rejected, max angle residual %.2e, min cone margin %.3e, "
                "min MSE over 3 x 1e6 random prompts %.3e",
                built, bad, worst_angle, min_margin, min_search)};
}

Outcome lora_memorizer() {
    std::size_t failures = 0;
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 50; ++k) {
        Rng rng(mix_seed(7, k));
        const std::size_t n = rng.uniform_int(1, 9), m = rng.uniform_int(1, 4);
        const auto layer = init_layer({.d = 10, .heads = 1, .hidden = 10}, rng);
        SeqDataset ds;
        ds.loss_mask = {m - 1};
        for (std::size_t i = 0; i < n; ++i)
            ds.examples.push_back({rng.uniform_matrix(10, m, 0, 1), rng.uniform_matrix(10, m, 0, 1)});
        try {
            const auto u = build_lora_memorizer(layer, ds, RngSeed{k});
            TransformerLayerWeights updated = layer;
            updated.mlp = apply_lora_update(layer.mlp, u);
            double err = 0.0;
            for (const auto& ex : ds.examples) {
                const Matrix Y = layer_forward(ex.X, updated);
                for (std::size_t r = 0; r < 10; ++r) err = std::max(err, std::abs(Y(r, m - 1) - ex.Y(r, m - 1)));
            }
            worst = std::max(worst, err);
            if (err > 1e-6 || u.parameter_count > (4 * n + 1) * 10) ++failures;
        } catch (const Error&) {
            ++failures;
        }
    }
    return {failures == 0, fmt("50 datasets at d = r = 10, max abs error %.2e, %zu failures", worst, failures)};
}

Outcome lower_bound() {
    std::size_t violations = 0, missing_witness = 0;
    for (std::size_t n = 2; n <= 5; ++n) {
        Rng rng(mix_seed(8, n));
        const auto layer = init_layer({.d = 10, .heads = 1, .contractive_mlp = true}, rng);
        const auto lb = build_lower_bound_dataset(RngSeed{n}, n, 10, layer);
        for (std::size_t mp = 1; mp <= n; ++mp) {
            bool witness = false;
            for (int t = 0; t < 100; ++t) {
                const Prompt P{rng.uniform_matrix(10, mp, 0, 1)};
                const std::size_t rk = prompt_rank_condition(P, lb.dataset, layer);
                if (rk > mp || (mp < n && rk >= n)) ++violations;
                if (rk == n) witness = true;
            }
            if (mp == n && !witness) ++missing_witness;
        }
    }
    return {violations == 0 && missing_witness == 0,
            fmt("n = 2..5, m_p = 1..n, 100 prompts each, %zu rank violations, %zu cases without a rank-n witness",
                violations, missing_witness)};
}

Outcome prompt_norm() {
    const auto res = prompt_norm_experiment(RngSeed{0});
    const double frac = res.runs.empty() ? 0.0 : double(res.increased) / double(res.runs.size());
    return {res.runs.size() == 20 && frac >= 0.9,
            fmt("%zu qualifying runs out of %zu attempts, norm increased in %zu (%.0f%%)", res.runs.size(),
                res.attempts, res.increased, 100.0 * frac)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    std::vector<int> only;
    app.add_option("--only", only, "Criteria to run")->delimiter(',')->check(CLI::Range(1, 9));
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"gradient oracle", gradient_oracle},
        {"Lipschitz soundness", lipschitz_soundness},
        {"MLP inversion", mlp_inversion},
        {"stack invertibility", stack_invertibility},
        {"prompt tuning vs fine-tuning separation", figure1_reproduction},
        {"unlearnable certificates", unlearnable_certificates},
        {"LoRA memorizer", lora_memorizer},
        {"prompt-token lower bound", lower_bound},
        {"prompt norm growth", prompt_norm},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!only.empty() && std::find(only.begin(), only.end(), int(i + 1)) == only.end()) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("criterion %zu %s %s: %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
        failed += !o.pass;
    }
    return failed == 0 ? 0 : 1;
}
