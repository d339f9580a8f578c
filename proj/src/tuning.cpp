#include "ptlab/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ptlab/errors.hpp"
#include "ptlab/numerics.hpp"
#include "ptlab/parallel.hpp"

namespace ptlab {

std::string_view to_string(TrainMethod method) {
    switch (method) {
        case TrainMethod::Prompt: return "prompt";
        case TrainMethod::FinetuneMlp: return "finetune";
        case TrainMethod::Lora: return "lora";
    }
    return "unknown";
}

TrainMethod parse_train_method(std::string_view name) {
    if (name == "prompt") return TrainMethod::Prompt;
    if (name == "finetune" || name == "finetune_mlp") return TrainMethod::FinetuneMlp;
    if (name == "lora") return TrainMethod::Lora;
    throw Error(ErrorKind::InvalidInput, "unknown training method '" + std::string(name) + "'");
}

LoraFactors init_lora(const MlpWeights& mlp, std::size_t rank, Rng& rng) {
    require(rank >= 1, ErrorKind::InvalidInput, "LoRA rank must be positive");
    const std::size_t d = mlp.d(), r = mlp.width();
    LoraFactors f;
    const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(r));
    f.A1 = rng.uniform_matrix(rank, d, -s1, s1);
    f.B1 = Matrix(r, rank);
    f.A2 = rng.uniform_matrix(rank, r, -s2, s2);
    f.B2 = Matrix(d, rank);
    f.delta_b1 = Vector(r, 0.0);
    return f;
}

namespace {

void check_lora_shapes(const MlpWeights& mlp, const LoraFactors& f) {
    const std::size_t d = mlp.d(), r = mlp.width(), k = f.rank();
    const bool ok = f.A1.rows() == k && f.A1.cols() == d && f.B1.rows() == r && f.B1.cols() == k &&
                    f.A2.rows() == k && f.A2.cols() == r && f.B2.rows() == d && f.B2.cols() == k &&
                    f.delta_b1.size() == r;
    require(ok, ErrorKind::InvalidInput, "LoRA factor shapes do not match the MLP");
}

}  // namespace

MlpWeights apply_lora(const MlpWeights& mlp, const LoraFactors& lora) {
    check_lora_shapes(mlp, lora);
    MlpWeights out = mlp;
    out.W_1 += lora.B1 * lora.A1;
    out.W_2 += lora.B2 * lora.A2;
    axpy(1.0, lora.delta_b1, out.b_1);
    return out;
}

namespace {

struct HeadCache {
    Matrix KQ;  // W_k^T W_q
    Matrix V;   // W_o W_v
};

std::vector<HeadCache> head_caches(const TransformerLayerWeights& layer) {
    std::vector<HeadCache> out;
    out.reserve(layer.heads.size());
    for (const auto& h : layer.heads) out.push_back({h.W_k.transpose() * h.W_q, h.W_o * h.W_v});
    return out;
}

MlpWeights effective_mlp(const TransformerLayerWeights& layer, const TrainParams& params) {
    const MlpWeights& base = params.mlp ? *params.mlp : layer.mlp;
    return params.lora ? apply_lora(base, *params.lora) : base;
}

void check_inputs(const TransformerLayerWeights& layer, const TrainParams& params, const SeqDataset& ds) {
    ds.validate();
    require(!layer.heads.empty(), ErrorKind::InvalidInput, "layer has no attention heads");
    require(layer.d() == ds.d(), ErrorKind::InvalidInput, "dataset and layer dimensions differ");
    require(params.prompt.length() == 0 || params.prompt.tokens.rows() == ds.d(), ErrorKind::InvalidInput,
            "prompt dimension differs from the dataset");
    if (params.mlp) {
        params.mlp->validate();
        require(params.mlp->d() == layer.d() && params.mlp->width() == layer.mlp.width(), ErrorKind::InvalidInput,
                "trainable MLP shape differs from the layer");
    }
    if (params.lora) check_lora_shapes(params.mlp ? *params.mlp : layer.mlp, *params.lora);
}

LossGrad evaluate(const TransformerLayerWeights& layer, const TrainParams& params, const SeqDataset& ds,
                  bool want_grad) {
    check_inputs(layer, params, ds);
    const std::size_t d = ds.d(), mp = params.prompt.length(), r = layer.mlp.width();
    const auto heads = head_caches(layer);
    const MlpWeights mlp = effective_mlp(layer, params);
    const double count = static_cast<double>(ds.size() * ds.loss_mask.size() * d);

    LossGrad out;
    if (want_grad) {
        out.prompt = Matrix(d, mp);
        out.mlp = MlpWeights{Matrix(r, d), Vector(r, 0.0), Matrix(d, r), Vector(d, 0.0)};
    }

    std::vector<Vector> kq(heads.size()), a(heads.size()), dza(heads.size());
    Vector pre(r), hid(r), y(d), dy(d), dpre(r), du(d);
    for (const auto& ex : ds.examples) {
        const Matrix Z = mp == 0 ? ex.X : hcat(params.prompt.tokens, ex.X);
        for (std::size_t j : ds.loss_mask) {
            const Vector zq = Z.col(mp + j);
            Vector u = zq;
            for (std::size_t h = 0; h < heads.size(); ++h) {
                kq[h] = heads[h].KQ * zq;
                a[h] = softmax(transpose_times(Z, kq[h]));
                const Vector o = heads[h].V * (Z * a[h]);
                axpy(1.0, o, u);
            }
            for (std::size_t i = 0; i < r; ++i) {
                pre[i] = dot(mlp.W_1.row(i), u) + mlp.b_1[i];
                hid[i] = pre[i] > 0.0 ? pre[i] : 0.0;
            }
            const Vector w2h = mlp.W_2 * hid;
            for (std::size_t i = 0; i < d; ++i) {
                y[i] = u[i] + w2h[i] + mlp.b_2[i];
                const double diff = y[i] - ex.Y(i, j);
                out.loss += diff * diff;
                dy[i] = 2.0 * diff / count;
            }
            if (!want_grad) continue;

            const Vector dh = transpose_times(mlp.W_2, dy);
            for (std::size_t i = 0; i < r; ++i) dpre[i] = pre[i] > 0.0 ? dh[i] : 0.0;
            out.mlp.W_2 += outer(dy, hid);
            axpy(1.0, dy, out.mlp.b_2);
            out.mlp.W_1 += outer(dpre, u);
            axpy(1.0, dpre, out.mlp.b_1);
            if (mp == 0) continue;

            du = add(dy, transpose_times(mlp.W_1, dpre));
            for (std::size_t h = 0; h < heads.size(); ++h) {
                dza[h] = transpose_times(heads[h].V, du);
                const Vector da = transpose_times(Z, dza[h]);
                const double mean = dot(a[h], da);
                for (std::size_t c = 0; c < mp; ++c) {
                    const double ds_c = a[h][c] * (da[c] - mean);
                    for (std::size_t i = 0; i < d; ++i) out.prompt(i, c) += dza[h][i] * a[h][c] + kq[h][i] * ds_c;
                }
            }
        }
    }
    out.loss /= count;

    if (want_grad && params.lora) {
        const auto& f = *params.lora;
        LoraFactors g;
        g.B1 = out.mlp.W_1 * f.A1.transpose();
        g.A1 = f.B1.transpose() * out.mlp.W_1;
        g.B2 = out.mlp.W_2 * f.A2.transpose();
        g.A2 = f.B2.transpose() * out.mlp.W_2;
        g.delta_b1 = out.mlp.b_1;
        out.lora = std::move(g);
    }
    return out;
}

}  // namespace

LossGrad loss_and_grad(const TransformerLayerWeights& layer, const TrainParams& params, const SeqDataset& dataset) {
    return evaluate(layer, params, dataset, true);
}

double evaluate_loss(const TransformerLayerWeights& layer, const TrainParams& params, const SeqDataset& dataset) {
    return evaluate(layer, params, dataset, false).loss;
}

std::vector<std::span<double>> trainable_blocks(TrainMethod method, TrainParams& params) {
    switch (method) {
        case TrainMethod::Prompt: return {params.prompt.tokens.data()};
        case TrainMethod::FinetuneMlp: {
            require(params.mlp.has_value(), ErrorKind::InvalidInput, "fine-tuning needs trainable MLP weights");
            auto& m = *params.mlp;
            return {m.W_1.data(), m.b_1, m.W_2.data(), m.b_2};
        }
        case TrainMethod::Lora: {
            require(params.lora.has_value(), ErrorKind::InvalidInput, "LoRA training needs adapter factors");
            auto& f = *params.lora;
            return {f.A1.data(), f.B1.data(), f.A2.data(), f.B2.data(), f.delta_b1};
        }
    }
    return {};
}

std::vector<std::span<const double>> gradient_blocks(TrainMethod method, const LossGrad& grad) {
    switch (method) {
        case TrainMethod::Prompt: return {grad.prompt.data()};
        case TrainMethod::FinetuneMlp: {
            const auto& m = grad.mlp;
            return {m.W_1.data(), m.b_1, m.W_2.data(), m.b_2};
        }
        case TrainMethod::Lora: {
            require(grad.lora.has_value(), ErrorKind::InvalidInput, "gradient has no LoRA factors");
            const auto& f = *grad.lora;
            return {f.A1.data(), f.B1.data(), f.A2.data(), f.B2.data(), f.delta_b1};
        }
    }
    return {};
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               const AdamOptions& opts) {
    require(params.size() == grads.size(), ErrorKind::InvalidInput, "parameter and gradient sizes differ");
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
        state.t = 0;
    }
    ++state.t;
    const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = opts.beta1 * state.m[i] + (1.0 - opts.beta1) * grads[i];
        state.v[i] = opts.beta2 * state.v[i] + (1.0 - opts.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + opts.eps);
    }
}

TrainConfig TrainConfig::defaults(TrainMethod method) {
    TrainConfig c;
    c.method = method;
    if (method == TrainMethod::Prompt) {
        c.steps = 50000;
        c.learning_rate = 0.1;
    } else {
        c.steps = 20000;
        c.learning_rate = 1e-3;
    }
    return c;
}

void TrainConfig::validate() const {
    require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::InvalidInput,
            "learning rate must be positive");
    require(steps >= 1, ErrorKind::InvalidInput, "steps must be at least 1");
    require(log_every >= 1, ErrorKind::InvalidInput, "log_every must be at least 1");
    require(convergence_window >= 1, ErrorKind::InvalidInput, "convergence window must be at least 1");
    if (method == TrainMethod::Lora) require(lora_rank >= 1, ErrorKind::InvalidInput, "LoRA rank must be positive");
}

TrainParams initial_params(const TransformerLayerWeights& layer, const SeqDataset& dataset, const TrainConfig& config) {
    Rng rng(config.seed);
    TrainParams p;
    const std::size_t d = dataset.d();
    switch (config.method) {
        case TrainMethod::Prompt:
            p.prompt.tokens = rng.uniform_matrix(d, config.prompt_length, 0.0, 1.0);
            break;
        case TrainMethod::FinetuneMlp:
            p.prompt.tokens = Matrix(d, 0);
            p.mlp = layer.mlp;
            break;
        case TrainMethod::Lora:
            p.prompt.tokens = Matrix(d, 0);
            p.lora = init_lora(layer.mlp, config.lora_rank, rng);
            break;
    }
    return p;
}

TrainRecord train(const TransformerLayerWeights& layer, const SeqDataset& dataset, const TrainConfig& config) {
    config.validate();
    TrainRecord rec;
    TrainParams params = initial_params(layer, dataset, config);
    const auto blocks = trainable_blocks(config.method, params);
    std::vector<AdamState> states(blocks.size());
    const bool is_prompt = config.method == TrainMethod::Prompt;

    std::vector<double> best_so_far;
    best_so_far.reserve(config.steps + 1);
    double best = std::numeric_limits<double>::infinity();
    std::size_t last_logged = std::numeric_limits<std::size_t>::max();
    auto log = [&](std::size_t t, double loss) {
        if (last_logged == t) return;
        last_logged = t;
        rec.loss_history.emplace_back(t, loss);
        if (is_prompt) rec.prompt_spectral_norm_history.emplace_back(t, spectral_norm(params.prompt.tokens));
    };

    for (std::size_t t = 0;; ++t) {
        const LossGrad lg = loss_and_grad(layer, params, dataset);
        const auto grads = gradient_blocks(config.method, lg);
        bool finite = std::isfinite(lg.loss);
        for (const auto& g : grads)
            finite = finite && std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v); });
        if (!finite) throw Error(ErrorKind::Diverged, "non-finite loss or gradient at step " + std::to_string(t));

        if (t == 0) rec.initial_loss = lg.loss;
        if (lg.loss < best) {
            best = lg.loss;
            rec.final_params = params;
        }
        best_so_far.push_back(best);
        rec.last_iterate_loss = lg.loss;
        rec.steps_run = t;
        if (t % config.log_every == 0) log(t, lg.loss);

        if (!rec.converged && t >= config.convergence_window) {
            const double before = best_so_far[t - config.convergence_window];
            if (before - best <= config.convergence_tol * before) {
                rec.converged = true;
                if (config.stop_on_convergence) {
                    log(t, lg.loss);
                    break;
                }
            }
        }
        if (t == config.steps) {
            log(t, lg.loss);
            break;
        }
        for (std::size_t b = 0; b < blocks.size(); ++b)
            adam_step(blocks[b], grads[b], states[b], config.learning_rate);
    }
    rec.final_loss = best;
    return rec;
}

std::vector<SweepRow> sweep_prompt_length(const TransformerLayerWeights& layer, const SeqDataset& dataset,
                                          std::span<const std::size_t> lengths, const TrainConfig& config,
                                          std::size_t runs) {
    require(runs >= 1, ErrorKind::InvalidInput, "sweep needs at least one run per length");
    require(!lengths.empty(), ErrorKind::InvalidInput, "sweep needs at least one prompt length");
    config.validate();
    dataset.validate();

    struct Cell {
        bool diverged = false;
        double final_loss = 0.0;
    };
    std::vector<Cell> cells(lengths.size() * runs);
    parallel_for(cells.size(), [&](std::size_t, std::size_t idx) {
        const std::size_t li = idx / runs, run = idx % runs;
        TrainConfig c = config;
        c.method = TrainMethod::Prompt;
        c.prompt_length = lengths[li];
        c.seed = RngSeed{mix_seed(mix_seed(config.seed.value, lengths[li]), run)};
        try {
            cells[idx].final_loss = train(layer, dataset, c).final_loss;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Diverged) throw;
            cells[idx].diverged = true;
        }
    });

    std::vector<SweepRow> rows;
    for (std::size_t li = 0; li < lengths.size(); ++li) {
        SweepRow row;
        row.prompt_length = lengths[li];
        for (std::size_t run = 0; run < runs; ++run) {
            const Cell& c = cells[li * runs + run];
            if (c.diverged) {
                ++row.n_diverged;
                continue;
            }
            row.final_losses.push_back(c.final_loss);
        }
        const std::size_t k = row.final_losses.size();
        if (k == 0) {
            row.mean_mse = row.std_mse = std::numeric_limits<double>::quiet_NaN();
        } else {
            row.mean_mse = std::accumulate(row.final_losses.begin(), row.final_losses.end(), 0.0) / k;
            double ss = 0.0;
            for (double v : row.final_losses) ss += (v - row.mean_mse) * (v - row.mean_mse);
            row.std_mse = k > 1 ? std::sqrt(ss / (k - 1)) : 0.0;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

double GradcheckReport::max_rel_error() const noexcept {
    return std::max({max_rel_error_prompt, max_rel_error_mlp, max_rel_error_lora});
}

namespace {

struct GradcheckCase {
    TransformerLayerWeights layer;
    SeqDataset dataset;
    TrainParams params;
};

GradcheckCase random_gradcheck_case(Rng& rng) {
    GradcheckCase g;
    const std::size_t d = rng.uniform_int(2, 6);
    const std::size_t m = rng.uniform_int(1, 3);
    const std::size_t mp = rng.uniform_int(1, 3);
    const std::size_t heads = rng.uniform_int(1, 2);
    const std::size_t s = rng.uniform_int(1, d);
    const std::size_t r = rng.uniform_int(1, 6);
    const std::size_t k = rng.uniform_int(1, 2);
    const std::size_t n = rng.uniform_int(1, 3);
    g.layer = init_layer({.d = d, .heads = heads, .head_size = s, .hidden = r}, rng);
    for (std::size_t i = 0; i < n; ++i)
        g.dataset.examples.push_back({rng.uniform_matrix(d, m, 0.0, 1.0), rng.normal_matrix(d, m)});
    for (std::size_t c = 0; c < m; ++c)
        if (rng.uniform() < 0.5) g.dataset.loss_mask.push_back(c);
    if (g.dataset.loss_mask.empty()) g.dataset.loss_mask.push_back(m - 1);

    g.params.prompt.tokens = rng.uniform_matrix(d, mp, 0.0, 1.0);
    g.params.mlp = g.layer.mlp;
    LoraFactors f = init_lora(g.layer.mlp, k, rng);
    f.B1 = rng.uniform_matrix(r, k, -0.5, 0.5);
    f.B2 = rng.uniform_matrix(d, k, -0.5, 0.5);
    f.delta_b1 = rng.uniform_vector(r, -0.5, 0.5);
    g.params.lora = std::move(f);
    return g;
}

double min_abs_preactivation(const GradcheckCase& g) {
    const MlpWeights mlp = effective_mlp(g.layer, g.params);
    double out = std::numeric_limits<double>::infinity();
    for (const auto& ex : g.dataset.examples) {
        const Matrix Z = hcat(g.params.prompt.tokens, ex.X);
        for (std::size_t j : g.dataset.loss_mask) {
            const Vector zq = Z.col(g.params.prompt.length() + j);
            const Vector u = add(attend_token(zq, Z, g.layer), zq);
            for (std::size_t i = 0; i < mlp.width(); ++i)
                out = std::min(out, std::abs(dot(mlp.W_1.row(i), u) + mlp.b_1[i]));
        }
    }
    return out;
}

}  // namespace

GradcheckReport run_gradcheck(RngSeed seed, const GradcheckOptions& opts) {
    require(opts.h > 0.0 && opts.tol > 0.0, ErrorKind::InvalidInput, "gradcheck step and tolerance must be positive");
    GradcheckReport rep;
    for (std::size_t c = 0; c < opts.configs; ++c) {
        Rng rng(mix_seed(seed.value, c));
        GradcheckCase g = random_gradcheck_case(rng);
        while (min_abs_preactivation(g) < opts.kink_margin) {
            ++rep.resampled;
            g = random_gradcheck_case(rng);
        }
        const LossGrad lg = loss_and_grad(g.layer, g.params, g.dataset);
        for (TrainMethod method : {TrainMethod::Prompt, TrainMethod::FinetuneMlp, TrainMethod::Lora}) {
            const auto blocks = trainable_blocks(method, g.params);
            const auto grads = gradient_blocks(method, lg);
            double& worst = method == TrainMethod::Prompt        ? rep.max_rel_error_prompt
                            : method == TrainMethod::FinetuneMlp ? rep.max_rel_error_mlp
                                                                 : rep.max_rel_error_lora;
            for (std::size_t b = 0; b < blocks.size(); ++b) {
                for (std::size_t i = 0; i < blocks[b].size(); ++i) {
                    double& p = blocks[b][i];
                    const double saved = p;
                    p = saved + opts.h;
                    const double lp = evaluate_loss(g.layer, g.params, g.dataset);
                    p = saved - opts.h;
                    const double lm = evaluate_loss(g.layer, g.params, g.dataset);
                    p = saved;
                    const double fd = (lp - lm) / (2.0 * opts.h);
                    const double an = grads[b][i];
                    const double rel =
                        std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), opts.denominator_floor});
                    worst = std::max(worst, rel);
                    ++rep.coordinates;
                    if (!(rel <= opts.tol)) ++rep.failures;
                }
            }
        }
        ++rep.configs;
    }
    return rep;
}

MlpWeights apply_lora_update(const MlpWeights& mlp, const LoraUpdate& update) {
    const std::size_t d = mlp.d(), r = mlp.width(), n = update.W1_right.rows();
    const bool ok = update.W1_left.rows() == r && update.W1_left.cols() == n && update.W1_right.cols() == d &&
                    update.W2_left.rows() == d && update.W2_left.cols() == n && update.W2_right.rows() == n &&
                    update.W2_right.cols() == r && update.delta_b1.size() == r;
    require(ok, ErrorKind::InvalidInput, "LoRA update shapes do not match the MLP");
    MlpWeights out = mlp;
    out.W_1 += update.W1_left * update.W1_right;
    out.W_2 += update.W2_left * update.W2_right;
    axpy(1.0, update.delta_b1, out.b_1);
    return out;
}

std::vector<Vector> post_attention_features(const TransformerLayerWeights& layer, const SeqDataset& dataset) {
    dataset.validate();
    require(layer.d() == dataset.d(), ErrorKind::InvalidInput, "dataset and layer dimensions differ");
    std::vector<Vector> out;
    out.reserve(dataset.size());
    for (const auto& ex : dataset.examples) {
        const Vector x = ex.X.col(ex.X.cols() - 1);
        out.push_back(add(attend_token(x, ex.X, layer), x));
    }
    return out;
}

LoraUpdate build_lora_memorizer(const TransformerLayerWeights& layer, const SeqDataset& dataset, RngSeed seed) {
    layer.validate();
    const auto feats = post_attention_features(layer, dataset);
    const std::size_t n = dataset.size(), d = layer.d(), r = layer.mlp.width();
    require(r >= n, ErrorKind::WidthTooSmall,
            "MLP width " + std::to_string(r) + " is smaller than the " + std::to_string(n) + " examples");
    constexpr double kMinGap = 1e-6;
    constexpr int kResamples = 100;

    LoraUpdate u;
    Rng rng(seed);
    Vector z(n);
    bool found = false;
    for (int attempt = 0; attempt < kResamples && !found; ++attempt) {
        Vector a = rng.normal_vector(d);
        const double na = norm2(a);
        if (na == 0.0) continue;
        a = scaled(a, 1.0 / na);
        for (std::size_t i = 0; i < n; ++i) z[i] = dot(a, feats[i]);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t p, std::size_t q) { return z[p] < z[q]; });
        double gap = std::numeric_limits<double>::infinity();
        for (std::size_t i = 1; i < n; ++i) gap = std::min(gap, z[order[i]] - z[order[i - 1]]);
        if (gap >= kMinGap) {
            found = true;
            u.direction = std::move(a);
            u.order = std::move(order);
        }
    }
    require(found, ErrorKind::DegenerateFeatures, "post-attention features are not separable along any sampled direction");

    u.projections.resize(n);
    for (std::size_t i = 0; i < n; ++i) u.projections[i] = z[u.order[i]];
    const Vector& zs = u.projections;
    u.thresholds.resize(n);
    u.thresholds[0] = zs[0] - (n > 1 ? 0.5 * (zs[1] - zs[0]) : 0.5);
    for (std::size_t k = 1; k < n; ++k) u.thresholds[k] = 0.5 * (zs[k - 1] + zs[k]);
    const Vector& bs = u.thresholds;

    // Right-hand sides: what the rewritten units must add on top of the frozen ones.
    const MlpWeights& mlp = layer.mlp;
    std::vector<Vector> rhs(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t e = u.order[i];
        const auto& Y = dataset.examples[e].Y;
        Vector t = Y.col(Y.cols() - 1);
        const Vector& x = feats[e];
        for (std::size_t k = n; k < r; ++k) {
            const double act = std::max(0.0, dot(mlp.W_1.row(k), x) + mlp.b_1[k]);
            for (std::size_t j = 0; j < d; ++j) t[j] -= mlp.W_2(j, k) * act;
        }
        for (std::size_t j = 0; j < d; ++j) t[j] -= x[j] + mlp.b_2[j];
        rhs[i] = std::move(t);
    }

    // Forward substitution on sum_{k<=i} w_k (z_i - b_k) = rhs_i.
    std::vector<Vector> w(n, Vector(d, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        Vector acc = rhs[i];
        for (std::size_t k = 0; k < i; ++k) axpy(-(zs[i] - bs[k]), w[k], acc);
        w[i] = scaled(acc, 1.0 / (zs[i] - bs[i]));
    }
    for (std::size_t i = 0; i < n; ++i) {
        Vector acc = scaled(rhs[i], -1.0);
        for (std::size_t k = 0; k <= i; ++k) axpy(zs[i] - bs[k], w[k], acc);
        for (double v : acc) u.triangular_residual = std::max(u.triangular_residual, std::abs(v));
    }

    u.W1_left = Matrix(r, n);
    u.W1_right = Matrix(n, d);
    u.W2_left = Matrix(d, n);
    u.W2_right = Matrix(n, r);
    u.delta_b1 = Vector(r, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        u.W1_left(k, k) = 1.0;
        u.W2_right(k, k) = 1.0;
        for (std::size_t j = 0; j < d; ++j) {
            u.W1_right(k, j) = u.direction[j] - mlp.W_1(k, j);
            u.W2_left(j, k) = w[k][j] - mlp.W_2(j, k);
        }
        u.delta_b1[k] = -bs[k] - mlp.b_1[k];
    }
    u.parameter_count = u.W1_left.size() + u.W1_right.size() + u.W2_left.size() + u.W2_right.size() + u.delta_b1.size();
    return u;
}

}  // namespace ptlab
