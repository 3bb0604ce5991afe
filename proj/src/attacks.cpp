#include "mup/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mup {

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    return msg;
}

std::string_view inner_name(InnerGradient g) {
    switch (g) {
        case InnerGradient::plain: return "mim";
        case InnerGradient::sim: return "sim";
        case InnerGradient::taigr: return "taigr";
    }
    return "?";
}

Batch single(const Batch& batch, std::size_t b, std::span<const Real> x) {
    Shape s = batch.images.shape();
    s[0] = 1;
    return Batch{Tensor(std::move(s), std::vector<Real>(x.begin(), x.end())), {batch.labels[b]}};
}

}  // namespace

std::string_view to_string(InnerGradient g) noexcept {
    switch (g) {
        case InnerGradient::plain: return "plain";
        case InnerGradient::sim: return "sim";
        case InnerGradient::taigr: return "taigr";
    }
    return "?";
}

std::string_view to_string(Masking m) noexcept {
    switch (m) {
        case Masking::none: return "none";
        case Masking::mup: return "mup";
        case Masking::gn: return "gn";
    }
    return "?";
}

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

std::vector<std::string> AttackConfig::problems() const {
    std::vector<std::string> p;
    if (!(epsilon >= 0 && std::isfinite(epsilon))) p.push_back("epsilon must be >= 0");
    if (!(beta > 0 && std::isfinite(beta))) p.push_back("beta must be > 0");
    if (iterations < 1) p.push_back("iterations (N) must be >= 1");
    if (!(mu >= 0 && std::isfinite(mu))) p.push_back("mu must be >= 0");
    if (inner == InnerGradient::sim && sim_copies < 1) p.push_back("sim copies (m) must be >= 1");
    if (inner == InnerGradient::taigr && taig_samples < 1) p.push_back("taigr samples (S) must be >= 1");
    if (masking == Masking::mup && !(ratio >= 0 && ratio < 1)) p.push_back("ratio r must satisfy 0 <= r < 1");
    if (masking != Masking::mup && ratio != 0) p.push_back("ratio r is set but masking is not mup");
    if (masking == Masking::gn && !(drop_rate > 0 && drop_rate < 1)) p.push_back("drop rate p must satisfy 0 < p < 1");
    return p;
}

void AttackConfig::validate() const {
    auto p = problems();
    if (!p.empty()) throw ConfigError(std::move(p));
}

AttackConfig apply_method(const std::string& method, AttackConfig base) {
    AttackConfig cfg = base;
    cfg.masking = Masking::none;
    cfg.inner = InnerGradient::plain;
    if (method == "fgsm") {
        cfg.iterations = 1;
        cfg.mu = 0;
        cfg.beta = cfg.epsilon;
        cfg.ratio = 0;
        return cfg;
    }
    if (method == "ifgsm") {
        cfg.mu = 0;
        cfg.ratio = 0;
        return cfg;
    }
    std::string rest = method;
    auto strip = [&rest](std::string_view prefix) {
        if (rest.rfind(prefix, 0) == 0) {
            rest = rest.substr(prefix.size());
            return true;
        }
        return false;
    };
    if (strip("mupabs-")) {
        cfg.masking = Masking::mup;
        cfg.metric = Metric::magnitude;
    } else if (strip("mup-")) {
        cfg.masking = Masking::mup;
        cfg.metric = Metric::taylor;
    } else if (strip("gn-")) {
        cfg.masking = Masking::gn;
    }
    if (cfg.masking != Masking::mup) cfg.ratio = 0;
    if (rest == "mim") cfg.inner = InnerGradient::plain;
    else if (rest == "sim") cfg.inner = InnerGradient::sim;
    else if (rest == "taigr") cfg.inner = InnerGradient::taigr;
    else throw ConfigError({"unknown attack method '" + method + "'"});
    return cfg;
}

std::string method_name(const AttackConfig& cfg) {
    std::string base(inner_name(cfg.inner));
    if (cfg.masking == Masking::none && cfg.inner == InnerGradient::plain && cfg.mu == 0)
        return cfg.iterations == 1 && cfg.beta == cfg.epsilon ? "fgsm" : "ifgsm";
    switch (cfg.masking) {
        case Masking::none: return base;
        case Masking::mup: return (cfg.metric == Metric::taylor ? "mup-" : "mupabs-") + base;
        case Masking::gn: return "gn-" + base;
    }
    return base;
}

UniformSource rng_source(Rng& rng) {
    return [&rng](std::span<Real> out, Real lo, Real hi) {
        for (Real& v : out) v = rng.uniform(lo, hi);
    };
}

void ball_bounds(std::span<const Real> x0, Real eps, std::span<Real> lower, std::span<Real> upper) {
    constexpr Real inf = std::numeric_limits<Real>::infinity();
    for (std::size_t i = 0; i < x0.size(); ++i) {
        // x0 +- eps may round outward; nudge until the difference is within eps.
        Real hi = std::min(x0[i] + eps, Real(255));
        while (hi - x0[i] > eps) hi = std::nextafter(hi, -inf);
        Real lo = std::max(x0[i] - eps, Real(0));
        while (x0[i] - lo > eps) lo = std::nextafter(lo, inf);
        lower[i] = lo;
        upper[i] = hi;
    }
}

Tensor clip_ball(const Tensor& x, const Tensor& x0, Real eps) {
    if (x.shape() != x0.shape())
        throw ShapeError("clip_ball: shapes " + to_string(x.shape()) + " and " + to_string(x0.shape()) + " differ");
    std::vector<Real> lower(x.size()), upper(x.size());
    ball_bounds(x0.data(), eps, lower, upper);
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) {
        Real v = out[i];
        v = v < lower[i] ? lower[i] : v;
        v = v > upper[i] ? upper[i] : v;
        out[i] = v;
    }
    return out;
}

Tensor inner_gradient(const Network& net, const Batch& batch, const AttackConfig& cfg, const EvalOptions& opts,
                      const UniformSource& noise) {
    const std::size_t B = batch.size();
    const std::size_t n = batch.images.row_size();
    std::size_t copies = 1;
    if (cfg.inner == InnerGradient::sim) copies = cfg.sim_copies;
    if (cfg.inner == InnerGradient::taigr) copies = cfg.taig_samples;
    if (copies == 0) throw ConfigError({"inner gradient needs at least one sample"});

    // Expanded batch, sample-major: rows [i * B, (i + 1) * B) hold sample i.
    Shape s = batch.images.shape();
    s[0] = copies * B;
    std::vector<Real> xs(copies * B * n);
    std::vector<Real> factor(copies);
    std::vector<Real> u;
    for (std::size_t i = 0; i < copies; ++i) {
        Real* dst = xs.data() + i * B * n;
        std::span<const Real> x = batch.images.data();
        switch (cfg.inner) {
            case InnerGradient::plain:
                std::copy(x.begin(), x.end(), dst);
                factor[i] = 1;
                break;
            case InnerGradient::sim:
                for (std::size_t j = 0; j < x.size(); ++j) dst[j] = std::ldexp(x[j], -static_cast<int>(i));
                factor[i] = std::ldexp(Real(1), -static_cast<int>(i));
                break;
            case InnerGradient::taigr: {
                const Real a = static_cast<Real>(i + 1) / static_cast<Real>(cfg.taig_samples);
                u.resize(x.size());
                if (!noise) throw std::invalid_argument("taigr inner gradient needs a uniform source");
                noise(u, -cfg.epsilon, cfg.epsilon);
                for (std::size_t j = 0; j < x.size(); ++j) dst[j] = a * x[j] + u[j];
                factor[i] = a;
                break;
            }
        }
    }
    std::vector<std::size_t> labels;
    labels.reserve(copies * B);
    for (std::size_t i = 0; i < copies; ++i) labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
    Batch expanded{Tensor(std::move(s), std::move(xs)), std::move(labels)};

    EvalOptions o = opts;
    o.reduction = Reduction::sum;
    GradPair g = backward(net, expanded, o, {.input = true, .params = false});

    Tensor delta(batch.images.shape());
    for (std::size_t j = 0; j < B * n; ++j) delta[j] = factor[0] * g.grad_input[j];
    for (std::size_t i = 1; i < copies; ++i) {
        const Real* gi = g.grad_input.raw() + i * B * n;
        for (std::size_t j = 0; j < B * n; ++j) delta[j] += factor[i] * gi[j];
    }
    if (B > 1) {
        const Real inv = Real(1) / static_cast<Real>(B);
        for (Real& v : delta.data()) v *= inv;
    }
    return delta;
}

DropoutPlan gn_mask(const Network& net, const UniformSource& uniform, Real p) {
    if (!(p > 0 && p < 1)) throw std::invalid_argument("drop rate p must satisfy 0 < p < 1");
    const Real keep = 1 - p;
    const Real scale = 1 / keep;
    DropoutPlan plan;
    for (const Layer& layer : net.layers()) {
        if (layer.kind != LayerKind::relu) continue;
        std::vector<Real> f(element_count(layer.out_shape));
        uniform(f, 0, 1);
        for (Real& v : f) v = v < keep ? scale : Real(0);
        plan.factors.push_back(std::move(f));
    }
    return plan;
}

AdvResult run_attack(const Network& net, const Batch& batch, const AttackConfig& cfg, const AttackHooks& hooks) {
    cfg.validate();
    validate_batch(net, batch);
    const kernels::KernelTable& kt = kernels::active();
    const std::size_t B = batch.size();
    const std::size_t n = batch.images.row_size();

    AdvResult res;
    res.adversarial = batch.images;
    res.white_box.assign(B, 0);
    res.loss_trace.assign(B, {});
    res.threshold_trace.assign(B, {});

    std::vector<std::uint8_t> eligible;
    if (cfg.masking == Masking::mup && !cfg.mask_biases) eligible = weights_only(net);
    std::optional<ParamMask> static_mask;  // magnitude masks do not depend on x_t
    const std::size_t eligible_count =
        eligible.empty() ? net.param_count()
                         : static_cast<std::size_t>(std::count(eligible.begin(), eligible.end(), 1));
    const bool trivial_mask =
        std::floor(cfg.ratio * static_cast<Real>(eligible_count)) == 0;

    for (std::size_t b = 0; b < B; ++b) {
        Rng rng(derive_seed(cfg.seed, {b}));
        UniformSource uniform = hooks.uniform ? hooks.uniform(b, rng) : rng_source(rng);
        std::span<const Real> x0 = batch.images.row(b);
        Batch cur = single(batch, b, x0);
        std::vector<Real> g(n, 0), lower(n), upper(n);
        ball_bounds(x0, cfg.epsilon, lower, upper);

        for (std::size_t t = 0; t < cfg.iterations; ++t) {
            res.loss_trace[b].push_back(loss(net, cur));

            ParamMask mask;
            DropoutPlan plan;
            EvalOptions opts;
            if (cfg.masking == Masking::mup) {
                if (trivial_mask) {
                    mask.bits.assign(net.param_count(), 1);
                    mask.ratio = cfg.ratio;
                } else if (cfg.metric == Metric::magnitude) {
                    if (!static_mask) static_mask = build_mask(magnitude_scores(net), cfg.ratio, eligible);
                    mask = *static_mask;
                } else {
                    mask = build_mask(taylor_scores(net, cur), cfg.ratio, eligible);
                }
                res.threshold_trace[b].push_back(mask.threshold);
                if (hooks.on_mask) hooks.on_mask(b, t, mask);
                opts.mask = mask.bits;
            } else if (cfg.masking == Masking::gn) {
                plan = gn_mask(net, uniform, cfg.drop_rate);
                opts.dropout = &plan;
            }

            Tensor delta = inner_gradient(net, cur, cfg, opts, uniform);
            const Real l1 = kt.abs_sum(delta.raw(), n);
            if (l1 > 0 && std::isfinite(l1)) {
                for (std::size_t j = 0; j < n; ++j) g[j] = cfg.mu * g[j] + delta[j] / l1;
            } else {
                for (std::size_t j = 0; j < n; ++j) g[j] = cfg.mu * g[j];
            }
            kt.step_project(cur.images.raw(), g.data(), cfg.beta, lower.data(), upper.data(), n);
        }
        res.loss_trace[b].push_back(loss(net, cur));
        std::copy(cur.images.data().begin(), cur.images.data().end(), res.adversarial.row(b).begin());
    }

    auto pred = predict(net, res.adversarial);
    for (std::size_t b = 0; b < B; ++b) res.white_box[b] = pred[b] != batch.labels[b];
    return res;
}

}  // namespace mup
