#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mup/importance.hpp"
#include "mup/network.hpp"
#include "mup/rng.hpp"

namespace mup {

enum class InnerGradient { plain, sim, taigr };
enum class Masking { none, mup, gn };

std::string_view to_string(InnerGradient g) noexcept;
std::string_view to_string(Masking m) noexcept;

struct AttackConfig {
    Real epsilon = 16;
    Real beta = 2;
    std::size_t iterations = 10;
    Real mu = 1.0;
    InnerGradient inner = InnerGradient::plain;
    std::size_t sim_copies = 5;     // m
    std::size_t taig_samples = 20;  // S
    Masking masking = Masking::none;
    Real ratio = 0;                 // r, mup only
    Metric metric = Metric::taylor;  // mup only
    bool mask_biases = true;        // mup only; false restricts masking to weights
    Real drop_rate = 0.1;           // p, gn only
    std::uint64_t seed = 0;

    /// Every violated constraint, one message each; empty when valid.
    std::vector<std::string> problems() const;
    /// Throws ConfigError carrying all problems.
    void validate() const;
};

class ConfigError : public std::runtime_error {
   public:
    explicit ConfigError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const noexcept { return problems_; }

   private:
    std::vector<std::string> problems_;
};

/// Applies a method name on top of `base` (which supplies epsilon, beta, N, mu,
/// m, S, r, p and the seed):
///   fgsm            N = 1, mu = 0, beta = epsilon
///   ifgsm           mu = 0
///   mim | sim | taigr
///   mup-X           X in {mim, sim, taigr}, Taylor importance
///   mupabs-X        X in {mim, sim, taigr}, magnitude importance
///   gn-X            X in {mim, sim, taigr}, random neuron dropout
/// Throws ConfigError for an unknown name.
AttackConfig apply_method(const std::string& method, AttackConfig base);
std::string method_name(const AttackConfig& cfg);

/// Fills `out` with i.i.d. uniform values in [lo, hi). Tests substitute stubs.
using UniformSource = std::function<void(std::span<Real> out, Real lo, Real hi)>;
UniformSource rng_source(Rng& rng);

/// Per-coordinate bounds of the eps-ball intersected with [0, 255], chosen so
/// that every value v in [lower, upper] satisfies |v - x0| <= eps exactly.
void ball_bounds(std::span<const Real> x0, Real eps, std::span<Real> lower, std::span<Real> upper);

/// Clamp every coordinate into ball_bounds(x0, eps).
Tensor clip_ball(const Tensor& x, const Tensor& x0, Real eps);

/// Input gradient of the configured inner objective, summed over samples:
///   plain  grad L(x)
///   sim    sum_{i<m} grad_x L(x / 2^i)
///   taigr  sum_{i=1..S} grad_x L((i/S) x + u_i),  u_i ~ U(-eps, eps) per coordinate
/// L is the batch-mean cross-entropy; `opts` carries the parameter mask or
/// dropout plan used for every evaluation. `noise` is consulted only by taigr.
Tensor inner_gradient(const Network& net, const Batch& batch, const AttackConfig& cfg,
                      const EvalOptions& opts = {}, const UniformSource& noise = {});

/// Fresh inverted-dropout plan: each hidden ReLU output is kept with
/// probability 1 - p (u < 1 - p) and scaled by 1 / (1 - p).
DropoutPlan gn_mask(const Network& net, const UniformSource& uniform, Real p);

struct AdvResult {
    Tensor adversarial;                    // x_N, same shape as the input images
    std::vector<std::uint8_t> white_box;   // surrogate misclassifies x_N
    std::vector<std::vector<Real>> loss_trace;  // [example][t] surrogate loss at x_t, t = 0..N
    std::vector<std::vector<Real>> threshold_trace;  // [example][t] mask threshold (mup only)
};

struct AttackHooks {
    /// Replaces the per-example uniform source (TAIG-R noise and GN dropout).
    std::function<UniformSource(std::size_t example, Rng& rng)> uniform;
    /// Receives each mask that is applied, for inspection.
    std::function<void(std::size_t example, std::size_t t, const ParamMask& mask)> on_mask;
};

/// Runs the configured attack. Examples are processed independently, each
/// with its own random stream derived from (cfg.seed, example index), so an
/// example's result does not depend on the rest of the batch.
AdvResult run_attack(const Network& net, const Batch& batch, const AttackConfig& cfg,
                     const AttackHooks& hooks = {});

}  // namespace mup
