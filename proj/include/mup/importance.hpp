#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mup/network.hpp"

namespace mup {

enum class Metric { taylor, magnitude };

std::string_view to_string(Metric m) noexcept;

struct ImportanceScores {
    std::vector<Real> values;  // aligned with the parameter layout, all >= 0
    Metric metric = Metric::taylor;
};

/// V_i = |dL/dtheta_i * theta_i| from one backward pass of the unmasked network.
ImportanceScores taylor_scores(const Network& net, const Batch& batch);

/// V_i = |theta_i|.
ImportanceScores magnitude_scores(const Network& net);

struct ParamMask {
    std::vector<std::uint8_t> bits;  // 1 keeps, 0 masks
    Real ratio = 0;
    Real threshold = 0;   // k-th smallest eligible score, 0 when k = 0
    std::size_t zeros = 0;
};

/// Zeroes exactly k = floor(r * E) entries, where E is the number of eligible
/// parameters (all of them when `eligible` is empty): the k smallest scores
/// among eligible entries, ties resolved toward the lower index.
/// Throws std::invalid_argument unless 0 <= r < 1.
ParamMask build_mask(const ImportanceScores& scores, Real ratio, std::span<const std::uint8_t> eligible = {});

/// Eligibility vector that excludes every bias entry.
std::vector<std::uint8_t> weights_only(const Network& net);

}  // namespace mup
