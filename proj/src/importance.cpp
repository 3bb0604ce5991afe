#include "mup/importance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mup {

std::string_view to_string(Metric m) noexcept { return m == Metric::taylor ? "taylor" : "magnitude"; }

ImportanceScores taylor_scores(const Network& net, const Batch& batch) {
    if (batch.size() == 0) throw std::invalid_argument("taylor_scores: empty batch");
    GradPair g = backward(net, batch, {}, {.input = false, .params = true});
    auto theta = net.params();
    ImportanceScores s{std::move(g.grad_params), Metric::taylor};
    for (std::size_t i = 0; i < theta.size(); ++i) s.values[i] = std::abs(s.values[i] * theta[i]);
    return s;
}

ImportanceScores magnitude_scores(const Network& net) {
    auto theta = net.params();
    ImportanceScores s{std::vector<Real>(theta.size()), Metric::magnitude};
    for (std::size_t i = 0; i < theta.size(); ++i) s.values[i] = std::abs(theta[i]);
    return s;
}

ParamMask build_mask(const ImportanceScores& scores, Real ratio, std::span<const std::uint8_t> eligible) {
    if (!(ratio >= 0 && ratio < 1)) throw std::invalid_argument("masking ratio must satisfy 0 <= r < 1");
    const std::vector<Real>& v = scores.values;
    if (!eligible.empty() && eligible.size() != v.size())
        throw std::invalid_argument("eligibility vector does not match the score vector");

    std::vector<std::uint32_t> idx;
    idx.reserve(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        if (eligible.empty() || eligible[i]) idx.push_back(static_cast<std::uint32_t>(i));

    ParamMask m;
    m.ratio = ratio;
    m.bits.assign(v.size(), 1);
    const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<Real>(idx.size())));
    m.zeros = k;
    if (k == 0) return m;

    auto less = [&v](std::uint32_t a, std::uint32_t b) { return v[a] < v[b] || (v[a] == v[b] && a < b); };
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k - 1), idx.end(), less);
    const std::uint32_t pivot = idx[k - 1];
    m.threshold = v[pivot];
    // nth_element leaves every element before the pivot not greater than it
    for (std::size_t j = 0; j < k; ++j) m.bits[idx[j]] = 0;
    return m;
}

std::vector<std::uint8_t> weights_only(const Network& net) {
    std::vector<std::uint8_t> e(net.param_count(), 1);
    for (const ParamSlot& s : net.param_slots())
        if (s.is_bias) std::fill(e.begin() + static_cast<std::ptrdiff_t>(s.offset),
                                 e.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size()), 0);
    return e;
}

}  // namespace mup
