#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mup/network.hpp"
#include "mup/rng.hpp"

namespace mup::testing {

inline Network random_network(Rng& rng, Shape input, std::vector<LayerSpec> specs, Real scale = 0.5) {
    Network net(std::move(input), std::move(specs));
    for (Real& p : net.params()) p = rng.uniform(-scale, scale);
    return net;
}

inline Batch random_batch(Rng& rng, const Network& net, std::size_t n) {
    Shape s{n};
    for (std::size_t d : net.input_shape()) s.push_back(d);
    Tensor images(s);
    for (Real& v : images.data()) v = rng.uniform(0, 255);
    std::vector<std::size_t> labels(n);
    for (auto& y : labels) y = rng.below(net.num_classes());
    return Batch{std::move(images), std::move(labels)};
}

/// |a - b| / max(|a|, |b|, floor)
inline Real rel_error(Real a, Real b, Real floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace mup::testing
