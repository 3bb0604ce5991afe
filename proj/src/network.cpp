#include "mup/network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <sstream>

namespace mup {

std::string_view to_string(LayerKind kind) noexcept {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv: return "conv";
        case LayerKind::relu: return "relu";
        case LayerKind::flatten: return "flatten";
    }
    return "unknown";
}

namespace {

std::string layer_label(std::size_t index, LayerKind kind) {
    return "layer " + std::to_string(index) + " (" + std::string(to_string(kind)) + ")";
}

std::vector<std::string_view> split_args(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        std::size_t comma = s.find(',', start);
        if (comma == std::string_view::npos) comma = s.size();
        std::string_view part = s.substr(start, comma - start);
        while (!part.empty() && part.front() == ' ') part.remove_prefix(1);
        while (!part.empty() && part.back() == ' ') part.remove_suffix(1);
        out.push_back(part);
        start = comma + 1;
    }
    return out;
}

std::size_t parse_count(std::string_view s, std::string_view token) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v == 0)
        throw ShapeError("bad layer argument '" + std::string(s) + "' in '" + std::string(token) + "'");
    return v;
}

}  // namespace

std::string describe_layers(std::span<const LayerSpec> layers) {
    std::ostringstream os;
    bool first = true;
    for (const LayerSpec& spec : layers) {
        if (!first) os << ' ';
        first = false;
        std::visit(
            [&os](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, DenseSpec>) {
                    os << "dense(" << s.units << ')';
                } else if constexpr (std::is_same_v<T, ConvSpec>) {
                    os << "conv(" << s.filters << ',' << s.kernel << ','
                       << (s.padding == Padding::same ? "same" : "valid") << ')';
                } else if constexpr (std::is_same_v<T, ReluSpec>) {
                    os << "relu";
                } else {
                    os << "flatten";
                }
            },
            spec);
    }
    return os.str();
}

std::vector<LayerSpec> parse_layers(std::string_view text) {
    std::vector<LayerSpec> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
        if (pos >= text.size()) break;
        std::size_t end = pos;
        int depth = 0;
        while (end < text.size() && (depth > 0 || (text[end] != ' ' && text[end] != '\t'))) {
            if (text[end] == '(') ++depth;
            if (text[end] == ')') --depth;
            ++end;
        }
        std::string_view token = text.substr(pos, end - pos);
        pos = end;

        std::string_view name = token;
        std::string_view args;
        if (std::size_t open = token.find('('); open != std::string_view::npos) {
            if (token.back() != ')') throw ShapeError("unterminated layer '" + std::string(token) + "'");
            name = token.substr(0, open);
            args = token.substr(open + 1, token.size() - open - 2);
        }
        if (name == "relu" && args.empty()) {
            out.emplace_back(ReluSpec{});
        } else if (name == "flatten" && args.empty()) {
            out.emplace_back(FlattenSpec{});
        } else if (name == "dense") {
            auto a = split_args(args);
            if (a.size() != 1) throw ShapeError("dense takes one argument: '" + std::string(token) + "'");
            out.emplace_back(DenseSpec{parse_count(a[0], token)});
        } else if (name == "conv") {
            auto a = split_args(args);
            if (a.size() != 3) throw ShapeError("conv takes (filters,kernel,padding): '" + std::string(token) + "'");
            Padding p;
            if (a[2] == "same") p = Padding::same;
            else if (a[2] == "valid") p = Padding::valid;
            else throw ShapeError("unknown padding '" + std::string(a[2]) + "'");
            out.emplace_back(ConvSpec{parse_count(a[0], token), parse_count(a[1], token), p});
        } else {
            throw ShapeError("unknown layer '" + std::string(token) + "'");
        }
    }
    if (out.empty()) throw ShapeError("empty layer list");
    return out;
}

Network::Network(Shape input_shape, std::vector<LayerSpec> specs, InputTransform transform)
    : input_shape_(std::move(input_shape)), specs_(std::move(specs)), transform_(transform) {
    if (input_shape_.size() != 3 || element_count(input_shape_) == 0)
        throw ShapeError("network input must be a positive [C, H, W], got " + to_string(input_shape_));
    if (specs_.empty()) throw ShapeError("network needs at least one layer");

    Shape shape = input_shape_;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        Layer layer;
        layer.in_shape = shape;
        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, DenseSpec>) {
                    layer.kind = LayerKind::dense;
                    if (shape.size() != 1)
                        throw ShapeError(layer_label(i, layer.kind) + ": expects a rank-1 input, got " +
                                         to_string(shape) + " (insert flatten)");
                    layer.out_shape = {s.units};
                    layer.weight_count = s.units * shape[0];
                    layer.bias_count = s.units;
                } else if constexpr (std::is_same_v<T, ConvSpec>) {
                    layer.kind = LayerKind::conv;
                    if (shape.size() != 3)
                        throw ShapeError(layer_label(i, layer.kind) + ": expects a [C, H, W] input, got " +
                                         to_string(shape));
                    layer.kernel = s.kernel;
                    std::size_t h = shape[1], w = shape[2];
                    if (s.padding == Padding::same) {
                        if (s.kernel % 2 == 0)
                            throw ShapeError(layer_label(i, layer.kind) + ": same padding needs an odd kernel");
                        layer.pad = (s.kernel - 1) / 2;
                        layer.out_shape = {s.filters, h, w};
                    } else {
                        if (s.kernel > h || s.kernel > w)
                            throw ShapeError(layer_label(i, layer.kind) + ": kernel " +
                                             std::to_string(s.kernel) + " larger than input " +
                                             to_string(shape));
                        layer.pad = 0;
                        layer.out_shape = {s.filters, h - s.kernel + 1, w - s.kernel + 1};
                    }
                    layer.weight_count = s.filters * shape[0] * s.kernel * s.kernel;
                    layer.bias_count = s.filters;
                } else if constexpr (std::is_same_v<T, ReluSpec>) {
                    layer.kind = LayerKind::relu;
                    layer.out_shape = shape;
                } else {
                    layer.kind = LayerKind::flatten;
                    layer.out_shape = {element_count(shape)};
                }
            },
            specs_[i]);

        if (layer.has_params()) {
            layer.weight_offset = offset;
            offset += layer.weight_count;
            layer.bias_offset = offset;
            offset += layer.bias_count;
            Shape wshape = layer.kind == LayerKind::dense
                               ? Shape{layer.out_shape[0], layer.in_shape[0]}
                               : Shape{layer.out_shape[0], layer.in_shape[0], layer.kernel, layer.kernel};
            std::string prefix = "layer" + std::to_string(i);
            slots_.push_back({prefix + ".weight", i, false, layer.weight_offset, std::move(wshape)});
            slots_.push_back({prefix + ".bias", i, true, layer.bias_offset, Shape{layer.bias_count}});
        }
        shape = layer.out_shape;
        layers_.push_back(std::move(layer));
    }
    if (shape.size() != 1)
        throw ShapeError(layer_label(specs_.size() - 1, layers_.back().kind) +
                         ": the last layer must produce class logits [K], got " + to_string(shape));
    num_classes_ = shape[0];
    params_.assign(offset, 0);
}

std::size_t Network::global_index(std::string_view slot_name, std::size_t element) const {
    for (const ParamSlot& s : slots_) {
        if (s.name == slot_name) {
            if (element >= s.size())
                throw ShapeError("element " + std::to_string(element) + " out of range for " + s.name);
            return s.offset + element;
        }
    }
    throw ShapeError("no parameter named '" + std::string(slot_name) + "'");
}

bool Network::is_bias_index(std::size_t i) const {
    for (const ParamSlot& s : slots_)
        if (i >= s.offset && i < s.offset + s.size()) return s.is_bias;
    throw ShapeError("parameter index " + std::to_string(i) + " out of range");
}

bool bitwise_equal(const Network& a, const Network& b) noexcept {
    if (a.input_shape() != b.input_shape() || a.describe() != b.describe()) return false;
    const InputTransform& ta = a.input_transform();
    const InputTransform& tb = b.input_transform();
    if (std::memcmp(&ta.offset, &tb.offset, sizeof(Real)) != 0 ||
        std::memcmp(&ta.scale, &tb.scale, sizeof(Real)) != 0)
        return false;
    return bitwise_equal(a.params(), b.params());
}

void validate_batch(const Network& net, const Batch& batch) {
    const Shape& s = batch.images.shape();
    Shape want = net.input_shape();
    if (s.size() != 4 || Shape(s.begin() + 1, s.end()) != want)
        throw ShapeError("batch images must be [B, " + std::to_string(want[0]) + ", " +
                         std::to_string(want[1]) + ", " + std::to_string(want[2]) + "], got " +
                         to_string(s));
    if (s[0] != batch.labels.size())
        throw ShapeError("batch has " + std::to_string(s[0]) + " images but " +
                         std::to_string(batch.labels.size()) + " labels");
    for (std::size_t y : batch.labels)
        if (y >= net.num_classes())
            throw ShapeError("label " + std::to_string(y) + " out of range for " +
                             std::to_string(net.num_classes()) + " classes");
    for (Real v : batch.images.data())
        if (!(v >= 0 && v <= 255)) throw ShapeError("batch pixel value outside [0, 255]");
}

// ---------------------------------------------------------------------------
// Forward / backward.
//
// Loop order is fixed so results are bitwise reproducible: examples in batch
// order; dense outputs as bias + dot(row, input); convolution through an
// im2col buffer with output channels outer and kernel taps inner; parameter
// gradients accumulated example by example.

namespace {

struct Pass {
    std::size_t batch = 0;
    std::vector<std::vector<Real>> acts;  // acts[0] = transformed input, acts[k+1] = output of layer k
    std::vector<std::vector<Real>> cols;  // im2col buffers for conv layers, per layer
    std::vector<Real> logits;
};

void check_inputs(const Network& net, const Tensor& images, const EvalOptions& opts) {
    const Shape& s = images.shape();
    const Shape& want = net.input_shape();
    if (s.size() != 4 || s[1] != want[0] || s[2] != want[1] || s[3] != want[2])
        throw ShapeError("input: expected [B, " + std::to_string(want[0]) + ", " +
                         std::to_string(want[1]) + ", " + std::to_string(want[2]) + "], got " +
                         to_string(s));
    if (!opts.mask.empty() && opts.mask.size() != net.param_count())
        throw ShapeError("mask: length " + std::to_string(opts.mask.size()) +
                         " does not match parameter count " + std::to_string(net.param_count()));
    if (opts.dropout != nullptr) {
        std::size_t r = 0;
        for (std::size_t i = 0; i < net.layers().size(); ++i) {
            const Layer& layer = net.layers()[i];
            if (layer.kind != LayerKind::relu) continue;
            if (r >= opts.dropout->factors.size() ||
                opts.dropout->factors[r].size() != element_count(layer.out_shape))
                throw ShapeError(layer_label(i, layer.kind) + ": dropout plan does not match layer size");
            ++r;
        }
        if (r != opts.dropout->factors.size())
            throw ShapeError("dropout plan has more entries than the network has relu layers");
    }
}

std::span<const Real> effective_params(const Network& net, const EvalOptions& opts,
                                       std::vector<Real>& storage) {
    if (opts.mask.empty()) return net.params();
    std::span<const Real> theta = net.params();
    storage.resize(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) storage[i] = theta[i] * (opts.mask[i] ? Real(1) : Real(0));
    return storage;
}

void im2col(const Real* in, const Layer& L, Real* col) {
    const std::size_t C = L.in_shape[0], H = L.in_shape[1], W = L.in_shape[2];
    const std::size_t Ho = L.out_shape[1], Wo = L.out_shape[2], k = L.kernel;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(L.pad);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                Real* dst = col + ((c * k + ky) * k + kx) * Ho * Wo;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - pad;
                    Real* drow = dst + oy * Wo;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) {
                        std::fill(drow, drow + Wo, Real(0));
                        continue;
                    }
                    const Real* srow = in + (c * H + static_cast<std::size_t>(iy)) * W;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - pad;
                        drow[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W))
                                       ? Real(0)
                                       : srow[static_cast<std::size_t>(ix)];
                    }
                }
            }
}

void col2im_add(const Real* col, const Layer& L, Real* din) {
    const std::size_t C = L.in_shape[0], H = L.in_shape[1], W = L.in_shape[2];
    const std::size_t Ho = L.out_shape[1], Wo = L.out_shape[2], k = L.kernel;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(L.pad);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                const Real* src = col + ((c * k + ky) * k + kx) * Ho * Wo;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - pad;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    Real* drow = din + (c * H + static_cast<std::size_t>(iy)) * W;
                    const Real* srow = src + oy * Wo;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - pad;
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                        drow[static_cast<std::size_t>(ix)] += srow[ox];
                    }
                }
            }
}

Pass run_forward(const Network& net, const Tensor& images, std::span<const Real> theta,
                 const DropoutPlan* dropout, bool keep_cols) {
    const kernels::KernelTable& kt = kernels::active();
    Pass pass;
    const std::size_t B = images.dim(0);
    pass.batch = B;
    const auto& layers = net.layers();
    pass.acts.resize(layers.size() + 1);
    pass.cols.resize(layers.size());

    {
        const InputTransform& tf = net.input_transform();
        std::vector<Real>& x = pass.acts[0];
        x.resize(images.size());
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = (images[i] - tf.offset) * tf.scale;
    }

    std::size_t relu_index = 0;
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const Layer& L = layers[li];
        const std::size_t in_n = element_count(L.in_shape);
        const std::size_t out_n = element_count(L.out_shape);
        const std::vector<Real>& in = pass.acts[li];
        std::vector<Real>& out = pass.acts[li + 1];
        out.assign(B * out_n, Real(0));

        switch (L.kind) {
            case LayerKind::dense: {
                const Real* w = theta.data() + L.weight_offset;
                const Real* bias = theta.data() + L.bias_offset;
                for (std::size_t b = 0; b < B; ++b) {
                    const Real* x = in.data() + b * in_n;
                    Real* y = out.data() + b * out_n;
                    for (std::size_t o = 0; o < out_n; ++o) y[o] = bias[o] + kt.dot(w + o * in_n, x, in_n);
                }
                break;
            }
            case LayerKind::conv: {
                const Real* w = theta.data() + L.weight_offset;
                const Real* bias = theta.data() + L.bias_offset;
                const std::size_t F = L.out_shape[0];
                const std::size_t HW = L.out_shape[1] * L.out_shape[2];
                const std::size_t taps = L.in_shape[0] * L.kernel * L.kernel;
                std::vector<Real>& col = pass.cols[li];
                col.resize((keep_cols ? B : 1) * taps * HW);
                for (std::size_t b = 0; b < B; ++b) {
                    Real* cb = col.data() + (keep_cols ? b : 0) * taps * HW;
                    im2col(in.data() + b * in_n, L, cb);
                    Real* y = out.data() + b * out_n;
                    for (std::size_t f = 0; f < F; ++f) {
                        Real* yf = y + f * HW;
                        std::fill(yf, yf + HW, bias[f]);
                        const Real* wf = w + f * taps;
                        for (std::size_t j = 0; j < taps; ++j) kt.axpy(wf[j], cb + j * HW, yf, HW);
                    }
                }
                if (!keep_cols) col.clear();
                break;
            }
            case LayerKind::relu: {
                kt.relu(in.data(), out.data(), B * out_n);
                if (dropout != nullptr) {
                    const std::vector<Real>& f = dropout->factors[relu_index];
                    for (std::size_t b = 0; b < B; ++b) {
                        Real* y = out.data() + b * out_n;
                        kt.mul(y, f.data(), y, out_n);
                    }
                }
                ++relu_index;
                break;
            }
            case LayerKind::flatten:
                std::copy(in.begin(), in.end(), out.begin());
                break;
        }
    }
    pass.logits = pass.acts.back();
    return pass;
}

// Per-example cross-entropy from logits; fills dlogits (scaled by `weight`) when non-null.
std::vector<Real> cross_entropy(const std::vector<Real>& logits, std::size_t K,
                                std::span<const std::size_t> labels, std::vector<Real>* dlogits,
                                Real weight) {
    const std::size_t B = labels.size();
    std::vector<Real> losses(B);
    if (dlogits != nullptr) dlogits->assign(B * K, Real(0));
    for (std::size_t b = 0; b < B; ++b) {
        const Real* z = logits.data() + b * K;
        Real m = z[0];
        for (std::size_t k = 1; k < K; ++k) m = std::max(m, z[k]);
        Real s = 0;
        for (std::size_t k = 0; k < K; ++k) s += std::exp(z[k] - m);
        Real lse = m + std::log(s);
        losses[b] = lse - z[labels[b]];
        if (dlogits != nullptr) {
            Real* d = dlogits->data() + b * K;
            for (std::size_t k = 0; k < K; ++k) {
                Real p = std::exp(z[k] - lse);
                d[k] = (p - (k == labels[b] ? Real(1) : Real(0))) * weight;
            }
        }
    }
    return losses;
}

Real reduce(const std::vector<Real>& losses, Reduction r) {
    Real s = 0;
    for (Real v : losses) s += v;
    return r == Reduction::mean ? s / static_cast<Real>(losses.size()) : s;
}

void check_labels(const Network& net, const Batch& batch) {
    if (batch.images.rank() != 4 || batch.images.dim(0) != batch.labels.size())
        throw ShapeError("batch has " + std::to_string(batch.labels.size()) + " labels for images " +
                         to_string(batch.images.shape()));
    for (std::size_t y : batch.labels)
        if (y >= net.num_classes())
            throw ShapeError("label " + std::to_string(y) + " out of range for " +
                             std::to_string(net.num_classes()) + " classes");
}

}  // namespace

Tensor forward(const Network& net, const Tensor& images, const EvalOptions& opts) {
    check_inputs(net, images, opts);
    std::vector<Real> storage;
    std::span<const Real> theta = effective_params(net, opts, storage);
    Pass pass = run_forward(net, images, theta, opts.dropout, false);
    return Tensor({images.dim(0), net.num_classes()}, std::move(pass.logits));
}

std::vector<Real> example_losses(const Network& net, const Batch& batch, const EvalOptions& opts) {
    check_inputs(net, batch.images, opts);
    check_labels(net, batch);
    std::vector<Real> storage;
    std::span<const Real> theta = effective_params(net, opts, storage);
    Pass pass = run_forward(net, batch.images, theta, opts.dropout, false);
    return cross_entropy(pass.logits, net.num_classes(), batch.labels, nullptr, 1);
}

Real loss(const Network& net, const Batch& batch, const EvalOptions& opts) {
    return reduce(example_losses(net, batch, opts), opts.reduction);
}

std::vector<std::size_t> predict(const Network& net, const Tensor& images, const EvalOptions& opts) {
    Tensor logits = forward(net, images, opts);
    const std::size_t B = logits.dim(0), K = logits.dim(1);
    std::vector<std::size_t> out(B);
    for (std::size_t b = 0; b < B; ++b) {
        std::span<const Real> z = logits.row(b);
        out[b] = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    }
    (void)K;
    return out;
}

GradPair backward(const Network& net, const Batch& batch, const EvalOptions& opts, GradRequest request) {
    check_inputs(net, batch.images, opts);
    check_labels(net, batch);
    const kernels::KernelTable& kt = kernels::active();
    std::vector<Real> storage;
    std::span<const Real> theta = effective_params(net, opts, storage);
    Pass pass = run_forward(net, batch.images, theta, opts.dropout, true);

    const std::size_t B = batch.size();
    const std::size_t K = net.num_classes();
    const Real weight = opts.reduction == Reduction::mean ? Real(1) / static_cast<Real>(B) : Real(1);

    GradPair out;
    std::vector<Real> delta;
    out.loss = reduce(cross_entropy(pass.logits, K, batch.labels, &delta, weight), opts.reduction);
    if (request.params) out.grad_params.assign(net.param_count(), Real(0));

    const auto& layers = net.layers();
    std::size_t relu_index = 0;
    for (const Layer& L : layers)
        if (L.kind == LayerKind::relu) ++relu_index;

    std::vector<Real> din;
    for (std::size_t li = layers.size(); li-- > 0;) {
        const Layer& L = layers[li];
        const std::size_t in_n = element_count(L.in_shape);
        const std::size_t out_n = element_count(L.out_shape);
        const std::vector<Real>& in = pass.acts[li];
        const bool need_din = li > 0 || request.input;
        din.assign(need_din ? B * in_n : 0, Real(0));

        switch (L.kind) {
            case LayerKind::dense: {
                const Real* w = theta.data() + L.weight_offset;
                for (std::size_t b = 0; b < B; ++b) {
                    const Real* d = delta.data() + b * out_n;
                    const Real* x = in.data() + b * in_n;
                    if (request.params) {
                        Real* gw = out.grad_params.data() + L.weight_offset;
                        Real* gb = out.grad_params.data() + L.bias_offset;
                        for (std::size_t o = 0; o < out_n; ++o) {
                            gb[o] += d[o];
                            kt.axpy(d[o], x, gw + o * in_n, in_n);
                        }
                    }
                    if (need_din) {
                        Real* dx = din.data() + b * in_n;
                        for (std::size_t o = 0; o < out_n; ++o) kt.axpy(d[o], w + o * in_n, dx, in_n);
                    }
                }
                break;
            }
            case LayerKind::conv: {
                const Real* w = theta.data() + L.weight_offset;
                const std::size_t F = L.out_shape[0];
                const std::size_t HW = L.out_shape[1] * L.out_shape[2];
                const std::size_t taps = L.in_shape[0] * L.kernel * L.kernel;
                std::vector<Real> dcol(need_din ? taps * HW : 0);
                for (std::size_t b = 0; b < B; ++b) {
                    const Real* d = delta.data() + b * out_n;
                    const Real* cb = pass.cols[li].data() + b * taps * HW;
                    if (request.params) {
                        Real* gw = out.grad_params.data() + L.weight_offset;
                        Real* gb = out.grad_params.data() + L.bias_offset;
                        for (std::size_t f = 0; f < F; ++f) {
                            const Real* df = d + f * HW;
                            Real s = 0;
                            for (std::size_t p = 0; p < HW; ++p) s += df[p];
                            gb[f] += s;
                            for (std::size_t j = 0; j < taps; ++j) gw[f * taps + j] += kt.dot(df, cb + j * HW, HW);
                        }
                    }
                    if (need_din) {
                        std::fill(dcol.begin(), dcol.end(), Real(0));
                        for (std::size_t f = 0; f < F; ++f) {
                            const Real* df = d + f * HW;
                            const Real* wf = w + f * taps;
                            for (std::size_t j = 0; j < taps; ++j) kt.axpy(wf[j], df, dcol.data() + j * HW, HW);
                        }
                        col2im_add(dcol.data(), L, din.data() + b * in_n);
                    }
                }
                break;
            }
            case LayerKind::relu: {
                --relu_index;
                if (need_din) {
                    kt.relu_backward(in.data(), delta.data(), din.data(), B * in_n);
                    if (opts.dropout != nullptr) {
                        const std::vector<Real>& f = opts.dropout->factors[relu_index];
                        for (std::size_t b = 0; b < B; ++b) {
                            Real* dx = din.data() + b * in_n;
                            kt.mul(dx, f.data(), dx, in_n);
                        }
                    }
                }
                break;
            }
            case LayerKind::flatten:
                if (need_din) std::copy(delta.begin(), delta.end(), din.begin());
                break;
        }
        delta.swap(din);
    }

    if (request.input) {
        const Real scale = net.input_transform().scale;
        for (Real& v : delta) v *= scale;
        out.grad_input = Tensor(batch.images.shape(), std::move(delta));
    }
    if (request.params && !opts.mask.empty()) {
        for (std::size_t i = 0; i < out.grad_params.size(); ++i)
            out.grad_params[i] *= opts.mask[i] ? Real(1) : Real(0);
    }
    return out;
}

Real fd_gradient(const Network& net, const Batch& batch, Coordinate coordinate, Real h,
                 const EvalOptions& opts) {
    if (!(h > 0)) throw std::invalid_argument("fd_gradient: step h must be positive");
    if (coordinate.kind == Coordinate::Kind::input) {
        if (coordinate.index >= batch.images.size())
            throw ShapeError("fd_gradient: input index out of range");
        Batch plus = batch, minus = batch;
        plus.images[coordinate.index] += h;
        minus.images[coordinate.index] -= h;
        return (loss(net, plus, opts) - loss(net, minus, opts)) / (2 * h);
    }
    if (coordinate.index >= net.param_count()) throw ShapeError("fd_gradient: parameter index out of range");
    Network plus = net, minus = net;
    plus.params()[coordinate.index] += h;
    minus.params()[coordinate.index] -= h;
    return (loss(plus, batch, opts) - loss(minus, batch, opts)) / (2 * h);
}

}  // namespace mup
