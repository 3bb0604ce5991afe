#include "mup/model_zoo.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mup/rng.hpp"

namespace mup {

namespace {

std::string real_to_text(Real v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

Real text_to_real(const std::string& s) {
    Real v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ContainerError(ContainerErrc::malformed, "bad real attribute '" + s + "'");
    return v;
}

std::uint64_t text_to_u64(const std::string& s) {
    std::uint64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ContainerError(ContainerErrc::malformed, "bad integer attribute '" + s + "'");
    return v;
}

std::string shape_to_text(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

Shape text_to_shape(const std::string& s) {
    Shape out;
    std::size_t start = 0;
    while (start <= s.size()) {
        std::size_t x = s.find('x', start);
        if (x == std::string::npos) x = s.size();
        out.push_back(text_to_u64(s.substr(start, x - start)));
        start = x + 1;
    }
    return out;
}

void expect_kind(const Container& c, std::string_view kind) {
    if (c.kind != kind)
        throw ContainerError(ContainerErrc::wrong_kind,
                             "expected a '" + std::string(kind) + "' container, got '" + c.kind + "'");
}

}  // namespace

Tensor labels_tensor(const std::vector<std::size_t>& labels) {
    std::vector<Real> v(labels.begin(), labels.end());
    return Tensor({labels.size()}, std::move(v));
}

std::vector<LayerSpec> ArchSpec::layer_specs() const { return parse_layers(layers); }

std::vector<std::string> arch_preset_names() { return {"mlp", "cnn", "wcnn"}; }

ArchSpec arch_preset(const std::string& name, const Shape& input, std::size_t classes) {
    const std::string k = std::to_string(classes);
    std::string layers;
    if (name == "mlp") layers = "flatten dense(256) relu dense(256) relu dense(" + k + ")";
    else if (name == "cnn") layers = "conv(8,3,same) relu conv(8,3,same) relu flatten dense(" + k + ")";
    else if (name == "wcnn") layers = "conv(16,5,same) relu flatten dense(64) relu dense(" + k + ")";
    else throw std::invalid_argument("unknown architecture '" + name + "'");
    return ArchSpec{name, layers, input, classes};
}

Network init_network(const ArchSpec& arch, std::uint64_t seed) {
    Network net(arch.input_shape, arch.layer_specs());
    if (net.num_classes() != arch.classes)
        throw ShapeError("architecture '" + arch.name + "' produces " + std::to_string(net.num_classes()) +
                         " outputs, expected " + std::to_string(arch.classes));
    Rng rng(derive_seed(seed, {0x1417}));
    auto theta = net.params();
    for (const Layer& layer : net.layers()) {
        if (!layer.has_params()) continue;
        std::size_t fan_in = layer.weight_count / layer.bias_count;
        Real bound = 1 / std::sqrt(static_cast<Real>(fan_in));
        for (std::size_t i = 0; i < layer.weight_count; ++i) theta[layer.weight_offset + i] = rng.uniform(-bound, bound);
        for (std::size_t i = 0; i < layer.bias_count; ++i) theta[layer.bias_offset + i] = rng.uniform(-bound, bound);
    }
    return net;
}

std::vector<std::string> DatasetSpec::problems() const {
    std::vector<std::string> errs;
    if (classes < 1) errs.push_back("classes must be >= 1");
    if (per_class < 2) errs.push_back("per_class must be >= 2");
    if (image_shape.size() != 3 || element_count(image_shape) == 0)
        errs.push_back("image_shape must be a positive [C, H, W]");
    if (!(amplitude_lo >= 0 && amplitude_hi >= amplitude_lo)) errs.push_back("need 0 <= amplitude_lo <= amplitude_hi");
    if (!(background >= 0 && background <= 255)) errs.push_back("background must be in [0, 255]");
    if (!(noise >= 0)) errs.push_back("noise must be >= 0");
    if (!(test_fraction > 0 && test_fraction < 1)) errs.push_back("test_fraction must be in (0, 1)");
    else if (static_cast<std::size_t>(test_fraction * static_cast<Real>(per_class)) == 0)
        errs.push_back("test_fraction * per_class leaves no test examples");
    if (blobs < 1) errs.push_back("blobs must be >= 1");
    return errs;
}

void DatasetSpec::validate() const {
    auto errs = problems();
    if (!errs.empty()) {
        std::string msg = "invalid dataset spec:";
        for (const auto& e : errs) msg += "\n  " + e;
        throw std::invalid_argument(msg);
    }
}

Dataset generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    const std::size_t C = spec.image_shape[0], H = spec.image_shape[1], W = spec.image_shape[2];
    const std::size_t HW = H * W, n_pix = C * HW;

    // class templates, each channel normalized to max |value| = 1
    std::vector<std::vector<Real>> templates(spec.classes, std::vector<Real>(n_pix, 0));
    Rng trng(derive_seed(spec.seed, {0x7e3}));
    for (auto& t : templates) {
        for (std::size_t c = 0; c < C; ++c) {
            Real* plane = t.data() + c * HW;
            for (std::size_t b = 0; b < spec.blobs; ++b) {
                Real cy = trng.uniform() * static_cast<Real>(H - 1);
                Real cx = trng.uniform() * static_cast<Real>(W - 1);
                Real s = 1.0 + 1.5 * trng.uniform();
                Real sign = trng.uniform() < 0.5 ? 1 : -1;
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W; ++x) {
                        Real dy = static_cast<Real>(y) - cy, dx = static_cast<Real>(x) - cx;
                        plane[y * W + x] += sign * std::exp(-(dy * dy + dx * dx) / (2 * s * s));
                    }
            }
            Real m = 0;
            for (std::size_t i = 0; i < HW; ++i) m = std::max(m, std::abs(plane[i]));
            if (m > 0)
                for (std::size_t i = 0; i < HW; ++i) plane[i] /= m;
        }
    }

    const std::size_t n_test_pc = static_cast<std::size_t>(spec.test_fraction * static_cast<Real>(spec.per_class));
    const std::size_t n_train_pc = spec.per_class - n_test_pc;
    std::vector<std::vector<Real>> train_x, test_x;
    std::vector<std::size_t> train_y, test_y;
    Rng rng(derive_seed(spec.seed, {0xda7a}));
    const auto sh = static_cast<std::int64_t>(spec.shift);
    for (std::size_t k = 0; k < spec.classes; ++k) {
        for (std::size_t n = 0; n < spec.per_class; ++n) {
            auto dy = static_cast<std::int64_t>(rng.below(2 * spec.shift + 1)) - sh;
            auto dx = static_cast<std::int64_t>(rng.below(2 * spec.shift + 1)) - sh;
            Real amp = rng.uniform(spec.amplitude_lo, spec.amplitude_hi);
            std::vector<Real> img(n_pix);
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W; ++x) {
                        auto sy = static_cast<std::size_t>(((static_cast<std::int64_t>(y) - dy) % static_cast<std::int64_t>(H) + static_cast<std::int64_t>(H)) % static_cast<std::int64_t>(H));
                        auto sx = static_cast<std::size_t>(((static_cast<std::int64_t>(x) - dx) % static_cast<std::int64_t>(W) + static_cast<std::int64_t>(W)) % static_cast<std::int64_t>(W));
                        Real v = spec.background + amp * templates[k][c * HW + sy * W + sx] + spec.noise * rng.normal();
                        img[c * HW + y * W + x] = std::clamp(v, Real(0), Real(255));
                    }
            if (n < n_train_pc) {
                train_x.push_back(std::move(img));
                train_y.push_back(k);
            } else {
                test_x.push_back(std::move(img));
                test_y.push_back(k);
            }
        }
    }

    auto pack = [&](std::vector<std::vector<Real>>& xs, std::vector<std::size_t>& ys, std::uint64_t stream) {
        std::vector<std::size_t> order(ys.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng prng(derive_seed(spec.seed, {stream}));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[prng.below(i)]);
        std::vector<Real> flat;
        flat.reserve(xs.size() * n_pix);
        std::vector<std::size_t> labels;
        for (std::size_t i : order) {
            flat.insert(flat.end(), xs[i].begin(), xs[i].end());
            labels.push_back(ys[i]);
        }
        return Batch{Tensor({ys.size(), C, H, W}, std::move(flat)), std::move(labels)};
    };

    Dataset d;
    d.train = pack(train_x, train_y, 0x5a1);
    d.test = pack(test_x, test_y, 0x5a2);
    d.seed = spec.seed;
    d.classes = spec.classes;
    d.image_shape = spec.image_shape;
    return d;
}

Dataset generate_dataset(std::uint64_t seed, std::size_t classes, std::size_t per_class, Shape image_shape) {
    DatasetSpec spec;
    spec.seed = seed;
    spec.classes = classes;
    spec.per_class = per_class;
    spec.image_shape = std::move(image_shape);
    return generate_dataset(spec);
}

std::vector<std::string> TrainConfig::problems() const {
    std::vector<std::string> errs;
    if (epochs < 1) errs.push_back("epochs must be >= 1");
    if (!(learning_rate >= 0 && std::isfinite(learning_rate))) errs.push_back("learning_rate must be >= 0");
    if (batch_size < 1) errs.push_back("batch_size must be >= 1");
    if (!(weight_decay >= 0 && std::isfinite(weight_decay))) errs.push_back("weight_decay must be >= 0");
    return errs;
}

void TrainConfig::validate() const {
    auto errs = problems();
    if (!errs.empty()) {
        std::string msg = "invalid training config:";
        for (const auto& e : errs) msg += "\n  " + e;
        throw std::invalid_argument(msg);
    }
}

Batch select(const Batch& from, const std::vector<std::size_t>& rows) {
    if (rows.empty()) throw ShapeError("select: empty row list");
    const std::size_t n = from.images.row_size();
    Shape s = from.images.shape();
    s[0] = rows.size();
    std::vector<Real> data;
    data.reserve(rows.size() * n);
    std::vector<std::size_t> labels;
    labels.reserve(rows.size());
    for (std::size_t r : rows) {
        if (r >= from.size()) throw ShapeError("select: row " + std::to_string(r) + " out of range");
        auto row = from.images.row(r);
        data.insert(data.end(), row.begin(), row.end());
        labels.push_back(from.labels[r]);
    }
    return Batch{Tensor(std::move(s), std::move(data)), std::move(labels)};
}

Real accuracy(const Network& net, const Batch& batch) {
    if (batch.size() == 0) return 0;
    auto pred = predict(net, batch.images);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == batch.labels[i];
    return static_cast<Real>(hit) / static_cast<Real>(pred.size());
}

TrainResult train(const ArchSpec& arch, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (arch.input_shape != data.image_shape)
        throw ShapeError("architecture input " + to_string(arch.input_shape) + " does not match dataset images " +
                         to_string(data.image_shape));
    if (arch.classes != data.classes)
        throw ShapeError("architecture has " + std::to_string(arch.classes) + " classes, dataset has " +
                         std::to_string(data.classes));
    const kernels::KernelTable& kt = kernels::active();
    TrainResult out{init_network(arch, cfg.seed), {}, 0, 0};
    Network& net = out.net;
    const std::size_t N = data.train.size();
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, {0x54a1, epoch}));
        for (std::size_t i = N; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        Real total = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < N; start += cfg.batch_size) {
            std::size_t end = std::min(N, start + cfg.batch_size);
            Batch mb = select(data.train, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                                   order.begin() + static_cast<std::ptrdiff_t>(end)));
            GradPair g = backward(net, mb, {}, {.input = false, .params = true});
            if (!std::isfinite(g.loss) || !all_finite(g.grad_params))
                throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) + " (loss " +
                                       real_to_text(g.loss) + "); lower the learning rate");
            auto theta = net.params();
            if (cfg.weight_decay > 0) kt.axpy(cfg.weight_decay, theta.data(), g.grad_params.data(), theta.size());
            kt.axpy(-cfg.learning_rate, g.grad_params.data(), theta.data(), theta.size());
            total += g.loss;
            ++batches;
        }
        out.epoch_losses.push_back(total / static_cast<Real>(batches));
    }
    if (!all_finite(net.params())) throw TrainingDiverged("training produced non-finite parameters");
    out.train_accuracy = accuracy(net, data.train);
    out.test_accuracy = accuracy(net, data.test);
    return out;
}

Container to_container(const Network& net) {
    Container c;
    c.kind = "network";
    c.attributes = {
        {"layers", net.describe()},
        {"input_shape", shape_to_text(net.input_shape())},
        {"input_offset", real_to_text(net.input_transform().offset)},
        {"input_scale", real_to_text(net.input_transform().scale)},
    };
    auto theta = net.params();
    for (const ParamSlot& s : net.param_slots()) {
        std::vector<Real> v(theta.begin() + static_cast<std::ptrdiff_t>(s.offset),
                            theta.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size()));
        c.tensors.emplace_back(s.name, Tensor(s.shape, std::move(v)));
    }
    return c;
}

Network network_from_container(const Container& c) {
    expect_kind(c, "network");
    InputTransform tf{text_to_real(c.require_attribute("input_offset")),
                      text_to_real(c.require_attribute("input_scale"))};
    Network net = [&] {
        try {
            return Network(text_to_shape(c.require_attribute("input_shape")),
                           parse_layers(c.require_attribute("layers")), tf);
        } catch (const ShapeError& e) {
            throw ContainerError(ContainerErrc::malformed, std::string("network description: ") + e.what());
        }
    }();
    if (c.tensors.size() != net.param_slots().size())
        throw ContainerError(ContainerErrc::malformed, "network container has the wrong number of tensors");
    auto theta = net.params();
    for (std::size_t i = 0; i < net.param_slots().size(); ++i) {
        const ParamSlot& s = net.param_slots()[i];
        const auto& [name, t] = c.tensors[i];
        if (name != s.name || t.shape() != s.shape)
            throw ContainerError(ContainerErrc::malformed,
                                 "tensor '" + name + "' does not match slot '" + s.name + "' " + to_string(s.shape));
        std::copy(t.data().begin(), t.data().end(), theta.begin() + static_cast<std::ptrdiff_t>(s.offset));
    }
    return net;
}

Container to_container(const Dataset& data) {
    Container c;
    c.kind = "dataset";
    c.attributes = {
        {"seed", std::to_string(data.seed)},
        {"classes", std::to_string(data.classes)},
        {"image_shape", shape_to_text(data.image_shape)},
        {"train_count", std::to_string(data.train.size())},
    };
    const std::size_t n_pix = element_count(data.image_shape);
    const std::size_t n = data.train.size() + data.test.size();
    std::vector<Real> images;
    images.reserve(n * n_pix);
    images.insert(images.end(), data.train.images.data().begin(), data.train.images.data().end());
    images.insert(images.end(), data.test.images.data().begin(), data.test.images.data().end());
    std::vector<std::size_t> labels = data.train.labels;
    labels.insert(labels.end(), data.test.labels.begin(), data.test.labels.end());
    Shape s{n};
    s.insert(s.end(), data.image_shape.begin(), data.image_shape.end());
    c.tensors.emplace_back("images", Tensor(std::move(s), std::move(images)));
    c.tensors.emplace_back("labels", labels_tensor(labels));
    return c;
}

std::vector<std::size_t> labels_from_tensor(const Tensor& t, std::size_t classes) {
    std::vector<std::size_t> out;
    out.reserve(t.size());
    for (Real v : t.data()) {
        if (!(v >= 0) || v != std::floor(v) || (classes > 0 && v >= static_cast<Real>(classes)))
            throw ContainerError(ContainerErrc::malformed, "invalid label value " + real_to_text(v));
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

Dataset dataset_from_container(const Container& c) {
    expect_kind(c, "dataset");
    Dataset d;
    d.seed = text_to_u64(c.require_attribute("seed"));
    d.classes = text_to_u64(c.require_attribute("classes"));
    d.image_shape = text_to_shape(c.require_attribute("image_shape"));
    const std::size_t n_train = text_to_u64(c.require_attribute("train_count"));
    const Tensor& images = c.require_tensor("images");
    const Tensor& labels_t = c.require_tensor("labels");
    if (images.rank() != 4 || Shape(images.shape().begin() + 1, images.shape().end()) != d.image_shape ||
        labels_t.rank() != 1 || labels_t.size() != images.dim(0) || n_train == 0 || n_train >= images.dim(0))
        throw ContainerError(ContainerErrc::malformed, "dataset tensors are inconsistent");
    auto labels = labels_from_tensor(labels_t, d.classes);
    const std::size_t n = images.dim(0);
    d.train.images = images.rows(0, n_train);
    d.test.images = images.rows(n_train, n - n_train);
    d.train.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_train));
    d.test.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(n_train), labels.end());
    return d;
}

std::vector<std::uint8_t> save(const Network& net) { return encode(to_container(net)); }
Network load_network(const std::vector<std::uint8_t>& bytes) { return network_from_container(decode(bytes)); }
std::vector<std::uint8_t> save(const Dataset& data) { return encode(to_container(data)); }
Dataset load_dataset(const std::vector<std::uint8_t>& bytes) { return dataset_from_container(decode(bytes)); }

void save_file(const std::filesystem::path& path, const Network& net) { write_file(path, save(net)); }
void save_file(const std::filesystem::path& path, const Dataset& data) { write_file(path, save(data)); }
Network load_network_file(const std::filesystem::path& path) { return load_network(read_file(path)); }
Dataset load_dataset_file(const std::filesystem::path& path) { return load_dataset(read_file(path)); }

}  // namespace mup
