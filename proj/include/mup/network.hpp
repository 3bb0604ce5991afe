#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mup/tensor.hpp"

namespace mup {

enum class Padding { same, valid };
enum class LayerKind { dense, conv, relu, flatten };

std::string_view to_string(LayerKind kind) noexcept;

struct DenseSpec {
    std::size_t units = 0;
};
struct ConvSpec {
    std::size_t filters = 0;
    std::size_t kernel = 3;
    Padding padding = Padding::same;
};
struct ReluSpec {};
struct FlattenSpec {};

using LayerSpec = std::variant<DenseSpec, ConvSpec, ReluSpec, FlattenSpec>;

/// Text form used by configs and model containers, e.g.
/// "conv(8,3,same) relu flatten dense(5)".
std::string describe_layers(std::span<const LayerSpec> layers);
std::vector<LayerSpec> parse_layers(std::string_view text);

/// A layer with resolved per-example shapes and its slice of the flat parameter vector.
struct Layer {
    LayerKind kind = LayerKind::relu;
    Shape in_shape;
    Shape out_shape;
    std::size_t kernel = 0;
    std::size_t pad = 0;
    std::size_t weight_offset = 0;
    std::size_t weight_count = 0;
    std::size_t bias_offset = 0;
    std::size_t bias_count = 0;

    bool has_params() const noexcept { return weight_count > 0; }
};

/// One named parameter tensor inside the flat parameter vector.
struct ParamSlot {
    std::string name;  // "layer<k>.weight" or "layer<k>.bias"
    std::size_t layer = 0;
    bool is_bias = false;
    std::size_t offset = 0;
    Shape shape;

    std::size_t size() const { return element_count(shape); }
};

/// Fixed affine map applied to raw [0, 255] pixels before the first layer.
struct InputTransform {
    Real offset = 128;
    Real scale = 1.0 / 64;
};

/// Feed-forward classifier. Parameters live in one flat vector whose order is
/// the canonical parameter layout: layers in order, weight before bias, each
/// tensor row-major. A global parameter index is a position in that vector.
class Network {
   public:
    /// `input_shape` is the per-example [C, H, W]; the last layer must yield [K].
    Network(Shape input_shape, std::vector<LayerSpec> specs, InputTransform transform = {});

    const Shape& input_shape() const noexcept { return input_shape_; }
    std::size_t num_classes() const noexcept { return num_classes_; }
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    const std::vector<LayerSpec>& specs() const noexcept { return specs_; }
    const std::vector<ParamSlot>& param_slots() const noexcept { return slots_; }
    const InputTransform& input_transform() const noexcept { return transform_; }

    std::size_t param_count() const noexcept { return params_.size(); }
    std::span<const Real> params() const noexcept { return params_; }
    std::span<Real> params() noexcept { return params_; }

    /// Global index of element `element` of the named slot; throws if unknown.
    std::size_t global_index(std::string_view slot_name, std::size_t element) const;

    /// True when global index `i` belongs to a bias tensor.
    bool is_bias_index(std::size_t i) const;

    std::string describe() const { return describe_layers(specs_); }

   private:
    Shape input_shape_;
    std::vector<LayerSpec> specs_;
    InputTransform transform_;
    std::vector<Layer> layers_;
    std::vector<ParamSlot> slots_;
    std::vector<Real> params_;
    std::size_t num_classes_ = 0;
};

bool bitwise_equal(const Network& a, const Network& b) noexcept;

/// Images [B, C, H, W] with pixel values in [0, 255] and one label per image.
struct Batch {
    Tensor images;
    std::vector<std::size_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

/// Checks the Batch invariants against a network: shape, label range, pixel range.
void validate_batch(const Network& net, const Batch& batch);

/// Multiplicative per-neuron factors applied after every ReLU layer, one
/// vector per ReLU in layer order, each sized to that layer's per-example output.
struct DropoutPlan {
    std::vector<std::vector<Real>> factors;
};

enum class Reduction { mean, sum };

struct EvalOptions {
    /// Binary parameter mask aligned with the parameter layout; empty means none.
    /// Evaluation uses theta * mask without touching the stored parameters.
    std::span<const std::uint8_t> mask;
    const DropoutPlan* dropout = nullptr;
    Reduction reduction = Reduction::mean;
};

struct GradRequest {
    bool input = true;
    bool params = true;
};

struct GradPair {
    Tensor grad_input;             // d loss / d images, images' shape
    std::vector<Real> grad_params;  // d loss / d theta, aligned with the layout
    Real loss = 0;
};

/// Logits [B, K].
Tensor forward(const Network& net, const Tensor& images, const EvalOptions& opts = {});

/// Softmax cross-entropy reduced over the batch (mean by default).
Real loss(const Network& net, const Batch& batch, const EvalOptions& opts = {});

/// Per-example softmax cross-entropy.
std::vector<Real> example_losses(const Network& net, const Batch& batch, const EvalOptions& opts = {});

/// Reverse-mode gradients of loss(net, batch, opts). With a mask, parameter
/// gradients are taken w.r.t. the pre-mask parameters, so masked entries are zero.
GradPair backward(const Network& net, const Batch& batch, const EvalOptions& opts = {},
                  GradRequest request = {});

std::vector<std::size_t> predict(const Network& net, const Tensor& images,
                                 const EvalOptions& opts = {});

struct Coordinate {
    enum class Kind { input, param };
    Kind kind = Kind::input;
    std::size_t index = 0;
};

/// Central difference (loss(p + h e) - loss(p - h e)) / (2h) along one input
/// or parameter coordinate.
Real fd_gradient(const Network& net, const Batch& batch, Coordinate coordinate, Real h,
                 const EvalOptions& opts = {});

}  // namespace mup
