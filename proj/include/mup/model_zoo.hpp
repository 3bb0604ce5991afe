#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mup/container.hpp"
#include "mup/network.hpp"

namespace mup {

/// Architecture description: a layer text plus the per-example input shape.
struct ArchSpec {
    std::string name;
    std::string layers;  // parse_layers() syntax
    Shape input_shape;   // [C, H, W]
    std::size_t classes = 0;

    std::vector<LayerSpec> layer_specs() const;
};

/// Built-in architectures for an input of shape `input` and `classes` outputs:
///   "mlp"  flatten dense(256) relu dense(256) relu dense(K)
///   "cnn"  conv(8,3,same) relu conv(8,3,same) relu flatten dense(K)
///   "wcnn" conv(16,5,same) relu flatten dense(64) relu dense(K)
/// Throws std::invalid_argument for an unknown name.
ArchSpec arch_preset(const std::string& name, const Shape& input, std::size_t classes);
std::vector<std::string> arch_preset_names();

/// Fan-in uniform initialization: every weight and bias of a layer is drawn
/// from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), in parameter-layout order.
Network init_network(const ArchSpec& arch, std::uint64_t seed);

struct DatasetSpec {
    std::uint64_t seed = 1;
    std::size_t classes = 10;
    std::size_t per_class = 200;
    Shape image_shape{1, 12, 12};
    std::size_t blobs = 3;        // Gaussian blobs per class template and channel
    Real background = 128;        // pixel level the templates are added to
    Real amplitude_lo = 50;       // template contrast, drawn per image
    Real amplitude_hi = 90;
    Real noise = 30;              // per-pixel Gaussian noise sigma
    std::size_t shift = 1;        // max circular shift in each direction
    Real test_fraction = 0.2;     // per class, rounded down

    std::vector<std::string> problems() const;
    /// Throws std::invalid_argument listing every problem.
    void validate() const;
};

struct Dataset {
    Batch train;
    Batch test;
    std::uint64_t seed = 0;
    std::size_t classes = 0;
    Shape image_shape;
};

/// Synthetic class-structured images. Each class owns a fixed template made
/// of signed Gaussian blobs; an example is background + a * shift(template) + noise,
/// clamped to [0, 255], with a drawn per image. Each class contributes
/// floor(test_fraction * per_class) test examples and the rest to training;
/// both splits are shuffled. Deterministic in spec.seed.
Dataset generate_dataset(const DatasetSpec& spec);

/// Minimal form used by tests: default shape parameters.
Dataset generate_dataset(std::uint64_t seed, std::size_t classes, std::size_t per_class, Shape image_shape);

struct TrainConfig {
    std::size_t epochs = 30;
    Real learning_rate = 0.05;
    std::size_t batch_size = 32;
    std::uint64_t seed = 1;
    Real weight_decay = 0;

    std::vector<std::string> problems() const;
    void validate() const;
};

struct TrainResult {
    Network net;
    std::vector<Real> epoch_losses;  // mean minibatch loss per epoch
    Real train_accuracy = 0;
    Real test_accuracy = 0;
};

class TrainingDiverged : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Minibatch SGD on the mean cross-entropy, constant learning rate, optional
/// L2 weight decay. The epoch order is a fresh shuffle drawn from the seed.
TrainResult train(const ArchSpec& arch, const Dataset& data, const TrainConfig& cfg);

Real accuracy(const Network& net, const Batch& batch);

// Containers -----------------------------------------------------------------

Container to_container(const Network& net);
Network network_from_container(const Container& c);

/// Dataset container: tensors "images" [N, C, H, W] and "labels" [N], the
/// training examples first; attribute "train_count" splits them.
Container to_container(const Dataset& data);
Dataset dataset_from_container(const Container& c);

std::vector<std::uint8_t> save(const Network& net);
Network load_network(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> save(const Dataset& data);
Dataset load_dataset(const std::vector<std::uint8_t>& bytes);

void save_file(const std::filesystem::path& path, const Network& net);
void save_file(const std::filesystem::path& path, const Dataset& data);
Network load_network_file(const std::filesystem::path& path);
Dataset load_dataset_file(const std::filesystem::path& path);

/// Label tensor [N] of integral values < classes (0 = unchecked) to indices.
std::vector<std::size_t> labels_from_tensor(const Tensor& t, std::size_t classes);
Tensor labels_tensor(const std::vector<std::size_t>& labels);

/// Batch of the given rows of `from`, in the given order.
Batch select(const Batch& from, const std::vector<std::size_t>& rows);

}  // namespace mup
