#pragma once

// Declarative run configuration: an INI file with the sections
// [run] [dataset] [train] [attack] [eval] [sweep] [ablate].
// configs/example.ini documents every key.
//
// Every random stream derives from [run] seed:
//   dataset                 derive_seed(seed, {kDatasetStream})
//   model replica i         derive_seed(seed, {kModelStream, i})
//   attack seed j           derive_seed(seed, {kAttackStream, j})

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mup/harness.hpp"

namespace mup {

inline constexpr std::uint64_t kDatasetStream = 0xda7a;
inline constexpr std::uint64_t kModelStream = 0x30de1;
inline constexpr std::uint64_t kAttackStream = 0xa77ac;

struct RunConfig {
    std::uint64_t seed = 1;
    std::filesystem::path output_dir = "runs/default";

    DatasetSpec dataset;  // dataset.seed is derived
    std::vector<std::string> archs{"mlp", "cnn"};
    std::size_t replicas = 2;
    TrainConfig train;  // train.seed is derived per replica

    std::string attack_method = "mup-taigr";
    std::string attack_surrogate = "mlp-0";
    std::optional<Real> attack_ratio;  // overrides the method's ratio for the attack command
    HarnessConfig harness;             // harness.seeds are derived

    std::vector<std::string> methods{"mim", "mup-mim", "taigr", "mup-taigr"};
    std::vector<std::string> surrogates;  // empty: every model
    std::vector<std::string> victims;     // empty: every model
    std::string sweep_method = "mup-taigr";
    std::vector<Real> sweep_ratios{0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5};
    std::string ablation_base = "taigr";

    std::vector<std::string> model_ids() const;
    std::uint64_t replica_seed(std::size_t replica) const;

    /// Configuration of the attack command: attack_method under attack seed 0.
    AttackConfig attack_config() const;

    std::filesystem::path dataset_path() const { return output_dir / "dataset.mupc"; }
    std::filesystem::path model_path(const std::string& id) const { return output_dir / "models" / (id + ".mupc"); }
};

/// Parses INI text. Unknown sections or keys, unparsable values and violated
/// constraints are all collected and thrown together as one ConfigError.
RunConfig parse_run_config(const std::string& text);

/// Reads and parses a file; a missing or unreadable file throws IoError naming the path.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace mup
