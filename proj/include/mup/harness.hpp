#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mup/attacks.hpp"
#include "mup/model_zoo.hpp"

namespace mup {

/// A harness run cannot produce meaningful numbers (e.g. a victim below the
/// clean-accuracy floor).
class HarnessError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct ZooModel {
    std::string id;  // e.g. "cnn-1"
    Network net;
};
using Zoo = std::vector<ZooModel>;

/// Trains replica i of every architecture with training seed replica_seeds[i];
/// ids are "<arch>-<i>".
Zoo train_zoo(const Dataset& data, const std::vector<std::string>& archs,
              const std::vector<std::uint64_t>& replica_seeds, const TrainConfig& base);

/// CRC-32 of the canonical container bytes, as 8 hex digits.
std::string fingerprint(const Network& net);
std::string fingerprint(const Dataset& data);

struct SuccessRate {
    std::size_t examples = 0;
    Real rate = 0;             // victim misclassifies the adversarial input
    Real clean_accuracy = 0;   // victim is correct on the clean input
    Real rate_on_correct = 0;  // rate restricted to clean-correct examples (0 if none)
    std::vector<std::uint8_t> fooled;
};

/// Untargeted top-1 success of `adversarial` against `victim`.
SuccessRate evaluate_success(const Network& victim, const Batch& clean, const Tensor& adversarial);

struct HarnessConfig {
    AttackConfig attack;  // base settings; methods are applied on top
    /// Masking ratio of the mup methods, by inner gradient.
    std::map<InnerGradient, Real> ratios{
        {InnerGradient::plain, 0.15}, {InnerGradient::sim, 0.30}, {InnerGradient::taigr, 0.25}};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::size_t eval_size = 500;  // clipped to the test split size
    Real accuracy_floor = 0.8;    // clean test accuracy every model must reach

    std::vector<std::string> problems() const;

    /// apply_method(name, attack) with the method's ratio and the given seed;
    /// throws ConfigError if the result is invalid.
    AttackConfig method(const std::string& name, std::uint64_t seed) const;
};

/// Evaluation inputs for one attack seed: eval_size test rows drawn without
/// replacement from the seed's own stream. Every method and masking ratio
/// run under the same seed sees the same rows and the same attack stream.
Batch eval_subset(const Dataset& data, std::uint64_t seed, std::size_t eval_size);

/// Throws HarnessError naming every model below the floor.
void check_clean_accuracy(const Zoo& zoo, const Dataset& data, Real floor);

struct TransferCell {
    std::string surrogate;
    std::string victim;
    std::string method;
    std::uint64_t seed = 0;
    bool white_box = false;
    SuccessRate success;
};

struct TransferReport {
    std::vector<std::string> models;  // every model involved
    std::vector<std::string> surrogates;
    std::vector<std::string> victims;
    std::vector<std::string> methods;
    std::vector<Real> ratios;  // masking ratio of each method
    std::vector<TransferCell> cells;  // surrogate-major, then method, seed, victim
    nlohmann::json config;
    std::map<std::string, std::string> fingerprints;  // model id or "dataset" -> crc

    /// Mean rate over seeds for one (surrogate, victim, method).
    Real mean_rate(const std::string& surrogate, const std::string& victim, const std::string& method) const;
    /// Mean over victims other than the surrogate, for one seed.
    Real transfer_average(const std::string& surrogate, const std::string& method, std::uint64_t seed) const;
    /// transfer_average further averaged over seeds.
    Real transfer_average(const std::string& surrogate, const std::string& method) const;
};

/// Every surrogate attacks with every method under every seed; each
/// adversarial batch is evaluated on every victim. Empty id lists select the
/// whole zoo. Every surrogate needs at least one victim other than itself.
TransferReport transfer_matrix(const Zoo& zoo, const Dataset& data, const std::vector<std::string>& methods,
                               const HarnessConfig& cfg, const std::vector<std::string>& surrogates = {},
                               const std::vector<std::string>& victims = {});

struct SweepPoint {
    Real ratio = 0;
    Real mean_rate = 0;                            // over victims and seeds
    std::vector<Real> per_seed;                    // over victims, one per seed
    std::map<std::string, Real> per_victim;        // over seeds
};

struct SweepCurve {
    std::string surrogate;
    std::string method;  // e.g. "mup-taigr"
    std::vector<SweepPoint> points;
    nlohmann::json config;
    std::map<std::string, std::string> fingerprints;
};

/// Masking-ratio sweep for `method` ("mup-X" or "mupabs-X"). `ratios` must be
/// strictly increasing and start at 0. Victims exclude the surrogate.
SweepCurve ratio_sweep(const ZooModel& surrogate, const Zoo& victims, const Dataset& data,
                       const std::string& method, const std::vector<Real>& ratios, const HarnessConfig& cfg);

struct AblationRow {
    std::string method;  // "X", "mup-X", "mupabs-X"
    Real mean_rate = 0;
    std::vector<Real> per_seed;
    nlohmann::json config;
};

struct AblationReport {
    std::string surrogate;
    std::string base;  // X
    Real ratio = 0;
    std::vector<AblationRow> rows;
    std::map<std::string, std::string> fingerprints;
};

/// No masking vs Taylor vs magnitude masking at the base method's ratio, same seeds.
AblationReport metric_ablation(const ZooModel& surrogate, const Zoo& victims, const Dataset& data,
                               const std::string& base, const HarnessConfig& cfg);

nlohmann::json to_json(const AttackConfig& cfg);
nlohmann::json to_json(const HarnessConfig& cfg);
nlohmann::json to_json(const TransferReport& report);
nlohmann::json to_json(const SweepCurve& curve);
nlohmann::json to_json(const AblationReport& report);

/// Flat tables. Columns:
///   transfer: surrogate,victim,method,ratio,white_box,seeds,success_rate,success_rate_on_correct,clean_accuracy
///   sweep:    surrogate,victim,method,ratio,white_box,seeds,success_rate
///   ablation: surrogate,victim,method,ratio,white_box,seeds,success_rate
/// In sweep and ablation tables victim "mean" carries the victim average.
std::string to_csv(const TransferReport& report);
std::string to_csv(const SweepCurve& curve);
std::string to_csv(const AblationReport& report);

/// Version tag stored in every JSON report.
inline constexpr int kReportSchema = 1;

/// Shortest round-trip decimal text, so reports are byte-stable.
std::string format_real(Real v);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace mup
