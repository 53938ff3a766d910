#pragma once

#include "seqnet/model.hpp"
#include "seqnet/preprocess.hpp"
#include "seqnet/train.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace seqnet {

// Appended-poison attack. The poison is a byte region grafted onto the end of
// a malicious binary; its normalized values take signed-gradient steps that
// lower P(malicious), and the bytes are re-derived from them every iteration.

struct PoisonConfig {
    std::size_t poison_length_bytes = 32000;
    std::size_t iterations = 20;  // 0 is allowed and yields the clean prediction only
    double step = 1.0 / 256.0;
    double clamp_min = -1.0;
    double clamp_max = 1.0;
    std::size_t samples_to_attack = 500;
    std::size_t stall_limit = 5;  // consecutive all-zero poison gradients
    std::uint64_t seed = 0;       // sample selection in campaigns

    void validate() const;
};

/// Exact three-way sign.
int sign(double x);

// x - step * sign(g), clamped. The update direction lowers the quantity g is
// the gradient of. Throws ShapeError on a length mismatch.
std::vector<double> poison_step(std::span<const double> poison, std::span<const double> grad,
                                const PoisonConfig& config = {});

struct PoisonGradient {
    double prob = 0;                 // P(malicious) of original + poison
    std::vector<double> input_grad;  // dP/dx over the resampled model input
    std::vector<double> poison_grad; // dP/d(normalized poison value)
};

// Forward and backward of P(malicious) on `original` with `poison` normalized
// values appended, routed back through the resampling to the poison positions.
PoisonGradient poison_gradient(SeqNetModel& model, std::span<const std::uint8_t> original,
                               std::span<const double> poison);

/// P(malicious) of a raw byte string (eval mode, no graph).
double malicious_probability(SeqNetModel& model, std::span<const std::uint8_t> bytes);

struct AttackTrace {
    // y[0] is the clean sample's P(malicious); y[t] is the probability after t
    // updates with the poison quantized to bytes. y_continuous[t] is the same
    // with the unquantized poison values (y_continuous[0] = y[0]).
    std::vector<double> y;
    std::vector<double> y_continuous;
    std::vector<std::uint8_t> poison;  // final poison bytes
    std::size_t iterations_run = 0;
    bool evaded = false;  // final y <= 0.5
    bool stalled = false;
    std::string digest;

    /// True if the quantized sample was classified benign after at most `budget` updates.
    bool evaded_within(std::size_t budget) const;
};

// Runs up to config.iterations updates and stops early once the quantized
// sample is classified benign. Throws AttackError if the sample is not
// labelled malicious or not detected to begin with. The model must be in eval
// mode; parameter gradients are not touched.
AttackTrace attack(SeqNetModel& model, const RawSample& sample, const PoisonConfig& config);

struct CampaignResult {
    std::vector<std::size_t> budgets;
    std::vector<std::size_t> evaded;  // per budget
    std::size_t total = 0;            // samples attacked
    std::size_t not_detected = 0;     // malicious samples passed over (already classified benign)
    std::vector<AttackTrace> traces;

    /// `iterations,evaded_count,total`.
    std::string to_csv() const;
};

// Attacks up to config.samples_to_attack initially detected malicious samples
// from the manifest, taken in a seeded random order. One trajectory of
// max(budgets) iterations per sample is reused for every budget, so evasion
// counts are non-decreasing in the budget.
CampaignResult attack_campaign(SeqNetModel& model, const DatasetManifest& manifest, const PoisonConfig& config,
                               std::vector<std::size_t> budgets, const LogFn& log = {});

/// `t,y` rows of one trace.
std::string trace_csv(const AttackTrace& trace);

} // namespace seqnet
