#pragma once

#include "seqnet/model.hpp"
#include "seqnet/preprocess.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace seqnet {

// ---------------------------------------------------------------------------
// Manifests: UTF-8 lines `path<TAB>label<TAB>digest`. Relative paths are
// resolved against the manifest's directory.

enum class Split { train, validation };

struct ManifestEntry {
    std::filesystem::path path;
    Label label = Label::unknown;
    std::string digest;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    Split split = Split::train;

    /// Throws ManifestError on malformed lines, bad labels or duplicate digests.
    static DatasetManifest read(const std::filesystem::path& path, Split split = Split::train);
    /// Paths are written relative to `path`'s directory when they live below it.
    void write(const std::filesystem::path& path) const;

    void validate() const;
    std::size_t count(Label label) const;
};

/// Throws ManifestError if any digest appears in both manifests.
void check_disjoint(const DatasetManifest& a, const DatasetManifest& b);

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double alpha = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamMoments {
    std::vector<double> m;
    std::vector<double> v;
};

// One bias-corrected Adam update of `params` in place; t is the 1-based step.
// Empty moments are sized (zeroed) on first use.
void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& state, std::size_t t,
               const AdamConfig& config);

class Adam {
public:
    Adam(nn::NamedTensors params, AdamConfig config);

    /// Applies one update from the parameters' accumulated gradients.
    void step();
    void zero_grad();
    std::size_t steps() const { return t_; }

private:
    nn::NamedTensors params_;
    std::vector<AdamMoments> moments_;
    AdamConfig config_;
    std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Metrics

struct MetricsReport {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    double accuracy = 0, precision = 0, recall = 0, f1 = 0;
    double loss = 0;  // mean cross-entropy over the evaluated samples
    // Set when a ratio had a zero denominator and was reported as 0.
    bool degenerate_precision = false;
    bool degenerate_recall = false;
    bool degenerate_f1 = false;

    static MetricsReport from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn);
    std::uint64_t total() const { return tp + fp + fn + tn; }
};

// ---------------------------------------------------------------------------
// Datasets held in memory after preprocessing.

struct Dataset {
    std::vector<std::vector<double>> inputs;
    std::vector<int> labels;  // 0 benign, 1 malicious
    std::vector<std::string> digests;
    std::vector<std::filesystem::path> paths;
    std::size_t skipped = 0;  // unreadable files

    std::size_t size() const { return inputs.size(); }
};

using LogFn = std::function<void(const std::string&)>;

/// Reads and preprocesses every entry; unreadable files are skipped and reported through `log`.
Dataset load_dataset(const DatasetManifest& manifest, std::size_t target_length, const LogFn& log = {});

/// Packs samples [begin, end) of `order` into a [n, 1, L] tensor.
Tensor make_batch(const Dataset& data, std::span<const std::size_t> order);

/// P(malicious) for every sample, in eval mode without recording a graph.
std::vector<double> predict(SeqNetModel& model, const Dataset& data, std::size_t batch_size = 32);

/// Requires eval mode and a non-empty dataset. Does not touch parameters or statistics.
MetricsReport evaluate(SeqNetModel& model, const Dataset& data, std::size_t batch_size = 32);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    std::size_t epochs = 70;
    std::size_t batch_size = 32;
    AdamConfig adam;
    std::uint64_t seed = 0;
    bool shuffle = true;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 0-based
    double train_loss = 0;  // mean over the epoch's samples
    MetricsReport validation;
};

struct TrainCallbacks {
    std::function<void(const EpochRecord&)> on_epoch;
    LogFn log;
};

// Runs config.epochs epochs of seeded shuffling, mini-batch Adam on the mean
// cross-entropy, then a validation pass. With alpha = 0 the model is frozen:
// no parameter update and no running-statistics update either. The model is
// left in eval mode.
std::vector<EpochRecord> train(SeqNetModel& model, const Dataset& train_set, const Dataset& validation_set,
                               const TrainConfig& config, const TrainCallbacks& callbacks = {});

/// Per-epoch table: epoch,train_loss,val_loss,tp,fp,fn,tn,accuracy,precision,recall,f1.
std::string epochs_csv(const std::vector<EpochRecord>& records);

/// Mean and sample standard deviation of the validation metrics over the last `last` epochs, as JSON.
std::string summary_json(const std::vector<EpochRecord>& records, std::size_t last = 30);

} // namespace seqnet
