#include "seqnet/train.hpp"

#include "seqnet/errors.hpp"
#include "seqnet/parallel.hpp"
#include "text_util.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace seqnet {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Manifests

namespace {

bool is_hex_digest(const std::string& s) {
    return s.size() == 64 && std::all_of(s.begin(), s.end(), [](char c) {
               return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
           });
}

} // namespace

DatasetManifest DatasetManifest::read(const fs::path& path, Split split) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
    DatasetManifest m;
    m.split = split;
    const fs::path base = path.parent_path();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto fields = text::split(line, '\t');
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (fields.size() != 3) {
            throw ManifestError(where + ": expected path<TAB>label<TAB>digest, got " +
                                std::to_string(fields.size()) + " field(s)");
        }
        ManifestEntry e;
        e.path = fs::path(fields[0]);
        if (e.path.is_relative()) e.path = base / e.path;
        try {
            e.label = parse_label(fields[1]);
        } catch (const ManifestError& err) {
            throw ManifestError(where + ": " + err.what());
        }
        e.digest = fields[2];
        if (!is_hex_digest(e.digest)) throw ManifestError(where + ": digest is not a lowercase SHA-256 hex string");
        m.entries.push_back(std::move(e));
    }
    m.validate();
    return m;
}

void DatasetManifest::write(const fs::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
    const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
    for (const auto& e : entries) {
        fs::path p = e.path;
        const fs::path rel = p.lexically_proximate(base);
        if (!rel.empty() && *rel.begin() != "..") p = rel;
        out << p.generic_string() << '\t' << label_name(e.label) << '\t' << e.digest << '\n';
    }
    if (!out) throw IoError("error writing manifest '" + path.string() + "'");
}

void DatasetManifest::validate() const {
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        if (e.label != Label::benign && e.label != Label::malicious) {
            throw ManifestError("entry " + std::to_string(i) + " (" + e.path.string() + ") has no benign/malicious label");
        }
        auto [it, fresh] = seen.emplace(e.digest, i);
        if (!fresh) {
            throw ManifestError("duplicate digest " + e.digest + " at entries " + std::to_string(it->second) +
                                " and " + std::to_string(i));
        }
    }
}

std::size_t DatasetManifest::count(Label label) const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.label == label; }));
}

void check_disjoint(const DatasetManifest& a, const DatasetManifest& b) {
    std::unordered_map<std::string, const ManifestEntry*> seen;
    for (const auto& e : a.entries) seen.emplace(e.digest, &e);
    for (const auto& e : b.entries) {
        auto it = seen.find(e.digest);
        if (it != seen.end()) {
            throw ManifestError("digest " + e.digest + " appears in both splits (" + it->second->path.string() +
                                ", " + e.path.string() + ")");
        }
    }
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& state, std::size_t t,
               const AdamConfig& c) {
    if (t < 1) throw Error("adam_step: step counter starts at 1");
    if (grads.size() != params.size()) {
        throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
    }
    if (state.m.empty() && state.v.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ShapeError("adam_step: moment buffers do not match the parameter count");
    }
    const double td = static_cast<double>(t);
    const double bc1 = 1.0 - std::pow(c.beta1, td);
    const double bc2 = 1.0 - std::pow(c.beta2, td);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= c.alpha * mhat / (std::sqrt(vhat) + c.eps);
    }
}

Adam::Adam(nn::NamedTensors params, AdamConfig config)
    : params_(std::move(params)), moments_(params_.size()), config_(config) {}

void Adam::step() {
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].second;
        if (!p.has_grad()) continue;  // never reached by the loss
        adam_step(p.mutable_data(), p.grad(), moments_[i], t_, config_);
    }
}

void Adam::zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
}

// ---------------------------------------------------------------------------
// Metrics

MetricsReport MetricsReport::from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn) {
    MetricsReport r;
    r.tp = tp;
    r.fp = fp;
    r.fn = fn;
    r.tn = tn;
    const auto ratio = [](double num, double den, bool& flag) {
        if (den == 0.0) {
            flag = true;
            return 0.0;
        }
        return num / den;
    };
    bool unused = false;
    r.accuracy = ratio(static_cast<double>(tp + tn), static_cast<double>(r.total()), unused);
    r.precision = ratio(static_cast<double>(tp), static_cast<double>(tp + fp), r.degenerate_precision);
    r.recall = ratio(static_cast<double>(tp), static_cast<double>(tp + fn), r.degenerate_recall);
    r.f1 = ratio(2.0 * r.precision * r.recall, r.precision + r.recall, r.degenerate_f1);
    return r;
}

// ---------------------------------------------------------------------------
// Datasets

Dataset load_dataset(const DatasetManifest& manifest, std::size_t target_length, const LogFn& log) {
    const std::size_t n = manifest.entries.size();
    std::vector<std::vector<double>> values(n);
    std::vector<std::string> failures(n);
    std::vector<char> ok(n, 0);
    parallel_for(n, [&](std::size_t i) {
        const auto& e = manifest.entries[i];
        try {
            auto bytes = read_bytes(e.path);
            if (sha256_hex(bytes) != e.digest) {
                failures[i] = "digest mismatch";
                return;
            }
            values[i] = preprocess_bytes(bytes, target_length).values;
            ok[i] = 1;
        } catch (const Error& err) {
            failures[i] = err.what();
        }
    });
    Dataset d;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& e = manifest.entries[i];
        if (!ok[i]) {
            ++d.skipped;
            if (log) log("warning: skipping " + e.path.string() + ": " + failures[i]);
            continue;
        }
        d.inputs.push_back(std::move(values[i]));
        d.labels.push_back(e.label == Label::malicious ? 1 : 0);
        d.digests.push_back(e.digest);
        d.paths.push_back(e.path);
    }
    if (d.skipped > 0 && log) {
        log("warning: " + std::to_string(d.skipped) + " of " + std::to_string(n) + " file(s) skipped");
    }
    return d;
}

Tensor make_batch(const Dataset& data, std::span<const std::size_t> order) {
    if (order.empty()) throw ShapeError("make_batch: empty batch");
    const std::size_t L = data.inputs[order[0]].size();
    std::vector<double> values(order.size() * L);
    for (std::size_t b = 0; b < order.size(); ++b) {
        const auto& in = data.inputs.at(order[b]);
        if (in.size() != L) throw ShapeError("make_batch: samples have different lengths");
        std::copy(in.begin(), in.end(), values.begin() + static_cast<std::ptrdiff_t>(b * L));
    }
    return Tensor::from({order.size(), 1, L}, std::move(values));
}

namespace {

std::vector<std::size_t> iota_order(std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    return order;
}

// Fisher-Yates driven directly by the engine so the permutation does not depend
// on the standard library's distribution implementation.
void shuffle(std::vector<std::size_t>& order, std::mt19937_64& rng) {
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
}

struct Scores {
    std::vector<double> prob;
    double loss_sum = 0;
};

Scores score(SeqNetModel& model, const Dataset& data, std::size_t batch_size) {
    NoGradGuard guard;
    Scores s;
    s.prob.reserve(data.size());
    const auto order = iota_order(data.size());
    for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
        const std::size_t end = std::min(data.size(), begin + batch_size);
        std::span<const std::size_t> idx(order.data() + begin, end - begin);
        const Tensor logits = model.logits(make_batch(data, idx));
        const Tensor probs = nn::softmax2(logits);
        const std::span<const int> labels(data.labels.data() + begin, end - begin);
        s.loss_sum += nn::cross_entropy(logits, labels).item() * static_cast<double>(end - begin);
        for (std::size_t b = 0; b < idx.size(); ++b) s.prob.push_back(probs.data()[2 * b + 1]);
    }
    return s;
}

} // namespace

std::vector<double> predict(SeqNetModel& model, const Dataset& data, std::size_t batch_size) {
    if (batch_size == 0) throw SpecError("batch size must be at least 1");
    const nn::Mode saved = model.mode();
    model.set_mode(nn::Mode::eval);
    NoGradGuard guard;
    std::vector<double> out;
    out.reserve(data.size());
    const auto order = iota_order(data.size());
    for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
        const std::size_t end = std::min(data.size(), begin + batch_size);
        const Tensor probs = model.forward(make_batch(data, {order.data() + begin, end - begin}));
        for (std::size_t b = 0; b < end - begin; ++b) out.push_back(probs.data()[2 * b + 1]);
    }
    model.set_mode(saved);
    return out;
}

MetricsReport evaluate(SeqNetModel& model, const Dataset& data, std::size_t batch_size) {
    if (data.size() == 0) throw Error("evaluate: empty dataset");
    if (model.mode() != nn::Mode::eval) throw Error("evaluate: model must be in eval mode");
    if (batch_size == 0) throw SpecError("batch size must be at least 1");
    const Scores s = score(model, data, batch_size);
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const bool predicted = classify(s.prob[i]) == Label::malicious;
        const bool actual = data.labels[i] == 1;
        tp += predicted && actual;
        fp += predicted && !actual;
        fn += !predicted && actual;
        tn += !predicted && !actual;
    }
    MetricsReport r = MetricsReport::from_counts(tp, fp, fn, tn);
    r.loss = s.loss_sum / static_cast<double>(data.size());
    return r;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
    if (epochs < 1) throw SpecError("epochs must be at least 1");
    if (batch_size < 1) throw SpecError("batch size must be at least 1");
    if (!(adam.alpha >= 0.0) || !std::isfinite(adam.alpha)) throw SpecError("learning rate must be finite and >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
        throw SpecError("Adam betas must lie in [0, 1)");
    }
    if (!(adam.eps > 0.0)) throw SpecError("Adam epsilon must be positive");
}

std::vector<EpochRecord> train(SeqNetModel& model, const Dataset& train_set, const Dataset& validation_set,
                               const TrainConfig& config, const TrainCallbacks& callbacks) {
    config.validate();
    if (train_set.size() == 0) throw Error("train: the training split is empty");
    if (validation_set.size() == 0) throw Error("train: the validation split is empty");

    const bool frozen = config.adam.alpha == 0.0;
    model.set_requires_grad(!frozen);
    Adam optimizer(model.parameters(), config.adam);
    std::mt19937_64 rng(config.seed);
    auto order = iota_order(train_set.size());
    std::vector<EpochRecord> records;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.shuffle) shuffle(order, rng);
        double loss_sum = 0;
        if (frozen) {
            // Nothing may change, batch-norm statistics included, so the
            // training loss is measured in eval mode.
            model.set_mode(nn::Mode::eval);
            loss_sum = score(model, train_set, config.batch_size).loss_sum;
        } else {
            model.set_mode(nn::Mode::train);
            for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
                const std::size_t end = std::min(order.size(), begin + config.batch_size);
                std::span<const std::size_t> idx(order.data() + begin, end - begin);
                std::vector<int> labels(idx.size());
                for (std::size_t b = 0; b < idx.size(); ++b) labels[b] = train_set.labels[idx[b]];
                optimizer.zero_grad();
                Tensor loss = nn::cross_entropy(model.logits(make_batch(train_set, idx)), labels);
                loss_sum += loss.item() * static_cast<double>(idx.size());
                loss.backward();
                optimizer.step();
            }
        }
        model.set_mode(nn::Mode::eval);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train_set.size());
        rec.validation = evaluate(model, validation_set, config.batch_size);
        records.push_back(rec);
        if (callbacks.on_epoch) callbacks.on_epoch(rec);
        if (callbacks.log) {
            const auto& v = rec.validation;
            callbacks.log("epoch " + std::to_string(epoch) + " train_loss=" + text::fmt(rec.train_loss) +
                          " val_loss=" + text::fmt(v.loss) + " val_acc=" + text::fmt(v.accuracy) +
                          " precision=" + text::fmt(v.precision) + " recall=" + text::fmt(v.recall) +
                          (v.degenerate_precision || v.degenerate_recall ? " (degenerate denominator)" : ""));
        }
    }
    optimizer.zero_grad();
    model.set_requires_grad(true);
    model.set_mode(nn::Mode::eval);
    return records;
}

std::string epochs_csv(const std::vector<EpochRecord>& records) {
    std::ostringstream out;
    out << "epoch,train_loss,val_loss,tp,fp,fn,tn,accuracy,precision,recall,f1\n";
    for (const auto& r : records) {
        const auto& v = r.validation;
        out << r.epoch << ',' << text::fmt(r.train_loss) << ',' << text::fmt(v.loss) << ',' << v.tp << ',' << v.fp
            << ',' << v.fn << ',' << v.tn << ',' << text::fmt(v.accuracy) << ',' << text::fmt(v.precision) << ','
            << text::fmt(v.recall) << ',' << text::fmt(v.f1) << '\n';
    }
    return out.str();
}

std::string summary_json(const std::vector<EpochRecord>& records, std::size_t last) {
    if (records.empty()) throw Error("summary_json: no epochs recorded");
    const std::size_t n = std::min(last, records.size());
    const std::size_t first = records.size() - n;
    auto stat = [&](auto get) {
        double mean = 0;
        for (std::size_t i = first; i < records.size(); ++i) mean += get(records[i]);
        mean /= static_cast<double>(n);
        double ss = 0;
        for (std::size_t i = first; i < records.size(); ++i) ss += (get(records[i]) - mean) * (get(records[i]) - mean);
        const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
        return json{{"mean", mean}, {"std", sd}};
    };
    json j;
    j["epochs"] = records.size();
    j["window"] = n;
    j["accuracy"] = stat([](const EpochRecord& r) { return r.validation.accuracy; });
    j["precision"] = stat([](const EpochRecord& r) { return r.validation.precision; });
    j["recall"] = stat([](const EpochRecord& r) { return r.validation.recall; });
    j["f1"] = stat([](const EpochRecord& r) { return r.validation.f1; });
    j["val_loss"] = stat([](const EpochRecord& r) { return r.validation.loss; });
    j["train_loss"] = stat([](const EpochRecord& r) { return r.train_loss; });
    const auto& lastv = records.back().validation;
    j["final"] = {{"tp", lastv.tp}, {"fp", lastv.fp}, {"fn", lastv.fn}, {"tn", lastv.tn},
                  {"accuracy", lastv.accuracy}, {"precision", lastv.precision}, {"recall", lastv.recall},
                  {"f1", lastv.f1}};
    return j.dump(2) + "\n";
}

} // namespace seqnet
