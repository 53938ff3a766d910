#include "seqnet/adversarial.hpp"

#include "seqnet/errors.hpp"
#include "seqnet/ops.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace seqnet {

void PoisonConfig::validate() const {
    if (poison_length_bytes < 1) throw SpecError("poison length must be at least 1 byte");
    if (!(step > 0.0)) throw SpecError("poison step must be positive");
    if (!(clamp_min < clamp_max)) throw SpecError("poison clamp range is empty");
    if (stall_limit < 1) throw SpecError("stall limit must be at least 1");
}

int sign(double x) {
    if (x > 0.0) return 1;
    if (x < 0.0) return -1;
    return 0;
}

std::vector<double> poison_step(std::span<const double> poison, std::span<const double> grad,
                                const PoisonConfig& config) {
    if (poison.size() != grad.size()) {
        throw ShapeError("poison_step: poison has " + std::to_string(poison.size()) + " values but the gradient has " +
                         std::to_string(grad.size()));
    }
    std::vector<double> out(poison.size());
    for (std::size_t i = 0; i < poison.size(); ++i) {
        out[i] = std::clamp(poison[i] - config.step * sign(grad[i]), config.clamp_min, config.clamp_max);
    }
    return out;
}

namespace {

std::vector<double> normalized_with_poison(std::span<const std::uint8_t> original, std::span<const double> poison) {
    std::vector<double> v = normalize_bytes(original);
    v.insert(v.end(), poison.begin(), poison.end());
    return v;
}

double probability_of(SeqNetModel& model, std::vector<double> input) {
    NoGradGuard guard;
    const std::size_t M = input.size();
    return model.forward(Tensor::from({1, 1, M}, std::move(input))).data()[1];
}

} // namespace

PoisonGradient poison_gradient(SeqNetModel& model, std::span<const std::uint8_t> original,
                               std::span<const double> poison) {
    if (original.empty()) throw Error("poison_gradient: empty binary");
    const std::size_t M = model.spec().input_length;
    const std::vector<double> full = normalized_with_poison(original, poison);
    Tensor x = Tensor::from({1, 1, M}, resample_linear(full, M), true);

    FrozenParameters frozen(model);
    const Tensor prob = ops::select_column(nn::softmax2(model.logits(x)), 1);
    PoisonGradient out;
    out.prob = prob.data()[0];
    ops::sum(prob).backward();
    out.input_grad.assign(x.grad().begin(), x.grad().end());
    const std::vector<double> g_full = resample_adjoint(out.input_grad, full.size(), M);
    out.poison_grad.assign(g_full.begin() + static_cast<std::ptrdiff_t>(original.size()), g_full.end());
    return out;
}

double malicious_probability(SeqNetModel& model, std::span<const std::uint8_t> bytes) {
    return probability_of(model, preprocess_bytes(bytes, model.spec().input_length).values);
}

bool AttackTrace::evaded_within(std::size_t budget) const {
    for (std::size_t t = 1; t < y.size() && t <= budget; ++t) {
        if (classify(y[t]) == Label::benign) return true;
    }
    return false;
}

AttackTrace attack(SeqNetModel& model, const RawSample& sample, const PoisonConfig& config) {
    config.validate();
    if (model.mode() != nn::Mode::eval) throw Error("attack: model must be in eval mode");
    if (sample.label != Label::malicious) throw AttackError("nothing to evade: sample is not labelled malicious");
    const std::size_t M = model.spec().input_length;

    AttackTrace trace;
    trace.digest = sample.digest;
    const double clean = malicious_probability(model, sample.bytes);
    trace.y.push_back(clean);
    trace.y_continuous.push_back(clean);
    if (classify(clean) != Label::malicious) {
        throw AttackError("nothing to evade: sample is already classified benign (p=" + text::fmt(clean) + ")");
    }

    // Poison starts as 0x00 bytes, i.e. normalized -1.
    std::vector<double> poison(config.poison_length_bytes, std::clamp(-1.0, config.clamp_min, config.clamp_max));
    std::vector<std::uint8_t> bytes(config.poison_length_bytes);
    std::transform(poison.begin(), poison.end(), bytes.begin(), quantize_byte);

    std::size_t zero_streak = 0;
    for (std::size_t t = 0; t < config.iterations; ++t) {
        // Gradient at the quantized poison: that is the byte string that would
        // actually be shipped.
        const PoisonGradient g = poison_gradient(model, sample.bytes, normalize_bytes(bytes));
        if (t > 0) {
            trace.y.push_back(g.prob);
            if (classify(g.prob) == Label::benign) break;
        }
        const bool all_zero = std::all_of(g.poison_grad.begin(), g.poison_grad.end(), [](double v) { return v == 0.0; });
        zero_streak = all_zero ? zero_streak + 1 : 0;
        if (zero_streak >= config.stall_limit) {
            trace.stalled = true;
            break;
        }
        poison = poison_step(poison, g.poison_grad, config);
        std::transform(poison.begin(), poison.end(), bytes.begin(), quantize_byte);
        trace.iterations_run = t + 1;
        trace.y_continuous.push_back(probability_of(model, resample_linear(normalized_with_poison(sample.bytes, poison), M)));
        if (t + 1 == config.iterations) {
            std::vector<std::uint8_t> full(sample.bytes);
            full.insert(full.end(), bytes.begin(), bytes.end());
            trace.y.push_back(malicious_probability(model, full));
        }
    }
    // A stall leaves the trace short; the last recorded state is final.
    trace.y.resize(std::min(trace.y.size(), trace.iterations_run + 1));
    trace.y_continuous.resize(trace.y.size());
    trace.poison = bytes;
    trace.evaded = classify(trace.y.back()) == Label::benign;
    return trace;
}

CampaignResult attack_campaign(SeqNetModel& model, const DatasetManifest& manifest, const PoisonConfig& config,
                               std::vector<std::size_t> budgets, const LogFn& log) {
    config.validate();
    if (manifest.entries.empty()) throw Error("attack campaign: empty manifest");
    if (budgets.empty()) budgets.push_back(config.iterations);
    std::sort(budgets.begin(), budgets.end());
    budgets.erase(std::unique(budgets.begin(), budgets.end()), budgets.end());
    PoisonConfig run = config;
    run.iterations = std::max<std::size_t>(1, budgets.back());

    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        if (manifest.entries[i].label == Label::malicious) order.push_back(i);
    }
    if (order.empty()) throw Error("attack campaign: manifest lists no malicious samples");
    std::mt19937_64 rng(config.seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    CampaignResult result;
    result.budgets = budgets;
    for (std::size_t idx : order) {
        if (result.total >= config.samples_to_attack) break;
        const auto& e = manifest.entries[idx];
        RawSample sample;
        try {
            sample = RawSample::read_file(e.path, e.label);
        } catch (const IoError& err) {
            if (log) log(std::string("warning: skipping ") + err.what());
            continue;
        }
        try {
            result.traces.push_back(attack(model, sample, run));
        } catch (const AttackError&) {
            ++result.not_detected;
            continue;
        }
        ++result.total;
        const auto& tr = result.traces.back();
        if (log) {
            log("attack " + e.path.filename().string() + " y0=" + text::fmt(tr.y.front()) +
                " yT=" + text::fmt(tr.y.back()) + " iterations=" + std::to_string(tr.iterations_run) +
                (tr.evaded ? " evaded" : "") + (tr.stalled ? " stalled" : ""));
        }
    }
    for (std::size_t b : budgets) {
        std::size_t n = 0;
        for (const auto& tr : result.traces) n += tr.evaded_within(b);
        result.evaded.push_back(n);
    }
    return result;
}

std::string CampaignResult::to_csv() const {
    std::ostringstream out;
    out << "iterations,evaded_count,total\n";
    for (std::size_t i = 0; i < budgets.size(); ++i) out << budgets[i] << ',' << evaded[i] << ',' << total << '\n';
    return out.str();
}

std::string trace_csv(const AttackTrace& trace) {
    std::ostringstream out;
    out << "t,y\n";
    for (std::size_t t = 0; t < trace.y.size(); ++t) out << t << ',' << text::fmt(trace.y[t]) << '\n';
    return out.str();
}

} // namespace seqnet
