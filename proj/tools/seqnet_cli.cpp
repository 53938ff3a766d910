#include "seqnet/adversarial.hpp"
#include "seqnet/errors.hpp"
#include "seqnet/explain.hpp"
#include "seqnet/model.hpp"
#include "seqnet/parallel.hpp"
#include "seqnet/synthetic.hpp"
#include "seqnet/train.hpp"
#include "text_util.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace seqnet;

namespace {

enum Exit : int {
    kOk = 0,
    kRuntime = 1,
    kUsage = 2,
    kMissingFile = 3,
    kManifest = 4,
    kModelFormat = 5,
    kConfig = 6,
    kAttack = 7,
};

// Usage problems found after CLI11 has parsed the flags.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string quoted(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"' || ch == '\\') out += '\\';
        out += ch == '\n' ? ' ' : ch;
    }
    return out + '"';
}

int fail(int code, std::string_view name, const std::string& message) {
    std::cerr << "error code=" << name << " message=" << quoted(message) << "\n";
    return code;
}

// Timestamps only ever go to <out>/seqnet.log so the other artifacts stay
// byte-identical between runs.
class RunLog {
public:
    void open(const fs::path& dir) {
        fs::create_directories(dir);
        file_.open(dir / "seqnet.log", std::ios::app);
        if (!file_) throw IoError("cannot open " + (dir / "seqnet.log").string());
    }

    void operator()(const std::string& line) {
        std::cerr << line << "\n";
        if (!file_) return;
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&now, &tm);
        file_ << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << " " << line << "\n";
        file_.flush();
    }

    LogFn fn() {
        return [this](const std::string& s) { (*this)(s); };
    }

private:
    std::ofstream file_;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

void require_file(const fs::path& path, const char* what) {
    if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " not found: " + path.string());
}

SeqNetModel open_model(const fs::path& path) {
    require_file(path, "model file");
    return load_model(path);
}

DatasetManifest open_manifest(const fs::path& path, Split split = Split::train) {
    require_file(path, "manifest");
    return DatasetManifest::read(path, split);
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + '"';
}

using text::fmt;

// ---------------------------------------------------------------------------

struct GenOptions {
    fs::path out;
    std::size_t count = 1000;
    std::size_t min_length = 4096;
    std::size_t max_length = std::size_t{1} << 20;
    std::uint64_t seed = 0;
};

int gen_synthetic(const GenOptions& o) {
    SyntheticCorpusConfig cfg;
    cfg.per_class = o.count;
    cfg.min_length = o.min_length;
    cfg.max_length = o.max_length;
    cfg.seed = o.seed;
    cfg.validate();
    RunLog log;
    log.open(o.out);
    log("generating " + std::to_string(2 * o.count) + " files into " + o.out.string());
    const auto corpus = generate_corpus(o.out, cfg);
    log("train " + std::to_string(corpus.train.entries.size()) + " validation " +
        std::to_string(corpus.validation.entries.size()));
    std::cout << "train_manifest=" << (o.out / "train.tsv").string() << "\n"
              << "validation_manifest=" << (o.out / "validation.tsv").string() << "\n";
    return kOk;
}

struct PreprocessOptions {
    fs::path manifest;
    fs::path out;
    std::size_t target_length = kDefaultTargetLength;
};

int preprocess_cmd(const PreprocessOptions& o) {
    const auto manifest = open_manifest(o.manifest);
    if (o.target_length == 0) throw SpecError("--target-length must be positive");
    RunLog log;
    log.open(o.out);
    std::ostringstream index;
    index << "digest,label,original_length,target_length,cache\n";
    std::size_t written = 0;
    for (const auto& e : manifest.entries) {
        RawSample s;
        try {
            s = RawSample::read_file(e.path, e.label);
        } catch (const IoError& err) {
            log(std::string("warning: skipped ") + e.path.string() + ": " + err.what());
            continue;
        }
        if (s.digest != e.digest) {
            log("warning: skipped " + e.path.string() + ": digest mismatch");
            continue;
        }
        const auto seq = preprocess(s, o.target_length);
        const std::string name = s.digest + ".seqc";
        write_cache(o.out / name, seq);
        index << s.digest << "," << label_name(e.label) << "," << seq.original_length << "," << seq.target_length
              << "," << name << "\n";
        ++written;
    }
    write_text(o.out / "index.csv", index.str());
    log("cached " + std::to_string(written) + " of " + std::to_string(manifest.entries.size()) + " samples");
    return kOk;
}

struct TrainOptions {
    fs::path manifest;
    fs::path validation;
    fs::path out;
    std::size_t epochs = 70;
    std::size_t batch = 32;
    std::size_t target_length = kDefaultTargetLength;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    std::size_t channel_divisor = 1;
};

int train_cmd(const TrainOptions& o) {
    const auto train_manifest = open_manifest(o.manifest, Split::train);
    const auto val_manifest = open_manifest(o.validation, Split::validation);
    check_disjoint(train_manifest, val_manifest);

    TrainConfig cfg;
    cfg.epochs = o.epochs;
    cfg.batch_size = o.batch;
    cfg.adam.alpha = o.lr;
    cfg.seed = o.seed;
    cfg.validate();
    auto spec = ModelSpec::for_input_length(o.target_length);
    if (o.channel_divisor != 1) spec = spec.with_channels_divided(o.channel_divisor);
    spec.validate();

    RunLog log;
    log.open(o.out);
    const auto train_set = load_dataset(train_manifest, o.target_length, log.fn());
    const auto val_set = load_dataset(val_manifest, o.target_length, log.fn());
    auto model = SeqNetModel::build(spec, o.seed);
    log("model parameters " + std::to_string(model.parameter_count()) + ", training " +
        std::to_string(train_set.size()) + " / validating " + std::to_string(val_set.size()));

    TrainCallbacks cb;
    cb.log = log.fn();
    cb.on_epoch = [&](const EpochRecord& r) {
        std::ostringstream s;
        s << "epoch " << r.epoch + 1 << "/" << o.epochs << " train_loss " << fmt(r.train_loss) << " val_loss "
          << fmt(r.validation.loss) << " accuracy " << fmt(r.validation.accuracy);
        log(s.str());
    };
    const auto records = train(model, train_set, val_set, cfg, cb);
    save_model(model, o.out / "model.bin");
    write_text(o.out / "epochs.csv", epochs_csv(records));
    write_text(o.out / "summary.json", summary_json(records));
    const auto& last = records.back().validation;
    std::cout << "accuracy=" << fmt(last.accuracy) << " precision=" << fmt(last.precision)
              << " recall=" << fmt(last.recall) << " f1=" << fmt(last.f1) << "\n";
    return kOk;
}

struct EvalOptions {
    fs::path model;
    fs::path manifest;
    fs::path out;
    std::size_t batch = 32;
};

int eval_cmd(const EvalOptions& o) {
    auto model = open_model(o.model);
    const auto manifest = open_manifest(o.manifest, Split::validation);
    RunLog log;
    if (!o.out.empty()) log.open(o.out);
    const auto data = load_dataset(manifest, model.spec().input_length, log.fn());
    model.set_mode(nn::Mode::eval);
    const auto m = evaluate(model, data, o.batch);
    const auto probs = predict(model, data, o.batch);

    std::ostringstream metrics;
    metrics << "tp,fp,fn,tn,accuracy,precision,recall,f1,loss\n"
            << m.tp << "," << m.fp << "," << m.fn << "," << m.tn << "," << fmt(m.accuracy) << ","
            << fmt(m.precision) << "," << fmt(m.recall) << "," << fmt(m.f1) << "," << fmt(m.loss) << "\n";
    if (!o.out.empty()) {
        std::ostringstream preds;
        preds << "path,label,p_malicious,verdict\n";
        for (std::size_t i = 0; i < data.size(); ++i) {
            preds << csv_field(data.paths[i].string()) << "," << label_name(static_cast<Label>(data.labels[i])) << ","
                  << fmt(probs[i]) << "," << label_name(classify(probs[i])) << "\n";
        }
        write_text(o.out / "metrics.csv", metrics.str());
        write_text(o.out / "predictions.csv", preds.str());
    }
    std::cout << metrics.str();
    return kOk;
}

struct PredictOptions {
    fs::path model;
    std::vector<fs::path> inputs;
    fs::path out;
};

int predict_cmd(const PredictOptions& o) {
    auto model = open_model(o.model);
    model.set_mode(nn::Mode::eval);
    std::ostringstream csv;
    csv << "path,p_malicious,verdict\n";
    for (const auto& path : o.inputs) {
        require_file(path, "input");
        const auto sample = RawSample::read_file(path);
        const double p = malicious_probability(model, sample.bytes);
        if (o.inputs.size() > 1) std::cout << "file=" << path.string() << "\n";
        std::cout << "p_malicious=" << fmt(p) << "\nverdict=" << label_name(classify(p)) << "\n";
        csv << csv_field(path.string()) << "," << fmt(p) << "," << label_name(classify(p)) << "\n";
    }
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        write_text(o.out / "predictions.csv", csv.str());
    }
    return kOk;
}

struct AttackOptions {
    fs::path model;
    fs::path manifest;
    fs::path out;
    PoisonConfig poison;
};

int attack_cmd(const AttackOptions& o) {
    o.poison.validate();
    auto model = open_model(o.model);
    const auto manifest = open_manifest(o.manifest, Split::validation);
    RunLog log;
    log.open(o.out);
    model.set_mode(nn::Mode::eval);
    std::vector<std::size_t> budgets;
    for (std::size_t t = 0; t <= o.poison.iterations; ++t) budgets.push_back(t);
    const auto res = attack_campaign(model, manifest, o.poison, budgets, log.fn());
    if (res.total == 0) throw AttackError("no malicious sample in the manifest is detected by the model");

    write_text(o.out / "campaign.csv", res.to_csv());
    std::ostringstream traj;
    traj << "digest,t,y,y_continuous\n";
    for (const auto& tr : res.traces) {
        for (std::size_t t = 0; t < tr.y.size(); ++t) {
            traj << tr.digest << "," << t << "," << fmt(tr.y[t]) << "," << fmt(tr.y_continuous[t]) << "\n";
        }
    }
    write_text(o.out / "trajectories.csv", traj.str());
    const std::size_t final_evaded = res.evaded.back();
    log("attacked " + std::to_string(res.total) + ", evaded " + std::to_string(final_evaded) + ", not detected " +
        std::to_string(res.not_detected));
    std::cout << "attacked=" << res.total << " evaded=" << final_evaded << " not_detected=" << res.not_detected
              << "\n";
    return kOk;
}

struct ExplainOptions {
    fs::path model;
    fs::path input;
    fs::path manifest;
    fs::path out;
    std::string layer = "res5";
    int target_class = 1;
    bool all_layers = false;
};

int explain_cmd(const ExplainOptions& o) {
    if (o.input.empty() == o.manifest.empty()) throw UsageError("give exactly one of --input or --manifest");
    if (o.target_class != 0 && o.target_class != 1) throw UsageError("--class must be 0 or 1");
    auto model = open_model(o.model);
    model.set_mode(nn::Mode::eval);
    const auto tags = model.layer_tags();
    if (std::find(tags.begin(), tags.end(), o.layer) == tags.end()) {
        std::string known;
        for (const auto& t : tags) known += (known.empty() ? "" : " ") + t;
        throw UsageError("unknown --layer " + o.layer + " (known: " + known + ")");
    }
    RunLog log;
    log.open(o.out);
    const std::size_t L = model.spec().input_length;

    auto explain_one = [&](const RawSample& s) {
        const auto seq = preprocess(s, L);
        GradCamOptions opts;
        opts.layer = o.layer;
        opts.target_class = o.target_class;
        auto h = grad_cam(model, seq.values, opts);
        h.digest = s.digest;
        h.original_length = s.bytes.size();
        normalize(h);
        return h;
    };

    if (!o.input.empty()) {
        require_file(o.input, "input");
        const auto sample = RawSample::read_file(o.input);
        if (o.all_layers) {
            const auto seq = preprocess(sample, L);
            auto sweep = layer_sweep(model, seq.values, o.target_class);
            for (auto& h : sweep) {
                h.digest = sample.digest;
                h.original_length = sample.bytes.size();
                write_text(o.out / ("heatmap_" + h.layer + ".csv"), heatmap_csv(h));
            }
            write_pgm(o.out / "layers.pgm", sweep);
        }
        const auto h = explain_one(sample);
        write_text(o.out / "heatmap.csv", heatmap_csv(h));
        write_pgm(o.out / "heatmap.pgm", {h});
        const std::size_t p = h.argmax();
        std::cout << "layer=" << h.layer << " peak_position=" << p << " peak_offset=" << h.file_offset(p)
                  << (h.degenerate ? " degenerate=1" : "") << "\n";
        return kOk;
    }

    // Average over the manifest's entries of the explained class.
    const auto manifest = open_manifest(o.manifest, Split::validation);
    std::vector<Heatmap> maps;
    std::ostringstream peaks;
    peaks << "path,digest,peak_position,peak_offset\n";
    for (const auto& e : manifest.entries) {
        if (static_cast<int>(e.label) != o.target_class) continue;
        RawSample s;
        try {
            s = RawSample::read_file(e.path, e.label);
        } catch (const IoError& err) {
            log(std::string("warning: skipped ") + e.path.string() + ": " + err.what());
            continue;
        }
        auto h = explain_one(s);
        peaks << csv_field(e.path.string()) << "," << s.digest << "," << h.argmax() << "," << h.file_offset(h.argmax())
              << "\n";
        maps.push_back(std::move(h));
    }
    if (maps.empty()) throw ManifestError("manifest has no readable sample of class " + std::to_string(o.target_class));
    auto avg = average_heatmap(maps);
    avg.original_length = 0;
    write_text(o.out / "average.csv", heatmap_csv(avg));
    write_text(o.out / "peaks.csv", peaks.str());
    write_pgm(o.out / "average.pgm", {avg});
    log("averaged " + std::to_string(maps.size()) + " heatmaps");
    std::cout << "samples=" << maps.size() << " layer=" << avg.layer << "\n";
    return kOk;
}

struct FlopsOptions {
    std::size_t target_length = kDefaultTargetLength;
    fs::path model;
    fs::path out;
};

int flops_cmd(const FlopsOptions& o) {
    ModelSpec spec = o.model.empty() ? (o.target_length == kDefaultTargetLength ? ModelSpec::default_spec()
                                                                                 : ModelSpec::for_input_length(o.target_length))
                                     : open_model(o.model).spec();
    spec.validate();
    const auto report = count_params(spec);
    const std::string csv = report.to_csv();
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        write_text(o.out / "cost.csv", csv);
    }
    std::cout << csv;
    std::cerr << "params=" << report.total_params << " mflops=" << fmt(report.mflops()) << "\n";
    return kOk;
}

int run(int argc, char** argv) {
    CLI::App app{"SeqNet: malware detection on raw binaries with a lightweight 1D CNN"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    GenOptions gen;
    auto* g = app.add_subcommand("gen-synthetic", "Write a seeded planted-motif corpus and its manifests");
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--count", gen.count, "Samples per class")->capture_default_str()->check(CLI::PositiveNumber);
    g->add_option("--min-length", gen.min_length, "Smallest file size in bytes")->capture_default_str();
    g->add_option("--max-length", gen.max_length, "Largest file size in bytes")->capture_default_str();
    g->add_option("--seed", gen.seed, "Random seed")->capture_default_str();

    PreprocessOptions pre;
    auto* p = app.add_subcommand("preprocess", "Normalize and resample every manifest entry into cache files");
    p->add_option("--manifest", pre.manifest, "Manifest (path, label, sha256 per line)")->required();
    p->add_option("--out", pre.out, "Output directory")->required();
    p->add_option("--target-length", pre.target_length, "Model input length")->capture_default_str();

    TrainOptions tr;
    auto* t = app.add_subcommand("train", "Train a model with Adam on a train/validation manifest pair");
    t->add_option("--manifest", tr.manifest, "Training manifest")->required();
    t->add_option("--validation", tr.validation, "Validation manifest")->required();
    t->add_option("--out", tr.out, "Output directory (model.bin, epochs.csv, summary.json)")->required();
    t->add_option("--epochs", tr.epochs, "Epochs")->capture_default_str();
    t->add_option("--batch", tr.batch, "Mini-batch size")->capture_default_str();
    t->add_option("--target-length", tr.target_length, "Model input length")->capture_default_str();
    t->add_option("--lr", tr.lr, "Adam step size")->capture_default_str();
    t->add_option("--channel-divisor", tr.channel_divisor, "Divide every channel count (smaller models)")
        ->capture_default_str();
    t->add_option("--seed", tr.seed, "Seed for initialization and shuffling")->capture_default_str();

    EvalOptions ev;
    auto* e = app.add_subcommand("eval", "Confusion counts and metrics on a manifest");
    e->add_option("--model", ev.model, "Model file")->required();
    e->add_option("--manifest", ev.manifest, "Manifest to evaluate")->required();
    e->add_option("--out", ev.out, "Output directory (metrics.csv, predictions.csv)");
    e->add_option("--batch", ev.batch, "Inference batch size")->capture_default_str();

    PredictOptions pr;
    auto* d = app.add_subcommand("predict", "Print P(malicious) and the verdict for files");
    d->add_option("--model", pr.model, "Model file")->required();
    d->add_option("inputs", pr.inputs, "Files to classify")->required();
    d->add_option("--out", pr.out, "Output directory (predictions.csv)");

    AttackOptions at;
    at.poison.samples_to_attack = 500;
    auto* a = app.add_subcommand("attack", "Append gradient-crafted poison bytes to detected malicious samples");
    a->add_option("--model", at.model, "Model file")->required();
    a->add_option("--manifest", at.manifest, "Manifest to draw malicious samples from")->required();
    a->add_option("--out", at.out, "Output directory (campaign.csv, trajectories.csv)")->required();
    a->add_option("--poison-bytes", at.poison.poison_length_bytes, "Appended bytes")->capture_default_str();
    a->add_option("--iterations", at.poison.iterations, "Signed-gradient updates per sample")->capture_default_str();
    a->add_option("--step", at.poison.step, "Step on the normalized scale")->capture_default_str();
    a->add_option("--samples", at.poison.samples_to_attack, "Detected samples to attack")->capture_default_str();
    a->add_option("--seed", at.poison.seed, "Seed for sample selection")->capture_default_str();

    ExplainOptions ex;
    auto* x = app.add_subcommand("explain", "Grad-CAM heatmaps for one file or averaged over a manifest");
    x->add_option("--model", ex.model, "Model file")->required();
    x->add_option("--input", ex.input, "File to explain");
    x->add_option("--manifest", ex.manifest, "Average over this manifest's entries of --class");
    x->add_option("--out", ex.out, "Output directory")->required();
    x->add_option("--layer", ex.layer, "Feature map (stem, stage1.., res1..)")->capture_default_str();
    x->add_option("--class", ex.target_class, "Logit explained: 0 benign, 1 malicious")->capture_default_str();
    x->add_flag("--all-layers", ex.all_layers, "Also write one heatmap per layer (single file only)");

    FlopsOptions fl;
    auto* f = app.add_subcommand("flops", "Per-layer parameter and multiply-add report as CSV");
    f->add_option("--target-length", fl.target_length, "Model input length")->capture_default_str();
    f->add_option("--model", fl.model, "Report the spec stored in this model file instead");
    f->add_option("--out", fl.out, "Output directory (cost.csv)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& h) {
        return app.exit(h);
    } catch (const CLI::CallForAllHelp& h) {
        return app.exit(h);
    } catch (const CLI::ParseError& err) {
        return fail(kUsage, "usage", err.what());
    }

    if (*g) return gen_synthetic(gen);
    if (*p) return preprocess_cmd(pre);
    if (*t) return train_cmd(tr);
    if (*e) return eval_cmd(ev);
    if (*d) return predict_cmd(pr);
    if (*a) return attack_cmd(at);
    if (*x) return explain_cmd(ex);
    if (*f) return flops_cmd(fl);
    return kUsage;
}

} // namespace

int main(int argc, char** argv) {
    retain_heap_memory();
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        return fail(kUsage, "usage", e.what());
    } catch (const IoError& e) {
        return fail(kMissingFile, "io", e.what());
    } catch (const ManifestError& e) {
        return fail(kManifest, "manifest", e.what());
    } catch (const FormatError& e) {
        return fail(kModelFormat, "model_format", e.what());
    } catch (const SpecError& e) {
        return fail(kConfig, "config", e.what());
    } catch (const AttackError& e) {
        return fail(kAttack, "attack", e.what());
    } catch (const std::exception& e) {
        return fail(kRuntime, "runtime", e.what());
    }
}
