#include "seqnet/explain.hpp"

#include "seqnet/errors.hpp"
#include "seqnet/ops.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace seqnet {

double Heatmap::offset_scale() const {
    if (values.empty()) throw Error("heatmap is empty");
    return static_cast<double>(input_length) / static_cast<double>(values.size());
}

std::size_t Heatmap::file_offset(std::size_t position) const {
    const double input_pos = static_cast<double>(position) * offset_scale();
    if (original_length == 0 || input_length <= 1) return static_cast<std::size_t>(input_pos);
    const double scaled = input_pos * static_cast<double>(original_length - 1) / static_cast<double>(input_length - 1);
    return std::min(original_length - 1, static_cast<std::size_t>(scaled));
}

std::size_t Heatmap::argmax() const {
    if (values.empty()) throw Error("heatmap is empty");
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

NormalizedSnippet normalize_snippet(std::span<const double> values) {
    NormalizedSnippet out;
    double peak = 0.0;
    for (double v : values) {
        if (!std::isfinite(v) || v < 0.0) throw Error("normalize_snippet: values must be finite and >= 0");
        peak = std::max(peak, v);
    }
    out.values.assign(values.begin(), values.end());
    if (peak == 0.0) {
        out.degenerate = true;
        return out;
    }
    for (double& v : out.values) v /= peak;
    return out;
}

void normalize(Heatmap& heatmap) {
    auto n = normalize_snippet(heatmap.values);
    heatmap.values = std::move(n.values);
    heatmap.degenerate = n.degenerate;
}

std::vector<double> cam_combine(std::span<const double> a, std::span<const double> g, std::size_t channels,
                                std::size_t length) {
    if (a.size() != channels * length || g.size() != a.size()) throw ShapeError("cam_combine: size mismatch");
    if (length == 0) throw ShapeError("cam_combine: empty feature map");
    std::vector<double> m(length, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
        const double* ga = g.data() + c * length;
        const double* aa = a.data() + c * length;
        double alpha = 0.0;
        for (std::size_t f = 0; f < length; ++f) alpha += ga[f];
        alpha /= static_cast<double>(length);
        if (alpha == 0.0) continue;
        for (std::size_t f = 0; f < length; ++f) m[f] += alpha * aa[f];
    }
    for (double& v : m) v = std::max(v, 0.0);
    return m;
}

namespace {

std::vector<std::vector<double>> cam_maps(const Tensor& tap) {
    const std::size_t B = tap.dim(0), C = tap.dim(1), F = tap.dim(2);
    std::vector<double> zeros;
    std::span<const double> g;
    if (tap.has_grad()) {
        g = tap.grad();
    } else {
        // The score does not depend on this tap at all.
        zeros.assign(tap.numel(), 0.0);
        g = zeros;
    }
    std::vector<std::vector<double>> maps;
    for (std::size_t b = 0; b < B; ++b) {
        maps.push_back(cam_combine(tap.data().subspan(b * C * F, C * F), g.subspan(b * C * F, C * F), C, F));
    }
    return maps;
}

Activations backprop_score(SeqNetModel& model, const Tensor& x, int target_class, double score_scale) {
    if (target_class != 0 && target_class != 1) throw Error("grad_cam: target class must be 0 or 1");
    if (x.rank() != 3 || x.dim(1) != 1) throw ShapeError("grad_cam: expected input [batch, 1, length]");
    const nn::Mode saved = model.mode();
    model.set_mode(nn::Mode::eval);
    FrozenParameters frozen(model);
    // The input needs a gradient slot so the graph is recorded at all.
    Tensor input = x.detach().clone();
    input.set_requires_grad(true);
    Activations taps;
    Tensor logits;
    try {
        logits = model.logits(input, &taps);
    } catch (...) {
        model.set_mode(saved);
        throw;
    }
    model.set_mode(saved);
    for (auto& [tag, t] : taps) t.retain_grad();
    const Tensor score = ops::scale(ops::sum(ops::select_column(logits, static_cast<std::size_t>(target_class))),
                                    score_scale);
    score.backward();
    return taps;
}

const Tensor& find_tap(const Activations& taps, const std::string& layer, const SeqNetModel& model) {
    for (const auto& [tag, t] : taps) {
        if (tag == layer) return t;
    }
    std::string known;
    for (const auto& tag : model.layer_tags()) known += (known.empty() ? "" : ", ") + tag;
    throw Error("unknown layer '" + layer + "' (known: " + known + ")");
}

Heatmap make_heatmap(std::vector<double> values, const std::string& layer, std::size_t input_length) {
    Heatmap h;
    h.values = std::move(values);
    h.layer = layer;
    h.input_length = input_length;
    return h;
}

} // namespace

std::vector<Heatmap> grad_cam(SeqNetModel& model, const Tensor& x, const GradCamOptions& options) {
    {
        // Fail on a bad tag before paying for a forward pass.
        const auto tags = model.layer_tags();
        if (std::find(tags.begin(), tags.end(), options.layer) == tags.end()) {
            find_tap({}, options.layer, model);
        }
    }
    const Activations taps = backprop_score(model, x, options.target_class, options.score_scale);
    auto maps = cam_maps(find_tap(taps, options.layer, model));
    std::vector<Heatmap> out;
    for (auto& m : maps) out.push_back(make_heatmap(std::move(m), options.layer, x.dim(2)));
    return out;
}

Heatmap grad_cam(SeqNetModel& model, std::span<const double> input, const GradCamOptions& options) {
    const Tensor x = Tensor::from({1, 1, input.size()}, std::vector<double>(input.begin(), input.end()));
    return std::move(grad_cam(model, x, options).front());
}

std::vector<Heatmap> layer_sweep(SeqNetModel& model, std::span<const double> input, int target_class) {
    const Tensor x = Tensor::from({1, 1, input.size()}, std::vector<double>(input.begin(), input.end()));
    const Activations taps = backprop_score(model, x, target_class, 1.0);
    std::vector<Heatmap> out;
    for (const auto& tag : model.layer_tags()) {
        Heatmap h = make_heatmap(std::move(cam_maps(find_tap(taps, tag, model)).front()), tag, input.size());
        normalize(h);
        out.push_back(std::move(h));
    }
    return out;
}

Heatmap average_heatmap(const std::vector<Heatmap>& heatmaps) {
    if (heatmaps.empty()) throw Error("average_heatmap: no heatmaps");
    const Heatmap& first = heatmaps.front();
    Heatmap avg = make_heatmap(std::vector<double>(first.values.size(), 0.0), first.layer, first.input_length);
    for (const auto& h : heatmaps) {
        if (h.values.size() != first.values.size() || h.layer != first.layer) {
            throw Error("average_heatmap: heatmaps differ in layer or length (" + h.layer + "/" +
                        std::to_string(h.values.size()) + " vs " + first.layer + "/" +
                        std::to_string(first.values.size()) + ")");
        }
        for (std::size_t i = 0; i < h.values.size(); ++i) avg.values[i] += h.values[i];
    }
    for (double& v : avg.values) v /= static_cast<double>(heatmaps.size());
    normalize(avg);
    return avg;
}

std::string heatmap_csv(const Heatmap& heatmap) {
    std::ostringstream out;
    out << "position,file_offset,value\n";
    for (std::size_t p = 0; p < heatmap.values.size(); ++p) {
        out << p << ',' << heatmap.file_offset(p) << ',' << text::fmt(heatmap.values[p]) << '\n';
    }
    return out.str();
}

void write_pgm(const std::filesystem::path& path, const std::vector<Heatmap>& rows) {
    if (rows.empty()) throw Error("write_pgm: no heatmaps");
    std::size_t width = 0;
    for (const auto& r : rows) width = std::max(width, r.values.size());
    if (width == 0) throw Error("write_pgm: empty heatmap");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << "P5\n" << width << ' ' << rows.size() << "\n255\n";
    for (const auto& r : rows) {
        if (r.values.empty()) throw Error("write_pgm: empty heatmap");
        for (std::size_t i = 0; i < width; ++i) {
            const double v = r.values[i * r.values.size() / width];
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)))));
        }
    }
    if (!out) throw IoError("error writing '" + path.string() + "'");
}

} // namespace seqnet
