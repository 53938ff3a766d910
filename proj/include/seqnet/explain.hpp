#pragma once

#include "seqnet/model.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace seqnet {

struct Heatmap {
    std::vector<double> values;  // one per feature position, >= 0
    std::string layer;
    std::string digest;
    std::size_t input_length = 0;     // model input positions
    std::size_t original_length = 0;  // bytes of the explained file (0 if unknown)
    bool degenerate = false;          // all-zero map, left unnormalized

    /// input_length / feature length.
    double offset_scale() const;
    // First byte of the file region feature position p covers, through the
    // linear resampling; falls back to input positions if original_length is 0.
    std::size_t file_offset(std::size_t position) const;
    std::size_t argmax() const;
};

struct NormalizedSnippet {
    std::vector<double> values;
    bool degenerate = false;
};

/// values / max(values). All-zero input comes back unchanged and flagged. Throws on negative or non-finite values.
NormalizedSnippet normalize_snippet(std::span<const double> values);

/// Divides in place; sets `degenerate` when the map is all zero.
void normalize(Heatmap& heatmap);

// ReLU(sum_k mean_f(g[k, f]) * a[k, f]) for one sample's [channels, length]
// activations a and score gradients g.
std::vector<double> cam_combine(std::span<const double> a, std::span<const double> g, std::size_t channels,
                                std::size_t length);

struct GradCamOptions {
    int target_class = 1;          // pre-softmax logit explained
    std::string layer = "res5";    // one of SeqNetModel::layer_tags()
    double score_scale = 1.0;      // multiplies the explained score (linearity checks)
};

// Grad-CAM of every sample in x ([batch, 1, input_length]): channel weights are
// the position-mean of d score / d A_k, the map is ReLU(sum_k w_k A_k). The
// score of sample i is its own logit, so samples do not interact in eval mode.
// Maps are returned unnormalized. Throws Error on an unknown layer tag.
std::vector<Heatmap> grad_cam(SeqNetModel& model, const Tensor& x, const GradCamOptions& options = {});
Heatmap grad_cam(SeqNetModel& model, std::span<const double> input, const GradCamOptions& options = {});

/// One normalized heatmap per layer tag, stem first, from a single backward pass.
std::vector<Heatmap> layer_sweep(SeqNetModel& model, std::span<const double> input, int target_class = 1);

/// Elementwise mean, then normalized. Throws on an empty list or mismatched layers/lengths.
Heatmap average_heatmap(const std::vector<Heatmap>& heatmaps);

/// `position,file_offset,value`.
std::string heatmap_csv(const Heatmap& heatmap);

// Binary 8-bit PGM, one row per heatmap, value round(255 v). Rows shorter than
// the widest are stretched by nearest position so layers of different depth
// line up.
void write_pgm(const std::filesystem::path& path, const std::vector<Heatmap>& rows);

} // namespace seqnet
