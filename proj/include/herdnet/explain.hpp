#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "herdnet/image.hpp"
#include "herdnet/models.hpp"
#include "herdnet/training.hpp"

namespace herdnet::explain {

// Nonnegative importance map, max-normalised to [0, 1] (an all-zero map stays zero).
struct ActivationMap {
    FloatImage values;
    int target_class = 0;
    std::string layer;
    std::string clip_id;
    int frame = -1;               // input frame / token-grid index, -1 for whole-clip maps
    bool zero_gradient = false;   // the target had no gradient at the layer
};

// Grad-CAM over activations [N, C, h, w] whose gradient has been filled by
// backward(): one coarse map per n, before upsampling and normalisation.
std::vector<FloatImage> gradcam_from_activation(const nn::Tensor& activation);

// Upsamples (bilinear) to height x width and max-normalises.
FloatImage finalize_map(const FloatImage& coarse, int height, int width);

// Grad-CAM of `target_class` at `layer` (the model's explain_layer() when empty)
// for a single-clip input [1, K, S, S]. One map per slice of the layer's
// leading dimension: per frame for the spatial stream and the hybrid, one for
// the temporal stream.
std::vector<ActivationMap> gradcam(models::Classifier& model, const nn::Tensor& input, int target_class,
                                   const std::string& layer = "");

// Total coarse Grad-CAM (before upsampling and normalisation) of each slice of
// the layer; compares how much each frame contributes.
std::vector<double> frame_cam_mass(models::Classifier& model, const nn::Tensor& input, int target_class,
                                   const std::string& layer = "");

// Token Grad-CAM at the last block's norm1 of a TimeSformer: one map per
// frame over the patch grid (class token excluded), upsampled to S x S.
std::vector<ActivationMap> transformer_map(models::Classifier& model, const nn::Tensor& input, int target_class);

// Explains one clip through the whole input pipeline. Pixels the pipeline
// overwrites (the cropped timestamp box) cannot influence the output and get
// zero importance. `layer` overrides the CNN layer (ignored for the TimeSformer).
std::vector<ActivationMap> explain_clip(models::Classifier& model, const training::Preprocess& pre,
                                        const VideoClip& clip, int target_class, const std::string& layer = "");

// Mean of equally sized maps, re-normalised.
ActivationMap average_maps(const std::vector<ActivationMap>& maps);

// Fixed blue-to-red colour map blended onto the frame at alpha 0.5.
RgbImage overlay(const ActivationMap& map, const GrayImage& frame);

// Sum of the map inside the mask (nonzero pixels) over the total; 0 for an all-zero map.
double region_mass(const ActivationMap& map, const GrayImage& mask);

// <prefix>.png (8-bit) and <prefix>.f32 (16-byte header "HNAM", u32 H, W, 1,
// then little-endian float32 values).
void save_map(const std::filesystem::path& prefix, const ActivationMap& map);
FloatImage read_map_values(const std::filesystem::path& f32_path);

}  // namespace herdnet::explain
