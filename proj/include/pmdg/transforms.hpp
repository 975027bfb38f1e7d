#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pmdg/dataset.hpp"
#include "pmdg/rng.hpp"
#include "pmdg/tensor.hpp"

namespace pmdg {

enum class TransformLevel { dataset, batch, both };

/**
 * A pseudo-domain generator with the standardized two-level interface:
 * every op answers both apply_raw (lists of raw [0,1] images) and
 * apply_batch (normalized mini-batches); the level it does not use is a
 * pass-through. Ops own a private rng stream and re-draw their stochastic
 * parameters on every call, so instances must not be shared across
 * concurrent runs.
 */
class TransformOp {
public:
    TransformOp(std::string name, TransformLevel level, RngStream rng)
        : name_(std::move(name)), level_(level), rng_(rng) {}
    virtual ~TransformOp() = default;

    const std::string& name() const { return name_; }
    TransformLevel level_used() const { return level_; }

    std::vector<Tensor> apply_raw(const std::vector<Tensor>& images) {
        ++raw_calls_;
        return do_apply_raw(images);
    }
    MiniBatch apply_batch(const MiniBatch& batch) {
        ++batch_calls_;
        return do_apply_batch(batch);
    }

    std::int64_t raw_calls() const { return raw_calls_; }
    std::int64_t batch_calls() const { return batch_calls_; }

protected:
    virtual std::vector<Tensor> do_apply_raw(const std::vector<Tensor>& images) { return images; }
    virtual MiniBatch do_apply_batch(const MiniBatch& batch) { return batch; }

    std::string name_;
    TransformLevel level_;
    RngStream rng_;
    std::int64_t raw_calls_ = 0;
    std::int64_t batch_calls_ = 0;
};

using TransformPtr = std::unique_ptr<TransformOp>;

struct TransformSet {
    std::vector<TransformPtr> ops;  // O_1..O_K, duplicates permitted
    int k() const { return static_cast<int>(ops.size()); }
    std::int64_t total_calls() const;
};

// Registry name strings (exact): org, mixup, cutmix, rand_conv, augmix_lite,
// ipmix_lite, randaugment_lite, trivialaugment_lite, edge, style_stats.
const std::vector<std::string>& registered_transform_names();
TransformPtr make_transform(const std::string& name, RngStream rng);

// Builds O_1..O_K from names (selection with replacement); each slot gets an
// independent rng sub-stream derived from (seed, position).
TransformSet make_transform_set(const std::vector<std::string>& names, std::uint64_t seed);

// Applies each op to the batch, producing K pseudo-domain batches tagged
// "pseudo:<name>:<k>". Dataset-level ops run on a de-normalized copy.
std::vector<MiniBatch> apply_set(TransformSet& set, const MiniBatch& batch);

// ---------------------------------------------------------------------------
// Pure kernels behind the stochastic ops. These take every random parameter
// explicitly so behavior is testable point-wise; the registered ops draw the
// parameters from their streams and defer here.
// ---------------------------------------------------------------------------

// lambda*x_i + (1-lambda)*x_{pi(i)} with pi(i) = (i+shift) mod b; labels soft-mixed.
MiniBatch mixup_blend(const MiniBatch& batch, double lambda, int partner_shift);

// Pastes the partner's box [cy,cy+bh) x [cx,cx+bw) (already clipped) and
// soft-mixes labels with lambda recomputed from the pasted area.
MiniBatch cutmix_paste(const MiniBatch& batch, int partner_shift, int cy, int cx, int bh, int bw);

// Gaussian conv kernel [3,3,k,k] with Var = 1/(k*k*3).
Tensor rand_conv_kernel(int kernel_size, RngStream& rng);

// 3-in/3-out convolution with replicate padding on a [b,3,h,w] tensor.
Tensor conv2d_replicate(const Tensor& images, const Tensor& kernel);

// Re-standardizes each channel of `images` to the per-channel batch mean/std
// of `reference`; channels whose own std is below `eps` are left unchanged.
Tensor restandardize_channels(const Tensor& images, const Tensor& reference, double eps = 1e-6);

// Sobel gradient magnitude of a single-channel [h,w] map, replicate padding.
Tensor sobel_magnitude(const Tensor& luminance);

// Full sketch operator on one raw [3,h,w] image: luminance -> Sobel magnitude
// -> rescale to [0,1] -> inverted, replicated to 3 channels.
Tensor edge_sketch(const Tensor& raw_image);

// AdaIN-style per-channel statistics swap on [3,h,w] tensors.
Tensor style_swap(const Tensor& content, const Tensor& style, double eps = 1e-5);

// Pixel-op pool (raw [0,1] images).
enum class PixelOp {
    identity,
    autocontrast,
    equalize,
    posterize,
    solarize,
    brightness,
    contrast,
    saturation,
    rotate,
    shear_x,
    shear_y,
    translate_x,
    translate_y,
};
const std::vector<PixelOp>& pixel_op_pool();
std::string pixel_op_name(PixelOp op);

// signed_mag in [-1,1]; ops that have no direction use |signed_mag|.
Tensor apply_pixel_op(PixelOp op, const Tensor& raw_image, double signed_mag);

Tensor posterize(const Tensor& raw_image, int bits);
Tensor solarize(const Tensor& raw_image, double threshold);

enum class PixelPolicyMode { randaugment, trivialaugment };

// Applies the policy to raw images in place of the two registered dataset-level
// ops; throws ValidationError when images are not in raw [0,1] range.
std::vector<Tensor> pixel_policy_apply(const std::vector<Tensor>& raw_images, PixelPolicyMode mode,
                                       int n_ops, int magnitude, RngStream& rng);

// AugMix-style mixture with explicit draws: chains[i] is a sequence of
// (op, signed magnitude); weights are the Dirichlet draw; m the skip blend.
Tensor augmix_mixture(const Tensor& raw_image,
                      const std::vector<std::vector<std::pair<PixelOp, double>>>& chains,
                      const std::vector<double>& weights, double m);

// Multi-octave value noise texture in [0,1], [3,h,w].
Tensor value_noise_texture(int h, int w, RngStream& rng);

enum class IpmixGranularity { pixel, patch4, whole };
enum class IpmixBlend { additive, multiplicative };

// Blends a raw image with a texture; weight_field is [h,w] in [0,1].
Tensor ipmix_blend(const Tensor& raw_image, const Tensor& texture, IpmixBlend mode,
                   const Tensor& weight_field);

}  // namespace pmdg
