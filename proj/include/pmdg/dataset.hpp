#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmdg/tensor.hpp"

namespace pmdg {

/// Raised when a config or argument violates a documented precondition.
/// The message names the offending field. CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

struct LabeledExample {
    Tensor image;        // [3,h,w], values in [0,1] (raw, pre-normalization)
    int label = 0;       // class index in [0, C)
    std::string domain;  // non-empty domain tag
};

struct DomainDataset {
    std::string name;
    std::vector<std::string> domains;  // ordered
    std::vector<LabeledExample> examples;
    std::vector<std::string> class_names;

    int num_classes() const { return static_cast<int>(class_names.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(examples.size()); }

    // Indices of examples belonging to `domain`, in dataset order.
    std::vector<int> domain_indices(const std::string& domain) const;
    // New dataset containing only the given domain (shares no state).
    DomainDataset filter_domain(const std::string& domain) const;
    // Examples per domain.
    std::map<std::string, int> domain_counts() const;

    void validate() const;  // checks the type invariants
};

enum class Background { flat, noise, stripes };

struct DomainShift {
    std::string name;
    std::vector<double> hue_palette;  // hue angles in degrees
    Background background = Background::flat;
    double rotation_range = 0.0;  // degrees, symmetric
    double color_class_correlation = 1.0;  // rho in [0,1]
};

struct SyntheticShiftSpec {
    std::string name = "synthetic";
    int num_classes = 2;
    std::vector<DomainShift> domains;
    int image_size = 16;
    int samples_per_domain = 100;
    std::uint64_t seed = 0;

    void validate() const;  // throws ValidationError naming the bad field
};

// Shape names used as synthetic class names, in class-index order.
const std::vector<std::string>& synthetic_shape_names();

// Renders a multi-domain dataset of colored shapes. The class label is the
// rendered shape; the foreground color index agrees with the label for an
// exact round(rho*m) count of each domain's examples (positions shuffled),
// the rest drawing uniformly from the other palette entries.
DomainDataset generate_synthetic(const SyntheticShiftSpec& spec);

// Loads root/<domain>/<class>/<file>.{png|jpg|jpeg}; domains and classes in
// sorted order, images resized to image_size and scaled to [0,1].
DomainDataset load_image_folder(const std::string& root, int image_size = 64);

// Writes a dataset back out in the same folder layout (8-bit PNG).
void write_image_folder(const std::string& root, const DomainDataset& ds);

struct SplitPair {
    DomainDataset train;
    DomainDataset val;
};

// Per-class stratified split within each domain. 0 < holdout_fraction < 0.5.
SplitPair split_in_domain(const DomainDataset& ds, double holdout_fraction, std::uint64_t seed);

// Class-stratified subsample of exactly n examples without replacement.
DomainDataset subsample(const DomainDataset& ds, int n, std::uint64_t seed);

struct NormStats {
    double mean[3] = {0.5, 0.5, 0.5};
    double std[3] = {0.5, 0.5, 0.5};
};

struct MiniBatch {
    Tensor images;             // [b,3,h,w], normalized
    std::vector<int> labels;   // hard labels; empty when soft
    Tensor soft_labels;        // [b,C] rows on the simplex; empty when hard
    int num_classes = 0;
    std::string domain_tag;
    NormStats norm;
    bool augmented = false;  // default augmentation was applied at assembly

    int batch_size() const { return images.ndim() == 4 ? images.dim(0) : 0; }
    bool has_soft_labels() const { return !soft_labels.empty(); }
    // Targets as a [b,C] matrix (one-hot rows for hard labels).
    Tensor target_matrix() const;
    // Images mapped back to raw [0,1] space.
    Tensor denormalized_images() const;
    void set_images_from_raw(const Tensor& raw);  // re-normalizes
};

struct MiniBatchOptions {
    bool augment = true;  // random crop (pad 4, replicate) + horizontal flip
    NormStats norm;
};

// Epoch-dependent deterministic shuffle into batches of exactly batch_size
// (final partial batch dropped). Default augmentation is applied before
// normalization when opts.augment is set; validation/test iteration uses
// eval_minibatches instead.
std::vector<MiniBatch> make_minibatches(const DomainDataset& ds, int batch_size, std::uint64_t seed,
                                        int epoch, const MiniBatchOptions& opts = {});

// In-order batches covering every example (last batch may be smaller);
// never augmented.
std::vector<MiniBatch> eval_minibatches(const DomainDataset& ds, int batch_size,
                                        const NormStats& norm = {});

Tensor normalize_images(const Tensor& raw, const NormStats& norm);
Tensor denormalize_images(const Tensor& images, const NormStats& norm);
Tensor one_hot(const std::vector<int>& labels, int num_classes);

}  // namespace pmdg
