#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pmdg/autodiff.hpp"
#include "pmdg/tensor.hpp"

namespace pmdg {

enum class ModelKind { small_cnn, mlp };
enum class NormKind { batch, none };

struct ModelSpec {
    ModelKind kind = ModelKind::small_cnn;
    int feature_dim = 128;          // channels of the last conv block (small_cnn)
    std::vector<int> widths = {16, 32};  // earlier block channels / mlp hidden sizes
    int num_classes = 2;
    NormKind norm = NormKind::batch;
    int image_size = 16;  // required by mlp (flatten dim); metadata for small_cnn

    void validate() const;
};

std::string to_string(ModelKind k);
std::string to_string(NormKind n);
ModelKind model_kind_from_string(const std::string& s);
NormKind norm_kind_from_string(const std::string& s);

/**
 * Featurizer + linear head classifier.
 *
 * small_cnn: blocks of 3x3 conv -> norm -> ReLU -> 2x2 avg pool with channel
 * counts widths..., feature_dim, then global average pooling; mlp: flatten
 * followed by linear+norm+ReLU per width (widths [] degenerates to a linear
 * model on the flattened input, so the effective feature size is then the
 * input dimension).
 *
 * In training mode batch-norm normalizes with batch statistics and updates the
 * running buffers in the order batches are processed; pseudo-domain batches
 * therefore update shared statistics in set order. set_bn_update(false)
 * freezes the buffers while keeping batch-statistic normalization (the
 * per-domain-frozen alternative). Eval mode always uses the running buffers.
 */
class Model {
public:
    Model() = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const ModelSpec& spec() const { return spec_; }
    int feature_dim() const { return feature_dim_; }

    void set_training(bool training) { training_ = training; }
    bool training() const { return training_; }
    void set_bn_update(bool update) { bn_update_ = update; }
    bool bn_update() const { return bn_update_; }

    // Graph-building forward passes.
    ad::Value featurize(const ad::Value& images);
    ad::Value classify(const ad::Value& features);
    ad::Value predict(const ad::Value& images);  // classify(featurize(x))

    // Plain eval-style forward on a constant input (no gradients kept).
    Tensor predict_logits(const Tensor& images);
    Tensor featurize_values(const Tensor& images);

    std::vector<std::pair<std::string, ad::Value>>& named_parameters() { return params_; }
    const std::vector<std::pair<std::string, ad::Value>>& named_parameters() const { return params_; }
    std::int64_t parameter_count() const;
    void zero_grad();

    // Full state (parameters + batch-norm buffers), used for checkpoints.
    std::vector<std::pair<std::string, Tensor>> state() const;
    void load_state(const std::vector<std::pair<std::string, Tensor>>& state);
    std::vector<Tensor> snapshot() const;
    void restore(const std::vector<Tensor>& snap);

    Model clone() const;

    // Versioned binary checkpoint; reload is bit-exact.
    void save(const std::string& path) const;
    static Model load(const std::string& path);

    friend Model build_model(const ModelSpec& spec, std::uint64_t seed);

private:
    struct BnState {
        ad::Value gamma, beta;
        Tensor running_mean, running_var;
        int channels = 0;
        bool active = false;
    };
    struct Layer {
        // conv (small_cnn) or linear (mlp) + optional norm
        ad::Value w, b;
        BnState bn;
        bool is_conv = false;
        int out_dim = 0;
    };

    ad::Value apply_bn(BnState& bn, const ad::Value& x);

    ModelSpec spec_;
    int feature_dim_ = 0;
    std::vector<Layer> layers_;
    ad::Value head_w_, head_b_;
    std::vector<std::pair<std::string, ad::Value>> params_;
    bool training_ = true;
    bool bn_update_ = true;
};

// Deterministic fan-in-scaled uniform initialization given seed.
Model build_model(const ModelSpec& spec, std::uint64_t seed);

// Row-wise softmax of a [b,C] logits tensor.
Tensor softmax_rows(const Tensor& logits);

}  // namespace pmdg
