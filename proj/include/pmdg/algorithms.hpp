#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmdg/autodiff.hpp"
#include "pmdg/dataset.hpp"
#include "pmdg/models.hpp"
#include "pmdg/rng.hpp"

namespace pmdg {

struct LossReport {
    double task_loss = 0.0;
    double penalty = 0.0;
    double total = 0.0;
    std::vector<double> per_domain_losses;
};

// ---------------------------------------------------------------------------
// penalty terms: graph-building forms (differentiable) plus plain-value
// wrappers used by tests and the python bindings.
// ---------------------------------------------------------------------------

// Mean over the batch of -sum_c t_c * log softmax(logits)_c. Targets may be
// one-hot rows or arbitrary soft rows on the simplex.
ad::Value soft_cross_entropy(const ad::Value& logits, const Tensor& targets);
double soft_cross_entropy(const Tensor& logits, const Tensor& targets);

// Mean squared difference of feature means plus mean squared difference of
// centered covariance matrices (divisor n-1).
ad::Value coral_penalty(const ad::Value& features_a, const ad::Value& features_b);
double coral_penalty(const Tensor& features_a, const Tensor& features_b);

// Biased squared-MMD with the sum-of-Gaussians kernel k(x,y) = sum_g exp(-g*d2).
ad::Value mmd_penalty(const ad::Value& features_a, const ad::Value& features_b,
                      const std::vector<double>& bandwidth_gammas);
double mmd_penalty(const Tensor& features_a, const Tensor& features_b,
                   const std::vector<double>& bandwidth_gammas);

// IRMv1 surrogate: squared gradient of the risk w.r.t. a scalar classifier
// multiplier at w=1. split_half uses the unbiased even/odd product estimator.
ad::Value irm_penalty(const ad::Value& logits, const Tensor& targets, bool split_half);
double irm_penalty(const Tensor& logits, const Tensor& targets, bool split_half = false);

// Population variance of per-domain risks.
ad::Value vrex_penalty(const std::vector<ad::Value>& per_domain_risks);
double vrex_penalty(const std::vector<double>& per_domain_risks);

// Spectral decoupling: mean of squared logits.
ad::Value sd_penalty(const ad::Value& logits);
double sd_penalty(const Tensor& logits);

// Exponentiated-gradient reweighting: q'_k proportional to q_k * exp(eta*loss_k).
std::vector<double> groupdro_reweight(const std::vector<double>& q,
                                      const std::vector<double>& losses, double eta);

// ---------------------------------------------------------------------------
// algorithm registry
// ---------------------------------------------------------------------------

/**
 * A trainable MDG learner with the uniform update-on-K-minibatches contract.
 * One instance owns its model, optimizer state and rng and belongs to a
 * single training run.
 */
class Algorithm {
public:
    virtual ~Algorithm() = default;

    // In-scope registry names: erm, groupdro, irm, vrex, coral, mmd, sd,
    // mixup_inter. Recognized-but-out-of-scope names raise "not in scope".
    static const std::vector<std::string>& registry();
    static std::unique_ptr<Algorithm> build(const std::string& name, Model model,
                                            nlohmann::json hparams = {}, std::uint64_t seed = 0);

    // One optimizer step on the K mini-batches.
    LossReport update(const std::vector<MiniBatch>& batches);

    // Computes the exact loss (and gradients into the model leaves when
    // backprop) that update() would produce from the current state, restoring
    // all mutable state afterwards. Used by the finite-difference suites.
    LossReport compute_loss(const std::vector<MiniBatch>& batches, bool backprop = false);

    const std::string& name() const { return name_; }
    Model& model() { return model_; }
    const Model& model() const { return model_; }
    const nlohmann::json& hparams() const { return hparams_; }
    int step_count() const { return step_; }

    // GroupDRO's q; uniform for the others.
    virtual std::vector<double> domain_weights(int k) const;

    Algorithm(std::string name, Model model, nlohmann::json hparams, std::uint64_t seed);

protected:

    // Builds the total-loss graph for the current state; fills the report.
    virtual ad::Value build_total(const std::vector<MiniBatch>& batches, LossReport& report) = 0;
    // Applies deferred state changes after a committed step (default none).
    virtual void commit_step() {}
    virtual std::vector<double> save_extra_state() const { return {}; }
    virtual void restore_extra_state(const std::vector<double>&) {}

    double hp(const std::string& key, double fallback) const;
    int require_k(const std::vector<MiniBatch>& batches, int min_k) const;

    // Shared forward: features and logits per batch plus per-domain CE terms.
    struct Forward {
        std::vector<ad::Value> features;
        std::vector<ad::Value> logits;
        std::vector<ad::Value> ce;
    };
    Forward forward_batches(const std::vector<MiniBatch>& batches);

    std::string name_;
    Model model_;
    nlohmann::json hparams_;
    RngStream rng_;
    int step_ = 0;

private:
    void sgd_step();
    std::vector<Tensor> momentum_;
};

// Mean of +/- scaled values: (1/k) * sum(values). Helper used across modules.
ad::Value mean_of(const std::vector<ad::Value>& values);

}  // namespace pmdg
