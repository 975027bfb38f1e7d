#include "pmdg/algorithms.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace pmdg {

using nlohmann::json;

// ---------------------------------------------------------------------------
// penalties
// ---------------------------------------------------------------------------

namespace {

void validate_targets(const Tensor& targets) {
    if (targets.ndim() != 2) throw ValidationError("targets must be [b,C]");
    for (int i = 0; i < targets.dim(0); ++i) {
        double row = 0.0;
        for (int j = 0; j < targets.dim(1); ++j) {
            double v = targets.at(i, j);
            if (v < -1e-9) throw ValidationError("targets must be non-negative");
            row += v;
        }
        if (std::abs(row - 1.0) > 1e-6) throw ValidationError("target rows must sum to 1");
    }
}

// softmax probabilities as a graph node: exp(z - lse(z))
ad::Value softmax_graph(const ad::Value& logits) {
    return ad::exp(ad::sub_colvec(logits, ad::logsumexp_rows(logits)));
}

}  // namespace

ad::Value soft_cross_entropy(const ad::Value& logits, const Tensor& targets) {
    const Tensor& z = logits->value;
    if (!z.all_finite()) throw std::invalid_argument("soft_cross_entropy: non-finite logits");
    if (z.ndim() != 2 || !z.same_shape(targets)) {
        throw ValidationError("soft_cross_entropy: logits/targets shape mismatch");
    }
    validate_targets(targets);
    int b = z.dim(0);
    ad::Value logp = ad::sub_colvec(logits, ad::logsumexp_rows(logits));
    return ad::scale(ad::sum_all(ad::mul_const(logp, targets)), -1.0 / b);
}

double soft_cross_entropy(const Tensor& logits, const Tensor& targets) {
    return ad::scalar_value(soft_cross_entropy(ad::constant(logits), targets));
}

ad::Value coral_penalty(const ad::Value& fa, const ad::Value& fb) {
    int n = fa->value.dim(0), m = fb->value.dim(0);
    if (n < 2 || m < 2) throw ValidationError("coral_penalty requires n, m >= 2");
    if (fa->value.dim(1) != fb->value.dim(1)) throw ValidationError("coral_penalty: feature dims differ");

    ad::Value mu_a = ad::mean_rows(fa);
    ad::Value mu_b = ad::mean_rows(fb);
    ad::Value ca = ad::add_rowvec(fa, ad::scale(mu_a, -1.0));
    ad::Value cb = ad::add_rowvec(fb, ad::scale(mu_b, -1.0));
    ad::Value cov_a = ad::scale(ad::matmul_tn(ca, ca), 1.0 / (n - 1));
    ad::Value cov_b = ad::scale(ad::matmul_tn(cb, cb), 1.0 / (m - 1));

    ad::Value mean_diff = ad::sub(mu_a, mu_b);
    ad::Value cov_diff = ad::sub(cov_a, cov_b);
    return ad::add(ad::mean_all(ad::mul(mean_diff, mean_diff)),
                   ad::mean_all(ad::mul(cov_diff, cov_diff)));
}

double coral_penalty(const Tensor& fa, const Tensor& fb) {
    return ad::scalar_value(coral_penalty(ad::constant(fa), ad::constant(fb)));
}

ad::Value mmd_penalty(const ad::Value& fa, const ad::Value& fb, const std::vector<double>& gammas) {
    if (fa->value.dim(0) < 1 || fb->value.dim(0) < 1) throw ValidationError("mmd_penalty: empty input");
    if (gammas.empty()) throw ValidationError("mmd_penalty: no bandwidths given");
    auto kernel_mean = [&gammas](const ad::Value& x, const ad::Value& y) {
        ad::Value d2 = ad::pairwise_sqdist(x, y);
        ad::Value acc;
        for (double g : gammas) {
            ad::Value k = ad::exp(ad::scale(d2, -g));
            acc = acc ? ad::add(acc, k) : k;
        }
        return ad::mean_all(acc);
    };
    ad::Value kxx = kernel_mean(fa, fa);
    ad::Value kyy = kernel_mean(fb, fb);
    ad::Value kxy = kernel_mean(fa, fb);
    return ad::add(ad::add(kxx, kyy), ad::scale(kxy, -2.0));
}

double mmd_penalty(const Tensor& fa, const Tensor& fb, const std::vector<double>& gammas) {
    return ad::scalar_value(mmd_penalty(ad::constant(fa), ad::constant(fb), gammas));
}

ad::Value irm_penalty(const ad::Value& logits, const Tensor& targets, bool split_half) {
    const Tensor& z = logits->value;
    if (z.ndim() != 2 || !z.same_shape(targets)) {
        throw ValidationError("irm_penalty: logits/targets shape mismatch");
    }
    int b = z.dim(0);
    if (split_half && b < 2) throw ValidationError("irm_penalty split-half mode requires b >= 2");

    // d/dw CE(w*z, t) at w=1, per sample: sum_c (softmax(z)_c - t_c) * z_c
    ad::Value diff = ad::sub(softmax_graph(logits), ad::constant(targets));
    ad::Value per_sample = ad::mul(diff, logits);  // [b,C]; row sums give the per-sample grad

    if (!split_half) {
        ad::Value g = ad::scale(ad::sum_all(per_sample), 1.0 / b);
        return ad::mul(g, g);
    }
    std::vector<int> even, odd;
    for (int i = 0; i < b; ++i) (i % 2 == 0 ? even : odd).push_back(i);
    ad::Value g1 = ad::scale(ad::sum_all(ad::select_rows(per_sample, even)),
                             1.0 / static_cast<double>(even.size()));
    ad::Value g2 = ad::scale(ad::sum_all(ad::select_rows(per_sample, odd)),
                             1.0 / static_cast<double>(odd.size()));
    return ad::mul(g1, g2);
}

double irm_penalty(const Tensor& logits, const Tensor& targets, bool split_half) {
    return ad::scalar_value(irm_penalty(ad::constant(logits), targets, split_half));
}

ad::Value vrex_penalty(const std::vector<ad::Value>& risks) {
    if (risks.size() < 2) throw ValidationError("vrex_penalty requires >= 2 domains");
    ad::Value v = ad::concat_scalars(risks);
    ad::Value m1 = ad::mean_all(v);
    ad::Value m2 = ad::mean_all(ad::mul(v, v));
    return ad::sub(m2, ad::mul(m1, m1));
}

double vrex_penalty(const std::vector<double>& risks) {
    std::vector<ad::Value> vals;
    vals.reserve(risks.size());
    for (double r : risks) vals.push_back(ad::constant(Tensor::scalar(r)));
    return ad::scalar_value(vrex_penalty(vals));
}

ad::Value sd_penalty(const ad::Value& logits) { return ad::mean_all(ad::mul(logits, logits)); }

double sd_penalty(const Tensor& logits) {
    return ad::scalar_value(sd_penalty(ad::constant(logits)));
}

std::vector<double> groupdro_reweight(const std::vector<double>& q,
                                      const std::vector<double>& losses, double eta) {
    if (q.size() != losses.size()) throw ValidationError("groupdro_reweight: size mismatch");
    double max_loss = *std::max_element(losses.begin(), losses.end());
    std::vector<double> out(q.size());
    double total = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        out[i] = q[i] * std::exp(eta * (losses[i] - max_loss));
        total += out[i];
    }
    for (auto& v : out) v /= total;
    return out;
}

ad::Value mean_of(const std::vector<ad::Value>& values) {
    if (values.empty()) throw std::invalid_argument("mean_of: empty");
    ad::Value acc = values.front();
    for (std::size_t i = 1; i < values.size(); ++i) acc = ad::add(acc, values[i]);
    return ad::scale(acc, 1.0 / static_cast<double>(values.size()));
}

// ---------------------------------------------------------------------------
// Algorithm base
// ---------------------------------------------------------------------------

namespace {

json default_hparams(const std::string& name) {
    json hp = {{"lr", 0.01}, {"momentum", 0.9}, {"weight_decay", 1e-4}};
    if (name == "irm") {
        hp["irm_lambda"] = 100.0;
        hp["irm_anneal_iters"] = 500.0;
        hp["irm_split_half"] = true;
    } else if (name == "vrex") {
        hp["vrex_lambda"] = 10.0;
        hp["vrex_anneal_iters"] = 500.0;
    } else if (name == "coral") {
        hp["coral_lambda"] = 1.0;
    } else if (name == "mmd") {
        hp["mmd_lambda"] = 1.0;
        hp["mmd_gammas"] = {0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0};
    } else if (name == "sd") {
        hp["sd_lambda"] = 0.1;
    } else if (name == "groupdro") {
        hp["groupdro_eta"] = 0.01;
    } else if (name == "mixup_inter") {
        hp["mixup_alpha"] = 0.2;
    }
    return hp;
}

}  // namespace

Algorithm::Algorithm(std::string name, Model model, json hparams, std::uint64_t seed)
    : name_(std::move(name)), model_(std::move(model)), rng_(RngStream::derive(seed, "algorithm")) {
    hparams_ = default_hparams(name_);
    for (auto& [k, v] : hparams.items()) hparams_[k] = v;
}

double Algorithm::hp(const std::string& key, double fallback) const {
    auto it = hparams_.find(key);
    if (it == hparams_.end()) return fallback;
    return it->get<double>();
}

int Algorithm::require_k(const std::vector<MiniBatch>& batches, int min_k) const {
    int k = static_cast<int>(batches.size());
    if (k < min_k) {
        throw ValidationError("algorithm '" + name_ + "' requires >=" + std::to_string(min_k) +
                              " domains, got " + std::to_string(k));
    }
    return k;
}

Algorithm::Forward Algorithm::forward_batches(const std::vector<MiniBatch>& batches) {
    // bn_stats policy: "shared" lets every batch update the running buffers in
    // set order; "first_domain" freezes them for all but the first batch (the
    // untransformed domain in pmdg mode).
    bool first_only = hparams_.value("bn_stats", "shared") == std::string("first_domain");
    bool saved_update = model_.bn_update();
    Forward f;
    for (std::size_t i = 0; i < batches.size(); ++i) {
        if (first_only) model_.set_bn_update(saved_update && i == 0);
        ad::Value feats = model_.featurize(ad::constant(batches[i].images));
        ad::Value logits = model_.classify(feats);
        f.ce.push_back(soft_cross_entropy(logits, batches[i].target_matrix()));
        f.features.push_back(std::move(feats));
        f.logits.push_back(std::move(logits));
    }
    model_.set_bn_update(saved_update);
    return f;
}

void Algorithm::sgd_step() {
    auto& params = model_.named_parameters();
    if (momentum_.empty()) {
        for (auto& [name, p] : params) momentum_.push_back(Tensor::zeros(p->value.shape()));
    }
    double lr = hp("lr", 0.01);
    double mu = hp("momentum", 0.9);
    double wd = hp("weight_decay", 1e-4);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].second;
        Tensor& v = momentum_[i];
        if (p->grad.empty()) p->ensure_grad();
        for (std::int64_t j = 0; j < p->value.size(); ++j) {
            double g = p->grad[j] + wd * p->value[j];
            v[j] = mu * v[j] + g;
            p->value[j] -= lr * v[j];
        }
    }
}

LossReport Algorithm::update(const std::vector<MiniBatch>& batches) {
    require_k(batches, 1);
    LossReport report;
    ad::Value total = build_total(batches, report);
    model_.zero_grad();
    ad::backward(total);
    sgd_step();
    commit_step();
    ++step_;
    return report;
}

LossReport Algorithm::compute_loss(const std::vector<MiniBatch>& batches, bool backprop) {
    require_k(batches, 1);
    RngStream saved_rng = rng_;
    int saved_step = step_;
    auto extra = save_extra_state();
    bool saved_bn = model_.bn_update();
    model_.set_bn_update(false);

    LossReport report;
    ad::Value total = build_total(batches, report);
    if (backprop) {
        model_.zero_grad();
        ad::backward(total);
    }

    model_.set_bn_update(saved_bn);
    restore_extra_state(extra);
    rng_ = saved_rng;
    step_ = saved_step;
    return report;
}

std::vector<double> Algorithm::domain_weights(int k) const {
    return std::vector<double>(static_cast<std::size_t>(k), 1.0 / k);
}

// ---------------------------------------------------------------------------
// concrete algorithms
// ---------------------------------------------------------------------------

namespace {

class ErmAlgorithm : public Algorithm {
public:
    using Algorithm::Algorithm;

protected:
    ad::Value build_total(const std::vector<MiniBatch>& batches, LossReport& report) override {
        auto f = forward_batches(batches);
        ad::Value total = mean_of(f.ce);
        for (const auto& ce : f.ce) report.per_domain_losses.push_back(ad::scalar_value(ce));
        report.task_loss = ad::scalar_value(total);
        report.penalty = 0.0;
        report.total = report.task_loss;
        return total;
    }
};

class GroupDroAlgorithm : public Algorithm {
public:
    using Algorithm::Algorithm;

    std::vector<double> domain_weights(int k) const override {
        if (static_cast<int>(q_.size()) == k) return q_;
        return Algorithm::domain_weights(k);
    }

protected:
    ad::Value build_total(const std::vector<MiniBatch>& batches, LossReport& report) override {
        int k = static_cast<int>(batches.size());
        if (static_cast<int>(q_.size()) != k) q_.assign(static_cast<std::size_t>(k), 1.0 / k);
        auto f = forward_batches(batches);
        std::vector<double> losses;
        for (const auto& ce : f.ce) losses.push_back(ad::scalar_value(ce));
        pending_q_ = groupdro_reweight(q_, losses, hp("groupdro_eta", 0.01));

        ad::Value total;
        for (int i = 0; i < k; ++i) {
            ad::Value term = ad::scale(f.ce[static_cast<std::size_t>(i)], pending_q_[static_cast<std::size_t>(i)]);
            total = total ? ad::add(total, term) : term;
        }
        report.per_domain_losses = losses;
        report.task_loss = ad::scalar_value(total);
        report.penalty = 0.0;
        report.total = report.task_loss;
        return total;
    }

    void commit_step() override {
        if (!pending_q_.empty()) q_ = pending_q_;
    }

    std::vector<double> save_extra_state() const override {
        std::vector<double> s = q_;
        s.insert(s.end(), pending_q_.begin(), pending_q_.end());
        s.push_back(static_cast<double>(q_.size()));
        return s;
    }
    void restore_extra_state(const std::vector<double>& s) override {
        if (s.empty()) return;
        std::size_t qn = static_cast<std::size_t>(s.back());
        q_.assign(s.begin(), s.begin() + qn);
        pending_q_.assign(s.begin() + qn, s.end() - 1);
    }

private:
    std::vector<double> q_;
    std::vector<double> pending_q_;
};

class PenaltyAlgorithm : public Algorithm {
    // shared machinery for irm / vrex / coral / mmd / sd
public:
    using Algorithm::Algorithm;

protected:
    ad::Value build_total(const std::vector<MiniBatch>& batches, LossReport& report) override {
        int min_k = (name_ == "coral" || name_ == "mmd" || name_ == "vrex") ? 2 : 1;
        int k = require_k(batches, min_k);
        auto f = forward_batches(batches);
        ad::Value task = mean_of(f.ce);

        ad::Value penalty;
        double coeff = 1.0;
        if (name_ == "irm") {
            coeff = step_ < static_cast<int>(hp("irm_anneal_iters", 500)) ? 1.0 : hp("irm_lambda", 100.0);
            bool split = hparams_.value("irm_split_half", true);
            std::vector<ad::Value> terms;
            for (int i = 0; i < k; ++i) {
                terms.push_back(irm_penalty(f.logits[static_cast<std::size_t>(i)],
                                            batches[static_cast<std::size_t>(i)].target_matrix(), split));
            }
            penalty = mean_of(terms);
        } else if (name_ == "vrex") {
            coeff = step_ < static_cast<int>(hp("vrex_anneal_iters", 500)) ? 1.0 : hp("vrex_lambda", 10.0);
            penalty = vrex_penalty(f.ce);
        } else if (name_ == "coral" || name_ == "mmd") {
            coeff = name_ == "coral" ? hp("coral_lambda", 1.0) : hp("mmd_lambda", 1.0);
            std::vector<double> gammas;
            if (name_ == "mmd") gammas = hparams_["mmd_gammas"].get<std::vector<double>>();
            std::vector<ad::Value> terms;
            for (int i = 0; i < k; ++i) {
                for (int j = i + 1; j < k; ++j) {
                    const auto& a = f.features[static_cast<std::size_t>(i)];
                    const auto& b = f.features[static_cast<std::size_t>(j)];
                    terms.push_back(name_ == "coral" ? coral_penalty(a, b) : mmd_penalty(a, b, gammas));
                }
            }
            penalty = mean_of(terms);
        } else {  // sd
            coeff = hp("sd_lambda", 0.1);
            std::vector<ad::Value> terms;
            for (const auto& logits : f.logits) terms.push_back(sd_penalty(logits));
            penalty = mean_of(terms);
        }

        for (const auto& ce : f.ce) report.per_domain_losses.push_back(ad::scalar_value(ce));
        report.task_loss = ad::scalar_value(task);
        report.penalty = ad::scalar_value(penalty);
        report.total = report.task_loss + coeff * report.penalty;
        return ad::add(task, ad::scale(penalty, coeff));
    }
};

class MixupInterAlgorithm : public Algorithm {
public:
    using Algorithm::Algorithm;

protected:
    ad::Value build_total(const std::vector<MiniBatch>& batches, LossReport& report) override {
        int k = require_k(batches, 2);
        double alpha = hp("mixup_alpha", 0.2);
        int b = batches.front().batch_size();
        for (const auto& mb : batches) {
            if (mb.batch_size() != b) throw ValidationError("mixup_inter requires equal batch sizes");
        }
        // pair domain i with domain sigma(i), a rotation derangement
        int shift = 1 + rng_.uniform_int(k - 1);
        std::vector<ad::Value> pair_losses;
        for (int i = 0; i < k; ++i) {
            int j = (i + shift) % k;
            double lambda = rng_.beta(alpha, alpha);
            const MiniBatch& a = batches[static_cast<std::size_t>(i)];
            const MiniBatch& bb = batches[static_cast<std::size_t>(j)];
            Tensor mixed = a.images;
            for (std::int64_t p = 0; p < mixed.size(); ++p) {
                mixed[p] = lambda * a.images[p] + (1.0 - lambda) * bb.images[p];
            }
            Tensor ta = a.target_matrix(), tb = bb.target_matrix();
            Tensor targets = ta;
            for (std::int64_t p = 0; p < targets.size(); ++p) {
                targets[p] = lambda * ta[p] + (1.0 - lambda) * tb[p];
            }
            ad::Value logits = model_.predict(ad::constant(mixed));
            pair_losses.push_back(soft_cross_entropy(logits, targets));
        }
        ad::Value total = mean_of(pair_losses);
        for (const auto& l : pair_losses) report.per_domain_losses.push_back(ad::scalar_value(l));
        report.task_loss = ad::scalar_value(total);
        report.penalty = 0.0;
        report.total = report.task_loss;
        return total;
    }
};

const std::set<std::string>& out_of_scope_algorithms() {
    static const std::set<std::string> names = {"arm",  "cdann", "dann",    "eqrm",  "mldg",
                                                "mtl",  "ridg",  "selfreg", "sagnet", "rsc"};
    return names;
}

}  // namespace

const std::vector<std::string>& Algorithm::registry() {
    static const std::vector<std::string> names = {"erm",   "groupdro", "irm", "vrex",
                                                   "coral", "mmd",      "sd",  "mixup_inter"};
    return names;
}

std::unique_ptr<Algorithm> Algorithm::build(const std::string& name, Model model, json hparams,
                                            std::uint64_t seed) {
    if (name == "erm") {
        return std::make_unique<ErmAlgorithm>(name, std::move(model), std::move(hparams), seed);
    }
    if (name == "groupdro") {
        return std::make_unique<GroupDroAlgorithm>(name, std::move(model), std::move(hparams), seed);
    }
    if (name == "irm" || name == "vrex" || name == "coral" || name == "mmd" || name == "sd") {
        return std::make_unique<PenaltyAlgorithm>(name, std::move(model), std::move(hparams), seed);
    }
    if (name == "mixup_inter") {
        return std::make_unique<MixupInterAlgorithm>(name, std::move(model), std::move(hparams), seed);
    }
    if (out_of_scope_algorithms().count(name)) {
        throw ValidationError("algorithm '" + name + "' not in scope; see registry");
    }
    std::ostringstream os;
    os << "unknown algorithm '" << name << "'; registered:";
    for (const auto& n : registry()) os << " " << n;
    throw ValidationError(os.str());
}

}  // namespace pmdg
