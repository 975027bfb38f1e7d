#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pmdg/algorithms.hpp"
#include "test_util.hpp"

using namespace pmdg;
using nlohmann::json;

namespace {

ModelSpec fd_model_spec() {
    // norm-free model under 1k parameters for finite-difference suites
    ModelSpec spec;
    spec.kind = ModelKind::small_cnn;
    spec.widths = {4};
    spec.feature_dim = 6;
    spec.num_classes = 2;
    spec.norm = NormKind::none;
    spec.image_size = 8;
    return spec;
}

std::vector<MiniBatch> random_batches(int k, int b, int h, int w, RngStream& rng,
                                      int num_classes = 2) {
    std::vector<MiniBatch> batches;
    for (int i = 0; i < k; ++i) {
        MiniBatch mb;
        mb.num_classes = num_classes;
        mb.domain_tag = "d" + std::to_string(i);
        Tensor raw({b, 3, h, w});
        for (std::int64_t p = 0; p < raw.size(); ++p) raw[p] = rng.uniform();
        mb.images = normalize_images(raw, mb.norm);
        mb.labels.resize(static_cast<std::size_t>(b));
        for (int j = 0; j < b; ++j) mb.labels[static_cast<std::size_t>(j)] = rng.uniform_int(num_classes);
        batches.push_back(std::move(mb));
    }
    return batches;
}

}  // namespace

TEST_CASE("registry contract") {
    Model m = build_model(fd_model_spec(), 1);
    auto erm = Algorithm::build("erm", std::move(m), {}, 0);
    CHECK(erm->name() == "erm");

    // groupdro q starts uniform over K domains
    auto dro = Algorithm::build("groupdro", build_model(fd_model_spec(), 1), {}, 0);
    auto q = dro->domain_weights(3);
    for (double v : q) CHECK(v == doctest::Approx(1.0 / 3.0));

    CHECK_THROWS_WITH_AS(Algorithm::build("mldg", build_model(fd_model_spec(), 1), {}, 0),
                         doctest::Contains("not in scope; see registry"), ValidationError);
    CHECK_THROWS_WITH_AS(Algorithm::build("frobnicate", build_model(fd_model_spec(), 1), {}, 0),
                         doctest::Contains("unknown algorithm"), ValidationError);
}

TEST_CASE("soft_cross_entropy") {
    SUBCASE("uniform logits, hard target, C=2 -> ln 2") {
        Tensor z({3, 2});
        Tensor t = one_hot({0, 1, 0}, 2);
        CHECK(soft_cross_entropy(z, t) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }

    SUBCASE("one-hot soft target equals the hard-target case bit-for-bit") {
        RngStream rng(2);
        Tensor z = testutil::random_tensor({4, 3}, rng);
        std::vector<int> labels = {2, 0, 1, 1};
        Tensor hard = one_hot(labels, 3);
        CHECK(soft_cross_entropy(z, hard) == soft_cross_entropy(z, Tensor(hard)));
    }

    SUBCASE("logits [1,-1], target [0.5,0.5] -> 1.1269") {
        Tensor z({1, 2}, {1.0, -1.0});
        Tensor t({1, 2}, {0.5, 0.5});
        CHECK(soft_cross_entropy(z, t) == doctest::Approx(1.1269).epsilon(1e-4));
    }

    SUBCASE("matches the loop oracle on random fixtures") {
        RngStream rng(3);
        for (int rep = 0; rep < 50; ++rep) {
            int n = 1 + rng.uniform_int(6), c = 2 + rng.uniform_int(3);
            Tensor z = testutil::random_tensor({n, c}, rng, -3.0, 3.0);
            Tensor t({n, c});
            for (int i = 0; i < n; ++i) {
                double total = 0.0;
                for (int j = 0; j < c; ++j) {
                    t.at(i, j) = rng.uniform();
                    total += t.at(i, j);
                }
                for (int j = 0; j < c; ++j) t.at(i, j) /= total;
            }
            CHECK(testutil::rel_err(soft_cross_entropy(z, t), oracle::soft_cross_entropy(z, t)) < 1e-12);
        }
    }

    SUBCASE("non-finite logits raise") {
        Tensor z({1, 2}, {std::nan(""), 0.0});
        CHECK_THROWS(soft_cross_entropy(z, one_hot({0}, 2)));
    }
}

TEST_CASE("coral_penalty") {
    SUBCASE("identical feature sets -> 0") {
        RngStream rng(4);
        Tensor a = testutil::random_tensor({5, 3}, rng);
        CHECK(coral_penalty(a, a) == doctest::Approx(0.0).epsilon(1e-15));
    }

    SUBCASE("worked fixture: A=I, B=2I -> 2.5") {
        Tensor a({2, 2}, {1.0, 0.0, 0.0, 1.0});
        Tensor b({2, 2}, {2.0, 0.0, 0.0, 2.0});
        CHECK(coral_penalty(a, b) == doctest::Approx(2.5).epsilon(1e-12));
    }

    SUBCASE("symmetric under swapping the domains") {
        RngStream rng(5);
        Tensor a = testutil::random_tensor({4, 3}, rng);
        Tensor b = testutil::random_tensor({6, 3}, rng);
        CHECK(coral_penalty(a, b) == doctest::Approx(coral_penalty(b, a)).epsilon(1e-12));
    }

    SUBCASE("n < 2 errors") {
        Tensor a({1, 2}, {1.0, 2.0});
        Tensor b({3, 2}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
        CHECK_THROWS_AS(coral_penalty(a, b), ValidationError);
    }
}

TEST_CASE("mmd_penalty") {
    SUBCASE("X = Y -> 0 within 1e-9") {
        RngStream rng(6);
        Tensor a = testutil::random_tensor({5, 3}, rng);
        CHECK(std::abs(mmd_penalty(a, a, {1.0})) <= 1e-9);
    }

    SUBCASE("single-pair closed form 2 - 2e^{-1}") {
        Tensor x({1, 1}, {0.0});
        Tensor y({1, 1}, {1.0});
        CHECK(mmd_penalty(x, y, {1.0}) == doctest::Approx(2.0 - 2.0 * std::exp(-1.0)).epsilon(1e-12));
        CHECK(mmd_penalty(x, y, {1.0}) == doctest::Approx(1.26424).epsilon(1e-4));
    }

    SUBCASE("bandwidth sum: gammas {1,2} add their closed forms") {
        Tensor x({1, 1}, {0.0});
        Tensor y({1, 1}, {1.0});
        double expect = (2.0 - 2.0 * std::exp(-1.0)) + (2.0 - 2.0 * std::exp(-2.0));
        CHECK(mmd_penalty(x, y, {1.0, 2.0}) == doctest::Approx(expect).epsilon(1e-12));
    }

    SUBCASE("empty input errors") {
        Tensor a({0, 2});
        Tensor b({2, 2}, {0.0, 0.0, 1.0, 1.0});
        CHECK_THROWS_AS(mmd_penalty(a, b, {1.0}), ValidationError);
    }
}

TEST_CASE("irm_penalty") {
    SUBCASE("all-zero logits -> 0") {
        Tensor z({4, 3});
        Tensor t = one_hot({0, 1, 2, 0}, 3);
        CHECK(irm_penalty(z, t, false) == doctest::Approx(0.0).epsilon(1e-15));
    }

    SUBCASE("worked fixture: single sample [1,-1], class 0, plain -> 0.05684") {
        Tensor z({1, 2}, {1.0, -1.0});
        Tensor t = one_hot({0}, 2);
        double pen = irm_penalty(z, t, false);
        CHECK(pen == doctest::Approx(0.05684).epsilon(1e-3));
        CHECK(std::sqrt(pen) == doctest::Approx(0.23840).epsilon(1e-4));
    }

    SUBCASE("formula equals finite-difference d/dw of the scaled risk") {
        RngStream rng(7);
        for (int rep = 0; rep < 20; ++rep) {
            int b = 2 + rng.uniform_int(5), c = 2 + rng.uniform_int(3);
            Tensor z = testutil::random_tensor({b, c}, rng, -2.0, 2.0);
            std::vector<int> labels;
            for (int i = 0; i < b; ++i) labels.push_back(rng.uniform_int(c));
            Tensor t = one_hot(labels, c);
            CHECK(testutil::rel_err(irm_penalty(z, t, false), oracle::irm(z, t, false)) < 1e-5);
            CHECK(testutil::rel_err(irm_penalty(z, t, true), oracle::irm(z, t, true)) < 1e-5);
        }
    }

    SUBCASE("plain mode is non-negative") {
        RngStream rng(8);
        for (int rep = 0; rep < 20; ++rep) {
            Tensor z = testutil::random_tensor({3, 2}, rng, -4.0, 4.0);
            Tensor t = one_hot({0, 1, 0}, 2);
            CHECK(irm_penalty(z, t, false) >= 0.0);
        }
    }

    SUBCASE("split-half requires b >= 2") {
        Tensor z({1, 2}, {1.0, -1.0});
        CHECK_THROWS_AS(irm_penalty(z, one_hot({0}, 2), true), ValidationError);
    }
}

TEST_CASE("vrex_penalty") {
    CHECK(vrex_penalty({0.3, 0.3, 0.3}) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(vrex_penalty({0.2, 0.4}) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(vrex_penalty({0.4, 0.2}) == doctest::Approx(vrex_penalty({0.2, 0.4})).epsilon(1e-15));
    CHECK(vrex_penalty({1.0, 0.5, 0.2, 0.8}) ==
          doctest::Approx(vrex_penalty({0.8, 0.2, 0.5, 1.0})).epsilon(1e-15));
    CHECK_THROWS_AS(vrex_penalty(std::vector<double>{0.5}), ValidationError);
}

TEST_CASE("groupdro_reweight") {
    SUBCASE("equal losses keep q") {
        auto q = groupdro_reweight({0.25, 0.25, 0.25, 0.25}, {1.0, 1.0, 1.0, 1.0}, 0.1);
        for (double v : q) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
    }

    SUBCASE("worked fixture: q=[.5,.5], losses=[1,0], eta=.01 -> [0.502500, 0.497500]") {
        auto q = groupdro_reweight({0.5, 0.5}, {1.0, 0.0}, 0.01);
        CHECK(q[0] == doctest::Approx(0.502500).epsilon(1e-6));
        CHECK(q[1] == doctest::Approx(0.497500).epsilon(1e-6));
    }

    SUBCASE("eta -> 0 keeps q") {
        auto q = groupdro_reweight({0.7, 0.3}, {2.0, 1.0}, 1e-12);
        CHECK(q[0] == doctest::Approx(0.7).epsilon(1e-9));
        CHECK(q[1] == doctest::Approx(0.3).epsilon(1e-9));
    }

    SUBCASE("concentrates on the argmax-loss domain and stays on the simplex") {
        std::vector<double> q = {1.0 / 3, 1.0 / 3, 1.0 / 3};
        std::vector<double> losses = {1.0, 0.5, 0.1};
        double qmax_at_500 = 0.0;
        for (int i = 0; i < 500; ++i) {
            q = groupdro_reweight(q, losses, 0.01);
            double total = 0.0;
            for (double v : q) {
                CHECK(v >= 0.0);
                total += v;
            }
            CHECK(std::abs(total - 1.0) <= 1e-9);
        }
        qmax_at_500 = *std::max_element(q.begin(), q.end());
        CHECK(qmax_at_500 > 0.9);
        CHECK(q[0] == *std::max_element(q.begin(), q.end()));
    }

    SUBCASE("ordering follows q * exp(eta*loss)") {
        auto q = groupdro_reweight({0.2, 0.3, 0.5}, {3.0, 2.0, 1.0}, 0.5);
        // raw weights: .2e^1.5=0.896, .3e^1=0.815, .5e^.5=0.824
        CHECK(q[0] > q[2]);
        CHECK(q[2] > q[1]);
    }
}

TEST_CASE("sd_penalty") {
    Tensor zeros({3, 2});
    CHECK(sd_penalty(zeros) == doctest::Approx(0.0));
    Tensor z({2, 2}, {2.0, 0.0, 0.0, 2.0});
    CHECK(sd_penalty(z) == doctest::Approx(2.0).epsilon(1e-12));
    // coefficient composition: sd_lambda 0.1 contributes 0.1 * penalty to total
    RngStream rng(9);
    auto alg = Algorithm::build("sd", build_model(fd_model_spec(), 3), {{"sd_lambda", 0.1}}, 3);
    auto batches = random_batches(2, 4, 8, 8, rng);
    LossReport rep = alg->compute_loss(batches);
    CHECK(rep.total == doctest::Approx(rep.task_loss + 0.1 * rep.penalty).epsilon(1e-12));
}

TEST_CASE("mixup_inter loss formula") {
    SUBCASE("lambda = 1 reduces to CE on the first element of each pair") {
        RngStream rng(10);
        Tensor z = testutil::random_tensor({3, 2}, rng);
        Tensor ti = one_hot({0, 1, 0}, 2);
        Tensor tj = one_hot({1, 1, 0}, 2);
        // lambda*CE(..., y_i) + (1-lambda)*CE(..., y_j) at lambda=1
        double lhs = 1.0 * oracle::soft_cross_entropy(z, ti) + 0.0 * oracle::soft_cross_entropy(z, tj);
        CHECK(lhs == doctest::Approx(oracle::soft_cross_entropy(z, ti)).epsilon(1e-15));
        // blended-target form agrees (CE is linear in the target)
        CHECK(soft_cross_entropy(z, ti) == doctest::Approx(lhs).epsilon(1e-12));
    }

    SUBCASE("fixed pairing, lambda = 0.3, 2-sample fixture matches the hand expansion") {
        Tensor z({2, 2}, {0.7, -0.4, -1.1, 0.2});
        Tensor ti = one_hot({0, 1}, 2);
        Tensor tj = one_hot({1, 0}, 2);
        double lambda = 0.3;
        Tensor blended({2, 2});
        for (std::int64_t i = 0; i < blended.size(); ++i) {
            blended[i] = lambda * ti[i] + (1 - lambda) * tj[i];
        }
        double via_blend = soft_cross_entropy(z, blended);
        double via_terms =
            lambda * oracle::soft_cross_entropy(z, ti) + (1 - lambda) * oracle::soft_cross_entropy(z, tj);
        CHECK(via_blend == doctest::Approx(via_terms).epsilon(1e-12));
    }

    SUBCASE("symmetric at lambda = 0.5 on identical batches") {
        RngStream rng(11);
        auto batches = random_batches(2, 4, 8, 8, rng);
        batches[1] = batches[0];
        Tensor t = batches[0].target_matrix();
        // mixing identical images at 0.5 gives the same images; targets symmetric
        Tensor sym({4, 2});
        for (std::int64_t i = 0; i < sym.size(); ++i) sym[i] = 0.5 * t[i] + 0.5 * t[i];
        CHECK(max_abs_diff(sym, t) == 0.0);
    }

    SUBCASE("requires K >= 2") {
        RngStream rng(12);
        auto alg = Algorithm::build("mixup_inter", build_model(fd_model_spec(), 4), {}, 4);
        auto batches = random_batches(1, 4, 8, 8, rng);
        CHECK_THROWS_WITH_AS(alg->update(batches), doctest::Contains("requires >=2"), ValidationError);
    }
}

TEST_CASE("penalty oracle equality on random fixtures (float64, 1e-6 relative)") {
    RngStream rng(13);
    for (int rep = 0; rep < 100; ++rep) {
        int n = 2 + rng.uniform_int(7), m = 2 + rng.uniform_int(7), d = 1 + rng.uniform_int(4);
        Tensor a = testutil::random_tensor({n, d}, rng, -2.0, 2.0);
        Tensor b = testutil::random_tensor({m, d}, rng, -2.0, 2.0);
        CHECK(testutil::rel_err(coral_penalty(a, b), oracle::coral(a, b)) < 1e-6);
        CHECK(testutil::rel_err(mmd_penalty(a, b, {0.5, 1.0, 2.0}), oracle::mmd(a, b, {0.5, 1.0, 2.0})) <
              1e-6);

        int c = 2 + rng.uniform_int(3);
        Tensor z = testutil::random_tensor({n, c}, rng, -2.5, 2.5);
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) labels.push_back(rng.uniform_int(c));
        Tensor t = one_hot(labels, c);
        CHECK(testutil::rel_err(irm_penalty(z, t, false), oracle::irm(z, t, false)) < 1e-5);
        CHECK(testutil::rel_err(sd_penalty(z), oracle::sd(z)) < 1e-6);

        std::vector<double> risks;
        int k = 2 + rng.uniform_int(4);
        for (int i = 0; i < k; ++i) risks.push_back(rng.uniform(0.0, 2.0));
        CHECK(testutil::rel_err(vrex_penalty(risks), oracle::vrex(risks)) < 1e-6);
    }
}

namespace {

// finite-difference sweep of d(total)/dtheta for one algorithm
void gradient_check_algorithm(const std::string& name, const json& hparams, int k) {
    RngStream rng(fnv1a(name));
    Model model = build_model(fd_model_spec(), 21);
    REQUIRE(model.parameter_count() <= 1000);
    auto alg = Algorithm::build(name, std::move(model), hparams, 21);
    auto batches = random_batches(k, 4, 8, 8, rng);

    LossReport rep = alg->compute_loss(batches, true);
    std::vector<double*> ptrs;
    std::vector<double> grads;
    for (auto& [pname, p] : alg->model().named_parameters()) {
        if (p->grad.empty()) p->ensure_grad();
        for (std::int64_t i = 0; i < p->value.size(); ++i) {
            ptrs.push_back(&p->value[i]);
            grads.push_back(p->grad[i]);
        }
    }

    std::function<double()> loss;
    if (name == "groupdro") {
        // the theta-gradient treats this step's reweighted q as constants
        // (stop-gradient), so the FD surrogate holds q fixed at its base value
        std::vector<double> q0 = alg->domain_weights(k);
        std::vector<double> base_losses = rep.per_domain_losses;
        double eta = alg->hparams().value("groupdro_eta", 0.01);
        std::vector<double> q_fixed = groupdro_reweight(q0, base_losses, eta);
        loss = [&alg, &batches, q_fixed]() {
            LossReport r = alg->compute_loss(batches);
            double total = 0.0;
            for (std::size_t i = 0; i < q_fixed.size(); ++i) {
                total += q_fixed[i] * r.per_domain_losses[i];
            }
            return total;
        };
    } else {
        loss = [&alg, &batches]() { return alg->compute_loss(batches).total; };
    }

    // h small enough that ReLU kinks within the step are not sampled
    auto res = testutil::finite_difference_check(loss, ptrs, grads, 1e-6);
    CAPTURE(name);
    CAPTURE(res.worst_analytic);
    CAPTURE(res.worst_numeric);
    CHECK(res.max_rel_err < 1e-3);
}

}  // namespace

TEST_CASE("gradient suite: analytic vs central finite differences per algorithm") {
    gradient_check_algorithm("erm", {}, 2);
    gradient_check_algorithm("groupdro", {}, 3);
    gradient_check_algorithm("irm", {{"irm_split_half", true}}, 2);
    gradient_check_algorithm("irm", {{"irm_split_half", false}}, 2);
    gradient_check_algorithm("vrex", {}, 3);
    gradient_check_algorithm("coral", {}, 2);
    gradient_check_algorithm("mmd", {}, 2);
    gradient_check_algorithm("sd", {}, 2);
    gradient_check_algorithm("mixup_inter", {}, 2);
}

TEST_CASE("algorithm_update composition and invariants") {
    RngStream rng(22);

    SUBCASE("erm with K=1 equals a plain CE step") {
        auto batches = random_batches(1, 4, 8, 8, rng);
        auto alg = Algorithm::build("erm", build_model(fd_model_spec(), 30), {}, 30);
        LossReport rep = alg->compute_loss(batches);
        double expect;
        {
            Model m = build_model(fd_model_spec(), 30);
            ad::Value logits = m.predict(ad::constant(batches[0].images));
            expect = ad::scalar_value(soft_cross_entropy(logits, batches[0].target_matrix()));
        }
        CHECK(rep.total == doctest::Approx(expect).epsilon(1e-12));
        CHECK(rep.penalty == 0.0);
    }

    SUBCASE("coral with two identical batches has zero penalty") {
        auto batches = random_batches(1, 4, 8, 8, rng);
        batches.push_back(batches[0]);
        auto alg = Algorithm::build("coral", build_model(fd_model_spec(), 31), {}, 31);
        LossReport rep = alg->compute_loss(batches);
        CHECK(rep.penalty == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(rep.total == doctest::Approx(rep.task_loss).epsilon(1e-12));
    }

    SUBCASE("pairwise algorithms reject K=1") {
        auto batches = random_batches(1, 4, 8, 8, rng);
        for (const std::string name : {"coral", "mmd", "vrex", "mixup_inter"}) {
            auto alg = Algorithm::build(name, build_model(fd_model_spec(), 32), {}, 32);
            CHECK_THROWS_WITH_AS(alg->update(batches), doctest::Contains("requires >=2 domains"),
                                 ValidationError);
        }
    }

    SUBCASE("update keeps parameter shapes and advances the step counter") {
        auto batches = random_batches(2, 4, 8, 8, rng);
        auto alg = Algorithm::build("irm", build_model(fd_model_spec(), 33), {}, 33);
        std::vector<std::vector<int>> shapes;
        for (auto& [n, p] : alg->model().named_parameters()) shapes.push_back(p->value.shape());
        alg->update(batches);
        alg->update(batches);
        std::size_t i = 0;
        for (auto& [n, p] : alg->model().named_parameters()) CHECK(p->value.shape() == shapes[i++]);
        CHECK(alg->step_count() == 2);
    }

    SUBCASE("LossReport totals compose as task + coeff * penalty") {
        auto batches = random_batches(2, 4, 8, 8, rng);
        for (const std::string name : {"irm", "vrex", "coral", "mmd", "sd"}) {
            auto alg = Algorithm::build(name, build_model(fd_model_spec(), 34), {}, 34);
            LossReport rep = alg->update(batches);
            CHECK(std::isfinite(rep.total));
            CHECK(rep.per_domain_losses.size() == 2);
            // pre-anneal coefficient for irm/vrex is 1.0; coral/mmd 1.0; sd 0.1
            double coeff = name == "sd" ? 0.1 : 1.0;
            CHECK(rep.total == doctest::Approx(rep.task_loss + coeff * rep.penalty).epsilon(1e-9));
        }
    }

    SUBCASE("groupdro q stays on the simplex across many updates") {
        auto batches = random_batches(3, 4, 8, 8, rng);
        auto alg = Algorithm::build("groupdro", build_model(fd_model_spec(), 35),
                                    {{"groupdro_eta", 0.5}}, 35);
        for (int i = 0; i < 50; ++i) {
            alg->update(batches);
            auto q = alg->domain_weights(3);
            double total = 0.0;
            for (double v : q) {
                CHECK(v >= 0.0);
                total += v;
            }
            CHECK(std::abs(total - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("ERM equivalence: zero penalty coefficient reproduces the ERM trace") {
    // mixup_inter has no penalty coefficient, so the invariant is vacuous there
    RngStream rng(23);
    auto batches_per_step = std::vector<std::vector<MiniBatch>>();
    for (int s = 0; s < 5; ++s) batches_per_step.push_back(random_batches(2, 4, 8, 8, rng));

    auto run_trace = [&](const std::string& name, const json& hp) {
        auto alg = Algorithm::build(name, build_model(fd_model_spec(), 40), hp, 40);
        std::vector<double> totals;
        for (const auto& b : batches_per_step) totals.push_back(alg->update(b).total);
        return totals;
    };

    auto erm_trace = run_trace("erm", {});
    auto check_trace = [&](const std::vector<double>& trace) {
        REQUIRE(trace.size() == erm_trace.size());
        for (std::size_t i = 0; i < trace.size(); ++i) {
            CHECK(trace[i] == doctest::Approx(erm_trace[i]).epsilon(1e-12));
        }
    };

    check_trace(run_trace("irm", {{"irm_lambda", 0.0}, {"irm_anneal_iters", 0}}));
    check_trace(run_trace("vrex", {{"vrex_lambda", 0.0}, {"vrex_anneal_iters", 0}}));
    check_trace(run_trace("coral", {{"coral_lambda", 0.0}}));
    check_trace(run_trace("mmd", {{"mmd_lambda", 0.0}}));
    check_trace(run_trace("sd", {{"sd_lambda", 0.0}}));
    check_trace(run_trace("groupdro", {{"groupdro_eta", 0.0}}));
}

TEST_CASE("irm/vrex anneal schedule switches the coefficient at anneal_iters") {
    RngStream rng(24);
    auto batches = random_batches(2, 4, 8, 8, rng);
    auto alg = Algorithm::build("irm", build_model(fd_model_spec(), 41),
                                {{"irm_anneal_iters", 2}, {"irm_lambda", 100.0}}, 41);
    LossReport r0 = alg->update(batches);  // step 0: coeff 1
    CHECK(r0.total == doctest::Approx(r0.task_loss + r0.penalty).epsilon(1e-9));
    alg->update(batches);                  // step 1: coeff 1
    LossReport r2 = alg->update(batches);  // step 2: coeff 100
    CHECK(r2.total == doctest::Approx(r2.task_loss + 100.0 * r2.penalty).epsilon(1e-9));
}
