#include <doctest.h>

#include <cmath>

#include "paodp/diffusion.hpp"
#include "test_support.hpp"

using namespace paodp;
using namespace paodp::diffusion;

TEST_CASE("schedule invariants and validation")
{
    for (const auto& s : {NoiseSchedule::respaced_linear(20), NoiseSchedule::geometric(20), NoiseSchedule::geometric(5)}) {
        const int n = s.steps();
        for (int k = 2; k <= n; ++k) {
            CHECK(s.beta(k) >= s.beta(k - 1));
            CHECK(s.alpha_bar(k) < s.alpha_bar(k - 1));
        }
        CHECK(s.alpha_bar(n) < 0.01);
        double log_ab = 0.0;
        for (int k = 1; k <= n; ++k) {
            log_ab += std::log(s.alpha(k));
            CHECK(std::exp(log_ab) == doctest::Approx(s.alpha_bar(k)).epsilon(1e-6));
        }
    }
    const auto g = NoiseSchedule::geometric(20);
    CHECK(g.beta(1) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(g.alpha_bar(20) == doctest::Approx(5e-3).epsilon(1e-9));
    CHECK(g.beta(3) / g.beta(2) == doctest::Approx(g.beta(20) / g.beta(19)).epsilon(1e-9));
    CHECK(NoiseSchedule::geometric(1).alpha_bar(1) == doctest::Approx(5e-3));
    CHECK_THROWS_AS(NoiseSchedule::geometric(0), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule::linear(20, 1e-4, 2e-2), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule::from_betas({0.5, 0.4, 0.999}), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule::from_betas({0.0, 0.999}), ConfigError);
    CHECK_NOTHROW(NoiseSchedule::linear(100, 1e-2, 0.2));
}

TEST_CASE("noise_forward closed form")
{
    const auto s = NoiseSchedule::linear(50, 1e-2, 0.2);
    Matrix<double> a0(2, 1);
    a0 << 1.0, 0.0;
    Matrix<double> eps(2, 1);
    eps << 0.3, -0.7;
    const int k = 25;
    double ab = 1.0;
    for (int i = 1; i <= k; ++i)
        ab *= 1.0 - (1e-2 + (0.2 - 1e-2) * (i - 1) / 49.0);
    const auto ak = noise_forward(s, a0, {k}, eps);
    CHECK(ak(0, 0) == doctest::Approx(std::sqrt(ab) * 1.0 + std::sqrt(1 - ab) * 0.3).epsilon(1e-12));
    CHECK(ak(1, 0) == doctest::Approx(std::sqrt(1 - ab) * -0.7).epsilon(1e-12));

    const auto zero = noise_forward(s, a0, {k}, Matrix<double>::Zero(2, 1).eval());
    CHECK(zero(0, 0) == doctest::Approx(std::sqrt(s.alpha_bar(k))));
    CHECK_THROWS_AS(noise_forward(s, a0, {0}, eps), std::out_of_range);
    CHECK_THROWS_AS(noise_forward(s, a0, {51}, eps), std::out_of_range);
}

TEST_CASE("bc_loss of a zero predictor is mean squared noise")
{
    auto p = testing::tiny_policy(3, 2, 1);
    p.network().params().setZero();
    Rng rng(3);
    const auto states = rng.normal_matrix<double>(3, 64);
    const auto actions = rng.normal_matrix<double>(2, 64);
    const auto draw = draw_noise<double>(64, 2, p.schedule().steps(), rng);
    const auto loss = bc_loss(p, states, actions, draw);
    CHECK(loss.loss == doctest::Approx(draw.eps.squaredNorm() / 64.0).epsilon(1e-12));
}

TEST_CASE("bc_loss and elbo_logprob gradients match finite differences")
{
    auto p = testing::tiny_policy(3, 2, 5);
    CHECK(p.network().num_params() <= 500);
    Rng rng(9);
    const auto states = rng.normal_matrix<double>(3, 16);
    const auto actions = rng.normal_matrix<double>(2, 16);
    const auto draw = draw_noise<double>(16, 2, p.schedule().steps(), rng);
    const auto analytic = bc_loss(p, states, actions, draw);
    const double err = testing::gradient_error(p.network().params(), analytic.grad, [&] {
        return static_cast<double>(bc_loss(p, states, actions, draw).loss);
    });
    CHECK(err < testing::kFdTolerance);

    // Weighted per-sample errors, which is what the surrogate gradient uses.
    Vector<double> w = rng.normal_matrix<double>(16, 1);
    const auto terms = denoising_terms(p, states, actions, draw);
    const auto g = denoising_backward(p, terms, w);
    const double err2 = testing::gradient_error(p.network().params(), g, [&] {
        return -elbo_logprob(p, states, actions, draw).dot(w);
    });
    CHECK(err2 < testing::kFdTolerance);
}

TEST_CASE("sampling: zero predictor closed form, K=1, bounds")
{
    auto p = testing::tiny_policy(2, 2, 2);
    p.network().params().setZero();
    Rng rng(4);
    const auto states = rng.normal_matrix<double>(2, 8);
    const auto init = rng.normal_matrix<double>(2, 8);
    const auto out = denoise(p, states, init, rng, false, false);
    double scale = 1.0;
    for (int k = 1; k <= p.schedule().steps(); ++k)
        scale *= std::sqrt(p.schedule().alpha(k));
    CHECK((out - init / scale).cwiseAbs().maxCoeff() < 1e-12);

    DiffusionPolicy<double> one(2, 2, NoiseSchedule::from_betas({0.995}), Eigen::VectorXd::Constant(2, -5),
        Eigen::VectorXd::Constant(2, 5), PolicyOptions{4, {8}});
    Rng r1(1);
    one.init(r1);
    Rng a(7), b(7);
    const auto x = denoise(one, states, init, a, true, false);
    const auto y = denoise(one, states, init, b, false, false);
    CHECK(x == y);  // no noise is added on the only step

    Rng rng2(5);
    auto wild = testing::tiny_policy(2, 2, 3);
    wild.network().params() *= 50.0;
    const auto clipped = sample_actions(wild, rng2.normal_matrix<double>(2, 256), rng2);
    CHECK(clipped.maxCoeff() <= 1.0);
    CHECK(clipped.minCoeff() >= -1.0);
}

TEST_CASE("elbo surrogate: shared-noise antisymmetry")
{
    auto pa = testing::tiny_policy(2, 2, 11);
    auto pb = testing::tiny_policy(2, 2, 12);
    Rng rng(1);
    const auto s = rng.normal_matrix<double>(2, 32);
    const auto a = rng.normal_matrix<double>(2, 32);
    const auto draw = draw_noise<double>(32, 2, pa.schedule().steps(), rng);
    const Vector<double> la = elbo_logprob(pa, s, a, draw), lb = elbo_logprob(pb, s, a, draw);
    CHECK((la - lb) == -(lb - la));
    CHECK((elbo_logprob(pa, s, a, draw) - la).cwiseAbs().maxCoeff() == 0.0);
    CHECK(la.maxCoeff() <= 0.0);
}

TEST_CASE("training on a single action concentrates samples on it")
{
    diffusion::PolicyOptions opts;
    DiffusionPolicy<float> p(2, 2, NoiseSchedule::respaced_linear(20), Eigen::VectorXd::Constant(2, -1),
        Eigen::VectorXd::Constant(2, 1), opts);
    Rng rng(21);
    p.init(rng);
    nn::Adam<float> adam(p.network().num_params(), nn::AdamConfig{1e-3});
    Matrix<float> target(2, 1);
    target << 0.4f, -0.3f;
    for (int i = 0; i < 1500; ++i) {
        const auto states = rng.normal_matrix<float>(2, 128);
        const Matrix<float> actions = target.replicate(1, 128);
        const auto g = bc_loss(p, states, actions, rng);
        adam.step(p.network().params(), g.grad);
    }
    const auto samples = sample_actions(p, rng.normal_matrix<float>(2, 256), rng);
    const Eigen::Vector2f mean = samples.rowwise().mean();
    CHECK(std::abs(mean(0) - 0.4f) < 0.05f);
    CHECK(std::abs(mean(1) + 0.3f) < 0.05f);
}
