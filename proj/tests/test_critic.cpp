#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "paodp/batch.hpp"
#include "paodp/critic.hpp"
#include "paodp/envs.hpp"
#include "test_support.hpp"

using namespace paodp;
using namespace paodp::critic;

namespace {

Critic<double> small_critic(std::uint64_t seed, CriticOptions opts = {})
{
    opts.hidden = {8, 8};
    Critic<double> c(2, 2, opts);
    Rng rng(seed);
    c.init(rng);
    // Distinct targets so the min is not trivially the online network.
    c.q1_target.params() += rng.normal_matrix<double>(c.q1.num_params(), 1) * 0.1;
    c.q2_target.params() += rng.normal_matrix<double>(c.q2.num_params(), 1) * 0.1;
    return c;
}

Batch<double> random_batch(int n, std::uint64_t seed)
{
    Rng rng(seed);
    Batch<double> b;
    b.states = rng.normal_matrix<double>(2, n);
    b.actions = rng.normal_matrix<double>(2, n);
    b.rewards = rng.normal_matrix<double>(n, 1);
    b.next_states = rng.normal_matrix<double>(2, n);
    b.terminals = nn::Vector<double>::Zero(n);
    for (int j = 0; j < n; j += 3)
        b.terminals(j) = 1.0;
    return b;
}

void set_constant(nn::Mlp<double>& net, double value)
{
    net.params().setZero();
    net.bias(net.num_layers() - 1).setConstant(value);
}

std::vector<double> ranks(const std::vector<double>& x)
{
    std::vector<int> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]])
            ++j;
        for (std::size_t t = i; t <= j; ++t)
            r[idx[t]] = 0.5 * (i + j);
        i = j + 1;
    }
    return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b)
{
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("expectile loss weights")
{
    CHECK(expectile_loss(2.0, 0.5) == doctest::Approx(0.5 * 4.0));
    CHECK(expectile_loss(-2.0, 0.5) == doctest::Approx(0.5 * 4.0));
    CHECK(expectile_loss(1.5, 0.7) == doctest::Approx(0.7 * 2.25));
    CHECK(expectile_loss(-1.5, 0.7) == doctest::Approx(0.3 * 2.25).epsilon(1e-12));
    CHECK_THROWS_AS(Critic<double>(2, 2, CriticOptions{0.5}), ConfigError);
    CHECK_THROWS_AS(Critic<double>(2, 2, CriticOptions{0.7, 1.0}), ConfigError);
    CHECK_THROWS_AS(Critic<double>(2, 2, CriticOptions{0.7, 0.99, 0.0}), ConfigError);
}

TEST_CASE("critic gradients match finite differences")
{
    auto c = small_critic(5);
    CHECK(c.q1.num_params() <= 500);
    const auto batch = random_batch(12, 6);

    const auto v = v_update(c, batch);
    CHECK(v.grad.size() == c.v.num_params());
    CHECK(testing::gradient_error(c.v.params(), v.grad, [&] { return v_update(c, batch).loss; }) < testing::kFdTolerance);

    const auto q = q_update(c, batch);
    CHECK(q.grad_q1.size() == c.q1.num_params());
    CHECK(testing::gradient_error(c.q1.params(), q.grad_q1, [&] { return q_update(c, batch).loss; }) < testing::kFdTolerance);
    CHECK(testing::gradient_error(c.q2.params(), q.grad_q2, [&] { return q_update(c, batch).loss; }) < testing::kFdTolerance);
}

TEST_CASE("TD targets: terminal masking and zero discount")
{
    auto c = small_critic(2);
    set_constant(c.q1, 0.0);
    set_constant(c.q2, 0.0);
    set_constant(c.v, 7.0);
    auto batch = random_batch(9, 3);
    batch.terminals.setOnes();
    const double mean_r2 = batch.rewards.squaredNorm() / 9.0;
    CHECK(q_update(c, batch).loss_q1 == doctest::Approx(mean_r2).epsilon(1e-12));

    CriticOptions opts;
    opts.gamma = 0.0;
    auto c0 = small_critic(2, opts);
    set_constant(c0.q1, 0.0);
    set_constant(c0.q2, 0.0);
    set_constant(c0.v, 7.0);
    batch.terminals.setZero();
    CHECK(q_update(c0, batch).loss_q2 == doctest::Approx(mean_r2).epsilon(1e-12));

    // Nonterminal with gamma: target r + gamma * 7.
    auto c1 = small_critic(2);
    set_constant(c1.q1, 0.0);
    set_constant(c1.v, 7.0);
    const double expected = (batch.rewards.array() + 0.99 * 7.0).square().mean();
    CHECK(q_update(c1, batch).loss_q1 == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("polyak averaging")
{
    CriticOptions one;
    one.rho = 1.0;
    auto c = small_critic(4, one);
    polyak_update(c);
    CHECK(c.q1_target.params() == c.q1.params());
    CHECK(c.q2_target.params() == c.q2.params());

    auto d = small_critic(4);
    d.q1_target.params().setZero();
    for (int i = 0; i < 1000; ++i)
        polyak_update(d);
    const double bound = std::pow(1.0 - 0.005, 1000);
    for (Eigen::Index i = 0; i < d.q1.num_params(); ++i)
        CHECK(std::abs(d.q1_target.params()(i) - d.q1.params()(i)) <= bound * std::abs(d.q1.params()(i)) * (1 + 1e-9));
}

TEST_CASE("q_min")
{
    auto c = small_critic(8);
    set_constant(c.q1, 1.0);
    set_constant(c.q2, 3.0);
    const nn::Matrix<double> s = nn::Matrix<double>::Random(2, 4), a = nn::Matrix<double>::Random(2, 4);
    CHECK(c.q_min(s, a).isApproxToConstant(1.0));

    auto r = small_critic(9);
    const auto qm = r.q_min(s, a);
    for (int j = 0; j < 4; ++j) {
        Eigen::VectorXd x(4);
        x << s.col(j), a.col(j);
        CHECK(qm(j) == doctest::Approx(std::min(r.q1.forward(x)(0, 0), r.q2.forward(x)(0, 0))).epsilon(1e-12));
    }
    r.q2 = r.q1;
    CHECK(r.q_min(s, a) == r.q_value(r.q1, s, a));
}

TEST_CASE("tabular expectile recovered by V")
{
    // Three one-hot states, one-step episodes, rewards per (state, action).
    const std::vector<std::vector<double>> rewards{{0.0, 1.0, 2.0}, {1.0, 1.0, -1.0}, {0.5, 0.5, 0.5}};
    const int n = 9;
    Batch<float> b;
    b.states = nn::Matrix<float>::Zero(3, n);
    b.actions = nn::Matrix<float>::Zero(1, n);
    b.rewards.resize(n);
    b.next_states = nn::Matrix<float>::Zero(3, n);
    b.terminals = nn::Vector<float>::Ones(n);
    for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 3; ++a) {
            const int j = 3 * s + a;
            b.states(s, j) = 1.0f;
            b.actions(0, j) = static_cast<float>(a - 1);
            b.rewards(j) = static_cast<float>(rewards[s][a]);
        }
    CriticOptions opts;
    opts.hidden = {32, 32};
    opts.rho = 0.05;
    Critic<float> c(3, 1, opts);
    Rng rng(0);
    c.init(rng);
    nn::AdamConfig adam{3e-3};
    nn::Adam<float> oq1(c.q1.num_params(), adam), oq2(c.q2.num_params(), adam), ov(c.v.num_params(), adam);
    for (int i = 0; i < 4000; ++i) {
        ov.step(c.v.params(), v_update(c, b).grad);
        const auto q = q_update(c, b);
        oq1.step(c.q1.params(), q.grad_q1);
        oq2.step(c.q2.params(), q.grad_q2);
        polyak_update(c);
    }
    const auto v = c.value(b.states);
    for (int s = 0; s < 3; ++s)
        CHECK(std::abs(v(3 * s) - envs::expectile(rewards[static_cast<std::size_t>(s)], 0.7)) < 0.05);
}

TEST_CASE("bandit critic ranks actions like the reward surface")
{
    envs::MultimodalBandit bandit;
    const auto ds = normalize_states(envs::generate_dataset(bandit, envs::Quality::random, 20000, 1));
    CriticOptions opts;
    Critic<float> c(2, 2, opts);
    Rng rng(3);
    c.init(rng);
    nn::AdamConfig adam{1e-3};
    nn::Adam<float> oq1(c.q1.num_params(), adam), oq2(c.q2.num_params(), adam);
    for (int i = 0; i < 10000; ++i) {
        const auto batch = sample_batch(ds, 256, rng);
        const auto q = q_update(c, batch);
        oq1.step(c.q1.params(), q.grad_q1);
        oq2.step(c.q2.params(), q.grad_q2);
    }
    nn::Matrix<float> actions(2, 41 * 41);
    std::vector<double> truth;
    for (int i = 0; i < 41; ++i)
        for (int j = 0; j < 41; ++j) {
            actions.col(i * 41 + j) << -1.0f + 0.05f * i, -1.0f + 0.05f * j;
            truth.push_back(bandit.reward(actions.col(i * 41 + j).cast<double>()));
        }
    const auto states = nn::Matrix<float>::Zero(2, 41 * 41).eval();
    const auto q = c.q_min(states, actions);
    const std::vector<double> learned(q.data(), q.data() + q.size());
    // Rank agreement on the reward's support; below 1e-3 the surface is flat
    // at the scale a regression fit resolves.
    std::vector<double> ls, ts;
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (truth[i] >= 1e-3) {
            ls.push_back(learned[i]);
            ts.push_back(truth[i]);
        }
    CHECK(ls.size() > 400);
    CHECK(pearson(ranks(ls), ranks(ts)) >= 0.9);
    CHECK(pearson(learned, truth) >= 0.9);
}
