#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "paodp/envs.hpp"
#include "paodp/prefgen.hpp"
#include "test_support.hpp"

using namespace paodp;
using namespace paodp::prefgen;

namespace {

SamplingStrategy strategy(Strategy kind, int n = 3, double eta = 0.1)
{
    SamplingStrategy s;
    s.kind = kind;
    s.n = n;
    s.eta = eta;
    return s;
}

critic::Critic<float> constant_critic(float value)
{
    critic::CriticOptions opts;
    opts.hidden = {4};
    critic::Critic<float> c(2, 2, opts);
    for (auto* net : {&c.q1, &c.q2, &c.v}) {
        net->params().setZero();
        net->bias(net->num_layers() - 1).setConstant(value);
    }
    c.q1_target = c.q1;
    c.q2_target = c.q2;
    return c;
}

}  // namespace

TEST_CASE("labels follow the strict comparison")
{
    CHECK(label(2.0, 1.0) == 1);
    CHECK(label(1.0, 1.0) == -1);
    CHECK(label(1.0, 2.0) == -1);
    CHECK_THROWS_AS(label(std::nan(""), 1.0), std::domain_error);
    CHECK_THROWS_AS(label(1.0, std::nan("")), std::domain_error);

    // Pairs drawn from a coarse lattice so exact ties are frequent.
    Rng rng(17);
    int ties = 0, agree = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const double a = rng.uniform_int(-5, 5) * 0.25, b = rng.uniform_int(-5, 5) * 0.25;
        ties += a == b;
        const int brute = a > b ? 1 : -1;
        agree += label(a, b) == brute;
    }
    CHECK(ties > 500);
    CHECK(agree == n);
}

TEST_CASE("deterministic strategies")
{
    Rng rng(0);
    const std::vector<double> q{1.0, 5.0, 3.0};
    CHECK(select_index(q, strategy(Strategy::max), rng) == 1);
    CHECK(select_index(q, strategy(Strategy::min), rng) == 0);
    CHECK(select_index(q, strategy(Strategy::mean), rng) == 2);
    // Lower median for even N, ties by lowest index.
    CHECK(select_index({4.0, 1.0, 3.0, 2.0}, strategy(Strategy::mean, 4), rng) == 3);
    CHECK(select_index({2.0, 2.0, 1.0}, strategy(Strategy::max), rng) == 0);
    CHECK(select_index({2.0, 1.0, 1.0}, strategy(Strategy::min), rng) == 1);
    CHECK(select_index({1.0, 1.0, 1.0, 1.0}, strategy(Strategy::mean, 4), rng) == 1);
    CHECK_THROWS_AS(select_index({}, strategy(Strategy::max), rng), std::invalid_argument);

    Eigen::MatrixXd candidates(2, 3);
    candidates << 0.1, 0.2, 0.3, -0.1, -0.2, -0.3;
    CHECK(select_candidate(candidates, q, strategy(Strategy::max), rng) == candidates.col(1));
    CHECK_THROWS_AS(parse_strategy("greedy"), ConfigError);
    CHECK(parse_strategy("mean") == Strategy::mean);
    CHECK(to_string(Strategy::importance) == "importance");
}

TEST_CASE("importance sampling frequencies")
{
    const std::vector<double> q{1.0, 5.0, 3.0};
    const auto p = softmax_probabilities(q, 0.1);
    const double z = std::exp(0.1) + std::exp(0.5) + std::exp(0.3);
    CHECK(p[0] == doctest::Approx(std::exp(0.1) / z).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(std::exp(0.5) / z).epsilon(1e-12));

    Rng rng(3);
    std::array<int, 3> counts{};
    const int draws = 100000;
    for (int i = 0; i < draws; ++i)
        ++counts[static_cast<std::size_t>(select_index(q, strategy(Strategy::importance, 3, 0.1), rng))];
    for (int i = 0; i < 3; ++i)
        CHECK(std::abs(counts[static_cast<std::size_t>(i)] / double(draws) - p[static_cast<std::size_t>(i)]) < 0.01);

    // eta -> 0 flattens to uniform: each count within 3 sigma of n/N.
    const std::vector<double> q5{-3.0, 0.0, 2.0, 7.0, 1.0};
    std::array<int, 5> flat{};
    const int n = 10000;
    for (int i = 0; i < n; ++i)
        ++flat[static_cast<std::size_t>(select_index(q5, strategy(Strategy::importance, 5, 1e-9), rng))];
    const double sigma = std::sqrt(n * 0.2 * 0.8);
    for (int c : flat)
        CHECK(std::abs(c - n * 0.2) < 3 * sigma);
}

TEST_CASE("softmax is stable over large q")
{
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> q(10);
        for (auto& v : q)
            v = rng.uniform(-1e4, 1e4);
        for (double eta : {0.1, 1.0, 10.0}) {
            const auto p = softmax_probabilities(q, eta);
            double sum = 0.0;
            for (double v : p) {
                CHECK(std::isfinite(v));
                sum += v;
            }
            CHECK(sum == doctest::Approx(1.0));
            const int i = select_index(q, strategy(Strategy::importance, 10, eta), rng);
            CHECK((i >= 0 && i < 10));
        }
    }
}

TEST_CASE("generate: single candidate, constant critic, in-bounds, reproducible labels")
{
    const auto policy = testing::tiny_policy(2, 2, 1).cast<float>();
    Rng rng(2);
    const nn::Matrix<float> states = rng.normal_matrix<float>(2, 16);
    const nn::Matrix<float> a_data = rng.normal_matrix<float>(2, 16).cwiseMax(-1.0f).cwiseMin(1.0f);

    const auto flat = constant_critic(0.5f);
    for (auto kind : {Strategy::importance, Strategy::max, Strategy::min, Strategy::mean}) {
        Rng r1(9), r2(9);
        const auto batch = generate(policy, flat, states, a_data, strategy(kind, 1), r1);
        CHECK(batch.a_gen == diffusion::sample_actions(policy, states, r2));
        CHECK((batch.gamma.array() == -1.0f).all());
    }

    critic::Critic<float> c(2, 2);
    Rng init(4);
    c.init(init);
    Rng r(11);
    auto batch = generate(policy, c, states, a_data, strategy(Strategy::max, 10), r);
    CHECK(batch.a_gen.maxCoeff() <= 1.0f);
    CHECK(batch.a_gen.minCoeff() >= -1.0f);
    const auto stored = batch.gamma;
    label_pairs(c, batch);
    CHECK(batch.gamma == stored);
    for (int j = 0; j < batch.size(); ++j)
        CHECK(stored(j) == (batch.q_data(j) > batch.q_gen(j) ? 1.0f : -1.0f));

    const auto path = std::filesystem::temp_directory_path() / "paodp_test_pairs.jsonl";
    std::filesystem::remove(path);
    append_jsonl(batch, path);
    std::ifstream in(path);
    int lines = 0;
    for (std::string line; std::getline(in, line); ++lines) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("gamma").get<int>() == static_cast<int>(stored(lines)));
    }
    CHECK(lines == 16);
    std::filesystem::remove(path);
}

TEST_CASE("max selection with the true bandit reward raises the selected reward")
{
    envs::MultimodalBandit bandit;
    const auto policy = testing::tiny_policy(2, 2, 3).cast<float>();
    Rng rng(21);
    double selected = 0.0, all = 0.0;
    const int states = 1000, n = 10;
    const nn::Matrix<float> s = rng.normal_matrix<float>(2, states * n);
    const auto candidates = diffusion::sample_actions(policy, s, rng).cast<double>().eval();
    for (int j = 0; j < states; ++j) {
        std::vector<double> q(n);
        for (int i = 0; i < n; ++i) {
            q[static_cast<std::size_t>(i)] = bandit.reward(candidates.col(j * n + i));
            all += q[static_cast<std::size_t>(i)] / n;
        }
        const auto a = select_candidate(candidates.middleCols(j * n, n), q, strategy(Strategy::max, n), rng);
        const double r = bandit.reward(a);
        CHECK(r == *std::max_element(q.begin(), q.end()));
        selected += r;
    }
    CHECK(selected >= all);
}

TEST_CASE("label corruption")
{
    PreferenceBatch<float> b;
    b.gamma = nn::Vector<float>::Ones(20000);
    Rng rng(8);
    corrupt_labels(b, 0.2, rng);
    const double flipped = (b.gamma.array() < 0).cast<double>().mean();
    CHECK(flipped == doctest::Approx(0.2).epsilon(0.05));
    PreferenceBatch<float> c;
    c.gamma = nn::Vector<float>::Ones(100);
    corrupt_labels(c, 0.0, rng);
    CHECK((c.gamma.array() == 1.0f).all());
}
