#include "paodp/prefgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "paodp/envs.hpp"

namespace paodp::prefgen {

Strategy parse_strategy(const std::string& name)
{
    if (name == "importance")
        return Strategy::importance;
    if (name == "max")
        return Strategy::max;
    if (name == "min")
        return Strategy::min;
    if (name == "mean")
        return Strategy::mean;
    throw ConfigError("unknown strategy '" + name + "' (valid: importance, max, min, mean)");
}

std::string to_string(Strategy s)
{
    switch (s) {
    case Strategy::importance: return "importance";
    case Strategy::max: return "max";
    case Strategy::min: return "min";
    case Strategy::mean: return "mean";
    }
    return "?";
}

void SamplingStrategy::validate() const
{
    if (n < 1)
        throw ConfigError("n_actions must be >= 1");
    if (!(eta > 0.0) || !std::isfinite(eta))
        throw ConfigError("eta must be positive and finite");
}

int label(double q_data, double q_gen)
{
    if (std::isnan(q_data) || std::isnan(q_gen))
        throw std::domain_error("label: NaN Q-value");
    return q_data > q_gen ? 1 : -1;
}

std::vector<double> softmax_probabilities(const std::vector<double>& q, double eta)
{
    if (q.empty())
        throw std::invalid_argument("softmax_probabilities: empty input");
    std::vector<double> z(q.size());
    std::transform(q.begin(), q.end(), z.begin(), [eta](double v) { return eta * v; });
    const double top = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) {
        v = std::exp(v - top);
        sum += v;
    }
    for (auto& v : z)
        v /= sum;
    return z;
}

int select_index(const std::vector<double>& q, const SamplingStrategy& strategy, Rng& rng)
{
    if (q.empty())
        throw std::invalid_argument("select_index: no candidates");
    const int n = static_cast<int>(q.size());
    switch (strategy.kind) {
    case Strategy::max:
        return static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
    case Strategy::min:
        return static_cast<int>(std::min_element(q.begin(), q.end()) - q.begin());
    case Strategy::mean: {
        std::vector<int> order(q.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&q](int a, int b) { return q[a] < q[b]; });
        return order[static_cast<std::size_t>((n - 1) / 2)];
    }
    case Strategy::importance: {
        const auto p = softmax_probabilities(q, strategy.eta);
        const double u = rng.uniform();
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            acc += p[static_cast<std::size_t>(i)];
            if (u < acc)
                return i;
        }
        // Rounding left the cumulative sum just under 1.
        for (int i = n - 1; i >= 0; --i)
            if (p[static_cast<std::size_t>(i)] > 0.0)
                return i;
        return n - 1;
    }
    }
    return 0;
}

Eigen::VectorXd select_candidate(
    const Eigen::MatrixXd& candidates, const std::vector<double>& q, const SamplingStrategy& strategy, Rng& rng)
{
    if (candidates.cols() == 0 || static_cast<std::size_t>(candidates.cols()) != q.size())
        throw std::invalid_argument("select_candidate: candidate count must match q-values and be nonzero");
    return candidates.col(select_index(q, strategy, rng));
}

void label_pairs(const critic::Critic<float>& critic, PreferenceBatch<float>& batch)
{
    const Eigen::Index b = batch.states.cols();
    Matrix<float> states(batch.states.rows(), 2 * b);
    Matrix<float> actions(batch.a_data.rows(), 2 * b);
    states << batch.states, batch.states;
    actions << batch.a_data, batch.a_gen;
    const Vector<float> q = critic.q_min(states, actions);
    batch.q_data = q.head(b);
    batch.q_gen = q.tail(b);
    batch.gamma.resize(b);
    for (Eigen::Index j = 0; j < b; ++j)
        batch.gamma(j) = static_cast<float>(label(batch.q_data(j), batch.q_gen(j)));
}

PreferenceBatch<float> generate(
    const diffusion::DiffusionPolicy<float>& behavior, const critic::Critic<float>& critic,
    const Matrix<float>& states, const Matrix<float>& a_data, const SamplingStrategy& strategy, Rng& rng)
{
    strategy.validate();
    const Eigen::Index b = states.cols();
    const int n = strategy.n;

    // Column j * n + i holds candidate i of state j.
    Matrix<float> tiled(states.rows(), b * n);
    for (Eigen::Index j = 0; j < b; ++j)
        tiled.middleCols(j * n, n) = states.col(j).replicate(1, n);
    const Matrix<float> candidates = diffusion::sample_actions(behavior, tiled, rng);
    const Vector<float> q = critic.q_min(tiled, candidates);

    PreferenceBatch<float> batch;
    batch.states = states;
    batch.a_data = a_data;
    batch.a_gen.resize(a_data.rows(), b);
    std::vector<double> qs(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < b; ++j) {
        for (int i = 0; i < n; ++i)
            qs[static_cast<std::size_t>(i)] = q(j * n + i);
        batch.a_gen.col(j) = candidates.col(j * n + select_index(qs, strategy, rng));
    }
    label_pairs(critic, batch);
    return batch;
}

void corrupt_labels(PreferenceBatch<float>& batch, double prob, Rng& rng)
{
    if (prob <= 0.0)
        return;
    for (Eigen::Index j = 0; j < batch.gamma.size(); ++j)
        if (rng.uniform() < prob)
            batch.gamma(j) = -batch.gamma(j);
}

void append_jsonl(const PreferenceBatch<float>& batch, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::app);
    if (!out)
        throw std::runtime_error("cannot open " + path.string());
    auto col = [](const Matrix<float>& m, Eigen::Index j) {
        return std::vector<float>(m.col(j).data(), m.col(j).data() + m.rows());
    };
    for (Eigen::Index j = 0; j < batch.states.cols(); ++j) {
        nlohmann::json row{
            {"state", col(batch.states, j)}, {"a_data", col(batch.a_data, j)}, {"a_gen", col(batch.a_gen, j)},
            {"q_data", batch.q_data(j)},     {"q_gen", batch.q_gen(j)},        {"gamma", static_cast<int>(batch.gamma(j))}};
        out << row.dump() << '\n';
    }
}

}  // namespace paodp::prefgen
