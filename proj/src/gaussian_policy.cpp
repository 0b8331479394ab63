#include "paodp/gaussian_policy.hpp"

namespace paodp::baselines {

namespace {

std::vector<int> widths(int state_dim, int action_dim, const std::vector<int>& hidden)
{
    std::vector<int> w{state_dim};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(2 * action_dim);
    return w;
}

}  // namespace

GaussianPolicy::GaussianPolicy(
    int state_dim, int action_dim, Eigen::VectorXd action_low, Eigen::VectorXd action_high, std::vector<int> hidden)
    : action_dim_(action_dim),
      low_(std::move(action_low)),
      high_(std::move(action_high)),
      net_(widths(state_dim, action_dim, hidden))
{
}

diffusion::LossGrad<float> GaussianPolicy::nll(const nn::Matrix<float>& states, const nn::Matrix<float>& actions) const
{
    nn::Mlp<float>::Tape tape;
    const nn::Matrix<float> out = net_.forward(states, tape);
    const auto mean = out.topRows(action_dim_);
    const nn::Matrix<float> log_std = out.bottomRows(action_dim_);
    const nn::Matrix<float> inv_var = (-2.0f * log_std.array()).exp().matrix();
    const nn::Matrix<float> diff = actions - mean;
    const auto n = static_cast<float>(states.cols());

    diffusion::LossGrad<float> result;
    result.loss = (0.5f * diff.array().square() * inv_var.array() + log_std.array()).sum() / n;
    nn::Matrix<float> grad_out(2 * action_dim_, states.cols());
    grad_out.topRows(action_dim_) = (-diff.array() * inv_var.array() / n).matrix();
    grad_out.bottomRows(action_dim_) = ((1.0f - diff.array().square() * inv_var.array()) / n).matrix();
    result.grad = net_.backward(tape, grad_out);
    return result;
}

nn::Matrix<float> GaussianPolicy::sample(const nn::Matrix<float>& states, Rng& rng) const
{
    const nn::Matrix<float> out = net_.forward(states);
    nn::Matrix<float> a = out.topRows(action_dim_) +
        (out.bottomRows(action_dim_).array().exp() * rng.normal_matrix<float>(action_dim_, states.cols()).array()).matrix();
    const Eigen::VectorXf low = low_.cast<float>(), high = high_.cast<float>();
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        a.col(j) = a.col(j).cwiseMax(low).cwiseMin(high);
    return a;
}

}  // namespace paodp::baselines
