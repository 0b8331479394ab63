#pragma once

#include <vector>

#include <Eigen/Core>

#include "paodp/errors.hpp"
#include "paodp/nn.hpp"
#include "paodp/rng.hpp"

namespace paodp::diffusion {

using nn::Matrix;
using nn::Vector;

/// beta^k for k = 1..K with alpha^k = 1 - beta^k and alpha_bar^k = prod_{i<=k} alpha^i.
/// Invariants: 0 < beta^1 <= ... <= beta^K < 1 and alpha_bar^K < 0.01.
class NoiseSchedule {
public:
    static NoiseSchedule from_betas(std::vector<double> betas);
    static NoiseSchedule linear(int steps, double beta_start, double beta_end);
    /// The `reference_steps` linear schedule from beta_start to beta_end,
    /// respaced to `steps` steps: alpha_bar of the respaced chain equals the
    /// reference alpha_bar at every (reference_steps / steps)-th step.
    static NoiseSchedule respaced_linear(
        int steps, double beta_start = 1e-4, double beta_end = 2e-2, int reference_steps = 1000);
    /// beta^k = beta_start * r^(k-1) with r chosen so that alpha_bar^K equals
    /// `alpha_bar_end`. Keeps the last denoising steps nearly noiseless.
    static NoiseSchedule geometric(int steps, double beta_start = 1e-3, double alpha_bar_end = 5e-3);

    int steps() const { return static_cast<int>(betas_.size()); }
    double beta(int k) const { return betas_.at(static_cast<std::size_t>(k - 1)); }
    double alpha(int k) const { return 1.0 - beta(k); }
    double alpha_bar(int k) const { return alpha_bars_.at(static_cast<std::size_t>(k - 1)); }
    const std::vector<double>& betas() const { return betas_; }

private:
    std::vector<double> betas_;
    std::vector<double> alpha_bars_;
};

/// Per-sample diffusion step and Gaussian noise, drawn once and shared
/// wherever two computations must see identical noise.
template <typename Scalar>
struct NoiseDraw {
    std::vector<int> k;
    Matrix<Scalar> eps;  // d_a x B
};

template <typename Scalar>
NoiseDraw<Scalar> draw_noise(int batch, int action_dim, int steps, Rng& rng);

/// a^k = sqrt(alpha_bar^k) a0 + sqrt(1 - alpha_bar^k) eps, column by column.
template <typename Scalar>
Matrix<Scalar> noise_forward(
    const NoiseSchedule& schedule, const Matrix<Scalar>& a0, const std::vector<int>& k, const Matrix<Scalar>& eps);

struct PolicyOptions {
    int time_dim = 16;
    std::vector<int> hidden{64, 64, 64};
};

/// Conditional noise-prediction model eps(a^k, k; s) over the input
/// [a^k ; embed(k) ; s]. Serves both as the behavior policy and the
/// surrogate optimal policy.
template <typename Scalar>
class DiffusionPolicy {
public:
    DiffusionPolicy() = default;
    DiffusionPolicy(
        int state_dim, int action_dim, NoiseSchedule schedule, Eigen::VectorXd action_low,
        Eigen::VectorXd action_high, PolicyOptions options = {});

    void init(Rng& rng) { net_.init_uniform(rng); }

    nn::Mlp<Scalar>& network() { return net_; }
    const nn::Mlp<Scalar>& network() const { return net_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    const PolicyOptions& options() const { return options_; }
    int state_dim() const { return state_dim_; }
    int action_dim() const { return action_dim_; }
    const Eigen::VectorXd& action_low() const { return low_; }
    const Eigen::VectorXd& action_high() const { return high_; }

    /// embed(k), the time features fed to the network.
    auto time_embedding(int k) const { return time_table_.col(k - 1); }

    Matrix<Scalar> network_input(
        const Matrix<Scalar>& noisy_actions, const std::vector<int>& k, const Matrix<Scalar>& states) const;
    Matrix<Scalar> predict_noise(
        const Matrix<Scalar>& noisy_actions, const std::vector<int>& k, const Matrix<Scalar>& states) const;

    template <typename Other>
    DiffusionPolicy<Other> cast() const
    {
        DiffusionPolicy<Other> out(state_dim_, action_dim_, schedule_, low_, high_, options_);
        out.network().params() = net_.params().template cast<Other>();
        return out;
    }

private:
    int state_dim_ = 0;
    int action_dim_ = 0;
    NoiseSchedule schedule_;
    Eigen::VectorXd low_;
    Eigen::VectorXd high_;
    PolicyOptions options_;
    nn::Mlp<Scalar> net_;
    Matrix<Scalar> time_table_;  // time_dim x K, column k-1 holds embed(k)
};

template <typename Scalar>
struct LossGrad {
    Scalar loss{};
    Vector<Scalar> grad;
};

/// Per-sample ||eps - eps_theta(noise_forward(a0, k, eps), k; s)||^2 with
/// optional recorded tape and residuals for backpropagation.
template <typename Scalar>
struct DenoisingTerms {
    Vector<Scalar> error;        // B
    Matrix<Scalar> residual;     // eps - eps_hat, d_a x B
    typename nn::Mlp<Scalar>::Tape tape;
};

template <typename Scalar>
DenoisingTerms<Scalar> denoising_terms(
    const DiffusionPolicy<Scalar>& policy, const Matrix<Scalar>& states, const Matrix<Scalar>& actions,
    const NoiseDraw<Scalar>& draw);

/// Parameter gradient of sum_j weight_j * error_j.
template <typename Scalar>
Vector<Scalar> denoising_backward(
    const DiffusionPolicy<Scalar>& policy, const DenoisingTerms<Scalar>& terms, const Vector<Scalar>& weights);

/// Noise-prediction behavior-cloning loss, mean over the batch; k ~ U{1..K}
/// and eps ~ N(0, I) per sample.
template <typename Scalar>
LossGrad<Scalar> bc_loss(
    const DiffusionPolicy<Scalar>& policy, const Matrix<Scalar>& states, const Matrix<Scalar>& actions,
    const NoiseDraw<Scalar>& draw);
template <typename Scalar>
LossGrad<Scalar> bc_loss(
    const DiffusionPolicy<Scalar>& policy, const Matrix<Scalar>& states, const Matrix<Scalar>& actions, Rng& rng);

/// Reverse chain from a^K: a^{k-1} = mu(a^k, k; s) + sqrt(beta^k) z, z = 0
/// at k = 1, with mu = (a^k - beta^k / sqrt(1 - alpha_bar^k) eps_theta) / sqrt(alpha^k).
/// `stochastic = false` pins every z to zero; `clip` clamps a^0 to the action box.
template <typename Scalar>
Matrix<Scalar> denoise(
    const DiffusionPolicy<Scalar>& policy, const Matrix<Scalar>& states, Matrix<Scalar> initial, Rng& rng,
    bool stochastic = true, bool clip = true);

/// One action per column of `states`, starting from a^K ~ N(0, I).
template <typename Scalar>
Matrix<Scalar> sample_actions(const DiffusionPolicy<Scalar>& policy, const Matrix<Scalar>& states, Rng& rng);

/// Surrogate log-likelihood -||eps - eps_theta(a^k, k; s)||^2 per sample at
/// caller-supplied (k, eps). Differences across policies at shared draws
/// stand in for log-density ratios.
template <typename Scalar>
Vector<Scalar> elbo_logprob(
    const DiffusionPolicy<Scalar>& policy, const Matrix<Scalar>& states, const Matrix<Scalar>& actions,
    const NoiseDraw<Scalar>& draw);

}  // namespace paodp::diffusion
