#pragma once

#include <vector>

#include "paodp/diffusion.hpp"
#include "paodp/nn.hpp"

namespace paodp::baselines {

/// State-conditioned diagonal Gaussian policy, the unimodal comparator for
/// the diffusion policy. The network outputs [mean ; log_std].
class GaussianPolicy {
public:
    GaussianPolicy(int state_dim, int action_dim, Eigen::VectorXd action_low, Eigen::VectorXd action_high,
                   std::vector<int> hidden = {64, 64, 64});

    void init(Rng& rng) { net_.init_uniform(rng); }
    nn::Mlp<float>& network() { return net_; }
    const nn::Mlp<float>& network() const { return net_; }

    /// Mean negative log-likelihood (up to the 0.5 log 2 pi constant).
    diffusion::LossGrad<float> nll(const nn::Matrix<float>& states, const nn::Matrix<float>& actions) const;
    nn::Matrix<float> sample(const nn::Matrix<float>& states, Rng& rng) const;

private:
    int action_dim_;
    Eigen::VectorXd low_;
    Eigen::VectorXd high_;
    nn::Mlp<float> net_;
};

}  // namespace paodp::baselines
