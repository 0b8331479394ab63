#pragma once

#include <vector>

#include "paodp/batch.hpp"
#include "paodp/diffusion.hpp"
#include "paodp/nn.hpp"

namespace paodp::critic {

using diffusion::LossGrad;
using nn::Matrix;
using nn::Vector;

struct CriticOptions {
    double tau = 0.7;    // expectile, in (0.5, 1)
    double gamma = 0.99; // discount, in [0, 1)
    double rho = 0.005;  // Polyak rate, in (0, 1]
    std::vector<int> hidden{64, 64, 64};
};

void validate(const CriticOptions& options);

/// Twin Q networks with Polyak-averaged targets and an expectile value network.
template <typename Scalar>
class Critic {
public:
    Critic() = default;
    Critic(int state_dim, int action_dim, CriticOptions options = {});

    /// Random online parameters; targets start as exact copies.
    void init(Rng& rng);

    const CriticOptions& options() const { return options_; }
    int state_dim() const { return state_dim_; }
    int action_dim() const { return action_dim_; }

    nn::Mlp<Scalar> q1, q2, v;
    nn::Mlp<Scalar> q1_target, q2_target;

    Vector<Scalar> q_value(const nn::Mlp<Scalar>& net, const Matrix<Scalar>& states, const Matrix<Scalar>& actions) const;
    /// min(Q1, Q2) of the online networks.
    Vector<Scalar> q_min(const Matrix<Scalar>& states, const Matrix<Scalar>& actions) const;
    Vector<Scalar> target_min(const Matrix<Scalar>& states, const Matrix<Scalar>& actions) const;
    Vector<Scalar> value(const Matrix<Scalar>& states) const;

    template <typename Other>
    Critic<Other> cast() const
    {
        Critic<Other> out(state_dim_, action_dim_, options_);
        out.q1 = q1.template cast<Other>();
        out.q2 = q2.template cast<Other>();
        out.v = v.template cast<Other>();
        out.q1_target = q1_target.template cast<Other>();
        out.q2_target = q2_target.template cast<Other>();
        return out;
    }

private:
    int state_dim_ = 0;
    int action_dim_ = 0;
    CriticOptions options_;
};

/// |tau - 1{u < 0}| u^2
template <typename Scalar>
Scalar expectile_loss(Scalar u, double tau)
{
    const auto w = static_cast<Scalar>(u < Scalar(0) ? 1.0 - tau : tau);
    return w * u * u;
}

/// Expectile regression of V(s) toward min(Q1_target, Q2_target)(s, a).
/// Gradient is with respect to V only.
template <typename Scalar>
LossGrad<Scalar> v_update(const Critic<Scalar>& critic, const Batch<Scalar>& batch);

template <typename Scalar>
struct QLossGrad {
    Scalar loss{};  // sum of both networks' mean squared TD errors
    Scalar loss_q1{};
    Scalar loss_q2{};
    Vector<Scalar> grad_q1;
    Vector<Scalar> grad_q2;
};

/// Regression of each Q_i toward r + gamma (1 - terminal) V(s').
template <typename Scalar>
QLossGrad<Scalar> q_update(const Critic<Scalar>& critic, const Batch<Scalar>& batch);

/// target <- (1 - rho) target + rho online.
template <typename Scalar>
void polyak_update(Critic<Scalar>& critic);

}  // namespace paodp::critic
