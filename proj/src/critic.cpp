#include "paodp/critic.hpp"

#include "paodp/envs.hpp"

namespace paodp::critic {

void validate(const CriticOptions& options)
{
    if (!(options.tau > 0.5 && options.tau < 1.0))
        throw ConfigError("expectile tau must lie in (0.5, 1)");
    if (!(options.gamma >= 0.0 && options.gamma < 1.0))
        throw ConfigError("discount gamma must lie in [0, 1)");
    if (!(options.rho > 0.0 && options.rho <= 1.0))
        throw ConfigError("Polyak rate rho must lie in (0, 1]");
}

namespace {

std::vector<int> widths(int input, const std::vector<int>& hidden)
{
    std::vector<int> w{input};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(1);
    return w;
}

template <typename Scalar>
Matrix<Scalar> stack(const Matrix<Scalar>& states, const Matrix<Scalar>& actions)
{
    if (states.cols() != actions.cols())
        throw std::invalid_argument("state and action batches differ in size");
    Matrix<Scalar> x(states.rows() + actions.rows(), states.cols());
    x.topRows(states.rows()) = states;
    x.bottomRows(actions.rows()) = actions;
    return x;
}

}  // namespace

template <typename Scalar>
Critic<Scalar>::Critic(int state_dim, int action_dim, CriticOptions options)
    : q1(widths(state_dim + action_dim, options.hidden)),
      q2(widths(state_dim + action_dim, options.hidden)),
      v(widths(state_dim, options.hidden)),
      q1_target(widths(state_dim + action_dim, options.hidden)),
      q2_target(widths(state_dim + action_dim, options.hidden)),
      state_dim_(state_dim),
      action_dim_(action_dim),
      options_(std::move(options))
{
    validate(options_);
}

template <typename Scalar>
void Critic<Scalar>::init(Rng& rng)
{
    q1.init_uniform(rng);
    q2.init_uniform(rng);
    v.init_uniform(rng);
    q1_target = q1;
    q2_target = q2;
}

template <typename Scalar>
Vector<Scalar> Critic<Scalar>::q_value(
    const nn::Mlp<Scalar>& net, const Matrix<Scalar>& states, const Matrix<Scalar>& actions) const
{
    return net.forward(stack(states, actions)).row(0).transpose();
}

template <typename Scalar>
Vector<Scalar> Critic<Scalar>::q_min(const Matrix<Scalar>& states, const Matrix<Scalar>& actions) const
{
    const Matrix<Scalar> x = stack(states, actions);
    return q1.forward(x).row(0).cwiseMin(q2.forward(x).row(0)).transpose();
}

template <typename Scalar>
Vector<Scalar> Critic<Scalar>::target_min(const Matrix<Scalar>& states, const Matrix<Scalar>& actions) const
{
    const Matrix<Scalar> x = stack(states, actions);
    return q1_target.forward(x).row(0).cwiseMin(q2_target.forward(x).row(0)).transpose();
}

template <typename Scalar>
Vector<Scalar> Critic<Scalar>::value(const Matrix<Scalar>& states) const
{
    return v.forward(states).row(0).transpose();
}

template <typename Scalar>
LossGrad<Scalar> v_update(const Critic<Scalar>& critic, const Batch<Scalar>& batch)
{
    const Vector<Scalar> target = critic.target_min(batch.states, batch.actions);
    typename nn::Mlp<Scalar>::Tape tape;
    const Matrix<Scalar> v = critic.v.forward(batch.states, tape);
    const auto n = static_cast<Scalar>(batch.size());
    const double tau = critic.options().tau;

    LossGrad<Scalar> out;
    Matrix<Scalar> grad_out(1, batch.size());
    for (int j = 0; j < batch.size(); ++j) {
        const Scalar u = target(j) - v(0, j);
        const auto w = static_cast<Scalar>(u < Scalar(0) ? 1.0 - tau : tau);
        out.loss += w * u * u;
        grad_out(0, j) = Scalar(-2) * w * u / n;
    }
    out.loss /= n;
    out.grad = critic.v.backward(tape, grad_out);
    return out;
}

template <typename Scalar>
QLossGrad<Scalar> q_update(const Critic<Scalar>& critic, const Batch<Scalar>& batch)
{
    const auto gamma = static_cast<Scalar>(critic.options().gamma);
    const Vector<Scalar> next_v = critic.value(batch.next_states);
    const Vector<Scalar> target =
        batch.rewards + gamma * (Vector<Scalar>::Ones(batch.size()) - batch.terminals).cwiseProduct(next_v);
    const Matrix<Scalar> x = stack(batch.states, batch.actions);
    const auto n = static_cast<Scalar>(batch.size());

    QLossGrad<Scalar> out;
    auto regress = [&](const nn::Mlp<Scalar>& net, Scalar& loss, Vector<Scalar>& grad) {
        typename nn::Mlp<Scalar>::Tape tape;
        const Matrix<Scalar> q = net.forward(x, tape);
        const Matrix<Scalar> diff = q - target.transpose();
        loss = diff.squaredNorm() / n;
        grad = net.backward(tape, Scalar(2) * diff / n);
    };
    regress(critic.q1, out.loss_q1, out.grad_q1);
    regress(critic.q2, out.loss_q2, out.grad_q2);
    out.loss = out.loss_q1 + out.loss_q2;
    return out;
}

template <typename Scalar>
void polyak_update(Critic<Scalar>& critic)
{
    const auto rho = static_cast<Scalar>(critic.options().rho);
    critic.q1_target.params() = (Scalar(1) - rho) * critic.q1_target.params() + rho * critic.q1.params();
    critic.q2_target.params() = (Scalar(1) - rho) * critic.q2_target.params() + rho * critic.q2.params();
}

#define PAODP_INSTANTIATE(S)                                                       \
    template class Critic<S>;                                                      \
    template LossGrad<S> v_update<S>(const Critic<S>&, const Batch<S>&);          \
    template QLossGrad<S> q_update<S>(const Critic<S>&, const Batch<S>&);         \
    template void polyak_update<S>(Critic<S>&);

PAODP_INSTANTIATE(float)
PAODP_INSTANTIATE(double)

#undef PAODP_INSTANTIATE

}  // namespace paodp::critic
