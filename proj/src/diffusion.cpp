#include "paodp/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "paodp/envs.hpp"

namespace paodp::diffusion {

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas)
{
    if (betas.empty())
        throw ConfigError("noise schedule needs at least one step");
    for (std::size_t i = 0; i < betas.size(); ++i) {
        if (!(betas[i] > 0.0 && betas[i] < 1.0))
            throw ConfigError("noise schedule betas must lie in (0, 1)");
        if (i > 0 && betas[i] < betas[i - 1])
            throw ConfigError("noise schedule betas must be non-decreasing");
    }
    NoiseSchedule s;
    s.betas_ = std::move(betas);
    double prod = 1.0;
    for (double b : s.betas_) {
        prod *= 1.0 - b;
        s.alpha_bars_.push_back(prod);
    }
    if (!(s.alpha_bars_.back() < 0.01))
        throw ConfigError(
            "noise schedule leaves too much signal: alpha_bar^K = " + std::to_string(s.alpha_bars_.back()) +
            " (must be < 0.01)");
    return s;
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end)
{
    if (steps < 1)
        throw ConfigError("noise schedule needs at least one step");
    std::vector<double> betas(static_cast<std::size_t>(steps));
    for (int k = 0; k < steps; ++k)
        betas[static_cast<std::size_t>(k)] =
            steps == 1 ? beta_end : beta_start + (beta_end - beta_start) * k / (steps - 1);
    return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::respaced_linear(int steps, double beta_start, double beta_end, int reference_steps)
{
    if (steps < 1 || reference_steps < steps)
        throw ConfigError("respaced schedule needs 1 <= K <= reference steps");
    // Cumulative log alpha_bar of the reference chain, linearly interpolated
    // inside each reference step so any K works.
    std::vector<double> log_alpha(static_cast<std::size_t>(reference_steps));
    std::vector<double> cumulative(static_cast<std::size_t>(reference_steps) + 1, 0.0);
    for (int j = 0; j < reference_steps; ++j) {
        const double b = reference_steps == 1
            ? beta_end
            : beta_start + (beta_end - beta_start) * j / (reference_steps - 1);
        log_alpha[static_cast<std::size_t>(j)] = std::log1p(-b);
        cumulative[static_cast<std::size_t>(j) + 1] = cumulative[static_cast<std::size_t>(j)] + log_alpha[static_cast<std::size_t>(j)];
    }
    auto log_alpha_bar = [&](double t) {
        const int j = std::min(static_cast<int>(std::floor(t)), reference_steps - 1);
        return cumulative[static_cast<std::size_t>(j)] + (t - j) * log_alpha[static_cast<std::size_t>(j)];
    };
    std::vector<double> betas;
    const double stride = static_cast<double>(reference_steps) / steps;
    for (int k = 1; k <= steps; ++k)
        betas.push_back(-std::expm1(log_alpha_bar(k * stride) - log_alpha_bar((k - 1) * stride)));
    return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::geometric(int steps, double beta_start, double alpha_bar_end)
{
    if (steps < 1)
        throw ConfigError("noise schedule needs at least one step");
    if (!(beta_start > 0.0 && alpha_bar_end > 0.0 && alpha_bar_end < 1.0 - beta_start))
        throw ConfigError("geometric schedule needs 0 < beta_start < 1 - alpha_bar_end");
    if (steps == 1)
        return from_betas({1.0 - alpha_bar_end});
    auto betas_for = [&](double log_ratio) {
        std::vector<double> betas;
        for (int k = 0; k < steps; ++k)
            betas.push_back(beta_start * std::exp(log_ratio * k));
        return betas;
    };
    auto log_alpha_bar = [&](double log_ratio) {
        double acc = 0.0;
        for (double b : betas_for(log_ratio))
            acc += std::log1p(-b);
        return acc;
    };
    // log alpha_bar^K falls monotonically in the ratio; beta^K must stay below 1.
    const double target = std::log(alpha_bar_end);
    double lo = 0.0;
    double hi = -std::log(beta_start) / (steps - 1) * (1.0 - 1e-12);
    if (log_alpha_bar(lo) <= target)
        throw ConfigError("geometric schedule: beta_start alone reaches alpha_bar_end");
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (log_alpha_bar(mid) > target ? lo : hi) = mid;
    }
    return from_betas(betas_for(hi));
}

template <typename Scalar>
NoiseDraw<Scalar> draw_noise(int batch, int action_dim, int steps, Rng& rng)
{
    NoiseDraw<Scalar> draw;
    draw.k.resize(static_cast<std::size_t>(batch));
    for (auto& k : draw.k)
        k = rng.uniform_int(1, steps);
    draw.eps = rng.normal_matrix<Scalar>(action_dim, batch);
    return draw;
}

template <typename Scalar>
Matrix<Scalar> noise_forward(
    const NoiseSchedule& schedule, const Matrix<Scalar>& a0, const std::vector<int>& k, const Matrix<Scalar>& eps)
{
    if (eps.rows() != a0.rows() || eps.cols() != a0.cols() || static_cast<Eigen::Index>(k.size()) != a0.cols())
        throw std::invalid_argument("noise_forward shapes disagree");
    Matrix<Scalar> out(a0.rows(), a0.cols());
    for (Eigen::Index j = 0; j < a0.cols(); ++j) {
        const int step = k[static_cast<std::size_t>(j)];
        if (step < 1 || step > schedule.steps())
            throw std::out_of_range("diffusion step " + std::to_string(step) + " outside 1.." + std::to_string(schedule.steps()));
        const double ab = schedule.alpha_bar(step);
        out.col(j) = static_cast<Scalar>(std::sqrt(ab)) * a0.col(j) + static_cast<Scalar>(std::sqrt(1.0 - ab)) * eps.col(j);
    }
    return out;
}

template <typename Scalar>
DiffusionPolicy<Scalar>::DiffusionPolicy(
    int state_dim, int action_dim, NoiseSchedule schedule, Eigen::VectorXd action_low,
    Eigen::VectorXd action_high, PolicyOptions options)
    : state_dim_(state_dim),
      action_dim_(action_dim),
      schedule_(std::move(schedule)),
      low_(std::move(action_low)),
      high_(std::move(action_high)),
      options_(std::move(options))
{
    if (state_dim_ <= 0 || action_dim_ <= 0)
        throw std::invalid_argument("policy dimensions must be positive");
    if (low_.size() != action_dim_ || high_.size() != action_dim_)
        throw std::invalid_argument("action bounds have wrong dimension");
    std::vector<int> widths{action_dim_ + options_.time_dim + state_dim_};
    widths.insert(widths.end(), options_.hidden.begin(), options_.hidden.end());
    widths.push_back(action_dim_);
    net_ = nn::Mlp<Scalar>(widths);
    time_table_.resize(options_.time_dim, schedule_.steps());
    for (int k = 1; k <= schedule_.steps(); ++k)
        time_table_.col(k - 1) = nn::embed_time(k, options_.time_dim).cast<Scalar>();
}

template <typename Scalar>
Matrix<Scalar> DiffusionPolicy<Scalar>::network_input(
    const Matrix<Scalar>& noisy_actions, const std::vector<int>& k, const Matrix<Scalar>& states) const
{
    const Eigen::Index batch = noisy_actions.cols();
    if (noisy_actions.rows() != action_dim_ || states.rows() != state_dim_ || states.cols() != batch ||
        static_cast<Eigen::Index>(k.size()) != batch)
        throw std::invalid_argument("policy input shapes disagree");
    Matrix<Scalar> input(action_dim_ + options_.time_dim + state_dim_, batch);
    input.topRows(action_dim_) = noisy_actions;
    for (Eigen::Index j = 0; j < batch; ++j) {
        const int step = k[static_cast<std::size_t>(j)];
        if (step < 1 || step > schedule_.steps())
            throw std::out_of_range("diffusion step outside schedule");
        input.block(action_dim_, j, options_.time_dim, 1) = time_table_.col(step - 1);
    }
    input.bottomRows(state_dim_) = states;
    return input;
}

template <typename Scalar>
Matrix<Scalar> DiffusionPolicy<Scalar>::predict_noise(
    const Matrix<Scalar>& noisy_actions, const std::vector<int>& k, const Matrix<Scalar>& states) const
{
    return net_.forward(network_input(noisy_actions, k, states));
}

template <typename Scalar>
DenoisingTerms<Scalar> denoising_terms(
    const DiffusionPolicy<Scalar>& policy, const Matrix<Scalar>& states, const Matrix<Scalar>& actions,
    const NoiseDraw<Scalar>& draw)
{
    DenoisingTerms<Scalar> terms;
    const Matrix<Scalar> noisy = noise_forward(policy.schedule(), actions, draw.k, draw.eps);
    const Matrix<Scalar> predicted = policy.network().forward(policy.network_input(noisy, draw.k, states), terms.tape);
    terms.residual = draw.eps - predicted;
    terms.error = terms.residual.colwise().squaredNorm().transpose();
    return terms;
}

template <typename Scalar>
Vector<Scalar> denoising_backward(
    const DiffusionPolicy<Scalar>& policy, const DenoisingTerms<Scalar>& terms, const Vector<Scalar>& weights)
{
    // d/d eps_hat ||eps - eps_hat||^2 = -2 (eps - eps_hat)
    Matrix<Scalar> grad_out = Scalar(-2) * terms.residual;
    grad_out.array().rowwise() *= weights.transpose().array();
    return policy.network().backward(terms.tape, grad_out);
}

template <typename Scalar>
LossGrad<Scalar> bc_loss(
    const DiffusionPolicy<Scalar>& policy, const Matrix<Scalar>& states, const Matrix<Scalar>& actions,
    const NoiseDraw<Scalar>& draw)
{
    if (actions.cols() == 0)
        throw std::invalid_argument("bc_loss needs a nonempty batch");
    const auto terms = denoising_terms(policy, states, actions, draw);
    const auto batch = static_cast<Scalar>(actions.cols());
    LossGrad<Scalar> out;
    out.loss = terms.error.sum() / batch;
    out.grad = denoising_backward(policy, terms, Vector<Scalar>(Vector<Scalar>::Constant(actions.cols(), Scalar(1) / batch)));
    return out;
}

template <typename Scalar>
LossGrad<Scalar> bc_loss(
    const DiffusionPolicy<Scalar>& policy, const Matrix<Scalar>& states, const Matrix<Scalar>& actions, Rng& rng)
{
    const auto draw = draw_noise<Scalar>(static_cast<int>(actions.cols()), policy.action_dim(), policy.schedule().steps(), rng);
    return bc_loss(policy, states, actions, draw);
}

template <typename Scalar>
Matrix<Scalar> denoise(
    const DiffusionPolicy<Scalar>& policy, const Matrix<Scalar>& states, Matrix<Scalar> a, Rng& rng, bool stochastic,
    bool clip)
{
    const auto& schedule = policy.schedule();
    const Eigen::Index batch = states.cols();
    if (a.rows() != policy.action_dim() || a.cols() != batch)
        throw std::invalid_argument("initial noise shape disagrees with the state batch");
    if (states.rows() != policy.state_dim())
        throw std::invalid_argument("state batch has the wrong height");

    // The first layer splits as W_a a + W_t embed(k) + W_s s + b; the state
    // part is fixed along the chain and the time part along the batch.
    const auto& net = policy.network();
    const auto w0 = net.weight(0);
    const int d_a = policy.action_dim();
    const int d_t = policy.options().time_dim;
    const Matrix<Scalar> state_part = w0.rightCols(policy.state_dim()) * states;
    Matrix<Scalar> pre(w0.rows(), batch);
    for (int k = schedule.steps(); k >= 1; --k) {
        const Vector<Scalar> time_part = w0.middleCols(d_a, d_t) * policy.time_embedding(k) + net.bias(0);
        pre.noalias() = w0.leftCols(d_a) * a;
        pre += state_part;
        pre.colwise() += time_part;
        const Matrix<Scalar> eps_hat = net.forward_from_first(pre);
        const auto inv_sqrt_alpha = static_cast<Scalar>(1.0 / std::sqrt(schedule.alpha(k)));
        const auto eps_coef = static_cast<Scalar>(schedule.beta(k) / std::sqrt(1.0 - schedule.alpha_bar(k)));
        a = inv_sqrt_alpha * (a - eps_coef * eps_hat);
        if (k > 1 && stochastic)
            a += static_cast<Scalar>(std::sqrt(schedule.beta(k))) * rng.normal_matrix<Scalar>(a.rows(), a.cols());
    }
    if (clip) {
        const auto low = policy.action_low().template cast<Scalar>();
        const auto high = policy.action_high().template cast<Scalar>();
        for (Eigen::Index j = 0; j < batch; ++j)
            a.col(j) = a.col(j).cwiseMax(low).cwiseMin(high);
    }
    return a;
}

template <typename Scalar>
Matrix<Scalar> sample_actions(const DiffusionPolicy<Scalar>& policy, const Matrix<Scalar>& states, Rng& rng)
{
    Matrix<Scalar> initial = rng.normal_matrix<Scalar>(policy.action_dim(), states.cols());
    return denoise(policy, states, std::move(initial), rng, true, true);
}

template <typename Scalar>
Vector<Scalar> elbo_logprob(
    const DiffusionPolicy<Scalar>& policy, const Matrix<Scalar>& states, const Matrix<Scalar>& actions,
    const NoiseDraw<Scalar>& draw)
{
    const Matrix<Scalar> noisy = noise_forward(policy.schedule(), actions, draw.k, draw.eps);
    const Matrix<Scalar> predicted = policy.predict_noise(noisy, draw.k, states);
    return -(draw.eps - predicted).colwise().squaredNorm().transpose();
}

#define PAODP_INSTANTIATE(S)                                                                                      \
    template NoiseDraw<S> draw_noise<S>(int, int, int, Rng&);                                                     \
    template Matrix<S> noise_forward<S>(const NoiseSchedule&, const Matrix<S>&, const std::vector<int>&, const Matrix<S>&); \
    template class DiffusionPolicy<S>;                                                                            \
    template DenoisingTerms<S> denoising_terms<S>(const DiffusionPolicy<S>&, const Matrix<S>&, const Matrix<S>&, const NoiseDraw<S>&); \
    template Vector<S> denoising_backward<S>(const DiffusionPolicy<S>&, const DenoisingTerms<S>&, const Vector<S>&); \
    template LossGrad<S> bc_loss<S>(const DiffusionPolicy<S>&, const Matrix<S>&, const Matrix<S>&, const NoiseDraw<S>&); \
    template LossGrad<S> bc_loss<S>(const DiffusionPolicy<S>&, const Matrix<S>&, const Matrix<S>&, Rng&);         \
    template Matrix<S> denoise<S>(const DiffusionPolicy<S>&, const Matrix<S>&, Matrix<S>, Rng&, bool, bool);      \
    template Matrix<S> sample_actions<S>(const DiffusionPolicy<S>&, const Matrix<S>&, Rng&);                      \
    template Vector<S> elbo_logprob<S>(const DiffusionPolicy<S>&, const Matrix<S>&, const Matrix<S>&, const NoiseDraw<S>&);

PAODP_INSTANTIATE(float)
PAODP_INSTANTIATE(double)

#undef PAODP_INSTANTIATE

}  // namespace paodp::diffusion
