#include "paodp/prefopt.hpp"

#include <cmath>
#include <stdexcept>

#include "paodp/envs.hpp"

namespace paodp::prefopt {

void PrefLossConfig::validate() const
{
    if (!(eta > 0.0) || !std::isfinite(eta))
        throw ConfigError("eta must be positive and finite");
    if (!(lambda >= 0.0 && lambda < 0.5))
        throw ConfigError("lambda must lie in [0, 0.5)");
    if (!(xi >= 0.0) || !std::isfinite(xi))
        throw ConfigError("xi must be non-negative and finite");
}

double bt_probability(double delta_hat, double delta_data, double eta)
{
    const double x = eta * delta_hat - eta * delta_data;
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double softplus(double x)
{
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

namespace {

double sigmoid(double x)
{
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

template <typename Scalar>
NoiseDraw<Scalar> doubled(const NoiseDraw<Scalar>& draw)
{
    NoiseDraw<Scalar> out;
    out.k = draw.k;
    out.k.insert(out.k.end(), draw.k.begin(), draw.k.end());
    out.eps.resize(draw.eps.rows(), 2 * draw.eps.cols());
    out.eps << draw.eps, draw.eps;
    return out;
}

}  // namespace

template <typename Scalar>
PrefTerms<Scalar> anti_noise_terms(
    const diffusion::DiffusionPolicy<Scalar>& psi, const diffusion::DiffusionPolicy<Scalar>& behavior,
    const prefgen::PreferenceBatch<Scalar>& batch, const NoiseDraw<Scalar>& draw, double eta, double lambda)
{
    const Eigen::Index b = batch.states.cols();
    if (b == 0)
        throw std::invalid_argument("preference loss needs a nonempty batch");
    if (static_cast<Eigen::Index>(draw.k.size()) != b || draw.eps.cols() != b)
        throw std::invalid_argument("noise draw size disagrees with the preference batch");
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw std::invalid_argument("lambda must lie in [0, 1]");

    // Columns [0, b) hold the dataset actions, [b, 2b) the generated ones.
    Matrix<Scalar> states(batch.states.rows(), 2 * b);
    Matrix<Scalar> actions(batch.a_data.rows(), 2 * b);
    states << batch.states, batch.states;
    actions << batch.a_data, batch.a_gen;
    const auto shared = doubled(draw);

    const auto terms = diffusion::denoising_terms(psi, states, actions, shared);
    const Vector<Scalar> ref = diffusion::elbo_logprob(behavior, states, actions, shared);

    const double keep = 1.0 - lambda;
    PrefTerms<Scalar> out;
    out.z.resize(b);
    out.per_pair.resize(b);
    Vector<Scalar> weights(2 * b);
    double total = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) {
        // log pi_psi = -error and ref holds log pi_b.
        const double delta_data = -static_cast<double>(terms.error(j)) - static_cast<double>(ref(j));
        const double delta_gen = -static_cast<double>(terms.error(b + j)) - static_cast<double>(ref(b + j));
        const double scale = eta * static_cast<double>(batch.gamma(j));
        const double z = scale * (delta_data - delta_gen);
        const double loss = keep * softplus(-z) + lambda * softplus(z);
        out.z(j) = static_cast<Scalar>(z);
        out.per_pair(j) = static_cast<Scalar>(loss);
        total += loss;
        const double g = (keep * -sigmoid(-z) + lambda * sigmoid(z)) / static_cast<double>(b);
        // dz/d error_psi(a) = -scale, dz/d error_psi(a_hat) = +scale
        weights(j) = static_cast<Scalar>(-g * scale);
        weights(b + j) = static_cast<Scalar>(g * scale);
    }
    out.loss.loss = static_cast<Scalar>(total / static_cast<double>(b));
    out.loss.grad = diffusion::denoising_backward(psi, terms, weights);
    return out;
}

template <typename Scalar>
LossGrad<Scalar> l_imp(
    const diffusion::DiffusionPolicy<Scalar>& psi, const diffusion::DiffusionPolicy<Scalar>& behavior,
    const prefgen::PreferenceBatch<Scalar>& batch, const NoiseDraw<Scalar>& draw, double eta)
{
    return anti_noise_terms(psi, behavior, batch, draw, eta, 0.0).loss;
}

template <typename Scalar>
LossGrad<Scalar> l_anti(
    const diffusion::DiffusionPolicy<Scalar>& psi, const diffusion::DiffusionPolicy<Scalar>& behavior,
    const prefgen::PreferenceBatch<Scalar>& batch, const NoiseDraw<Scalar>& draw, double eta, double lambda)
{
    if (!(lambda >= 0.0 && lambda < 0.5))
        throw ConfigError("lambda must lie in [0, 0.5)");
    return anti_noise_terms(psi, behavior, batch, draw, eta, lambda).loss;
}

template <typename Scalar>
TotalLoss<Scalar> total_loss(
    const diffusion::DiffusionPolicy<Scalar>& psi, const diffusion::DiffusionPolicy<Scalar>& behavior,
    const Matrix<Scalar>& states, const Matrix<Scalar>& actions, const NoiseDraw<Scalar>& bc_draw,
    const prefgen::PreferenceBatch<Scalar>& pref, const NoiseDraw<Scalar>& pref_draw, const PrefLossConfig& config)
{
    config.validate();
    const auto bc = diffusion::bc_loss(psi, states, actions, bc_draw);
    const auto anti = anti_noise_terms(psi, behavior, pref, pref_draw, config.eta, config.lambda);

    TotalLoss<Scalar> out;
    out.l_d = bc.loss;
    out.l_anti = anti.loss.loss;
    double imp = 0.0;
    for (Eigen::Index j = 0; j < anti.z.size(); ++j)
        imp += softplus(-static_cast<double>(anti.z(j)));
    out.l_imp = static_cast<Scalar>(imp / static_cast<double>(anti.z.size()));
    const auto xi = static_cast<Scalar>(config.xi);
    out.total = out.l_d + xi * out.l_anti;
    out.grad = bc.grad + xi * anti.loss.grad;
    return out;
}

template <typename Scalar>
Vector<Scalar> wr_weights(const Vector<Scalar>& q, const Vector<Scalar>& v, double eta_wr)
{
    if (!(eta_wr > 0.0))
        throw ConfigError("eta_wr must be positive");
    Vector<Scalar> w(q.size());
    const double log_cap = std::log(kMaxWrWeight);
    for (Eigen::Index j = 0; j < q.size(); ++j) {
        const double x = (static_cast<double>(q(j)) - static_cast<double>(v(j))) / eta_wr;
        w(j) = static_cast<Scalar>(x >= log_cap ? kMaxWrWeight : std::exp(x));
    }
    return w;
}

template <typename Scalar>
LossGrad<Scalar> wr_loss(
    const diffusion::DiffusionPolicy<Scalar>& policy, const critic::Critic<Scalar>& critic,
    const Matrix<Scalar>& states, const Matrix<Scalar>& actions, const NoiseDraw<Scalar>& draw, double eta_wr)
{
    if (actions.cols() == 0)
        throw std::invalid_argument("wr_loss needs a nonempty batch");
    const Vector<Scalar> w = wr_weights<Scalar>(critic.q_min(states, actions), critic.value(states), eta_wr);
    const auto terms = diffusion::denoising_terms(policy, states, actions, draw);
    const auto n = static_cast<Scalar>(actions.cols());
    LossGrad<Scalar> out;
    out.loss = w.dot(terms.error) / n;
    out.grad = diffusion::denoising_backward(policy, terms, Vector<Scalar>(w / n));
    return out;
}

#define PAODP_INSTANTIATE(S)                                                                                        \
    template PrefTerms<S> anti_noise_terms<S>(const diffusion::DiffusionPolicy<S>&, const diffusion::DiffusionPolicy<S>&, \
        const prefgen::PreferenceBatch<S>&, const NoiseDraw<S>&, double, double);                                  \
    template LossGrad<S> l_imp<S>(const diffusion::DiffusionPolicy<S>&, const diffusion::DiffusionPolicy<S>&,      \
        const prefgen::PreferenceBatch<S>&, const NoiseDraw<S>&, double);                                          \
    template LossGrad<S> l_anti<S>(const diffusion::DiffusionPolicy<S>&, const diffusion::DiffusionPolicy<S>&,     \
        const prefgen::PreferenceBatch<S>&, const NoiseDraw<S>&, double, double);                                  \
    template TotalLoss<S> total_loss<S>(const diffusion::DiffusionPolicy<S>&, const diffusion::DiffusionPolicy<S>&, \
        const Matrix<S>&, const Matrix<S>&, const NoiseDraw<S>&, const prefgen::PreferenceBatch<S>&,               \
        const NoiseDraw<S>&, const PrefLossConfig&);                                                                \
    template Vector<S> wr_weights<S>(const Vector<S>&, const Vector<S>&, double);                                   \
    template LossGrad<S> wr_loss<S>(const diffusion::DiffusionPolicy<S>&, const critic::Critic<S>&,                \
        const Matrix<S>&, const Matrix<S>&, const NoiseDraw<S>&, double);

PAODP_INSTANTIATE(float)
PAODP_INSTANTIATE(double)

#undef PAODP_INSTANTIATE

}  // namespace paodp::prefopt
