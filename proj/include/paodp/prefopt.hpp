#pragma once

#include "paodp/critic.hpp"
#include "paodp/diffusion.hpp"
#include "paodp/prefgen.hpp"

namespace paodp::prefopt {

using diffusion::LossGrad;
using diffusion::NoiseDraw;
using nn::Matrix;
using nn::Vector;

struct PrefLossConfig {
    double eta = 0.1;     // preference temperature
    double lambda = 0.2;  // label flip probability, [0, 0.5)
    double xi = 1.0;      // improvement weight

    void validate() const;
};

/// sigma(eta * delta_hat - eta * delta_data)
double bt_probability(double delta_hat, double delta_data, double eta);

/// Numerically stable log(1 + e^x).
double softplus(double x);

template <typename Scalar>
struct PrefTerms {
    Vector<Scalar> z;            // eta * Gamma * (Delta(a) - Delta(a_hat)) per pair
    Vector<Scalar> per_pair;     // loss per pair
    LossGrad<Scalar> loss;       // mean over pairs, gradient w.r.t. psi
};

/// (1 - lambda) L_imp + lambda L_imp^{-Gamma} for any lambda in [0, 1].
/// One (k, eps) per pair is shared by the four surrogate log-likelihoods
/// and by both the plain and flipped terms. Delta(x) = log pi_psi(x) -
/// log pi_b(x); the preferred action (a if Gamma = +1, a_hat otherwise)
/// has its relative likelihood raised. pi_b receives no gradient.
template <typename Scalar>
PrefTerms<Scalar> anti_noise_terms(
    const diffusion::DiffusionPolicy<Scalar>& psi, const diffusion::DiffusionPolicy<Scalar>& behavior,
    const prefgen::PreferenceBatch<Scalar>& batch, const NoiseDraw<Scalar>& draw, double eta, double lambda);

template <typename Scalar>
LossGrad<Scalar> l_imp(
    const diffusion::DiffusionPolicy<Scalar>& psi, const diffusion::DiffusionPolicy<Scalar>& behavior,
    const prefgen::PreferenceBatch<Scalar>& batch, const NoiseDraw<Scalar>& draw, double eta);

/// Validated form: throws ConfigError unless 0 <= lambda < 0.5.
template <typename Scalar>
LossGrad<Scalar> l_anti(
    const diffusion::DiffusionPolicy<Scalar>& psi, const diffusion::DiffusionPolicy<Scalar>& behavior,
    const prefgen::PreferenceBatch<Scalar>& batch, const NoiseDraw<Scalar>& draw, double eta, double lambda);

template <typename Scalar>
struct TotalLoss {
    Scalar total{};
    Scalar l_d{};
    Scalar l_imp{};
    Scalar l_anti{};
    Vector<Scalar> grad;
};

/// L_d(psi) + xi * L_anti(psi; theta), one gradient for one optimizer step.
template <typename Scalar>
TotalLoss<Scalar> total_loss(
    const diffusion::DiffusionPolicy<Scalar>& psi, const diffusion::DiffusionPolicy<Scalar>& behavior,
    const Matrix<Scalar>& states, const Matrix<Scalar>& actions, const NoiseDraw<Scalar>& bc_draw,
    const prefgen::PreferenceBatch<Scalar>& pref, const NoiseDraw<Scalar>& pref_draw, const PrefLossConfig& config);

inline constexpr double kMaxWrWeight = 100.0;

/// min(exp((Q_min(s, a) - V(s)) / eta_wr), 100) per sample.
template <typename Scalar>
Vector<Scalar> wr_weights(const Vector<Scalar>& q, const Vector<Scalar>& v, double eta_wr);

/// Advantage-weighted denoising loss, mean over the batch. Weights are
/// constants with respect to the policy.
template <typename Scalar>
LossGrad<Scalar> wr_loss(
    const diffusion::DiffusionPolicy<Scalar>& policy, const critic::Critic<Scalar>& critic,
    const Matrix<Scalar>& states, const Matrix<Scalar>& actions, const NoiseDraw<Scalar>& draw, double eta_wr);

}  // namespace paodp::prefopt
