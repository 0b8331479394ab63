#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "paodp/critic.hpp"
#include "paodp/diffusion.hpp"
#include "paodp/nn.hpp"
#include "paodp/rng.hpp"

namespace paodp::prefgen {

using nn::Matrix;
using nn::Vector;

enum class Strategy { importance, max, min, mean };

Strategy parse_strategy(const std::string& name);
std::string to_string(Strategy s);

struct SamplingStrategy {
    Strategy kind = Strategy::max;
    double eta = 0.1;  // importance temperature
    int n = 10;        // candidates per state

    void validate() const;
};

/// +1 if q_data > q_gen, otherwise -1. Throws std::domain_error on NaN.
int label(double q_data, double q_gen);

/// softmax(eta * q) with the maximum subtracted before exponentiation.
std::vector<double> softmax_probabilities(const std::vector<double>& q, double eta);

/// Index chosen by the strategy; ties go to the lowest index. Throws
/// std::invalid_argument on an empty list.
int select_index(const std::vector<double>& q, const SamplingStrategy& strategy, Rng& rng);

/// Column of `candidates` (d_a x N) picked by `select_index`.
Eigen::VectorXd select_candidate(
    const Eigen::MatrixXd& candidates, const std::vector<double>& q, const SamplingStrategy& strategy, Rng& rng);

template <typename Scalar>
struct PreferenceBatch {
    Matrix<Scalar> states;  // d_s x B
    Matrix<Scalar> a_data;  // d_a x B
    Matrix<Scalar> a_gen;   // d_a x B
    Vector<Scalar> gamma;   // B, entries +1 / -1
    Vector<Scalar> q_data;
    Vector<Scalar> q_gen;

    int size() const { return static_cast<int>(states.cols()); }
    double mean_gamma() const { return gamma.size() ? static_cast<double>(gamma.mean()) : 0.0; }

    template <typename Other>
    PreferenceBatch<Other> cast() const
    {
        return PreferenceBatch<Other>{
            states.template cast<Other>(), a_data.template cast<Other>(), a_gen.template cast<Other>(),
            gamma.template cast<Other>(),  q_data.template cast<Other>(), q_gen.template cast<Other>()};
    }
};

/// Q-values of [a_data | a_gen] under the critic's online minimum, and
/// labels from them. Generation and re-labeling both go through here so
/// stored labels can be recomputed exactly.
void label_pairs(const critic::Critic<float>& critic, PreferenceBatch<float>& batch);

/// For each state: N candidates from the behavior policy, one selected by
/// the strategy, labeled against the dataset action.
PreferenceBatch<float> generate(
    const diffusion::DiffusionPolicy<float>& behavior, const critic::Critic<float>& critic,
    const Matrix<float>& states, const Matrix<float>& a_data, const SamplingStrategy& strategy, Rng& rng);

/// Negates each label independently with probability `prob`.
void corrupt_labels(PreferenceBatch<float>& batch, double prob, Rng& rng);

/// Appends one JSON object per pair.
void append_jsonl(const PreferenceBatch<float>& batch, const std::filesystem::path& path);

}  // namespace paodp::prefgen
