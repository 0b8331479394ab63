#pragma once

#include <vector>

#include "paodp/dataset.hpp"
#include "paodp/nn.hpp"
#include "paodp/rng.hpp"

namespace paodp {

template <typename Scalar>
struct Batch {
    nn::Matrix<Scalar> states;       // d_s x B
    nn::Matrix<Scalar> actions;      // d_a x B
    nn::Vector<Scalar> rewards;      // B
    nn::Matrix<Scalar> next_states;  // d_s x B
    nn::Vector<Scalar> terminals;    // B

    int size() const { return static_cast<int>(states.cols()); }

    template <typename Other>
    Batch<Other> cast() const
    {
        return Batch<Other>{
            states.template cast<Other>(), actions.template cast<Other>(), rewards.template cast<Other>(),
            next_states.template cast<Other>(), terminals.template cast<Other>()};
    }
};

inline Batch<float> gather_batch(const OfflineDataset& ds, const std::vector<int>& indices)
{
    const auto b = static_cast<Eigen::Index>(indices.size());
    Batch<float> batch{
        nn::Matrix<float>(ds.state_dim(), b), nn::Matrix<float>(ds.action_dim(), b), nn::Vector<float>(b),
        nn::Matrix<float>(ds.state_dim(), b), nn::Vector<float>(b)};
    for (Eigen::Index j = 0; j < b; ++j) {
        const int i = indices[static_cast<std::size_t>(j)];
        batch.states.col(j) = ds.states.col(i);
        batch.actions.col(j) = ds.actions.col(i);
        batch.rewards(j) = ds.rewards(i);
        batch.next_states.col(j) = ds.next_states.col(i);
        batch.terminals(j) = ds.terminals(i);
    }
    return batch;
}

/// Uniform with replacement.
inline Batch<float> sample_batch(const OfflineDataset& ds, int size, Rng& rng)
{
    std::vector<int> indices(static_cast<std::size_t>(size));
    for (auto& i : indices)
        i = rng.uniform_int(0, ds.size() - 1);
    return gather_batch(ds, indices);
}

}  // namespace paodp
