#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "paodp/dataset.hpp"
#include "paodp/errors.hpp"
#include "paodp/rng.hpp"

namespace paodp::envs {

enum class RewardStyle { dense, sparse };

struct EnvSpec {
    std::string env_id;
    int state_dim = 0;
    int action_dim = 0;
    Eigen::VectorXd action_low;
    Eigen::VectorXd action_high;
    int horizon = 1;
    RewardStyle reward_style = RewardStyle::dense;
};

struct EnvState {
    Eigen::VectorXd obs;
    int t = 0;
};

struct StepResult {
    EnvState next;
    double reward = 0.0;
    bool done = false;
    bool terminal = false;
};

enum class Quality { expert, medium, mixed, random };

Quality parse_quality(const std::string& name);
std::string to_string(Quality q);

/// Stateless step functions over explicit state values.
class Environment {
public:
    virtual ~Environment() = default;

    virtual const EnvSpec& spec() const = 0;
    /// Initial-state distribution used for evaluation rollouts.
    virtual EnvState reset(Rng& rng) const = 0;
    /// Deterministic given (state, action). Actions are clipped to bounds.
    virtual StepResult step(const EnvState& state, const Eigen::VectorXd& action) const = 0;

    /// Scripted behavior policy of the given tier. `episode_mode` is drawn
    /// once per episode by `episode_mode()` and lets tiers mix policies
    /// per episode.
    virtual Eigen::VectorXd behavior_action(Quality q, const EnvState& state, int episode_mode, Rng& rng) const = 0;
    virtual int episode_mode(Quality q, Rng& rng) const;
    /// Start state for data collection (defaults to `reset`).
    virtual EnvState collection_start(Rng& rng) const { return reset(rng); }

    Eigen::VectorXd clip_action(const Eigen::VectorXd& action) const;
};

/// One-step bandit with M Gaussian reward bumps:
/// reward(a) = max_i v_i exp(-|a - c_i|^2 / (2 sigma^2)).
/// The observation is an uninformative uniform context in [-1, 1]^2.
class MultimodalBandit final : public Environment {
public:
    struct Options {
        int modes = 8;
        double sigma = 0.08;
        double mode_radius = 0.12;
        double ring_radius = 0.7;
        double behavior_std = 0.04;
        double mixed_uniform_fraction = 0.2;
    };

    MultimodalBandit();
    explicit MultimodalBandit(Options options);

    const EnvSpec& spec() const override { return spec_; }
    EnvState reset(Rng& rng) const override;
    StepResult step(const EnvState& state, const Eigen::VectorXd& action) const override;
    Eigen::VectorXd behavior_action(Quality q, const EnvState& state, int episode_mode, Rng& rng) const override;

    double reward(const Eigen::Vector2d& action) const;
    const std::vector<Eigen::Vector2d>& centers() const { return centers_; }
    const std::vector<double>& mode_values() const { return values_; }
    int best_mode() const;
    double best_value() const { return values_[static_cast<std::size_t>(best_mode())]; }
    const Options& options() const { return options_; }

    /// Index of the mode whose center lies within the mode radius, or -1.
    int mode_of(const Eigen::Vector2d& action) const;

    /// max over a regular grid on the action box.
    double grid_search_max(double resolution = 0.005) const;

private:
    Options options_;
    EnvSpec spec_;
    std::vector<Eigen::Vector2d> centers_;
    std::vector<double> values_;
};

/// 2-D point in [0,1]^2 moved by velocity commands, s' = clip(s + 0.1 a),
/// with axis-aligned walls that stop motion. Reward 1 on entering the goal
/// box, which ends the episode.
class SparsePointMaze final : public Environment {
public:
    struct Wall {
        Eigen::Vector2d from;
        Eigen::Vector2d to;
    };

    struct Layout {
        std::vector<Wall> walls;
        Eigen::Vector2d start{0.1, 0.1};
        Eigen::Vector2d goal{0.1, 0.9};
        double goal_half_width = 0.05;
        int horizon = 100;
    };

    static constexpr double kStepScale = 0.1;
    static constexpr double kGridResolution = 0.05;
    static constexpr int kGridPoints = 21;
    static constexpr int kNumActions = 8;

    static Layout default_layout();
    static Layout open_layout();

    SparsePointMaze();
    explicit SparsePointMaze(Layout layout);

    const EnvSpec& spec() const override { return spec_; }
    EnvState reset(Rng& rng) const override;
    StepResult step(const EnvState& state, const Eigen::VectorXd& action) const override;
    Eigen::VectorXd behavior_action(Quality q, const EnvState& state, int episode_mode, Rng& rng) const override;
    int episode_mode(Quality q, Rng& rng) const override;
    EnvState collection_start(Rng& rng) const override;

    const Layout& layout() const { return layout_; }
    bool in_goal(const Eigen::Vector2d& p) const;
    /// True when the straight move from `from` to `to` touches a wall.
    bool blocked(const Eigen::Vector2d& from, const Eigen::Vector2d& to) const;
    Eigen::Vector2d move(const Eigen::Vector2d& from, const Eigen::Vector2d& action) const;

    // Grid discretization: cell index = ix * kGridPoints + iy.
    static int cell_of(const Eigen::Vector2d& p);
    static Eigen::Vector2d cell_position(int cell);
    static int num_cells() { return kGridPoints * kGridPoints; }
    static Eigen::Vector2d quantized_action(int index);
    /// Index of a quantized action, or -1 if the action is not one.
    static int action_index(const Eigen::Vector2d& action);

    /// Cells a point can legitimately occupy (not lying on a wall).
    bool cell_free(int cell) const;
    /// Successor cell under quantized action `a` from `cell`.
    int successor(int cell, int a) const;
    /// Minimum number of quantized steps from `cell` into the goal (-1 if unreachable).
    int bfs_steps(int cell) const;
    const std::vector<int>& distance_field() const { return distance_; }

private:
    Layout layout_;
    EnvSpec spec_;
    std::vector<int> distance_;
    std::vector<int> start_cells_;
};

std::unique_ptr<Environment> make_env(const std::string& env_id);
const std::vector<std::string>& known_env_ids();

/// Mean undiscounted return of the scripted policy for `q` from `reset` states.
double scripted_score(const Environment& env, Quality q, int episodes, std::uint64_t seed);

OfflineDataset generate_dataset(const Environment& env, Quality q, int n, std::uint64_t seed);
OfflineDataset generate_dataset(const std::string& env_id, const std::string& quality, int n, std::uint64_t seed);

// Tabular oracles on the maze grid.

using CellQ = std::array<double, SparsePointMaze::kNumActions>;

struct ValueIterationResult {
    std::vector<CellQ> q;
    std::vector<double> residuals;  // sup-norm change per sweep
    bool monotone = true;           // no entry ever decreased
};

/// Optimal Q over the 8 quantized actions, from a zero start.
ValueIterationResult maze_optimal_q(const SparsePointMaze& maze, double gamma, double tol = 1e-10, int max_sweeps = 10000);

/// tau-expectile of a discrete sample (equal weights).
double expectile(const std::vector<double>& values, double tau);

struct ExpectileOracle {
    std::vector<CellQ> q;
    std::vector<std::array<int, SparsePointMaze::kNumActions>> counts;  // dataset visits per (cell, action)
    std::vector<double> v;
    std::vector<bool> determined;  // per cell*8+a: target does not depend on an unvisited cell
};

/// Fixed point of V(s) = expectile_tau{Q(s, a_j) : (s, a_j) in data},
/// Q(s, a) = r + gamma (1 - terminal) V(s') over the dataset's empirical
/// (cell, action) support. `ds` must hold raw states and quantized actions.
ExpectileOracle maze_expectile_oracle(
    const SparsePointMaze& maze, const OfflineDataset& ds, double tau, double gamma, double tol = 1e-10);

}  // namespace paodp::envs
