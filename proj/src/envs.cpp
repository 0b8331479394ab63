#include "paodp/envs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace paodp::envs {

namespace {

constexpr double kGeomTol = 1e-9;

Eigen::VectorXd box(int dim, double value) { return Eigen::VectorXd::Constant(dim, value); }

double cross(const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b)
{
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

bool on_segment(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b)
{
    return p.x() >= std::min(a.x(), b.x()) - kGeomTol && p.x() <= std::max(a.x(), b.x()) + kGeomTol &&
           p.y() >= std::min(a.y(), b.y()) - kGeomTol && p.y() <= std::max(a.y(), b.y()) + kGeomTol;
}

int sign(double v)
{
    if (v > kGeomTol)
        return 1;
    if (v < -kGeomTol)
        return -1;
    return 0;
}

// Closed-segment intersection, touching included.
bool segments_touch(const Eigen::Vector2d& p1, const Eigen::Vector2d& p2, const Eigen::Vector2d& q1, const Eigen::Vector2d& q2)
{
    const int d1 = sign(cross(q1, q2, p1));
    const int d2 = sign(cross(q1, q2, p2));
    const int d3 = sign(cross(p1, p2, q1));
    const int d4 = sign(cross(p1, p2, q2));
    if (d1 * d2 < 0 && d3 * d4 < 0)
        return true;
    if (d1 == 0 && on_segment(p1, q1, q2)) return true;
    if (d2 == 0 && on_segment(p2, q1, q2)) return true;
    if (d3 == 0 && on_segment(q1, p1, p2)) return true;
    if (d4 == 0 && on_segment(q2, p1, p2)) return true;
    return false;
}

}  // namespace

Quality parse_quality(const std::string& name)
{
    if (name == "expert") return Quality::expert;
    if (name == "medium") return Quality::medium;
    if (name == "mixed") return Quality::mixed;
    if (name == "random") return Quality::random;
    throw ConfigError("unknown quality tier '" + name + "' (valid: expert, medium, mixed, random)");
}

std::string to_string(Quality q)
{
    switch (q) {
    case Quality::expert: return "expert";
    case Quality::medium: return "medium";
    case Quality::mixed: return "mixed";
    case Quality::random: return "random";
    }
    return "unknown";
}

int Environment::episode_mode(Quality, Rng&) const { return 0; }

Eigen::VectorXd Environment::clip_action(const Eigen::VectorXd& action) const
{
    if (action.size() != spec().action_dim)
        throw std::invalid_argument("action has wrong dimension");
    return action.cwiseMax(spec().action_low).cwiseMin(spec().action_high);
}

// ---------------------------------------------------------------- bandit

MultimodalBandit::MultimodalBandit() : MultimodalBandit(Options{}) {}

MultimodalBandit::MultimodalBandit(Options options) : options_(options)
{
    if (options_.modes < 1 || options_.sigma <= 0.0 || options_.mode_radius <= 0.0)
        throw ConfigError("invalid bandit options");
    spec_ = EnvSpec{"bandit8", 2, 2, box(2, -1.0), box(2, 1.0), 1, RewardStyle::dense};

    const int m = options_.modes;
    for (int i = 0; i < m; ++i) {
        const double angle = 2.0 * M_PI * i / m;
        // Centers sit on the 0.005 lattice so grid search hits them exactly.
        Eigen::Vector2d c(options_.ring_radius * std::cos(angle), options_.ring_radius * std::sin(angle));
        c = (c / 0.005).array().round().matrix() * 0.005;
        centers_.push_back(c);
        const int rank = m > 1 ? (3 * i) % m : 0;
        values_.push_back(m > 1 ? 0.3 + 0.7 * rank / (m - 1) : 1.0);
    }
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j)
            if ((centers_[static_cast<std::size_t>(i)] - centers_[static_cast<std::size_t>(j)]).norm() <= 2.0 * options_.mode_radius)
                throw ConfigError("bandit mode centers must be separated by more than twice the mode radius");
}

EnvState MultimodalBandit::reset(Rng& rng) const
{
    return EnvState{Eigen::Vector2d(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)), 0};
}

StepResult MultimodalBandit::step(const EnvState& state, const Eigen::VectorXd& action) const
{
    const Eigen::VectorXd a = clip_action(action);
    return StepResult{EnvState{state.obs, state.t + 1}, reward(Eigen::Vector2d(a(0), a(1))), true, true};
}

double MultimodalBandit::reward(const Eigen::Vector2d& action) const
{
    double best = 0.0;
    const double denom = 2.0 * options_.sigma * options_.sigma;
    for (std::size_t i = 0; i < centers_.size(); ++i)
        best = std::max(best, values_[i] * std::exp(-(action - centers_[i]).squaredNorm() / denom));
    return best;
}

int MultimodalBandit::best_mode() const
{
    return static_cast<int>(std::max_element(values_.begin(), values_.end()) - values_.begin());
}

int MultimodalBandit::mode_of(const Eigen::Vector2d& action) const
{
    for (std::size_t i = 0; i < centers_.size(); ++i)
        if ((action - centers_[i]).norm() <= options_.mode_radius)
            return static_cast<int>(i);
    return -1;
}

double MultimodalBandit::grid_search_max(double resolution) const
{
    const int steps = static_cast<int>(std::lround(2.0 / resolution));
    double best = 0.0;
    for (int i = 0; i <= steps; ++i)
        for (int j = 0; j <= steps; ++j)
            best = std::max(best, reward(Eigen::Vector2d(-1.0 + i * resolution, -1.0 + j * resolution)));
    return best;
}

Eigen::VectorXd MultimodalBandit::behavior_action(Quality q, const EnvState&, int, Rng& rng) const
{
    auto around = [&](int mode) -> Eigen::VectorXd {
        const auto& c = centers_[static_cast<std::size_t>(mode)];
        Eigen::VectorXd a(2);
        a << c.x() + options_.behavior_std * rng.normal(), c.y() + options_.behavior_std * rng.normal();
        return clip_action(a);
    };
    auto uniform = [&]() -> Eigen::VectorXd {
        Eigen::VectorXd a(2);
        a << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
        return a;
    };

    switch (q) {
    case Quality::random:
        return uniform();
    case Quality::expert:
        return around(best_mode());
    case Quality::medium: {
        std::vector<int> order(values_.size());
        for (std::size_t i = 0; i < order.size(); ++i)
            order[i] = static_cast<int>(i);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return values_[static_cast<std::size_t>(a)] > values_[static_cast<std::size_t>(b)];
        });
        const int top = std::max(1, static_cast<int>(order.size()) / 2);
        return around(order[static_cast<std::size_t>(rng.uniform_int(0, top - 1))]);
    }
    case Quality::mixed:
        if (rng.uniform() < options_.mixed_uniform_fraction)
            return uniform();
        return around(rng.uniform_int(0, options_.modes - 1));
    }
    return uniform();
}

// ------------------------------------------------------------------ maze

SparsePointMaze::Layout SparsePointMaze::default_layout()
{
    Layout layout;
    layout.walls.push_back(Wall{Eigen::Vector2d(0.0, 0.5), Eigen::Vector2d(0.7, 0.5)});
    return layout;
}

SparsePointMaze::Layout SparsePointMaze::open_layout()
{
    Layout layout;
    layout.goal = Eigen::Vector2d(0.9, 0.9);
    return layout;
}

SparsePointMaze::SparsePointMaze() : SparsePointMaze(default_layout()) {}

SparsePointMaze::SparsePointMaze(Layout layout) : layout_(std::move(layout))
{
    if (layout_.horizon < 1)
        throw ConfigError("maze horizon must be at least 1");
    spec_ = EnvSpec{"maze-sparse", 2, 2, box(2, -1.0), box(2, 1.0), layout_.horizon, RewardStyle::sparse};

    // Reverse BFS from the goal cells over the quantized transition graph.
    const int cells = num_cells();
    std::vector<std::vector<int>> predecessors(static_cast<std::size_t>(cells));
    for (int c = 0; c < cells; ++c) {
        if (!cell_free(c) || in_goal(cell_position(c)))
            continue;
        for (int a = 0; a < kNumActions; ++a) {
            const int next = successor(c, a);
            if (next != c)
                predecessors[static_cast<std::size_t>(next)].push_back(c);
        }
    }
    distance_.assign(static_cast<std::size_t>(cells), -1);
    std::deque<int> frontier;
    for (int c = 0; c < cells; ++c) {
        if (cell_free(c) && in_goal(cell_position(c))) {
            distance_[static_cast<std::size_t>(c)] = 0;
            frontier.push_back(c);
        }
    }
    while (!frontier.empty()) {
        const int c = frontier.front();
        frontier.pop_front();
        for (int p : predecessors[static_cast<std::size_t>(c)]) {
            if (distance_[static_cast<std::size_t>(p)] < 0) {
                distance_[static_cast<std::size_t>(p)] = distance_[static_cast<std::size_t>(c)] + 1;
                frontier.push_back(p);
            }
        }
    }
    // Collection starts: non-goal cells reachable from the evaluation start.
    // Moves of 0.1 on the 0.05 grid split it into parity sublattices that
    // boundary clipping only drains one way; staying on the start's keeps
    // the data on states the evaluated policy can visit.
    std::vector<bool> seen(static_cast<std::size_t>(cells), false);
    const int start = cell_of(layout_.start);
    seen[static_cast<std::size_t>(start)] = true;
    frontier.push_back(start);
    while (!frontier.empty()) {
        const int c = frontier.front();
        frontier.pop_front();
        if (in_goal(cell_position(c)))
            continue;
        start_cells_.push_back(c);
        for (int a = 0; a < kNumActions; ++a) {
            const int next = successor(c, a);
            if (!seen[static_cast<std::size_t>(next)]) {
                seen[static_cast<std::size_t>(next)] = true;
                frontier.push_back(next);
            }
        }
    }
    std::sort(start_cells_.begin(), start_cells_.end());
}

bool SparsePointMaze::in_goal(const Eigen::Vector2d& p) const
{
    return ((p - layout_.goal).cwiseAbs().array() <= layout_.goal_half_width + kGeomTol).all();
}

bool SparsePointMaze::blocked(const Eigen::Vector2d& from, const Eigen::Vector2d& to) const
{
    for (const auto& wall : layout_.walls)
        if (segments_touch(from, to, wall.from, wall.to))
            return true;
    return false;
}

Eigen::Vector2d SparsePointMaze::move(const Eigen::Vector2d& from, const Eigen::Vector2d& action) const
{
    const Eigen::Vector2d a = action.cwiseMax(-1.0).cwiseMin(1.0);
    const Eigen::Vector2d to = (from + kStepScale * a).cwiseMax(0.0).cwiseMin(1.0);
    if ((to - from).squaredNorm() == 0.0 || blocked(from, to))
        return from;
    return to;
}

EnvState SparsePointMaze::reset(Rng&) const
{
    return EnvState{layout_.start, 0};
}

EnvState SparsePointMaze::collection_start(Rng& rng) const
{
    const int idx = rng.uniform_int(0, static_cast<int>(start_cells_.size()) - 1);
    return EnvState{cell_position(start_cells_[static_cast<std::size_t>(idx)]), 0};
}

StepResult SparsePointMaze::step(const EnvState& state, const Eigen::VectorXd& action) const
{
    const Eigen::VectorXd a = clip_action(action);
    const Eigen::Vector2d next = move(Eigen::Vector2d(state.obs(0), state.obs(1)), Eigen::Vector2d(a(0), a(1)));
    const bool terminal = in_goal(next);
    StepResult r;
    r.next = EnvState{next, state.t + 1};
    r.reward = terminal ? 1.0 : 0.0;
    r.terminal = terminal;
    r.done = terminal || r.next.t >= layout_.horizon;
    return r;
}

int SparsePointMaze::episode_mode(Quality q, Rng& rng) const
{
    return q == Quality::mixed ? rng.uniform_int(0, 1) : 0;
}

Eigen::VectorXd SparsePointMaze::behavior_action(Quality q, const EnvState& state, int episode_mode, Rng& rng) const
{
    auto random_action = [&]() -> Eigen::VectorXd { return quantized_action(rng.uniform_int(0, kNumActions - 1)); };
    auto greedy_action = [&]() -> Eigen::VectorXd {
        const int cell = cell_of(Eigen::Vector2d(state.obs(0), state.obs(1)));
        int best = 0;
        int best_dist = std::numeric_limits<int>::max();
        for (int a = 0; a < kNumActions; ++a) {
            const int d = distance_[static_cast<std::size_t>(successor(cell, a))];
            if (d >= 0 && d < best_dist) {
                best_dist = d;
                best = a;
            }
        }
        return quantized_action(best);
    };
    double p_greedy = 0.0;
    switch (q) {
    case Quality::expert: p_greedy = 0.9; break;
    case Quality::medium: p_greedy = 0.5; break;
    case Quality::random: p_greedy = 0.0; break;
    case Quality::mixed: p_greedy = episode_mode == 0 ? 0.9 : 0.0; break;
    }
    if (p_greedy > 0.0 && rng.uniform() < p_greedy)
        return greedy_action();
    return random_action();
}

int SparsePointMaze::cell_of(const Eigen::Vector2d& p)
{
    const int ix = std::clamp(static_cast<int>(std::lround(p.x() / kGridResolution)), 0, kGridPoints - 1);
    const int iy = std::clamp(static_cast<int>(std::lround(p.y() / kGridResolution)), 0, kGridPoints - 1);
    return ix * kGridPoints + iy;
}

Eigen::Vector2d SparsePointMaze::cell_position(int cell)
{
    return Eigen::Vector2d((cell / kGridPoints) * kGridResolution, (cell % kGridPoints) * kGridResolution);
}

Eigen::Vector2d SparsePointMaze::quantized_action(int index)
{
    static const std::array<Eigen::Vector2d, kNumActions> actions{
        Eigen::Vector2d(1, 0), Eigen::Vector2d(1, 1), Eigen::Vector2d(0, 1), Eigen::Vector2d(-1, 1),
        Eigen::Vector2d(-1, 0), Eigen::Vector2d(-1, -1), Eigen::Vector2d(0, -1), Eigen::Vector2d(1, -1)};
    return actions.at(static_cast<std::size_t>(index));
}

int SparsePointMaze::action_index(const Eigen::Vector2d& action)
{
    for (int a = 0; a < kNumActions; ++a)
        if ((quantized_action(a) - action).cwiseAbs().maxCoeff() < 1e-6)
            return a;
    return -1;
}

bool SparsePointMaze::cell_free(int cell) const
{
    const Eigen::Vector2d p = cell_position(cell);
    for (const auto& wall : layout_.walls)
        if (segments_touch(p, p, wall.from, wall.to))
            return false;
    return true;
}

int SparsePointMaze::successor(int cell, int a) const
{
    return cell_of(move(cell_position(cell), quantized_action(a)));
}

int SparsePointMaze::bfs_steps(int cell) const
{
    return distance_.at(static_cast<std::size_t>(cell));
}

// ------------------------------------------------------------- factories

const std::vector<std::string>& known_env_ids()
{
    static const std::vector<std::string> ids{"bandit8", "maze-sparse"};
    return ids;
}

std::unique_ptr<Environment> make_env(const std::string& env_id)
{
    if (env_id == "bandit8")
        return std::make_unique<MultimodalBandit>();
    if (env_id == "maze-sparse")
        return std::make_unique<SparsePointMaze>();
    throw ConfigError("unknown env id '" + env_id + "' (valid: bandit8, maze-sparse)");
}

double scripted_score(const Environment& env, Quality q, int episodes, std::uint64_t seed)
{
    if (episodes < 1)
        throw std::invalid_argument("episodes must be at least 1");
    Rng rng = Rng::stream(seed, "scripted/" + to_string(q));
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) {
        EnvState state = env.reset(rng);
        const int mode = env.episode_mode(q, rng);
        for (;;) {
            const StepResult r = env.step(state, env.behavior_action(q, state, mode, rng));
            total += r.reward;
            state = r.next;
            if (r.done)
                break;
        }
    }
    return total / episodes;
}

OfflineDataset generate_dataset(const Environment& env, Quality q, int n, std::uint64_t seed)
{
    if (n < 1)
        throw std::invalid_argument("dataset size must be at least 1");
    Rng rng = Rng::stream(seed, "generate/" + to_string(q));
    std::vector<Transition> transitions;
    transitions.reserve(static_cast<std::size_t>(n));
    while (static_cast<int>(transitions.size()) < n) {
        EnvState state = env.collection_start(rng);
        const int mode = env.episode_mode(q, rng);
        while (static_cast<int>(transitions.size()) < n) {
            const Eigen::VectorXd action = env.clip_action(env.behavior_action(q, state, mode, rng));
            const StepResult r = env.step(state, action);
            transitions.push_back(Transition{
                state.obs.cast<float>(), action.cast<float>(), static_cast<float>(r.reward),
                r.next.obs.cast<float>(), r.terminal});
            state = r.next;
            if (r.done)
                break;
        }
    }
    // Normalization anchors are a property of the environment, not of the
    // dataset seed.
    const double ref_random = scripted_score(env, Quality::random, 100, 0);
    const double ref_expert = scripted_score(env, Quality::expert, 100, 0);
    const auto& spec = env.spec();
    return make_dataset(spec.env_id, transitions, spec.action_low, spec.action_high, ref_random, ref_expert);
}

OfflineDataset generate_dataset(const std::string& env_id, const std::string& quality, int n, std::uint64_t seed)
{
    const auto env = make_env(env_id);
    return generate_dataset(*env, parse_quality(quality), n, seed);
}

// --------------------------------------------------------------- oracles

ValueIterationResult maze_optimal_q(const SparsePointMaze& maze, double gamma, double tol, int max_sweeps)
{
    const int cells = SparsePointMaze::num_cells();
    ValueIterationResult result;
    result.q.assign(static_cast<std::size_t>(cells), CellQ{});
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        std::vector<CellQ> next = result.q;
        double change = 0.0;
        for (int c = 0; c < cells; ++c) {
            for (int a = 0; a < SparsePointMaze::kNumActions; ++a) {
                const int s2 = maze.successor(c, a);
                const bool terminal = maze.in_goal(SparsePointMaze::cell_position(s2));
                const auto& q2 = result.q[static_cast<std::size_t>(s2)];
                const double target = terminal ? 1.0 : gamma * *std::max_element(q2.begin(), q2.end());
                auto& slot = next[static_cast<std::size_t>(c)][static_cast<std::size_t>(a)];
                if (target < result.q[static_cast<std::size_t>(c)][static_cast<std::size_t>(a)])
                    result.monotone = false;
                change = std::max(change, std::abs(target - slot));
                slot = target;
            }
        }
        result.q = std::move(next);
        result.residuals.push_back(change);
        if (change < tol)
            break;
    }
    return result;
}

double expectile(const std::vector<double>& values, double tau)
{
    if (values.empty())
        throw std::invalid_argument("expectile of an empty sample");
    double lo = *std::min_element(values.begin(), values.end());
    double hi = *std::max_element(values.begin(), values.end());
    // sum_j |tau - 1{q_j < v}| (q_j - v) is decreasing in v.
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi);
        double f = 0.0;
        for (double q : values)
            f += (q < mid ? 1.0 - tau : tau) * (q - mid);
        if (f > 0.0)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

ExpectileOracle maze_expectile_oracle(
    const SparsePointMaze& maze, const OfflineDataset& ds, double tau, double gamma, double tol)
{
    if (ds.normalized)
        throw std::invalid_argument("expectile oracle needs raw states");
    const int cells = SparsePointMaze::num_cells();
    constexpr int A = SparsePointMaze::kNumActions;
    ExpectileOracle oracle;
    oracle.q.assign(static_cast<std::size_t>(cells), CellQ{});
    oracle.counts.assign(static_cast<std::size_t>(cells), std::array<int, A>{});
    oracle.v.assign(static_cast<std::size_t>(cells), 0.0);

    for (int i = 0; i < ds.size(); ++i) {
        const int cell = SparsePointMaze::cell_of(ds.states.col(i).cast<double>());
        const int a = SparsePointMaze::action_index(ds.actions.col(i).cast<double>());
        if (a < 0)
            throw std::invalid_argument("expectile oracle needs quantized maze actions");
        ++oracle.counts[static_cast<std::size_t>(cell)][static_cast<std::size_t>(a)];
    }
    auto visited = [&](int cell) {
        const auto& c = oracle.counts[static_cast<std::size_t>(cell)];
        return std::any_of(c.begin(), c.end(), [](int n) { return n > 0; });
    };

    oracle.determined.assign(static_cast<std::size_t>(cells * A), false);
    for (int c = 0; c < cells; ++c)
        for (int a = 0; a < A; ++a) {
            const int s2 = maze.successor(c, a);
            oracle.determined[static_cast<std::size_t>(c * A + a)] =
                maze.in_goal(SparsePointMaze::cell_position(s2)) || visited(s2);
        }

    for (int sweep = 0; sweep < 100000; ++sweep) {
        double change = 0.0;
        for (int c = 0; c < cells; ++c) {
            for (int a = 0; a < A; ++a) {
                if (oracle.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(a)] == 0)
                    continue;
                const int s2 = maze.successor(c, a);
                const bool terminal = maze.in_goal(SparsePointMaze::cell_position(s2));
                const double target = terminal ? 1.0 : gamma * oracle.v[static_cast<std::size_t>(s2)];
                auto& slot = oracle.q[static_cast<std::size_t>(c)][static_cast<std::size_t>(a)];
                change = std::max(change, std::abs(target - slot));
                slot = target;
            }
        }
        for (int c = 0; c < cells; ++c) {
            if (!visited(c))
                continue;
            std::vector<double> sample;
            for (int a = 0; a < A; ++a)
                sample.insert(
                    sample.end(), static_cast<std::size_t>(oracle.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(a)]),
                    oracle.q[static_cast<std::size_t>(c)][static_cast<std::size_t>(a)]);
            const double v = expectile(sample, tau);
            change = std::max(change, std::abs(v - oracle.v[static_cast<std::size_t>(c)]));
            oracle.v[static_cast<std::size_t>(c)] = v;
        }
        if (change < tol)
            break;
    }
    return oracle;
}

}  // namespace paodp::envs
