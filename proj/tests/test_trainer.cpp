#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "paodp/envs.hpp"
#include "paodp/trainer.hpp"

using namespace paodp;
using namespace paodp::trainer;

namespace {

TrainConfig tiny_config()
{
    TrainConfig c;
    c.epochs = 2;
    c.steps_per_epoch = 8;
    c.batch_size = 16;
    c.n_actions = 3;
    c.K = 5;
    c.hidden = 16;
    c.layers = 2;
    c.eval_episodes = 8;
    c.checkpoint_every = 0;
    c.seed = 4;
    return c;
}

const OfflineDataset& bandit_data()
{
    static const auto ds = normalize_states(envs::generate_dataset("bandit8", "mixed", 1000, 1));
    return ds;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::filesystem::path fresh_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("paodp_test_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

bool same_params(const TrainState& a, const TrainState& b)
{
    return a.theta.network().params() == b.theta.network().params() &&
           a.psi.network().params() == b.psi.network().params() && a.critic.q1.params() == b.critic.q1.params() &&
           a.critic.q2.params() == b.critic.q2.params() && a.critic.v.params() == b.critic.v.params() &&
           a.critic.q1_target.params() == b.critic.q1_target.params() &&
           a.opt_psi.first_moment() == b.opt_psi.first_moment() &&
           a.opt_psi.second_moment() == b.opt_psi.second_moment();
}

}  // namespace

TEST_CASE("config text parsing")
{
    const auto c = parse_config("# desk run\nepochs=3\nlearning_rate = 1e-3\neta=0.5\nstrategy=min\nepochs=4\n\n");
    CHECK(c.epochs == 4);
    CHECK(c.learning_rate == 1e-3);
    CHECK(c.eta == 0.5);
    CHECK(c.strategy == "min");
    CHECK(c.xi == 1.0);
    CHECK(c.lambda == 0.2);
    CHECK(c.n_actions == 10);

    TrainConfig d;
    d.eta = 0.1;
    d.lambda = 0.3;
    d.learning_rate = 3e-4;
    d.seed = 123456789012345ULL;
    const auto text = d.to_text();
    CHECK(text.find("eta=0.1\n") != std::string::npos);
    CHECK(parse_config(text).to_json() == d.to_json());
    CHECK(config_from_json(d.to_json()).to_json() == d.to_json());

    CHECK_THROWS_AS(parse_config("colour=blue\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("epochs=many\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("epochs\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("lambda=0.5\n").validate(), ConfigError);
    CHECK_THROWS_AS(parse_config("strategy=greedy\n").validate(), ConfigError);
    CHECK_THROWS_AS(parse_config("method=sgd\n").validate(), ConfigError);
    CHECK_THROWS_AS(parse_config("tau=0.4\n").validate(), ConfigError);
}

TEST_CASE("xi = 0 keeps psi on theta's trajectory")
{
    auto config = tiny_config();
    config.xi = 0.0;
    auto s = init_state(config, bandit_data());
    CHECK(s.psi.network().params() == s.theta.network().params());
    for (int i = 0; i < 10; ++i) {
        const auto m = train_step(s, config, bandit_data());
        CHECK(std::isfinite(m.loss_anti));
    }
    CHECK(s.psi.network().params() == s.theta.network().params());

    config.xi = 1.0;
    config.eta = 5.0;
    auto t = init_state(config, bandit_data());
    for (int i = 0; i < 10; ++i)
        train_step(t, config, bandit_data());
    CHECK(t.psi.network().params() != t.theta.network().params());
}

TEST_CASE("preference warmup and preference batch size")
{
    auto config = tiny_config();
    config.eta = 5.0;
    config.pref_warmup = 5;
    config.pref_batch = 4;
    auto s = init_state(config, bandit_data());
    for (int i = 0; i < 5; ++i) {
        const auto m = train_step(s, config, bandit_data());
        CHECK(m.loss_anti == 0.0);
    }
    CHECK(s.psi.network().params() == s.theta.network().params());
    const auto m = train_step(s, config, bandit_data());
    CHECK(m.loss_anti > 0.0);
    CHECK(s.psi.network().params() != s.theta.network().params());

    CHECK_THROWS_AS(parse_config("pref_batch=-1\n").validate(), ConfigError);
    CHECK_THROWS_AS(parse_config("pref_warmup=-3\n").validate(), ConfigError);
    CHECK(parse_config(config.to_text()).to_json() == config.to_json());
}

TEST_CASE("runs are deterministic and metrics files identical")
{
    auto config = tiny_config();
    config.checkpoint_every = 1;
    const auto a_dir = fresh_dir("det_a"), b_dir = fresh_dir("det_b");
    const auto a = run(config, bandit_data(), {a_dir});
    const auto b = run(config, bandit_data(), {b_dir});
    CHECK(same_params(a.state, b.state));
    CHECK(a.state.eval_history == b.state.eval_history);
    CHECK(slurp(a_dir / "metrics.csv") == slurp(b_dir / "metrics.csv"));
    CHECK(slurp(checkpoint_path(a_dir, 2)) == slurp(checkpoint_path(b_dir, 2)));

    // 15 step rows plus the header; the last row of each epoch carries the score.
    std::ifstream in(a_dir / "metrics.csv");
    std::string header, line;
    std::getline(in, header);
    CHECK(header == "step,epoch,loss_bc_theta,loss_v,loss_q,loss_imp,loss_anti,loss_total_psi,mean_gamma,eval_score");
    int rows = 0, scored = 0;
    while (std::getline(in, line)) {
        ++rows;
        scored += line.back() != ',';
    }
    CHECK(rows == 16);
    CHECK(scored == 2);

    config.seed = 5;
    const auto c = run(config, bandit_data());
    CHECK_FALSE(same_params(a.state, c.state));
    std::filesystem::remove_all(a_dir);
    std::filesystem::remove_all(b_dir);
}

TEST_CASE("checkpoint restore reproduces the next step bit-exactly")
{
    auto config = tiny_config();
    config.checkpoint_every = 1;
    config.epochs = 1;
    const auto dir = fresh_dir("ckpt");
    auto first = run(config, bandit_data(), {dir});
    const auto path = checkpoint_path(dir, 1);
    REQUIRE(std::filesystem::exists(path));
    REQUIRE(latest_checkpoint(dir) == path);

    auto restored = load_checkpoint(path, config, bandit_data());
    CHECK(restored.step == first.state.step);
    CHECK(restored.epoch == 1);
    CHECK(same_params(first.state, restored));
    const auto m1 = train_step(first.state, config, bandit_data());
    const auto m2 = train_step(restored, config, bandit_data());
    CHECK(metrics_row(m1, std::nullopt) == metrics_row(m2, std::nullopt));
    CHECK(m1.loss_total_psi == m2.loss_total_psi);
    CHECK(same_params(first.state, restored));

    // Resuming to two epochs matches an uninterrupted two-epoch run.
    config.epochs = 2;
    RunOptions resume{dir};
    resume.resume = true;
    const auto resumed = run(config, bandit_data(), resume);
    const auto straight_dir = fresh_dir("ckpt_straight");
    const auto straight = run(config, bandit_data(), {straight_dir});
    CHECK(same_params(resumed.state, straight.state));
    CHECK(resumed.state.eval_history == straight.state.eval_history);
    CHECK(slurp(dir / "metrics.csv") == slurp(straight_dir / "metrics.csv"));
    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(straight_dir);
}

TEST_CASE("zero epochs trains nothing")
{
    auto config = tiny_config();
    config.epochs = 0;
    const auto r = run(config, bandit_data());
    CHECK(r.history.empty());
    CHECK(r.state.step == 0);
    CHECK(r.state.eval_history.empty());
    CHECK(r.state.psi.network().params() == r.state.theta.network().params());
}

TEST_CASE("preference settings do not touch theta or the critic")
{
    auto config = tiny_config();
    config.epochs = 1;
    config.eval_every = 0;
    std::vector<TrainState> states;
    for (const char* overrides : {"lambda=0.0", "lambda=0.4\nstrategy=importance", "method=wr\nxi=2", "method=bc"}) {
        const auto c = parse_config(overrides, config);
        states.push_back(run(c, bandit_data()).state);
    }
    for (std::size_t i = 1; i < states.size(); ++i) {
        CHECK(states[i].theta.network().params() == states[0].theta.network().params());
        CHECK(states[i].critic.q1.params() == states[0].critic.q1.params());
        CHECK(states[i].critic.v.params() == states[0].critic.v.params());
        CHECK(states[i].psi.network().params() != states[0].psi.network().params());
    }
    // Plain cloning keeps psi on theta.
    CHECK(states[3].psi.network().params() == states[3].theta.network().params());
}

TEST_CASE("non-finite losses stop training with a batch dump")
{
    auto ds = bandit_data();
    ds.rewards.setConstant(std::numeric_limits<float>::quiet_NaN());
    auto config = tiny_config();
    const auto dir = fresh_dir("nonfinite");
    CHECK_THROWS_AS(run(config, ds, {dir}), NonFiniteLoss);
    CHECK(std::filesystem::exists(dir / "nonfinite_batch.json"));
    const auto dump = nlohmann::json::parse(slurp(dir / "nonfinite_batch.json"));
    CHECK(dump.contains("stage"));
    std::filesystem::remove_all(dir);
}
