#include "paodp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>

#include "paodp/envs.hpp"
#include "paodp/eval.hpp"

namespace paodp::trainer {

namespace {

std::vector<int> hidden_widths(const TrainConfig& c)
{
    return std::vector<int>(static_cast<std::size_t>(c.layers), c.hidden);
}

prefgen::SamplingStrategy sampling(const TrainConfig& c)
{
    return {prefgen::parse_strategy(c.strategy), c.eta, c.n_actions};
}

nlohmann::json matrix_json(const nn::Matrix<float>& m)
{
    auto out = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        out.push_back(std::vector<float>(m.col(j).data(), m.col(j).data() + m.rows()));
    return out;
}

nlohmann::json batch_dump(const Batch<float>& b, const StepMetrics& m, const std::string& stage)
{
    return {
        {"stage", stage},
        {"step", m.step},
        {"states", matrix_json(b.states)},
        {"actions", matrix_json(b.actions)},
        {"rewards", std::vector<float>(b.rewards.data(), b.rewards.data() + b.rewards.size())},
        {"next_states", matrix_json(b.next_states)},
        {"terminals", std::vector<float>(b.terminals.data(), b.terminals.data() + b.terminals.size())}};
}

void check_finite(double value, const char* stage, const Batch<float>& b, const StepMetrics& m)
{
    if (!std::isfinite(value))
        throw NonFiniteLoss(
            std::string("non-finite ") + stage + " at step " + std::to_string(m.step), batch_dump(b, m, stage));
}

std::string format_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void put_adam(nn::Checkpoint& ckpt, const std::string& name, const nn::Adam<float>& opt)
{
    ckpt.put(name + ".m", opt.first_moment());
    ckpt.put(name + ".v", opt.second_moment());
    ckpt.meta["adam_steps"][name] = opt.steps();
}

void get_adam(const nn::Checkpoint& ckpt, const std::string& name, nn::Adam<float>& opt)
{
    opt.first_moment() = ckpt.get(name + ".m");
    opt.second_moment() = ckpt.get(name + ".v");
    opt.set_steps(ckpt.meta.at("adam_steps").at(name).get<long long>());
}

void get_params(const nn::Checkpoint& ckpt, const std::string& name, nn::Mlp<float>& net)
{
    Eigen::VectorXf p = ckpt.get(name);
    if (p.size() != net.num_params())
        throw std::runtime_error("checkpoint tensor " + name + " has the wrong size");
    net.params() = p;
}

std::filesystem::path rng_sidecar(const std::filesystem::path& ckpt)
{
    auto p = ckpt;
    p.replace_extension(".rng.json");
    return p;
}

}  // namespace

TrainState init_state(const TrainConfig& config, const OfflineDataset& ds)
{
    config.validate();
    const auto schedule = diffusion::NoiseSchedule::geometric(config.K);
    diffusion::PolicyOptions popts;
    popts.hidden = hidden_widths(config);

    TrainState s;
    Rng init = Rng::stream(config.seed, "init");
    s.theta = diffusion::DiffusionPolicy<float>(
        ds.state_dim(), ds.action_dim(), schedule, ds.action_low, ds.action_high, popts);
    s.theta.init(init);
    s.psi = s.theta;
    s.critic = critic::Critic<float>(
        ds.state_dim(), ds.action_dim(), critic::CriticOptions{config.tau, config.gamma, config.rho, hidden_widths(config)});
    s.critic.init(init);

    nn::AdamConfig adam;
    adam.learning_rate = config.learning_rate;
    s.opt_theta = nn::Adam<float>(s.theta.network().num_params(), adam);
    s.opt_psi = nn::Adam<float>(s.psi.network().num_params(), adam);
    s.opt_q1 = nn::Adam<float>(s.critic.q1.num_params(), adam);
    s.opt_q2 = nn::Adam<float>(s.critic.q2.num_params(), adam);
    s.opt_v = nn::Adam<float>(s.critic.v.num_params(), adam);

    s.data_rng = Rng::stream(config.seed, "data");
    s.noise_rng = Rng::stream(config.seed, "noise");
    s.candidate_rng = Rng::stream(config.seed, "candidate");
    s.label_rng = Rng::stream(config.seed, "labels");
    s.eval_rng = Rng::stream(config.seed, "eval");
    return s;
}

StepMetrics train_step(TrainState& s, const TrainConfig& config, const Batch<float>& batch)
{
    const Method method = parse_method(config.method);
    StepMetrics m;
    m.step = s.step + 1;
    m.epoch = s.epoch + 1;
    const int b = batch.size();
    const int d_a = s.theta.action_dim();

    // Behavior policy. psi's cloning term reuses this draw.
    const auto bc_draw = diffusion::draw_noise<float>(b, d_a, config.K, s.noise_rng);
    const auto bc = diffusion::bc_loss(s.theta, batch.states, batch.actions, bc_draw);
    m.loss_bc_theta = bc.loss;
    check_finite(m.loss_bc_theta, "loss_bc_theta", batch, m);
    s.opt_theta.step(s.theta.network().params(), bc.grad);

    // Critic.
    const auto v = critic::v_update(s.critic, batch);
    m.loss_v = v.loss;
    check_finite(m.loss_v, "loss_v", batch, m);
    s.opt_v.step(s.critic.v.params(), v.grad);
    const auto q = critic::q_update(s.critic, batch);
    m.loss_q = q.loss;
    check_finite(m.loss_q, "loss_q", batch, m);
    s.opt_q1.step(s.critic.q1.params(), q.grad_q1);
    s.opt_q2.step(s.critic.q2.params(), q.grad_q2);
    critic::polyak_update(s.critic);

    // Surrogate policy.
    nn::Vector<float> grad;
    switch (s.step < config.pref_warmup ? Method::bc : method) {
    case Method::paodp: {
        const int p = config.pref_batch > 0 ? std::min(config.pref_batch, b) : b;
        auto pref = prefgen::generate(
            s.theta, s.critic, nn::Matrix<float>(batch.states.leftCols(p)), nn::Matrix<float>(batch.actions.leftCols(p)),
            sampling(config), s.candidate_rng);
        m.mean_selected_q = pref.q_gen.mean();
        prefgen::corrupt_labels(pref, config.label_noise, s.label_rng);
        m.mean_gamma = pref.mean_gamma();
        // Drawn from the preference stream so theta's noise does not depend on the method.
        const auto pref_draw = diffusion::draw_noise<float>(p, d_a, config.K, s.candidate_rng);
        const auto total = prefopt::total_loss(
            s.psi, s.theta, batch.states, batch.actions, bc_draw, pref, pref_draw,
            prefopt::PrefLossConfig{config.eta, config.lambda, config.xi});
        m.loss_imp = total.l_imp;
        m.loss_anti = total.l_anti;
        m.loss_total_psi = total.total;
        grad = total.grad;
        break;
    }
    case Method::wr: {
        const auto d = diffusion::bc_loss(s.psi, batch.states, batch.actions, bc_draw);
        const auto w = prefopt::wr_loss(s.psi, s.critic, batch.states, batch.actions, bc_draw, config.eta_wr);
        const auto xi = static_cast<float>(config.xi);
        m.loss_total_psi = d.loss + xi * w.loss;
        grad = d.grad + xi * w.grad;
        break;
    }
    case Method::bc: {
        const auto d = diffusion::bc_loss(s.psi, batch.states, batch.actions, bc_draw);
        m.loss_total_psi = d.loss;
        grad = d.grad;
        break;
    }
    }
    check_finite(m.loss_total_psi, "loss_total_psi", batch, m);
    s.opt_psi.step(s.psi.network().params(), grad);
    s.step = m.step;
    return m;
}

StepMetrics train_step(TrainState& state, const TrainConfig& config, const OfflineDataset& ds)
{
    const auto batch = sample_batch(ds, config.batch_size, state.data_rng);
    return train_step(state, config, batch);
}

std::string metrics_row(const StepMetrics& m, std::optional<double> eval_score)
{
    std::string row = std::to_string(m.step) + ',' + std::to_string(m.epoch);
    for (double v : {m.loss_bc_theta, m.loss_v, m.loss_q, m.loss_imp, m.loss_anti, m.loss_total_psi, m.mean_gamma})
        row += ',' + format_double(v);
    row += ',';
    if (eval_score)
        row += format_double(*eval_score);
    return row;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int epoch)
{
    return dir / ("ckpt_" + std::to_string(epoch) + ".paoc");
}

void save_checkpoint(const TrainState& s, const TrainConfig& config, const std::filesystem::path& path)
{
    nn::Checkpoint ckpt;
    ckpt.put("theta", s.theta.network().params());
    ckpt.put("psi", s.psi.network().params());
    ckpt.put("q1", s.critic.q1.params());
    ckpt.put("q2", s.critic.q2.params());
    ckpt.put("v", s.critic.v.params());
    ckpt.put("q1_target", s.critic.q1_target.params());
    ckpt.put("q2_target", s.critic.q2_target.params());
    put_adam(ckpt, "opt_theta", s.opt_theta);
    put_adam(ckpt, "opt_psi", s.opt_psi);
    put_adam(ckpt, "opt_q1", s.opt_q1);
    put_adam(ckpt, "opt_q2", s.opt_q2);
    put_adam(ckpt, "opt_v", s.opt_v);
    ckpt.meta["step"] = s.step;
    ckpt.meta["epoch"] = s.epoch;
    ckpt.meta["config"] = config.to_json();
    ckpt.meta["eval_epochs"] = s.eval_epochs;
    ckpt.meta["eval_raw"] = s.eval_raw;
    ckpt.meta["eval_normalized"] = s.eval_history;
    nn::write_checkpoint(ckpt, path);

    const nlohmann::json rng{
        {"data", s.data_rng.state()},   {"noise", s.noise_rng.state()}, {"candidate", s.candidate_rng.state()},
        {"labels", s.label_rng.state()}, {"eval", s.eval_rng.state()}};
    std::ofstream out(rng_sidecar(path));
    if (!(out << rng.dump() << '\n'))
        throw std::runtime_error("cannot write " + rng_sidecar(path).string());
}

TrainState load_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const OfflineDataset& ds)
{
    TrainState s = init_state(config, ds);
    const auto ckpt = nn::read_checkpoint(path);
    get_params(ckpt, "theta", s.theta.network());
    get_params(ckpt, "psi", s.psi.network());
    get_params(ckpt, "q1", s.critic.q1);
    get_params(ckpt, "q2", s.critic.q2);
    get_params(ckpt, "v", s.critic.v);
    get_params(ckpt, "q1_target", s.critic.q1_target);
    get_params(ckpt, "q2_target", s.critic.q2_target);
    get_adam(ckpt, "opt_theta", s.opt_theta);
    get_adam(ckpt, "opt_psi", s.opt_psi);
    get_adam(ckpt, "opt_q1", s.opt_q1);
    get_adam(ckpt, "opt_q2", s.opt_q2);
    get_adam(ckpt, "opt_v", s.opt_v);
    s.step = ckpt.meta.at("step").get<long long>();
    s.epoch = ckpt.meta.at("epoch").get<int>();
    s.eval_epochs = ckpt.meta.value("eval_epochs", std::vector<int>{});
    s.eval_raw = ckpt.meta.value("eval_raw", std::vector<double>{});
    s.eval_history = ckpt.meta.value("eval_normalized", std::vector<double>{});

    std::ifstream in(rng_sidecar(path));
    if (!in)
        throw std::runtime_error("missing rng sidecar for " + path.string());
    const auto rng = nlohmann::json::parse(in);
    s.data_rng.set_state(rng.at("data").get<std::string>());
    s.noise_rng.set_state(rng.at("noise").get<std::string>());
    s.candidate_rng.set_state(rng.at("candidate").get<std::string>());
    s.label_rng.set_state(rng.at("labels").get<std::string>());
    s.eval_rng.set_state(rng.at("eval").get<std::string>());
    return s;
}

std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir))
        return std::nullopt;
    static const std::regex pattern(R"(ckpt_(\d+)\.paoc)");
    int best = -1;
    std::optional<std::filesystem::path> found;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        std::smatch match;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, match, pattern)) {
            const int epoch = std::stoi(match[1]);
            if (epoch > best) {
                best = epoch;
                found = entry.path();
            }
        }
    }
    return found;
}

RunResult run(const TrainConfig& config, const OfflineDataset& raw_ds, const RunOptions& options)
{
    config.validate();
    const OfflineDataset ds = raw_ds.normalized ? raw_ds : normalize_states(raw_ds);
    const auto env = envs::make_env(ds.env_id);

    RunResult result;
    std::optional<std::filesystem::path> resume_from;
    if (options.resume && !options.out.empty())
        resume_from = latest_checkpoint(options.out);
    result.state = resume_from ? load_checkpoint(*resume_from, config, ds) : init_state(config, ds);
    TrainState& s = result.state;

    std::ofstream metrics;
    if (!options.out.empty()) {
        std::filesystem::create_directories(options.out);
        const auto path = options.out / "metrics.csv";
        std::vector<std::string> kept;
        if (resume_from) {
            // Drop rows logged after the checkpoint we resume from.
            std::ifstream in(path);
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line))
                if (!line.empty() && std::stoll(line.substr(0, line.find(','))) <= s.step)
                    kept.push_back(line);
        }
        metrics.open(path, std::ios::trunc);
        for (std::size_t i = 0; i < metrics_columns().size(); ++i)
            metrics << (i ? "," : "") << metrics_columns()[i];
        metrics << '\n';
        for (const auto& line : kept)
            metrics << line << '\n';
        if (!metrics)
            throw std::runtime_error("cannot write " + path.string());
    }

    while (s.epoch < config.epochs) {
        for (int i = 0; i < config.steps_per_epoch; ++i) {
            StepMetrics m;
            try {
                m = train_step(s, config, ds);
            } catch (const NonFiniteLoss& e) {
                if (!options.out.empty()) {
                    std::ofstream dump(options.out / "nonfinite_batch.json");
                    dump << e.dump().dump(1) << '\n';
                }
                throw;
            }
            result.history.push_back(m);
            if (i + 1 < config.steps_per_epoch && metrics.is_open())
                metrics << metrics_row(m, std::nullopt) << '\n';
        }
        ++s.epoch;

        std::optional<double> score;
        if (config.eval_every > 0 && s.epoch % config.eval_every == 0) {
            const auto actor = eval::diffusion_actor(s.psi, ds);
            const std::uint64_t seed = s.eval_rng.engine()();
            const double raw = eval::rollout_score(actor, *env, config.eval_episodes, seed);
            score = eval::normalize_score(raw, ds.ref_random_score, ds.ref_expert_score);
            s.eval_epochs.push_back(s.epoch);
            s.eval_raw.push_back(raw);
            s.eval_history.push_back(*score);
            if (options.on_eval)
                options.on_eval(s.epoch, *score);
            if (!options.quiet)
                std::cerr << "epoch " << s.epoch << " raw " << raw << " normalized " << *score << '\n';
        }
        if (metrics.is_open()) {
            metrics << metrics_row(result.history.back(), score) << '\n';
            metrics.flush();
        }
        if (!options.out.empty() && config.checkpoint_every > 0 && s.epoch % config.checkpoint_every == 0)
            save_checkpoint(s, config, checkpoint_path(options.out, s.epoch));
    }
    return result;
}

}  // namespace paodp::trainer
