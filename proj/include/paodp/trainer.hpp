#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "paodp/batch.hpp"
#include "paodp/critic.hpp"
#include "paodp/dataset.hpp"
#include "paodp/diffusion.hpp"
#include "paodp/nn.hpp"
#include "paodp/prefgen.hpp"
#include "paodp/prefopt.hpp"
#include "paodp/rng.hpp"

namespace paodp::trainer {

/// How the surrogate policy is improved: preference optimization, advantage
/// weighted regression, or plain behavior cloning.
enum class Method { paodp, wr, bc };

Method parse_method(const std::string& name);
std::string to_string(Method m);

struct TrainConfig {
    int epochs = 30;
    int steps_per_epoch = 1000;
    int batch_size = 256;
    double learning_rate = 3e-4;
    double eta = 0.1;
    double lambda = 0.2;
    double xi = 1.0;
    int n_actions = 10;
    int K = 20;
    std::string strategy = "max";
    double tau = 0.7;
    double gamma = 0.99;
    double rho = 0.005;
    std::uint64_t seed = 0;
    int checkpoint_every = 1;  // epochs; 0 disables
    int eval_every = 1;        // epochs; 0 disables
    int eval_episodes = 50;
    std::string method = "paodp";
    double eta_wr = 0.1;
    double label_noise = 0.0;  // probability of flipping each generated label
    long long pref_warmup = 0;  // steps during which psi only clones the data
    int pref_batch = 0;         // states per preference batch; 0 uses the whole batch
    int hidden = 64;
    int layers = 3;

    void validate() const;
    nlohmann::json to_json() const;
    /// Flat key=value serialization readable by `parse_config`.
    std::string to_text() const;
};

/// Sets one key from its text form. Throws ConfigError on unknown keys or
/// unparsable values.
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);

/// Flat key=value lines; '#' starts a comment. Later keys override earlier ones.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
TrainConfig config_from_json(const nlohmann::json& j);

struct TrainState {
    diffusion::DiffusionPolicy<float> theta;  // behavior policy
    diffusion::DiffusionPolicy<float> psi;    // surrogate optimal policy
    critic::Critic<float> critic;
    nn::Adam<float> opt_theta, opt_psi, opt_q1, opt_q2, opt_v;
    long long step = 0;
    int epoch = 0;
    Rng data_rng, noise_rng, candidate_rng, label_rng, eval_rng;
    std::vector<int> eval_epochs;
    std::vector<double> eval_raw;
    std::vector<double> eval_history;  // normalized score per evaluation
};

/// Fresh state for a normalized dataset; psi starts as an exact copy of theta.
TrainState init_state(const TrainConfig& config, const OfflineDataset& ds);

struct StepMetrics {
    long long step = 0;
    int epoch = 0;
    double loss_bc_theta = 0.0;
    double loss_v = 0.0;
    double loss_q = 0.0;
    double loss_imp = 0.0;
    double loss_anti = 0.0;
    double loss_total_psi = 0.0;
    double mean_gamma = 0.0;
    double mean_selected_q = 0.0;
};

class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(const std::string& what, nlohmann::json dump)
        : std::runtime_error(what), dump_(std::move(dump)) {}
    const nlohmann::json& dump() const { return dump_; }

private:
    nlohmann::json dump_;
};

/// One pass of: theta by bc_loss, critic (V, Q, Polyak), preference
/// generation, psi by its method's loss.
StepMetrics train_step(TrainState& state, const TrainConfig& config, const Batch<float>& batch);

/// Samples a batch from the data stream and runs `train_step`.
StepMetrics train_step(TrainState& state, const TrainConfig& config, const OfflineDataset& ds);

inline const std::vector<std::string>& metrics_columns()
{
    static const std::vector<std::string> cols{
        "step", "epoch", "loss_bc_theta", "loss_v", "loss_q", "loss_imp", "loss_anti", "loss_total_psi",
        "mean_gamma", "eval_score"};
    return cols;
}

std::string metrics_row(const StepMetrics& m, std::optional<double> eval_score);

// Checkpoints: {out}/ckpt_{epoch}.paoc with an rng sidecar ckpt_{epoch}.rng.json.
std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int epoch);
void save_checkpoint(const TrainState& state, const TrainConfig& config, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const OfflineDataset& ds);
/// Latest checkpoint in `dir`, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& dir);

struct RunOptions {
    std::filesystem::path out;  // empty: nothing is written
    bool resume = false;
    bool quiet = true;
    /// Called after each evaluation with (epoch, normalized score).
    std::function<void(int, double)> on_eval;
};

struct RunResult {
    TrainState state;  // eval_* fields hold the full evaluation history
    std::vector<StepMetrics> history;  // steps run by this call
};

/// Full training loop. `ds` may be raw or normalized.
RunResult run(const TrainConfig& config, const OfflineDataset& ds, const RunOptions& options = {});

}  // namespace paodp::trainer
