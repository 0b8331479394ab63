#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace paodp {

struct Transition {
    Eigen::VectorXf state;
    Eigen::VectorXf action;
    float reward = 0.0f;
    Eigen::VectorXf next_state;
    bool terminal = false;
};

/// Columnar transition store. Column i of every matrix belongs to transition i.
struct OfflineDataset {
    std::string env_id;
    Eigen::MatrixXf states;       // d_s x n
    Eigen::MatrixXf actions;      // d_a x n
    Eigen::VectorXf rewards;      // n
    Eigen::MatrixXf next_states;  // d_s x n
    Eigen::VectorXf terminals;    // n, 0.0 or 1.0

    Eigen::VectorXd action_low;
    Eigen::VectorXd action_high;
    Eigen::VectorXd state_mean;
    Eigen::VectorXd state_std;
    double ref_random_score = 0.0;
    double ref_expert_score = 1.0;

    // In-memory only; files always hold raw (environment-unit) states.
    bool normalized = false;

    int state_dim() const { return static_cast<int>(states.rows()); }
    int action_dim() const { return static_cast<int>(actions.rows()); }
    int size() const { return static_cast<int>(states.cols()); }

    Transition transition(int i) const;

    /// Throws std::invalid_argument naming the first violated invariant.
    void validate() const;
};

OfflineDataset make_dataset(
    std::string env_id, const std::vector<Transition>& transitions,
    Eigen::VectorXd action_low, Eigen::VectorXd action_high,
    double ref_random_score, double ref_expert_score);

inline constexpr double kStdFloor = 1e-3;

/// Mean and floored population std of `states` (per row). Floored
/// dimensions are appended to `floored` when given.
void compute_state_stats(
    const Eigen::MatrixXf& states, Eigen::VectorXd& mean, Eigen::VectorXd& std,
    std::vector<int>* floored = nullptr);

/// Z-scores states and next_states with statistics computed over the
/// dataset's states; the statistics are recorded on the result. Emits a
/// warning on stderr (and into `warnings`) for each floored dimension.
OfflineDataset normalize_states(const OfflineDataset& ds, std::vector<std::string>* warnings = nullptr);
OfflineDataset denormalize_states(const OfflineDataset& ds);

Eigen::MatrixXf normalize_observations(const OfflineDataset& ds, const Eigen::MatrixXf& raw);

inline constexpr char kDatasetMagic[] = "PAOD";
inline constexpr std::uint32_t kDatasetVersion = 1;

void write_dataset(const OfflineDataset& ds, const std::filesystem::path& path);
OfflineDataset read_dataset(const std::filesystem::path& path);

/// Number of float32 values in the payload of a dataset with these sizes.
std::size_t dataset_payload_floats(int n, int d_s, int d_a);

/// FNV-1a of the file bytes, hex encoded.
std::string file_hash(const std::filesystem::path& path);

}  // namespace paodp
