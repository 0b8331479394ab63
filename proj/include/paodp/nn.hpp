#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "paodp/rng.hpp"

namespace paodp::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
Scalar mish(Scalar x);
template <typename Scalar>
Scalar mish_derivative(Scalar x);

/// Feed-forward network: Mish on hidden layers, identity on the output.
/// Inputs and outputs are column-major batches (one column per sample).
/// All parameters live in one flat vector: per layer, W (out x in,
/// column-major) followed by b (out).
template <typename Scalar>
class Mlp {
public:
    /// Intermediates of one recorded forward pass.
    struct Tape {
        std::vector<Matrix<Scalar>> inputs;  // input to each layer
        std::vector<Matrix<Scalar>> pre;     // pre-activation of each hidden layer
        bool empty() const { return inputs.empty(); }
    };

    Mlp() = default;
    explicit Mlp(std::vector<int> widths);

    /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
    void init_uniform(Rng& rng);

    const std::vector<int>& widths() const { return widths_; }
    int input_dim() const { return widths_.front(); }
    int output_dim() const { return widths_.back(); }
    int num_layers() const { return static_cast<int>(widths_.size()) - 1; }
    Eigen::Index num_params() const { return params_.size(); }

    Vector<Scalar>& params() { return params_; }
    const Vector<Scalar>& params() const { return params_; }

    Eigen::Map<Matrix<Scalar>> weight(int layer);
    Eigen::Map<const Matrix<Scalar>> weight(int layer) const;
    Eigen::Map<Vector<Scalar>> bias(int layer);
    Eigen::Map<const Vector<Scalar>> bias(int layer) const;

    Matrix<Scalar> forward(const Matrix<Scalar>& input) const;
    Matrix<Scalar> forward(const Matrix<Scalar>& input, Tape& tape) const;
    /// Continues an inference pass from the first layer's pre-activation
    /// (W_0 x + b_0), for callers that assemble it from cached pieces.
    Matrix<Scalar> forward_from_first(const Matrix<Scalar>& first_pre) const;

    /// Flat parameter gradient of sum_j <grad_output_j, f(x_j)>.
    /// Throws std::logic_error when the tape holds no forward pass.
    Vector<Scalar> backward(const Tape& tape, const Matrix<Scalar>& grad_output) const;

    template <typename Other>
    Mlp<Other> cast() const
    {
        Mlp<Other> out(widths_);
        out.params() = params_.template cast<Other>();
        return out;
    }

private:
    Eigen::Index weight_offset(int layer) const { return offsets_[static_cast<std::size_t>(layer)]; }
    Eigen::Index bias_offset(int layer) const;

    std::vector<int> widths_;
    std::vector<Eigen::Index> offsets_;
    Vector<Scalar> params_;
};

/// Keeps freed activation buffers in the heap instead of returning them
/// to the OS, which otherwise dominates the cost of large batched passes.
/// No-op outside glibc.
void tune_allocator();

/// Interleaved sinusoidal embedding: out[2i] = sin(k w_i), out[2i+1] = cos(k w_i),
/// w_i = base^(-2i/dim).
Eigen::VectorXd embed_time(int k, int dim, double base = 10000.0);

struct AdamConfig {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

template <typename Scalar>
class Adam {
public:
    Adam() = default;
    Adam(Eigen::Index num_params, AdamConfig config);

    void step(Vector<Scalar>& params, const Vector<Scalar>& grad);

    const AdamConfig& config() const { return config_; }
    long long steps() const { return step_; }
    Vector<Scalar>& first_moment() { return m_; }
    Vector<Scalar>& second_moment() { return v_; }
    const Vector<Scalar>& first_moment() const { return m_; }
    const Vector<Scalar>& second_moment() const { return v_; }
    void set_steps(long long steps) { step_ = steps; }

private:
    AdamConfig config_;
    Vector<Scalar> m_;
    Vector<Scalar> v_;
    long long step_ = 0;
};

/// Central finite differences of `loss` around `params`.
Eigen::VectorXd finite_difference_gradient(
    const std::function<double(const Eigen::VectorXd&)>& loss, const Eigen::VectorXd& params, double h = 1e-5);

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor).
double max_relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric, double floor = 1e-6);

// Checkpoint container (magic "PAOC"): JSON manifest of tensor names and
// shapes followed by the float32 tensors in manifest order.

struct Tensor {
    std::vector<Eigen::Index> shape;
    std::vector<float> values;
};

struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    nlohmann::json meta = nlohmann::json::object();

    void put(const std::string& name, const Eigen::VectorXf& v);
    Eigen::VectorXf get(const std::string& name) const;
};

inline constexpr char kCheckpointMagic[] = "PAOC";
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

extern template class Mlp<float>;
extern template class Mlp<double>;
extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace paodp::nn
