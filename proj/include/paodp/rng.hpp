#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace paodp {

/// Seeded random stream. All randomness in the library flows through
/// instances of this class; the engine state can be captured as text and
/// restored for checkpoint replay.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    /// Independent stream derived from a master seed and a stream name.
    static Rng stream(std::uint64_t seed, std::string_view name);

    double uniform();                          // [0, 1)
    double uniform(double low, double high);   // [low, high)
    int uniform_int(int low, int high);        // inclusive bounds
    double normal();

    template <typename Scalar>
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> normal_matrix(Eigen::Index rows, Eigen::Index cols)
    {
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(rows, cols);
        std::normal_distribution<double> dist(0.0, 1.0);
        for (Eigen::Index j = 0; j < cols; ++j)
            for (Eigen::Index i = 0; i < rows; ++i)
                out(i, j) = static_cast<Scalar>(dist(engine_));
        return out;
    }

    std::mt19937_64& engine() { return engine_; }

    std::string state() const;
    void set_state(const std::string& text);

    friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

private:
    std::mt19937_64 engine_;
};

std::uint64_t fnv1a(std::string_view text);

}  // namespace paodp
