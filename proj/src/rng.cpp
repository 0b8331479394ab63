#include "paodp/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace paodp {

std::uint64_t fnv1a(std::string_view text)
{
    std::uint64_t hash = 1469598103934665603ULL;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 1099511628211ULL;
    }
    return hash;
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

Rng Rng::stream(std::uint64_t seed, std::string_view name)
{
    const std::uint64_t tag = fnv1a(name);
    std::seed_seq seq{
        static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
        static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
    Rng rng;
    rng.engine_.seed(seq);
    return rng;
}

double Rng::uniform()
{
    return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
}

double Rng::uniform(double low, double high)
{
    return std::uniform_real_distribution<double>(low, high)(engine_);
}

int Rng::uniform_int(int low, int high)
{
    return std::uniform_int_distribution<int>(low, high)(engine_);
}

double Rng::normal()
{
    return std::normal_distribution<double>(0.0, 1.0)(engine_);
}

std::string Rng::state() const
{
    std::ostringstream out;
    out << engine_;
    return out.str();
}

void Rng::set_state(const std::string& text)
{
    std::istringstream in(text);
    in >> engine_;
    if (in.fail())
        throw std::runtime_error("malformed rng state");
}

}  // namespace paodp
