#ifndef ABD_EMULATOR_HPP
#define ABD_EMULATOR_HPP

#include <array>
#include <cstdint>
#include <vector>

#include "abd/tape.hpp"
#include "abd/tensor.hpp"

namespace abd::emu {

// parameter ranges of the surrogate's input space (vegetation class)
constexpr double kLaiMax = 6.0;

struct Mlp {
    Tensor w0, b0, w1, b1, w2, b2; // weights stored [in, out]; x is [N, in]
};

// Two-network radiative surrogate: params -> spectrum and spectrum -> params.
// Frozen after training; the round trip defines the physical manifold.
struct Emulator {
    Mlp forward_net; // 3 -> 64 -> 64 -> B, silu hidden, linear out
    Mlp inverse_net; // B -> 64 -> 64 -> 3, silu hidden, range-squashed out
    std::vector<double> wavelengths;
    bool trained = false;
    std::vector<double> loss_history; // per-epoch averages across phases
    double heldout_rmse = -1.0;       // round-trip RMSE on the split
};

struct TrainPair {
    std::array<double, 3> params; // lai, cab, moisture
    std::vector<double> spectrum;
};

std::vector<TrainPair> make_pairs(int n, int bands, uint64_t seed);

// MSE training of both directions plus a round-trip fine-tune of the inverse
// through the frozen forward net. 10% of the pairs are held out.
Emulator train_emulator(const std::vector<TrainPair>& pairs, int epochs, double lr, uint64_t seed);

// forward_net(inverse_net(x)) per row; StateError when untrained
ad::Var round_trip(ad::Var spectra_nb, const Emulator& emulator);
Tensor round_trip_value(const Tensor& spectra_nb, const Emulator& emulator);

double roundtrip_rmse(const Tensor& spectra_nb, const Emulator& emulator);

// FNV-1a over every weight byte; used by the freeze check
uint64_t weights_hash(const Emulator& emulator);

} // namespace abd::emu

#endif
