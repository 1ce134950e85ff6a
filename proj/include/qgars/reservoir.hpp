#pragma once

#include "qgars/matrix_io.hpp"

#include <cmath>
#include <complex>
#include <span>
#include <string>
#include <vector>

namespace qgars {

using Complex = std::complex<double>;

// Rb 70S van der Waals coefficient, 2*pi * 862690 MHz um^6, in rad/us um^6.
inline constexpr double kDefaultC6 = 2.0 * M_PI * 862690.0;

// Physical and readout parameters of a 1-D chain of laser-driven
// neutral atoms. Units: lengths in um, times in us, frequencies in rad/us.
// The drive and detunings are held constant over the whole evolution.
struct ReservoirConfig {
    int n_atoms = 12;
    double lattice_spacing = 10.0;
    double rabi_frequency = M_PI;
    double c6_coefficient = kDefaultC6;
    double global_detuning = 0.0;
    // Per-site modulation alpha_j in [0, 1]. Empty means all ones.
    std::vector<double> site_modulation;
    // Latent values are squashed into [0, detuning_scale].
    double detuning_scale = 2.0 * M_PI;
    double total_time = 4.0;
    int n_timesteps = 16;
    std::vector<int> observable_orders{1, 2, 3};

    // Throws Error(invalid_config) naming the offending field.
    void validate() const;

    double modulation(int site) const {
        return site_modulation.empty() ? 1.0 : site_modulation[static_cast<std::size_t>(site)];
    }

    double timestep() const { return total_time / n_timesteps; }
};

// Statevector over 2^N basis states. Bit j of the basis index is set iff
// atom j is in the Rydberg state.
class QuantumState {
public:
    QuantumState() = default;
    explicit QuantumState(std::vector<Complex> amplitudes);

    // |g g ... g>, i.e. index 0.
    static QuantumState ground(int n_atoms);

    int n_atoms() const { return n_atoms_; }
    std::size_t dimension() const { return amplitudes_.size(); }
    std::span<const Complex> amplitudes() const { return amplitudes_; }
    std::span<Complex> amplitudes() { return amplitudes_; }

    double norm() const;
    void normalize();

private:
    std::vector<Complex> amplitudes_;
    int n_atoms_ = 0;
};

// Matrix-free form of the Rydberg Hamiltonian: a real diagonal holding the
// interaction and detuning terms, plus a uniform coupling Omega/2 between
// every basis index and its N single-bit-flip neighbours.
struct HamiltonianAction {
    int n_atoms = 0;
    std::vector<double> diagonal;
    double rabi_coupling = 0.0;

    // out = H * in. `in` and `out` must not alias.
    void apply(std::span<const Complex> in, std::span<Complex> out) const;

    // Gershgorin enclosure of the spectrum.
    double spectrum_lower() const;
    double spectrum_upper() const;
};

// Sum over requested orders k of C(n_atoms, k).
int count_observables(int n_atoms, std::span<const int> orders);
int embedding_dimension(const ReservoirConfig& config);

// Van der Waals pair coupling for atoms `j` and `k` of the chain.
double interaction_strength(const ReservoirConfig& config, int j, int k);

HamiltonianAction build_hamiltonian(const ReservoirConfig& config,
                                    std::span<const double> local_detunings);

// exp(-i H dt) |state>, renormalised. Throws Error(numerical) if the norm
// drifted by more than 1e-6 before renormalisation; the drift is reported
// through `norm_drift` when given.
QuantumState evolve(const QuantumState& state, const HamiltonianAction& h, double dt,
                    double* norm_drift = nullptr);

// Expectation values of the Z-parity observables, Z = +1 on |g>, -1 on |r>.
// Order: every single site, then pairs, then triples, each lexicographic.
std::vector<double> measure_observables(const QuantumState& state, const ReservoirConfig& config);

// Site masks of the measured observables in readout order.
std::vector<std::uint32_t> observable_masks(const ReservoirConfig& config);
// "Z0", "Z0Z3", ... in readout order.
std::vector<std::string> observable_labels(const ReservoirConfig& config);
// "t{step}_{label}" for every embedding column.
std::vector<std::string> embedding_labels(const ReservoirConfig& config);

// Logistic squashing of each latent coordinate into [0, detuning_scale].
std::vector<double> map_latent_to_detuning(std::span<const double> latent,
                                           const ReservoirConfig& config);

// Full reservoir feature map: ground state, T evolutions of total_time/T,
// readout after each one.
std::vector<double> embed(std::span<const double> latent, const ReservoirConfig& config);

// Row i of the result is embed(latents.row(i)). Rows are distributed over
// `parallelism` worker threads; the result does not depend on it.
Matrix embed_batch(const Matrix& latents, const ReservoirConfig& config, int parallelism = 1);

}  // namespace qgars
