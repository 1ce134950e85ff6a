#include "qgars/reservoir.hpp"

#include "qgars/error.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <exception>
#include <sstream>
#include <thread>

namespace qgars {

namespace {

constexpr double kNormTolerance = 1e-6;
// Largest Chebyshev argument r*dt handled in one go; longer steps are split.
constexpr double kMaxChebyshevArgument = 40.0;
constexpr double kCoefficientCutoff = 1e-18;

// J_0(x) .. J_{n-1}(x) by Miller's backward recurrence, normalised with
// J_0 + 2 * sum_k J_{2k} = 1.
std::vector<double> bessel_j_sequence(double x, int n) {
    std::vector<double> j(static_cast<std::size_t>(n), 0.0);
    if (x == 0.0) {
        j[0] = 1.0;
        return j;
    }
    const int start = n + 20 + static_cast<int>(std::sqrt(40.0 * n));
    double next = 0.0;
    double current = 1e-300;
    double even_sum = 0.0;
    for (int k = start; k >= 1; --k) {
        const double prev = 2.0 * k / x * current - next;
        next = current;
        current = prev;
        // current now holds the unnormalised J_{k-1}
        const int order = k - 1;
        if (order < n) j[static_cast<std::size_t>(order)] = current;
        if (order > 0 && order % 2 == 0) even_sum += current;
        if (std::abs(current) > 1e250) {
            for (auto& v : j) v *= 1e-250;
            next *= 1e-250;
            current *= 1e-250;
            even_sum *= 1e-250;
        }
    }
    const double norm = current + 2.0 * even_sum;
    for (auto& v : j) v /= norm;
    return j;
}

// Chebyshev expansion of exp(-i H dt) applied to `psi` in place. The
// spectrum of H must lie in [centre - radius, centre + radius].
void chebyshev_step(std::vector<Complex>& psi, const HamiltonianAction& h, double centre,
                    double radius, double dt) {
    const std::size_t dim = psi.size();
    const Complex global_phase = std::polar(1.0, -centre * dt);
    if (radius == 0.0) {
        for (auto& a : psi) a *= global_phase;
        return;
    }
    const double x = radius * dt;
    int n_terms = static_cast<int>(std::ceil(x + 10.0 * std::cbrt(x) + 20.0));
    const auto bessel = bessel_j_sequence(x, n_terms);
    while (n_terms > 1 && std::abs(bessel[static_cast<std::size_t>(n_terms - 1)]) < kCoefficientCutoff) {
        --n_terms;
    }

    // Shifted, scaled operator H' = (H - centre) / radius.
    std::vector<double> diag(dim);
    for (std::size_t b = 0; b < dim; ++b) diag[b] = (h.diagonal[b] - centre) / radius;
    const double coupling = h.rabi_coupling / radius;
    const int n = h.n_atoms;
    auto apply_scaled = [&](const std::vector<Complex>& in, std::vector<Complex>& out) {
        for (std::size_t b = 0; b < dim; ++b) {
            Complex flips{0.0, 0.0};
            for (int j = 0; j < n; ++j) flips += in[b ^ (std::size_t{1} << j)];
            out[b] = diag[b] * in[b] + coupling * flips;
        }
    };

    std::vector<Complex> t_prev = psi;  // T_0 psi
    std::vector<Complex> t_curr(dim);   // T_1 psi
    std::vector<Complex> t_next(dim);
    std::vector<Complex> result(dim);
    for (std::size_t b = 0; b < dim; ++b) result[b] = bessel[0] * t_prev[b];
    if (n_terms > 1) {
        apply_scaled(t_prev, t_curr);
        const Complex c1 = 2.0 * Complex{0.0, -1.0} * bessel[1];
        for (std::size_t b = 0; b < dim; ++b) result[b] += c1 * t_curr[b];
    }
    Complex minus_i_pow{0.0, -1.0};
    for (int k = 2; k < n_terms; ++k) {
        apply_scaled(t_curr, t_next);
        for (std::size_t b = 0; b < dim; ++b) t_next[b] = 2.0 * t_next[b] - t_prev[b];
        minus_i_pow *= Complex{0.0, -1.0};
        const Complex ck = 2.0 * minus_i_pow * bessel[static_cast<std::size_t>(k)];
        for (std::size_t b = 0; b < dim; ++b) result[b] += ck * t_next[b];
        std::swap(t_prev, t_curr);
        std::swap(t_curr, t_next);
    }
    for (std::size_t b = 0; b < dim; ++b) psi[b] = global_phase * result[b];
}

std::uint64_t binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    std::uint64_t r = 1;
    for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
    return r;
}

void validate_orders(int n_atoms, std::span<const int> orders) {
    if (orders.empty()) fail(ErrorCode::invalid_config, "observable_orders must be non-empty");
    for (int k : orders) {
        if (k < 1 || k > 3) {
            fail(ErrorCode::invalid_config,
                 "observable order " + std::to_string(k) + " not in {1,2,3}");
        }
        if (k > n_atoms) {
            fail(ErrorCode::invalid_config, "observable order " + std::to_string(k) +
                                                " exceeds n_atoms " + std::to_string(n_atoms));
        }
    }
}

std::vector<int> sorted_unique(std::span<const int> orders) {
    std::vector<int> v(orders.begin(), orders.end());
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

}  // namespace

void ReservoirConfig::validate() const {
    if (n_atoms < 1) fail(ErrorCode::invalid_config, "n_atoms must be >= 1");
    if (n_atoms > 24) fail(ErrorCode::invalid_config, "n_atoms > 24 exceeds the statevector budget");
    if (!(lattice_spacing > 0.0)) fail(ErrorCode::invalid_config, "lattice_spacing must be > 0");
    if (!(total_time > 0.0)) fail(ErrorCode::invalid_config, "total_time must be > 0");
    if (n_timesteps < 1) fail(ErrorCode::invalid_config, "n_timesteps must be >= 1");
    if (!std::isfinite(rabi_frequency) || !std::isfinite(c6_coefficient) ||
        !std::isfinite(global_detuning) || !std::isfinite(detuning_scale)) {
        fail(ErrorCode::invalid_config, "reservoir frequencies must be finite");
    }
    if (c6_coefficient < 0.0) fail(ErrorCode::invalid_config, "c6_coefficient must be >= 0");
    if (!site_modulation.empty()) {
        if (static_cast<int>(site_modulation.size()) != n_atoms) {
            fail(ErrorCode::invalid_config, "site_modulation length " +
                                                std::to_string(site_modulation.size()) +
                                                " != n_atoms " + std::to_string(n_atoms));
        }
        for (double a : site_modulation) {
            if (!(a >= 0.0 && a <= 1.0)) fail(ErrorCode::invalid_config, "site_modulation entries must lie in [0, 1]");
        }
    }
    validate_orders(n_atoms, observable_orders);
}

QuantumState::QuantumState(std::vector<Complex> amplitudes) : amplitudes_(std::move(amplitudes)) {
    const std::size_t dim = amplitudes_.size();
    if (dim == 0 || !std::has_single_bit(dim)) {
        fail(ErrorCode::shape, "state dimension " + std::to_string(dim) + " is not a power of two");
    }
    n_atoms_ = std::countr_zero(dim);
}

QuantumState QuantumState::ground(int n_atoms) {
    std::vector<Complex> amps(std::size_t{1} << n_atoms, Complex{0.0, 0.0});
    amps[0] = 1.0;
    return QuantumState(std::move(amps));
}

double QuantumState::norm() const {
    double s = 0.0;
    for (const auto& a : amplitudes_) s += std::norm(a);
    return std::sqrt(s);
}

void QuantumState::normalize() {
    const double n = norm();
    if (!(n > 0.0) || !std::isfinite(n)) fail(ErrorCode::numerical, "cannot normalise a zero or non-finite state");
    for (auto& a : amplitudes_) a /= n;
}

void HamiltonianAction::apply(std::span<const Complex> in, std::span<Complex> out) const {
    const std::size_t dim = diagonal.size();
    if (in.size() != dim || out.size() != dim) fail(ErrorCode::shape, "Hamiltonian/state dimension mismatch");
    for (std::size_t b = 0; b < dim; ++b) {
        Complex flips{0.0, 0.0};
        for (int j = 0; j < n_atoms; ++j) flips += in[b ^ (std::size_t{1} << j)];
        out[b] = diagonal[b] * in[b] + rabi_coupling * flips;
    }
}

double HamiltonianAction::spectrum_lower() const {
    return *std::min_element(diagonal.begin(), diagonal.end()) - n_atoms * std::abs(rabi_coupling);
}

double HamiltonianAction::spectrum_upper() const {
    return *std::max_element(diagonal.begin(), diagonal.end()) + n_atoms * std::abs(rabi_coupling);
}

int count_observables(int n_atoms, std::span<const int> orders) {
    validate_orders(n_atoms, orders);
    std::uint64_t total = 0;
    for (int k : sorted_unique(orders)) total += binomial(n_atoms, k);
    return static_cast<int>(total);
}

int embedding_dimension(const ReservoirConfig& config) {
    config.validate();
    return config.n_timesteps * count_observables(config.n_atoms, config.observable_orders);
}

double interaction_strength(const ReservoirConfig& config, int j, int k) {
    const double r = std::abs(j - k) * config.lattice_spacing;
    return config.c6_coefficient / std::pow(r, 6);
}

HamiltonianAction build_hamiltonian(const ReservoirConfig& config,
                                    std::span<const double> local_detunings) {
    config.validate();
    const int n = config.n_atoms;
    if (static_cast<int>(local_detunings.size()) != n) {
        fail(ErrorCode::shape, "local_detunings length " + std::to_string(local_detunings.size()) +
                                   " != n_atoms " + std::to_string(n));
    }
    std::vector<double> site_term(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        site_term[static_cast<std::size_t>(j)] =
            config.global_detuning + config.modulation(j) * local_detunings[static_cast<std::size_t>(j)];
    }
    std::vector<double> pair(static_cast<std::size_t>(n * n), 0.0);
    for (int j = 0; j < n; ++j) {
        for (int k = j + 1; k < n; ++k) pair[static_cast<std::size_t>(j * n + k)] = interaction_strength(config, j, k);
    }

    HamiltonianAction h;
    h.n_atoms = n;
    h.rabi_coupling = 0.5 * config.rabi_frequency;
    h.diagonal.assign(std::size_t{1} << n, 0.0);
    for (std::size_t b = 0; b < h.diagonal.size(); ++b) {
        double interaction = 0.0;
        double detuning = 0.0;
        for (int j = 0; j < n; ++j) {
            if (!((b >> j) & 1U)) continue;
            detuning += site_term[static_cast<std::size_t>(j)];
            for (int k = j + 1; k < n; ++k) {
                if ((b >> k) & 1U) interaction += pair[static_cast<std::size_t>(j * n + k)];
            }
        }
        h.diagonal[b] = interaction - detuning;
    }
    return h;
}

QuantumState evolve(const QuantumState& state, const HamiltonianAction& h, double dt, double* norm_drift) {
    if (!(dt > 0.0) || !std::isfinite(dt)) fail(ErrorCode::invalid_input, "evolve: dt must be a positive finite time");
    if (state.dimension() != h.diagonal.size()) fail(ErrorCode::shape, "evolve: state and Hamiltonian dimensions differ");

    const double lo = h.spectrum_lower();
    const double hi = h.spectrum_upper();
    const double centre = 0.5 * (lo + hi);
    const double radius = 0.5 * (hi - lo);
    const int substeps = std::max(1, static_cast<int>(std::ceil(radius * dt / kMaxChebyshevArgument)));
    const double sub_dt = dt / substeps;

    std::vector<Complex> psi(state.amplitudes().begin(), state.amplitudes().end());
    for (int s = 0; s < substeps; ++s) chebyshev_step(psi, h, centre, radius, sub_dt);

    QuantumState out(std::move(psi));
    const double drift = std::abs(out.norm() - state.norm());
    if (norm_drift != nullptr) *norm_drift = drift;
    if (!(drift <= kNormTolerance)) {
        std::ostringstream msg;
        msg << "evolve: norm drift " << drift << " exceeds " << kNormTolerance << " at dt = " << dt << " us";
        fail(ErrorCode::numerical, msg.str());
    }
    out.normalize();
    return out;
}

std::vector<std::uint32_t> observable_masks(const ReservoirConfig& config) {
    config.validate();
    const int n = config.n_atoms;
    std::vector<std::uint32_t> masks;
    for (int order : sorted_unique(config.observable_orders)) {
        if (order == 1) {
            for (int i = 0; i < n; ++i) masks.push_back(1U << i);
        } else if (order == 2) {
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j) masks.push_back((1U << i) | (1U << j));
        } else {
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j)
                    for (int k = j + 1; k < n; ++k) masks.push_back((1U << i) | (1U << j) | (1U << k));
        }
    }
    return masks;
}

std::vector<std::string> observable_labels(const ReservoirConfig& config) {
    std::vector<std::string> labels;
    for (std::uint32_t mask : observable_masks(config)) {
        std::string label;
        for (int i = 0; i < config.n_atoms; ++i) {
            if (mask & (1U << i)) label += "Z" + std::to_string(i);
        }
        labels.push_back(std::move(label));
    }
    return labels;
}

std::vector<std::string> embedding_labels(const ReservoirConfig& config) {
    const auto obs = observable_labels(config);
    std::vector<std::string> labels;
    labels.reserve(obs.size() * static_cast<std::size_t>(config.n_timesteps));
    for (int t = 0; t < config.n_timesteps; ++t) {
        for (const auto& o : obs) labels.push_back("t" + std::to_string(t) + "_" + o);
    }
    return labels;
}

std::vector<double> measure_observables(const QuantumState& state, const ReservoirConfig& config) {
    if (state.n_atoms() != config.n_atoms) fail(ErrorCode::shape, "measure_observables: state/config atom count mismatch");
    // Walsh-Hadamard transform of the probability vector: entry S holds
    // sum_b p_b (-1)^popcount(b & S) = <prod_{i in S} Z_i>.
    const std::size_t dim = state.dimension();
    std::vector<double> parity(dim);
    const auto amps = state.amplitudes();
    for (std::size_t b = 0; b < dim; ++b) parity[b] = std::norm(amps[b]);
    for (std::size_t len = 1; len < dim; len <<= 1) {
        for (std::size_t i = 0; i < dim; i += 2 * len) {
            for (std::size_t j = i; j < i + len; ++j) {
                const double a = parity[j];
                const double c = parity[j + len];
                parity[j] = a + c;
                parity[j + len] = a - c;
            }
        }
    }
    const auto masks = observable_masks(config);
    std::vector<double> values(masks.size());
    for (std::size_t i = 0; i < masks.size(); ++i) values[i] = std::clamp(parity[masks[i]], -1.0, 1.0);
    return values;
}

std::vector<double> map_latent_to_detuning(std::span<const double> latent, const ReservoirConfig& config) {
    if (static_cast<int>(latent.size()) != config.n_atoms) {
        fail(ErrorCode::shape, "latent length " + std::to_string(latent.size()) + " != n_atoms " +
                                   std::to_string(config.n_atoms));
    }
    std::vector<double> detunings(latent.size());
    for (std::size_t i = 0; i < latent.size(); ++i) {
        const double z = latent[i];
        if (!std::isfinite(z)) fail(ErrorCode::invalid_input, "latent entry " + std::to_string(i) + " is not finite");
        const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        detunings[i] = config.detuning_scale * s;
    }
    return detunings;
}

std::vector<double> embed(std::span<const double> latent, const ReservoirConfig& config) {
    config.validate();
    const auto detunings = map_latent_to_detuning(latent, config);
    const auto h = build_hamiltonian(config, detunings);
    const double dt = config.timestep();

    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(embedding_dimension(config)));
    auto state = QuantumState::ground(config.n_atoms);
    for (int t = 0; t < config.n_timesteps; ++t) {
        state = evolve(state, h, dt);
        const auto obs = measure_observables(state, config);
        out.insert(out.end(), obs.begin(), obs.end());
    }
    return out;
}

Matrix embed_batch(const Matrix& latents, const ReservoirConfig& config, int parallelism) {
    config.validate();
    const auto rows = static_cast<std::size_t>(latents.rows());
    const int dim = embedding_dimension(config);
    Matrix out(latents.rows(), dim);
    if (rows == 0) return out;
    if (latents.cols() != config.n_atoms) {
        fail(ErrorCode::shape, "embed_batch: latent width " + std::to_string(latents.cols()) +
                                   " != n_atoms " + std::to_string(config.n_atoms));
    }

    std::vector<std::exception_ptr> errors(rows);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        std::vector<double> latent(static_cast<std::size_t>(config.n_atoms));
        for (std::size_t i = next.fetch_add(1); i < rows; i = next.fetch_add(1)) {
            try {
                for (int c = 0; c < config.n_atoms; ++c) latent[static_cast<std::size_t>(c)] = latents(static_cast<Eigen::Index>(i), c);
                const auto e = embed(latent, config);
                for (int c = 0; c < dim; ++c) out(static_cast<Eigen::Index>(i), c) = e[static_cast<std::size_t>(c)];
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto n_threads = static_cast<std::size_t>(std::clamp<int>(parallelism, 1, 256));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(n_threads, rows); ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (std::size_t i = 0; i < rows; ++i) {
        if (!errors[i]) continue;
        try {
            std::rethrow_exception(errors[i]);
        } catch (const Error& e) {
            fail(e.code(), "embed_batch item " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace qgars
