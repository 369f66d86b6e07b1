// Copyright 2026 The twobath Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Analytic models: ancilla cooling rate equations, the fast and slow cooling
// limits, and the round-to-round Markov chain over data error classes.
//
// Error classes of the 3-bit data register are labelled 0 (|000>), a (one
// bit set), b (two bits set) and 7 (|111>). Chain states hold class totals.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace twobath {

//---------------------------------------------------------------------------//
// Ancilla cooling
//---------------------------------------------------------------------------//

/// Populations of the 8 ancilla basis states, indexed by the decimal label.
using AncillaPopulations = std::array<double, 8>;

struct CoolingRates {
    double A = 0.0;  // decay, Gamma_c (n_c + 1)
    double B = 0.0;  // excitation, Gamma_c n_c

    static CoolingRates from_reservoir(double gamma_c, double n_c) {
        if (gamma_c < 0.0 || n_c < 0.0) throw std::invalid_argument("cooling rates must be non-negative");
        return {gamma_c * (n_c + 1.0), gamma_c * n_c};
    }
};

/// dP/dt for independent decay (A) and excitation (B) of three ancilla bits.
inline AncillaPopulations cooling_rhs(const AncillaPopulations& P, const CoolingRates& r) {
    AncillaPopulations d{};
    for (unsigned j = 0; j < 8; ++j) {
        for (unsigned bit = 1; bit < 8; bit <<= 1) {
            const unsigned other = j ^ bit;
            const double rate = (j & bit) ? r.A : r.B;  // leaves j
            d[j] -= rate * P[j];
            d[other] += rate * P[j];
        }
    }
    return d;
}

/// Classical RK4 on the cooling equations.
inline AncillaPopulations integrate_cooling(AncillaPopulations P, const CoolingRates& r, double t, int steps = 1000) {
    if (t < 0.0 || steps < 1) throw std::invalid_argument("integrate_cooling: bad time grid");
    const double h = t / steps;
    auto axpy = [](const AncillaPopulations& x, double a, const AncillaPopulations& y) {
        AncillaPopulations out;
        for (std::size_t i = 0; i < 8; ++i) out[i] = x[i] + a * y[i];
        return out;
    };
    for (int s = 0; s < steps; ++s) {
        const auto k1 = cooling_rhs(P, r);
        const auto k2 = cooling_rhs(axpy(P, h / 2, k1), r);
        const auto k3 = cooling_rhs(axpy(P, h / 2, k2), r);
        const auto k4 = cooling_rhs(axpy(P, h, k3), r);
        for (std::size_t i = 0; i < 8; ++i) P[i] += h / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    }
    return P;
}

/// Detailed-balance steady state: each bit excited with probability B/(A+B).
inline AncillaPopulations cooling_steady_state(const CoolingRates& r) {
    if (r.A + r.B <= 0.0) throw std::invalid_argument("cooling_steady_state: no cooling");
    const double q = r.B / (r.A + r.B);
    AncillaPopulations P;
    for (unsigned j = 0; j < 8; ++j) {
        const int w = std::popcount(j);
        P[j] = std::pow(q, w) * std::pow(1.0 - q, 3 - w);
    }
    return P;
}

/// ((n_c + 1) / (2 n_c + 1))^3.
inline double ancilla_steady_fidelity(double n_c) {
    if (!(n_c >= 0.0)) throw std::invalid_argument("ancilla_steady_fidelity: n_c must be non-negative");
    if (std::isinf(n_c)) return 0.125;
    return std::pow((n_c + 1.0) / (2.0 * n_c + 1.0), 3);
}

/// Populations at time t from basis state `initial` with B = 0. Every excited
/// bit decays independently, so P_j = x^|j| (1 - x)^(|i| - |j|) for j a
/// sub-pattern of i, with x = exp(-A t).
inline AncillaPopulations cooling_closed_form(unsigned initial, double A, double t) {
    if (initial > 7) throw std::invalid_argument("cooling_closed_form: initial state must be 0..7");
    if (A < 0.0 || t < 0.0) throw std::invalid_argument("cooling_closed_form: A and t must be non-negative");
    const double x = std::exp(-A * t);
    const int wi = std::popcount(initial);
    AncillaPopulations P{};
    for (unsigned j = 0; j < 8; ++j) {
        if ((j & ~initial) != 0) continue;
        const int wj = std::popcount(j);
        P[j] = std::pow(x, wj) * std::pow(1.0 - x, wi - wj);
    }
    return P;
}

/// Ancilla fidelity after cooling for time t, given the probabilities p[w] of
/// w excited ancillas before cooling. Three excitations need three decays,
/// hence (1 - x)^3; `cubic_last_term = false` weights that term by (1 - x)^2
/// instead, for comparison.
inline double slow_cooling_fidelity(const std::array<double, 4>& p, double x, bool cubic_last_term = true) {
    const double y = 1.0 - x;
    return p[0] + p[1] * y + p[2] * y * y + p[3] * std::pow(y, cubic_last_term ? 3 : 2);
}

/// Self-consistent slow-cooling fidelity (1 - a)(1 - x) / (1 - a - x + 2 a x).
inline double slow_cooling_fss(double alpha, double x) {
    if (alpha < 0.0 || alpha >= 1.0 || x < 0.0 || x > 1.0)
        throw std::invalid_argument("slow_cooling_fss: alpha must be in [0,1) and x in [0,1]");
    const double den = 1.0 - alpha - x + 2.0 * alpha * x;
    if (std::abs(den) < 1e-12) throw std::domain_error("slow_cooling_fss: vanishing denominator");
    return (1.0 - alpha) * (1.0 - x) / den;
}

//---------------------------------------------------------------------------//
// Round events and flows
//---------------------------------------------------------------------------//

struct RoundEventParams {
    double F_a = 1.0;    // ancilla fidelity after cooling
    double alpha = 0.0;  // ancilla error probability per qubit and round
    double beta = 0.0;   // data error probability per qubit and round

    void validate() const {
        for (double v : {F_a, alpha, beta})
            if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("round event parameters must lie in [0,1]");
    }

    /// F_a from the reservoir, alpha = 15 gamma_h, beta = 16 gamma_h.
    static RoundEventParams from_noise(double gamma_h, double n_c) {
        return {ancilla_steady_fidelity(n_c), 15.0 * gamma_h, 16.0 * gamma_h};
    }
};

/// Event (cooled, prepared, data errors) with i, j in {1, 2} and k in {1..4}.
constexpr std::size_t event_index(int i, int j, int k) {
    return static_cast<std::size_t>((i - 1) * 8 + (j - 1) * 4 + (k - 1));
}

/// p_111 .. p_224 in label order. Failed-cooling events carry the same value
/// for both preparation labels (p_21k = p_22k).
using EventProbabilities = std::array<double, 16>;

inline EventProbabilities event_probabilities(const RoundEventParams& q) {
    q.validate();
    const double a = q.alpha, b = q.beta;
    const double good_prep = q.F_a * (std::pow(1 - a, 3) + std::pow(a, 3));
    const double bad_prep = q.F_a * (3 * a * (1 - a) * (1 - a) + 3 * a * a * (1 - a));
    const double uncooled = 1.0 - q.F_a;
    const std::array<double, 4> data{std::pow(1 - b, 3), 3 * b * (1 - b) * (1 - b), 3 * b * b * (1 - b), b * b * b};
    EventProbabilities p{};
    for (int k = 1; k <= 4; ++k) {
        p[event_index(1, 1, k)] = good_prep * data[k - 1];
        p[event_index(1, 2, k)] = bad_prep * data[k - 1];
        p[event_index(2, 1, k)] = uncooled * data[k - 1];
        p[event_index(2, 2, k)] = uncooled * data[k - 1];
    }
    return p;
}

/// Sum over distinct events, counting the p_21k = p_22k pairs once.
inline double event_total(const EventProbabilities& p) {
    double s = 0.0;
    for (int j = 1; j <= 2; ++j)
        for (int k = 1; k <= 4; ++k) s += p[event_index(1, j, k)];
    for (int k = 1; k <= 4; ++k) s += p[event_index(2, 1, k)];
    return s;
}

enum class ErrorClass { zero = 0, a = 1, b = 2, seven = 3 };

/// Conditional flows f(from, to) between error classes over one round.
struct FlowCoefficients {
    Eigen::Matrix4d m = Eigen::Matrix4d::Zero();

    double operator()(ErrorClass from, ErrorClass to) const {
        return m(static_cast<int>(from), static_cast<int>(to));
    }
};

/// Flows for 0 and 1 initial errors; 2 and 3 follow from the 000 <-> 111
/// relabelling symmetry. The 2/9 weight on p_213 in f_a0 makes the a-row sum
/// to one.
inline FlowCoefficients flow_coefficients(const EventProbabilities& p) {
    for (double v : p)
        if (!(v >= -1e-15 && v <= 1.0 + 1e-15)) throw std::invalid_argument("flow_coefficients: probabilities out of range");
    const auto P = [&](int i, int j, int k) { return p[event_index(i, j, k)]; };
    const double f00 = P(1, 1, 1) + P(1, 1, 2) + P(1, 2, 2) / 3 + P(2, 1, 2) / 3;
    const double f0a = P(1, 2, 1) + 2 * P(1, 2, 3) / 3 + P(2, 1, 1) + 2 * P(2, 1, 3) / 3;
    const double f0b = P(1, 1, 3) + 2 * P(1, 2, 2) / 3 + P(1, 2, 4) + 2 * P(2, 1, 2) / 3 + P(2, 1, 4);
    const double f07 = P(1, 1, 4) + P(1, 2, 3) / 3 + P(2, 1, 3) / 3;
    const double fa0 = P(1, 1, 1) + P(1, 1, 2) / 3 + P(1, 2, 1) / 3 + 2 * P(1, 2, 3) / 9 + P(2, 1, 1) / 3 +
                       2 * P(2, 1, 3) / 9;
    const double faa = 2 * P(1, 1, 3) / 3 + 7 * P(1, 2, 2) / 9 + 2 * P(1, 2, 4) / 3 + 7 * P(2, 1, 2) / 9 +
                       2 * P(2, 1, 4) / 3;
    const double fab = 2 * P(1, 1, 2) / 3 + P(1, 1, 4) + 2 * P(1, 2, 1) / 3 + 7 * P(1, 2, 3) / 9 +
                       2 * P(2, 1, 1) / 3 + 7 * P(2, 1, 3) / 9;
    const double fa7 = P(1, 1, 3) / 3 + 2 * P(1, 2, 2) / 9 + P(1, 2, 4) / 3 + 2 * P(2, 1, 2) / 9 + P(2, 1, 4) / 3;

    FlowCoefficients f;
    f.m << f00, f0a, f0b, f07,  //
        fa0, faa, fab, fa7,     //
        fa7, fab, faa, fa0,     //
        f07, f0b, f0a, f00;
    for (int r = 0; r < 4; ++r)
        if (std::abs(f.m.row(r).sum() - 1.0) > 1e-10)
            throw std::invalid_argument("flow_coefficients: row " + std::to_string(r) + " does not sum to 1");
    return f;
}

//---------------------------------------------------------------------------//
// Round chain
//---------------------------------------------------------------------------//

struct RoundChainState {
    double P0 = 1.0;
    double Pa = 0.0;
    double Pb = 0.0;
    double P7 = 0.0;

    double total() const { return P0 + Pa + Pb + P7; }
    Eigen::RowVector4d as_row() const { return {P0, Pa, Pb, P7}; }
    static RoundChainState from_row(const Eigen::RowVector4d& v) { return {v(0), v(1), v(2), v(3)}; }
};

/// States for rounds 0..rounds (element 0 is `initial`).
inline std::vector<RoundChainState> iterate_round_chain(const RoundChainState& initial, const FlowCoefficients& f,
                                                        int rounds) {
    if (rounds < 0) throw std::invalid_argument("iterate_round_chain: negative round count");
    if (std::abs(initial.total() - 1.0) > 1e-12) throw std::invalid_argument("iterate_round_chain: state not normalized");
    std::vector<RoundChainState> out{initial};
    out.reserve(static_cast<std::size_t>(rounds) + 1);
    Eigen::RowVector4d v = initial.as_row();
    for (int i = 0; i < rounds; ++i) {
        v = v * f.m;
        out.push_back(RoundChainState::from_row(v));
    }
    return out;
}

/// Steady state P0 = (f_a0 + f_a7) / (2 (f_0a + f_0b + f_a0 + f_a7)), exact for
/// the symmetric chain.
inline double chain_steady_p0(const FlowCoefficients& f) {
    using E = ErrorClass;
    const double in = f(E::a, E::zero) + f(E::a, E::seven);
    const double out = f(E::zero, E::a) + f(E::zero, E::b);
    if (in + out <= 0.0) throw std::domain_error("chain_steady_p0: chain is reducible");
    return 0.5 * in / (out + in);
}

/// Stationary distribution by direct solve of pi (T - I) = 0, sum pi = 1.
inline RoundChainState chain_steady_state(const FlowCoefficients& f) {
    Eigen::Matrix<double, 5, 4> a;
    a.topRows<4>() = (f.m - Eigen::Matrix4d::Identity()).transpose();
    a.row(4).setOnes();
    Eigen::Matrix<double, 5, 1> rhs = Eigen::Matrix<double, 5, 1>::Zero();
    rhs(4) = 1.0;
    const Eigen::Vector4d pi = a.colPivHouseholderQr().solve(rhs);
    return {pi(0), pi(1), pi(2), pi(3)};
}

/// 1 - 3 a + (33 - 21 n) a^2.
inline double perturbative_p0(int n, double alpha) {
    if (n < 1) throw std::invalid_argument("perturbative_p0: n must be >= 1");
    return 1.0 - 3.0 * alpha + (33.0 - 21.0 * n) * alpha * alpha;
}

/// First-round fidelity to first order: F_a (1 - 3 alpha - beta) + beta.
inline double first_round_p0(const RoundEventParams& q) { return q.F_a * (1.0 - 3.0 * q.alpha - q.beta) + q.beta; }

struct DecayFit {
    double steady_state = 0.0;
    double delta = 1.0;
    double relative_residual = 0.0;
};

/// Fits P0(n) = ss + c delta^-(n - k) on n in [k, k + window] by least squares
/// on log(P0(n) - ss). With no steady state supplied it is extrapolated from
/// the window's end and middle points (exact for a single exponential).
inline DecayFit fit_decay_constant(const std::vector<double>& p0, int k, std::optional<double> steady_state = {},
                                   int window = 200, double max_residual = 1e-8) {
    if (k < 0 || window < 2) throw std::invalid_argument("fit_decay_constant: bad window");
    const auto first = static_cast<std::size_t>(k);
    const auto last = first + static_cast<std::size_t>(window);
    if (p0.size() <= last) throw std::invalid_argument("fit_decay_constant: sequence too short for the window");

    double ss;
    if (steady_state) {
        ss = *steady_state;
    } else {
        const double x0 = p0[first], x1 = p0[first + window / 2], x2 = p0[first + 2 * (window / 2)];
        const double den = x0 + x2 - 2 * x1;
        if (std::abs(den) < 1e-300) throw std::domain_error("fit_decay_constant: cannot extrapolate steady state");
        ss = (x0 * x2 - x1 * x1) / den;
    }

    std::vector<double> d;
    for (std::size_t n = first; n <= last; ++n) d.push_back(p0[n] - ss);
    const double sign = d.front() > 0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i] * sign <= 0.0) throw std::domain_error("fit_decay_constant: tail crosses the steady state");
        if (i > 0 && std::abs(d[i]) > std::abs(d[i - 1]))
            throw std::domain_error("fit_decay_constant: non-monotone tail");
    }

    // Linear regression of log|d| on m = n - k.
    const double m_count = static_cast<double>(d.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double x = static_cast<double>(i), y = std::log(std::abs(d[i]));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double slope = (m_count * sxy - sx * sy) / (m_count * sxx - sx * sx);
    const double intercept = (sy - slope * sx) / m_count;

    double res = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double model = sign * std::exp(intercept + slope * static_cast<double>(i));
        res += (d[i] - model) * (d[i] - model);
        norm += d[i] * d[i];
    }
    const double rel = std::sqrt(res / norm);
    if (rel > max_residual) throw std::domain_error("fit_decay_constant: residual above tolerance");
    return {ss, std::exp(-slope), rel};
}

}  // namespace twobath
