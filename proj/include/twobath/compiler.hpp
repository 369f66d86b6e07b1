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

/**
 * @file
 * Gate schedules built from the native control terms of the register
 * Hamiltonian: x and z rotations, a Hadamard term, and the two-qubit
 * diagonal "pushing" phase gate.
 *
 * A step lasts one time unit. Its terms act simultaneously on disjoint
 * qubits and generate exp(-i sum_k strength_k G_k). For single-qubit terms
 * G is sigma_x, sigma_z or H (all square to identity); for the pushing gate
 * G = diag{a00, a01, a10, a11} on the pair (i, j), the first label bit
 * belonging to i.
 *
 * Markers fire at the end of their step, after the evolution: a measurement
 * marker projects the listed qubits, and a correction marker applies the
 * sigma_x set that its table assigns to the latest measurement outcome.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "twobath/qstate.hpp"

namespace twobath {

enum class TermKind { x_rotation, z_rotation, hadamard, pushing_gate };

inline std::string_view to_string(TermKind kind) {
    switch (kind) {
        case TermKind::x_rotation: return "X";
        case TermKind::z_rotation: return "Z";
        case TermKind::hadamard: return "H";
        case TermKind::pushing_gate: return "P";
    }
    return "?";
}

using PushingAlphas = std::array<double, 4>;

struct ControlTerm {
    TermKind kind = TermKind::x_rotation;
    std::array<QubitIndex, 2> qubits{};
    /// Angular rate times the step duration.
    double strength = 0.0;
    /// Diagonal of the pushing gate; unused for other kinds.
    PushingAlphas alphas{};

    int arity() const { return kind == TermKind::pushing_gate ? 2 : 1; }
    std::span<const QubitIndex> support() const {
        return {qubits.data(), static_cast<std::size_t>(arity())};
    }

    static ControlTerm x_rotation(QubitIndex q, double strength) {
        return {TermKind::x_rotation, {q, q}, strength, {}};
    }
    static ControlTerm z_rotation(QubitIndex q, double strength) {
        return {TermKind::z_rotation, {q, q}, strength, {}};
    }
    static ControlTerm hadamard(QubitIndex q, double strength = std::numbers::pi / 2) {
        return {TermKind::hadamard, {q, q}, strength, {}};
    }
    static ControlTerm pushing(QubitIndex i, QubitIndex j, const PushingAlphas& alphas, double strength = 1.0) {
        if (i == j) throw std::invalid_argument("pushing gate needs two distinct qubits");
        return {TermKind::pushing_gate, {i, j}, strength, alphas};
    }

    /// Generator of a single-qubit term.
    Mat2 generator() const {
        switch (kind) {
            case TermKind::x_rotation: return gates::pauli_x();
            case TermKind::z_rotation: return gates::pauli_z();
            case TermKind::hadamard: return gates::hadamard();
            case TermKind::pushing_gate: break;
        }
        throw std::logic_error("pushing gate has no 2x2 generator");
    }

    friend bool operator==(const ControlTerm&, const ControlTerm&) = default;
};

/// Classical lookup from a measured bit pattern to the qubits to flip.
struct CorrectionTable {
    std::vector<std::vector<QubitIndex>> flips;

    const std::vector<QubitIndex>& operator()(std::uint32_t outcome) const {
        if (outcome >= flips.size()) throw std::out_of_range("correction table has no entry for outcome");
        return flips[outcome];
    }

    friend bool operator==(const CorrectionTable&, const CorrectionTable&) = default;
};

struct Step {
    std::vector<ControlTerm> terms;
    bool cooling_window = false;
    /// Nonempty means the step ends with a projective measurement of these qubits.
    std::vector<QubitIndex> measured;
    std::optional<CorrectionTable> correction;
    std::string label;

    bool has_measurement() const { return !measured.empty(); }
    bool is_unitary() const { return !has_measurement() && !correction.has_value(); }

    friend bool operator==(const Step&, const Step&) = default;
};

namespace detail {

inline void check_disjoint(const Step& step) {
    std::vector<int> used;
    for (const auto& term : step.terms)
        for (const auto q : term.support()) {
            if (q.value < 0) throw std::invalid_argument("negative qubit index in control term");
            if (std::find(used.begin(), used.end(), q.value) != used.end())
                throw std::invalid_argument(fmt::format("step '{}': qubit {} appears in two active terms", step.label,
                                                        q.value));
            used.push_back(q.value);
        }
}

}  // namespace detail

class GateSchedule {
  public:
    GateSchedule() = default;

    GateSchedule& add_step(Step step) {
        detail::check_disjoint(step);
        steps_.push_back(std::move(step));
        return *this;
    }

    GateSchedule& add_idle(std::string label) {
        Step s;
        s.label = std::move(label);
        return add_step(std::move(s));
    }

    GateSchedule& append(const GateSchedule& other) {
        steps_.insert(steps_.end(), other.steps_.begin(), other.steps_.end());
        return *this;
    }

    /// Runs the two fragments side by side; the shorter is padded with idle steps.
    static GateSchedule parallel(const GateSchedule& a, const GateSchedule& b) {
        GateSchedule out;
        const std::size_t n = std::max(a.size(), b.size());
        for (std::size_t k = 0; k < n; ++k) {
            Step s = k < a.size() ? a.steps_[k] : Step{};
            if (k < b.size()) {
                const Step& t = b.steps_[k];
                if (!t.is_unitary() || !s.is_unitary()) throw std::invalid_argument("cannot parallelize marker steps");
                s.terms.insert(s.terms.end(), t.terms.begin(), t.terms.end());
                s.cooling_window = s.cooling_window || t.cooling_window;
                if (s.label.empty()) s.label = t.label;
                else if (!t.label.empty() && t.label != s.label) s.label += " | " + t.label;
            }
            out.add_step(std::move(s));
        }
        return out;
    }

    /// Relabels every step.
    GateSchedule& label_all(const std::string& label) {
        for (auto& s : steps_) s.label = label;
        return *this;
    }

    const std::vector<Step>& steps() const { return steps_; }
    const Step& operator[](std::size_t k) const { return steps_[k]; }
    std::size_t size() const { return steps_.size(); }
    bool empty() const { return steps_.empty(); }

    int max_qubit() const {
        int m = -1;
        for (const auto& s : steps_) {
            for (const auto& t : s.terms)
                for (const auto q : t.support()) m = std::max(m, q.value);
            for (const auto q : s.measured) m = std::max(m, q.value);
        }
        return m;
    }

    friend bool operator==(const GateSchedule&, const GateSchedule&) = default;

  private:
    std::vector<Step> steps_;
};

/// A full error-correction round together with the register it runs on.
struct RoundProtocol {
    std::string name;
    RegisterLayout layout;
    GateSchedule schedule;

    std::size_t steps_per_round() const { return schedule.size(); }
};

//---------------------------------------------------------------------------//
// Fragments
//---------------------------------------------------------------------------//

/// Pushing-gate diagonal used by default for CNOT: its entangling phase
/// a00 - a01 - a10 + a11 is -pi, and the local parts are removed by z terms.
inline constexpr PushingAlphas kDefaultCnotAlphas{0.0, std::numbers::pi / 2, std::numbers::pi / 2, 0.0};

/// CNOT as H(t); P(c,t); Z(c) Z(t); H(t).
///
/// The pushing gate equals exp(-i a00) exp(i a theta_c) exp(i b theta_t)
/// exp(-i a b phi) on |a b>, with theta_c = a00 - a10, theta_t = a00 - a01 and
/// phi = a00 - a01 - a10 + a11. A z term of strength -theta/2 removes each local
/// phase (up to a global factor), leaving controlled-Z when phi = pi mod 2 pi.
inline GateSchedule compile_cnot(QubitIndex control, QubitIndex target,
                                 const PushingAlphas& alphas = kDefaultCnotAlphas) {
    if (control == target) throw std::invalid_argument("compile_cnot: control and target must differ");
    const double phi = alphas[0] - alphas[1] - alphas[2] + alphas[3];
    const double wrapped = std::remainder(phi - std::numbers::pi, 2 * std::numbers::pi);
    if (std::abs(wrapped) > 1e-12)
        throw std::invalid_argument("compile_cnot: pushing gate phases do not give a controlled-Z");
    const double theta_c = alphas[0] - alphas[2];
    const double theta_t = alphas[0] - alphas[1];

    GateSchedule out;
    out.add_step({.terms = {ControlTerm::hadamard(target)}, .label = "cnot"});
    out.add_step({.terms = {ControlTerm::pushing(control, target, alphas)}, .label = "cnot"});
    Step z{.label = "cnot"};
    if (std::abs(theta_c) > 0) z.terms.push_back(ControlTerm::z_rotation(control, -theta_c / 2));
    if (std::abs(theta_t) > 0) z.terms.push_back(ControlTerm::z_rotation(target, -theta_t / 2));
    out.add_step(std::move(z));
    out.add_step({.terms = {ControlTerm::hadamard(target)}, .label = "cnot"});
    return out;
}

/// Controlled-V with V = sqrt(X) (or V^dagger): H(t); diag{1,1,1,+-i}; H(t).
inline GateSchedule compile_controlled_sqrt_x(QubitIndex control, QubitIndex target, bool adjoint = false) {
    if (control == target) throw std::invalid_argument("compile_controlled_sqrt_x: qubits must differ");
    const double a11 = adjoint ? std::numbers::pi / 2 : -std::numbers::pi / 2;
    GateSchedule out;
    out.add_step({.terms = {ControlTerm::hadamard(target)}, .label = "toffoli"});
    out.add_step({.terms = {ControlTerm::pushing(control, target, {0.0, 0.0, 0.0, a11})}, .label = "toffoli"});
    out.add_step({.terms = {ControlTerm::hadamard(target)}, .label = "toffoli"});
    return out;
}

/// Toffoli from controlled-V gates:
/// CV(c2,t); CNOT(c1,c2); CV^dagger(c2,t); CNOT(c1,c2); CV(c1,t).
/// The target sees V^(c2 - (c1 xor c2) + c1) = V^(2 c1 c2) = X^(c1 c2). 17 steps.
inline GateSchedule compile_toffoli(QubitIndex c1, QubitIndex c2, QubitIndex target) {
    if (c1 == c2 || c1 == target || c2 == target)
        throw std::invalid_argument("compile_toffoli: qubit indices must be distinct");
    GateSchedule out;
    out.append(compile_controlled_sqrt_x(c2, target));
    out.append(GateSchedule(compile_cnot(c1, c2)).label_all("toffoli"));
    out.append(compile_controlled_sqrt_x(c2, target, /*adjoint=*/true));
    out.append(GateSchedule(compile_cnot(c1, c2)).label_all("toffoli"));
    out.append(compile_controlled_sqrt_x(c1, target));
    return out;
}

inline GateSchedule x_flip_step(std::initializer_list<QubitIndex> qubits, std::string label) {
    Step s{.label = std::move(label)};
    for (const auto q : qubits) s.terms.push_back(ControlTerm::x_rotation(q, std::numbers::pi / 2));
    GateSchedule out;
    out.add_step(std::move(s));
    return out;
}

//---------------------------------------------------------------------------//
// Rounds
//---------------------------------------------------------------------------//

/// Syndrome lookup for the measured round: (m2, m3) = (1,1) -> d1,
/// (1,0) -> d2, (0,1) -> d3. m1 is measured but ignored.
inline CorrectionTable measured_round_correction(const RegisterLayout& layout) {
    CorrectionTable table;
    table.flips.resize(8);
    for (std::uint32_t m = 0; m < 8; ++m) {
        const bool m2 = (m >> 1) & 1U;
        const bool m3 = m & 1U;
        if (m2 && m3) table.flips[m] = {layout.data(0)};
        else if (m2) table.flips[m] = {layout.data(1)};
        else if (m3) table.flips[m] = {layout.data(2)};
    }
    return table;
}

/// 16 steps on 3 data + 3 ancilla qubits: cooling, ancilla preparation (idle),
/// transversal CNOT d_i -> a_i, decoding CNOT(a1,a2) and CNOT(a1,a3),
/// measurement of the ancillas, correction.
inline RoundProtocol build_measured_round() {
    const RegisterLayout layout{3, 3};
    GateSchedule s;
    s.add_step({.cooling_window = true, .label = "cool"});
    s.add_idle("prepare");

    GateSchedule transversal = compile_cnot(layout.data(0), layout.ancilla(0));
    transversal = GateSchedule::parallel(transversal, compile_cnot(layout.data(1), layout.ancilla(1)));
    transversal = GateSchedule::parallel(transversal, compile_cnot(layout.data(2), layout.ancilla(2)));
    s.append(transversal.label_all("transversal"));

    s.append(compile_cnot(layout.ancilla(0), layout.ancilla(1)).label_all("decode"));
    s.append(compile_cnot(layout.ancilla(0), layout.ancilla(2)).label_all("decode"));

    s.add_step({.measured = layout.ancilla_qubits(), .label = "measure"});
    s.add_step({.correction = measured_round_correction(layout), .label = "correct"});
    return {"measured", layout, std::move(s)};
}

/// 68 steps on 3 data + 2 ancilla qubits: cooling, syndrome a1 = d1^d2,
/// a2 = d2^d3, then Toffolis (a1=1,a2=0)->d1, (1,1)->d2, (0,1)->d3 with the
/// zero controls made by x conjugation, then idle steps while the ancillas
/// wait for the next round's cooling.
inline RoundProtocol build_measurement_free_round() {
    const RegisterLayout layout{3, 2};
    const auto d = [&](int i) { return layout.data(i); };
    const auto a = [&](int i) { return layout.ancilla(i); };

    GateSchedule s;
    s.add_step({.cooling_window = true, .label = "cool"});
    s.append(GateSchedule::parallel(compile_cnot(d(0), a(0)), compile_cnot(d(1), a(1))).label_all("syndrome"));
    s.append(GateSchedule::parallel(compile_cnot(d(1), a(0)), compile_cnot(d(2), a(1))).label_all("syndrome"));

    s.append(x_flip_step({a(1)}, "toffoli"));
    s.append(compile_toffoli(a(0), a(1), d(0)));
    s.append(x_flip_step({a(1)}, "toffoli"));
    s.append(compile_toffoli(a(0), a(1), d(1)));
    s.append(x_flip_step({a(0)}, "toffoli"));
    s.append(compile_toffoli(a(0), a(1), d(2)));
    s.append(x_flip_step({a(0)}, "toffoli"));

    while (s.size() < 68) s.add_idle("wait");
    return {"measurement_free", layout, std::move(s)};
}

/// Adds `delta` to every term strength. Used as a fault-injection control.
inline GateSchedule perturb_strengths(const GateSchedule& schedule, double delta) {
    GateSchedule out;
    for (Step s : schedule.steps()) {
        for (auto& t : s.terms) t.strength += delta;
        out.add_step(std::move(s));
    }
    return out;
}

//---------------------------------------------------------------------------//
// Net unitaries
//---------------------------------------------------------------------------//

/// Precomputed propagator of one step's control terms over a duration.
struct StepPropagator {
    struct Single {
        std::uint64_t mask;
        Mat2 u;
    };
    struct Diagonal {
        std::uint64_t mask_i;
        std::uint64_t mask_j;
        std::array<Complex, 4> phases;
    };
    std::vector<Single> singles;
    std::vector<Diagonal> diagonals;

    StepPropagator() = default;
    StepPropagator(const Step& step, int n_qubits, double duration) {
        for (const auto& t : step.terms) {
            for (const auto q : t.support()) detail::check_qubit(n_qubits, q);
            const double angle = t.strength * duration;
            if (t.kind == TermKind::pushing_gate) {
                Diagonal d{qubit_mask(n_qubits, t.qubits[0]), qubit_mask(n_qubits, t.qubits[1]), {}};
                for (std::size_t k = 0; k < 4; ++k) d.phases[k] = std::polar(1.0, -angle * t.alphas[k]);
                diagonals.push_back(d);
            } else {
                singles.push_back({qubit_mask(n_qubits, t.qubits[0]), gates::involutory_exponential(t.generator(), angle)});
            }
        }
    }

    bool empty() const { return singles.empty() && diagonals.empty(); }

    template <class Derived>
    void apply(Eigen::MatrixBase<Derived>& m) const {
        for (const auto& s : singles) kernels::apply_1q(m, s.mask, s.u);
        for (const auto& d : diagonals) kernels::apply_2q_diagonal(m, d.mask_i, d.mask_j, d.phases);
    }
    void apply(CVector& v) const { apply<CVector>(v); }
};

/// Product of the step unitaries over [first, last). Cooling markers are
/// ignored (noiseless); measurement or correction markers are rejected.
inline CMatrix schedule_net_unitary(const GateSchedule& schedule, int n_qubits, std::size_t first = 0,
                                    std::size_t last = static_cast<std::size_t>(-1)) {
    detail::check_qubit_count(n_qubits);
    last = std::min(last, schedule.size());
    const auto d = Eigen::Index{1} << n_qubits;
    CMatrix u = CMatrix::Identity(d, d);
    for (std::size_t k = first; k < last; ++k) {
        const Step& step = schedule[k];
        if (!step.is_unitary())
            throw std::invalid_argument(fmt::format("schedule_net_unitary: step {} carries a measurement marker", k));
        StepPropagator(step, n_qubits, 1.0).apply(u);
    }
    return u;
}

/// Index of the first non-unitary step, or size() if there is none.
inline std::size_t first_marker_step(const GateSchedule& schedule) {
    for (std::size_t k = 0; k < schedule.size(); ++k)
        if (!schedule[k].is_unitary()) return k;
    return schedule.size();
}

/// min over phi of ||u - exp(i phi) v||_F.
inline double phase_aligned_distance(const CMatrix& u, const CMatrix& v) {
    if (u.rows() != v.rows() || u.cols() != v.cols()) throw std::invalid_argument("phase_aligned_distance: shape mismatch");
    const Complex overlap = (v.adjoint() * u).trace();
    const Complex phase = std::abs(overlap) > 0 ? overlap / std::abs(overlap) : Complex(1.0);
    return (u - phase * v).norm();
}

namespace canonical {

/// Unitary of a classical reversible map on basis indices.
inline CMatrix permutation(int n_qubits, const std::function<std::uint64_t(std::uint64_t)>& map) {
    const auto d = Eigen::Index{1} << n_qubits;
    CMatrix u = CMatrix::Zero(d, d);
    for (Eigen::Index c = 0; c < d; ++c) u(static_cast<Eigen::Index>(map(static_cast<std::uint64_t>(c))), c) = 1.0;
    return u;
}

inline CMatrix cnot(int n_qubits, QubitIndex control, QubitIndex target) {
    const auto mc = qubit_mask(n_qubits, control), mt = qubit_mask(n_qubits, target);
    return permutation(n_qubits, [=](std::uint64_t x) { return (x & mc) ? x ^ mt : x; });
}

inline CMatrix toffoli(int n_qubits, QubitIndex c1, QubitIndex c2, QubitIndex target) {
    const auto m1 = qubit_mask(n_qubits, c1), m2 = qubit_mask(n_qubits, c2), mt = qubit_mask(n_qubits, target);
    return permutation(n_qubits, [=](std::uint64_t x) { return ((x & m1) && (x & m2)) ? x ^ mt : x; });
}

/// Transversal CNOT followed by the two decoding CNOTs of the measured round.
inline CMatrix measured_round(const RegisterLayout& l) {
    const int n = l.n_qubits();
    const auto bit = [&](std::uint64_t x, QubitIndex q) { return (x & qubit_mask(n, q)) ? 1U : 0U; };
    return permutation(n, [&](std::uint64_t x) {
        std::uint64_t y = x;
        for (int i = 0; i < 3; ++i)
            if (bit(x, l.data(i))) y ^= qubit_mask(n, l.ancilla(i));
        if (bit(y, l.ancilla(0))) y ^= qubit_mask(n, l.ancilla(1)) | qubit_mask(n, l.ancilla(2));
        return y;
    });
}

/// Syndrome extraction followed by conditional data flips, measurement free.
inline CMatrix measurement_free_round(const RegisterLayout& l) {
    const int n = l.n_qubits();
    const auto bit = [&](std::uint64_t x, QubitIndex q) { return (x & qubit_mask(n, q)) ? 1U : 0U; };
    return permutation(n, [&](std::uint64_t x) {
        const unsigned d1 = bit(x, l.data(0)), d2 = bit(x, l.data(1)), d3 = bit(x, l.data(2));
        const unsigned s1 = bit(x, l.ancilla(0)) ^ d1 ^ d2;
        const unsigned s2 = bit(x, l.ancilla(1)) ^ d2 ^ d3;
        std::uint64_t y = x & ~(qubit_mask(n, l.ancilla(0)) | qubit_mask(n, l.ancilla(1)));
        if (s1) y |= qubit_mask(n, l.ancilla(0));
        if (s2) y |= qubit_mask(n, l.ancilla(1));
        if (s1 && !s2) y ^= qubit_mask(n, l.data(0));
        if (s1 && s2) y ^= qubit_mask(n, l.data(1));
        if (!s1 && s2) y ^= qubit_mask(n, l.data(2));
        return y;
    });
}

}  // namespace canonical

//---------------------------------------------------------------------------//
// Text dump
//---------------------------------------------------------------------------//

inline std::string format_term(const ControlTerm& t) {
    if (t.kind == TermKind::pushing_gate)
        return fmt::format("P(q{},q{}; k={:.6g}; a=[{:.6g},{:.6g},{:.6g},{:.6g}])", t.qubits[0].value,
                           t.qubits[1].value, t.strength, t.alphas[0], t.alphas[1], t.alphas[2], t.alphas[3]);
    return fmt::format("{}(q{}; {:.6g})", to_string(t.kind), t.qubits[0].value, t.strength);
}

/// Human-readable listing, one line per step.
inline std::string dump_schedule(const GateSchedule& schedule) {
    std::string out;
    for (std::size_t k = 0; k < schedule.size(); ++k) {
        const Step& s = schedule[k];
        std::string line = fmt::format("{:3d} {:<12}", k, s.label);
        for (const auto& t : s.terms) line += " " + format_term(t);
        if (s.cooling_window) line += " [cool]";
        if (s.has_measurement()) {
            line += " [measure";
            for (const auto q : s.measured) line += fmt::format(" q{}", q.value);
            line += "]";
        }
        if (s.correction) line += " [correct]";
        out += line + "\n";
    }
    return out;
}

}  // namespace twobath
