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
 * State-vector and density-matrix algebra for small qubit registers.
 *
 * Ordering convention used throughout the library: qubit 0 is the most
 * significant bit of a basis index. For n qubits, qubit q is bit (n-1-q).
 * So |100000> (qubit 0 excited) has index 32 on a six-qubit register.
 */

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twobath/rng.hpp"

namespace twobath {

using Complex = std::complex<double>;
using Mat2 = Eigen::Matrix2cd;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

inline constexpr int kMaxQubits = 7;

/// Index of a qubit inside a register.
struct QubitIndex {
    int value = 0;

    constexpr QubitIndex() = default;
    constexpr explicit QubitIndex(int v) : value(v) {}

    friend constexpr bool operator==(QubitIndex, QubitIndex) = default;
    friend constexpr auto operator<=>(QubitIndex, QubitIndex) = default;
};

/// Bit mask of qubit q in an n-qubit basis index.
constexpr std::uint64_t qubit_mask(int n_qubits, QubitIndex q) {
    return std::uint64_t{1} << (n_qubits - 1 - q.value);
}

/// Data qubits occupy indices [0, n_data); ancillas follow.
struct RegisterLayout {
    int n_data = 3;
    int n_ancilla = 3;

    constexpr int n_qubits() const { return n_data + n_ancilla; }
    constexpr QubitIndex data(int i) const { return QubitIndex(i); }
    constexpr QubitIndex ancilla(int i) const { return QubitIndex(n_data + i); }
    constexpr bool is_ancilla(QubitIndex q) const {
        return q.value >= n_data && q.value < n_qubits();
    }

    std::vector<QubitIndex> data_qubits() const {
        std::vector<QubitIndex> out;
        for (int i = 0; i < n_data; ++i) out.push_back(data(i));
        return out;
    }
    std::vector<QubitIndex> ancilla_qubits() const {
        std::vector<QubitIndex> out;
        for (int i = 0; i < n_ancilla; ++i) out.push_back(ancilla(i));
        return out;
    }

    friend constexpr bool operator==(const RegisterLayout&, const RegisterLayout&) = default;
};

namespace detail {

inline void check_qubit_count(int n) {
    if (n < 1 || n > kMaxQubits) {
        throw std::invalid_argument("qubit count must be in [1, " + std::to_string(kMaxQubits) +
                                    "], got " + std::to_string(n));
    }
}

inline void check_qubit(int n, QubitIndex q) {
    if (q.value < 0 || q.value >= n) {
        throw std::invalid_argument("qubit index " + std::to_string(q.value) +
                                    " out of range for " + std::to_string(n) + " qubits");
    }
}

inline void check_distinct(std::span<const QubitIndex> qubits) {
    for (std::size_t i = 0; i < qubits.size(); ++i)
        for (std::size_t j = i + 1; j < qubits.size(); ++j)
            if (qubits[i] == qubits[j]) throw std::invalid_argument("qubit indices must be distinct");
}

}  // namespace detail

//---------------------------------------------------------------------------//
// StateVector
//---------------------------------------------------------------------------//

class StateVector {
  public:
    /// |0...0> on n qubits.
    explicit StateVector(int n_qubits) : n_qubits_(n_qubits) {
        detail::check_qubit_count(n_qubits);
        amplitudes_ = CVector::Zero(Eigen::Index{1} << n_qubits);
        amplitudes_(0) = 1.0;
    }

    static StateVector basis(int n_qubits, std::uint64_t index) {
        StateVector s(n_qubits);
        if (index >= s.dim()) throw std::invalid_argument("basis index out of range");
        s.amplitudes_(0) = 0.0;
        s.amplitudes_(static_cast<Eigen::Index>(index)) = 1.0;
        return s;
    }

    /// Amplitudes must already be normalized unless `normalize` is set.
    static StateVector from_amplitudes(int n_qubits, CVector amplitudes, bool normalize = false) {
        StateVector s(n_qubits);
        if (amplitudes.size() != static_cast<Eigen::Index>(s.dim()))
            throw std::invalid_argument("amplitude vector length must be 2^n_qubits");
        s.amplitudes_ = std::move(amplitudes);
        if (normalize) {
            s.normalize();
        } else if (std::abs(s.squared_norm() - 1.0) > 1e-12) {
            throw std::invalid_argument("amplitudes are not normalized");
        }
        return s;
    }

    int n_qubits() const { return n_qubits_; }
    std::size_t dim() const { return static_cast<std::size_t>(amplitudes_.size()); }

    const CVector& amplitudes() const { return amplitudes_; }
    /// Raw access for kernels. Callers own the normalization invariant.
    CVector& mutable_amplitudes() { return amplitudes_; }

    Complex operator[](std::size_t i) const { return amplitudes_(static_cast<Eigen::Index>(i)); }

    double squared_norm() const { return amplitudes_.squaredNorm(); }

    void normalize() {
        const double norm = amplitudes_.norm();
        if (norm < 1e-300) throw std::runtime_error("cannot normalize a zero state");
        amplitudes_ /= norm;
    }

    /// Tensor product, `this` occupying the most significant qubits.
    StateVector tensor(const StateVector& rhs) const {
        StateVector out(n_qubits_ + rhs.n_qubits_);
        for (Eigen::Index i = 0; i < amplitudes_.size(); ++i)
            out.amplitudes_.segment(i * rhs.amplitudes_.size(), rhs.amplitudes_.size()) =
                amplitudes_(i) * rhs.amplitudes_;
        return out;
    }

  private:
    int n_qubits_;
    CVector amplitudes_;
};

//---------------------------------------------------------------------------//
// DensityMatrix
//---------------------------------------------------------------------------//

class DensityMatrix {
  public:
    explicit DensityMatrix(const StateVector& pure)
        : n_qubits_(pure.n_qubits()), elements_(pure.amplitudes() * pure.amplitudes().adjoint()) {}

    /// Validates Hermiticity (1e-12 absolute, scaled by dimension) and unit trace (1e-10).
    static DensityMatrix from_matrix(int n_qubits, CMatrix elements) {
        DensityMatrix rho(n_qubits, std::move(elements));
        rho.check_invariants();
        return rho;
    }

    static DensityMatrix maximally_mixed(int n_qubits) {
        detail::check_qubit_count(n_qubits);
        const auto d = Eigen::Index{1} << n_qubits;
        return DensityMatrix(n_qubits, CMatrix::Identity(d, d) / static_cast<double>(d));
    }

    /// Skips invariant checks; for integrator internals and accumulators.
    static DensityMatrix unchecked(int n_qubits, CMatrix elements) {
        return DensityMatrix(n_qubits, std::move(elements));
    }

    int n_qubits() const { return n_qubits_; }
    std::size_t dim() const { return static_cast<std::size_t>(elements_.rows()); }
    const CMatrix& matrix() const { return elements_; }
    Complex operator()(std::size_t r, std::size_t c) const {
        return elements_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    }

    Complex trace() const { return elements_.trace(); }

    double hermiticity_error() const { return (elements_ - elements_.adjoint()).cwiseAbs().maxCoeff(); }

    Eigen::VectorXd eigenvalues() const {
        Eigen::SelfAdjointEigenSolver<CMatrix> solver(elements_, Eigen::EigenvaluesOnly);
        return solver.eigenvalues();
    }

    DensityMatrix tensor(const DensityMatrix& rhs) const {
        const auto db = rhs.elements_.rows();
        CMatrix out(elements_.rows() * db, elements_.cols() * db);
        for (Eigen::Index r = 0; r < elements_.rows(); ++r)
            for (Eigen::Index c = 0; c < elements_.cols(); ++c)
                out.block(r * db, c * db, db, db) = elements_(r, c) * rhs.elements_;
        return DensityMatrix(n_qubits_ + rhs.n_qubits_, std::move(out));
    }

    void check_invariants() const {
        if (hermiticity_error() > 1e-12 * std::max<double>(1.0, static_cast<double>(dim())))
            throw std::invalid_argument("density matrix is not Hermitian");
        if (std::abs(trace() - 1.0) > 1e-10) throw std::invalid_argument("density matrix trace is not 1");
    }

  private:
    DensityMatrix(int n_qubits, CMatrix elements) : n_qubits_(n_qubits), elements_(std::move(elements)) {
        detail::check_qubit_count(n_qubits);
        const auto d = Eigen::Index{1} << n_qubits;
        if (elements_.rows() != d || elements_.cols() != d)
            throw std::invalid_argument("density matrix must be 2^n x 2^n");
    }

    int n_qubits_;
    CMatrix elements_;
};

/// Trace distance 1/2 ||a - b||_1.
inline double trace_distance(const DensityMatrix& a, const DensityMatrix& b) {
    if (a.dim() != b.dim()) throw std::invalid_argument("trace_distance: dimension mismatch");
    Eigen::SelfAdjointEigenSolver<CMatrix> solver(a.matrix() - b.matrix(), Eigen::EigenvaluesOnly);
    return 0.5 * solver.eigenvalues().cwiseAbs().sum();
}

//---------------------------------------------------------------------------//
// Gate matrices
//---------------------------------------------------------------------------//

namespace gates {

inline Mat2 identity() { return Mat2::Identity(); }

inline Mat2 pauli_x() {
    Mat2 m;
    m << 0, 1, 1, 0;
    return m;
}

inline Mat2 pauli_z() {
    Mat2 m;
    m << 1, 0, 0, -1;
    return m;
}

inline Mat2 hadamard() {
    Mat2 m;
    m << 1, 1, 1, -1;
    return m / std::numbers::sqrt2;
}

/// exp(-i angle G) for any generator with G^2 = I.
inline Mat2 involutory_exponential(const Mat2& generator, double angle) {
    return std::cos(angle) * Mat2::Identity() - Complex(0.0, std::sin(angle)) * generator;
}

inline bool is_unitary(const Mat2& u, double tol = 1e-12) {
    return (u.adjoint() * u - Mat2::Identity()).norm() <= tol;
}

}  // namespace gates

//---------------------------------------------------------------------------//
// In-place kernels (no validation; the hot path of the trajectory engine)
//---------------------------------------------------------------------------//

namespace kernels {

/// Applies a 2x2 operator to qubit bit `mask` of each column of `m`.
template <class Derived>
void apply_1q(Eigen::MatrixBase<Derived>& m, std::uint64_t mask, const Mat2& u) {
    const auto rows = static_cast<std::uint64_t>(m.rows());
    const Complex u00 = u(0, 0), u01 = u(0, 1), u10 = u(1, 0), u11 = u(1, 1);
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (std::uint64_t i = 0; i < rows; ++i) {
            if (i & mask) continue;
            const auto i0 = static_cast<Eigen::Index>(i);
            const auto i1 = static_cast<Eigen::Index>(i | mask);
            const Complex a0 = m(i0, c);
            const Complex a1 = m(i1, c);
            m(i0, c) = u00 * a0 + u01 * a1;
            m(i1, c) = u10 * a0 + u11 * a1;
        }
    }
}

inline void apply_1q(CVector& v, std::uint64_t mask, const Mat2& u) { apply_1q<CVector>(v, mask, u); }

/// Multiplies each basis component by phases[(bit_i << 1) | bit_j].
template <class Derived>
void apply_2q_diagonal(Eigen::MatrixBase<Derived>& m, std::uint64_t mask_i, std::uint64_t mask_j,
                       const std::array<Complex, 4>& phases) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const auto idx = static_cast<std::uint64_t>(r);
        const int ab = ((idx & mask_i) ? 2 : 0) | ((idx & mask_j) ? 1 : 0);
        m.row(r) *= phases[static_cast<std::size_t>(ab)];
    }
}

inline void apply_2q_diagonal(CVector& v, std::uint64_t mask_i, std::uint64_t mask_j,
                              const std::array<Complex, 4>& phases) {
    apply_2q_diagonal<CVector>(v, mask_i, mask_j, phases);
}

inline void flip(CVector& v, std::uint64_t mask) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const auto idx = static_cast<std::uint64_t>(i);
        if (!(idx & mask)) std::swap(v(i), v(static_cast<Eigen::Index>(idx | mask)));
    }
}

/// Probability that the qubit with bit `mask` reads 1.
inline double excited_population(const CVector& v, std::uint64_t mask) {
    double p = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (static_cast<std::uint64_t>(i) & mask) p += std::norm(v(i));
    return p;
}

}  // namespace kernels

//---------------------------------------------------------------------------//
// Operations
//---------------------------------------------------------------------------//

inline StateVector apply_single_qubit_unitary(StateVector state, QubitIndex q, const Mat2& u) {
    detail::check_qubit(state.n_qubits(), q);
    if (!gates::is_unitary(u)) throw std::invalid_argument("apply_single_qubit_unitary: operator is not unitary");
    kernels::apply_1q(state.mutable_amplitudes(), qubit_mask(state.n_qubits(), q), u);
    return state;
}

/// Phase gate diag{exp(-i a00), exp(-i a01), exp(-i a10), exp(-i a11)} on (i, j),
/// where the first label bit belongs to qubit i.
inline StateVector apply_two_qubit_phase(StateVector state, QubitIndex i, QubitIndex j,
                                         const std::array<double, 4>& alphas) {
    detail::check_qubit(state.n_qubits(), i);
    detail::check_qubit(state.n_qubits(), j);
    if (i == j) throw std::invalid_argument("apply_two_qubit_phase: qubits must differ");
    std::array<Complex, 4> phases;
    for (std::size_t k = 0; k < 4; ++k) phases[k] = std::polar(1.0, -alphas[k]);
    kernels::apply_2q_diagonal(state.mutable_amplitudes(), qubit_mask(state.n_qubits(), i),
                               qubit_mask(state.n_qubits(), j), phases);
    return state;
}

struct MeasurementResult {
    /// Bit k (counting from the most significant of qubits.size() bits) is the
    /// outcome of qubits[k].
    std::uint32_t outcome = 0;
    StateVector collapsed;
    double probability = 0.0;
};

namespace detail {

inline std::uint32_t extract_pattern(std::uint64_t index, int n_qubits, std::span<const QubitIndex> qubits) {
    std::uint32_t pattern = 0;
    for (const auto q : qubits) pattern = (pattern << 1) | ((index & qubit_mask(n_qubits, q)) ? 1U : 0U);
    return pattern;
}

}  // namespace detail

/// Born-rule probabilities of every outcome pattern on `qubits`.
inline std::vector<double> outcome_probabilities(const StateVector& state, std::span<const QubitIndex> qubits) {
    std::vector<double> probs(std::size_t{1} << qubits.size(), 0.0);
    for (std::size_t i = 0; i < state.dim(); ++i)
        probs[detail::extract_pattern(i, state.n_qubits(), qubits)] += std::norm(state[i]);
    return probs;
}

/// Projects `state` onto `outcome` of `qubits`, renormalizing.
inline StateVector project(StateVector state, std::span<const QubitIndex> qubits, std::uint32_t outcome) {
    auto& amps = state.mutable_amplitudes();
    for (std::size_t i = 0; i < state.dim(); ++i)
        if (detail::extract_pattern(i, state.n_qubits(), qubits) != outcome) amps(static_cast<Eigen::Index>(i)) = 0.0;
    state.normalize();
    return state;
}

inline MeasurementResult measure_qubits_projective(const StateVector& state, std::span<const QubitIndex> qubits,
                                                   Rng& rng) {
    if (qubits.empty()) throw std::invalid_argument("measure_qubits_projective: no qubits given");
    for (const auto q : qubits) detail::check_qubit(state.n_qubits(), q);
    detail::check_distinct(qubits);

    const auto probs = outcome_probabilities(state, qubits);
    double total = 0.0;
    for (double p : probs) total += p;
    if (total < 1e-14) throw std::runtime_error("measure_qubits_projective: state has vanishing norm");

    const double r = rng.uniform() * total;
    double acc = 0.0;
    std::uint32_t outcome = 0;
    // Falls through to the last nonzero outcome if rounding leaves r above acc.
    for (std::uint32_t k = 0; k < probs.size(); ++k) {
        if (probs[k] <= 0.0) continue;
        outcome = k;
        acc += probs[k];
        if (r < acc) break;
    }
    return MeasurementResult{outcome, project(state, qubits, outcome), probs[outcome] / total};
}

/// Reduced density matrix over `keep`; keep[0] becomes the most significant qubit.
inline DensityMatrix partial_trace(const DensityMatrix& rho, std::span<const QubitIndex> keep) {
    if (keep.empty()) throw std::invalid_argument("partial_trace: keep set is empty");
    const int n = rho.n_qubits();
    for (const auto q : keep) detail::check_qubit(n, q);
    detail::check_distinct(keep);

    std::vector<QubitIndex> traced;
    for (int q = 0; q < n; ++q)
        if (std::find(keep.begin(), keep.end(), QubitIndex(q)) == keep.end()) traced.emplace_back(q);

    const int nk = static_cast<int>(keep.size());
    const std::size_t dk = std::size_t{1} << nk;
    const std::size_t dt = std::size_t{1} << traced.size();

    auto compose = [&](std::size_t kept_pattern, std::size_t traced_pattern) {
        std::uint64_t idx = 0;
        for (int k = 0; k < nk; ++k)
            if (kept_pattern & (std::size_t{1} << (nk - 1 - k))) idx |= qubit_mask(n, keep[k]);
        const int nt = static_cast<int>(traced.size());
        for (int k = 0; k < nt; ++k)
            if (traced_pattern & (std::size_t{1} << (nt - 1 - k))) idx |= qubit_mask(n, traced[k]);
        return static_cast<Eigen::Index>(idx);
    };

    CMatrix out = CMatrix::Zero(static_cast<Eigen::Index>(dk), static_cast<Eigen::Index>(dk));
    for (std::size_t r = 0; r < dk; ++r)
        for (std::size_t c = 0; c < dk; ++c) {
            Complex sum = 0.0;
            for (std::size_t t = 0; t < dt; ++t) sum += rho.matrix()(compose(r, t), compose(c, t));
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = sum;
        }
    return DensityMatrix::unchecked(nk, std::move(out));
}

/// Reduced density matrix of a pure state over a contiguous block [first, first+count).
/// Avoids forming the full projector; used by the ensemble accumulator.
inline CMatrix reduced_block(const StateVector& state, int first, int count) {
    const int n = state.n_qubits();
    const int low_bits = n - first - count;
    const Eigen::Index dk = Eigen::Index{1} << count;
    const std::size_t d_low = std::size_t{1} << low_bits;
    const std::size_t d_high = std::size_t{1} << first;
    CMatrix out = CMatrix::Zero(dk, dk);
    const auto& a = state.amplitudes();
    for (std::size_t h = 0; h < d_high; ++h)
        for (std::size_t l = 0; l < d_low; ++l) {
            const std::size_t base = (h << (count + low_bits)) | l;
            for (Eigen::Index r = 0; r < dk; ++r) {
                const Complex ar = a(static_cast<Eigen::Index>(base | (static_cast<std::size_t>(r) << low_bits)));
                if (ar == Complex(0.0)) continue;
                for (Eigen::Index c = 0; c < dk; ++c)
                    out(r, c) += ar * std::conj(a(static_cast<Eigen::Index>(base | (static_cast<std::size_t>(c) << low_bits))));
            }
        }
    return out;
}

/// <target| rho |target>, clamped to [0, 1].
inline double squared_fidelity(const DensityMatrix& rho, const StateVector& target) {
    if (rho.dim() != target.dim()) throw std::invalid_argument("squared_fidelity: dimension mismatch");
    const double f = (target.amplitudes().adjoint() * rho.matrix() * target.amplitudes())(0, 0).real();
    if (f < -1e-10 || f > 1.0 + 1e-10) throw std::runtime_error("squared_fidelity: value outside [0, 1]");
    return std::clamp(f, 0.0, 1.0);
}

/// -tr(rho log2 rho) in bits.
inline double von_neumann_entropy(const DensityMatrix& rho) {
    if (rho.hermiticity_error() > 1e-10) throw std::invalid_argument("von_neumann_entropy: matrix is not Hermitian");
    const Eigen::VectorXd evals = rho.eigenvalues();
    double s = 0.0;
    for (Eigen::Index i = 0; i < evals.size(); ++i) {
        const double lambda = evals(i);
        if (lambda < -1e-10) throw std::runtime_error("von_neumann_entropy: negative eigenvalue " + std::to_string(lambda));
        if (lambda > 1e-14) s -= lambda * std::log2(lambda);
    }
    return std::max(s, 0.0);
}

}  // namespace twobath
