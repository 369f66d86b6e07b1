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
 * Open-system evolution of a register under a gate schedule, coupled to a hot
 * reservoir (sigma_x flips at rate gamma_h on every qubit) and, during cooling
 * windows, to a cold reservoir acting on the ancillas (sigma_- at rate
 * A = Gamma_c (n_c + 1), sigma_+ at rate B = Gamma_c n_c).
 *
 * Two routes are provided:
 *  - quantum trajectories (first-order jump unraveling, `n_sub` sub-steps per
 *    schedule step), averaged by EnsembleAccumulator;
 *  - a dense Lindblad integrator (fixed-step RK4) used as the exact reference.
 *
 * Time is measured in schedule steps; all rates are per step.
 */

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

#include "twobath/compiler.hpp"
#include "twobath/qstate.hpp"
#include "twobath/rng.hpp"

namespace twobath {

struct NoiseParams {
    double gamma_h = 0.0;
    double gamma_c = 0.0;
    double n_c = 0.0;
    /// p(t) per schedule step. Unset means "on exactly in the schedule's cooling windows".
    std::optional<std::vector<bool>> cooling_gate;

    double decay_rate() const { return gamma_c * (n_c + 1.0); }
    double excitation_rate() const { return gamma_c * n_c; }

    bool cooling_on(const GateSchedule& schedule, std::size_t step) const {
        return cooling_gate ? (*cooling_gate)[step] : schedule[step].cooling_window;
    }

    void validate(const GateSchedule& schedule) const {
        for (double v : {gamma_h, gamma_c, n_c})
            if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("noise rates must be finite and non-negative");
        if (cooling_gate && cooling_gate->size() != schedule.size())
            throw std::invalid_argument("cooling_gate length must equal the schedule length");
    }
};

enum class JumpKind { bit_flip, cool, heat };

struct JumpEvent {
    double time = 0.0;
    QubitIndex qubit;
    JumpKind kind = JumpKind::bit_flip;

    friend bool operator==(const JumpEvent&, const JumpEvent&) = default;
};

struct TrajectoryRecord {
    std::uint64_t seed = 0;
    std::vector<JumpEvent> jumps;
    /// One ancilla measurement outcome per measurement marker, in time order.
    std::vector<std::uint32_t> outcomes;

    friend bool operator==(const TrajectoryRecord&, const TrajectoryRecord&) = default;
};

//---------------------------------------------------------------------------//
// Sampling plan and ensemble accumulator
//---------------------------------------------------------------------------//

/// Which moments of a run are recorded. Steps are 1-based: step s is the
/// state after s completed schedule steps of the round (markers included),
/// so step == steps_per_round is the end of the round. The initial state is
/// always recorded as round 0, step 0.
struct SamplePlan {
    /// Empty means every step.
    std::vector<int> steps;
    bool keep_total = false;

    static SamplePlan every_step(bool keep_total = false) { return {{}, keep_total}; }
    static SamplePlan round_ends(int steps_per_round, bool keep_total = false) {
        return {{steps_per_round}, keep_total};
    }
};

struct SamplePoint {
    int round = 0;
    int step = 0;
    double time = 0.0;

    friend bool operator==(const SamplePoint&, const SamplePoint&) = default;
};

/// Maps (round, step) to accumulator slots.
class SampleIndex {
  public:
    SampleIndex() = default;
    SampleIndex(int steps_per_round, int rounds, const SamplePlan& plan)
        : steps_per_round_(steps_per_round), step_pos_(static_cast<std::size_t>(steps_per_round) + 1, -1) {
        std::vector<int> steps = plan.steps;
        if (steps.empty())
            for (int s = 1; s <= steps_per_round; ++s) steps.push_back(s);
        std::sort(steps.begin(), steps.end());
        steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
        for (int s : steps)
            if (s < 1 || s > steps_per_round) throw std::invalid_argument("sample step out of range");
        per_round_ = static_cast<int>(steps.size());
        for (int k = 0; k < per_round_; ++k) step_pos_[static_cast<std::size_t>(steps[k])] = k;

        points_.push_back({0, 0, 0.0});
        for (int r = 1; r <= rounds; ++r)
            for (int s : steps) points_.push_back({r, s, static_cast<double>((r - 1) * steps_per_round + s)});
    }

    /// Slot of (round >= 1, step >= 1), or -1 if not sampled.
    int slot(int round, int step) const {
        const int pos = step_pos_[static_cast<std::size_t>(step)];
        return pos < 0 ? -1 : 1 + (round - 1) * per_round_ + pos;
    }

    const std::vector<SamplePoint>& points() const { return points_; }
    std::size_t size() const { return points_.size(); }

  private:
    int steps_per_round_ = 0;
    int per_round_ = 0;
    std::vector<int> step_pos_;
    std::vector<SamplePoint> points_;
};

/// Sums of trajectory projectors (reduced to data and ancilla registers, and
/// optionally the full register) at every sample point.
class EnsembleAccumulator {
  public:
    struct Slot {
        CMatrix data;
        CMatrix ancilla;
        CMatrix total;
        double f2_data_sum = 0.0;
        double f2_data_sq = 0.0;
        double f2_anc_sum = 0.0;
        double f2_anc_sq = 0.0;
    };

    EnsembleAccumulator() = default;
    EnsembleAccumulator(RegisterLayout layout, SampleIndex index, bool keep_total)
        : layout_(layout), index_(std::move(index)), keep_total_(keep_total) {
        const auto dd = Eigen::Index{1} << layout_.n_data;
        const auto da = Eigen::Index{1} << layout_.n_ancilla;
        const auto dt = Eigen::Index{1} << layout_.n_qubits();
        slots_.resize(index_.size());
        for (auto& s : slots_) {
            s.data = CMatrix::Zero(dd, dd);
            s.ancilla = CMatrix::Zero(da, da);
            if (keep_total_) s.total = CMatrix::Zero(dt, dt);
        }
    }

    void add(std::size_t slot, const StateVector& state) {
        Slot& s = slots_[slot];
        const CMatrix rd = reduced_block(state, 0, layout_.n_data);
        const CMatrix ra = reduced_block(state, layout_.n_data, layout_.n_ancilla);
        s.data += rd;
        s.ancilla += ra;
        const double fd = rd(0, 0).real(), fa = ra(0, 0).real();
        s.f2_data_sum += fd;
        s.f2_data_sq += fd * fd;
        s.f2_anc_sum += fa;
        s.f2_anc_sq += fa * fa;
        if (keep_total_) s.total.noalias() += state.amplitudes() * state.amplitudes().adjoint();
    }

    void finish_trajectory() { ++count_; }

    void merge(const EnsembleAccumulator& other) {
        if (other.count_ == 0) return;
        if (count_ == 0 && slots_.empty()) {
            *this = other;
            return;
        }
        if (!(other.layout_ == layout_) || other.slots_.size() != slots_.size() || other.keep_total_ != keep_total_)
            throw std::invalid_argument("cannot merge accumulators with different shapes");
        for (std::size_t k = 0; k < slots_.size(); ++k) {
            Slot& a = slots_[k];
            const Slot& b = other.slots_[k];
            a.data += b.data;
            a.ancilla += b.ancilla;
            if (keep_total_) a.total += b.total;
            a.f2_data_sum += b.f2_data_sum;
            a.f2_data_sq += b.f2_data_sq;
            a.f2_anc_sum += b.f2_anc_sum;
            a.f2_anc_sq += b.f2_anc_sq;
        }
        count_ += other.count_;
    }

    std::int64_t count() const { return count_; }
    const RegisterLayout& layout() const { return layout_; }
    const SampleIndex& index() const { return index_; }
    const std::vector<SamplePoint>& points() const { return index_.points(); }
    bool keeps_total() const { return keep_total_; }
    const Slot& slot(std::size_t k) const { return slots_[k]; }
    std::size_t size() const { return slots_.size(); }

    DensityMatrix data(std::size_t k) const { return normalized(slots_[k].data, layout_.n_data); }
    DensityMatrix ancilla(std::size_t k) const { return normalized(slots_[k].ancilla, layout_.n_ancilla); }
    DensityMatrix total(std::size_t k) const {
        if (!keep_total_) throw std::logic_error("accumulator does not keep the full register");
        return normalized(slots_[k].total, layout_.n_qubits());
    }

    /// Mean and standard error of the per-trajectory ground-pattern population.
    std::pair<double, double> f2_data_stats(std::size_t k) const {
        return mean_stderr(slots_[k].f2_data_sum, slots_[k].f2_data_sq);
    }
    std::pair<double, double> f2_ancilla_stats(std::size_t k) const {
        return mean_stderr(slots_[k].f2_anc_sum, slots_[k].f2_anc_sq);
    }

  private:
    DensityMatrix normalized(const CMatrix& sum, int n) const {
        if (count_ == 0) throw std::logic_error("empty accumulator");
        return DensityMatrix::unchecked(n, sum / static_cast<double>(count_));
    }

    std::pair<double, double> mean_stderr(double sum, double sq) const {
        if (count_ == 0) throw std::logic_error("empty accumulator");
        const double n = static_cast<double>(count_);
        const double mean = sum / n;
        const double var = n > 1 ? std::max(0.0, (sq - n * mean * mean) / (n - 1)) : 0.0;
        return {mean, std::sqrt(var / n)};
    }

    RegisterLayout layout_;
    SampleIndex index_;
    bool keep_total_ = false;
    std::vector<Slot> slots_;
    std::int64_t count_ = 0;
};

//---------------------------------------------------------------------------//
// Trajectories
//---------------------------------------------------------------------------//

struct TrajectoryOptions {
    int n_sub = 20;
};

/// Schedule with per-sub-step propagators precomputed.
class PreparedProtocol {
  public:
    PreparedProtocol(const RoundProtocol& protocol, int n_sub) : protocol_(&protocol), n_sub_(n_sub) {
        if (n_sub < 1) throw std::invalid_argument("n_sub must be positive");
        const int n = protocol.layout.n_qubits();
        if (protocol.schedule.max_qubit() >= n) throw std::invalid_argument("schedule addresses qubits outside the register");
        const double dt = 1.0 / n_sub;
        for (const auto& step : protocol.schedule.steps()) substep_.emplace_back(step, n, dt);
        for (const auto q : protocol.layout.ancilla_qubits()) ancilla_masks_.push_back(qubit_mask(n, q));
    }

    const RoundProtocol& protocol() const { return *protocol_; }
    const GateSchedule& schedule() const { return protocol_->schedule; }
    int n_qubits() const { return protocol_->layout.n_qubits(); }
    int n_sub() const { return n_sub_; }
    double dt() const { return 1.0 / n_sub_; }
    const StepPropagator& substep_propagator(std::size_t step) const { return substep_[step]; }
    std::span<const std::uint64_t> ancilla_masks() const { return ancilla_masks_; }

  private:
    const RoundProtocol* protocol_;
    int n_sub_;
    std::vector<StepPropagator> substep_;
    std::vector<std::uint64_t> ancilla_masks_;
};

namespace detail {

inline int mask_to_qubit(int n_qubits, std::uint64_t mask) {
    int bit = 0;
    while ((std::uint64_t{1} << bit) != mask) ++bit;
    return n_qubits - 1 - bit;
}

inline void lower(CVector& v, std::uint64_t mask) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const auto idx = static_cast<std::uint64_t>(i);
        if (!(idx & mask)) {
            v(i) = v(static_cast<Eigen::Index>(idx | mask));
            v(static_cast<Eigen::Index>(idx | mask)) = 0.0;
        }
    }
}

inline void raise(CVector& v, std::uint64_t mask) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const auto idx = static_cast<std::uint64_t>(i);
        if (!(idx & mask)) {
            v(static_cast<Eigen::Index>(idx | mask)) = v(i);
            v(i) = 0.0;
        }
    }
}

}  // namespace detail

/// Upper bound on dt times the summed rate of first-order sampled channels.
inline constexpr double kMaxJumpProbability = 0.1;

/// Advances one sub-step of length dt in place.
///
/// Order: exact control unitary over dt; hot-reservoir flips (each qubit
/// independently with probability gamma_h dt, the hot part of the
/// non-Hermitian drift being a constant that renormalization removes);
/// then, when cooling is on, each ancilla channel in turn. An ancilla with
/// excited population w1 decays with probability w1 (1 - e^{-A dt}), is
/// excited with probability (1 - w1)(1 - e^{-B dt}), and otherwise takes the
/// no-jump factor exp(-dt (A n + B (1 - n)) / 2). The three branches exhaust
/// the norm, so single-ancilla decay is exact at any dt and simultaneous
/// decays of different ancillas are not serialized.
inline void trajectory_substep(StateVector& state, const StepPropagator& control, double dt, const NoiseParams& noise,
                               bool cooling_on, std::span<const std::uint64_t> ancilla_masks, Rng& rng,
                               double t_end, std::vector<JumpEvent>* events) {
    CVector& psi = state.mutable_amplitudes();
    const int n = state.n_qubits();
    control.apply(psi);

    if (noise.gamma_h > 0.0) {
        const double p_flip = noise.gamma_h * dt;
        if (p_flip * n >= kMaxJumpProbability)
            throw std::invalid_argument("trajectory_substep: dt too large for the hot flip rate");
        for (int q = 0; q < n; ++q) {
            if (rng.uniform() < p_flip) {
                const auto mask = qubit_mask(n, QubitIndex(q));
                kernels::flip(psi, mask);
                if (events) events->push_back({t_end, QubitIndex(q), JumpKind::bit_flip});
            }
        }
    }

    if (!cooling_on || noise.gamma_c <= 0.0) return;
    const double A = noise.decay_rate();
    const double B = noise.excitation_rate();
    const double q_down = -std::expm1(-A * dt), q_up = -std::expm1(-B * dt);
    const double g1 = std::exp(-0.5 * A * dt), g0 = std::exp(-0.5 * B * dt);

    for (const auto mask : ancilla_masks) {
        const double w1 = std::clamp(kernels::excited_population(psi, mask), 0.0, 1.0);
        const double p_down = w1 * q_down, p_up = (1.0 - w1) * q_up;
        const double u = rng.uniform();
        if (u < p_down) {
            detail::lower(psi, mask);
            if (events) events->push_back({t_end, QubitIndex(detail::mask_to_qubit(n, mask)), JumpKind::cool});
        } else if (u < p_down + p_up) {
            detail::raise(psi, mask);
            if (events) events->push_back({t_end, QubitIndex(detail::mask_to_qubit(n, mask)), JumpKind::heat});
        } else {
            for (Eigen::Index i = 0; i < psi.size(); ++i) psi(i) *= (static_cast<std::uint64_t>(i) & mask) ? g1 : g0;
        }
        state.normalize();
    }
}

/// Called after every completed step with (step index 0-based, state).
using StepObserver = std::function<void(std::size_t, const StateVector&)>;

/// Runs one round in place starting at time t0.
inline void run_round(StateVector& state, const PreparedProtocol& prepared, const NoiseParams& noise, Rng& rng,
                      double t0, TrajectoryRecord* record, const StepObserver& observer = {}) {
    const GateSchedule& schedule = prepared.schedule();
    const double dt = prepared.dt();
    std::optional<std::uint32_t> last_outcome;
    std::vector<JumpEvent>* events = record ? &record->jumps : nullptr;

    for (std::size_t k = 0; k < schedule.size(); ++k) {
        const Step& step = schedule[k];
        const bool cooling = noise.cooling_on(schedule, k);
        const StepPropagator& control = prepared.substep_propagator(k);
        for (int sub = 0; sub < prepared.n_sub(); ++sub) {
            const double t_end = t0 + static_cast<double>(k) + (sub + 1) * dt;
            trajectory_substep(state, control, dt, noise, cooling, prepared.ancilla_masks(), rng, t_end, events);
        }
        if (step.has_measurement()) {
            auto result = measure_qubits_projective(state, step.measured, rng);
            state = std::move(result.collapsed);
            last_outcome = result.outcome;
            if (record) record->outcomes.push_back(result.outcome);
        }
        if (step.correction) {
            if (!last_outcome) throw std::logic_error("correction marker without a preceding measurement");
            for (const auto q : (*step.correction)(*last_outcome))
                kernels::flip(state.mutable_amplitudes(), qubit_mask(state.n_qubits(), q));
        }
        if (observer) observer(k, state);
    }
}

/// One trajectory over `rounds` rounds, optionally feeding an accumulator.
inline TrajectoryRecord run_trajectory(const StateVector& initial, int rounds, const PreparedProtocol& prepared,
                                       const NoiseParams& noise, std::uint64_t seed,
                                       EnsembleAccumulator* acc = nullptr, bool record_jumps = true) {
    if (initial.n_qubits() != prepared.n_qubits()) throw std::invalid_argument("initial state does not match register");
    TrajectoryRecord record{seed, {}, {}};
    Rng rng(seed);
    StateVector state = initial;
    if (acc) acc->add(0, state);
    const auto steps = prepared.schedule().size();
    for (int r = 1; r <= rounds; ++r) {
        StepObserver observer;
        if (acc)
            observer = [&](std::size_t k, const StateVector& s) {
                const int slot = acc->index().slot(r, static_cast<int>(k) + 1);
                if (slot >= 0) acc->add(static_cast<std::size_t>(slot), s);
            };
        run_round(state, prepared, noise, rng, static_cast<double>((r - 1) * steps), &record, observer);
        if (!record_jumps) record.jumps.clear();
    }
    if (acc) acc->finish_trajectory();
    return record;
}

//---------------------------------------------------------------------------//
// Ensembles
//---------------------------------------------------------------------------//

struct EnsembleOptions {
    int n_sub = 20;
    SamplePlan plan;
    /// 0 picks std::thread::hardware_concurrency().
    int threads = 0;
    /// Trajectories are split into this many contiguous batches, accumulated
    /// separately and merged in batch order, so results do not depend on the
    /// thread count.
    int batches = 16;
};

inline std::vector<std::uint64_t> derive_seeds(std::uint64_t master_seed, std::size_t n_traj) {
    std::vector<std::uint64_t> seeds(n_traj);
    for (std::size_t i = 0; i < n_traj; ++i) seeds[i] = trajectory_seed(master_seed, i);
    return seeds;
}

inline std::vector<EnsembleAccumulator> run_ensemble_batches(const StateVector& initial, int rounds,
                                                             const RoundProtocol& protocol, const NoiseParams& noise,
                                                             std::span<const std::uint64_t> seeds,
                                                             const EnsembleOptions& options) {
    if (seeds.empty()) throw std::invalid_argument("run_ensemble: need at least one trajectory");
    if (rounds < 0) throw std::invalid_argument("run_ensemble: negative round count");
    noise.validate(protocol.schedule);
    const PreparedProtocol prepared(protocol, options.n_sub);
    const SampleIndex index(static_cast<int>(protocol.steps_per_round()), rounds, options.plan);

    const std::size_t n = seeds.size();
    const std::size_t n_batches = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(options.batches, 1)), 1, n);
    std::vector<EnsembleAccumulator> batches(n_batches);

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t b = next++; b < n_batches; b = next++) {
            try {
                EnsembleAccumulator acc(protocol.layout, index, options.plan.keep_total);
                for (std::size_t i = b * n / n_batches; i < (b + 1) * n / n_batches; ++i)
                    run_trajectory(initial, rounds, prepared, noise, seeds[i], &acc, /*record_jumps=*/false);
                batches[b] = std::move(acc);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };

    const unsigned hw = std::max(1U, std::thread::hardware_concurrency());
    const std::size_t n_threads =
        std::min<std::size_t>(n_batches, options.threads > 0 ? static_cast<std::size_t>(options.threads) : hw);
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
    return batches;
}

inline EnsembleAccumulator merge_all(std::span<const EnsembleAccumulator> batches) {
    EnsembleAccumulator out;
    for (const auto& b : batches) out.merge(b);
    return out;
}

inline EnsembleAccumulator run_ensemble(const StateVector& initial, int rounds, const RoundProtocol& protocol,
                                        const NoiseParams& noise, std::span<const std::uint64_t> seeds,
                                        const EnsembleOptions& options) {
    const auto batches = run_ensemble_batches(initial, rounds, protocol, noise, seeds, options);
    return merge_all(batches);
}

//---------------------------------------------------------------------------//
// Master-equation reference
//---------------------------------------------------------------------------//

struct OracleOptions {
    /// Integrator step; 1/dt must be an integer.
    double dt = 1.0 / 200.0;
    SamplePlan plan;
    bool check_positivity = true;
};

struct OracleSample {
    SamplePoint point;
    DensityMatrix rho;
};

/// Lindblad right-hand side for one schedule step.
class Liouvillian {
  public:
    Liouvillian(const Step& step, int n_qubits, const NoiseParams& noise, bool cooling_on,
                std::span<const std::uint64_t> ancilla_masks)
        : n_(n_qubits), gamma_h_(noise.gamma_h) {
        for (const auto& t : step.terms) {
            if (t.kind == TermKind::pushing_gate) {
                std::array<double, 4> diag;
                for (std::size_t k = 0; k < 4; ++k) diag[k] = t.strength * t.alphas[k];
                diagonals_.push_back({qubit_mask(n_, t.qubits[0]), qubit_mask(n_, t.qubits[1]), diag});
            } else {
                singles_.push_back({qubit_mask(n_, t.qubits[0]), t.strength * t.generator()});
            }
        }
        if (cooling_on && noise.gamma_c > 0.0) {
            A_ = noise.decay_rate();
            B_ = noise.excitation_rate();
            cooled_.assign(ancilla_masks.begin(), ancilla_masks.end());
        }
    }

    void operator()(const CMatrix& rho, CMatrix& out) const {
        const Eigen::Index d = rho.rows();
        // H rho
        CMatrix h_rho = CMatrix::Zero(d, d);
        for (const auto& s : singles_) {
            for (Eigen::Index c = 0; c < d; ++c)
                for (Eigen::Index i = 0; i < d; ++i) {
                    const auto idx = static_cast<std::uint64_t>(i);
                    if (idx & s.mask) continue;
                    const auto j = static_cast<Eigen::Index>(idx | s.mask);
                    h_rho(i, c) += s.g(0, 0) * rho(i, c) + s.g(0, 1) * rho(j, c);
                    h_rho(j, c) += s.g(1, 0) * rho(i, c) + s.g(1, 1) * rho(j, c);
                }
        }
        for (const auto& p : diagonals_) {
            for (Eigen::Index r = 0; r < d; ++r) {
                const auto idx = static_cast<std::uint64_t>(r);
                const int ab = ((idx & p.mask_i) ? 2 : 0) | ((idx & p.mask_j) ? 1 : 0);
                h_rho.row(r) += p.diag[static_cast<std::size_t>(ab)] * rho.row(r);
            }
        }
        out = Complex(0.0, -1.0) * (h_rho - h_rho.adjoint());

        if (gamma_h_ > 0.0) {
            for (int q = 0; q < n_; ++q) {
                const auto m = qubit_mask(n_, QubitIndex(q));
                for (Eigen::Index c = 0; c < d; ++c)
                    for (Eigen::Index r = 0; r < d; ++r)
                        out(r, c) += gamma_h_ * (rho(static_cast<Eigen::Index>(static_cast<std::uint64_t>(r) ^ m),
                                                     static_cast<Eigen::Index>(static_cast<std::uint64_t>(c) ^ m)) -
                                                 rho(r, c));
            }
        }

        for (const auto m : cooled_) {
            for (Eigen::Index c = 0; c < d; ++c)
                for (Eigen::Index r = 0; r < d; ++r) {
                    const auto ur = static_cast<std::uint64_t>(r), uc = static_cast<std::uint64_t>(c);
                    const bool br = ur & m, bc = uc & m;
                    const auto flipped = rho(static_cast<Eigen::Index>(ur ^ m), static_cast<Eigen::Index>(uc ^ m));
                    Complex v = -0.5 * (A_ * (br + bc) + B_ * (!br + !bc)) * rho(r, c);
                    if (!br && !bc) v += A_ * flipped;
                    if (br && bc) v += B_ * flipped;
                    out(r, c) += v;
                }
        }
    }

  private:
    struct Single {
        std::uint64_t mask;
        Mat2 g;
    };
    struct Diagonal {
        std::uint64_t mask_i;
        std::uint64_t mask_j;
        std::array<double, 4> diag;
    };
    int n_;
    double gamma_h_;
    double A_ = 0.0;
    double B_ = 0.0;
    std::vector<Single> singles_;
    std::vector<Diagonal> diagonals_;
    std::vector<std::uint64_t> cooled_;
};

namespace detail {

inline void rk4_step(const Liouvillian& L, CMatrix& rho, double h, CMatrix (&k)[4], CMatrix& tmp) {
    L(rho, k[0]);
    tmp = rho + (0.5 * h) * k[0];
    L(tmp, k[1]);
    tmp = rho + (0.5 * h) * k[1];
    L(tmp, k[2]);
    tmp = rho + h * k[2];
    L(tmp, k[3]);
    rho += (h / 6.0) * (k[0] + 2.0 * k[1] + 2.0 * k[2] + k[3]);
}

inline std::uint32_t pattern_of(std::uint64_t index, std::span<const std::uint64_t> masks) {
    std::uint32_t p = 0;
    for (const auto m : masks) p = (p << 1) | ((index & m) ? 1U : 0U);
    return p;
}

}  // namespace detail

/// Integrates the Lindblad equation through `rounds` rounds.
///
/// Measurement markers become the outcome-resolved map rho -> {Pi_m rho Pi_m};
/// the branches evolve separately (the equation is linear) until a correction
/// marker applies C_m to branch m and recombines them. Any branches still
/// open at the end of a round are summed.
inline std::vector<OracleSample> evolve_master_equation(const DensityMatrix& rho0, const RoundProtocol& protocol,
                                                        const NoiseParams& noise, int rounds,
                                                        const OracleOptions& options = {}) {
    const int n = protocol.layout.n_qubits();
    if (rho0.n_qubits() != n) throw std::invalid_argument("evolve_master_equation: register mismatch");
    noise.validate(protocol.schedule);
    const double per_step = 1.0 / options.dt;
    const int substeps = static_cast<int>(std::lround(per_step));
    if (substeps < 1 || std::abs(per_step - substeps) > 1e-9) throw std::invalid_argument("1/dt must be an integer");
    const double h = 1.0 / substeps;

    const GateSchedule& schedule = protocol.schedule;
    const SampleIndex index(static_cast<int>(schedule.size()), rounds, options.plan);
    std::vector<std::uint64_t> anc_masks;
    for (const auto q : protocol.layout.ancilla_qubits()) anc_masks.push_back(qubit_mask(n, q));

    std::vector<Liouvillian> generators;
    for (std::size_t k = 0; k < schedule.size(); ++k)
        generators.emplace_back(schedule[k], n, noise, noise.cooling_on(schedule, k), anc_masks);

    std::vector<OracleSample> samples;
    samples.push_back({index.points()[0], rho0});

    struct Branch {
        std::uint32_t outcome;
        std::vector<std::uint64_t> masks;
        CMatrix rho;
    };
    std::vector<Branch> branches{{0, {}, rho0.matrix()}};
    const auto d = static_cast<Eigen::Index>(rho0.dim());
    CMatrix k[4] = {CMatrix(d, d), CMatrix(d, d), CMatrix(d, d), CMatrix(d, d)};
    CMatrix tmp(d, d);

    auto combined = [&] {
        CMatrix sum = CMatrix::Zero(d, d);
        for (const auto& b : branches) sum += b.rho;
        return sum;
    };

    for (int r = 1; r <= rounds; ++r) {
        for (std::size_t s = 0; s < schedule.size(); ++s) {
            const Step& step = schedule[s];
            for (auto& b : branches)
                for (int i = 0; i < substeps; ++i) detail::rk4_step(generators[s], b.rho, h, k, tmp);

            if (step.has_measurement()) {
                std::vector<std::uint64_t> masks;
                for (const auto q : step.measured) masks.push_back(qubit_mask(n, q));
                const CMatrix rho = combined();
                branches.clear();
                for (std::uint32_t m = 0; m < (1U << masks.size()); ++m) {
                    CMatrix proj = CMatrix::Zero(d, d);
                    for (Eigen::Index c = 0; c < d; ++c) {
                        if (detail::pattern_of(static_cast<std::uint64_t>(c), masks) != m) continue;
                        for (Eigen::Index row = 0; row < d; ++row)
                            if (detail::pattern_of(static_cast<std::uint64_t>(row), masks) == m) proj(row, c) = rho(row, c);
                    }
                    if (std::abs(proj.trace()) > 1e-300) branches.push_back({m, masks, std::move(proj)});
                }
            }
            if (step.correction) {
                CMatrix sum = CMatrix::Zero(d, d);
                for (auto& b : branches) {
                    if (b.masks.empty()) throw std::logic_error("correction marker without a preceding measurement");
                    std::uint64_t flip = 0;
                    for (const auto q : (*step.correction)(b.outcome)) flip |= qubit_mask(n, q);
                    for (Eigen::Index c = 0; c < d; ++c)
                        for (Eigen::Index row = 0; row < d; ++row)
                            sum(static_cast<Eigen::Index>(static_cast<std::uint64_t>(row) ^ flip),
                                static_cast<Eigen::Index>(static_cast<std::uint64_t>(c) ^ flip)) += b.rho(row, c);
                }
                branches = {{0, {}, std::move(sum)}};
            }
            if (s + 1 == schedule.size() && branches.size() > 1) branches = {{0, {}, combined()}};

            const int slot = index.slot(r, static_cast<int>(s) + 1);
            if (slot >= 0 || options.check_positivity) {
                CMatrix rho = combined();
                if (options.check_positivity) {
                    Eigen::SelfAdjointEigenSolver<CMatrix> solver(rho, Eigen::EigenvaluesOnly);
                    if (solver.eigenvalues().minCoeff() < -1e-6)
                        throw std::runtime_error("evolve_master_equation: positivity lost; reduce dt");
                }
                if (slot >= 0) samples.push_back({index.points()[static_cast<std::size_t>(slot)],
                                                  DensityMatrix::unchecked(n, std::move(rho))});
            }
        }
    }
    return samples;
}

}  // namespace twobath
