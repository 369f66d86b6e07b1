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

// Fidelities and entropies per sample point.
//
// f2_data is <ref|rho_data|ref>, f2_ancilla the all-ground ancilla population,
// entropies are von Neumann entropies in bits of the data, ancilla and full
// register states. s_total is NaN when the accumulator did not keep the full
// register.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "twobath/dynamics.hpp"
#include "twobath/qstate.hpp"

namespace twobath {

struct RoundMetrics {
    int round = 0;
    int step = 0;
    double time = 0.0;
    double f2_data = 0.0;
    double f2_ancilla = 0.0;
    double s_total = 0.0;
    double s_data = 0.0;
    double s_ancilla = 0.0;
    std::int64_t n_traj = 0;
};

/// Standard errors of the same quantities.
struct MetricErrors {
    double f2_data = 0.0;
    double f2_ancilla = 0.0;
    double s_total = 0.0;
    double s_data = 0.0;
    double s_ancilla = 0.0;
};

namespace detail {

inline double ground_population(const DensityMatrix& rho) { return std::clamp(rho(0, 0).real(), 0.0, 1.0); }

inline RoundMetrics metrics_from_states(const SamplePoint& p, const DensityMatrix& data, const DensityMatrix& ancilla,
                                        const DensityMatrix* total, const StateVector& reference,
                                        std::int64_t n_traj) {
    RoundMetrics m;
    m.round = p.round;
    m.step = p.step;
    m.time = p.time;
    m.f2_data = squared_fidelity(data, reference);
    m.f2_ancilla = ground_population(ancilla);
    m.s_data = von_neumann_entropy(data);
    m.s_ancilla = von_neumann_entropy(ancilla);
    m.s_total = total ? von_neumann_entropy(*total) : std::numeric_limits<double>::quiet_NaN();
    m.n_traj = n_traj;
    return m;
}

}  // namespace detail

/// Metrics at every sample point of an accumulator.
inline std::vector<RoundMetrics> compute_step_metrics(const EnsembleAccumulator& acc, const StateVector& reference) {
    if (acc.count() == 0) throw std::invalid_argument("compute_step_metrics: empty accumulator");
    if (static_cast<int>(reference.n_qubits()) != acc.layout().n_data)
        throw std::invalid_argument("compute_step_metrics: reference must live on the data register");
    std::vector<RoundMetrics> out;
    out.reserve(acc.size());
    for (std::size_t k = 0; k < acc.size(); ++k) {
        std::optional<DensityMatrix> total;
        if (acc.keeps_total()) total = acc.total(k);
        out.push_back(detail::metrics_from_states(acc.points()[k], acc.data(k), acc.ancilla(k),
                                                  total ? &*total : nullptr, reference, acc.count()));
    }
    return out;
}

/// Metrics of master-equation samples (n_traj reported as 0).
inline std::vector<RoundMetrics> compute_oracle_metrics(std::span<const OracleSample> samples,
                                                        const RegisterLayout& layout, const StateVector& reference) {
    std::vector<QubitIndex> data = layout.data_qubits(), anc = layout.ancilla_qubits();
    std::vector<RoundMetrics> out;
    for (const auto& s : samples) {
        const auto rd = partial_trace(s.rho, data);
        const auto ra = partial_trace(s.rho, anc);
        out.push_back(detail::metrics_from_states(s.point, rd, ra, &s.rho, reference, 0));
    }
    return out;
}

/// Batch-means standard errors: the spread of per-batch metrics over sqrt(B).
/// Valid for the nonlinear entropies as well as the fidelities.
inline std::vector<MetricErrors> batch_standard_errors(std::span<const EnsembleAccumulator> batches,
                                                       const StateVector& reference) {
    if (batches.size() < 2) throw std::invalid_argument("batch_standard_errors: need at least two batches");
    std::vector<std::vector<RoundMetrics>> per;
    for (const auto& b : batches) per.push_back(compute_step_metrics(b, reference));
    const std::size_t n_points = per.front().size();
    const double B = static_cast<double>(batches.size());
    std::vector<MetricErrors> out(n_points);
    auto sem = [&](std::size_t k, double RoundMetrics::*field) {
        double mean = 0.0;
        for (const auto& p : per) mean += p[k].*field;
        mean /= B;
        double var = 0.0;
        for (const auto& p : per) var += (p[k].*field - mean) * (p[k].*field - mean);
        return std::sqrt(var / (B - 1) / B);
    };
    for (std::size_t k = 0; k < n_points; ++k) {
        out[k].f2_data = sem(k, &RoundMetrics::f2_data);
        out[k].f2_ancilla = sem(k, &RoundMetrics::f2_ancilla);
        out[k].s_data = sem(k, &RoundMetrics::s_data);
        out[k].s_ancilla = sem(k, &RoundMetrics::s_ancilla);
        out[k].s_total = sem(k, &RoundMetrics::s_total);
    }
    return out;
}

struct Estimate {
    double mean = 0.0;
    double error = 0.0;
};

enum class FidelityKind { data, ancilla };

/// Average fidelity over the sample points accepted by `pick`, with the
/// batch-means standard error (NaN with fewer than two batches). Uses the
/// per-slot fidelity sums only, so no matrix work is needed.
template <typename Pick>
Estimate window_fidelity(std::span<const EnsembleAccumulator> batches, FidelityKind kind, Pick pick) {
    if (batches.empty()) throw std::invalid_argument("window_fidelity: no batches");
    std::vector<double> batch_means;
    double total_sum = 0.0, total_weight = 0.0;
    for (const auto& b : batches) {
        if (b.count() == 0) throw std::invalid_argument("window_fidelity: empty batch");
        double sum = 0.0;
        std::size_t n_points = 0;
        for (std::size_t k = 0; k < b.size(); ++k) {
            if (!pick(b.points()[k])) continue;
            sum += kind == FidelityKind::data ? b.slot(k).f2_data_sum : b.slot(k).f2_anc_sum;
            ++n_points;
        }
        if (n_points == 0) throw std::invalid_argument("window_fidelity: no sample point selected");
        const double w = static_cast<double>(b.count()) * static_cast<double>(n_points);
        batch_means.push_back(sum / w);
        total_sum += sum;
        total_weight += w;
    }
    Estimate e{total_sum / total_weight, std::numeric_limits<double>::quiet_NaN()};
    const double B = static_cast<double>(batch_means.size());
    if (batch_means.size() >= 2) {
        double mean = 0.0, var = 0.0;
        for (double m : batch_means) mean += m / B;
        for (double m : batch_means) var += (m - mean) * (m - mean);
        e.error = std::sqrt(var / (B - 1) / B);
    }
    return e;
}

/// Population of span{|0...0>, |1...1>} in the data register; a diagnostic.
inline double codespace_population(const DensityMatrix& data) {
    return data(0, 0).real() + data(data.dim() - 1, data.dim() - 1).real();
}

/// Rows at a given in-round step, in round order.
inline std::vector<RoundMetrics> select_step(std::span<const RoundMetrics> rows, int step) {
    std::vector<RoundMetrics> out;
    for (const auto& r : rows)
        if (r.step == step && r.round > 0) out.push_back(r);
    return out;
}

inline constexpr const char* kCsvHeader = "round,step,time,f2_data,f2_ancilla,s_total,s_data,s_anc,n_traj";

inline std::string format_csv_row(const RoundMetrics& m) {
    return fmt::format("{},{},{:.12g},{:.12g},{:.12g},{:.12g},{:.12g},{:.12g},{}", m.round, m.step, m.time, m.f2_data,
                       m.f2_ancilla, m.s_total, m.s_data, m.s_ancilla, m.n_traj);
}

inline void write_metrics_csv(std::ostream& os, std::span<const RoundMetrics> rows) {
    os << kCsvHeader << '\n';
    for (const auto& r : rows) os << format_csv_row(r) << '\n';
}

}  // namespace twobath
