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

// Experiment drivers behind the command-line tool: gate verification, the
// trajectory runner with its optional master-equation reference, rate-model
// tables, and the trajectory versus rate-chain overlay.
//
// Everything written to disk is a function of the configuration and seed
// alone (no timings, thread counts or host data), so reruns are
// byte-identical.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "twobath/compiler.hpp"
#include "twobath/config.hpp"
#include "twobath/dynamics.hpp"
#include "twobath/metrics.hpp"
#include "twobath/qstate.hpp"
#include "twobath/ratemodel.hpp"

namespace twobath {

inline constexpr double kGateTolerance = 1e-9;

/// Formats a real with 12 significant digits, the precision of every table.
inline std::string fmt12(double v) { return fmt::format("{:.12g}", v); }

//---------------------------------------------------------------------------//
// Gate verification
//---------------------------------------------------------------------------//

struct GateCheck {
    std::string name;
    double distance = 0.0;
};

struct GateReport {
    std::vector<GateCheck> checks;
    std::size_t measured_steps = 0;
    std::size_t measurement_free_steps = 0;

    bool pass(double tolerance = kGateTolerance) const {
        for (const auto& c : checks)
            if (!(c.distance < tolerance)) return false;
        return measured_steps == 16 && measurement_free_steps == 68;
    }
};

/// Phase-aligned Frobenius distances of every compiled block to its canonical
/// unitary. `perturb` is added to every control strength (fault injection).
inline GateReport verify_gates(double perturb = 0.0) {
    auto maybe_perturb = [&](const GateSchedule& s) { return perturb == 0.0 ? s : perturb_strengths(s, perturb); };
    GateReport report;

    double cnot = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int t = 0; t < 3; ++t) {
            if (c == t) continue;
            const auto s = maybe_perturb(compile_cnot(QubitIndex(c), QubitIndex(t)));
            cnot = std::max(cnot, phase_aligned_distance(schedule_net_unitary(s, 3),
                                                         canonical::cnot(3, QubitIndex(c), QubitIndex(t))));
        }
    report.checks.push_back({"cnot", cnot});

    double toffoli = 0.0;
    std::array<int, 3> perm{0, 1, 2};
    do {
        const QubitIndex a(perm[0]), b(perm[1]), t(perm[2]);
        const auto s = maybe_perturb(compile_toffoli(a, b, t));
        toffoli = std::max(toffoli, phase_aligned_distance(schedule_net_unitary(s, 3), canonical::toffoli(3, a, b, t)));
    } while (std::next_permutation(perm.begin(), perm.end()));
    report.checks.push_back({"toffoli", toffoli});

    const auto measured = build_measured_round();
    const auto ms = maybe_perturb(measured.schedule);
    std::size_t first = ms.size(), last = 0;
    for (std::size_t k = 0; k < ms.size(); ++k)
        if (ms[k].label == "transversal") {
            first = std::min(first, k);
            last = k + 1;
        }
    const auto& l = measured.layout;
    const CMatrix transversal = canonical::cnot(6, l.data(0), l.ancilla(0)) * canonical::cnot(6, l.data(1), l.ancilla(1)) *
                                canonical::cnot(6, l.data(2), l.ancilla(2));
    report.checks.push_back(
        {"transversal_cnot", phase_aligned_distance(schedule_net_unitary(ms, 6, first, last), transversal)});
    report.checks.push_back(
        {"measured_round", phase_aligned_distance(schedule_net_unitary(ms, 6, 0, first_marker_step(ms)),
                                                  canonical::measured_round(l))});

    const auto mf = build_measurement_free_round();
    report.checks.push_back(
        {"measurement_free_round", phase_aligned_distance(schedule_net_unitary(maybe_perturb(mf.schedule), 5),
                                                          canonical::measurement_free_round(mf.layout))});
    report.measured_steps = measured.schedule.size();
    report.measurement_free_steps = mf.schedule.size();
    return report;
}

inline std::string format_gate_report(const GateReport& r, double tolerance = kGateTolerance) {
    std::string out = "check,distance,status\n";
    for (const auto& c : r.checks)
        out += fmt::format("{},{:.3e},{}\n", c.name, c.distance, c.distance < tolerance ? "ok" : "FAIL");
    out += fmt::format("measured_round_steps,{},{}\n", r.measured_steps, r.measured_steps == 16 ? "ok" : "FAIL");
    out += fmt::format("measurement_free_round_steps,{},{}\n", r.measurement_free_steps,
                       r.measurement_free_steps == 68 ? "ok" : "FAIL");
    return out;
}

//---------------------------------------------------------------------------//
// Trajectory runs
//---------------------------------------------------------------------------//

/// Memory budget for keeping full-register matrices when total_entropy = auto.
inline constexpr double kTotalMatrixBudgetBytes = 256.0 * 1024 * 1024;

struct RunOptions {
    /// 0 picks the hardware concurrency; never affects results.
    int threads = 0;
};

/// Sample plan of a config: every step, or the post-cooling step and the last
/// step of every round.
inline SamplePlan sample_plan(const ExperimentConfig& c, int steps_per_round, bool keep_total) {
    if (c.sampling == Sampling::every_step) return SamplePlan::every_step(keep_total);
    return SamplePlan{{1, steps_per_round}, keep_total};
}

inline bool keeps_total_matrix(const ExperimentConfig& c, int steps_per_round, int n_qubits) {
    if (c.oracle || c.total_entropy == TotalEntropy::on) return true;
    if (c.total_entropy == TotalEntropy::off) return false;
    const double points =
        c.sampling == Sampling::every_step ? 1.0 + double(c.rounds) * steps_per_round : 1.0 + 2.0 * c.rounds;
    const double dim = std::ldexp(1.0, n_qubits);
    const double batches = std::min<double>(c.batches, double(c.n_traj));
    return points * dim * dim * 16.0 * batches <= kTotalMatrixBudgetBytes;
}

struct OracleComparison {
    std::vector<RoundMetrics> rows;
    std::vector<SamplePoint> points;
    std::vector<double> trace_distance;
};

struct RunResult {
    ExperimentConfig config;
    bool kept_total = false;
    std::vector<std::uint64_t> seeds;
    std::vector<RoundMetrics> rows;
    Estimate final_f2_data;
    Estimate long_time_f2_data;
    Estimate first_round_f2_data;
    Estimate ancilla_after_cooling_first;
    Estimate ancilla_after_cooling_last;
    std::optional<OracleComparison> oracle;
};

inline StateVector initial_state(const RoundProtocol& p) { return StateVector(p.layout.n_qubits()); }
inline StateVector data_reference(const RoundProtocol& p) { return StateVector(p.layout.n_data); }

/// The last quarter of the rounds (at least one), used for long-time averages.
inline int long_time_first_round(int rounds) { return rounds - std::max(1, rounds / 4) + 1; }

inline RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {}) {
    config.validate();
    const RoundProtocol protocol = config.build_protocol();
    const int S = static_cast<int>(protocol.steps_per_round());
    RunResult result;
    result.config = config;
    result.kept_total = keeps_total_matrix(config, S, protocol.layout.n_qubits());
    result.seeds = derive_seeds(config.master_seed, static_cast<std::size_t>(config.n_traj));

    const EnsembleOptions eopts{.n_sub = config.n_sub,
                                .plan = sample_plan(config, S, result.kept_total),
                                .threads = options.threads,
                                .batches = config.batches};
    const auto batches =
        run_ensemble_batches(initial_state(protocol), config.rounds, protocol, config.noise, result.seeds, eopts);
    const auto merged = merge_all(batches);
    result.rows = compute_step_metrics(merged, data_reference(protocol));

    const int R = config.rounds;
    const int late = long_time_first_round(R);
    result.final_f2_data =
        window_fidelity(batches, FidelityKind::data, [&](const SamplePoint& p) { return p.round == R && p.step == S; });
    result.long_time_f2_data = window_fidelity(
        batches, FidelityKind::data, [&](const SamplePoint& p) { return p.round >= late && p.step == S; });
    result.first_round_f2_data =
        window_fidelity(batches, FidelityKind::data, [&](const SamplePoint& p) { return p.round == 1 && p.step == S; });
    result.ancilla_after_cooling_first = window_fidelity(
        batches, FidelityKind::ancilla, [&](const SamplePoint& p) { return p.round == 1 && p.step == 1; });
    result.ancilla_after_cooling_last = window_fidelity(
        batches, FidelityKind::ancilla, [&](const SamplePoint& p) { return p.round >= late && p.step == 1; });

    if (config.oracle) {
        OracleComparison oc;
        const auto samples = evolve_master_equation(DensityMatrix(initial_state(protocol)), protocol, config.noise, R,
                                                    {.dt = config.oracle_dt, .plan = eopts.plan});
        if (samples.size() != merged.size()) throw std::logic_error("oracle and ensemble sample points differ");
        for (std::size_t k = 0; k < samples.size(); ++k) {
            if (!(samples[k].point == merged.points()[k])) throw std::logic_error("oracle and ensemble sample points differ");
            oc.points.push_back(samples[k].point);
            oc.trace_distance.push_back(trace_distance(merged.total(k), samples[k].rho));
        }
        oc.rows = compute_oracle_metrics(samples, protocol.layout, data_reference(protocol));
        result.oracle = std::move(oc);
    }
    return result;
}

/// Rate-model predictions that apply to a configuration (measured protocol).
struct RatePredictions {
    double ancilla_fidelity = 0.0;   // fast cooling, ((n_c+1)/(2n_c+1))^3
    double first_round_p0 = 0.0;     // F_a (1 - 3 alpha - beta) + beta
    double chain_steady_p0 = 0.0;    // round-chain fixed point
    double chain_final_p0 = 0.0;     // round-chain P0 after `rounds`
    std::optional<double> slow_cooling_fss;  // x = exp(-A) for the one-step cooling window
};

/// Whether the per-round error probabilities are valid probabilities.
inline bool chain_defined(const RoundEventParams& q) { return q.alpha <= 1.0 && q.beta <= 1.0; }

inline RatePredictions rate_predictions(const NoiseParams& noise, int rounds) {
    RatePredictions p;
    const auto q = RoundEventParams::from_noise(noise.gamma_h, noise.n_c);
    p.ancilla_fidelity = q.F_a;
    p.first_round_p0 = first_round_p0(q);
    if (chain_defined(q)) {
        const auto f = flow_coefficients(event_probabilities(q));
        p.chain_steady_p0 = chain_steady_p0(f);
        p.chain_final_p0 = iterate_round_chain({}, f, rounds).back().P0;
    } else {
        p.chain_steady_p0 = p.chain_final_p0 = std::numeric_limits<double>::quiet_NaN();
    }
    const double alpha = 96.0 * noise.gamma_h;
    if (alpha < 1.0) {
        try {
            p.slow_cooling_fss = slow_cooling_fss(alpha, std::exp(-noise.decay_rate()));
        } catch (const std::domain_error&) {
        }
    }
    return p;
}

inline std::string format_estimate(const Estimate& e) { return fmt::format("{} +- {}", fmt12(e.mean), fmt12(e.error)); }

inline std::string format_run_summary(const RunResult& r) {
    const auto& c = r.config;
    std::string s;
    auto line = [&](std::string_view key, const std::string& value) { s += fmt::format("{} = {}\n", key, value); };
    s += "[config]\n";
    line("protocol", std::string(to_string(c.protocol)));
    line("gamma_h", fmt12(c.noise.gamma_h));
    line("Gamma_c", fmt12(c.noise.gamma_c));
    line("n_c", fmt12(c.noise.n_c));
    line("rounds", std::to_string(c.rounds));
    line("n_traj", std::to_string(c.n_traj));
    line("n_sub", std::to_string(c.n_sub));
    line("batches", std::to_string(c.batches));
    line("sampling", std::string(to_string(c.sampling)));
    line("total_matrix_kept", r.kept_total ? "true" : "false");
    s += "\n[seeds]\n";
    line("master_seed", std::to_string(c.master_seed));
    line("stream", "mt19937_64 seeded with splitmix64(splitmix64(master_seed) ^ splitmix64(~index))");
    line("first_seed", std::to_string(r.seeds.front()));
    line("seed_list", "seeds.csv");
    s += "\n[trajectories]\n";
    line("f2_data_round_1", format_estimate(r.first_round_f2_data));
    line("f2_data_final", format_estimate(r.final_f2_data));
    line("f2_data_long_time", format_estimate(r.long_time_f2_data));
    line("long_time_rounds", fmt::format("{}..{}", long_time_first_round(c.rounds), c.rounds));
    line("f2_ancilla_after_cooling_round_1", format_estimate(r.ancilla_after_cooling_first));
    line("f2_ancilla_after_cooling_long_time", format_estimate(r.ancilla_after_cooling_last));
    if (c.protocol == ProtocolKind::measured) {
        const auto p = rate_predictions(c.noise, c.rounds);
        s += "\n[rate_model]\n";
        line("ancilla_fidelity_fast_cooling", fmt12(p.ancilla_fidelity));
        line("first_round_p0", fmt12(p.first_round_p0));
        line("chain_p0_final", fmt12(p.chain_final_p0));
        line("chain_p0_steady", fmt12(p.chain_steady_p0));
        line("slow_cooling_fss", p.slow_cooling_fss ? fmt12(*p.slow_cooling_fss) : std::string("n/a"));
    }
    if (r.oracle) {
        std::size_t worst = 0;
        for (std::size_t k = 0; k < r.oracle->trace_distance.size(); ++k)
            if (r.oracle->trace_distance[k] > r.oracle->trace_distance[worst]) worst = k;
        s += "\n[oracle]\n";
        line("oracle_dt", fmt12(c.oracle_dt));
        line("max_trace_distance", fmt12(r.oracle->trace_distance[worst]));
        line("at", fmt::format("round {} step {}", r.oracle->points[worst].round, r.oracle->points[worst].step));
        line("oracle_f2_data_final", fmt12(r.oracle->rows.back().f2_data));
    }
    return s;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
}

inline std::string metrics_csv(std::span<const RoundMetrics> rows) {
    std::ostringstream os;
    write_metrics_csv(os, rows);
    return os.str();
}

/// Writes metrics.csv, summary.txt, config.ini and seeds.csv, plus
/// oracle_metrics.csv and oracle_distance.csv when the oracle ran.
inline void write_run_outputs(const RunResult& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_text(dir / "metrics.csv", metrics_csv(r.rows));
    write_text(dir / "summary.txt", format_run_summary(r));
    write_text(dir / "config.ini", format_config(r.config));
    std::string seeds = "index,seed\n";
    for (std::size_t i = 0; i < r.seeds.size(); ++i) seeds += fmt::format("{},{}\n", i, r.seeds[i]);
    write_text(dir / "seeds.csv", seeds);
    if (r.oracle) {
        write_text(dir / "oracle_metrics.csv", metrics_csv(r.oracle->rows));
        std::string d = "round,step,time,trace_distance\n";
        for (std::size_t k = 0; k < r.oracle->points.size(); ++k) {
            const auto& p = r.oracle->points[k];
            d += fmt::format("{},{},{},{}\n", p.round, p.step, fmt12(p.time), fmt12(r.oracle->trace_distance[k]));
        }
        write_text(dir / "oracle_distance.csv", d);
    }
}

//---------------------------------------------------------------------------//
// Trajectories against the rate chain
//---------------------------------------------------------------------------//

struct CompareRow {
    int round = 0;
    double f2_traj = 0.0;
    double f2_traj_err = 0.0;
    RoundChainState chain;
};

/// Round-end data fidelity of a measured-protocol run next to the round chain
/// started from P0 = 1 with F_a, alpha, beta derived from the noise.
inline std::vector<CompareRow> compare_with_chain(const ExperimentConfig& config, const RunOptions& options = {}) {
    if (config.protocol != ProtocolKind::measured)
        throw ConfigError("compare: the round chain describes the measured protocol only");
    ExperimentConfig c = config;
    c.sampling = Sampling::round_end;
    c.total_entropy = TotalEntropy::off;
    c.oracle = false;
    c.validate();
    const auto protocol = c.build_protocol();
    const int S = static_cast<int>(protocol.steps_per_round());
    const auto seeds = derive_seeds(c.master_seed, static_cast<std::size_t>(c.n_traj));
    const auto acc = run_ensemble(initial_state(protocol), c.rounds, protocol, c.noise, seeds,
                                  {.n_sub = c.n_sub, .plan = sample_plan(c, S, false), .threads = options.threads,
                                   .batches = c.batches});
    const auto q = RoundEventParams::from_noise(c.noise.gamma_h, c.noise.n_c);
    // The chain needs alpha, beta <= 1; beyond that its columns are NaN.
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<RoundChainState> chain(static_cast<std::size_t>(c.rounds) + 1, RoundChainState{nan, nan, nan, nan});
    if (chain_defined(q)) chain = iterate_round_chain({}, flow_coefficients(event_probabilities(q)), c.rounds);
    std::vector<CompareRow> rows;
    for (std::size_t k = 0; k < acc.size(); ++k) {
        const auto& p = acc.points()[k];
        if (p.step != S && p.round != 0) continue;
        const auto [m, e] = acc.f2_data_stats(k);
        rows.push_back({p.round, m, e, chain[static_cast<std::size_t>(p.round)]});
    }
    return rows;
}

inline std::string compare_csv(std::span<const CompareRow> rows) {
    std::string s = "round,f2_traj,f2_traj_err,p0_chain,pa_chain,pb_chain,p7_chain\n";
    for (const auto& r : rows)
        s += fmt::format("{},{},{},{},{},{},{}\n", r.round, fmt12(r.f2_traj), fmt12(r.f2_traj_err), fmt12(r.chain.P0),
                         fmt12(r.chain.Pa), fmt12(r.chain.Pb), fmt12(r.chain.P7));
    return s;
}

//---------------------------------------------------------------------------//
// Rate-model tables
//---------------------------------------------------------------------------//

/// Ancilla populations while cooling from basis state `initial`, by RK4, with
/// the B = 0 closed form alongside (NaN when n_c > 0).
inline std::string cooling_curve_csv(double gamma_c, double n_c, unsigned initial, double t_max, int points) {
    if (points < 1 || !(t_max > 0.0)) throw std::invalid_argument("cooling: need t_max > 0 and points >= 1");
    if (initial > 7) throw std::invalid_argument("cooling: initial state must be 0..7");
    const auto rates = CoolingRates::from_reservoir(gamma_c, n_c);
    std::string s = "t,P0,P1,P2,P3,P4,P5,P6,P7,fidelity,closed_form_fidelity\n";
    AncillaPopulations P{};
    P[initial] = 1.0;
    for (int i = 0; i <= points; ++i) {
        const double t = t_max * i / points;
        const int steps = std::max(100, static_cast<int>(std::ceil(1000.0 * t * (rates.A + rates.B))));
        const auto Pt = integrate_cooling(P, rates, t, steps);
        const double closed =
            n_c == 0.0 ? cooling_closed_form(initial, rates.A, t)[0] : std::numeric_limits<double>::quiet_NaN();
        s += fmt12(t);
        for (double v : Pt) s += "," + fmt12(v);
        s += fmt::format(",{},{}\n", fmt12(Pt[0]), fmt12(closed));
    }
    return s;
}

/// Fast-cooling ancilla fidelity for each n_c, next to the detailed-balance
/// steady state of the cooling equations.
inline std::string ancilla_fidelity_csv(std::span<const double> n_c_values) {
    std::string s = "n_c,ancilla_fidelity,cooling_steady_p0,difference\n";
    for (double n : n_c_values) {
        const double closed = ancilla_steady_fidelity(n);
        const double steady = cooling_steady_state(CoolingRates::from_reservoir(1.0, n))[0];
        s += fmt::format("{},{},{},{}\n", fmt12(n), fmt12(closed), fmt12(steady), fmt12(steady - closed));
    }
    return s;
}

/// Slow-cooling steady fidelity over a (gamma_h, Gamma_c) grid, with
/// alpha = 96 gamma_h and x = exp(-A t_cool).
inline std::string slow_cooling_csv(std::span<const double> gamma_h, std::span<const double> gamma_c, double n_c,
                                    double cooling_time) {
    std::string s = "gamma_h,Gamma_c,n_c,cooling_time,alpha,x,F_ss\n";
    for (double g : gamma_h)
        for (double G : gamma_c) {
            const double alpha = 96.0 * g;
            const double x = std::exp(-G * (n_c + 1.0) * cooling_time);
            double f = std::numeric_limits<double>::quiet_NaN();
            try {
                f = slow_cooling_fss(alpha, x);
            } catch (const std::exception&) {
            }
            s += fmt::format("{},{},{},{},{},{},{}\n", fmt12(g), fmt12(G), fmt12(n_c), fmt12(cooling_time),
                             fmt12(alpha), fmt12(x), fmt12(f));
        }
    return s;
}

struct ChainReport {
    std::vector<RoundChainState> states;
    RoundEventParams params;
    double steady_p0 = 0.0;
    std::optional<DecayFit> fit;
    std::string fit_error;
};

inline ChainReport run_chain(const RoundEventParams& q, int rounds, int fit_start = 4, int fit_window = 200) {
    q.validate();
    ChainReport r;
    r.params = q;
    const auto f = flow_coefficients(event_probabilities(q));
    r.states = iterate_round_chain({}, f, rounds);
    r.steady_p0 = chain_steady_p0(f);
    std::vector<double> p0;
    for (const auto& s : r.states) p0.push_back(s.P0);
    try {
        r.fit = fit_decay_constant(p0, fit_start, r.steady_p0, fit_window);
    } catch (const std::exception& e) {
        r.fit_error = e.what();
    }
    return r;
}

inline std::string chain_csv(const ChainReport& r) {
    std::string s = "round,P0,Pa,Pb,P7,perturbative_p0\n";
    for (std::size_t n = 0; n < r.states.size(); ++n) {
        const auto& st = r.states[n];
        const double series = n >= 1 ? perturbative_p0(static_cast<int>(n), r.params.alpha)
                                     : std::numeric_limits<double>::quiet_NaN();
        s += fmt::format("{},{},{},{},{},{}\n", n, fmt12(st.P0), fmt12(st.Pa), fmt12(st.Pb), fmt12(st.P7), fmt12(series));
    }
    return s;
}

inline std::string chain_summary(const ChainReport& r) {
    const double a = r.params.alpha;
    std::string s;
    s += fmt::format("F_a = {}\nalpha = {}\nbeta = {}\n", fmt12(r.params.F_a), fmt12(a), fmt12(r.params.beta));
    s += fmt::format("first_round_p0 = {}\n", fmt12(first_round_p0(r.params)));
    s += fmt::format("steady_p0 = {}\n", fmt12(r.steady_p0));
    s += fmt::format("steady_p0_series = {}\n", fmt12(0.5 * (1.0 - 3.0 * a + 24.0 * a * a)));
    if (r.fit) {
        s += fmt::format("delta_0 = {}\ndelta_0_minus_1 = {}\n", fmt12(r.fit->delta), fmt12(r.fit->delta - 1.0));
        if (a > 0.0) s += fmt::format("delta_0_coefficient = {}\n", fmt12((r.fit->delta - 1.0) / (a * a)));
        s += fmt::format("fit_relative_residual = {}\n", fmt::format("{:.3e}", r.fit->relative_residual));
    } else {
        s += fmt::format("delta_0 = n/a ({})\n", r.fit_error);
    }
    return s;
}

}  // namespace twobath
