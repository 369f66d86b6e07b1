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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "twobath/ratemodel.hpp"

namespace twobath {
namespace {

// The eight cooling equations written out term by term.
AncillaPopulations cooling_rhs_by_hand(const AncillaPopulations& P, double A, double B) {
    return {A * P[1] + A * P[2] + A * P[4] - 3 * B * P[0],
            A * P[3] + A * P[5] - (A + 2 * B) * P[1] + B * P[0],
            A * P[3] + A * P[6] - (A + 2 * B) * P[2] + B * P[0],
            A * P[7] - (2 * A + B) * P[3] + B * P[1] + B * P[2],
            A * P[5] + A * P[6] - (A + 2 * B) * P[4] + B * P[0],
            A * P[7] - (2 * A + B) * P[5] + B * P[4] + B * P[1],
            A * P[7] - (2 * A + B) * P[6] + B * P[4] + B * P[2],
            -3 * A * P[7] + B * P[6] + B * P[5] + B * P[3]};
}

// Steady state written in terms of B/A.
AncillaPopulations steady_by_ratio(double A, double B) {
    const double r = B / A;
    const double p0 = std::pow(r + 1, -3);
    return {p0, r * p0, r * p0, r * r * p0, r * p0, r * r * p0, r * r * p0, r * r * r * p0};
}

AncillaPopulations random_populations(std::mt19937_64& g) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    AncillaPopulations P;
    double s = 0;
    for (auto& p : P) s += (p = u(g));
    for (auto& p : P) p /= s;
    return P;
}

double max_abs(const AncillaPopulations& a) {
    double m = 0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

TEST(CoolingRhs, MatchesHandWrittenEquations) {
    std::mt19937_64 g(1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto P = random_populations(g);
        const double A = 0.1 + trial, B = 0.05 * trial;
        const auto d = cooling_rhs(P, {A, B});
        const auto ref = cooling_rhs_by_hand(P, A, B);
        double sum = 0;
        for (std::size_t i = 0; i < 8; ++i) {
            EXPECT_NEAR(d[i], ref[i], 1e-13);
            sum += d[i];
        }
        EXPECT_NEAR(sum, 0.0, 1e-14);
    }
}

TEST(CoolingRhs, SteadyStateIsStationary) {
    for (double n_c : {0.0, 1e-3, 1e-2, 0.1, 0.5}) {
        const auto r = CoolingRates::from_reservoir(3.0, n_c);
        EXPECT_LT(max_abs(cooling_rhs(steady_by_ratio(r.A, r.B), r)), 1e-12);
        const auto ss = cooling_steady_state(r);
        const auto ref = steady_by_ratio(r.A, r.B);
        for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(ss[i], ref[i], 1e-15);
    }
}

TEST(CoolingRhs, ZeroTemperatureGroundStateIsAbsorbing) {
    AncillaPopulations P{};
    P[0] = 1.0;
    EXPECT_EQ(max_abs(cooling_rhs(P, {3.0, 0.0})), 0.0);
}

TEST(CoolingRhs, UniformIsFixedAtInfiniteTemperature) {
    AncillaPopulations P;
    P.fill(0.125);
    EXPECT_LT(max_abs(cooling_rhs(P, {2.0, 2.0})), 1e-15);
}

TEST(CoolingRhs, IntegrationConvergesToSteadyState) {
    std::mt19937_64 g(2);
    const CoolingRates r = CoolingRates::from_reservoir(2.0, 0.3);
    for (int trial = 0; trial < 5; ++trial) {
        const auto P = integrate_cooling(random_populations(g), r, 40.0 / r.A, 4000);
        const auto ref = steady_by_ratio(r.A, r.B);
        double dist = 0;
        for (std::size_t i = 0; i < 8; ++i) dist = std::max(dist, std::abs(P[i] - ref[i]));
        EXPECT_LT(dist, 1e-8);
    }
}

TEST(CoolingRhs, SymmetryClassesArePreserved) {
    const AncillaPopulations P{0.3, 0.1, 0.1, 0.05, 0.1, 0.05, 0.05, 0.25};
    const auto d = cooling_rhs(P, {1.3, 0.4});
    EXPECT_NEAR(d[1], d[2], 1e-12);
    EXPECT_NEAR(d[1], d[4], 1e-12);
    EXPECT_NEAR(d[3], d[5], 1e-12);
    EXPECT_NEAR(d[3], d[6], 1e-12);
}

TEST(AncillaSteadyFidelity, Values) {
    EXPECT_DOUBLE_EQ(ancilla_steady_fidelity(0.0), 1.0);
    EXPECT_NEAR(ancilla_steady_fidelity(1e-2), 0.9708756436, 1e-10);
    EXPECT_NEAR(ancilla_steady_fidelity(1e9), 0.125, 1e-9);
    EXPECT_THROW(ancilla_steady_fidelity(-0.1), std::invalid_argument);
}

TEST(AncillaSteadyFidelity, EqualsGroundPopulationOfRateSteadyState) {
    for (double n_c : {1e-3, 1e-2, 1e-1}) {
        const auto r = CoolingRates::from_reservoir(3.0, n_c);
        EXPECT_NEAR(ancilla_steady_fidelity(n_c), steady_by_ratio(r.A, r.B)[0], 1e-14);
    }
}

TEST(CoolingClosedForm, GroundStateStays) {
    for (double t : {0.0, 0.3, 5.0}) EXPECT_DOUBLE_EQ(cooling_closed_form(0, 3.0, t)[0], 1.0);
}

TEST(CoolingClosedForm, SingleExcitationBoundaries) {
    EXPECT_DOUBLE_EQ(cooling_closed_form(1, 3.0, 0.0)[1], 1.0);
    EXPECT_NEAR(cooling_closed_form(1, 3.0, 50.0)[0], 1.0, 1e-15);
}

TEST(CoolingClosedForm, TripleExcitationAtUnitAt) {
    const auto P = cooling_closed_form(7, 2.0, 0.5);
    EXPECT_NEAR(P[7], 0.049787068, 1e-9);
    EXPECT_NEAR(P[0], 0.252580458, 1e-9);
    EXPECT_NEAR(P[0], 1 - 3 * std::exp(-1.0) + 3 * std::exp(-2.0) - std::exp(-3.0), 1e-15);
    for (unsigned j : {3U, 5U, 6U}) EXPECT_NEAR(P[j], std::exp(-2.0) - std::exp(-3.0), 1e-15);
    for (unsigned j : {1U, 2U, 4U}) EXPECT_NEAR(P[j], std::exp(-1.0) - 2 * std::exp(-2.0) + std::exp(-3.0), 1e-15);
}

TEST(CoolingClosedForm, MatchesIntegratedEquationsForEveryInitialState) {
    for (unsigned i = 0; i < 8; ++i) {
        AncillaPopulations P0{};
        P0[i] = 1.0;
        const auto num = integrate_cooling(P0, {1.7, 0.0}, 0.8, 2000);
        const auto closed = cooling_closed_form(i, 1.7, 0.8);
        for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(num[j], closed[j], 1e-12) << i << " " << j;
    }
}

TEST(SlowCooling, Limits) {
    EXPECT_DOUBLE_EQ(slow_cooling_fss(0.096, 0.0), 1.0);
    EXPECT_NEAR(slow_cooling_fss(0.096, 1.0 - 1e-12), 0.0, 1e-10);
}

TEST(SlowCooling, ReferenceValue) {
    // alpha = 96 gamma_h with gamma_h = 1e-3, x = exp(-1.6).
    EXPECT_NEAR(slow_cooling_fss(0.096, std::exp(-1.6)), 0.9738387, 1e-7);
}

TEST(SlowCooling, IsFixedPointOfRoundUpdate) {
    for (double alpha : {0.01, 0.096, 0.3})
        for (double x : {0.1, 0.5, 0.9}) {
            const double F = slow_cooling_fss(alpha, x);
            const double next = F * (1 - alpha) + ((1 - F) * (1 - alpha) + F * alpha) * (1 - x);
            EXPECT_NEAR(next, F, 1e-14);
        }
}

TEST(SlowCooling, FidelityPolynomial) {
    const std::array<double, 4> p{0.4, 0.3, 0.2, 0.1};
    const double x = 0.3;
    EXPECT_NEAR(slow_cooling_fidelity(p, x), 0.4 + 0.3 * 0.7 + 0.2 * 0.49 + 0.1 * 0.343, 1e-15);
    EXPECT_NEAR(slow_cooling_fidelity(p, x, false), 0.4 + 0.3 * 0.7 + 0.2 * 0.49 + 0.1 * 0.49, 1e-15);
    // Matches the closed-form ground population averaged over initial weights.
    const double avg = p[0] * cooling_closed_form(0, 1.0, -std::log(x))[0] +
                       p[1] * cooling_closed_form(1, 1.0, -std::log(x))[0] +
                       p[2] * cooling_closed_form(3, 1.0, -std::log(x))[0] +
                       p[3] * cooling_closed_form(7, 1.0, -std::log(x))[0];
    EXPECT_NEAR(slow_cooling_fidelity(p, x), avg, 1e-15);
}

TEST(SlowCooling, RejectsDegenerateInput) {
    EXPECT_THROW(slow_cooling_fss(0.0, 1.0), std::domain_error);
    EXPECT_THROW(slow_cooling_fss(1.0, 0.3), std::invalid_argument);
}

TEST(EventProbabilities, PerfectRound) {
    const auto p = event_probabilities({1.0, 0.0, 0.0});
    EXPECT_DOUBLE_EQ(p[event_index(1, 1, 1)], 1.0);
    for (std::size_t k = 1; k < 16; ++k) EXPECT_DOUBLE_EQ(p[k], 0.0);
}

TEST(EventProbabilities, DataErrorsAreBinomial) {
    const double b = 0.07;
    const auto p = event_probabilities({1.0, 0.0, b});
    EXPECT_NEAR(p[event_index(1, 1, 1)], std::pow(1 - b, 3), 1e-15);
    EXPECT_NEAR(p[event_index(1, 1, 2)], 3 * b * (1 - b) * (1 - b), 1e-15);
    EXPECT_NEAR(p[event_index(1, 1, 3)], 3 * b * b * (1 - b), 1e-15);
    EXPECT_NEAR(p[event_index(1, 1, 4)], b * b * b, 1e-15);
}

TEST(EventProbabilities, UncooledAncillaIgnoresAlpha) {
    const auto p1 = event_probabilities({0.0, 0.1, 0.05});
    const auto p2 = event_probabilities({0.0, 0.4, 0.05});
    for (int j = 1; j <= 2; ++j)
        for (int k = 1; k <= 4; ++k) {
            EXPECT_EQ(p1[event_index(1, j, k)], 0.0);
            EXPECT_EQ(p1[event_index(2, j, k)], p2[event_index(2, j, k)]);
        }
    EXPECT_NEAR(p1[event_index(2, 1, 1)], std::pow(0.95, 3), 1e-15);
    EXPECT_EQ(p1[event_index(2, 1, 3)], p1[event_index(2, 2, 3)]);
}

TEST(EventProbabilities, DistinctEventsSumToOne) {
    std::mt19937_64 g(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 50; ++t) {
        const auto p = event_probabilities({u(g), 0.5 * u(g), 0.5 * u(g)});
        EXPECT_NEAR(event_total(p), 1.0, 1e-12);
        for (double v : p) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Flows, PerfectRoundCorrectsSingleErrors) {
    using E = ErrorClass;
    const auto f = flow_coefficients(event_probabilities({1.0, 0.0, 0.0}));
    EXPECT_DOUBLE_EQ(f(E::zero, E::zero), 1.0);
    EXPECT_DOUBLE_EQ(f(E::a, E::zero), 1.0);
    EXPECT_DOUBLE_EQ(f(E::b, E::seven), 1.0);
    EXPECT_DOUBLE_EQ(f(E::seven, E::seven), 1.0);
}

TEST(Flows, RelabellingSymmetryAndRowSums) {
    using E = ErrorClass;
    std::mt19937_64 g(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 50; ++t) {
        const auto f = flow_coefficients(event_probabilities({u(g), 0.3 * u(g), 0.3 * u(g)}));
        EXPECT_EQ(f(E::seven, E::seven), f(E::zero, E::zero));
        EXPECT_EQ(f(E::seven, E::zero), f(E::zero, E::seven));
        EXPECT_EQ(f(E::b, E::zero), f(E::a, E::seven));
        for (int r = 0; r < 4; ++r) EXPECT_NEAR(f.m.row(r).sum(), 1.0, 1e-10);
    }
}

TEST(Flows, RejectsInconsistentInput) {
    auto p = event_probabilities({0.9, 0.01, 0.01});
    p[event_index(1, 1, 1)] *= 0.5;
    EXPECT_THROW(flow_coefficients(p), std::invalid_argument);
}

TEST(RoundChain, IdentityFlowsAreConstant) {
    FlowCoefficients f;
    f.m.setIdentity();
    const RoundChainState s{0.4, 0.3, 0.2, 0.1};
    for (const auto& x : iterate_round_chain(s, f, 10)) {
        EXPECT_EQ(x.P0, 0.4);
        EXPECT_EQ(x.P7, 0.1);
    }
}

TEST(RoundChain, FirstIterateIsFirstOrderDrop) {
    for (double n_c : {0.0, 1e-2, 1e-1}) {
        const auto q = RoundEventParams::from_noise(1e-3, n_c);
        const auto f = flow_coefficients(event_probabilities(q));
        const auto seq = iterate_round_chain({}, f, 1);
        EXPECT_DOUBLE_EQ(seq[1].P0, f(ErrorClass::zero, ErrorClass::zero));
        const double second_order = 10 * std::pow(q.alpha + q.beta, 2);
        EXPECT_NEAR(seq[1].P0, first_round_p0(q), second_order) << n_c;
    }
}

TEST(RoundChain, NormalizationPreserved) {
    const auto f = flow_coefficients(event_probabilities(RoundEventParams::from_noise(5e-3, 0.05)));
    for (const auto& s : iterate_round_chain({0.7, 0.1, 0.15, 0.05}, f, 500)) EXPECT_NEAR(s.total(), 1.0, 1e-10);
}

TEST(RoundChain, FixedPointIndependentOfStart) {
    const auto f = flow_coefficients(event_probabilities(RoundEventParams::from_noise(1e-2, 1e-2)));
    const auto a = iterate_round_chain({1, 0, 0, 0}, f, 5000).back();
    const auto b = iterate_round_chain({0, 0.5, 0.5, 0}, f, 5000).back();
    const auto ss = chain_steady_state(f);
    EXPECT_NEAR(a.P0, b.P0, 1e-10);
    EXPECT_NEAR(a.P0, ss.P0, 1e-10);
    EXPECT_NEAR(chain_steady_p0(f), ss.P0, 1e-12);
}

TEST(RoundChain, SteadyStateIsSymmetric) {
    const auto f = flow_coefficients(event_probabilities({0.95, 0.02, 0.03}));
    const auto ss = chain_steady_state(f);
    EXPECT_NEAR(ss.P0, ss.P7, 1e-12);
    EXPECT_NEAR(ss.Pa, ss.Pb, 1e-12);
}

TEST(RoundChain, PerfectCodeAbsorbsSingleErrors) {
    const auto f = flow_coefficients(event_probabilities({1.0, 0.0, 0.0}));
    const auto seq = iterate_round_chain({0.2, 0.5, 0.1, 0.2}, f, 3);
    EXPECT_DOUBLE_EQ(seq[1].P0, 0.7);
    EXPECT_DOUBLE_EQ(seq[1].P7, 0.3);
    EXPECT_EQ(seq[3].P0, seq[1].P0);
}

TEST(RoundChain, SteadyStateSeriesToSecondOrder) {
    // Exact fixed point at F_a = 1, beta = alpha against 1/2 - (3/2) alpha:
    // the remainder scales as alpha^3.
    std::vector<double> r;
    for (double a : {4e-3, 2e-3, 1e-3}) {
        const auto f = flow_coefficients(event_probabilities({1.0, a, a}));
        r.push_back((chain_steady_p0(f) - (0.5 - 1.5 * a)) / (a * a * a));
    }
    EXPECT_NEAR(r[2], 12.0, 0.5);
    EXPECT_NEAR(r[1], r[2], 0.5);
}

TEST(PerturbativeP0, Values) {
    EXPECT_EQ(perturbative_p0(7, 0.0), 1.0);
    EXPECT_NEAR(perturbative_p0(1, 1e-3), 0.997012, 1e-15);
    EXPECT_THROW(perturbative_p0(0, 1e-3), std::invalid_argument);
}

TEST(PerturbativeP0, ChainAgreesToSecondOrderFromRoundTwo) {
    // The remainder (chain - series) / alpha^2 halves when alpha halves.
    for (int n = 2; n <= 20; ++n) {
        std::vector<double> rem;
        for (double a : {1e-3, 5e-4}) {
            const auto f = flow_coefficients(event_probabilities({1.0, a, a}));
            const double exact = iterate_round_chain({}, f, n)[static_cast<std::size_t>(n)].P0;
            rem.push_back((exact - perturbative_p0(n, a)) / (a * a));
        }
        EXPECT_NEAR(rem[0] / rem[1], 2.0, 0.05) << n;
    }
}

TEST(DecayFit, RecoversSyntheticGeometric) {
    std::vector<double> seq;
    for (int n = 0; n < 400; ++n) seq.push_back(0.3 + 0.2 * std::pow(1.001, -n));
    const auto fit = fit_decay_constant(seq, 4);
    EXPECT_NEAR(fit.delta, 1.001, 1e-6);
    EXPECT_NEAR(fit.steady_state, 0.3, 1e-8);
    const auto known = fit_decay_constant(seq, 4, 0.3);
    EXPECT_NEAR(known.delta, 1.001, 1e-12);
}

TEST(DecayFit, SecondOrderCoefficientNearFortyTwo) {
    std::vector<double> coef;
    for (double a : {5e-4, 1e-3, 2e-3}) {
        const auto f = flow_coefficients(event_probabilities({1.0, a, a}));
        std::vector<double> p0;
        for (const auto& s : iterate_round_chain({}, f, 300)) p0.push_back(s.P0);
        const auto fit = fit_decay_constant(p0, 4, chain_steady_p0(f));
        coef.push_back((fit.delta - 1) / (a * a));
        EXPECT_NEAR(coef.back(), 42.0, 2.0) << a;
    }
    // Linear extrapolation to alpha -> 0 from the two smallest alphas.
    EXPECT_NEAR(2 * coef[0] - coef[1], 42.0, 0.1);
}

TEST(DecayFit, RejectsNonMonotoneTail) {
    std::vector<double> seq;
    for (int n = 0; n < 300; ++n) seq.push_back(0.5 + 0.1 * std::pow(0.99, n) * (n % 7 == 0 ? 1.5 : 1.0));
    EXPECT_THROW(fit_decay_constant(seq, 4, 0.5), std::domain_error);
    EXPECT_THROW(fit_decay_constant(std::vector<double>(50, 0.5), 4, 0.4), std::invalid_argument);
}

}  // namespace
}  // namespace twobath
