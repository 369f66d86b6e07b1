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

#include <numbers>
#include <set>

#include <gtest/gtest.h>

#include "twobath/compiler.hpp"

namespace twobath {
namespace {

using std::numbers::pi;

// Hand-written 4x4 CNOT with qubit 0 as control (most significant bit).
CMatrix cnot_4x4() {
    CMatrix u = CMatrix::Zero(4, 4);
    u(0, 0) = u(1, 1) = u(2, 3) = u(3, 2) = 1.0;
    return u;
}

CMatrix toffoli_8x8() {
    CMatrix u = CMatrix::Identity(8, 8);
    u(6, 6) = u(7, 7) = 0.0;
    u(6, 7) = u(7, 6) = 1.0;
    return u;
}

CVector apply(const CMatrix& u, int n, std::uint64_t basis) { return u * StateVector::basis(n, basis).amplitudes(); }

double basis_overlap(const CVector& v, std::uint64_t basis) { return std::abs(v(static_cast<Eigen::Index>(basis))); }

TEST(ControlTerm, HadamardExponentialIsMinusIHadamard) {
    const auto t = ControlTerm::hadamard(QubitIndex(0));
    const Mat2 u = gates::involutory_exponential(t.generator(), t.strength);
    EXPECT_LT((u - Complex(0, -1) * gates::hadamard()).norm(), 1e-15);
}

TEST(ControlTerm, ArityMatchesKind) {
    EXPECT_EQ(ControlTerm::x_rotation(QubitIndex(0), 1.0).arity(), 1);
    EXPECT_EQ(ControlTerm::pushing(QubitIndex(0), QubitIndex(1), {0, 0, 0, 0}).arity(), 2);
    EXPECT_THROW(ControlTerm::pushing(QubitIndex(1), QubitIndex(1), {0, 0, 0, 0}), std::invalid_argument);
}

TEST(GateSchedule, RejectsOverlappingTermsInOneStep) {
    GateSchedule s;
    Step bad{.terms = {ControlTerm::x_rotation(QubitIndex(0), 1.0),
                       ControlTerm::pushing(QubitIndex(0), QubitIndex(1), {0, 0, 0, 0})}};
    EXPECT_THROW(s.add_step(bad), std::invalid_argument);
}

TEST(NetUnitary, EmptyScheduleIsIdentity) {
    EXPECT_LT((schedule_net_unitary(GateSchedule{}, 3) - CMatrix::Identity(8, 8)).norm(), 1e-15);
}

TEST(NetUnitary, PiRotationAboutXIsPauliX) {
    // A Bloch rotation by pi is exp(-i (pi/2) X).
    GateSchedule s;
    s.add_step({.terms = {ControlTerm::x_rotation(QubitIndex(0), pi / 2)}});
    CMatrix x = CMatrix::Zero(2, 2);
    x(0, 1) = x(1, 0) = 1.0;
    EXPECT_LT(phase_aligned_distance(schedule_net_unitary(s, 1), x), 1e-12);
}

TEST(NetUnitary, RejectsMeasurementMarker) {
    const auto round = build_measured_round();
    EXPECT_THROW(schedule_net_unitary(round.schedule, 6), std::invalid_argument);
    EXPECT_NO_THROW(schedule_net_unitary(round.schedule, 6, 0, first_marker_step(round.schedule)));
}

TEST(PhaseAlignedDistance, IgnoresGlobalPhase) {
    const CMatrix u = toffoli_8x8();
    EXPECT_LT(phase_aligned_distance(std::exp(Complex(0, 1.234)) * u, u), 1e-14);
    EXPECT_NEAR(phase_aligned_distance(CMatrix::Identity(2, 2), cnot_4x4().topLeftCorner(2, 2)), 0.0, 1e-15);
}

TEST(Cnot, MatchesCanonicalMatrix) {
    const auto u = schedule_net_unitary(compile_cnot(QubitIndex(0), QubitIndex(1)), 2);
    EXPECT_LT(phase_aligned_distance(u, cnot_4x4()), 1e-9);
    EXPECT_LT((u.adjoint() * u - CMatrix::Identity(4, 4)).norm(), 1e-10);
}

TEST(Cnot, BasisStateActions) {
    const auto u = schedule_net_unitary(compile_cnot(QubitIndex(0), QubitIndex(1)), 2);
    EXPECT_NEAR(basis_overlap(apply(u, 2, 0b00), 0b00), 1.0, 1e-12);
    EXPECT_NEAR(basis_overlap(apply(u, 2, 0b10), 0b11), 1.0, 1e-12);
}

TEST(Cnot, EveryOrderedPairOnSixQubits) {
    for (int c = 0; c < 6; ++c)
        for (int t = 0; t < 6; ++t) {
            if (c == t) continue;
            const auto u = schedule_net_unitary(compile_cnot(QubitIndex(c), QubitIndex(t)), 6);
            EXPECT_LT(phase_aligned_distance(u, canonical::cnot(6, QubitIndex(c), QubitIndex(t))), 1e-9) << c << t;
        }
}

TEST(Cnot, OtherValidPushingPhases) {
    for (const PushingAlphas a : {PushingAlphas{0, 0, 0, pi}, PushingAlphas{0.3, 1.1, -0.4, pi - 0.3 + 1.1 - 0.4},
                                  PushingAlphas{0, -pi / 2, -pi / 2, 0}}) {
        const auto u = schedule_net_unitary(compile_cnot(QubitIndex(1), QubitIndex(0), a), 2);
        EXPECT_LT(phase_aligned_distance(u, canonical::cnot(2, QubitIndex(1), QubitIndex(0))), 1e-9);
    }
}

TEST(Cnot, RejectsBadInput) {
    EXPECT_THROW(compile_cnot(QubitIndex(2), QubitIndex(2)), std::invalid_argument);
    EXPECT_THROW(compile_cnot(QubitIndex(0), QubitIndex(1), {0, 0, 0, 1.0}), std::invalid_argument);
}

TEST(Toffoli, MatchesCanonicalMatrix) {
    const auto u = schedule_net_unitary(compile_toffoli(QubitIndex(0), QubitIndex(1), QubitIndex(2)), 3);
    EXPECT_LT(phase_aligned_distance(u, toffoli_8x8()), 1e-9);
}

TEST(Toffoli, BasisStateActions) {
    const auto u = schedule_net_unitary(compile_toffoli(QubitIndex(0), QubitIndex(1), QubitIndex(2)), 3);
    EXPECT_NEAR(basis_overlap(apply(u, 3, 0b110), 0b111), 1.0, 1e-12);
    EXPECT_NEAR(basis_overlap(apply(u, 3, 0b010), 0b010), 1.0, 1e-12);
}

TEST(Toffoli, AllQubitAssignmentsOnFiveQubits) {
    for (int c1 = 0; c1 < 5; ++c1)
        for (int c2 = 0; c2 < 5; ++c2)
            for (int t = 0; t < 5; ++t) {
                if (c1 == c2 || c1 == t || c2 == t) continue;
                const auto u = schedule_net_unitary(compile_toffoli(QubitIndex(c1), QubitIndex(c2), QubitIndex(t)), 5);
                EXPECT_LT(phase_aligned_distance(u, canonical::toffoli(5, QubitIndex(c1), QubitIndex(c2), QubitIndex(t))),
                          1e-9);
            }
}

TEST(Toffoli, RejectsRepeatedQubit) {
    EXPECT_THROW(compile_toffoli(QubitIndex(0), QubitIndex(0), QubitIndex(1)), std::invalid_argument);
    EXPECT_THROW(compile_toffoli(QubitIndex(0), QubitIndex(1), QubitIndex(1)), std::invalid_argument);
}

TEST(MeasuredRound, HasSixteenSteps) {
    const auto round = build_measured_round();
    EXPECT_EQ(round.steps_per_round(), 16U);
    EXPECT_TRUE(round.schedule[0].cooling_window);
    for (std::size_t k = 1; k < 16; ++k) EXPECT_FALSE(round.schedule[k].cooling_window);
    EXPECT_TRUE(round.schedule[14].has_measurement());
    EXPECT_TRUE(round.schedule[15].correction.has_value());
}

TEST(MeasuredRound, TransversalBlockIsThreeCnots) {
    const auto round = build_measured_round();
    std::size_t first = 0, last = 0;
    for (std::size_t k = 0; k < round.schedule.size(); ++k)
        if (round.schedule[k].label == "transversal") {
            if (last == 0) first = k;
            last = k + 1;
        }
    ASSERT_EQ(last - first, 4U);
    const auto u = schedule_net_unitary(round.schedule, 6, first, last);
    const CMatrix ref = canonical::cnot(6, QubitIndex(0), QubitIndex(3)) * canonical::cnot(6, QubitIndex(1), QubitIndex(4)) *
                        canonical::cnot(6, QubitIndex(2), QubitIndex(5));
    EXPECT_LT(phase_aligned_distance(u, ref), 1e-9);
}

TEST(MeasuredRound, UnitaryPartMatchesCanonical) {
    const auto round = build_measured_round();
    const auto u = schedule_net_unitary(round.schedule, 6, 0, first_marker_step(round.schedule));
    EXPECT_LT(phase_aligned_distance(u, canonical::measured_round(round.layout)), 1e-9);
}

TEST(MeasuredRound, SyndromeTableImplementsMajorityVote) {
    const auto round = build_measured_round();
    const auto u = schedule_net_unitary(round.schedule, 6, 0, first_marker_step(round.schedule));
    const auto& table = *round.schedule[15].correction;
    for (std::uint64_t data = 0; data < 8; ++data) {
        const CVector out = apply(u, 6, data << 3);
        Eigen::Index idx;
        out.cwiseAbs().maxCoeff(&idx);
        const auto syndrome = static_cast<std::uint32_t>(idx & 7);
        std::uint64_t corrected = data;
        for (const auto q : table(syndrome)) corrected ^= 1ULL << (2 - q.value);
        const std::uint64_t majority = std::popcount(data) >= 2 ? 7 : 0;
        EXPECT_EQ(corrected, majority) << "data pattern " << data;
    }
}

TEST(MeasurementFreeRound, HasSixtyEightSteps) {
    const auto round = build_measurement_free_round();
    EXPECT_EQ(round.steps_per_round(), 68U);
    EXPECT_EQ(round.layout.n_qubits(), 5);
    EXPECT_TRUE(round.schedule[0].cooling_window);
    EXPECT_EQ(first_marker_step(round.schedule), 68U);
}

TEST(MeasurementFreeRound, NetUnitaryMatchesCanonical) {
    const auto round = build_measurement_free_round();
    const auto u = schedule_net_unitary(round.schedule, 5);
    EXPECT_LT(phase_aligned_distance(u, canonical::measurement_free_round(round.layout)), 1e-9);
}

TEST(MeasurementFreeRound, CorrectsEverySingleFlipOnFreshAncillas) {
    const auto round = build_measurement_free_round();
    const auto u = schedule_net_unitary(round.schedule, 5);
    for (std::uint64_t data : {0b000ULL, 0b100ULL, 0b010ULL, 0b001ULL}) {
        const CVector out = apply(u, 5, data << 2);
        double p_data_zero = 0.0;
        for (std::uint64_t a = 0; a < 4; ++a) p_data_zero += std::norm(out(static_cast<Eigen::Index>(a)));
        EXPECT_NEAR(p_data_zero, 1.0, 1e-9) << data;
    }
}

TEST(Schedules, DeterministicConstruction) {
    EXPECT_EQ(build_measured_round().schedule, build_measured_round().schedule);
    EXPECT_EQ(build_measurement_free_round().schedule, build_measurement_free_round().schedule);
    EXPECT_EQ(dump_schedule(build_measured_round().schedule), dump_schedule(build_measured_round().schedule));
}

TEST(Schedules, StepsUseDisjointQubits) {
    for (const auto& round : {build_measured_round(), build_measurement_free_round()})
        for (const auto& step : round.schedule.steps()) {
            std::set<int> seen;
            for (const auto& t : step.terms)
                for (const auto q : t.support()) EXPECT_TRUE(seen.insert(q.value).second);
        }
}

TEST(Schedules, PerturbedStrengthsBreakVerification) {
    const auto round = build_measurement_free_round();
    const auto u = schedule_net_unitary(perturb_strengths(round.schedule, 1e-3), 5);
    EXPECT_GT(phase_aligned_distance(u, canonical::measurement_free_round(round.layout)), 1e-9);
}

TEST(Schedules, DumpListsMarkers) {
    const auto text = dump_schedule(build_measured_round().schedule);
    EXPECT_NE(text.find("[cool]"), std::string::npos);
    EXPECT_NE(text.find("[measure q3 q4 q5]"), std::string::npos);
    EXPECT_NE(text.find("[correct]"), std::string::npos);
}

}  // namespace
}  // namespace twobath
