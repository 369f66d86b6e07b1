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

// twobath: experiment runner.
//
//   twobath run --config FILE [--seed N] [--traj N] [--rounds N] [--oracle] [--out DIR]
//   twobath verify-gates [--perturb DELTA]
//   twobath rate-model cooling|ancilla-fidelity|slow-cooling|chain [options] [--out DIR]
//   twobath compare --config FILE [--seed N] [--traj N] [--rounds N] [--out DIR]
//
// Exit codes: 0 success, 1 runtime or verification failure, 2 invalid
// configuration or arguments.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "twobath/twobath.hpp"

namespace {

using namespace twobath;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> traj;
    std::optional<int> rounds;
    bool oracle = false;
    std::optional<std::string> out;
    int threads = 0;
};

void add_run_flags(CLI::App* cmd, Overrides& o, bool with_oracle) {
    cmd->add_option("--config", o.config, "Experiment configuration file")->required();
    cmd->add_option("--seed", o.seed, "Override experiment.master_seed");
    cmd->add_option("--traj", o.traj, "Override experiment.n_traj");
    cmd->add_option("--rounds", o.rounds, "Override experiment.rounds");
    if (with_oracle) cmd->add_flag("--oracle", o.oracle, "Also integrate the master equation and compare");
    cmd->add_option("--out", o.out, "Output directory (default: experiment.output)");
    cmd->add_option("--threads", o.threads, "Worker threads (0 = all cores); results do not depend on it")
        ->check(CLI::NonNegativeNumber);
}

ExperimentConfig resolve(const Overrides& o) {
    ExperimentConfig c = load_config(o.config);
    if (o.seed) c.master_seed = *o.seed;
    if (o.traj) c.n_traj = *o.traj;
    if (o.rounds) c.rounds = *o.rounds;
    if (o.oracle) c.oracle = true;
    if (o.out) c.output = *o.out;
    c.validate();
    return c;
}

int cmd_run(const Overrides& o) {
    const ExperimentConfig c = resolve(o);
    const RunResult r = run_experiment(c, {.threads = o.threads});
    write_run_outputs(r, c.output);
    std::cout << format_run_summary(r);
    std::cout << fmt::format("\nwrote {}\n", (c.output / "metrics.csv").string());
    return kExitOk;
}

int cmd_compare(const Overrides& o) {
    const ExperimentConfig c = resolve(o);
    const auto rows = compare_with_chain(c, {.threads = o.threads});
    fs::create_directories(c.output);
    write_text(c.output / "compare.csv", compare_csv(rows));
    const auto p = rate_predictions(c.noise, c.rounds);
    std::cout << fmt::format("round-end data fidelity, trajectories vs round chain ({} rounds, {} trajectories)\n",
                             c.rounds, c.n_traj);
    std::cout << fmt::format("round 1: trajectories {} +- {}, chain {}\n", fmt12(rows[1].f2_traj),
                             fmt12(rows[1].f2_traj_err), fmt12(rows[1].chain.P0));
    std::cout << fmt::format("round {}: trajectories {} +- {}, chain {}\n", rows.back().round,
                             fmt12(rows.back().f2_traj), fmt12(rows.back().f2_traj_err), fmt12(rows.back().chain.P0));
    std::cout << fmt::format("chain steady state P0 = {}\n", fmt12(p.chain_steady_p0));
    if (!chain_defined(RoundEventParams::from_noise(c.noise.gamma_h, c.noise.n_c)))
        std::cout << "note: 15 gamma_h exceeds 1, so the round chain is undefined and its columns are nan\n";
    std::cout << fmt::format("wrote {}\n", (c.output / "compare.csv").string());
    return kExitOk;
}

int cmd_verify_gates(double perturb) {
    const auto report = verify_gates(perturb);
    std::cout << format_gate_report(report);
    const bool ok = report.pass();
    std::cout << (ok ? "all gates verified\n" : "gate verification FAILED\n");
    return ok ? kExitOk : kExitFailure;
}

/// Writes a table to DIR/name when --out was given, otherwise to stdout.
void emit_table(const std::optional<std::string>& out, const std::string& name, const std::string& csv) {
    if (!out) {
        std::cout << csv;
        return;
    }
    fs::create_directories(*out);
    write_text(fs::path(*out) / name, csv);
    std::cerr << fmt::format("wrote {}\n", (fs::path(*out) / name).string());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Repetition-code error correction between a hot and a cold reservoir"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "twobath 1.0.0");

    Overrides run_o, cmp_o;
    auto* run = app.add_subcommand("run", "Trajectory ensemble from a configuration file");
    add_run_flags(run, run_o, true);
    auto* compare = app.add_subcommand("compare", "Round-end data fidelity next to the rate-equation chain");
    add_run_flags(compare, cmp_o, false);

    double perturb = 0.0;
    auto* gates = app.add_subcommand("verify-gates", "Check compiled gates against canonical unitaries");
    gates->add_option("--perturb", perturb, "Add DELTA to every control strength (negative control)");

    auto* rate = app.add_subcommand("rate-model", "Rate-equation models");
    rate->require_subcommand(1);
    std::optional<std::string> rate_out;
    rate->add_option("--out", rate_out, "Write the table into this directory instead of stdout");

    double gamma_c = 3.0, n_c = 0.01, t_max = 2.0;
    unsigned initial = 7;
    int points = 40;
    auto* cooling = rate->add_subcommand("cooling", "Ancilla populations during cooling");
    cooling->add_option("--gamma-c", gamma_c, "Cold-reservoir rate")->check(CLI::NonNegativeNumber);
    cooling->add_option("--n-c", n_c, "Cold-reservoir occupation")->check(CLI::NonNegativeNumber);
    cooling->add_option("--initial", initial, "Initial ancilla basis state 0..7")->check(CLI::Range(0, 7));
    cooling->add_option("--time", t_max, "Cooling time")->check(CLI::PositiveNumber);
    cooling->add_option("--points", points, "Number of time intervals")->check(CLI::Range(1, 100000));

    std::vector<double> n_c_list{0.0, 1e-3, 1e-2, 1e-1, 0.5};
    auto* anc = rate->add_subcommand("ancilla-fidelity", "Fast-cooling ancilla fidelity over n_c");
    anc->add_option("--n-c", n_c_list, "Occupations")->check(CLI::NonNegativeNumber);

    std::vector<double> gh_list{1e-3}, gc_list{0.1};
    double slow_n_c = 0.01, cool_time = 1.0;
    auto* slow = rate->add_subcommand("slow-cooling", "Self-consistent slow-cooling ancilla fidelity");
    slow->add_option("--gamma-h", gh_list, "Hot-reservoir rates")->check(CLI::NonNegativeNumber);
    slow->add_option("--gamma-c", gc_list, "Cold-reservoir rates")->check(CLI::NonNegativeNumber);
    slow->add_option("--n-c", slow_n_c, "Cold-reservoir occupation")->check(CLI::NonNegativeNumber);
    slow->add_option("--cooling-time", cool_time, "Cooling time per round")->check(CLI::NonNegativeNumber);

    std::optional<double> alpha, beta, f_a, chain_gamma_h;
    double chain_n_c = 0.0;
    int chain_rounds = 400, fit_start = 4, fit_window = 200;
    auto* chain = rate->add_subcommand("chain", "Round-to-round data error chain");
    chain->add_option("--alpha", alpha, "Ancilla error probability per qubit and round")->check(CLI::Range(0.0, 1.0));
    chain->add_option("--beta", beta, "Data error probability per qubit and round (default alpha)")
        ->check(CLI::Range(0.0, 1.0));
    chain->add_option("--fa", f_a, "Ancilla fidelity after cooling (default 1)")->check(CLI::Range(0.0, 1.0));
    chain->add_option("--gamma-h", chain_gamma_h, "Derive alpha = 15 gamma_h, beta = 16 gamma_h")
        ->check(CLI::NonNegativeNumber);
    chain->add_option("--n-c", chain_n_c, "With --gamma-h, derive F_a from n_c")->check(CLI::NonNegativeNumber);
    chain->add_option("--rounds", chain_rounds, "Rounds to iterate")->check(CLI::Range(1, 10000000));
    chain->add_option("--fit-start", fit_start, "First round of the decay fit")->check(CLI::NonNegativeNumber);
    chain->add_option("--fit-window", fit_window, "Rounds in the decay fit")->check(CLI::Range(2, 10000000));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    } catch (const CLI::CallForVersion& e) {
        app.exit(e);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*run) return cmd_run(run_o);
        if (*compare) return cmd_compare(cmp_o);
        if (*gates) return cmd_verify_gates(perturb);
        if (*cooling) {
            emit_table(rate_out, "cooling.csv", cooling_curve_csv(gamma_c, n_c, initial, t_max, points));
            std::cerr << fmt::format("ancilla_fidelity_fast_cooling = {}\n", fmt12(ancilla_steady_fidelity(n_c)));
            return kExitOk;
        }
        if (*anc) {
            emit_table(rate_out, "ancilla_fidelity.csv", ancilla_fidelity_csv(n_c_list));
            return kExitOk;
        }
        if (*slow) {
            emit_table(rate_out, "slow_cooling.csv", slow_cooling_csv(gh_list, gc_list, slow_n_c, cool_time));
            return kExitOk;
        }
        if (*chain) {
            RoundEventParams q;
            if (chain_gamma_h) {
                if (alpha || beta || f_a) throw ConfigError("chain: --gamma-h excludes --alpha, --beta and --fa");
                q = RoundEventParams::from_noise(*chain_gamma_h, chain_n_c);
            } else {
                if (!alpha) throw ConfigError("chain: give --alpha or --gamma-h");
                q = {f_a.value_or(1.0), *alpha, beta.value_or(*alpha)};
            }
            try {
                q.validate();
            } catch (const std::invalid_argument& e) {
                throw ConfigError(fmt::format("chain: {}", e.what()));
            }
            const auto report = run_chain(q, chain_rounds, fit_start, fit_window);
            emit_table(rate_out, "chain.csv", chain_csv(report));
            (rate_out ? std::cout : std::cerr) << chain_summary(report);
            return kExitOk;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}
