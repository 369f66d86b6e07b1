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

// Experiment configuration files.
//
//     [experiment]
//     ; measured or measurement_free
//     protocol = measured
//     rounds = 50
//     n_traj = 1000
//     master_seed = 1
//     n_sub = 20
//     batches = 16
//     oracle = false
//     oracle_dt = 0.005
//     ; every_step or round_end
//     sampling = every_step
//     ; keep the full-register matrix for s_total: on, off, or auto
//     total_entropy = auto
//     output = out/measured/nc_1e-2
//
//     [noise]
//     gamma_h = 1e-3
//     Gamma_c = 3
//     n_c = 0.01
//
// Comments take whole lines starting with ';'. Sections and keys are fixed;
// anything else is an error, as is a value that does not parse in full. The
// noise keys, protocol, rounds and n_traj are required.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "twobath/compiler.hpp"
#include "twobath/dynamics.hpp"

namespace twobath {

/// Invalid configuration content; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class ProtocolKind { measured, measurement_free };
enum class Sampling { every_step, round_end };
enum class TotalEntropy { automatic, on, off };

inline std::string_view to_string(ProtocolKind p) {
    return p == ProtocolKind::measured ? "measured" : "measurement_free";
}
inline std::string_view to_string(Sampling s) { return s == Sampling::every_step ? "every_step" : "round_end"; }
inline std::string_view to_string(TotalEntropy t) {
    switch (t) {
        case TotalEntropy::on: return "on";
        case TotalEntropy::off: return "off";
        default: return "auto";
    }
}

struct ExperimentConfig {
    ProtocolKind protocol = ProtocolKind::measured;
    NoiseParams noise;
    int rounds = 1;
    std::int64_t n_traj = 1;
    std::uint64_t master_seed = 1;
    int n_sub = 20;
    int batches = 16;
    bool oracle = false;
    double oracle_dt = 1.0 / 200.0;
    Sampling sampling = Sampling::every_step;
    TotalEntropy total_entropy = TotalEntropy::automatic;
    std::filesystem::path output = "out";

    RoundProtocol build_protocol() const {
        return protocol == ProtocolKind::measured ? build_measured_round() : build_measurement_free_round();
    }

    /// Checks cross-field constraints; throws ConfigError.
    void validate() const;
};

namespace detail {

inline double parse_real(const std::string& key, const std::string& text) {
    double v = 0.0;
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v))
        throw ConfigError(fmt::format("{}: '{}' is not a finite real number", key, text));
    return v;
}

template <typename Int>
Int parse_integer(const std::string& key, const std::string& text) {
    Int v = 0;
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) throw ConfigError(fmt::format("{}: '{}' is not a valid integer", key, text));
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError(fmt::format("{}: '{}' is not a boolean (true/false)", key, text));
}

inline const std::map<std::string, std::set<std::string>>& config_schema() {
    static const std::map<std::string, std::set<std::string>> schema{
        {"experiment",
         {"protocol", "rounds", "n_traj", "master_seed", "n_sub", "batches", "oracle", "oracle_dt", "sampling",
          "total_entropy", "output"}},
        {"noise", {"gamma_h", "Gamma_c", "n_c"}},
    };
    return schema;
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
    auto require = [](bool ok, std::string_view what) {
        if (!ok) throw ConfigError(std::string(what));
    };
    for (const auto& [name, v] : {std::pair{"gamma_h", noise.gamma_h}, {"Gamma_c", noise.gamma_c}, {"n_c", noise.n_c}})
        require(std::isfinite(v) && v >= 0.0, fmt::format("noise.{} must be finite and non-negative", name));
    require(rounds >= 1 && rounds <= 1'000'000, "experiment.rounds must lie in [1, 1000000]");
    require(n_traj >= 1, "experiment.n_traj must be positive");
    require(n_sub >= 1 && n_sub <= 100'000, "experiment.n_sub must lie in [1, 100000]");
    require(batches >= 1, "experiment.batches must be positive");
    require(oracle_dt > 0.0 && oracle_dt <= 1.0, "experiment.oracle_dt must lie in (0, 1]");
    const double steps = 1.0 / oracle_dt;
    require(std::abs(steps - std::round(steps)) <= 1e-9 * steps, "experiment.oracle_dt must divide the unit step");
    const int n_qubits = build_protocol().layout.n_qubits();
    require(n_qubits * noise.gamma_h / n_sub < kMaxJumpProbability,
            fmt::format("n_sub too small: {} qubits * gamma_h * dt must stay below {}", n_qubits, kMaxJumpProbability));
}

/// Parses and validates configuration text.
inline ExperimentConfig parse_config(std::istream& in) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(fmt::format("malformed config: {}", e.message()));
    }

    const auto& schema = detail::config_schema();
    std::map<std::string, std::string> values;
    for (const auto& [section, body] : tree) {
        const auto it = schema.find(section);
        if (it == schema.end()) throw ConfigError(fmt::format("unknown section or top-level key '{}'", section));
        if (!body.data().empty()) throw ConfigError(fmt::format("key '{}' outside any section", section));
        for (const auto& [key, value] : body) {
            if (!it->second.contains(key)) throw ConfigError(fmt::format("unknown key '{}' in [{}]", key, section));
            values[section + "." + key] = value.get_value<std::string>();
        }
    }

    auto take = [&](const std::string& key, bool required) -> std::optional<std::string> {
        const auto it = values.find(key);
        if (it == values.end()) {
            if (required) throw ConfigError(fmt::format("missing required key {}", key));
            return std::nullopt;
        }
        return it->second;
    };

    ExperimentConfig c;
    const std::string protocol = *take("experiment.protocol", true);
    if (protocol == "measured") c.protocol = ProtocolKind::measured;
    else if (protocol == "measurement_free") c.protocol = ProtocolKind::measurement_free;
    else throw ConfigError(fmt::format("experiment.protocol: '{}' is not measured or measurement_free", protocol));

    c.rounds = detail::parse_integer<int>("experiment.rounds", *take("experiment.rounds", true));
    c.n_traj = detail::parse_integer<std::int64_t>("experiment.n_traj", *take("experiment.n_traj", true));
    if (auto v = take("experiment.master_seed", false))
        c.master_seed = detail::parse_integer<std::uint64_t>("experiment.master_seed", *v);
    if (auto v = take("experiment.n_sub", false)) c.n_sub = detail::parse_integer<int>("experiment.n_sub", *v);
    if (auto v = take("experiment.batches", false)) c.batches = detail::parse_integer<int>("experiment.batches", *v);
    if (auto v = take("experiment.oracle", false)) c.oracle = detail::parse_bool("experiment.oracle", *v);
    if (auto v = take("experiment.oracle_dt", false)) c.oracle_dt = detail::parse_real("experiment.oracle_dt", *v);
    if (auto v = take("experiment.sampling", false)) {
        if (*v == "every_step") c.sampling = Sampling::every_step;
        else if (*v == "round_end") c.sampling = Sampling::round_end;
        else throw ConfigError(fmt::format("experiment.sampling: '{}' is not every_step or round_end", *v));
    }
    if (auto v = take("experiment.total_entropy", false)) {
        if (*v == "auto") c.total_entropy = TotalEntropy::automatic;
        else if (*v == "on") c.total_entropy = TotalEntropy::on;
        else if (*v == "off") c.total_entropy = TotalEntropy::off;
        else throw ConfigError(fmt::format("experiment.total_entropy: '{}' is not auto, on or off", *v));
    }
    if (auto v = take("experiment.output", false)) {
        if (v->empty()) throw ConfigError("experiment.output must not be empty");
        c.output = *v;
    }

    c.noise.gamma_h = detail::parse_real("noise.gamma_h", *take("noise.gamma_h", true));
    c.noise.gamma_c = detail::parse_real("noise.Gamma_c", *take("noise.Gamma_c", true));
    c.noise.n_c = detail::parse_real("noise.n_c", *take("noise.n_c", true));
    c.validate();
    return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

/// Reads a config file. A missing or unreadable file is a ConfigError.
inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot read config file {}", path.string()));
    return parse_config(in);
}

/// Canonical text form; parse_config(format_config(c)) reproduces c.
inline std::string format_config(const ExperimentConfig& c) {
    return fmt::format(
        "[experiment]\nprotocol = {}\nrounds = {}\nn_traj = {}\nmaster_seed = {}\nn_sub = {}\nbatches = {}\n"
        "oracle = {}\noracle_dt = {}\nsampling = {}\ntotal_entropy = {}\noutput = {}\n\n"
        "[noise]\ngamma_h = {}\nGamma_c = {}\nn_c = {}\n",
        to_string(c.protocol), c.rounds, c.n_traj, c.master_seed, c.n_sub, c.batches, c.oracle ? "true" : "false",
        c.oracle_dt, to_string(c.sampling), to_string(c.total_entropy), c.output.string(), c.noise.gamma_h,
        c.noise.gamma_c, c.noise.n_c);
}

}  // namespace twobath
