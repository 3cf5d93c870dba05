#pragma once

// Run configuration: a key=value text file (blank lines and '#' comments
// allowed) plus command-line overrides of the form key=value.

#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "evicem/errors.hpp"
#include "evicem/rectification.hpp"
#include "evicem/training.hpp"

namespace evicem {

struct RunConfig {
    double lambda = 1.0;
    double tau = 0.01;
    std::size_t n_cav = 50;
    double gamma = 0.6;
    double lr = 5e-4;
    double weight_decay = 0.01;
    std::size_t batch_size = 128;
    std::size_t epochs = 30;
    std::size_t hidden = 64;
    std::size_t h_dim = 64;
    std::size_t m = 16;
    double base_rate = 0.5;
    double svm_reg = 1e-2;
    std::size_t svm_iterations = 2000;

    TrainConfig train(unsigned long long seed, Mode mode = Mode::evidential) const {
        TrainConfig c;
        c.lambda = lambda;
        c.lr = lr;
        c.weight_decay = weight_decay;
        c.batch_size = batch_size;
        c.epochs = epochs;
        c.seed = seed;
        c.mode = mode;
        c.base_rate = base_rate;
        c.hidden = hidden;
        c.h_dim = h_dim;
        c.m = m;
        c.validate();
        return c;
    }

    RectifyConfig rectify() const {
        if (!(gamma > 0.0)) throw UsageError("gamma must be > 0");
        if (n_cav < 2) throw UsageError("n_cav must be >= 2");
        return RectifyConfig{gamma, n_cav, SvmConfig{svm_reg, svm_iterations}};
    }

    std::map<std::string, std::string> to_map() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_real(const std::string& key, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE) {
        throw UsageError("config: '" + key + "' expects a number, got '" + v + "'");
    }
    return d;
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
        throw UsageError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    return static_cast<std::size_t>(std::stoull(v));
}

}  // namespace detail

/// Applies one key=value assignment. Unknown keys are usage errors.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
    using detail::parse_count;
    using detail::parse_real;
    if (key == "lambda") c.lambda = parse_real(key, value);
    else if (key == "tau") c.tau = parse_real(key, value);
    else if (key == "n_cav") c.n_cav = parse_count(key, value);
    else if (key == "gamma") c.gamma = parse_real(key, value);
    else if (key == "lr") c.lr = parse_real(key, value);
    else if (key == "weight_decay") c.weight_decay = parse_real(key, value);
    else if (key == "batch_size") c.batch_size = parse_count(key, value);
    else if (key == "epochs") c.epochs = parse_count(key, value);
    else if (key == "hidden") c.hidden = parse_count(key, value);
    else if (key == "h_dim") c.h_dim = parse_count(key, value);
    else if (key == "m") c.m = parse_count(key, value);
    else if (key == "base_rate") c.base_rate = parse_real(key, value);
    else if (key == "svm_reg") c.svm_reg = parse_real(key, value);
    else if (key == "svm_iterations") c.svm_iterations = parse_count(key, value);
    else throw UsageError("config: unknown key '" + key + "'");
}

inline void apply_assignment(RunConfig& c, const std::string& line) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config: expected key=value, got '" + line + "'");
    apply_setting(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
}

inline RunConfig parse_config(std::istream& in) {
    RunConfig c;
    std::string line;
    while (std::getline(in, line)) {
        line = detail::trim(line);
        if (line.empty() || line.front() == '#') continue;
        apply_assignment(c, line);
    }
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {}) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path.string());
    RunConfig c = parse_config(in);
    for (const auto& o : overrides) apply_assignment(c, o);
    return c;
}

inline std::map<std::string, std::string> RunConfig::to_map() const {
    auto real = [](double v) {
        char buf[32];
        const auto r = std::to_chars(buf, buf + sizeof(buf), v);
        return std::string(buf, r.ptr);
    };
    return {{"lambda", real(lambda)},
            {"tau", real(tau)},
            {"n_cav", std::to_string(n_cav)},
            {"gamma", real(gamma)},
            {"lr", real(lr)},
            {"weight_decay", real(weight_decay)},
            {"batch_size", std::to_string(batch_size)},
            {"epochs", std::to_string(epochs)},
            {"hidden", std::to_string(hidden)},
            {"h_dim", std::to_string(h_dim)},
            {"m", std::to_string(m)},
            {"base_rate", real(base_rate)},
            {"svm_reg", real(svm_reg)},
            {"svm_iterations", std::to_string(svm_iterations)}};
}

/// The default configuration as file text.
inline std::string default_config_text() {
    std::string out;
    for (const auto& [k, v] : RunConfig{}.to_map()) out += k + "=" + v + "\n";
    return out;
}

}  // namespace evicem
