#pragma once

// Samples and datasets, their line-delimited JSON form, and seeded splits.
//
// File layout: the first line is a header record
//   {"format_version":1,"feature_dim":F,"K":K,"num_classes":C,"concept_names":[...]}
// followed by one record per sample
//   {"id":"s000001","x":[...F],"c":[...K],"y":0}

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "evicem/errors.hpp"
#include "evicem/tensor_archive.hpp"

namespace evicem {

struct Sample {
    std::string id;
    std::vector<double> x;
    std::vector<double> concepts;  // soft or hard labels in [0,1]
    std::size_t label = 0;

    bool operator==(const Sample&) const = default;
};

struct Dataset {
    std::size_t feature_dim = 0;
    std::size_t K = 0;
    std::size_t num_classes = 0;
    std::vector<std::string> concept_names;
    std::vector<Sample> samples;

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }

    Dataset with_samples(std::vector<Sample> s) const {
        Dataset d = *this;
        d.samples = std::move(s);
        return d;
    }

    void validate() const {
        for (const auto& s : samples) {
            if (s.x.size() != feature_dim || s.concepts.size() != K) {
                throw DataError("sample " + s.id + " does not match dataset dimensions");
            }
            if (s.label >= num_classes) {
                throw DataError("sample " + s.id + " has class " + std::to_string(s.label) +
                                " >= num_classes");
            }
            for (double c : s.concepts) {
                if (!(c >= 0.0 && c <= 1.0)) {
                    throw DataError("sample " + s.id + " has a concept label outside [0,1]");
                }
            }
        }
    }

    bool operator==(const Dataset&) const = default;
};

inline std::vector<std::string> default_concept_names(std::size_t K) {
    std::vector<std::string> names(K);
    for (std::size_t k = 0; k < K; ++k) names[k] = "concept_" + std::to_string(k);
    return names;
}

inline void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
    using nlohmann::json;
    std::ostringstream out;
    json header = {{"format_version", io::kFormatVersion},
                   {"feature_dim", ds.feature_dim},
                   {"K", ds.K},
                   {"num_classes", ds.num_classes},
                   {"concept_names", ds.concept_names}};
    out << header.dump() << '\n';
    for (const auto& s : ds.samples) {
        json rec = {{"id", s.id}, {"x", s.x}, {"c", s.concepts}, {"y", s.label}};
        out << rec.dump() << '\n';
    }
    io::atomic_write(path, out.str());
}

inline Dataset read_dataset(const std::filesystem::path& path) {
    using nlohmann::json;
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset " + path.string());
    Dataset ds;
    std::string line;
    std::size_t line_no = 0;
    try {
        if (!std::getline(in, line)) throw DataError("empty dataset file " + path.string());
        ++line_no;
        const json header = json::parse(line);
        if (header.at("format_version").get<int>() != io::kFormatVersion) {
            throw DataError("unsupported dataset format_version in " + path.string());
        }
        ds.feature_dim = header.at("feature_dim").get<std::size_t>();
        ds.K = header.at("K").get<std::size_t>();
        ds.num_classes = header.at("num_classes").get<std::size_t>();
        ds.concept_names = header.at("concept_names").get<std::vector<std::string>>();
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const json rec = json::parse(line);
            Sample s;
            s.id = rec.at("id").get<std::string>();
            s.x = rec.at("x").get<std::vector<double>>();
            s.concepts = rec.at("c").get<std::vector<double>>();
            s.label = rec.at("y").get<std::size_t>();
            ds.samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (ds.concept_names.size() != ds.K) throw DataError("concept_names length differs from K");
    ds.validate();
    return ds;
}

struct Split {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Seeded shuffle followed by a 60/20/20 partition; train and val sizes are
/// rounded to nearest, test takes the remainder.
inline Split split_dataset(const Dataset& ds, unsigned long long seed, double train_frac = 0.6,
                           double val_frac = 0.2) {
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n = static_cast<double>(ds.size());
    const auto n_train = static_cast<std::size_t>(std::llround(train_frac * n));
    const auto n_val =
        std::min(ds.size() - n_train, static_cast<std::size_t>(std::llround(val_frac * n)));
    auto take = [&](std::size_t from, std::size_t to) {
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(from),
                                     order.begin() + static_cast<std::ptrdiff_t>(to));
        std::sort(idx.begin(), idx.end());
        std::vector<Sample> out;
        out.reserve(idx.size());
        for (auto i : idx) out.push_back(ds.samples[i]);
        return ds.with_samples(std::move(out));
    };
    return Split{take(0, n_train), take(n_train, n_train + n_val),
                 take(n_train + n_val, ds.size())};
}

}  // namespace evicem
