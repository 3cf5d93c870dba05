#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "evicem/errors.hpp"
#include "evicem/model.hpp"
#include "evicem/tensor_archive.hpp"

namespace evicem {

/// A model plus the metadata needed to serve it.
struct Checkpoint {
    ModelParams params;
    Mode mode = Mode::evidential;
    double base_rate = 0.5;
    std::vector<std::string> concept_names;
};

inline void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ck) {
    const auto& d = ck.params.dims();
    io::TensorArchive a;
    a.set("kind", "checkpoint");
    a.set("feature_dim", std::to_string(d.feature_dim));
    a.set("hidden", std::to_string(d.hidden));
    a.set("h_dim", std::to_string(d.h_dim));
    a.set("m", std::to_string(d.m));
    a.set("K", std::to_string(d.K));
    a.set("num_classes", std::to_string(d.num_classes));
    char br[32];
    std::snprintf(br, sizeof(br), "%.17g", ck.base_rate);
    a.set("base_rate", br);
    a.set("mode", to_string(ck.mode));
    a.set("concept_names", io::join(ck.concept_names));
    for (const auto& slot : ck.params.layout.slots()) {
        const auto t = ck.params.tensor(&slot - ck.params.layout.slots().data());
        std::vector<std::size_t> shape =
            slot.cols == 1 ? std::vector<std::size_t>{slot.rows}
                           : std::vector<std::size_t>{slot.rows, slot.cols};
        a.tensors.push_back({slot.name, shape, std::vector<float>(t.begin(), t.end())});
    }
    io::write_archive(stem, a);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& stem) {
    const auto a = io::read_archive(stem);
    if (a.get("kind") != "checkpoint") throw DataError(stem.string() + " is not a checkpoint");
    ModelDims d;
    Checkpoint ck;
    try {
        d.feature_dim = std::stoul(a.get("feature_dim"));
        d.hidden = std::stoul(a.get("hidden"));
        d.h_dim = std::stoul(a.get("h_dim"));
        d.m = std::stoul(a.get("m"));
        d.K = std::stoul(a.get("K"));
        d.num_classes = std::stoul(a.get("num_classes"));
        ck.base_rate = std::stod(a.get("base_rate"));
        ck.mode = parse_mode(a.get("mode"));
    } catch (const std::logic_error& e) {
        throw DataError(std::string("malformed checkpoint manifest: ") + e.what());
    }
    ck.concept_names = io::split_list(a.get("concept_names"));
    if (ck.concept_names.size() != d.K) throw DataError("concept_names length differs from K");
    ck.params = ModelParams(d);
    for (std::size_t i = 0; i < ck.params.layout.slots().size(); ++i) {
        const auto& slot = ck.params.layout.slots()[i];
        const auto& t = a.tensor(slot.name);
        if (t.data.size() != slot.size()) {
            throw DataError("tensor '" + slot.name + "' has the wrong shape for the manifest dims");
        }
        auto dst = ck.params.tensor(i);
        std::copy(t.data.begin(), t.data.end(), dst.begin());
    }
    return ck;
}

}  // namespace evicem
