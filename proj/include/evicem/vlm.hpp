#pragma once

// Embedding bank standing in for a vision-language model, and the soft
// concept-label estimate computed from it:
//
//   c~_k = 1/(T_k R) sum_t sum_r  e^{cos(i,e^t_kr)/tau} / (e^{cos(i,e^t_kr)/tau} + e^{cos(i,e_r)/tau})

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "evicem/data.hpp"
#include "evicem/errors.hpp"
#include "evicem/tensor_archive.hpp"

namespace evicem {

class EmbeddingBank {
public:
    static constexpr double kNormTolerance = 1e-6;

    EmbeddingBank() = default;

    /// `image` is n x d row-major; `concept_prompts[k]` holds T_k * R
    /// embeddings ordered term-major (index t * R + r); `reference` is R x d.
    EmbeddingBank(std::size_t d, double tau, std::vector<std::string> sample_ids,
                  std::vector<double> image, std::vector<std::size_t> terms_per_concept,
                  std::size_t templates, std::vector<std::vector<double>> concept_prompts,
                  std::vector<double> reference)
        : d_(d),
          tau_(tau),
          templates_(templates),
          sample_ids_(std::move(sample_ids)),
          image_(std::move(image)),
          terms_(std::move(terms_per_concept)),
          concept_prompts_(std::move(concept_prompts)),
          reference_(std::move(reference)) {
        validate();
        for (std::size_t i = 0; i < sample_ids_.size(); ++i) row_of_[sample_ids_[i]] = i;
    }

    std::size_t dim() const noexcept { return d_; }
    double tau() const noexcept { return tau_; }
    void set_tau(double tau) {
        if (!(tau > 0.0)) throw DomainError("embedding bank: temperature must be > 0");
        tau_ = tau;
    }
    std::size_t num_concepts() const noexcept { return terms_.size(); }
    std::size_t templates() const noexcept { return templates_; }
    const std::vector<std::size_t>& terms() const noexcept { return terms_; }
    const std::vector<std::string>& sample_ids() const noexcept { return sample_ids_; }
    bool contains(const std::string& id) const { return row_of_.count(id) != 0; }

    std::span<const double> image(const std::string& id) const {
        const auto it = row_of_.find(id);
        if (it == row_of_.end()) throw DataError("embedding bank has no sample '" + id + "'");
        return {image_.data() + it->second * d_, d_};
    }
    std::span<const double> concept_prompt(std::size_t k, std::size_t t, std::size_t r) const {
        return {concept_prompts_.at(k).data() + (t * templates_ + r) * d_, d_};
    }
    std::span<const double> reference(std::size_t r) const {
        return {reference_.data() + r * d_, d_};
    }

    const std::vector<double>& image_matrix() const noexcept { return image_; }
    const std::vector<std::vector<double>>& concept_prompt_matrices() const noexcept {
        return concept_prompts_;
    }
    const std::vector<double>& reference_matrix() const noexcept { return reference_; }

private:
    void validate() const {
        if (!(tau_ > 0.0)) throw DomainError("embedding bank: temperature must be > 0");
        if (d_ == 0 || templates_ == 0) throw DataError("embedding bank: d and R must be >= 1");
        require_dims(image_.size() == sample_ids_.size() * d_, "embedding bank: image matrix size");
        require_dims(reference_.size() == templates_ * d_, "embedding bank: reference size");
        require_dims(concept_prompts_.size() == terms_.size(), "embedding bank: concept count");
        for (std::size_t k = 0; k < terms_.size(); ++k) {
            if (terms_[k] == 0) throw DataError("embedding bank: concept with zero terms");
            require_dims(concept_prompts_[k].size() == terms_[k] * templates_ * d_,
                         "embedding bank: prompt matrix size for concept " + std::to_string(k));
        }
        check_unit_rows(image_, "image");
        check_unit_rows(reference_, "reference");
        for (const auto& m : concept_prompts_) check_unit_rows(m, "concept prompt");
    }

    void check_unit_rows(const std::vector<double>& m, const char* what) const {
        for (std::size_t off = 0; off < m.size(); off += d_) {
            double n2 = 0.0;
            for (std::size_t j = 0; j < d_; ++j) n2 += m[off + j] * m[off + j];
            if (std::abs(std::sqrt(n2) - 1.0) > kNormTolerance) {
                throw DataError(std::string("embedding bank: ") + what +
                                " embedding is not unit-norm (|v| = " +
                                std::to_string(std::sqrt(n2)) + ")");
            }
        }
    }

    std::size_t d_ = 0;
    double tau_ = 0.01;
    std::size_t templates_ = 0;
    std::vector<std::string> sample_ids_;
    std::vector<double> image_;
    std::vector<std::size_t> terms_;
    std::vector<std::vector<double>> concept_prompts_;
    std::vector<double> reference_;
    std::unordered_map<std::string, std::size_t> row_of_;
};

inline double cosine_unit(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

/// Two-way softmax between a concept prompt and its reference prompt,
/// e^{s/tau} / (e^{s/tau} + e^{s_ref/tau}), evaluated as a logistic of the
/// scaled difference so large 1/tau cannot overflow.
inline double two_way_softmax(double sim, double sim_ref, double tau) {
    const double z = (sim - sim_ref) / tau;
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double estimate_concept(const EmbeddingBank& bank, const std::string& sample_id,
                               std::size_t k) {
    if (k >= bank.num_concepts()) {
        throw DataError("embedding bank has no concept " + std::to_string(k));
    }
    const auto img = bank.image(sample_id);
    const std::size_t R = bank.templates();
    const std::size_t T = bank.terms()[k];
    double acc = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t r = 0; r < R; ++r) {
            acc += two_way_softmax(cosine_unit(img, bank.concept_prompt(k, t, r)),
                                   cosine_unit(img, bank.reference(r)), bank.tau());
        }
    }
    return acc / static_cast<double>(T * R);
}

/// Copy of `ds` with every concept label replaced by its bank estimate.
inline Dataset with_estimated_concepts(const Dataset& ds, const EmbeddingBank& bank) {
    if (bank.num_concepts() != ds.K) {
        throw DataError("embedding bank has " + std::to_string(bank.num_concepts()) +
                        " concepts, dataset has " + std::to_string(ds.K));
    }
    Dataset out = ds;
    for (auto& s : out.samples) {
        if (!bank.contains(s.id)) throw DataError("embedding bank does not cover sample " + s.id);
        for (std::size_t k = 0; k < ds.K; ++k) s.concepts[k] = estimate_concept(bank, s.id, k);
    }
    return out;
}

namespace detail {

inline std::vector<float> to_float(const std::vector<double>& v) {
    return {v.begin(), v.end()};
}
inline std::vector<double> to_double(const std::vector<float>& v) {
    return {v.begin(), v.end()};
}

}  // namespace detail

inline void write_bank(const std::filesystem::path& stem, const EmbeddingBank& bank) {
    io::TensorArchive a;
    a.set("kind", "embedding_bank");
    a.set("d", std::to_string(bank.dim()));
    a.set("K", std::to_string(bank.num_concepts()));
    std::vector<std::string> terms;
    for (auto t : bank.terms()) terms.push_back(std::to_string(t));
    a.set("T_k", io::join(terms));
    a.set("R", std::to_string(bank.templates()));
    char tau[32];
    std::snprintf(tau, sizeof(tau), "%.17g", bank.tau());
    a.set("tau", tau);
    a.set("sample_ids", io::join(bank.sample_ids()));
    a.tensors.push_back({"image", {bank.sample_ids().size(), bank.dim()},
                         detail::to_float(bank.image_matrix())});
    for (std::size_t k = 0; k < bank.num_concepts(); ++k) {
        a.tensors.push_back({"concept." + std::to_string(k),
                             {bank.terms()[k], bank.templates(), bank.dim()},
                             detail::to_float(bank.concept_prompt_matrices()[k])});
    }
    a.tensors.push_back(
        {"reference", {bank.templates(), bank.dim()}, detail::to_float(bank.reference_matrix())});
    io::write_archive(stem, a);
}

inline EmbeddingBank read_bank(const std::filesystem::path& stem) {
    const auto a = io::read_archive(stem);
    if (a.get("kind") != "embedding_bank") throw DataError(stem.string() + " is not a bank");
    try {
        const std::size_t d = std::stoul(a.get("d"));
        const std::size_t K = std::stoul(a.get("K"));
        const std::size_t R = std::stoul(a.get("R"));
        std::vector<std::size_t> terms;
        for (const auto& t : io::split_list(a.get("T_k"))) terms.push_back(std::stoul(t));
        if (terms.size() != K) throw DataError("T_k list length differs from K");
        std::vector<std::vector<double>> prompts;
        for (std::size_t k = 0; k < K; ++k) {
            prompts.push_back(detail::to_double(a.tensor("concept." + std::to_string(k)).data));
        }
        return EmbeddingBank(d, std::stod(a.get("tau")), io::split_list(a.get("sample_ids")),
                             detail::to_double(a.tensor("image").data), std::move(terms), R,
                             std::move(prompts), detail::to_double(a.tensor("reference").data));
    } catch (const std::logic_error& e) {
        throw DataError(std::string("malformed embedding bank manifest: ") + e.what());
    }
}

}  // namespace evicem
