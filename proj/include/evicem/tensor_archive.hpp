#pragma once

// Manifest + blob container shared by model checkpoints, embedding banks and
// CAV files.
//
// <stem>.manifest is UTF-8 text, one `key=value` per line, in write order.
// Tensor index lines read `tensor=<name> <d0>x<d1>... <byte offset>`.
// <stem>.bin is the concatenation of all tensors as little-endian IEEE-754
// binary32. The manifest records blob_bytes and the zlib CRC-32 of the blob.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "evicem/errors.hpp"

namespace evicem::io {

inline constexpr int kFormatVersion = 1;

struct NamedTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> data;
};

struct TensorArchive {
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<NamedTensor> tensors;

    void set(const std::string& key, const std::string& value) {
        for (auto& kv : meta) {
            if (kv.first == key) {
                kv.second = value;
                return;
            }
        }
        meta.emplace_back(key, value);
    }

    bool has(const std::string& key) const {
        for (const auto& kv : meta)
            if (kv.first == key) return true;
        return false;
    }

    const std::string& get(const std::string& key) const {
        for (const auto& kv : meta)
            if (kv.first == key) return kv.second;
        throw DataError("manifest is missing key '" + key + "'");
    }

    const NamedTensor& tensor(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return t;
        throw DataError("archive has no tensor '" + name + "'");
    }
};

/// Writes `content` to `path` through a temporary file and a rename.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open " + tmp + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw DataError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::uint32_t crc32_of(const std::string& bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

namespace detail {

inline std::uint32_t to_little_endian(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        v = ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
    }
    return v;
}

inline std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += 'x';
        s += std::to_string(shape[i]);
    }
    return s;
}

inline std::vector<std::size_t> parse_shape(const std::string& s) {
    std::vector<std::size_t> shape;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, 'x')) {
        try {
            shape.push_back(static_cast<std::size_t>(std::stoull(part)));
        } catch (const std::exception&) {
            throw DataError("bad tensor shape '" + s + "'");
        }
    }
    if (shape.empty()) throw DataError("empty tensor shape");
    return shape;
}

inline std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

}  // namespace detail

inline std::filesystem::path manifest_path(const std::filesystem::path& stem) {
    return stem.string() + ".manifest";
}
inline std::filesystem::path blob_path(const std::filesystem::path& stem) {
    return stem.string() + ".bin";
}

inline void write_archive(const std::filesystem::path& stem, const TensorArchive& archive) {
    std::string blob;
    std::ostringstream index;
    for (const auto& t : archive.tensors) {
        require_dims(detail::element_count(t.shape) == t.data.size(),
                     "tensor '" + t.name + "' data does not match its shape");
        index << "tensor=" << t.name << ' ' << detail::shape_string(t.shape) << ' ' << blob.size()
              << '\n';
        for (float f : t.data) {
            const std::uint32_t bits = detail::to_little_endian(std::bit_cast<std::uint32_t>(f));
            blob.append(reinterpret_cast<const char*>(&bits), sizeof(bits));
        }
    }
    std::ostringstream man;
    man << "format_version=" << kFormatVersion << '\n';
    for (const auto& [k, v] : archive.meta) {
        if (k == "format_version") continue;
        man << k << '=' << v << '\n';
    }
    man << "blob=" << blob_path(stem).filename().string() << '\n';
    man << "blob_bytes=" << blob.size() << '\n';
    char crc[16];
    std::snprintf(crc, sizeof(crc), "%08x", crc32_of(blob));
    man << "blob_crc32=" << crc << '\n';
    man << index.str();
    atomic_write(blob_path(stem), blob);
    atomic_write(manifest_path(stem), man.str());
}

inline TensorArchive read_archive(const std::filesystem::path& stem) {
    const std::string text = read_file(manifest_path(stem));
    TensorArchive archive;
    struct IndexEntry {
        std::string name;
        std::vector<std::size_t> shape;
        std::size_t offset;
    };
    std::vector<IndexEntry> index;
    std::istringstream lines(text);
    std::string line;
    std::size_t blob_bytes = 0;
    std::string crc_text;
    bool version_seen = false;
    while (std::getline(lines, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("malformed manifest line: " + line);
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "format_version") {
            if (value != std::to_string(kFormatVersion)) {
                throw DataError("unsupported format_version " + value + " in " +
                                manifest_path(stem).string());
            }
            version_seen = true;
        } else if (key == "tensor") {
            std::istringstream fields(value);
            IndexEntry e;
            std::string shape;
            if (!(fields >> e.name >> shape >> e.offset)) {
                throw DataError("malformed tensor index entry: " + value);
            }
            e.shape = detail::parse_shape(shape);
            index.push_back(std::move(e));
        } else if (key == "blob_bytes") {
            blob_bytes = static_cast<std::size_t>(std::stoull(value));
        } else if (key == "blob_crc32") {
            crc_text = value;
        } else if (key != "blob") {
            archive.meta.emplace_back(key, value);
        }
    }
    if (!version_seen) throw DataError("manifest has no format_version");
    const std::string blob = read_file(blob_path(stem));
    if (blob.size() != blob_bytes) {
        throw DataError("truncated blob " + blob_path(stem).string() + ": " +
                        std::to_string(blob.size()) + " of " + std::to_string(blob_bytes) +
                        " bytes");
    }
    char crc[16];
    std::snprintf(crc, sizeof(crc), "%08x", crc32_of(blob));
    if (crc_text != crc) throw DataError("checksum mismatch in " + blob_path(stem).string());
    for (const auto& e : index) {
        const std::size_t n = detail::element_count(e.shape);
        if (e.offset + n * 4 > blob.size()) {
            throw DataError("tensor '" + e.name + "' extends past the end of the blob");
        }
        NamedTensor t{e.name, e.shape, std::vector<float>(n)};
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t bits;
            std::memcpy(&bits, blob.data() + e.offset + 4 * i, 4);
            t.data[i] = std::bit_cast<float>(detail::to_little_endian(bits));
        }
        archive.tensors.push_back(std::move(t));
    }
    return archive;
}

inline std::string join(const std::vector<std::string>& parts, char sep = ',') {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, sep)) out.push_back(part);
    return out;
}

}  // namespace evicem::io
