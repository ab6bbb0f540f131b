#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advret/core/errors.hpp"
#include "advret/core/tensor.hpp"
#include "advret/nn/module.hpp"

namespace advret {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

// Versioned binary archive of named arrays plus a JSON metadata block.
// Layout: magic, format version, meta, then (name, dtype, dims, raw bytes)
// per entry. Loads are all-or-nothing: a truncated file never yields a
// partially restored state.
inline constexpr char kArchiveMagic[8] = {'A', 'D', 'V', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kArchiveVersion = 1;

enum class ArchiveDType : std::uint8_t { F32 = 0, F64 = 1, I64 = 2, U64 = 3 };

template <class T>
constexpr ArchiveDType dtype_of();
template <>
constexpr ArchiveDType dtype_of<float>() { return ArchiveDType::F32; }
template <>
constexpr ArchiveDType dtype_of<double>() { return ArchiveDType::F64; }
template <>
constexpr ArchiveDType dtype_of<std::int64_t>() { return ArchiveDType::I64; }
template <>
constexpr ArchiveDType dtype_of<std::uint64_t>() { return ArchiveDType::U64; }

inline std::size_t dtype_size(ArchiveDType d) {
    switch (d) {
        case ArchiveDType::F32: return 4;
        default: return 8;
    }
}

struct ArchiveEntry {
    std::string name;
    ArchiveDType dtype = ArchiveDType::F32;
    std::vector<std::int64_t> dims;
    std::vector<unsigned char> bytes;

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

class Archive {
public:
    nlohmann::json meta;

    void add_raw(std::string name, ArchiveDType dtype, std::vector<std::int64_t> dims,
                 const void* data, std::size_t byte_len) {
        ArchiveEntry e;
        e.name = std::move(name);
        e.dtype = dtype;
        e.dims = std::move(dims);
        e.bytes.resize(byte_len);
        std::memcpy(e.bytes.data(), data, byte_len);
        entries_.push_back(std::move(e));
    }

    template <class T>
    void add_tensor(const std::string& name, const Tensor<T>& t) {
        std::vector<std::int64_t> dims(t.dims().begin(), t.dims().end());
        add_raw(name, dtype_of<T>(), std::move(dims), t.data(), static_cast<std::size_t>(t.size()) * sizeof(T));
    }

    template <class T>
    void add_scalars(const std::string& name, const std::vector<T>& v) {
        add_raw(name, dtype_of<T>(), {static_cast<std::int64_t>(v.size())}, v.data(), v.size() * sizeof(T));
    }

    const ArchiveEntry* find(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.name == name) return &e;
        return nullptr;
    }

    const ArchiveEntry& require(const std::string& name) const {
        const ArchiveEntry* e = find(name);
        if (!e) throw CheckpointError("checkpoint is missing entry '" + name + "'");
        return *e;
    }

    template <class T>
    Tensor<T> tensor(const std::string& name) const {
        const ArchiveEntry& e = require(name);
        if (e.dtype != dtype_of<T>())
            throw CheckpointError("checkpoint entry '" + name + "' has a different scalar type");
        Shape dims(e.dims.begin(), e.dims.end());
        Tensor<T> t(dims);
        std::memcpy(t.data(), e.bytes.data(), e.bytes.size());
        return t;
    }

    template <class T>
    std::vector<T> scalars(const std::string& name) const {
        const ArchiveEntry& e = require(name);
        if (e.dtype != dtype_of<T>())
            throw CheckpointError("checkpoint entry '" + name + "' has a different scalar type");
        std::vector<T> v(static_cast<std::size_t>(e.numel()));
        std::memcpy(v.data(), e.bytes.data(), e.bytes.size());
        return v;
    }

    const std::vector<ArchiveEntry>& entries() const { return entries_; }

    void save(const std::filesystem::path& path) const {
        namespace fs = std::filesystem;
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        const fs::path tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
            out.write(kArchiveMagic, sizeof(kArchiveMagic));
            write_u32(out, kArchiveVersion);
            const std::string meta_str = meta.dump();
            write_u64(out, meta_str.size());
            out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
            write_u64(out, entries_.size());
            for (const auto& e : entries_) {
                write_u32(out, static_cast<std::uint32_t>(e.name.size()));
                out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
                const std::uint8_t d = static_cast<std::uint8_t>(e.dtype);
                out.write(reinterpret_cast<const char*>(&d), 1);
                write_u32(out, static_cast<std::uint32_t>(e.dims.size()));
                for (auto dim : e.dims) write_u64(out, static_cast<std::uint64_t>(dim));
                write_u64(out, e.bytes.size());
                out.write(reinterpret_cast<const char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
            }
            if (!out) throw IoError("checkpoint write failed: " + path.string());
        }
        fs::rename(tmp, path);
    }

    static Archive load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
        char magic[8];
        read_exact(in, magic, sizeof(magic), path);
        if (std::memcmp(magic, kArchiveMagic, sizeof(magic)) != 0)
            throw CheckpointError("not a checkpoint archive: " + path.string());
        const std::uint32_t version = read_u32(in, path);
        if (version != kArchiveVersion)
            throw CheckpointError("checkpoint format version " + std::to_string(version) +
                                  " is not supported (expected " + std::to_string(kArchiveVersion) + ")");
        Archive a;
        const std::uint64_t meta_len = read_u64(in, path);
        std::string meta_str(meta_len, '\0');
        read_exact(in, meta_str.data(), meta_len, path);
        try {
            a.meta = nlohmann::json::parse(meta_str);
        } catch (const nlohmann::json::exception& e) {
            throw CheckpointError("corrupt checkpoint metadata in " + path.string() + ": " + e.what());
        }
        const std::uint64_t n_entries = read_u64(in, path);
        for (std::uint64_t i = 0; i < n_entries; ++i) {
            ArchiveEntry e;
            const std::uint32_t name_len = read_u32(in, path);
            e.name.resize(name_len);
            read_exact(in, e.name.data(), name_len, path);
            std::uint8_t d = 0;
            read_exact(in, &d, 1, path);
            if (d > 3) throw CheckpointError("corrupt checkpoint entry dtype in " + path.string());
            e.dtype = static_cast<ArchiveDType>(d);
            const std::uint32_t rank = read_u32(in, path);
            e.dims.resize(rank);
            for (auto& dim : e.dims) dim = static_cast<std::int64_t>(read_u64(in, path));
            const std::uint64_t byte_len = read_u64(in, path);
            if (byte_len != static_cast<std::uint64_t>(e.numel()) * dtype_size(e.dtype))
                throw CheckpointError("corrupt checkpoint entry '" + e.name + "' in " + path.string());
            e.bytes.resize(byte_len);
            read_exact(in, e.bytes.data(), byte_len, path);
            a.entries_.push_back(std::move(e));
        }
        // Strict framing: anything after the declared entries is corruption.
        char extra;
        if (in.read(&extra, 1))
            throw CheckpointError("trailing bytes after checkpoint entries in " + path.string());
        return a;
    }

private:
    static void write_u32(std::ofstream& out, std::uint32_t v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    static void write_u64(std::ofstream& out, std::uint64_t v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    static void read_exact(std::ifstream& in, void* dst, std::size_t len, const std::filesystem::path& path) {
        in.read(static_cast<char*>(dst), static_cast<std::streamsize>(len));
        if (in.gcount() != static_cast<std::streamsize>(len))
            throw CheckpointError("truncated checkpoint: " + path.string());
    }
    static std::uint32_t read_u32(std::ifstream& in, const std::filesystem::path& path) {
        std::uint32_t v = 0;
        read_exact(in, &v, sizeof(v), path);
        return v;
    }
    static std::uint64_t read_u64(std::ifstream& in, const std::filesystem::path& path) {
        std::uint64_t v = 0;
        read_exact(in, &v, sizeof(v), path);
        return v;
    }

    std::vector<ArchiveEntry> entries_;
};

// Adds every registry array (parameters and statistics) under a prefix.
template <class T>
void archive_registry(Archive& a, const nn::ParamRegistry<T>& reg, const std::string& prefix) {
    for (const auto& e : reg.entries()) a.add_tensor(prefix + e.name, *e.value);
}

// Restores registry arrays from the archive. Missing names or shape
// mismatches identify the offending layer; nothing is written unless every
// entry checks out.
template <class T>
void restore_registry(const Archive& a, nn::ParamRegistry<T>& reg, const std::string& prefix) {
    std::vector<Tensor<T>> staged;
    staged.reserve(reg.entries().size());
    std::set<std::string> expected;
    for (const auto& e : reg.entries()) {
        const std::string name = prefix + e.name;
        expected.insert(name);
        const ArchiveEntry* ae = a.find(name);
        if (!ae)
            throw CheckpointError("checkpoint does not match this architecture: missing parameter '" + name + "'");
        Tensor<T> t = a.tensor<T>(name);
        if (!t.same_shape(*e.value))
            throw CheckpointError("checkpoint does not match this architecture: parameter '" + name + "' has shape " +
                                  shape_str(t.dims()) + ", expected " + shape_str(e.value->dims()));
        staged.push_back(std::move(t));
    }
    // Entries under this prefix that the architecture does not declare also
    // mean the archive came from a different spec.
    for (const auto& e : a.entries())
        if (e.name.rfind(prefix, 0) == 0 && !expected.count(e.name) &&
            e.name.find('.', prefix.size()) != std::string::npos)
            throw CheckpointError("checkpoint does not match this architecture: unexpected parameter '" + e.name +
                                  "'");
    std::size_t i = 0;
    for (const auto& e : reg.entries()) *e.value = std::move(staged[i++]);
}

}  // namespace advret
