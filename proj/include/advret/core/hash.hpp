#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>

namespace advret {

// Streaming FNV-1a 64-bit. Used for config/weight fingerprints that guard
// against mixing features from different frozen targets; not cryptographic.
class Fingerprint {
public:
    Fingerprint() = default;

    Fingerprint& update(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001b3ULL;
        }
        return *this;
    }

    Fingerprint& update(const std::string& s) { return update(s.data(), s.size()); }

    template <class T>
    Fingerprint& update_value(const T& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        return update(&v, sizeof(T));
    }

    std::uint64_t value() const { return hash_; }

    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash_));
        return std::string(buf);
    }

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace advret
