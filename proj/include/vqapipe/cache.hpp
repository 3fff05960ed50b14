#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "vqapipe/errors.hpp"
#include "vqapipe/hash.hpp"

namespace vqapipe {

// Canonical serialization: nlohmann::json orders object keys, dump() emits
// shortest round-trip floats; the same value always digests identically.
inline std::string canonical_dump(const nlohmann::json& value) { return value.dump(); }

// Content-addressed key over (role, model, params fingerprint, seed, input).
struct CacheKey {
    std::string role;
    std::string model_id;
    std::string fingerprint;  // strategy/decode parameter fingerprint
    std::uint64_t seed = 0;
    std::string input_digest;  // hash of the input content

    std::string digest() const {
        nlohmann::json j = {{"role", role},
                            {"model_id", model_id},
                            {"fingerprint", fingerprint},
                            {"seed", seed},
                            {"input", input_digest}};
        return sha256_hex(canonical_dump(j));
    }
};

// One file per entry under the cache directory; writes are
// write-temp-then-rename so readers never observe a partial entry.
class FileCache {
public:
    explicit FileCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    const std::filesystem::path& dir() const { return dir_; }
    std::uint64_t hits() const { return hits_.load(); }
    std::uint64_t misses() const { return misses_.load(); }

    std::optional<nlohmann::json> get(const CacheKey& key) const {
        std::filesystem::path path = entry_path(key);
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            ++misses_;
            return std::nullopt;
        }
        nlohmann::json entry;
        try {
            entry = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception&) {
            quarantine(path);
            throw CacheCorruptionError("unparseable cache entry quarantined: " + path.string());
        }
        std::string stored_digest = entry.value("value_digest", "");
        const nlohmann::json& value = entry.at("value");
        if (sha256_hex(canonical_dump(value)) != stored_digest) {
            quarantine(path);
            throw CacheCorruptionError("cache digest mismatch, entry quarantined: " + path.string());
        }
        ++hits_;
        return value;
    }

    void put(const CacheKey& key, const nlohmann::json& value) const {
        nlohmann::json entry = {{"key", key.digest()},
                                {"value", value},
                                {"value_digest", sha256_hex(canonical_dump(value))}};
        std::filesystem::path final_path = entry_path(key);
        std::filesystem::path tmp_path =
            dir_ / (final_path.filename().string() + ".tmp." +
                    std::to_string(tmp_counter_.fetch_add(1)) + "." + unique_suffix());
        {
            std::ofstream out(tmp_path, std::ios::binary);
            if (!out) throw ConfigurationError("cache directory not writable: " + dir_.string());
            out << canonical_dump(entry);
            if (!out) throw ConfigurationError("failed writing cache entry: " + tmp_path.string());
        }
        std::error_code ec;
        std::filesystem::rename(tmp_path, final_path, ec);
        if (ec) {
            std::filesystem::remove(tmp_path);
            throw ConfigurationError("cache rename failed: " + ec.message());
        }
    }

private:
    std::filesystem::path entry_path(const CacheKey& key) const {
        return dir_ / (key.digest() + ".json");
    }

    static std::string unique_suffix() {
        static std::atomic<std::uint64_t> seq{0};
        return std::to_string(seq.fetch_add(1)) + "." +
               std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    }

    static void quarantine(const std::filesystem::path& path) {
        std::error_code ec;
        std::filesystem::rename(path, path.string() + ".corrupt", ec);
        // If the rename races with another quarantine, the entry is gone either way.
    }

    std::filesystem::path dir_;
    mutable std::atomic<std::uint64_t> hits_{0};
    mutable std::atomic<std::uint64_t> misses_{0};
    mutable std::atomic<std::uint64_t> tmp_counter_{0};
};

}  // namespace vqapipe
