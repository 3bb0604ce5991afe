#pragma once

// Versioned binary container for named tensors.
//
// Layout (all integers little-endian u32, all reals little-endian IEEE binary64):
//   "MUPC"                      magic, 4 bytes
//   version                     currently 1
//   kind                        string
//   attribute count, then (key string, value string) pairs
//   tensor count, then per tensor:
//     name string, rank, dims[rank], row-major payload
//   crc32                       zlib CRC-32 of every preceding byte
// A string is its byte length followed by the bytes.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mup/tensor.hpp"

namespace mup {

inline constexpr std::uint32_t kContainerVersion = 1;

enum class ContainerErrc { bad_magic, version_mismatch, truncated, checksum_mismatch, malformed, wrong_kind };

std::string_view to_string(ContainerErrc code) noexcept;

class ContainerError : public std::runtime_error {
   public:
    ContainerError(ContainerErrc code, const std::string& what)
        : std::runtime_error(what), code_(code) {}
    ContainerErrc code() const noexcept { return code_; }

   private:
    ContainerErrc code_;
};

/// File system failure (missing file, unwritable path).
class IoError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct Container {
    std::string kind;
    std::vector<std::pair<std::string, std::string>> attributes;
    std::vector<std::pair<std::string, Tensor>> tensors;

    std::optional<std::string> attribute(std::string_view key) const;
    const Tensor* tensor(std::string_view name) const;

    /// Like attribute()/tensor() but throws ContainerError(malformed) when absent.
    const std::string& require_attribute(std::string_view key) const;
    const Tensor& require_tensor(std::string_view name) const;
};

std::vector<std::uint8_t> encode(const Container& c);
Container decode(const std::vector<std::uint8_t>& bytes);

std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes);
/// Eight lowercase hex digits.
std::string hex32(std::uint32_t v);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace mup
