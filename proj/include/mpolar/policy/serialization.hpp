#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpolar/policy/policy.hpp"

namespace mpolar::policy {

// Raised for unreadable, truncated, corrupted or version-mismatched artifacts.
class PolicyFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kPolicyFormatVersion = 1;

// Binary artifact: magic, version, metadata, normalization statistics, named
// parameters as raw little-endian doubles, nested source artifacts, and a
// trailing FNV-1a checksum. Round trips are bit-exact.
std::vector<std::uint8_t> encode_policy(const Policy& policy);
Policy decode_policy(const std::vector<std::uint8_t>& bytes);

void save_policy(const Policy& policy, const std::filesystem::path& path);
// Throws PolicyMismatchError when expected is set and the stored family differs.
Policy load_policy(const std::filesystem::path& path,
                   std::optional<envs::Family> expected = std::nullopt);

}  // namespace mpolar::policy
