#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "tstream/codec.hpp"

namespace tstream {

enum class Namespace : std::uint8_t { Params = 0, Meta = 1 };

inline constexpr std::size_t kMaxKeyName = 256;
inline constexpr std::size_t kMaxMetaBytes = 64 * 1024;

// Key of one shard of model state. Ordered by (namespace, name bytes).
class ShardKey {
 public:
  // Throws Error(InvalidArgument) for an empty or over-long name.
  ShardKey(Namespace ns, std::string name);

  static ShardKey params(std::string name) { return {Namespace::Params, std::move(name)}; }
  static ShardKey meta(std::string name) { return {Namespace::Meta, std::move(name)}; }

  Namespace ns() const noexcept { return ns_; }
  const std::string& name() const noexcept { return name_; }

  friend bool operator==(const ShardKey&, const ShardKey&) = default;
  friend std::strong_ordering operator<=>(const ShardKey& a, const ShardKey& b) noexcept;

 private:
  Namespace ns_;
  std::string name_;
};

std::string to_string(const ShardKey& key);

// FNV-1a 64-bit over the namespace byte followed by the name bytes.
std::uint64_t fnv1a64(const ShardKey& key) noexcept;

struct ShardKeyHash {
  std::size_t operator()(const ShardKey& key) const noexcept {
    return static_cast<std::size_t>(fnv1a64(key));
  }
};

// Params shards hold dense f64 vectors; Meta shards hold opaque bytes.
class ShardValue {
 public:
  ShardValue() : data_(std::vector<double>{}) {}
  explicit ShardValue(std::vector<double> v) : data_(std::move(v)) {}
  explicit ShardValue(std::string bytes) : data_(std::move(bytes)) {}

  static ShardValue vector(std::vector<double> v) { return ShardValue(std::move(v)); }
  static ShardValue bytes(std::string b) { return ShardValue(std::move(b)); }

  bool is_vector() const noexcept { return std::holds_alternative<std::vector<double>>(data_); }
  bool is_bytes() const noexcept { return !is_vector(); }

  const std::vector<double>& as_vector() const;
  std::vector<double>& as_vector();
  const std::string& as_bytes() const;

  std::size_t dim() const noexcept {
    return is_vector() ? std::get<std::vector<double>>(data_).size() : 0;
  }

  bool all_finite() const noexcept;

  // Bitwise equality: distinguishes -0.0 from 0.0 and compares NaN payloads.
  friend bool operator==(const ShardValue& a, const ShardValue& b) noexcept;

 private:
  std::variant<std::vector<double>, std::string> data_;
};

// Checks that `value` is a legal payload for `key`'s namespace; returns an
// error description or nullopt.
std::optional<std::string> check_value_for_key(const ShardKey& key, const ShardValue& value);

// Shared binary encoding: key = ns u8, name len u16, name bytes.
// Value = dim u32 + f64 values for Params, len u32 + bytes for Meta.
void encode_key(ByteWriter& w, const ShardKey& key);
ShardKey decode_key(ByteReader& r);
void encode_value(ByteWriter& w, Namespace ns, const ShardValue& value);
ShardValue decode_value(ByteReader& r, Namespace ns);

using KeyValue = std::pair<ShardKey, ShardValue>;
// Key-ordered full listing of store contents.
using Listing = std::vector<KeyValue>;

std::vector<std::byte> encode_listing(const Listing& listing);
Listing decode_listing(std::span<const std::byte> bytes);

}  // namespace tstream
