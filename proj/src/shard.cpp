#include "tstream/shard.hpp"

#include <cmath>
#include <cstring>

#include "tstream/error.hpp"

namespace tstream {

ShardKey::ShardKey(Namespace ns, std::string name) : ns_(ns), name_(std::move(name)) {
  if (name_.empty()) throw Error(ErrorCode::InvalidArgument, "shard key name must be non-empty");
  if (name_.size() > kMaxKeyName) {
    throw Error(ErrorCode::InvalidArgument, "shard key name exceeds 256 bytes");
  }
  if (ns_ != Namespace::Params && ns_ != Namespace::Meta) {
    throw Error(ErrorCode::InvalidArgument, "unknown shard namespace");
  }
}

std::strong_ordering operator<=>(const ShardKey& a, const ShardKey& b) noexcept {
  if (auto c = static_cast<int>(a.ns_) <=> static_cast<int>(b.ns_); c != 0) return c;
  int c = a.name_.compare(b.name_);
  return c < 0 ? std::strong_ordering::less
               : (c > 0 ? std::strong_ordering::greater : std::strong_ordering::equal);
}

std::string to_string(const ShardKey& key) {
  return (key.ns() == Namespace::Params ? "Params/" : "Meta/") + key.name();
}

std::uint64_t fnv1a64(const ShardKey& key) noexcept {
  constexpr std::uint64_t kOffset = 0xcbf29ce484222325ull;
  constexpr std::uint64_t kPrime = 0x100000001b3ull;
  std::uint64_t h = kOffset;
  h ^= static_cast<std::uint8_t>(key.ns());
  h *= kPrime;
  for (unsigned char c : key.name()) {
    h ^= c;
    h *= kPrime;
  }
  return h;
}

const std::vector<double>& ShardValue::as_vector() const {
  if (!is_vector()) throw Error(ErrorCode::InvalidArgument, "shard value is not a vector");
  return std::get<std::vector<double>>(data_);
}

std::vector<double>& ShardValue::as_vector() {
  if (!is_vector()) throw Error(ErrorCode::InvalidArgument, "shard value is not a vector");
  return std::get<std::vector<double>>(data_);
}

const std::string& ShardValue::as_bytes() const {
  if (is_vector()) throw Error(ErrorCode::InvalidArgument, "shard value is not a byte string");
  return std::get<std::string>(data_);
}

bool ShardValue::all_finite() const noexcept {
  if (!is_vector()) return true;
  for (double x : std::get<std::vector<double>>(data_)) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

bool operator==(const ShardValue& a, const ShardValue& b) noexcept {
  if (a.is_vector() != b.is_vector()) return false;
  if (!a.is_vector()) return std::get<std::string>(a.data_) == std::get<std::string>(b.data_);
  const auto& x = std::get<std::vector<double>>(a.data_);
  const auto& y = std::get<std::vector<double>>(b.data_);
  return x.size() == y.size() &&
         (x.empty() || std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0);
}

std::optional<std::string> check_value_for_key(const ShardKey& key, const ShardValue& value) {
  if (key.ns() == Namespace::Params) {
    if (!value.is_vector()) return "Params shard requires a vector value";
    if (value.dim() == 0) return "Params vector must have dim >= 1";
    if (!value.all_finite()) return "Params vector contains NaN/Inf";
  } else {
    if (!value.is_bytes()) return "Meta shard requires a byte-string value";
    if (value.as_bytes().size() > kMaxMetaBytes) return "Meta value exceeds 64 KiB";
  }
  return std::nullopt;
}

void encode_key(ByteWriter& w, const ShardKey& key) {
  w.u8(static_cast<std::uint8_t>(key.ns()));
  w.u16(static_cast<std::uint16_t>(key.name().size()));
  w.bytes(key.name());
}

ShardKey decode_key(ByteReader& r) {
  auto ns = r.u8();
  if (ns > 1) throw Error(ErrorCode::Corruption, "bad namespace byte");
  auto len = r.u16();
  try {
    return ShardKey(static_cast<Namespace>(ns), r.string(len));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Corruption) throw;
    throw Error(ErrorCode::Corruption, e.what());
  }
}

void encode_value(ByteWriter& w, Namespace ns, const ShardValue& value) {
  if (ns == Namespace::Params) {
    const auto& v = value.as_vector();
    w.u32(static_cast<std::uint32_t>(v.size()));
    for (double x : v) w.f64(x);
  } else {
    const auto& b = value.as_bytes();
    w.u32(static_cast<std::uint32_t>(b.size()));
    w.bytes(b);
  }
}

ShardValue decode_value(ByteReader& r, Namespace ns) {
  auto n = r.u32();
  if (ns == Namespace::Params) {
    if (n > r.remaining() / sizeof(double)) throw Error(ErrorCode::Corruption, "vector overruns record");
    std::vector<double> v(n);
    for (auto& x : v) x = r.f64();
    return ShardValue(std::move(v));
  }
  if (n > kMaxMetaBytes) throw Error(ErrorCode::Corruption, "meta value too long");
  return ShardValue(r.string(n));
}

std::vector<std::byte> encode_listing(const Listing& listing) {
  ByteWriter w;
  for (const auto& [key, value] : listing) {
    encode_key(w, key);
    encode_value(w, key.ns(), value);
  }
  return w.take();
}

Listing decode_listing(std::span<const std::byte> bytes) {
  ByteReader r(bytes);
  Listing out;
  while (!r.done()) {
    auto key = decode_key(r);
    auto value = decode_value(r, key.ns());
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

}  // namespace tstream
