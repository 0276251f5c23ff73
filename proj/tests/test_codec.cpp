#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "tstream/codec.hpp"
#include "tstream/crc32c.hpp"
#include "tstream/error.hpp"
#include "tstream/shard.hpp"
#include "tstream/state_store.hpp"

using namespace tstream;

namespace {

std::span<const std::byte> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::byte*>(s.data()), s.size()};
}

// Reference FNV-1a, written out longhand.
std::uint64_t fnv_reference(std::uint8_t ns, const std::string& name) {
  std::uint64_t h = 14695981039346656037ull;
  h ^= ns;
  h *= 1099511628211ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

TEST(Crc32c, KnownVectors) {
  EXPECT_EQ(crc32c(as_bytes("123456789")), 0xE3069283u);
  EXPECT_EQ(crc32c(as_bytes("")), 0u);
  std::string zeros(32, '\0');
  EXPECT_EQ(crc32c(as_bytes(zeros)), 0x8A9136AAu);
}

TEST(Crc32c, ExtendMatchesOneShot) {
  const std::string s = "the quick brown fox jumps over the lazy dog";
  const auto all = as_bytes(s);
  const std::uint32_t part = crc32c_extend(crc32c(all.first(10)), all.subspan(10));
  EXPECT_EQ(part, crc32c(all));
}

TEST(Codec, LittleEndianLayout) {
  ByteWriter w;
  w.u32(0x01020304);
  w.u16(0xA0B0);
  const auto& b = w.buffer();
  ASSERT_EQ(b.size(), 6u);
  EXPECT_EQ(b[0], std::byte{0x04});
  EXPECT_EQ(b[3], std::byte{0x01});
  EXPECT_EQ(b[4], std::byte{0xB0});
}

TEST(Codec, RoundTripAndUnderrun) {
  ByteWriter w;
  w.u8(7);
  w.u64(0xDEADBEEFCAFEBABEull);
  w.f64(-0.0);
  w.f64(std::numeric_limits<double>::denorm_min());
  ByteReader r(w.buffer());
  EXPECT_EQ(r.u8(), 7);
  EXPECT_EQ(r.u64(), 0xDEADBEEFCAFEBABEull);
  EXPECT_TRUE(std::signbit(r.f64()));
  EXPECT_EQ(r.f64(), std::numeric_limits<double>::denorm_min());
  EXPECT_TRUE(r.done());
  try {
    r.u32();
    FAIL() << "read past end";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Corruption);
  }
}

TEST(ShardKey, Validation) {
  EXPECT_THROW(ShardKey::params(""), Error);
  EXPECT_THROW(ShardKey::params(std::string(257, 'x')), Error);
  EXPECT_NO_THROW(ShardKey::params(std::string(256, 'x')));
}

TEST(ShardKey, OrderIsNamespaceThenName) {
  EXPECT_LT(ShardKey::params("z"), ShardKey::meta("a"));
  EXPECT_LT(ShardKey::params("a"), ShardKey::params("b"));
  EXPECT_LT(ShardKey::params("a"), ShardKey::params("ab"));
}

TEST(Partition, SinglePartitionIsZero) {
  StoreConfig cfg;
  cfg.partitions = 1;
  for (const char* n : {"w0", "w1", "b", "anything"}) {
    EXPECT_EQ(partition_of(ShardKey::params(n), cfg), 0u);
  }
}

TEST(Partition, MatchesReferenceFnv) {
  StoreConfig cfg;
  cfg.partitions = 4;
  EXPECT_EQ(fnv1a64(ShardKey::params("w0")), fnv_reference(0, "w0"));
  EXPECT_EQ(partition_of(ShardKey::params("w0"), cfg), fnv_reference(0, "w0") % 4);
  for (int i = 0; i < 200; ++i) {
    const std::string name = "key" + std::to_string(i);
    cfg.partitions = 1 + i % 13;
    cfg.hash_seed = static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ull;
    EXPECT_EQ(partition_of(ShardKey::meta(name), cfg),
              (fnv_reference(1, name) ^ cfg.hash_seed) % cfg.partitions);
    EXPECT_EQ(partition_of(ShardKey::meta(name), cfg), partition_of(ShardKey::meta(name), cfg));
  }
}

TEST(ShardValue, BitwiseEquality) {
  EXPECT_FALSE(ShardValue::vector({0.0}) == ShardValue::vector({-0.0}));
  EXPECT_TRUE(ShardValue::vector({std::nan("")}) == ShardValue::vector({std::nan("")}));
  EXPECT_FALSE(ShardValue::vector({1.0}) == ShardValue::bytes("x"));
}

TEST(ShardValue, NamespaceCheck) {
  EXPECT_FALSE(check_value_for_key(ShardKey::params("w"), ShardValue::vector({1.0})));
  EXPECT_TRUE(check_value_for_key(ShardKey::params("w"), ShardValue::bytes("x")));
  EXPECT_TRUE(check_value_for_key(ShardKey::meta("m"), ShardValue::vector({1.0})));
  EXPECT_TRUE(check_value_for_key(ShardKey::meta("m"), ShardValue::bytes(std::string(kMaxMetaBytes + 1, 'a'))));
}

TEST(Listing, RoundTrip) {
  Listing l;
  l.emplace_back(ShardKey::params("a"), ShardValue::vector({1.5, -2.25, 0.0}));
  l.emplace_back(ShardKey::params("b"), ShardValue::vector({}));
  l.emplace_back(ShardKey::meta("h"), ShardValue::bytes(std::string("\0\x01\xff", 3)));
  const auto bytes = encode_listing(l);
  EXPECT_EQ(decode_listing(bytes), l);
  EXPECT_EQ(encode_listing(decode_listing(bytes)), bytes);
  auto cut = bytes;
  cut.pop_back();
  EXPECT_THROW(decode_listing(cut), Error);
}
