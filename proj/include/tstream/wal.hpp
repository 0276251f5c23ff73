#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tstream/transaction.hpp"

namespace tstream {

// Logical redo record of one committed epoch: the committed update
// transactions in (ts, txn_id) order with their Write/Apply payloads.
struct WalRecord {
  std::uint64_t epoch_id = 0;
  std::vector<Transaction> txns;

  friend bool operator==(const WalRecord&, const WalRecord&) = default;
};

// Framed as [len u32 LE][body][crc32c(body) u32 LE].
std::vector<std::byte> encode_wal_record(const WalRecord& record);

// Body without framing; throws Error(Corruption) on malformed input.
WalRecord decode_wal_body(std::span<const std::byte> body);

struct WalScan {
  std::vector<WalRecord> records;
  std::vector<std::size_t> record_ends;  // byte offset just past each record
  std::size_t valid_bytes = 0;  // prefix made of complete, CRC-valid records
  bool clean = true;            // false if trailing bytes were not a valid record
};

// Reads framed records until the input ends or the first torn/invalid one.
WalScan scan_wal(std::span<const std::byte> bytes);

}  // namespace tstream
