#include "tstream/wal.hpp"

#include "tstream/codec.hpp"
#include "tstream/crc32c.hpp"
#include "tstream/error.hpp"

namespace tstream {

std::vector<std::byte> encode_wal_record(const WalRecord& record) {
  ByteWriter w;
  w.u32(0);  // length, patched below
  w.u64(record.epoch_id);
  w.u32(static_cast<std::uint32_t>(record.txns.size()));
  for (const auto& txn : record.txns) {
    w.u64(txn.txn_id);
    w.u64(txn.ts);
    if (txn.ops.size() > kMaxOpsPerTxn) throw Error(ErrorCode::InvalidArgument, "too many ops");
    w.u16(static_cast<std::uint16_t>(txn.ops.size()));
    for (const auto& op : txn.ops) {
      if (op.kind == OpKind::Read) throw Error(ErrorCode::InvalidArgument, "reads are not logged");
      encode_key(w, op.key);
      w.u8(static_cast<std::uint8_t>(op.kind));
      encode_value(w, op.kind == OpKind::Apply ? Namespace::Params : op.key.ns(), op.payload);
    }
  }
  const std::size_t body_len = w.size() - 4;
  w.patch_u32(0, static_cast<std::uint32_t>(body_len));
  auto out = w.take();
  const auto crc = crc32c(std::span<const std::byte>(out).subspan(4, body_len));
  ByteWriter tail;
  tail.u32(crc);
  out.insert(out.end(), tail.buffer().begin(), tail.buffer().end());
  return out;
}

WalRecord decode_wal_body(std::span<const std::byte> body) {
  ByteReader r(body);
  WalRecord rec;
  rec.epoch_id = r.u64();
  const auto ntxn = r.u32();
  for (std::uint32_t t = 0; t < ntxn; ++t) {
    Transaction txn;
    txn.kind = TxnKind::Update;
    txn.txn_id = r.u64();
    txn.ts = r.u64();
    const auto nops = r.u16();
    txn.ops.reserve(nops);
    for (std::uint16_t i = 0; i < nops; ++i) {
      auto key = decode_key(r);
      auto kind = r.u8();
      if (kind > static_cast<std::uint8_t>(OpKind::Apply)) {
        throw Error(ErrorCode::Corruption, "bad op kind in WAL");
      }
      const auto op_kind = static_cast<OpKind>(kind);
      auto value = decode_value(r, op_kind == OpKind::Apply ? Namespace::Params : key.ns());
      txn.ops.push_back(StateOp{std::move(key), op_kind, std::move(value)});
    }
    rec.txns.push_back(std::move(txn));
  }
  if (!r.done()) throw Error(ErrorCode::Corruption, "trailing bytes in WAL body");
  return rec;
}

WalScan scan_wal(std::span<const std::byte> bytes) {
  WalScan scan;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 4) break;
    ByteReader hdr(bytes.subspan(pos, 4));
    const std::size_t len = hdr.u32();
    if (bytes.size() - pos - 4 < len + 4) break;
    auto body = bytes.subspan(pos + 4, len);
    ByteReader tail(bytes.subspan(pos + 4 + len, 4));
    if (tail.u32() != crc32c(body)) break;
    try {
      scan.records.push_back(decode_wal_body(body));
    } catch (const Error&) {
      break;
    }
    pos += 8 + len;
    scan.record_ends.push_back(pos);
  }
  scan.valid_bytes = pos;
  scan.clean = pos == bytes.size();
  return scan;
}

}  // namespace tstream
