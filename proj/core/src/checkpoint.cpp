#include "fcac/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>

#include "fcac/binary_io.hpp"
#include "fcac/error.hpp"

namespace fcac {

namespace {

constexpr char kMagic[8] = {'F', 'C', 'A', 'C', 'C', 'K', 'P', 'T'};

void put_real(BinaryWriter& w, Real v) {
  if constexpr (sizeof(Real) == 8) {
    w.f64(v);
  } else {
    w.f32(v);
  }
}

Real get_real(BinaryReader& r) {
  if constexpr (sizeof(Real) == 8) {
    return r.f64();
  } else {
    return r.f32();
  }
}

void put_tensors(BinaryWriter& w, std::span<const Tensor> tensors) {
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.u32(static_cast<std::uint32_t>(t.numel()));
    for (auto v : t.data()) put_real(w, v);
  }
}

std::vector<std::vector<Real>> get_tensors(BinaryReader& r) {
  const auto count = r.u32();
  std::vector<std::vector<Real>> out(count);
  for (auto& t : out) {
    const auto n = r.u32();
    if (static_cast<std::size_t>(n) * sizeof(Real) > r.remaining()) throw FormatError("tensor overruns checkpoint");
    t.resize(n);
    for (auto& v : t) v = get_real(r);
  }
  return out;
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_checkpoint(const PrototypeStore& store,
                                            const EmbeddingExtractor* extractor,
                                            const PanParams* pan, CheckpointLayout* layout) {
  BinaryWriter w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kCheckpointVersion);
  w.u32(sizeof(Real));

  w.u8(extractor ? 1 : 0);
  if (extractor) {
    const auto& c = extractor->config();
    for (auto width : c.base_widths) w.u32(static_cast<std::uint32_t>(width));
    w.f64(c.width_scale);
    w.u32(static_cast<std::uint32_t>(c.blocks_per_stage));
    w.u32(static_cast<std::uint32_t>(c.embedding_dim));
    w.u32(static_cast<std::uint32_t>(c.num_classes));
    w.u32(static_cast<std::uint32_t>(c.mel_bins));
    w.u8(extractor->frozen() ? 1 : 0);
    put_tensors(w, extractor->parameters());
  }

  w.u8(pan ? 1 : 0);
  if (pan) {
    w.u32(static_cast<std::uint32_t>(pan->dim()));
    w.u8(pan->apgm.use_bias() ? 1 : 0);
    w.f64(pan->temperature);
    put_tensors(w, pan->parameters());
  }

  w.u32(static_cast<std::uint32_t>(store.dim()));
  w.u32(static_cast<std::uint32_t>(store.size()));
  w.u32(static_cast<std::uint32_t>(store.session_index()));
  std::size_t payload = 0;
  for (const auto& e : store.entries()) {
    w.u32(e.class_id);
    for (auto v : e.vector) put_real(w, v);
    payload += e.vector.size() * sizeof(Real);
  }
  const auto crc = crc32_of(w.bytes());
  w.u32(crc);
  if (layout) {
    layout->total_bytes = w.bytes().size();
    layout->bytes_per_real = sizeof(Real);
    layout->prototype_payload_bytes = payload;
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic) + 12) throw FormatError("checkpoint is truncated");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  const auto body = bytes.first(bytes.size() - 4);
  BinaryReader trailer(bytes.last(4));
  if (crc32_of(body) != trailer.u32()) throw FormatError("checkpoint is corrupted (CRC-32 mismatch)");

  BinaryReader r(body);
  for (std::size_t i = 0; i < sizeof(kMagic); ++i) r.u8();
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto real_bytes = r.u32();
  if (real_bytes != sizeof(Real)) {
    throw FormatError("checkpoint stores " + std::to_string(real_bytes) + "-byte reals, this build uses " +
                      std::to_string(sizeof(Real)));
  }

  Checkpoint ck;
  if (r.u8()) {
    EEConfig c;
    for (auto& width : c.base_widths) width = r.u32();
    c.width_scale = r.f64();
    c.blocks_per_stage = r.u32();
    c.embedding_dim = r.u32();
    c.num_classes = r.u32();
    c.mel_bins = r.u32();
    const bool frozen = r.u8() != 0;
    ck.extractor = EmbeddingExtractor::from_parameters(c, get_tensors(r), frozen);
  }
  if (r.u8()) {
    const auto dim = r.u32();
    const bool bias = r.u8() != 0;
    const auto temperature = static_cast<Real>(r.f64());
    auto tensors = get_tensors(r);
    const std::size_t per_module = bias ? 8 : 4;
    if (tensors.size() != 2 * per_module) throw FormatError("PAN tensor count mismatch");
    std::vector<std::vector<Real>> apgm(std::make_move_iterator(tensors.begin()),
                                        std::make_move_iterator(tensors.begin() + per_module));
    std::vector<std::vector<Real>> pqam(std::make_move_iterator(tensors.begin() + per_module),
                                        std::make_move_iterator(tensors.end()));
    PanParams pan{AttentionParams::from_values(dim, bias, std::move(apgm)),
                  AttentionParams::from_values(dim, bias, std::move(pqam)), temperature};
    pan.set_trainable(false);
    ck.pan = std::move(pan);
  }
  const auto dim = r.u32();
  const auto count = r.u32();
  PrototypeStore store(dim);
  store.set_session_index(r.u32());
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto id = r.u32();
    std::vector<Real> v(dim);
    for (auto& x : v) x = get_real(r);
    store.append(id, std::move(v));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes in checkpoint");
  ck.store = std::move(store);
  return ck;
}

CheckpointLayout save_checkpoint(const std::filesystem::path& path, const PrototypeStore& store,
                                 const EmbeddingExtractor* extractor, const PanParams* pan) {
  CheckpointLayout layout;
  const auto bytes = encode_checkpoint(store, extractor, pan, &layout);
  write_file_bytes(path, bytes);
  return layout;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace fcac
