#include "fcac/embedding.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fcac/binary_io.hpp"
#include "fcac/error.hpp"

namespace fcac {

void EmbeddingTable::add(Embedding e) {
  if (e.vector.size() != dim_) {
    throw FormatError("embedding '" + e.clip_id + "' has " + std::to_string(e.vector.size()) +
                      " values, expected " + std::to_string(dim_));
  }
  for (auto v : e.vector) {
    if (!std::isfinite(v)) throw FormatError("embedding '" + e.clip_id + "' is not finite");
  }
  if (!index_.emplace(e.clip_id, records_.size()).second) {
    throw FormatError("duplicate embedding id '" + e.clip_id + "'");
  }
  records_.push_back(std::move(e));
}

const Embedding& EmbeddingTable::at(const std::string& clip_id) const {
  const auto it = index_.find(clip_id);
  if (it == index_.end()) throw NotFound("no embedding for clip '" + clip_id + "'");
  return records_[it->second];
}

namespace {

void check_dim(std::span<const Embedding> records, std::size_t dim) {
  if (dim == 0) throw InvalidInput("embedding dimension must be positive");
  for (const auto& e : records) {
    if (e.vector.size() != dim) throw InvalidInput("embedding '" + e.clip_id + "' has wrong length");
  }
}

std::string format_real(Real v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(std::string_view text, const std::string& context) {
  T value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw FormatError("bad number '" + std::string(text) + "' " + context);
  }
  return value;
}

EmbeddingTable load_text(const std::filesystem::path& path) {
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  if (line.rfind("DIM ", 0) != 0) throw FormatError("missing DIM header in " + path.string());
  const auto dim = parse_number<std::size_t>(std::string_view(line).substr(4), "in DIM header");
  if (dim == 0) throw FormatError("DIM must be positive in " + path.string());
  EmbeddingTable table(dim);
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = "at " + path.string() + ":" + std::to_string(line_no);
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw FormatError("expected three tab-separated fields " + where);
    Embedding e;
    e.clip_id = line.substr(0, t1);
    const std::string_view cls(line.data() + t1 + 1, t2 - t1 - 1);
    if (cls != "-") e.class_id = parse_number<ClassId>(cls, where);
    std::string_view rest(line.data() + t2 + 1, line.size() - t2 - 1);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      e.vector.push_back(parse_number<Real>(rest.substr(0, comma), where));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    table.add(std::move(e));
  }
  return table;
}

EmbeddingTable load_binary(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  BinaryReader r(bytes);
  const auto count = r.u32();
  const auto dim = r.u32();
  if (dim == 0) throw FormatError("zero embedding dimension in " + name);
  EmbeddingTable table(dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    Embedding e;
    e.clip_id = r.str();
    const auto cls = r.i32();
    if (cls >= 0) e.class_id = static_cast<ClassId>(cls);
    e.vector.resize(dim);
    for (auto& v : e.vector) v = static_cast<Real>(r.f32());
    table.add(std::move(e));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes in " + name);
  return table;
}

}  // namespace

void save_embeddings_text(const std::filesystem::path& path, std::span<const Embedding> records,
                          std::size_t dim) {
  check_dim(records, dim);
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os << "DIM " << dim << '\n';
  for (const auto& e : records) {
    os << e.clip_id << '\t';
    if (e.class_id) {
      os << *e.class_id;
    } else {
      os << '-';
    }
    os << '\t';
    for (std::size_t i = 0; i < e.vector.size(); ++i) {
      if (i) os << ',';
      os << format_real(e.vector[i]);
    }
    os << '\n';
  }
  if (!os) throw Error("write failed for '" + path.string() + "'");
}

void save_embeddings_binary(const std::filesystem::path& path,
                            std::span<const Embedding> records, std::size_t dim) {
  check_dim(records, dim);
  BinaryWriter w;
  w.u32(static_cast<std::uint32_t>(records.size()));
  w.u32(static_cast<std::uint32_t>(dim));
  for (const auto& e : records) {
    w.str(e.clip_id);
    w.i32(e.class_id ? static_cast<std::int32_t>(*e.class_id) : -1);
    for (auto v : e.vector) w.f32(static_cast<float>(v));
  }
  write_file_bytes(path, w.bytes());
}

EmbeddingTable load_precomputed(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  static constexpr char kTextMagic[] = {'D', 'I', 'M', ' '};
  if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, kTextMagic)) {
    return load_text(path);
  }
  return load_binary(bytes, path.string());
}

}  // namespace fcac
