// SPDX-License-Identifier: Apache-2.0
#include "fod/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fod/errors.hpp"

namespace fod {

namespace {

constexpr char kMagic[4] = {'F', 'O', 'D', 'T'};

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : b_(bytes) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw FormatError(std::string("truncated ") + what, pos_);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(b_[pos_++]);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8, "payload");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(b_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::string_view b_;
  std::size_t pos_ = 0;
};

void put_body(std::string& out, const Tensor& t) {
  if (t.empty() || t.rank() == 0) throw FormatError("cannot encode an empty tensor", out.size());
  if (t.rank() > 255) throw FormatError("rank above 255", out.size());
  put_u8(out, static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) {
    if (e > UINT32_MAX) throw FormatError("extent does not fit in u32", out.size());
    put_u32(out, static_cast<std::uint32_t>(e));
  }
  for (double v : t.data()) put_f64(out, v);
}

Tensor get_body(Reader& r, std::uint8_t rank) {
  Shape shape(rank);
  std::size_t count = 1;
  for (auto& e : shape) {
    const std::size_t at = r.offset();
    e = r.u32("extents");
    if (e == 0) throw FormatError("zero extent", at);
    count *= e;
  }
  r.need(count * 8, "payload");
  std::vector<double> data(count);
  for (auto& v : data) v = r.f64();
  return Tensor(std::move(shape), std::move(data));
}

void get_header(Reader& r) {
  auto magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad magic", 0);
  const std::size_t at = r.offset();
  const auto version = r.u8("version");
  if (version != kTensorFileVersion) throw FormatError("unsupported version " + std::to_string(version), at);
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spill(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

}  // namespace

std::string encode_tensor(const Tensor& t) {
  std::string out(kMagic, 4);
  put_u8(out, kTensorFileVersion);
  put_body(out, t);
  return out;
}

Tensor decode_tensor(std::string_view bytes) {
  Reader r(bytes);
  get_header(r);
  const std::size_t at = r.offset();
  const auto rank = r.u8("rank");
  if (rank == 0) throw FormatError("expected a single tensor, found a named table", at);
  Tensor t = get_body(r, rank);
  if (!r.done()) throw FormatError("trailing bytes", r.offset());
  return t;
}

std::string encode_table(const NamedTensors& entries) {
  std::string out(kMagic, 4);
  put_u8(out, kTensorFileVersion);
  put_u8(out, 0);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_body(out, t);
  }
  return out;
}

NamedTensors decode_table(std::string_view bytes) {
  Reader r(bytes);
  get_header(r);
  std::size_t at = r.offset();
  if (r.u8("rank") != 0) throw FormatError("expected a named table, found a single tensor", at);
  const auto count = r.u32("entry count");
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u32("name length");
    std::string name(r.bytes(len, "name"));
    at = r.offset();
    const auto rank = r.u8("rank");
    if (rank == 0) throw FormatError("entry '" + name + "' has rank 0", at);
    out.emplace_back(std::move(name), get_body(r, rank));
  }
  if (!r.done()) throw FormatError("trailing bytes", r.offset());
  return out;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) { spill(path, encode_tensor(t)); }
Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(slurp(path)); }
void write_table(const std::filesystem::path& path, const NamedTensors& entries) { spill(path, encode_table(entries)); }
NamedTensors read_table(const std::filesystem::path& path) { return decode_table(slurp(path)); }

const Tensor* find_entry(const NamedTensors& t, std::string_view name) {
  for (const auto& [n, v] : t)
    if (n == name) return &v;
  return nullptr;
}

const Tensor& table_entry(const NamedTensors& t, std::string_view name) {
  if (const Tensor* p = find_entry(t, name)) return *p;
  throw FormatError("missing entry '" + std::string(name) + "'", 0);
}

NamedTensors bank_to_table(const ReferenceBank& bank) {
  NamedTensors t;
  t.emplace_back("kind", Tensor::scalar(static_cast<double>(bank.kind)));
  t.emplace_back("features", bank.features);
  if (bank.positions) {
    Tensor pos(Shape{bank.positions->size(), 2});
    for (std::size_t i = 0; i < bank.positions->size(); ++i) {
      pos.at(i, 0) = static_cast<double>((*bank.positions)[i].row);
      pos.at(i, 1) = static_cast<double>((*bank.positions)[i].col);
    }
    t.emplace_back("positions", std::move(pos));
  }
  return t;
}

ReferenceBank bank_from_table(const NamedTensors& t) {
  ReferenceBank b;
  const double code = table_entry(t, "kind")[0];
  if (code < 0 || code > static_cast<double>(BankKind::codebook) || code != static_cast<int>(code))
    throw FormatError("bad bank kind code", 0);
  b.kind = static_cast<BankKind>(static_cast<int>(code));
  b.features = table_entry(t, "features");
  if (b.features.rank() != 2) throw FormatError("bank features must be rank 2", 0);
  if (const Tensor* pos = find_entry(t, "positions")) {
    if (pos->rank() != 2 || pos->dim(1) != 2 || pos->dim(0) != b.features.dim(0))
      throw FormatError("bank positions must be [N_e, 2]", 0);
    std::vector<GridPos> p(pos->dim(0));
    for (std::size_t i = 0; i < p.size(); ++i)
      p[i] = {static_cast<std::size_t>(pos->at(i, 0)), static_cast<std::size_t>(pos->at(i, 1))};
    b.positions = std::move(p);
  }
  return b;
}

}  // namespace fod
