#include "mmdt/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <vector>

namespace mmdt {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> buf) : buf_(std::move(buf)) {}
  void bytes(void* p, std::size_t n, const char* what) {
    if (n > buf_.size() - pos_)
      throw CorruptArchiveError(std::string("truncated archive while reading ") + what, pos_);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8(const char* what) {
    std::uint8_t v;
    bytes(&v, 1, what);
    return v;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    bytes(&v, 4, what);
    return v;
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return buf_.size(); }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

template <typename S>
void write_tensor(Writer& w, const std::string& name, const Tensor<S>& t, std::uint8_t dtype) {
  w.str(name);
  w.u8(dtype);
  if (t.rank() > 255) throw IoError("tensor rank too large for archive: " + name);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (Index d : t.shape()) {
    if (d < 0 || d > static_cast<Index>(UINT32_MAX)) throw IoError("dimension out of range: " + name);
    w.u32(static_cast<std::uint32_t>(d));
  }
  w.bytes(t.data(), sizeof(S) * static_cast<std::size_t>(t.size()));
}

template <typename S>
Tensor<S> read_payload(Reader& r, Shape shape) {
  const Index count = shape_size(shape);
  const std::size_t bytes = sizeof(S) * static_cast<std::size_t>(count);
  if (bytes > r.size() - r.pos()) throw CorruptArchiveError("truncated tensor payload", r.pos());
  Tensor<S> t(std::move(shape));
  r.bytes(t.data(), bytes, "tensor payload");
  return t;
}

}  // namespace

const std::string& Archive::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw StateError("archive has no metadata key '" + key + "'");
  return it->second;
}

void save_archive(const Archive& archive, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kArchiveMagic, sizeof kArchiveMagic);
  w.u32(kArchiveVersion);
  w.u32(static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& [name, stored] : archive.tensors) {
    if (const auto* f = std::get_if<Tensor<float>>(&stored))
      write_tensor(w, name, *f, 0);
    else
      write_tensor(w, name, std::get<Tensor<double>>(stored), 1);
  }
  std::ostringstream meta;
  for (const auto& [k, v] : archive.metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw IoError("metadata keys may not contain '=' or newlines: " + k);
    meta << k << '=' << v << '\n';
  }
  w.str(meta.str());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write archive " + path.string());
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Archive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read archive " + path.string());
  Reader r(std::vector<char>((std::istreambuf_iterator<char>(in)), {}));

  char magic[8];
  r.bytes(magic, 8, "magic");
  if (std::memcmp(magic, kArchiveMagic, 8) != 0) throw CorruptArchiveError("bad archive magic", 0);
  const std::size_t version_at = r.pos();
  if (const auto v = r.u32("version"); v != kArchiveVersion)
    throw CorruptArchiveError("unsupported archive version " + std::to_string(v), version_at);
  const std::uint32_t count = r.u32("entry count");

  Archive a;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t entry_at = r.pos();
    std::string name = r.str("tensor name");
    const std::uint8_t dtype = r.u8("dtype");
    const std::uint8_t rank = r.u8("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u32("dimension");
    if (a.tensors.count(name)) throw CorruptArchiveError("duplicate tensor name " + name, entry_at);
    if (dtype == 0)
      a.tensors.emplace(std::move(name), read_payload<float>(r, std::move(shape)));
    else if (dtype == 1)
      a.tensors.emplace(std::move(name), read_payload<double>(r, std::move(shape)));
    else
      throw CorruptArchiveError("unknown dtype code " + std::to_string(dtype), entry_at);
  }
  const std::size_t meta_at = r.pos();
  std::istringstream meta(r.str("metadata"));
  for (std::string line; std::getline(meta, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CorruptArchiveError("malformed metadata line", meta_at);
    a.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (r.pos() != r.size()) throw CorruptArchiveError("trailing bytes after metadata", r.pos());
  return a;
}

}  // namespace mmdt
