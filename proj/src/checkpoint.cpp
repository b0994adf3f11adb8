#include "bvap/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace bvap {

namespace {

constexpr const char* kSquareSuffix = "@square_avg";
constexpr const char* kMomentumSuffix = "@momentum";

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

class Writer {
 public:
  explicit Writer(std::ofstream& os) : os_(os) {}
  template <typename T>
  void put(T v) {
    v = to_little(v);
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), n); }

  void entry(const std::string& name, const Shape& s, std::span<const double> values) {
    put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    put<std::uint8_t>(kDtypeF64);
    put<std::uint32_t>(4);
    for (const std::int64_t d : {s.n, s.c, s.h, s.w}) put<std::uint64_t>(static_cast<std::uint64_t>(d));
    for (const double v : values) put<double>(v);
  }

 private:
  std::ofstream& os_;
};

class Reader {
 public:
  Reader(std::ifstream& is, const std::filesystem::path& path) : is_(is), path_(path) {}
  template <typename T>
  T get() {
    T v;
    bytes(&v, sizeof(T));
    return to_little(v);
  }
  void bytes(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      throw std::runtime_error("checkpoint " + path_.string() + " is truncated");
  }

 private:
  std::ifstream& is_;
  const std::filesystem::path& path_;
};

bool ends_with(const std::string& s, const char* suffix) {
  const std::size_t n = std::strlen(suffix);
  return s.size() >= n && s.compare(s.size() - n, n, suffix) == 0;
}

}  // namespace

void save_checkpoint(std::span<const ParamStore* const> stores,
                     const std::filesystem::path& path) {
  std::unordered_set<std::string> names;
  std::uint64_t count = 0;
  for (const ParamStore* st : stores)
    for (const auto& e : st->entries()) {
      if (!names.insert(e.name).second)
        throw std::invalid_argument("duplicate parameter name '" + e.name +
                                    "' in checkpoint");
      count += 3;
    }

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    Writer w(os);
    w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint64_t>(count);
    for (const ParamStore* st : stores)
      for (const auto& e : st->entries()) {
        const Shape& s = e.tensor.shape();
        w.entry(e.name, s, e.tensor.values());
        w.entry(e.name + kSquareSuffix, s, e.slots.square_avg);
        w.entry(e.name + kMomentumSuffix, s, e.slots.momentum);
      }
    if (!os) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  const ParamStore* one[] = {&store};
  save_checkpoint(one, path);
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  Reader r(is, path);
  char magic[sizeof(kCheckpointMagic)];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint " + path.string() + " has a bad magic header");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint " + path.string() + " has unsupported version " +
                             std::to_string(version));
  const auto count = r.get<std::uint64_t>();

  ParamStore store;
  std::unordered_set<std::string> seen;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = r.get<std::uint32_t>();
    if (len > (1u << 16)) throw std::runtime_error("checkpoint entry name too long");
    std::string name(len, '\0');
    r.bytes(name.data(), len);
    if (!seen.insert(name).second)
      throw std::runtime_error("checkpoint has duplicate entry '" + name + "'");
    const auto dtype = r.get<std::uint8_t>();
    if (dtype != kDtypeF64)
      throw std::runtime_error("checkpoint entry '" + name + "' has unsupported dtype " +
                               std::to_string(dtype));
    const auto rank = r.get<std::uint32_t>();
    if (rank < 1 || rank > 4)
      throw std::runtime_error("checkpoint entry '" + name + "' has rank " +
                               std::to_string(rank));
    std::int64_t d[4] = {1, 1, 1, 1};
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto v = r.get<std::uint64_t>();
      if (v == 0 || v > (1ull << 32))
        throw std::runtime_error("checkpoint entry '" + name + "' has bad extent");
      d[4 - rank + i] = static_cast<std::int64_t>(v);
    }
    const Shape s{d[0], d[1], d[2], d[3]};
    std::vector<double> values(s.numel());
    for (double& v : values) v = r.get<double>();

    for (const char* suffix : {kSquareSuffix, kMomentumSuffix}) {
      if (!ends_with(name, suffix)) continue;
      const std::string base = name.substr(0, name.size() - std::strlen(suffix));
      if (!store.contains(base))
        throw std::runtime_error("checkpoint slot '" + name + "' precedes its parameter");
      auto& e = store.entry(base);
      if (e.tensor.shape() != s)
        throw std::runtime_error("checkpoint slot '" + name + "' shape mismatch");
      (suffix == kSquareSuffix ? e.slots.square_avg : e.slots.momentum) = std::move(values);
      goto next_entry;
    }
    store.add(name, Tensor::from(s, std::move(values), true));
  next_entry:;
  }
  return store;
}

}  // namespace bvap
