// Checkpoint layout (all integers little-endian):
//   "MTCN" | u32 version | u64 config hash | u64 iteration
//   u32 n + n bytes of JSON metadata {spec, config, rng_state}
//   u32 tensor count, then per tensor:
//     u32 name length | UTF-8 name | u32 rank | u32 extents[rank] | f32 data
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "mtcn/trainer.hpp"

namespace mtcn {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'C', 'N'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  void u32(std::uint32_t v) { bytes(v, 4); }
  void u64(std::uint64_t v) { bytes(v, 8); }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  void bytes(std::uint64_t v, int n) {
    char b[8];
    for (int i = 0; i < n; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os_.write(b, n);
  }
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  std::uint64_t u64() { return bytes(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t max = 1u << 26) {
    const std::uint32_t n = u32();
    if (n > max) fail("oversized string");
    std::string s(n, '\0');
    is_.read(s.data(), n);
    if (!is_) fail("truncated");
    return s;
  }
  [[noreturn]] void fail(const std::string& why) { throw DataError("checkpoint " + path_ + ": " + why); }

 private:
  std::uint64_t bytes(int n) {
    unsigned char b[8];
    is_.read(reinterpret_cast<char*>(b), n);
    if (!is_) fail("truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::istream& is_;
  std::string path_;
};

void write_tensor(Writer& w, const std::string& name, const TensorF& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (Index d : t.shape().dims()) w.u32(static_cast<std::uint32_t>(d));
  for (Index i = 0; i < t.size(); ++i) w.f32(t[i]);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  Writer w(os);
  os.write(kMagic, 4);
  w.u32(kVersion);
  w.u64(ck.config_hash);
  w.u64(static_cast<std::uint64_t>(ck.iteration));
  const nlohmann::json meta = {{"spec", ck.spec}, {"config", ck.config}, {"rng_state", ck.rng_state}};
  w.str(meta.dump());

  std::uint32_t count = 0;
  ck.params.for_each([&](const std::string&, const TensorF&, ParamKind) { ++count; });
  ck.velocity.for_each([&](const std::string&, const TensorF&, ParamKind k) { count += is_learnable(k); });
  w.u32(count);
  ck.params.for_each([&](const std::string& name, const TensorF& t, ParamKind) { write_tensor(w, name, t); });
  ck.velocity.for_each([&](const std::string& name, const TensorF& t, ParamKind k) {
    if (is_learnable(k)) write_tensor(w, "velocity/" + name, t);
  });
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  Reader r(is, path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) r.fail("bad magic");
  if (const auto v = r.u32(); v != kVersion) r.fail("unsupported version " + std::to_string(v));

  Checkpoint ck;
  ck.config_hash = r.u64();
  ck.iteration = static_cast<std::int64_t>(r.u64());
  try {
    const auto meta = nlohmann::json::parse(r.str());
    ck.spec = meta.at("spec").get<NetworkSpec>();
    ck.config = meta.at("config").get<TrainingConfig>();
    ck.rng_state = meta.at("rng_state").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad metadata: ") + e.what());
  }

  std::map<std::string, TensorF> tensors;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(4096);
    const std::uint32_t rank = r.u32();
    if (rank > 8) r.fail("tensor " + name + " has rank " + std::to_string(rank));
    std::vector<Index> dims(rank);
    for (auto& d : dims) d = r.u32();
    TensorF t{Shape(dims)};
    for (Index e = 0; e < t.size(); ++e) t[e] = r.f32();
    tensors.emplace(std::move(name), std::move(t));
  }

  Rng rng(0);
  ck.params = build<float>(ck.spec, rng);
  ck.velocity = zeros_like(ck.params);
  auto fill = [&](const std::string& name, TensorF& t) {
    auto it = tensors.find(name);
    if (it == tensors.end()) r.fail("missing tensor " + name);
    if (it->second.shape() != t.shape())
      r.fail("tensor " + name + " has shape " + it->second.shape().str() + ", expected " + t.shape().str());
    t = std::move(it->second);
  };
  ck.params.for_each([&](const std::string& name, TensorF& t, ParamKind) { fill(name, t); });
  ck.velocity.for_each([&](const std::string& name, TensorF& t, ParamKind k) {
    if (is_learnable(k)) fill("velocity/" + name, t);
  });
  if (ck.config_hash != config_hash(ck.spec, ck.config)) r.fail("config hash does not match metadata");
  return ck;
}

}  // namespace mtcn
