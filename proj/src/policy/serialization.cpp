#include "mpolar/policy/serialization.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mpolar::policy {

namespace {

constexpr char kMagic[8] = {'M', 'P', 'L', 'R', 'P', 'O', 'L', '\0'};
constexpr std::uint8_t kNoFamily = 255;

static_assert(std::endian::native == std::endian::little, "little-endian host required");

std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  void doubles(std::span<const double> v) {
    put<std::uint64_t>(v.size());
    for (double d : v) put(d);
  }
  void blob(const std::vector<std::uint8_t>& b) {
    put<std::uint64_t>(b.size());
    out.insert(out.end(), b.begin(), b.end());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles() {
    const auto n = get<std::uint64_t>();
    need(n * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), p_ + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  std::vector<std::uint8_t> blob() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::vector<std::uint8_t> b(p_ + pos_, p_ + pos_ + n);
    pos_ += n;
    return b;
  }
  bool done() const { return pos_ == n_; }

 private:
  void need(std::size_t k) const {
    if (k > n_ - pos_) throw PolicyFormatError("policy artifact is truncated");
  }
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_policy(const Policy& policy) {
  Writer w;
  for (char c : kMagic) w.put(c);
  w.put<std::uint32_t>(kPolicyFormatVersion);
  w.put<std::uint8_t>(policy.is_multipolar() ? 1 : 0);
  w.put<std::uint8_t>(policy.family() ? static_cast<std::uint8_t>(*policy.family()) : kNoFamily);
  w.put<std::uint64_t>(policy.obs_dim());
  const auto& spec = policy.action_spec();
  w.put<std::uint8_t>(spec.discrete ? 1 : 0);
  w.put<std::uint64_t>(spec.dim);
  w.put(spec.low);
  w.put(spec.high);
  w.put<std::uint64_t>(policy.architecture().hidden.size());
  for (auto h : policy.architecture().hidden) w.put<std::uint64_t>(h);
  w.put<std::uint8_t>(policy.aux_mode() == AuxMode::Stateless ? 1 : 0);

  w.put<std::uint8_t>(policy.normalizes_obs() ? 1 : 0);
  const auto& mom = policy.obs_moments();
  w.put(mom.count());
  w.doubles(mom.mean());
  w.doubles(mom.m2());

  w.put<std::uint64_t>(policy.params().size());
  for (const auto& [name, p] : policy.params()) {
    w.str(name);
    w.put<std::uint8_t>(p.trainable ? 1 : 0);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) w.put<std::uint64_t>(d);
    w.doubles(p.value.values());
  }

  w.put<std::uint64_t>(policy.sources().k());
  for (const auto& s : policy.sources().sources()) w.blob(encode_policy(s->network()));

  w.put<std::uint64_t>(fnv1a(w.out.data(), w.out.size()));
  return std::move(w.out);
}

Policy decode_policy(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t)) {
    throw PolicyFormatError("policy artifact is truncated");
  }
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw PolicyFormatError("not a policy artifact (bad magic)");
  }
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + sizeof(kMagic), sizeof(version));
  if (version != kPolicyFormatVersion) {
    throw PolicyFormatError("policy artifact version " + std::to_string(version) +
                            " is not supported (expected " +
                            std::to_string(kPolicyFormatVersion) + ")");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  if (stored != fnv1a(bytes.data(), body)) {
    throw PolicyFormatError("policy artifact checksum mismatch");
  }

  Reader r(bytes.data(), body);
  for (std::size_t i = 0; i < sizeof(kMagic); ++i) r.get<char>();
  r.get<std::uint32_t>();
  const auto kind = r.get<std::uint8_t>() ? PolicyKind::Multipolar : PolicyKind::Mlp;
  const auto fam_raw = r.get<std::uint8_t>();
  std::optional<envs::Family> family;
  if (fam_raw != kNoFamily) {
    if (fam_raw > static_cast<std::uint8_t>(envs::Family::PendulumSwingUp)) {
      throw PolicyFormatError("policy artifact names an unknown environment family");
    }
    family = static_cast<envs::Family>(fam_raw);
  }
  const auto obs_dim = r.get<std::uint64_t>();
  ActionSpec spec;
  spec.discrete = r.get<std::uint8_t>() != 0;
  spec.dim = r.get<std::uint64_t>();
  spec.low = r.get<double>();
  spec.high = r.get<double>();
  Architecture arch;
  arch.hidden.resize(r.get<std::uint64_t>());
  for (auto& h : arch.hidden) h = r.get<std::uint64_t>();
  const auto aux = r.get<std::uint8_t>() ? AuxMode::Stateless : AuxMode::Network;

  const bool normalize = r.get<std::uint8_t>() != 0;
  const double count = r.get<double>();
  auto mean = r.doubles();
  auto m2 = r.doubles();

  num::ParamSet params;
  const auto n_params = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_params; ++i) {
    const auto name = r.str();
    const bool trainable = r.get<std::uint8_t>() != 0;
    num::Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    auto data = r.doubles();
    try {
      params.add(name, ValueGrid(shape, std::move(data)), trainable);
    } catch (const std::exception& e) {
      throw PolicyFormatError(std::string("policy artifact has a malformed parameter: ") + e.what());
    }
  }

  std::vector<std::shared_ptr<const SourcePolicy>> srcs;
  const auto n_src = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_src; ++i) {
    auto net = std::make_shared<const Policy>(decode_policy(r.blob()));
    srcs.push_back(std::make_shared<const SourcePolicy>(std::move(net)));
  }
  if (!r.done()) throw PolicyFormatError("policy artifact has trailing bytes");

  SourceSet sources = srcs.empty() ? SourceSet() : SourceSet(std::move(srcs));
  try {
    return Policy::assemble(kind, family, obs_dim, spec, std::move(arch), aux, std::move(sources),
                            std::move(params), normalize,
                            ppo::RunningMoments(count, std::move(mean), std::move(m2)));
  } catch (const std::invalid_argument& e) {
    throw PolicyFormatError(std::string("policy artifact is inconsistent: ") + e.what());
  }
}

void save_policy(const Policy& policy, const std::filesystem::path& path) {
  const auto bytes = encode_policy(policy);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw PolicyFormatError("cannot write " + tmp);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw PolicyFormatError("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Policy load_policy(const std::filesystem::path& path, std::optional<envs::Family> expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw PolicyFormatError("cannot open policy artifact " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  Policy p = decode_policy(bytes);
  if (expected && p.family() != expected) {
    throw PolicyMismatchError("policy artifact " + path.string() + " was trained on " +
                              (p.family() ? std::string(envs::family_name(*p.family())) : "unknown") +
                              ", expected " + std::string(envs::family_name(*expected)));
  }
  return p;
}

}  // namespace mpolar::policy
