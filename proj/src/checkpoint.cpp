#include "segforge/checkpoint.hpp"

#include <cstring>
#include <map>

#include "segforge/volume_io.hpp"

namespace segforge {
namespace {

constexpr char kMagic[8] = {'S', 'E', 'G', 'C', 'K', 'P', 'T', '1'};

class Writer {
 public:
  template <typename U>
  void put(U v) {
    std::uint8_t b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    bytes.insert(bytes.end(), b, b + sizeof(U));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), c, c + n);
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  void put_tensor(const std::string& name, const Shape& shape, const std::vector<float>& data) {
    put_string(name);
    put<std::uint8_t>(0);
    put<std::uint32_t>(static_cast<std::uint32_t>(shape.rank()));
    for (auto d : shape.dims()) put<std::uint32_t>(static_cast<std::uint32_t>(d));
    put_bytes(data.data(), data.size() * sizeof(float));
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, b_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  StoredTensor get_tensor() {
    StoredTensor t;
    t.name = get_string();
    const auto dtype = get<std::uint8_t>();
    if (dtype > 1) throw FormatError("checkpoint: unknown dtype " + std::to_string(dtype), pos_ - 1);
    const auto rank = get<std::uint32_t>();
    if (rank < 1 || rank > 4) throw FormatError("checkpoint: bad rank for " + t.name, pos_ - 4);
    std::vector<std::int64_t> dims(rank);
    for (auto& d : dims) d = get<std::uint32_t>();
    t.shape = Shape(dims);
    const auto n = static_cast<std::size_t>(t.shape.numel());
    t.data.resize(n);
    if (dtype == 0) {
      need(n * sizeof(float));
      std::memcpy(t.data.data(), b_.data() + pos_, n * sizeof(float));
      pos_ += n * sizeof(float);
    } else {
      for (auto& x : t.data) x = static_cast<float>(get<double>());
    }
    return t;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError("checkpoint truncated", pos_);
  }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

std::vector<float> to_vec(std::span<const float> s) { return {s.begin(), s.end()}; }

}  // namespace

Checkpoint make_checkpoint(const SegModel<float>& model, const AdamState<float>& optimizer,
                           const RunConfig& config, int epoch, const BestRecord& best) {
  Checkpoint c;
  c.config = config;
  c.epoch = epoch;
  c.best = best;
  const auto set = model.parameters();
  for (const auto& p : set.params) c.tensors.push_back({p.name, p.tensor.shape(), to_vec(p.tensor.data())});
  for (const auto& b : set.buffers) c.tensors.push_back({b.name, b.tensor.shape(), to_vec(b.tensor.data())});
  c.optimizer = optimizer;
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.put_bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  const nlohmann::json meta{{"config", to_json(ckpt.config)},
                            {"epoch", ckpt.epoch},
                            {"best", {{"epoch", ckpt.best.epoch}, {"dice", ckpt.best.dice}}}};
  w.put_string(meta.dump());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) w.put_tensor(t.name, t.shape, t.data);

  w.put<std::uint64_t>(static_cast<std::uint64_t>(ckpt.optimizer.step));
  const auto& m = ckpt.optimizer.m;
  const auto& v = ckpt.optimizer.v;
  // Moments line up with the leading parameter entries.
  if (m.size() > ckpt.tensors.size()) throw ContractError("checkpoint: more moments than tensors");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(2 * m.size()));
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& t = ckpt.tensors[i];
    if (static_cast<std::int64_t>(m[i].size()) != t.shape.numel()) {
      throw ContractError("checkpoint: moment size mismatch for " + t.name);
    }
    w.put_tensor("m/" + t.name, t.shape, m[i]);
    w.put_tensor("v/" + t.name, t.shape, v[i]);
  }
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.need(sizeof kMagic);
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw FormatError("not a checkpoint (bad magic)", 0);
  for (std::size_t i = 0; i < sizeof kMagic; ++i) r.get<std::uint8_t>();
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 8);
  }

  Checkpoint c;
  const auto meta_at = r.pos();
  nlohmann::json meta = nlohmann::json::parse(r.get_string(), nullptr, false);
  if (meta.is_discarded() || !meta.is_object()) throw FormatError("checkpoint metadata is not JSON", meta_at);
  try {
    c.config = run_config_from_json(meta.at("config"));
    c.epoch = meta.at("epoch").get<int>();
    c.best.epoch = meta.at("best").at("epoch").get<int>();
    c.best.dice = meta.at("best").at("dice").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what(), meta_at);
  }

  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) c.tensors.push_back(r.get_tensor());

  c.optimizer.step = static_cast<std::int64_t>(r.get<std::uint64_t>());
  const auto moments = r.get<std::uint32_t>();
  if (moments % 2 != 0 || moments / 2 > c.tensors.size()) {
    throw FormatError("checkpoint: bad optimizer moment count", r.pos() - 4);
  }
  for (std::uint32_t i = 0; i < moments / 2; ++i) {
    auto m = r.get_tensor();
    auto v = r.get_tensor();
    const auto& name = c.tensors[i].name;
    if (m.name != "m/" + name || v.name != "v/" + name) {
      throw FormatError("checkpoint: optimizer moments out of order at " + m.name, r.pos());
    }
    c.optimizer.m.push_back(std::move(m.data));
    c.optimizer.v.push_back(std::move(v.data));
  }
  if (!r.done()) throw FormatError("checkpoint has trailing bytes", r.pos());
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

void restore_model(const Checkpoint& ckpt, SegModel<float>& model) {
  std::map<std::string, const StoredTensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t;
  auto copy_into = [&](const std::string& name, BasicTensor<float> dst) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing tensor " + name, 0);
    if (!(it->second->shape == dst.shape())) {
      throw ShapeError("checkpoint tensor " + name + " has shape " + it->second->shape.str() +
                       ", model expects " + dst.shape().str());
    }
    std::copy(it->second->data.begin(), it->second->data.end(), dst.data().begin());
  };
  const auto set = model.parameters();
  for (const auto& p : set.params) copy_into(p.name, p.tensor);
  for (const auto& b : set.buffers) copy_into(b.name, b.tensor);
}

}  // namespace segforge
