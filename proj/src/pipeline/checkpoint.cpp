#include <cstring>
#include <sstream>

#include "nnynet/pipeline.hpp"

namespace nnynet::pipeline {

namespace {

constexpr char kMagic[8] = {'N', 'N', 'Y', 'C', 'K', 'P', 'T', '1'};

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    out_.append(s);
  }
  void tensor(const NamedTensor& t) {
    str(t.name);
    u32(static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t e : t.value.shape()) u64(e);
    raw(t.value.data().data(), 4 * t.value.size());
  }
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view b) : b_(b) {}
  void raw(void* p, std::size_t n) {
    if (b_.size() - pos_ < n) throw std::runtime_error("checkpoint: truncated");
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    if (b_.size() - pos_ < n) throw std::runtime_error("checkpoint: truncated");
    std::string s(b_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  NamedTensor tensor() {
    NamedTensor t;
    t.name = str();
    const std::uint32_t rank = u32();
    if (rank > 8) throw std::runtime_error("checkpoint: implausible rank for '" + t.name + "'");
    Shape s(rank);
    for (auto& e : s) e = u64();
    t.value = Tensor<float>(s, 0.0f);
    raw(t.value.data().data(), 4 * t.value.size());
    return t;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor<float>& Checkpoint::buffer(const std::string& name) const {
  for (const auto& b : buffers) {
    if (b.name == name) return b.value;
  }
  throw std::runtime_error("checkpoint: missing buffer '" + name + "'");
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.str(ck.config);
  w.u64(ck.step);
  w.str(ck.rng_state);
  w.u64(ck.parameters.size());
  for (const auto& p : ck.parameters) w.tensor(p);
  w.u64(ck.buffers.size());
  for (const auto& b : ck.buffers) w.tensor(b);
  return w.take();
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("checkpoint: bad magic");
  Checkpoint ck;
  ck.config = r.str();
  ck.step = r.u64();
  ck.rng_state = r.str();
  const std::uint64_t np = r.u64();
  for (std::uint64_t i = 0; i < np; ++i) ck.parameters.push_back(r.tensor());
  const std::uint64_t nb = r.u64();
  for (std::uint64_t i = 0; i < nb; ++i) ck.buffers.push_back(r.tensor());
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) { io::write_file(path, serialize_checkpoint(ck)); }
Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(io::read_file(path)); }

void require_config_match(const Checkpoint& ck, const PipelineConfig& expected) {
  const std::string want = to_json(expected).dump();
  if (ck.config != want) {
    throw std::runtime_error("checkpoint: config snapshot does not match the loading run");
  }
}

Checkpoint make_checkpoint(const SegmentationNetwork<float>& net, const PipelineConfig& cfg, std::uint64_t step,
                           const std::mt19937_64& rng, std::vector<NamedTensor> buffers) {
  Checkpoint ck;
  ck.config = to_json(cfg).dump();
  ck.step = step;
  std::ostringstream os;
  os << rng;
  ck.rng_state = os.str();
  for (const auto& [name, var] : net.parameters().entries()) ck.parameters.push_back({name, var.value()});
  ck.buffers = std::move(buffers);
  return ck;
}

void restore_parameters(SegmentationNetwork<float>& net, const Checkpoint& ck) {
  auto& entries = net.parameters().entries();
  if (entries.size() != ck.parameters.size()) {
    throw std::runtime_error("checkpoint: " + std::to_string(ck.parameters.size()) + " parameters for a network with " +
                             std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].first != ck.parameters[i].name) {
      throw std::runtime_error("checkpoint: parameter '" + ck.parameters[i].name + "' where '" + entries[i].first +
                               "' was expected");
    }
    Var<float> v = entries[i].second;
    v.assign(ck.parameters[i].value);
  }
}

}  // namespace nnynet::pipeline
