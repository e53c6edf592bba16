#include "karma/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "karma/error.hpp"

namespace karma::model {

namespace {

constexpr std::string_view kMagic = "KARMA1";

template <typename U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_string(std::string& out, std::string_view s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  std::string_view raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
    }
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.tensor;
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& [k, v] : ckpt.entries) {
    put_string(out, k);
    put_string(out, v);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.data()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.raw(kMagic.size()) != kMagic) throw DataError("not a KARMA1 checkpoint (bad magic)");
  Checkpoint ckpt;
  const auto entries = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < entries; ++i) {
    std::string k = r.get_string();
    ckpt.entries[k] = r.get_string();
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > kMaxRank) {
      throw DataError("checkpoint tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    }
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.get<std::uint64_t>());
      n *= d;
    }
    std::vector<double> data(n);
    for (double& v : data) v = std::bit_cast<double>(r.get<std::uint64_t>());
    ckpt.tensors.push_back({std::move(name), Tensor::from_data(std::move(shape), std::move(data))});
  }
  if (!r.done()) throw DataError("checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

Checkpoint to_checkpoint(const KarmaModel& model) {
  Checkpoint ckpt;
  ckpt.entries = model.config.to_entries();
  for (const auto& p : model.parameters()) ckpt.tensors.push_back({p.name, p.tensor.detach()});
  return ckpt;
}

KarmaModel model_from_checkpoint(const Checkpoint& ckpt) {
  std::map<std::string, std::string> model_entries;
  for (const auto& [k, v] : ckpt.entries)
    if (KarmaConfig::is_key(k)) model_entries[k] = v;
  const KarmaConfig config = KarmaConfig::from_entries(model_entries);
  Rng rng(config.seed);
  KarmaModel model = init_parameters(config, rng);
  for (const auto& p : model.parameters()) {
    const Tensor* stored = ckpt.find(p.name);
    if (stored == nullptr) throw DataError("checkpoint is missing parameter '" + p.name + "'");
    if (stored->shape() != p.tensor.shape()) {
      throw DataError("checkpoint parameter '" + p.name + "' has shape " + to_string(stored->shape()) +
                      ", expected " + to_string(p.tensor.shape()));
    }
    std::memcpy(p.tensor.mutable_data().data(), stored->data().data(), stored->size() * sizeof(double));
  }
  return model;
}

}  // namespace karma::model
