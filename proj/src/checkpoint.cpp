#include "deva/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <type_traits>

#include "deva/errors.hpp"

namespace deva {

namespace {

constexpr char kMagic[8] = {'D', 'E', 'V', 'A', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw DataError("cannot write checkpoint " + path.string());
  }
  template <typename V>
  void pod(V v) {
    static_assert(std::is_trivially_copyable_v<V>);
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void string(const std::string& s, bool wide) {
    if (wide) {
      pod<std::uint64_t>(s.size());
    } else {
      pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    }
    bytes(s.data(), s.size());
  }
  void finish() {
    out_.flush();
    if (!out_) throw DataError("write failed for checkpoint " + path_.string());
  }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  void need(std::size_t n, const std::string& what) {
    if (buf_.size() - pos_ < n)
      throw DataError(path_.string() + ": truncated while reading " + what);
  }
  template <typename V>
  V pod(const std::string& what) {
    need(sizeof(V), what);
    V v;
    std::memcpy(&v, buf_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string string(bool wide, const std::string& what) {
    const std::uint64_t n = wide ? pod<std::uint64_t>(what) : pod<std::uint32_t>(what);
    need(n, what);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  const char* take(std::size_t n, const std::string& what) {
    need(n, what);
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == buf_.size(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

nlohmann::json parse_json(const std::string& text, const Reader& r, const char* what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(r.path().string() + ": corrupt " + what + ": " + e.what());
  }
}

template <typename T>
Precision precision_of() {
  return std::is_same_v<T, float> ? Precision::f32 : Precision::f64;
}

}  // namespace

const StoredTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  Writer w(path);
  w.bytes(kMagic, sizeof kMagic);
  w.pod<std::uint32_t>(Checkpoint::kVersion);
  w.string(ckpt.config.dump(), true);
  w.string(ckpt.meta.dump(), true);
  w.pod<std::uint64_t>(ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    if (shape_numel(t.shape) != t.values.size())
      throw DataError("checkpoint tensor " + t.name + " has " + std::to_string(t.values.size()) +
                      " values for shape " + shape_str(t.shape));
    w.string(t.name, false);
    w.pod<std::uint8_t>(t.dtype == Precision::f32 ? 0 : 1);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.pod<std::uint64_t>(d);
    if (t.dtype == Precision::f32) {
      w.pod<std::uint64_t>(t.values.size() * sizeof(float));
      for (double v : t.values) w.pod<float>(static_cast<float>(v));
    } else {
      w.pod<std::uint64_t>(t.values.size() * sizeof(double));
      w.bytes(t.values.data(), t.values.size() * sizeof(double));
    }
  }
  w.finish();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  const char* magic = r.take(sizeof kMagic, "header");
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw DataError(path.string() + ": not a checkpoint file");
  const auto version = r.pod<std::uint32_t>("header");
  if (version != Checkpoint::kVersion)
    throw DataError(path.string() + ": checkpoint version " + std::to_string(version) +
                    " is not supported (expected " + std::to_string(Checkpoint::kVersion) + ")");
  Checkpoint ckpt;
  ckpt.config = parse_json(r.string(true, "config"), r, "config");
  ckpt.meta = parse_json(r.string(true, "metadata"), r, "metadata");
  const auto count = r.pod<std::uint64_t>("tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = r.string(false, "tensor #" + std::to_string(i) + " name");
    const std::string what = "tensor '" + t.name + "'";
    const auto dtype = r.pod<std::uint8_t>(what);
    if (dtype > 1) throw DataError(path.string() + ": " + what + " has unknown dtype");
    t.dtype = dtype == 0 ? Precision::f32 : Precision::f64;
    const auto rank = r.pod<std::uint32_t>(what);
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.pod<std::uint64_t>(what));
    const auto bytes = r.pod<std::uint64_t>(what);
    const std::size_t width = t.dtype == Precision::f32 ? sizeof(float) : sizeof(double);
    const std::size_t n = shape_numel(t.shape);
    if (bytes != n * width)
      throw DataError(path.string() + ": " + what + " payload is " + std::to_string(bytes) +
                      " bytes, shape " + shape_str(t.shape) + " needs " + std::to_string(n * width));
    const char* p = r.take(bytes, what);
    t.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      if (t.dtype == Precision::f32) {
        float f;
        std::memcpy(&f, p + k * width, width);
        t.values[k] = f;
      } else {
        std::memcpy(&t.values[k], p + k * width, width);
      }
    }
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw DataError(path.string() + ": trailing bytes after the last tensor");
  return ckpt;
}

template <typename T>
StoredTensor store_tensor(const std::string& name, const Tensor<T>& t) {
  return StoredTensor{name, t.shape(), precision_of<T>(),
                      std::vector<double>(t.data().begin(), t.data().end())};
}

template <typename T>
void store_parameters(const ParameterList<T>& params, const std::string& prefix,
                      std::vector<StoredTensor>& out) {
  for (const auto& p : params) out.push_back(store_tensor(prefix + p.name, p.tensor));
}

template <typename T>
void restore_parameters(const Checkpoint& ckpt, const std::string& prefix, ParameterList<T>& params) {
  for (auto& p : params) {
    const auto name = prefix + p.name;
    const auto* s = ckpt.find(name);
    if (!s) throw DataError("checkpoint is missing tensor " + name);
    if (s->dtype != precision_of<T>())
      throw DataError("checkpoint tensor " + name + " is " + to_string(s->dtype) + ", model runs " +
                      to_string(precision_of<T>()));
    if (s->shape != p.tensor.shape())
      throw DataError("checkpoint tensor " + name + " has shape " + shape_str(s->shape) +
                      ", model expects " + shape_str(p.tensor.shape()));
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(s->values[i]);
  }
}

template StoredTensor store_tensor(const std::string&, const Tensor<float>&);
template StoredTensor store_tensor(const std::string&, const Tensor<double>&);
template void store_parameters(const ParameterList<float>&, const std::string&, std::vector<StoredTensor>&);
template void store_parameters(const ParameterList<double>&, const std::string&, std::vector<StoredTensor>&);
template void restore_parameters(const Checkpoint&, const std::string&, ParameterList<float>&);
template void restore_parameters(const Checkpoint&, const std::string&, ParameterList<double>&);

}  // namespace deva
