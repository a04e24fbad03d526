#include "pbatch/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

namespace pbatch {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace {

constexpr char kModelMagic[4] = {'P', 'B', 'M', '1'};
constexpr char kQuantMagic[4] = {'P', 'B', 'Q', '1'};
// Guards allocations driven by untrusted header fields.
constexpr std::uint64_t kMaxDim = std::uint64_t{1} << 32;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, const char* what) : bytes_(bytes), what_(what) {}

  template <typename T>
  T get() {
    T v;
    get_bytes(&v, sizeof(T));
    return v;
  }
  void get_bytes(void* dst, std::size_t n) {
    if (n > bytes_.size() - pos_) {
      throw std::runtime_error(std::string(what_) + ": truncated file (needed " + std::to_string(n) +
                               " bytes at offset " + std::to_string(pos_) + ", " +
                               std::to_string(bytes_.size() - pos_) + " left)");
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t offset() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  const char* what_;
  std::size_t pos_ = 0;
};

void check_magic(Reader& r, const char (&magic)[4], const char* what) {
  char got[4];
  r.get_bytes(got, 4);
  if (std::memcmp(got, magic, 4) != 0) {
    throw std::runtime_error(std::string(what) + ": bad magic, expected '" + std::string(magic, 4) + "'");
  }
}

std::uint32_t narrow_dim(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument(std::string(what) + " exceeds 32 bits");
  }
  return static_cast<std::uint32_t>(v);
}

void put_tensor(Writer& w, const RealMatrix& m) {
  w.put<std::uint32_t>(2);
  w.put<std::uint64_t>(m.rows());
  w.put<std::uint64_t>(m.cols());
  w.put_bytes(m.values().data(), m.size() * sizeof(float));
}

void put_tensor(Writer& w, const RealVector& v) {
  w.put<std::uint32_t>(1);
  w.put<std::uint64_t>(v.size());
  w.put_bytes(v.data(), v.size() * sizeof(float));
}

std::vector<float> get_tensor_data(Reader& r, std::size_t expected_rank, std::vector<std::uint64_t>& dims) {
  const auto rank = r.get<std::uint32_t>();
  if (rank != expected_rank) {
    throw std::runtime_error("PBM1: tensor at offset " + std::to_string(r.offset()) + " has rank " +
                             std::to_string(rank) + ", expected " + std::to_string(expected_rank));
  }
  dims.resize(rank);
  std::uint64_t count = 1;
  for (auto& d : dims) {
    d = r.get<std::uint64_t>();
    if (d >= kMaxDim || (d != 0 && count > std::numeric_limits<std::uint64_t>::max() / d)) {
      throw std::runtime_error("PBM1: tensor dimension overflow (" + std::to_string(d) + ")");
    }
    count *= d;
  }
  if (count > r.remaining() / sizeof(float)) {
    throw std::runtime_error("PBM1: truncated file (tensor of " + std::to_string(count) +
                             " floats, " + std::to_string(r.remaining()) + " bytes left)");
  }
  std::vector<float> data(count);
  r.get_bytes(data.data(), count * sizeof(float));
  return data;
}

RealMatrix get_matrix(Reader& r) {
  std::vector<std::uint64_t> dims;
  auto data = get_tensor_data(r, 2, dims);
  return RealMatrix(dims[0], dims[1], std::move(data));
}

RealVector get_vector(Reader& r) {
  std::vector<std::uint64_t> dims;
  return get_tensor_data(r, 1, dims);
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model& model) {
  model.validate();
  Writer w;
  w.put_bytes(kModelMagic, 4);
  w.put<std::uint32_t>(narrow_dim(model.layers.size(), "layer count"));
  for (const auto& l : model.layers) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(l.kind));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(l.activation));
    w.put<std::uint32_t>(narrow_dim(l.in_dim, "in_dim"));
    w.put<std::uint32_t>(narrow_dim(l.out_dim, "out_dim"));
    put_tensor(w, l.weight);
    if (l.recurrent_kind()) put_tensor(w, l.recurrent);
    put_tensor(w, l.bias);
  }
  return w.take();
}

Model deserialize_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "PBM1");
  check_magic(r, kModelMagic, "PBM1");
  const auto count = r.get<std::uint32_t>();
  Model model;
  for (std::uint32_t i = 0; i < count; ++i) {
    LayerSpec l;
    const auto kind = r.get<std::uint8_t>();
    const auto act = r.get<std::uint8_t>();
    if (kind > 2) throw std::runtime_error("PBM1: layer " + std::to_string(i) + " has unknown kind " + std::to_string(kind));
    if (act > 3) {
      throw std::runtime_error("PBM1: layer " + std::to_string(i) + " has unknown activation " + std::to_string(act));
    }
    l.kind = static_cast<LayerKind>(kind);
    l.activation = static_cast<Activation>(act);
    l.in_dim = r.get<std::uint32_t>();
    l.out_dim = r.get<std::uint32_t>();
    l.weight = get_matrix(r);
    if (l.recurrent_kind()) l.recurrent = get_matrix(r);
    l.bias = get_vector(r);
    model.layers.push_back(std::move(l));
  }
  if (r.remaining() != 0) {
    throw std::runtime_error("PBM1: " + std::to_string(r.remaining()) + " trailing bytes after last layer");
  }
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("PBM1: inconsistent model: ") + e.what());
  }
  return model;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw std::runtime_error("error reading '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("error writing '" + path.string() + "'");
}

void save_model(const Model& model, const std::filesystem::path& path) {
  write_file(path, serialize_model(model));
}

Model load_model(const std::filesystem::path& path) {
  try {
    return deserialize_model(read_file(path));
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> serialize_quantized(const std::vector<QuantizedTensor>& tensors) {
  Writer w;
  w.put_bytes(kQuantMagic, 4);
  w.put<std::uint32_t>(narrow_dim(tensors.size(), "tensor count"));
  for (const auto& t : tensors) {
    const QuantizedLayer& q = t.bits;
    q.validate();
    w.put<std::uint32_t>(t.layer);
    w.put<std::uint8_t>(t.role);
    w.put<std::uint8_t>(q.degenerate ? 1 : 0);
    w.put<std::int32_t>(q.n_bits);
    w.put<std::int32_t>(q.frac_bits);
    w.put<std::uint32_t>(narrow_dim(q.rows, "rows"));
    w.put<std::uint32_t>(narrow_dim(q.cols, "cols"));
    w.put<std::uint32_t>(narrow_dim(q.bitlayers.size(), "bitlayer count"));
    for (std::size_t i = 0; i < q.bitlayers.size(); ++i) {
      w.put<std::int64_t>(q.scales[i]);
      const auto words = q.bitlayers[i].words();
      w.put_bytes(words.data(), words.size() * sizeof(std::uint64_t));
    }
  }
  return w.take();
}

std::vector<QuantizedTensor> deserialize_quantized(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "PBQ1");
  check_magic(r, kQuantMagic, "PBQ1");
  const auto count = r.get<std::uint32_t>();
  std::vector<QuantizedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    QuantizedTensor t;
    t.layer = r.get<std::uint32_t>();
    t.role = r.get<std::uint8_t>();
    QuantizedLayer& q = t.bits;
    q.degenerate = r.get<std::uint8_t>() != 0;
    q.n_bits = r.get<std::int32_t>();
    q.frac_bits = r.get<std::int32_t>();
    q.rows = r.get<std::uint32_t>();
    q.cols = r.get<std::uint32_t>();
    const auto layers = r.get<std::uint32_t>();
    if (q.n_bits < 1 || q.n_bits > 31 || layers != static_cast<std::uint32_t>(q.n_bits) + 1) {
      throw std::runtime_error("PBQ1: tensor " + std::to_string(i) + " has " + std::to_string(layers) +
                               " bitlayers for n = " + std::to_string(q.n_bits));
    }
    const std::uint64_t words = static_cast<std::uint64_t>(q.rows) * words_for(q.cols);
    for (std::uint32_t j = 0; j < layers; ++j) {
      q.scales.push_back(r.get<std::int64_t>());
      if (words > r.remaining() / sizeof(std::uint64_t)) {
        throw std::runtime_error("PBQ1: truncated file in tensor " + std::to_string(i));
      }
      std::vector<std::uint64_t> data(words);
      r.get_bytes(data.data(), words * sizeof(std::uint64_t));
      try {
        q.bitlayers.emplace_back(q.rows, q.cols, std::move(data));
      } catch (const std::invalid_argument& e) {
        throw std::runtime_error(std::string("PBQ1: ") + e.what());
      }
    }
    try {
      q.validate();
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("PBQ1: tensor ") + std::to_string(i) + ": " + e.what());
    }
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw std::runtime_error("PBQ1: trailing bytes after last tensor");
  return out;
}

void save_quantized(const std::vector<QuantizedTensor>& tensors, const std::filesystem::path& path) {
  write_file(path, serialize_quantized(tensors));
}

std::vector<QuantizedTensor> load_quantized(const std::filesystem::path& path) {
  return deserialize_quantized(read_file(path));
}

std::vector<QuantizedTensor> quantize_model(const Model& model, int n, int frac_bits,
                                            const ClipSearchConfig& clip) {
  model.validate();
  std::vector<QuantizedTensor> out;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    out.push_back({static_cast<std::uint32_t>(i), 0, decompose_bitlayers(l.weight, n, frac_bits, clip)});
    if (l.recurrent_kind()) {
      out.push_back({static_cast<std::uint32_t>(i), 1, decompose_bitlayers(l.recurrent, n, frac_bits, clip)});
    }
  }
  return out;
}

}  // namespace pbatch
