#include "scevo/weight_bundle.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <vector>

#include <zlib.h>

#include "scevo/error.hpp"

namespace scevo {
namespace {

struct TensorRef {
  std::string name;
  Eigen::MatrixXd* matrix = nullptr;
  Eigen::VectorXd* vector = nullptr;
  double* scalar = nullptr;
};

void add_linear(std::vector<TensorRef>& out, const std::string& prefix,
                Linear& l) {
  out.push_back({prefix + ".weight", &l.weight, nullptr, nullptr});
  out.push_back({prefix + ".bias", nullptr, &l.bias, nullptr});
}

void add_mlp(std::vector<TensorRef>& out, const std::string& prefix, Mlp& m) {
  add_linear(out, prefix + ".0", m.first);
  add_linear(out, prefix + ".1", m.second);
}

std::vector<TensorRef> tensors_of(WeightBundle& b, bool with_projection) {
  std::vector<TensorRef> t;
  t.push_back({"attention.wq", &b.attention.wq, nullptr, nullptr});
  t.push_back({"attention.wk", &b.attention.wk, nullptr, nullptr});
  t.push_back({"attention.wv", &b.attention.wv, nullptr, nullptr});
  t.push_back({"attention.lambda", nullptr, nullptr, &b.attention.lambda});
  add_mlp(t, "attention.pos_mlp", b.attention.pos_mlp);
  add_mlp(t, "attention.sc_mlp", b.attention.sc_mlp);
  t.push_back({"gru.wz", &b.gru.wz, nullptr, nullptr});
  t.push_back({"gru.uz", &b.gru.uz, nullptr, nullptr});
  t.push_back({"gru.wr", &b.gru.wr, nullptr, nullptr});
  t.push_back({"gru.ur", &b.gru.ur, nullptr, nullptr});
  t.push_back({"gru.wn", &b.gru.wn, nullptr, nullptr});
  t.push_back({"gru.un", &b.gru.un, nullptr, nullptr});
  t.push_back({"gru.bz", nullptr, &b.gru.bz, nullptr});
  t.push_back({"gru.br", nullptr, &b.gru.br, nullptr});
  t.push_back({"gru.bn", nullptr, &b.gru.bn, nullptr});
  t.push_back({"gru.bhn", nullptr, &b.gru.bhn, nullptr});
  add_mlp(t, "head.mlp", b.head.mlp);
  add_mlp(t, "frame_agg", b.frame_agg);
  if (with_projection) add_linear(t, "ctx_projection", b.ctx_projection);
  return t;
}

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<char>& bytes() { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<char>& bytes, std::size_t end, std::string path)
      : bytes_(bytes), end_(end), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  double f32() { return std::bit_cast<float>(u32()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) raise(ErrorCode::kParse, path_ + ": truncated weight bundle");
  }
  const std::vector<char>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string path_;
};

std::uint32_t crc_of(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

void save_weight_bundle(const std::string& path, const WeightBundle& bundle) {
  bundle.validate();
  WeightBundle copy = bundle;
  const auto tensors = tensors_of(copy, !bundle.ctx_projection.empty());
  Writer w;
  w.raw("SCEW");
  w.u32(WeightBundle::kVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.raw(t.name);
    if (t.matrix) {
      w.u32(2);
      w.u32(static_cast<std::uint32_t>(t.matrix->rows()));
      w.u32(static_cast<std::uint32_t>(t.matrix->cols()));
      for (Eigen::Index i = 0; i < t.matrix->rows(); ++i) {
        for (Eigen::Index j = 0; j < t.matrix->cols(); ++j) w.f32((*t.matrix)(i, j));
      }
    } else if (t.vector) {
      w.u32(1);
      w.u32(static_cast<std::uint32_t>(t.vector->size()));
      for (Eigen::Index i = 0; i < t.vector->size(); ++i) w.f32((*t.vector)[i]);
    } else {
      w.u32(0);
      w.f32(*t.scalar);
    }
  }
  w.u32(crc_of(w.bytes().data(), w.bytes().size()));
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::kIo, "cannot write weight bundle '" + path + "'");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) raise(ErrorCode::kIo, "failed writing weight bundle '" + path + "'");
}

WeightBundle load_weight_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::kIo, "cannot open weight bundle '" + path + "'");
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "SCEW", 4) != 0) {
    raise(ErrorCode::kParse, path + ": not a weight bundle (bad magic)");
  }
  const std::size_t body = bytes.size() - 4;
  Reader tail(bytes, bytes.size(), path);
  tail.raw(body);
  const std::uint32_t stored_crc = tail.u32();
  if (stored_crc != crc_of(bytes.data(), body)) {
    raise(ErrorCode::kChecksumMismatch, path + ": CRC-32 mismatch");
  }

  Reader r(bytes, body, path);
  r.raw(4);
  const std::uint32_t version = r.u32();
  if (version != WeightBundle::kVersion) {
    raise(ErrorCode::kParse,
          path + ": unsupported weight bundle version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();

  struct Tensor {
    std::vector<std::uint32_t> dims;
    std::vector<double> data;
  };
  std::map<std::string, Tensor> found;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.raw(r.u32());
    Tensor t;
    const std::uint32_t rank = r.u32();
    if (rank > 2) raise(ErrorCode::kParse, path + ": tensor '" + name + "' rank > 2");
    std::size_t total = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.dims.push_back(r.u32());
      total *= t.dims.back();
    }
    t.data.resize(total);
    for (auto& v : t.data) v = r.f32();
    found[name] = std::move(t);
  }
  if (!r.done()) raise(ErrorCode::kParse, path + ": trailing bytes before CRC");

  WeightBundle bundle;
  for (auto& ref : tensors_of(bundle, found.count("ctx_projection.weight") != 0)) {
    auto it = found.find(ref.name);
    if (it == found.end()) {
      raise(ErrorCode::kParse, path + ": missing tensor '" + ref.name + "'");
    }
    const Tensor& t = it->second;
    if (ref.matrix) {
      if (t.dims.size() != 2) raise(ErrorCode::kDimensionMismatch, path + ": '" + ref.name + "' must be rank 2");
      ref.matrix->resize(t.dims[0], t.dims[1]);
      std::size_t k = 0;
      for (std::uint32_t i = 0; i < t.dims[0]; ++i) {
        for (std::uint32_t j = 0; j < t.dims[1]; ++j) (*ref.matrix)(i, j) = t.data[k++];
      }
    } else if (ref.vector) {
      if (t.dims.size() != 1) raise(ErrorCode::kDimensionMismatch, path + ": '" + ref.name + "' must be rank 1");
      ref.vector->resize(t.dims[0]);
      for (std::uint32_t i = 0; i < t.dims[0]; ++i) (*ref.vector)[i] = t.data[i];
    } else {
      if (!t.dims.empty()) raise(ErrorCode::kDimensionMismatch, path + ": '" + ref.name + "' must be a scalar");
      *ref.scalar = t.data[0];
    }
  }
  bundle.validate();
  return bundle;
}

}  // namespace scevo
