#pragma once

// Minimal ONNX support: a protobuf wire-format reader for the subset of
// ModelProto needed to execute a convolutional encoder-decoder, a reference
// interpreter for the corresponding operators, and a writer used to build
// model fixtures.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <limits>
#include <unordered_map>
#include <variant>
#include <vector>

#include "anomex/error.hpp"

namespace anomex::onnx {

enum class DataType : int { undefined = 0, float32 = 1, uint8 = 2, int8 = 3, int32 = 6, int64 = 7, float64 = 11 };

/// Dense tensor; values are held as doubles regardless of the declared type
/// (integers used by shape arithmetic stay exact below 2^53).
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;
  DataType type = DataType::float32;

  std::size_t numel() const {
    return static_cast<std::size_t>(
        std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>()));
  }
};

struct Attribute {
  std::string name;
  std::optional<double> f;
  std::optional<std::int64_t> i;
  std::optional<std::string> s;
  std::optional<Tensor> t;
  std::vector<double> floats;
  std::vector<std::int64_t> ints;
};

struct Node {
  std::string op_type;
  std::string name;
  std::string domain;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::vector<Attribute> attributes;

  const Attribute* attr(std::string_view key) const {
    for (const auto& a : attributes) {
      if (a.name == key) return &a;
    }
    return nullptr;
  }
  std::int64_t attr_int(std::string_view key, std::int64_t fallback) const {
    const Attribute* a = attr(key);
    return a && a->i ? *a->i : fallback;
  }
  double attr_float(std::string_view key, double fallback) const {
    const Attribute* a = attr(key);
    return a && a->f ? *a->f : fallback;
  }
  std::vector<std::int64_t> attr_ints(std::string_view key, std::vector<std::int64_t> fallback = {}) const {
    const Attribute* a = attr(key);
    return a && !a->ints.empty() ? a->ints : fallback;
  }
  std::string attr_string(std::string_view key, std::string fallback) const {
    const Attribute* a = attr(key);
    return a && a->s ? *a->s : fallback;
  }
};

/// Declared tensor interface; a dimension of -1 is symbolic or unknown.
struct ValueInfo {
  std::string name;
  DataType elem_type = DataType::undefined;
  std::vector<std::int64_t> dims;
  bool has_shape = false;
};

struct Graph {
  std::string name;
  std::vector<Node> nodes;
  std::vector<std::pair<std::string, Tensor>> initializers;
  std::vector<ValueInfo> inputs;
  std::vector<ValueInfo> outputs;
};

struct Model {
  std::int64_t ir_version = 0;
  std::int64_t opset = 0;
  std::string producer;
  Graph graph;
};

// ---------------------------------------------------------------------------
// Wire-format reader

namespace wire {

enum Type : int { varint = 0, fixed64 = 1, bytes = 2, fixed32 = 5 };

class Reader {
 public:
  explicit Reader(std::string_view buf) : buf_(buf) {}

  bool done() const noexcept { return pos_ >= buf_.size(); }

  std::uint64_t read_varint() {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      if (pos_ >= buf_.size()) throw ModelError("ONNX: truncated varint");
      const auto b = static_cast<std::uint8_t>(buf_[pos_++]);
      v |= static_cast<std::uint64_t>(b & 0x7f) << shift;
      if (!(b & 0x80)) return v;
    }
    throw ModelError("ONNX: malformed varint");
  }

  std::pair<int, int> read_key() {
    const std::uint64_t key = read_varint();
    return {static_cast<int>(key >> 3), static_cast<int>(key & 7)};
  }

  std::string_view read_bytes() {
    const std::uint64_t len = read_varint();
    if (len > buf_.size() - pos_) throw ModelError("ONNX: truncated length-delimited field");
    std::string_view out = buf_.substr(pos_, len);
    pos_ += len;
    return out;
  }

  std::uint32_t read_fixed32() {
    if (buf_.size() - pos_ < 4) throw ModelError("ONNX: truncated fixed32");
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_ + b])) << (8 * b);
    pos_ += 4;
    return v;
  }

  std::uint64_t read_fixed64() {
    if (buf_.size() - pos_ < 8) throw ModelError("ONNX: truncated fixed64");
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[pos_ + b])) << (8 * b);
    pos_ += 8;
    return v;
  }

  void skip(int type) {
    switch (type) {
      case varint: read_varint(); break;
      case fixed64: read_fixed64(); break;
      case bytes: read_bytes(); break;
      case fixed32: read_fixed32(); break;
      default: throw ModelError("ONNX: unsupported wire type " + std::to_string(type));
    }
  }

 private:
  std::string_view buf_;
  std::size_t pos_ = 0;
};

// Repeated scalar fields may arrive packed (wire type 2) or one per key.
inline void read_int64s(Reader& r, int type, std::vector<std::int64_t>& out) {
  if (type == bytes) {
    Reader packed(r.read_bytes());
    while (!packed.done()) out.push_back(static_cast<std::int64_t>(packed.read_varint()));
  } else {
    out.push_back(static_cast<std::int64_t>(r.read_varint()));
  }
}

inline void read_floats(Reader& r, int type, std::vector<double>& out) {
  if (type == bytes) {
    Reader packed(r.read_bytes());
    while (!packed.done()) out.push_back(std::bit_cast<float>(packed.read_fixed32()));
  } else {
    out.push_back(std::bit_cast<float>(r.read_fixed32()));
  }
}

inline void read_doubles(Reader& r, int type, std::vector<double>& out) {
  if (type == bytes) {
    Reader packed(r.read_bytes());
    while (!packed.done()) out.push_back(std::bit_cast<double>(packed.read_fixed64()));
  } else {
    out.push_back(std::bit_cast<double>(r.read_fixed64()));
  }
}

}  // namespace wire

namespace detail {

inline Tensor parse_tensor(std::string_view buf, std::string* name_out = nullptr) {
  wire::Reader r(buf);
  Tensor t;
  std::string raw;
  std::vector<double> values;
  std::vector<std::int64_t> ints;
  bool has_raw = false;
  while (!r.done()) {
    auto [field, type] = r.read_key();
    switch (field) {
      case 1: wire::read_int64s(r, type, t.shape); break;
      case 2: t.type = static_cast<DataType>(r.read_varint()); break;
      case 4: wire::read_floats(r, type, values); break;
      case 5:  // int32_data (also carries uint8/int8)
      case 7: wire::read_int64s(r, type, ints); break;
      case 8: {
        auto s = r.read_bytes();
        if (name_out) *name_out = std::string(s);
        break;
      }
      case 9: raw = std::string(r.read_bytes()); has_raw = true; break;
      case 10: wire::read_doubles(r, type, values); break;
      case 14:
        if (r.read_varint() != 0) throw ModelError("ONNX: external tensor data is not supported");
        break;
      default: r.skip(type);
    }
  }
  const std::size_t n = t.numel();
  if (has_raw) {
    auto take = [&](std::size_t width, auto convert) {
      if (raw.size() != n * width) throw ModelError("ONNX: raw_data size does not match tensor shape");
      t.data.resize(n);
      for (std::size_t i = 0; i < n; ++i) t.data[i] = convert(raw.data() + i * width);
    };
    auto le = [](const char* p, int bytes) {
      std::uint64_t v = 0;
      for (int b = 0; b < bytes; ++b) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(p[b])) << (8 * b);
      return v;
    };
    switch (t.type) {
      case DataType::float32:
        take(4, [&](const char* p) { return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(le(p, 4)))); });
        break;
      case DataType::float64:
        take(8, [&](const char* p) { return std::bit_cast<double>(le(p, 8)); });
        break;
      case DataType::int64:
        take(8, [&](const char* p) { return static_cast<double>(static_cast<std::int64_t>(le(p, 8))); });
        break;
      case DataType::int32:
        take(4, [&](const char* p) { return static_cast<double>(static_cast<std::int32_t>(le(p, 4))); });
        break;
      case DataType::uint8:
        take(1, [&](const char* p) { return static_cast<double>(static_cast<std::uint8_t>(*p)); });
        break;
      case DataType::int8:
        take(1, [&](const char* p) { return static_cast<double>(static_cast<std::int8_t>(*p)); });
        break;
      default: throw ModelError("ONNX: unsupported tensor data type " + std::to_string(static_cast<int>(t.type)));
    }
  } else if (!values.empty()) {
    t.data = std::move(values);
  } else {
    t.data.reserve(ints.size());
    for (auto v : ints) {
      // int32_data stores int32 values as (sign-extended) varints
      t.data.push_back(t.type == DataType::int32 ? static_cast<double>(static_cast<std::int32_t>(v))
                                                 : static_cast<double>(v));
    }
  }
  if (t.data.size() != n) {
    throw ModelError("ONNX: tensor has " + std::to_string(t.data.size()) + " values for " + std::to_string(n) +
                     " elements");
  }
  return t;
}

inline Attribute parse_attribute(std::string_view buf) {
  wire::Reader r(buf);
  Attribute a;
  while (!r.done()) {
    auto [field, type] = r.read_key();
    switch (field) {
      case 1: a.name = std::string(r.read_bytes()); break;
      case 2: a.f = std::bit_cast<float>(r.read_fixed32()); break;
      case 3: a.i = static_cast<std::int64_t>(r.read_varint()); break;
      case 4: a.s = std::string(r.read_bytes()); break;
      case 5: a.t = parse_tensor(r.read_bytes()); break;
      case 7: wire::read_floats(r, type, a.floats); break;
      case 8: wire::read_int64s(r, type, a.ints); break;
      default: r.skip(type);
    }
  }
  return a;
}

inline Node parse_node(std::string_view buf) {
  wire::Reader r(buf);
  Node n;
  while (!r.done()) {
    auto [field, type] = r.read_key();
    switch (field) {
      case 1: n.inputs.emplace_back(r.read_bytes()); break;
      case 2: n.outputs.emplace_back(r.read_bytes()); break;
      case 3: n.name = std::string(r.read_bytes()); break;
      case 4: n.op_type = std::string(r.read_bytes()); break;
      case 5: n.attributes.push_back(parse_attribute(r.read_bytes())); break;
      case 7: n.domain = std::string(r.read_bytes()); break;
      default: r.skip(type);
    }
  }
  return n;
}

inline void parse_shape(std::string_view buf, ValueInfo& vi) {
  wire::Reader r(buf);
  vi.has_shape = true;
  while (!r.done()) {
    auto [field, type] = r.read_key();
    if (field != 1) {
      r.skip(type);
      continue;
    }
    wire::Reader dim(r.read_bytes());
    std::int64_t value = -1;
    while (!dim.done()) {
      auto [df, dt] = dim.read_key();
      if (df == 1) {
        value = static_cast<std::int64_t>(dim.read_varint());
      } else {
        dim.skip(dt);
      }
    }
    vi.dims.push_back(value);
  }
}

inline ValueInfo parse_value_info(std::string_view buf) {
  wire::Reader r(buf);
  ValueInfo vi;
  while (!r.done()) {
    auto [field, type] = r.read_key();
    if (field == 1) {
      vi.name = std::string(r.read_bytes());
    } else if (field == 2) {
      wire::Reader tp(r.read_bytes());
      while (!tp.done()) {
        auto [tf, tt] = tp.read_key();
        if (tf != 1) {
          tp.skip(tt);
          continue;
        }
        wire::Reader tensor_type(tp.read_bytes());
        while (!tensor_type.done()) {
          auto [ef, et] = tensor_type.read_key();
          if (ef == 1) {
            vi.elem_type = static_cast<DataType>(tensor_type.read_varint());
          } else if (ef == 2) {
            parse_shape(tensor_type.read_bytes(), vi);
          } else {
            tensor_type.skip(et);
          }
        }
      }
    } else {
      r.skip(type);
    }
  }
  return vi;
}

inline Graph parse_graph(std::string_view buf) {
  wire::Reader r(buf);
  Graph g;
  while (!r.done()) {
    auto [field, type] = r.read_key();
    switch (field) {
      case 1: g.nodes.push_back(parse_node(r.read_bytes())); break;
      case 2: g.name = std::string(r.read_bytes()); break;
      case 5: {
        std::string name;
        Tensor t = parse_tensor(r.read_bytes(), &name);
        g.initializers.emplace_back(std::move(name), std::move(t));
        break;
      }
      case 11: g.inputs.push_back(parse_value_info(r.read_bytes())); break;
      case 12: g.outputs.push_back(parse_value_info(r.read_bytes())); break;
      default: r.skip(type);
    }
  }
  return g;
}

}  // namespace detail

inline Model parse_model(std::string_view bytes) {
  wire::Reader r(bytes);
  Model m;
  bool has_graph = false;
  while (!r.done()) {
    auto [field, type] = r.read_key();
    switch (field) {
      case 1: m.ir_version = static_cast<std::int64_t>(r.read_varint()); break;
      case 2: m.producer = std::string(r.read_bytes()); break;
      case 7: m.graph = detail::parse_graph(r.read_bytes()); has_graph = true; break;
      case 8: {
        wire::Reader op(r.read_bytes());
        std::string domain;
        std::int64_t version = 0;
        while (!op.done()) {
          auto [of, ot] = op.read_key();
          if (of == 1) {
            domain = std::string(op.read_bytes());
          } else if (of == 2) {
            version = static_cast<std::int64_t>(op.read_varint());
          } else {
            op.skip(ot);
          }
        }
        if (domain.empty() || domain == "ai.onnx") m.opset = version;
        break;
      }
      default: r.skip(type);
    }
  }
  if (!has_graph) throw ModelError("ONNX: model has no graph");
  return m;
}

inline Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_model(bytes);
  } catch (const ModelError& e) {
    throw ModelError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Interpreter

namespace ops {

inline std::vector<std::int64_t> strides_of(const std::vector<std::int64_t>& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

inline std::string shape_str(const std::vector<std::int64_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

// Multidirectional (numpy-style) broadcasting.
inline Tensor broadcast_binary(const Tensor& a, const Tensor& b, const std::function<double(double, double)>& fn) {
  const std::size_t rank = std::max(a.shape.size(), b.shape.size());
  auto padded = [rank](const std::vector<std::int64_t>& s) {
    std::vector<std::int64_t> out(rank - s.size(), 1);
    out.insert(out.end(), s.begin(), s.end());
    return out;
  };
  const auto sa = padded(a.shape);
  const auto sb = padded(b.shape);
  Tensor out;
  out.type = a.type;
  out.shape.resize(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    if (sa[d] != sb[d] && sa[d] != 1 && sb[d] != 1) {
      throw ModelError("ONNX: cannot broadcast " + shape_str(a.shape) + " with " + shape_str(b.shape));
    }
    out.shape[d] = sa[d] == 1 ? sb[d] : sa[d];
  }
  const auto stride_a = strides_of(sa);
  const auto stride_b = strides_of(sb);
  const std::size_t n = out.numel();
  out.data.resize(n);
  std::vector<std::int64_t> idx(rank, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::int64_t oa = 0, ob = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      if (sa[d] != 1) oa += idx[d] * stride_a[d];
      if (sb[d] != 1) ob += idx[d] * stride_b[d];
    }
    out.data[i] = fn(a.data[static_cast<std::size_t>(oa)], b.data[static_cast<std::size_t>(ob)]);
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out.shape[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

inline Tensor unary(const Tensor& x, const std::function<double(double)>& fn) {
  Tensor out = x;
  for (double& v : out.data) v = fn(v);
  return out;
}

struct Conv2dGeometry {
  std::int64_t stride_h, stride_w, dil_h, dil_w, pad_t, pad_l, pad_b, pad_r, group;
};

inline Conv2dGeometry conv_geometry(const Node& node, std::int64_t in_h, std::int64_t in_w, std::int64_t k_h,
                                    std::int64_t k_w) {
  const auto strides = node.attr_ints("strides", {1, 1});
  const auto dil = node.attr_ints("dilations", {1, 1});
  auto pads = node.attr_ints("pads", {0, 0, 0, 0});
  if (strides.size() != 2 || dil.size() != 2 || pads.size() != 4) throw ModelError("ONNX Conv: only 2-D supported");
  const std::string auto_pad = node.attr_string("auto_pad", "NOTSET");
  if (auto_pad == "SAME_UPPER" || auto_pad == "SAME_LOWER") {
    auto same = [&](std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t d, std::int64_t& lo,
                    std::int64_t& hi) {
      const std::int64_t out = (in + s - 1) / s;
      const std::int64_t total = std::max<std::int64_t>(0, (out - 1) * s + (k - 1) * d + 1 - in);
      lo = auto_pad == "SAME_UPPER" ? total / 2 : total - total / 2;
      hi = total - lo;
    };
    same(in_h, k_h, strides[0], dil[0], pads[0], pads[2]);
    same(in_w, k_w, strides[1], dil[1], pads[1], pads[3]);
  } else if (auto_pad == "VALID") {
    pads = {0, 0, 0, 0};
  }
  return {strides[0], strides[1], dil[0], dil[1], pads[0], pads[1], pads[2], pads[3], node.attr_int("group", 1)};
}

inline Tensor conv(const Node& node, const Tensor& x, const Tensor& w, const Tensor* bias) {
  if (x.shape.size() != 4 || w.shape.size() != 4) throw ModelError("ONNX Conv: expects 4-D input and weights");
  const std::int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::int64_t M = w.shape[0], CG = w.shape[1], KH = w.shape[2], KW = w.shape[3];
  const auto g = conv_geometry(node, H, W, KH, KW);
  if (C != CG * g.group || M % g.group != 0) throw ModelError("ONNX Conv: channel/group mismatch");
  const std::int64_t OH = (H + g.pad_t + g.pad_b - ((KH - 1) * g.dil_h + 1)) / g.stride_h + 1;
  const std::int64_t OW = (W + g.pad_l + g.pad_r - ((KW - 1) * g.dil_w + 1)) / g.stride_w + 1;
  if (OH <= 0 || OW <= 0) throw ModelError("ONNX Conv: empty output");
  Tensor out;
  out.shape = {N, M, OH, OW};
  out.data.assign(out.numel(), 0.0);
  const std::int64_t MG = M / g.group;
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t m = 0; m < M; ++m) {
      const std::int64_t grp = m / MG;
      const double b = bias ? bias->data[static_cast<std::size_t>(m)] : 0.0;
      for (std::int64_t oy = 0; oy < OH; ++oy) {
        for (std::int64_t ox = 0; ox < OW; ++ox) {
          double acc = b;
          for (std::int64_t c = 0; c < CG; ++c) {
            const std::int64_t ic = grp * CG + c;
            for (std::int64_t ky = 0; ky < KH; ++ky) {
              const std::int64_t iy = oy * g.stride_h - g.pad_t + ky * g.dil_h;
              if (iy < 0 || iy >= H) continue;
              for (std::int64_t kx = 0; kx < KW; ++kx) {
                const std::int64_t ix = ox * g.stride_w - g.pad_l + kx * g.dil_w;
                if (ix < 0 || ix >= W) continue;
                acc += x.data[static_cast<std::size_t>(((n * C + ic) * H + iy) * W + ix)] *
                       w.data[static_cast<std::size_t>(((m * CG + c) * KH + ky) * KW + kx)];
              }
            }
          }
          out.data[static_cast<std::size_t>(((n * M + m) * OH + oy) * OW + ox)] = acc;
        }
      }
    }
  }
  return out;
}

inline Tensor conv_transpose(const Node& node, const Tensor& x, const Tensor& w, const Tensor* bias) {
  if (x.shape.size() != 4 || w.shape.size() != 4) throw ModelError("ONNX ConvTranspose: expects 4-D tensors");
  const std::int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::int64_t group = node.attr_int("group", 1);
  const std::int64_t MG = w.shape[1], KH = w.shape[2], KW = w.shape[3];
  if (w.shape[0] != C || C % group != 0) throw ModelError("ONNX ConvTranspose: channel/group mismatch");
  const std::int64_t M = MG * group;
  const auto strides = node.attr_ints("strides", {1, 1});
  const auto dil = node.attr_ints("dilations", {1, 1});
  const auto out_pad = node.attr_ints("output_padding", {0, 0});
  auto pads = node.attr_ints("pads", {0, 0, 0, 0});
  const std::string auto_pad = node.attr_string("auto_pad", "NOTSET");
  const auto out_shape = node.attr_ints("output_shape");
  auto full = [&](std::int64_t in, int d, std::int64_t k) {
    return strides[d] * (in - 1) + out_pad[d] + (k - 1) * dil[d] + 1;
  };
  if (!out_shape.empty() || auto_pad == "SAME_UPPER" || auto_pad == "SAME_LOWER") {
    const std::int64_t th = !out_shape.empty() ? out_shape[out_shape.size() - 2] : H * strides[0];
    const std::int64_t tw = !out_shape.empty() ? out_shape.back() : W * strides[1];
    const std::int64_t total_h = full(H, 0, KH) - th;
    const std::int64_t total_w = full(W, 1, KW) - tw;
    const bool upper = auto_pad != "SAME_LOWER";
    pads = {upper ? total_h / 2 : total_h - total_h / 2, upper ? total_w / 2 : total_w - total_w / 2, 0, 0};
    pads[2] = total_h - pads[0];
    pads[3] = total_w - pads[1];
  } else if (auto_pad == "VALID") {
    pads = {0, 0, 0, 0};
  }
  const std::int64_t OH = full(H, 0, KH) - pads[0] - pads[2];
  const std::int64_t OW = full(W, 1, KW) - pads[1] - pads[3];
  if (OH <= 0 || OW <= 0) throw ModelError("ONNX ConvTranspose: empty output");
  Tensor out;
  out.shape = {N, M, OH, OW};
  out.data.assign(out.numel(), 0.0);
  const std::int64_t CG = C / group;
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const std::int64_t grp = c / CG;
      for (std::int64_t iy = 0; iy < H; ++iy) {
        for (std::int64_t ix = 0; ix < W; ++ix) {
          const double v = x.data[static_cast<std::size_t>(((n * C + c) * H + iy) * W + ix)];
          if (v == 0.0) continue;
          for (std::int64_t mg = 0; mg < MG; ++mg) {
            const std::int64_t m = grp * MG + mg;
            for (std::int64_t ky = 0; ky < KH; ++ky) {
              const std::int64_t oy = iy * strides[0] + ky * dil[0] - pads[0];
              if (oy < 0 || oy >= OH) continue;
              for (std::int64_t kx = 0; kx < KW; ++kx) {
                const std::int64_t ox = ix * strides[1] + kx * dil[1] - pads[1];
                if (ox < 0 || ox >= OW) continue;
                out.data[static_cast<std::size_t>(((n * M + m) * OH + oy) * OW + ox)] +=
                    v * w.data[static_cast<std::size_t>(((c * MG + mg) * KH + ky) * KW + kx)];
              }
            }
          }
        }
      }
    }
  }
  if (bias) {
    const std::size_t plane = static_cast<std::size_t>(OH * OW);
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t m = 0; m < M; ++m) {
        const std::size_t base = static_cast<std::size_t>((n * M + m)) * plane;
        for (std::size_t i = 0; i < plane; ++i) out.data[base + i] += bias->data[static_cast<std::size_t>(m)];
      }
    }
  }
  return out;
}

inline Tensor batch_norm(const Node& node, const Tensor& x, const Tensor& scale, const Tensor& bias,
                         const Tensor& mean, const Tensor& var) {
  if (x.shape.size() < 2) throw ModelError("ONNX BatchNormalization: rank < 2");
  const double eps = node.attr_float("epsilon", 1e-5);
  const std::int64_t N = x.shape[0], C = x.shape[1];
  const std::size_t plane = x.numel() / static_cast<std::size_t>(N * C);
  Tensor out = x;
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      const double k = scale.data[ci] / std::sqrt(var.data[ci] + eps);
      const double b = bias.data[ci] - mean.data[ci] * k;
      const std::size_t base = static_cast<std::size_t>(n * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out.data[base + i] = x.data[base + i] * k + b;
    }
  }
  return out;
}

inline Tensor matmul2d(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  const std::int64_t ar = a.shape[0], ac = a.shape[1], br = b.shape[0], bc = b.shape[1];
  const std::int64_t M = ta ? ac : ar, K = ta ? ar : ac, K2 = tb ? bc : br, N = tb ? br : bc;
  if (K != K2) throw ModelError("ONNX: matmul inner dimension mismatch " + shape_str(a.shape) + " x " + shape_str(b.shape));
  Tensor out;
  out.shape = {M, N};
  out.data.assign(static_cast<std::size_t>(M * N), 0.0);
  for (std::int64_t i = 0; i < M; ++i) {
    for (std::int64_t k = 0; k < K; ++k) {
      const double av = a.data[static_cast<std::size_t>(ta ? k * ac + i : i * ac + k)];
      if (av == 0.0) continue;
      for (std::int64_t j = 0; j < N; ++j) {
        out.data[static_cast<std::size_t>(i * N + j)] += av * b.data[static_cast<std::size_t>(tb ? j * bc + k : k * bc + j)];
      }
    }
  }
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape.size() == 2 && b.shape.size() == 2) return matmul2d(a, b, false, false);
  if (b.shape.size() != 2 || a.shape.size() < 2) throw ModelError("ONNX MatMul: only [...,M,K] x [K,N] supported");
  const std::int64_t K = a.shape.back();
  const std::int64_t rows = static_cast<std::int64_t>(a.numel()) / K;
  Tensor flat{{rows, K}, a.data, a.type};
  Tensor out = matmul2d(flat, b, false, false);
  out.shape = a.shape;
  out.shape.back() = b.shape[1];
  return out;
}

inline Tensor reshape(const Tensor& x, const Tensor& shape_t) {
  std::vector<std::int64_t> shape;
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape_t.data.size(); ++i) {
    auto d = static_cast<std::int64_t>(shape_t.data[i]);
    if (d == 0) d = x.shape.at(i);
    if (d == -1) {
      if (infer >= 0) throw ModelError("ONNX Reshape: more than one -1");
      infer = static_cast<int>(i);
    } else {
      known *= d;
    }
    shape.push_back(d);
  }
  if (infer >= 0) shape[static_cast<std::size_t>(infer)] = static_cast<std::int64_t>(x.numel()) / known;
  Tensor out{shape, x.data, x.type};
  if (out.numel() != x.numel()) throw ModelError("ONNX Reshape: " + shape_str(x.shape) + " -> " + shape_str(shape));
  return out;
}

inline Tensor transpose(const Tensor& x, std::vector<std::int64_t> perm) {
  const std::size_t rank = x.shape.size();
  if (perm.empty()) {
    for (std::size_t i = rank; i-- > 0;) perm.push_back(static_cast<std::int64_t>(i));
  }
  if (perm.size() != rank) throw ModelError("ONNX Transpose: perm rank mismatch");
  Tensor out;
  out.type = x.type;
  out.shape.resize(rank);
  for (std::size_t d = 0; d < rank; ++d) out.shape[d] = x.shape[static_cast<std::size_t>(perm[d])];
  const auto in_strides = strides_of(x.shape);
  out.data.resize(x.numel());
  std::vector<std::int64_t> idx(rank, 0);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    std::int64_t src = 0;
    for (std::size_t d = 0; d < rank; ++d) src += idx[d] * in_strides[static_cast<std::size_t>(perm[d])];
    out.data[i] = x.data[static_cast<std::size_t>(src)];
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out.shape[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

inline std::int64_t norm_axis(std::int64_t axis, std::size_t rank) {
  return axis < 0 ? axis + static_cast<std::int64_t>(rank) : axis;
}

inline Tensor concat(const std::vector<const Tensor*>& parts, std::int64_t axis) {
  const Tensor& first = *parts.front();
  axis = norm_axis(axis, first.shape.size());
  Tensor out;
  out.type = first.type;
  out.shape = first.shape;
  out.shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto* p : parts) out.shape[static_cast<std::size_t>(axis)] += p->shape[static_cast<std::size_t>(axis)];
  std::int64_t outer = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= first.shape[static_cast<std::size_t>(d)];
  for (std::int64_t o = 0; o < outer; ++o) {
    for (const auto* p : parts) {
      const std::size_t chunk = p->numel() / static_cast<std::size_t>(outer);
      out.data.insert(out.data.end(), p->data.begin() + static_cast<std::ptrdiff_t>(o * chunk),
                      p->data.begin() + static_cast<std::ptrdiff_t>((o + 1) * chunk));
    }
  }
  return out;
}

inline Tensor gather(const Tensor& x, const Tensor& indices, std::int64_t axis) {
  axis = norm_axis(axis, x.shape.size());
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= x.shape[static_cast<std::size_t>(d)];
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < x.shape.size(); ++d) inner *= x.shape[d];
  const std::int64_t dim = x.shape[static_cast<std::size_t>(axis)];
  Tensor out;
  out.type = x.type;
  out.shape.assign(x.shape.begin(), x.shape.begin() + axis);
  out.shape.insert(out.shape.end(), indices.shape.begin(), indices.shape.end());
  out.shape.insert(out.shape.end(), x.shape.begin() + axis + 1, x.shape.end());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (double iv : indices.data) {
      auto i = static_cast<std::int64_t>(iv);
      if (i < 0) i += dim;
      const auto base = static_cast<std::size_t>((o * dim + i) * inner);
      out.data.insert(out.data.end(), x.data.begin() + static_cast<std::ptrdiff_t>(base),
                      x.data.begin() + static_cast<std::ptrdiff_t>(base + static_cast<std::size_t>(inner)));
    }
  }
  return out;
}

}  // namespace ops

/// Executes a parsed graph. Immutable after construction, so concurrent run()
/// calls are safe.
class Interpreter {
 public:
  explicit Interpreter(Model model) : model_(std::move(model)) {
    static const std::set<std::string> supported{
        "Identity", "Constant", "Add",  "Sub",     "Mul",       "Div",       "Relu",    "LeakyRelu",
        "Sigmoid",  "Tanh",     "Clip", "Conv",    "ConvTranspose", "BatchNormalization", "Gemm", "MatMul",
        "Reshape",  "Flatten",  "Transpose", "Shape", "Gather", "Unsqueeze", "Squeeze", "Concat"};
    for (const auto& n : model_.graph.nodes) {
      if (!n.domain.empty() && n.domain != "ai.onnx") throw ModelError("ONNX: unsupported domain '" + n.domain + "'");
      if (!supported.count(n.op_type)) throw ModelError("ONNX: unsupported operator '" + n.op_type + "'");
    }
    for (const auto& [name, t] : model_.graph.initializers) initializers_.emplace(name, t);
  }

  const Model& model() const noexcept { return model_; }

  /// Graph inputs that are not initializers.
  std::vector<ValueInfo> runtime_inputs() const {
    std::vector<ValueInfo> out;
    for (const auto& vi : model_.graph.inputs) {
      if (!initializers_.count(vi.name)) out.push_back(vi);
    }
    return out;
  }

  std::vector<Tensor> run(const std::map<std::string, Tensor>& feeds) const {
    std::unordered_map<std::string, Tensor> env(initializers_.begin(), initializers_.end());
    for (const auto& [k, v] : feeds) env[k] = v;
    for (const auto& node : model_.graph.nodes) execute(node, env);
    std::vector<Tensor> outs;
    for (const auto& o : model_.graph.outputs) {
      auto it = env.find(o.name);
      if (it == env.end()) throw ModelError("ONNX: graph output '" + o.name + "' was never produced");
      outs.push_back(it->second);
    }
    return outs;
  }

 private:
  static const Tensor& input(const std::unordered_map<std::string, Tensor>& env, const Node& n, std::size_t i) {
    if (i >= n.inputs.size() || n.inputs[i].empty()) {
      throw ModelError("ONNX " + n.op_type + ": missing input " + std::to_string(i));
    }
    auto it = env.find(n.inputs[i]);
    if (it == env.end()) throw ModelError("ONNX " + n.op_type + ": undefined tensor '" + n.inputs[i] + "'");
    return it->second;
  }

  static const Tensor* optional_input(const std::unordered_map<std::string, Tensor>& env, const Node& n,
                                      std::size_t i) {
    if (i >= n.inputs.size() || n.inputs[i].empty()) return nullptr;
    return &input(env, n, i);
  }

  void execute(const Node& n, std::unordered_map<std::string, Tensor>& env) const {
    const std::string& op = n.op_type;
    auto in = [&](std::size_t i) -> const Tensor& { return input(env, n, i); };
    Tensor out;
    if (op == "Identity") {
      out = in(0);
    } else if (op == "Constant") {
      const Attribute* a = n.attr("value");
      if (a && a->t) {
        out = *a->t;
      } else if (const Attribute* vf = n.attr("value_float"); vf && vf->f) {
        out = Tensor{{}, {*vf->f}, DataType::float32};
      } else if (const Attribute* vi = n.attr("value_int"); vi && vi->i) {
        out = Tensor{{}, {static_cast<double>(*vi->i)}, DataType::int64};
      } else if (const Attribute* vs = n.attr("value_ints")) {
        out = Tensor{{static_cast<std::int64_t>(vs->ints.size())}, {}, DataType::int64};
        for (auto v : vs->ints) out.data.push_back(static_cast<double>(v));
      } else if (const Attribute* vfs = n.attr("value_floats")) {
        out = Tensor{{static_cast<std::int64_t>(vfs->floats.size())}, vfs->floats, DataType::float32};
      } else {
        throw ModelError("ONNX Constant: unsupported value attribute");
      }
    } else if (op == "Add") {
      out = ops::broadcast_binary(in(0), in(1), [](double a, double b) { return a + b; });
    } else if (op == "Sub") {
      out = ops::broadcast_binary(in(0), in(1), [](double a, double b) { return a - b; });
    } else if (op == "Mul") {
      out = ops::broadcast_binary(in(0), in(1), [](double a, double b) { return a * b; });
    } else if (op == "Div") {
      const bool integral = in(0).type == DataType::int64 || in(0).type == DataType::int32;
      out = ops::broadcast_binary(in(0), in(1), [integral](double a, double b) {
        return integral ? std::trunc(a / b) : a / b;
      });
    } else if (op == "Relu") {
      out = ops::unary(in(0), [](double v) { return v > 0 ? v : 0.0; });
    } else if (op == "LeakyRelu") {
      const double alpha = n.attr_float("alpha", 0.01);
      out = ops::unary(in(0), [alpha](double v) { return v >= 0 ? v : alpha * v; });
    } else if (op == "Sigmoid") {
      out = ops::unary(in(0), [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    } else if (op == "Tanh") {
      out = ops::unary(in(0), [](double v) { return std::tanh(v); });
    } else if (op == "Clip") {
      double lo = n.attr_float("min", -std::numeric_limits<double>::infinity());
      double hi = n.attr_float("max", std::numeric_limits<double>::infinity());
      if (const Tensor* t = optional_input(env, n, 1)) lo = t->data.at(0);
      if (const Tensor* t = optional_input(env, n, 2)) hi = t->data.at(0);
      out = ops::unary(in(0), [lo, hi](double v) { return std::clamp(v, lo, hi); });
    } else if (op == "Conv") {
      out = ops::conv(n, in(0), in(1), optional_input(env, n, 2));
    } else if (op == "ConvTranspose") {
      out = ops::conv_transpose(n, in(0), in(1), optional_input(env, n, 2));
    } else if (op == "BatchNormalization") {
      out = ops::batch_norm(n, in(0), in(1), in(2), in(3), in(4));
    } else if (op == "Gemm") {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.shape.size() != 2 || b.shape.size() != 2) throw ModelError("ONNX Gemm: expects 2-D inputs");
      out = ops::matmul2d(a, b, n.attr_int("transA", 0) != 0, n.attr_int("transB", 0) != 0);
      const double alpha = n.attr_float("alpha", 1.0);
      const double beta = n.attr_float("beta", 1.0);
      for (double& v : out.data) v *= alpha;
      if (const Tensor* c = optional_input(env, n, 2)) {
        out = ops::broadcast_binary(out, *c, [beta](double x, double y) { return x + beta * y; });
      }
    } else if (op == "MatMul") {
      out = ops::matmul(in(0), in(1));
    } else if (op == "Reshape") {
      out = ops::reshape(in(0), in(1));
    } else if (op == "Flatten") {
      const Tensor& x = in(0);
      const std::int64_t axis = ops::norm_axis(n.attr_int("axis", 1), x.shape.size());
      std::int64_t outer = 1;
      for (std::int64_t d = 0; d < axis; ++d) outer *= x.shape[static_cast<std::size_t>(d)];
      out = Tensor{{outer, static_cast<std::int64_t>(x.numel()) / std::max<std::int64_t>(outer, 1)}, x.data, x.type};
    } else if (op == "Transpose") {
      out = ops::transpose(in(0), n.attr_ints("perm"));
    } else if (op == "Shape") {
      const Tensor& x = in(0);
      out = Tensor{{static_cast<std::int64_t>(x.shape.size())}, {}, DataType::int64};
      for (auto d : x.shape) out.data.push_back(static_cast<double>(d));
    } else if (op == "Gather") {
      out = ops::gather(in(0), in(1), n.attr_int("axis", 0));
    } else if (op == "Unsqueeze" || op == "Squeeze") {
      const Tensor& x = in(0);
      std::vector<std::int64_t> axes = n.attr_ints("axes");
      if (const Tensor* t = optional_input(env, n, 1)) {
        for (double v : t->data) axes.push_back(static_cast<std::int64_t>(v));
      }
      out = x;
      if (op == "Unsqueeze") {
        const std::size_t rank = x.shape.size() + axes.size();
        for (auto& a : axes) a = ops::norm_axis(a, rank);
        std::sort(axes.begin(), axes.end());
        for (auto a : axes) out.shape.insert(out.shape.begin() + a, 1);
      } else {
        std::vector<std::int64_t> shape;
        for (std::size_t d = 0; d < x.shape.size(); ++d) {
          const bool listed = axes.empty() ? x.shape[d] == 1
                                           : std::any_of(axes.begin(), axes.end(), [&](std::int64_t a) {
                                               return ops::norm_axis(a, x.shape.size()) == static_cast<std::int64_t>(d);
                                             });
          if (!listed) shape.push_back(x.shape[d]);
        }
        out.shape = shape;
      }
    } else if (op == "Concat") {
      std::vector<const Tensor*> parts;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) parts.push_back(&in(i));
      out = ops::concat(parts, n.attr_int("axis", 0));
    }
    if (n.outputs.empty()) throw ModelError("ONNX " + op + ": node has no outputs");
    env[n.outputs[0]] = std::move(out);
  }

  Model model_;
  std::unordered_map<std::string, Tensor> initializers_;
};

// ---------------------------------------------------------------------------
// Writer

namespace wire {

class Writer {
 public:
  void varint(std::uint64_t v) {
    while (v >= 0x80) {
      buf_.push_back(static_cast<char>((v & 0x7f) | 0x80));
      v >>= 7;
    }
    buf_.push_back(static_cast<char>(v));
  }
  void key(int field, int type) { varint(static_cast<std::uint64_t>(field) << 3 | static_cast<std::uint64_t>(type)); }
  void field_varint(int field, std::uint64_t v) {
    key(field, varint_type);
    varint(v);
  }
  void field_bytes(int field, std::string_view bytes) {
    key(field, bytes_type);
    varint(bytes.size());
    buf_.append(bytes);
  }
  void field_fixed32(int field, std::uint32_t v) {
    key(field, fixed32_type);
    for (int b = 0; b < 4; ++b) buf_.push_back(static_cast<char>(v >> (8 * b)));
  }
  const std::string& str() const noexcept { return buf_; }

 private:
  static constexpr int varint_type = 0;
  static constexpr int bytes_type = 2;
  static constexpr int fixed32_type = 5;
  std::string buf_;
};

}  // namespace wire

/// Builds small float32 ONNX models (opset 13) for fixtures and exports.
class ModelBuilder {
 public:
  struct Attr {
    std::string name;
    std::variant<std::int64_t, double, std::vector<std::int64_t>, std::string> value;
  };

  ModelBuilder& input(const std::string& name, std::vector<std::int64_t> dims) {
    inputs_.push_back(value_info(name, dims));
    return *this;
  }
  ModelBuilder& output(const std::string& name, std::vector<std::int64_t> dims) {
    outputs_.push_back(value_info(name, dims));
    return *this;
  }
  ModelBuilder& initializer(const std::string& name, std::vector<std::int64_t> dims, const std::vector<double>& values,
                            DataType type = DataType::float32) {
    initializers_.push_back(tensor(name, dims, values, type));
    return *this;
  }
  ModelBuilder& node(const std::string& op, std::vector<std::string> inputs, std::vector<std::string> outputs,
                     std::vector<Attr> attrs = {}) {
    wire::Writer w;
    for (const auto& i : inputs) w.field_bytes(1, i);
    for (const auto& o : outputs) w.field_bytes(2, o);
    w.field_bytes(3, op + "_" + std::to_string(node_count_++));
    w.field_bytes(4, op);
    for (const auto& a : attrs) w.field_bytes(5, attribute(a));
    nodes_.push_back(w.str());
    return *this;
  }

  std::string serialize() const {
    wire::Writer graph;
    for (const auto& n : nodes_) graph.field_bytes(1, n);
    graph.field_bytes(2, "anomex_graph");
    for (const auto& t : initializers_) graph.field_bytes(5, t);
    for (const auto& i : inputs_) graph.field_bytes(11, i);
    for (const auto& o : outputs_) graph.field_bytes(12, o);
    wire::Writer opset;
    opset.field_bytes(1, "");
    opset.field_varint(2, 13);
    wire::Writer model;
    model.field_varint(1, 8);
    model.field_bytes(2, "anomex");
    model.field_bytes(7, graph.str());
    model.field_bytes(8, opset.str());
    return model.str();
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }

  /// dims entries < 0 are written as a symbolic "N" dimension.
  static std::string value_info(const std::string& name, const std::vector<std::int64_t>& dims) {
    wire::Writer shape;
    for (auto d : dims) {
      wire::Writer dim;
      if (d < 0) {
        dim.field_bytes(2, "N");
      } else {
        dim.field_varint(1, static_cast<std::uint64_t>(d));
      }
      shape.field_bytes(1, dim.str());
    }
    wire::Writer tensor_type;
    tensor_type.field_varint(1, static_cast<std::uint64_t>(DataType::float32));
    tensor_type.field_bytes(2, shape.str());
    wire::Writer type;
    type.field_bytes(1, tensor_type.str());
    wire::Writer vi;
    vi.field_bytes(1, name);
    vi.field_bytes(2, type.str());
    return vi.str();
  }

  static std::string tensor(const std::string& name, const std::vector<std::int64_t>& dims,
                            const std::vector<double>& values, DataType type) {
    wire::Writer t;
    for (auto d : dims) t.field_varint(1, static_cast<std::uint64_t>(d));
    t.field_varint(2, static_cast<std::uint64_t>(type));
    t.field_bytes(8, name);
    std::string raw;
    for (double v : values) {
      if (type == DataType::int64) {
        const auto bits = static_cast<std::uint64_t>(static_cast<std::int64_t>(v));
        for (int b = 0; b < 8; ++b) raw.push_back(static_cast<char>(bits >> (8 * b)));
      } else {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        for (int b = 0; b < 4; ++b) raw.push_back(static_cast<char>(bits >> (8 * b)));
      }
    }
    t.field_bytes(9, raw);
    return t.str();
  }

 private:
  static std::string attribute(const Attr& a) {
    wire::Writer w;
    w.field_bytes(1, a.name);
    if (const auto* i = std::get_if<std::int64_t>(&a.value)) {
      w.field_varint(3, static_cast<std::uint64_t>(*i));
      w.field_varint(20, 2);  // INT
    } else if (const auto* f = std::get_if<double>(&a.value)) {
      w.field_fixed32(2, std::bit_cast<std::uint32_t>(static_cast<float>(*f)));
      w.field_varint(20, 1);  // FLOAT
    } else if (const auto* ints = std::get_if<std::vector<std::int64_t>>(&a.value)) {
      for (auto v : *ints) w.field_varint(8, static_cast<std::uint64_t>(v));
      w.field_varint(20, 7);  // INTS
    } else if (const auto* s = std::get_if<std::string>(&a.value)) {
      w.field_bytes(4, *s);
      w.field_varint(20, 3);  // STRING
    }
    return w.str();
  }

  std::vector<std::string> inputs_, outputs_, initializers_, nodes_;
  int node_count_ = 0;
};

}  // namespace anomex::onnx
