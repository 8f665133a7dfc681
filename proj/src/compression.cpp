#include "fedafd/compression.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "fedafd/rng.hpp"

namespace fedafd {

namespace {

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::vector<int8_t> sign_diagonal(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int8_t> signs(n);
  for (auto& s : signs) s = (rng.next_u64() & 1) ? int8_t{-1} : int8_t{1};
  return signs;
}

// In-place fast Walsh-Hadamard transform; length must be a power of two.
void fwht(std::vector<double>& v) {
  for (std::size_t len = 1; len < v.size(); len <<= 1) {
    for (std::size_t i = 0; i < v.size(); i += len << 1) {
      for (std::size_t j = i; j < i + len; ++j) {
        const double a = v[j];
        const double b = v[j + len];
        v[j] = a + b;
        v[j + len] = a - b;
      }
    }
  }
}

// --- little-endian byte helpers -------------------------------------------

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xff);
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}
void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

struct ByteReader {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;

  std::uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes[pos + i]} << (8 * i);
    pos += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes[pos + i]} << (8 * i);
    pos += 4;
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  void need(std::size_t n) {
    if (pos + n > bytes.size()) {
      throw std::invalid_argument("blob: truncated byte stream");
    }
  }
};

}  // namespace

std::vector<double> hadamard_rotate(std::span<const double> x,
                                    std::uint64_t sign_seed) {
  const std::size_t n = next_pow2(std::max<std::size_t>(1, x.size()));
  std::vector<double> v(n, 0.0);
  auto signs = sign_diagonal(n, sign_seed);
  for (std::size_t i = 0; i < x.size(); ++i) v[i] = signs[i] * x[i];
  fwht(v);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (double& d : v) d *= scale;
  return v;
}

std::vector<double> hadamard_inverse(std::span<const double> y,
                                     std::uint64_t sign_seed,
                                     std::size_t original_len) {
  if (y.size() != next_pow2(std::max<std::size_t>(1, y.size())) ||
      original_len > y.size()) {
    throw std::invalid_argument("hadamard_inverse: bad padded length");
  }
  // (1/sqrt(n)) H is orthogonal and symmetric, so it is its own inverse;
  // the sign diagonal likewise.
  std::vector<double> v(y.begin(), y.end());
  fwht(v);
  const double scale = 1.0 / std::sqrt(static_cast<double>(v.size()));
  for (double& d : v) d *= scale;
  auto signs = sign_diagonal(v.size(), sign_seed);
  std::vector<double> out(original_len);
  for (std::size_t i = 0; i < original_len; ++i) out[i] = signs[i] * v[i];
  return out;
}

std::uint64_t CompressedBlob::payload_size_bytes() const {
  switch (codec()) {
    case Codec::Raw:
      return std::get<RawPayload>(payload).values.size() * 8;
    case Codec::Quant8Hadamard:
      return std::get<Quant8Payload>(payload).levels.size() + 16;
    case Codec::TopKSparse:
      return std::get<TopKPayload>(payload).indices.size() * 12 + 8;
  }
  return 0;
}

std::vector<std::uint8_t> CompressedBlob::serialize() const {
  std::vector<std::uint8_t> out;
  out.push_back(static_cast<std::uint8_t>(codec()));
  switch (codec()) {
    case Codec::Raw: {
      const auto& p = std::get<RawPayload>(payload);
      put_u64(out, p.values.size());
      for (double v : p.values) put_f64(out, v);
      break;
    }
    case Codec::Quant8Hadamard: {
      const auto& p = std::get<Quant8Payload>(payload);
      put_u64(out, p.original_len);
      put_u64(out, p.sign_seed);
      put_f64(out, p.lo);
      put_f64(out, p.hi);
      put_u64(out, p.levels.size());
      out.insert(out.end(), p.levels.begin(), p.levels.end());
      break;
    }
    case Codec::TopKSparse: {
      const auto& p = std::get<TopKPayload>(payload);
      put_u64(out, p.original_len);
      put_u64(out, p.indices.size());
      for (std::uint32_t i : p.indices) put_u32(out, i);
      for (double v : p.values) put_f64(out, v);
      break;
    }
  }
  return out;
}

CompressedBlob CompressedBlob::deserialize(
    std::span<const std::uint8_t> bytes) {
  ByteReader r{bytes};
  const auto tag = r.u8();
  CompressedBlob blob;
  switch (static_cast<Codec>(tag)) {
    case Codec::Raw: {
      RawPayload p;
      p.values.resize(r.u64());
      for (double& v : p.values) v = r.f64();
      blob.payload = std::move(p);
      break;
    }
    case Codec::Quant8Hadamard: {
      Quant8Payload p;
      p.original_len = r.u64();
      p.sign_seed = r.u64();
      p.lo = r.f64();
      p.hi = r.f64();
      p.levels.resize(r.u64());
      for (auto& b : p.levels) b = r.u8();
      blob.payload = std::move(p);
      break;
    }
    case Codec::TopKSparse: {
      TopKPayload p;
      p.original_len = r.u64();
      const std::uint64_t k = r.u64();
      p.indices.resize(k);
      for (auto& i : p.indices) i = r.u32();
      p.values.resize(k);
      for (auto& v : p.values) v = r.f64();
      blob.payload = std::move(p);
      break;
    }
    default:
      throw std::invalid_argument("blob: unknown codec tag");
  }
  return blob;
}

CompressedBlob raw_encode(const std::vector<double>& values) {
  CompressedBlob blob;
  blob.payload = RawPayload{values};
  return blob;
}

std::vector<double> raw_decode(const CompressedBlob& blob) {
  return std::get<RawPayload>(blob.payload).values;
}

CompressedBlob quant8_encode(const Tensor& t, std::uint64_t sign_seed) {
  Quant8Payload p;
  p.original_len = t.numel();
  p.sign_seed = sign_seed;
  std::vector<double> rot = hadamard_rotate(t.values, sign_seed);
  auto [lo_it, hi_it] = std::minmax_element(rot.begin(), rot.end());
  p.lo = *lo_it;
  p.hi = *hi_it;
  p.levels.resize(rot.size());
  if (p.hi > p.lo) {
    const double scale = 255.0 / (p.hi - p.lo);
    for (std::size_t i = 0; i < rot.size(); ++i) {
      p.levels[i] =
          static_cast<std::uint8_t>(std::lround((rot[i] - p.lo) * scale));
    }
  }  // zero-width range: all levels stay 0 and decode returns the constant
  CompressedBlob blob;
  blob.payload = std::move(p);
  return blob;
}

std::vector<double> quant8_decode(const CompressedBlob& blob) {
  const auto& p = std::get<Quant8Payload>(blob.payload);
  std::vector<double> rot(p.levels.size());
  const double step = p.hi > p.lo ? (p.hi - p.lo) / 255.0 : 0.0;
  for (std::size_t i = 0; i < rot.size(); ++i) {
    rot[i] = p.lo + step * static_cast<double>(p.levels[i]);
  }
  return hadamard_inverse(rot, p.sign_seed, p.original_len);
}

DgcState make_dgc_state(const DgcConfig& config,
                        const std::vector<std::vector<std::size_t>>& shapes) {
  if (!(config.sparsity_ratio > 0.0 && config.sparsity_ratio <= 1.0)) {
    throw std::invalid_argument("dgc: sparsity_ratio must be in (0,1]");
  }
  if (!(config.clip_norm > 0.0)) {
    throw std::invalid_argument("dgc: clip_norm must be positive");
  }
  DgcState state;
  state.config = config;
  state.shapes = shapes;
  std::size_t total = 0;
  for (const auto& s : shapes) total += Tensor::numel_of(s);
  state.residual.assign(total, 0.0);
  state.velocity.assign(total, 0.0);
  return state;
}

CompressedBlob dgc_encode(const std::vector<Tensor>& grads, DgcState& state) {
  if (grads.size() != state.shapes.size()) {
    throw std::invalid_argument("dgc_encode: tensor count mismatch");
  }
  std::vector<double> flat;
  flat.reserve(state.residual.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape != state.shapes[i]) {
      throw std::invalid_argument("dgc_encode: tensor shape mismatch");
    }
    flat.insert(flat.end(), grads[i].values.begin(), grads[i].values.end());
  }
  const std::size_t n = flat.size();
  if (n != state.residual.size()) {
    throw std::invalid_argument("dgc_encode: state size mismatch");
  }

  // Global L2 clip.
  double sq = 0.0;
  for (double v : flat) sq += v * v;
  const double norm = std::sqrt(sq);
  if (std::isfinite(state.config.clip_norm) && norm > state.config.clip_norm) {
    const double f = state.config.clip_norm / norm;
    for (double& v : flat) v *= f;
  }

  // Momentum correction, then residual accumulation.
  for (std::size_t i = 0; i < n; ++i) {
    state.velocity[i] = state.config.momentum * state.velocity[i] + flat[i];
    state.residual[i] += state.velocity[i];
  }

  const std::size_t k = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::lround(state.config.sparsity_ratio * static_cast<double>(n))));
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k) - 1,
                   order.end(), [&](std::uint32_t a, std::uint32_t b) {
                     const double ma = std::fabs(state.residual[a]);
                     const double mb = std::fabs(state.residual[b]);
                     if (ma != mb) return ma > mb;
                     return a < b;  // ties to the lowest index
                   });
  order.resize(k);
  std::sort(order.begin(), order.end());

  TopKPayload p;
  p.original_len = n;
  p.indices = order;
  p.values.reserve(k);
  for (std::uint32_t idx : order) {
    p.values.push_back(state.residual[idx]);
    state.residual[idx] = 0.0;
  }
  CompressedBlob blob;
  blob.payload = std::move(p);
  return blob;
}

std::vector<Tensor> dgc_decode(
    const CompressedBlob& blob,
    const std::vector<std::vector<std::size_t>>& shapes) {
  const auto& p = std::get<TopKPayload>(blob.payload);
  std::size_t total = 0;
  for (const auto& s : shapes) total += Tensor::numel_of(s);
  if (total != p.original_len) {
    throw std::invalid_argument("dgc_decode: shape list mismatch");
  }
  std::vector<double> flat(total, 0.0);
  for (std::size_t i = 0; i < p.indices.size(); ++i) {
    if (p.indices[i] >= total) {
      throw std::invalid_argument("dgc_decode: index out of range");
    }
    flat[p.indices[i]] = p.values[i];
  }
  std::vector<Tensor> out;
  std::size_t off = 0;
  for (const auto& s : shapes) {
    const std::size_t n = Tensor::numel_of(s);
    out.emplace_back(s, std::vector<double>(flat.begin() + off,
                                            flat.begin() + off + n));
    off += n;
  }
  return out;
}

}  // namespace fedafd
