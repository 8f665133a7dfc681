#pragma once

// Update-compression codecs. Downlink models go through a randomized
// Hadamard rotation followed by 8-bit uniform quantization; uplink updates
// go through top-k sparsification with momentum correction, residual
// accumulation and global L2 clipping. Raw passes doubles through untouched.
//
// Blob wire layout (little-endian, stable): 1-byte codec tag, then the
// codec's meta header, then the payload.
//   Raw:            u64 count | count * f64
//   Quant8Hadamard: u64 original_len | u64 sign_seed | f64 lo | f64 hi
//                   | u64 padded_len | padded_len * u8
//   TopKSparse:     u64 original_len | u64 k | k * u32 indices | k * f64
// The byte accounting used by the bandwidth clock is the documented wire
// cost per codec (see payload_size_bytes), which assumes tensor geometry is
// agreed out of band: Raw n*8; Quant8 padded_n*1 + 16; TopK k*12 + 8.

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "fedafd/tensor.hpp"

namespace fedafd {

enum class Codec : std::uint8_t { Raw = 0, Quant8Hadamard = 1, TopKSparse = 2 };

struct RawPayload {
  std::vector<double> values;
};

struct Quant8Payload {
  std::uint64_t original_len = 0;
  std::uint64_t sign_seed = 0;
  double lo = 0.0;  // min of the rotated vector
  double hi = 0.0;  // max of the rotated vector
  std::vector<std::uint8_t> levels;  // one byte per padded coordinate
};

struct TopKPayload {
  std::uint64_t original_len = 0;
  std::vector<std::uint32_t> indices;  // ascending
  std::vector<double> values;
};

struct CompressedBlob {
  std::variant<RawPayload, Quant8Payload, TopKPayload> payload;

  Codec codec() const { return static_cast<Codec>(payload.index()); }

  // Accounted wire size in bytes, exact and reproducible from the metadata.
  std::uint64_t payload_size_bytes() const;

  std::vector<std::uint8_t> serialize() const;
  static CompressedBlob deserialize(std::span<const std::uint8_t> bytes);
};

// y = (1/sqrt(n)) * H_n * (D * x) after zero-padding x to the next power of
// two; D is the seeded random +-1 diagonal. Orthonormal, self-inverse up to
// the sign flips.
std::vector<double> hadamard_rotate(std::span<const double> x,
                                    std::uint64_t sign_seed);
std::vector<double> hadamard_inverse(std::span<const double> y,
                                     std::uint64_t sign_seed,
                                     std::size_t original_len);

CompressedBlob raw_encode(const std::vector<double>& values);

// Rotate, then uniform 256-level quantization over the rotated [min, max].
// Per-coordinate round-trip error in rotated space <= (max - min) / 510.
CompressedBlob quant8_encode(const Tensor& t, std::uint64_t sign_seed);
std::vector<double> quant8_decode(const CompressedBlob& blob);

std::vector<double> raw_decode(const CompressedBlob& blob);

struct DgcConfig {
  double sparsity_ratio = 0.25;  // fraction of coordinates kept per round
  double clip_norm = 1.0;        // global L2 bound applied before momentum
  double momentum = 0.9;
};

// Per-client sparsifier memory over one flat coordinate space spanning a
// fixed list of tensor shapes. Must be rebuilt whenever the client's
// sub-model spec changes: the coordinates are not index-aligned across
// different sub-models.
struct DgcState {
  DgcConfig config;
  std::vector<std::vector<std::size_t>> shapes;
  std::vector<double> residual;  // unsent accumulated values
  std::vector<double> velocity;  // momentum accumulator
};

DgcState make_dgc_state(const DgcConfig& config,
                        const std::vector<std::vector<std::size_t>>& shapes);

// Clip -> velocity = m*velocity + grads -> residual += velocity -> emit the
// top (sparsity_ratio * N) residual coordinates by magnitude (ties to the
// lowest index) and zero them in the residual.
CompressedBlob dgc_encode(const std::vector<Tensor>& grads, DgcState& state);

// Dense reconstruction: zeros everywhere except the transmitted coordinates.
std::vector<Tensor> dgc_decode(const CompressedBlob& blob,
                               const std::vector<std::vector<std::size_t>>& shapes);

}  // namespace fedafd
