#pragma once

#include "vqtok/nn.hpp"
#include "vqtok/rng.hpp"
#include "vqtok/tape.hpp"

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

namespace vqtok {

/// Projected vector quantizer state: a fixed-size codebook matrix mapped
/// through a shared learnable square projection. By default only the
/// projection trains; the raw entries stay at their Gaussian init, so every
/// entry keeps moving with the feature distribution through the shared map.
struct CodebookState {
  Mat entries;     // k x e
  Mat projection;  // e x e
  int k = 0;
  int e = 0;
  float beta = 0.25f;
  bool train_entries = false;

  Mat projected() const { return entries * projection; }
};

/// entries ~ N(0, 1/sqrt(e)) i.i.d. from the seeded generator, projection
/// initialized to identity (projected codebook == entries at init).
CodebookState init_codebook(int k, int e, uint64_t seed);

struct QuantizationResult {
  std::vector<int> indices;  // one per token, in [0, k)
  Mat quantized;             // n x e, rows copied from the projected codebook
  float codebook_loss = 0.0f;
  float commitment_loss = 0.0f;
};

/// Nearest projected-codebook row per input row by squared L2 distance,
/// lowest index on ties. Scores run through the expanded form in float32
/// (one GEMM); candidates within a float32 error margin of the minimum are
/// re-ranked with exact double-precision distances, so the result matches a
/// brute-force double argmin.
std::vector<int> nearest_codes(const Mat& z, const Mat& codes);

/// Quantize rows of z_hat (n x e) against the projected codebook. Both loss
/// terms equal the mean over tokens of the squared token-to-code distance;
/// they differ only in gradient routing, which lives on the tape path.
QuantizationResult quantize(const CodebookState& state, const Mat& z_hat);

/// Value-level straight-through output: equals result.quantized. The
/// gradient-carrying version is Tape::straight_through.
Mat straight_through(const Mat& z_hat, const QuantizationResult& result);

/// codebook_loss + beta * commitment_loss.
float quant_loss(const QuantizationResult& result, float beta);

struct UtilizationReport {
  std::vector<int64_t> histogram;  // length k
  double ratio = 0.0;              // nonzero bins / k
  int64_t total_tokens = 0;
};

UtilizationReport utilization(const CodebookState& state, std::span<const int> index_stream);
UtilizationReport utilization(int k, std::span<const int> index_stream);

/// Training-path quantization: indices computed from current values, then
/// gather + loss nodes wired so codebook_loss reaches the projection (and the
/// entries when they train) while commitment_loss reaches only the encoder
/// side of z_hat.
struct QuantizeVars {
  std::shared_ptr<std::vector<int>> indices;
  Var quantized;
  Var codebook_loss;
  Var commitment_loss;
};

QuantizeVars quantize_on_tape(Tape& t, Var z_hat, Var projected_codebook);

/// Same wiring with the code selection pinned by the caller. Gradient checks
/// use this: the straight-through estimator differentiates the smooth branch
/// where the selected codes do not move.
QuantizeVars quantize_on_tape_fixed(Tape& t, Var z_hat, Var projected_codebook,
                                    std::shared_ptr<std::vector<int>> indices);

// ---- checkpoint segment ----
// magic "VQRC", version u32, k u64, e u64 (little endian), then row-major
// float32 for entries followed by projection.

inline constexpr uint32_t kCodebookSegmentVersion = 1;

void write_codebook_segment(std::ostream& out, const CodebookState& state);
CodebookState read_codebook_segment(std::istream& in);

/// Exact on-disk size of a segment: 24-byte header + (k*e + e*e) floats.
inline uint64_t codebook_segment_size(uint64_t k, uint64_t e) {
  return 24 + 4 * (k * e + e * e);
}

}  // namespace vqtok
