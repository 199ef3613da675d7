#include "vqtok/codebook.hpp"

#include "vqtok/serial.hpp"

#include <cmath>
#include <limits>

namespace vqtok {

CodebookState init_codebook(int k, int e, uint64_t seed) {
  if (k < 2) throw std::invalid_argument("init_codebook: k must be >= 2");
  if (e < 1) throw std::invalid_argument("init_codebook: e must be >= 1");
  CodebookState st;
  st.k = k;
  st.e = e;
  st.entries = Mat(k, e);
  Rng rng(seed);
  float stddev = 1.0f / std::sqrt(static_cast<float>(e));
  for (int i = 0; i < st.entries.size(); ++i) st.entries.data()[i] = rng.gaussian(0.0f, stddev);
  st.projection = Mat::Identity(e, e);
  return st;
}

std::vector<int> nearest_codes(const Mat& z, const Mat& codes) {
  if (z.cols() != codes.cols()) throw ShapeError("nearest_codes: dimension mismatch");
  const int n = static_cast<int>(z.rows());
  const int k = static_cast<int>(codes.rows());
  std::vector<int> out(n);
  if (n == 0) return out;

  // expanded form: d^2 = ||z||^2 - 2 z.c + ||c||^2; the z term is rank-free
  Eigen::VectorXf code_sqnorm(k);
  for (int j = 0; j < k; ++j) code_sqnorm(j) = codes.row(j).squaredNorm();
  float cn_max = code_sqnorm.maxCoeff();
  Mat dots = z * codes.transpose();  // n x k

  for (int i = 0; i < n; ++i) {
    float best = std::numeric_limits<float>::infinity();
    for (int j = 0; j < k; ++j) {
      float s = code_sqnorm(j) - 2.0f * dots(i, j);
      if (s < best) best = s;
    }
    // re-rank float32 near-ties exactly; margin covers the expanded-form
    // rounding error so the winner agrees with a double brute force
    float zn = z.row(i).squaredNorm();
    float margin = 3e-5f * (zn + cn_max + 1.0f);
    double best_d = std::numeric_limits<double>::infinity();
    int best_j = -1;
    for (int j = 0; j < k; ++j) {
      float s = code_sqnorm(j) - 2.0f * dots(i, j);
      if (s > best + margin) continue;
      double d = 0.0;
      for (int c = 0; c < z.cols(); ++c) {
        double diff = static_cast<double>(z(i, c)) - static_cast<double>(codes(j, c));
        d += diff * diff;
      }
      if (d < best_d) {  // strict: keeps the lowest index on exact ties
        best_d = d;
        best_j = j;
      }
    }
    out[i] = best_j;
  }
  return out;
}

QuantizationResult quantize(const CodebookState& state, const Mat& z_hat) {
  if (z_hat.cols() != state.e) throw ShapeError("quantize: z_hat column count != e");
  QuantizationResult res;
  res.quantized = Mat(z_hat.rows(), state.e);
  if (z_hat.rows() == 0) return res;

  Mat codes = state.projected();
  res.indices = nearest_codes(z_hat, codes);
  for (int i = 0; i < z_hat.rows(); ++i) res.quantized.row(i) = codes.row(res.indices[i]);

  float dist = (z_hat - res.quantized).rowwise().squaredNorm().sum() /
               static_cast<float>(z_hat.rows());
  res.codebook_loss = dist;
  res.commitment_loss = dist;
  return res;
}

Mat straight_through(const Mat& z_hat, const QuantizationResult& result) {
  if (z_hat.rows() != result.quantized.rows() || z_hat.cols() != result.quantized.cols())
    throw ShapeError("straight_through: shape mismatch");
  return result.quantized;
}

float quant_loss(const QuantizationResult& result, float beta) {
  if (beta < 0.0f) throw std::invalid_argument("quant_loss: beta must be >= 0");
  return result.codebook_loss + beta * result.commitment_loss;
}

UtilizationReport utilization(int k, std::span<const int> index_stream) {
  UtilizationReport rep;
  rep.histogram.assign(k, 0);
  for (int idx : index_stream) {
    if (idx < 0 || idx >= k) throw std::invalid_argument("utilization: index out of range");
    ++rep.histogram[idx];
  }
  rep.total_tokens = static_cast<int64_t>(index_stream.size());
  int64_t nonzero = 0;
  for (int64_t c : rep.histogram) nonzero += (c > 0);
  rep.ratio = static_cast<double>(nonzero) / static_cast<double>(k);
  return rep;
}

UtilizationReport utilization(const CodebookState& state, std::span<const int> index_stream) {
  return utilization(state.k, index_stream);
}

QuantizeVars quantize_on_tape(Tape& t, Var z_hat, Var projected_codebook) {
  auto idx =
      std::make_shared<std::vector<int>>(nearest_codes(t.val(z_hat), t.val(projected_codebook)));
  return quantize_on_tape_fixed(t, z_hat, projected_codebook, std::move(idx));
}

QuantizeVars quantize_on_tape_fixed(Tape& t, Var z_hat, Var projected_codebook,
                                    std::shared_ptr<std::vector<int>> indices) {
  QuantizeVars qv;
  qv.indices = std::move(indices);
  qv.quantized = t.gather_rows(projected_codebook, qv.indices);
  qv.codebook_loss = t.row_sqnorm_mean(t.sub(t.detach(z_hat), qv.quantized));
  qv.commitment_loss = t.row_sqnorm_mean(t.sub(z_hat, t.detach(qv.quantized)));
  return qv;
}

void write_codebook_segment(std::ostream& out, const CodebookState& state) {
  serial::write_magic(out, "VQRC");
  serial::write_pod<uint32_t>(out, kCodebookSegmentVersion);
  serial::write_pod<uint64_t>(out, static_cast<uint64_t>(state.k));
  serial::write_pod<uint64_t>(out, static_cast<uint64_t>(state.e));
  out.write(reinterpret_cast<const char*>(state.entries.data()),
            static_cast<std::streamsize>(sizeof(float) * state.entries.size()));
  out.write(reinterpret_cast<const char*>(state.projection.data()),
            static_cast<std::streamsize>(sizeof(float) * state.projection.size()));
}

CodebookState read_codebook_segment(std::istream& in) {
  serial::expect_magic(in, "VQRC", "codebook segment");
  uint32_t version = serial::read_pod<uint32_t>(in, "codebook version");
  if (version != kCodebookSegmentVersion)
    throw LoadError("unsupported codebook segment version " + std::to_string(version));
  uint64_t k = serial::read_pod<uint64_t>(in, "codebook k");
  uint64_t e = serial::read_pod<uint64_t>(in, "codebook e");
  if (k < 2 || e < 1) throw LoadError("codebook segment: invalid dimensions");
  CodebookState st;
  st.k = static_cast<int>(k);
  st.e = static_cast<int>(e);
  st.entries = Mat(st.k, st.e);
  in.read(reinterpret_cast<char*>(st.entries.data()),
          static_cast<std::streamsize>(sizeof(float) * st.entries.size()));
  st.projection = Mat(st.e, st.e);
  in.read(reinterpret_cast<char*>(st.projection.data()),
          static_cast<std::streamsize>(sizeof(float) * st.projection.size()));
  if (!in) throw LoadError("codebook segment: truncated payload");
  return st;
}

}  // namespace vqtok
