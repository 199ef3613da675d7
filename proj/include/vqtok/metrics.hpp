#pragma once

#include "vqtok/datakit.hpp"
#include "vqtok/tape.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace vqtok {

inline constexpr double kPsnrCapDb = 99.0;

/// 10*log10(range^2 / mse), capped at 99 dB (the identical-image convention).
double psnr_from_mse(double mse, double range);

/// Peak signal-to-noise ratio for one aligned pair. `range` is the dynamic
/// range of the encoding: 2.0 for [-1,1] images, 1.0 for unit-range data.
double psnr_pair(std::span<const float> x, std::span<const float> y, double range);

/// Mean over the batch of per-image PSNRs.
double psnr(const ImageBatch& x, const ImageBatch& y, double range = 2.0);

/// Mean local SSIM with a 7x7 uniform window over the channel-mean image,
/// standard stabilizers for the given dynamic range, valid windows only.
double ssim(const ImageBatch& x, const ImageBatch& y, double range = 2.0);

struct ReconReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::vector<std::pair<double, double>> per_image;  // (psnr, ssim)
};

ReconReport recon_report(const ImageBatch& x, const ImageBatch& y, double range = 2.0);

// ---- clustering ----

/// Lloyd iterations with seeded initialization by sample identity: the
/// starting centroids are the rows whose stable ids are drawn from the seeded
/// generator, so permuting row order never changes the result. Ties go to the
/// lowest centroid index. Returns assignments in input row order.
std::vector<int> kmeans_assign(const Mat& features, std::span<const int64_t> ids, int n_clusters,
                               uint64_t seed, int iterations = 25);

/// Fraction of points whose cluster's majority label matches their own.
double purity(std::span<const int> assignments, std::span<const int> labels, int n_clusters);

}  // namespace vqtok
