#include "vqtok/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vqtok {

double psnr_from_mse(double mse, double range) {
  if (mse <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(range * range / mse));
}

double psnr_pair(std::span<const float> x, std::span<const float> y, double range) {
  if (x.size() != y.size()) throw ShapeError("psnr: size mismatch");
  if (x.empty()) throw std::invalid_argument("psnr: empty input");
  double acc = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    acc += d * d;
  }
  return psnr_from_mse(acc / static_cast<double>(x.size()), range);
}

namespace {

size_t image_stride(const ImageBatch& img) {
  return static_cast<size_t>(img.h) * img.w * 3;
}

void require_same_batch(const ImageBatch& x, const ImageBatch& y, const char* what) {
  if (x.b != y.b || x.h != y.h || x.w != y.w) throw ShapeError(std::string(what) + ": batch shapes differ");
}

// channel-mean (luminance-equivalent) plane of one image
std::vector<double> luminance(const ImageBatch& img, int i) {
  std::vector<double> out(static_cast<size_t>(img.h) * img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      out[static_cast<size_t>(y) * img.w + x] =
          (img.at(i, y, x, 0) + img.at(i, y, x, 1) + img.at(i, y, x, 2)) / 3.0;
  return out;
}

double ssim_single(const ImageBatch& a, const ImageBatch& b, int index, double range) {
  constexpr int kWin = 7;
  if (a.h < kWin || a.w < kWin)
    throw std::invalid_argument("ssim: image smaller than the 7x7 window");
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  std::vector<double> x = luminance(a, index);
  std::vector<double> y = luminance(b, index);
  const int w = a.w;
  double total = 0.0;
  int windows = 0;
  for (int wy = 0; wy + kWin <= a.h; ++wy) {
    for (int wx = 0; wx + kWin <= a.w; ++wx) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      for (int dy = 0; dy < kWin; ++dy)
        for (int dx = 0; dx < kWin; ++dx) {
          double xv = x[static_cast<size_t>(wy + dy) * w + wx + dx];
          double yv = y[static_cast<size_t>(wy + dy) * w + wx + dx];
          sx += xv;
          sy += yv;
          sxx += xv * xv;
          syy += yv * yv;
          sxy += xv * yv;
        }
      const double n = kWin * kWin;
      double mx = sx / n, my = sy / n;
      double vx = sxx / n - mx * mx;
      double vy = syy / n - my * my;
      double cxy = sxy / n - mx * my;
      double val = ((2 * mx * my + c1) * (2 * cxy + c2)) /
                   ((mx * mx + my * my + c1) * (vx + vy + c2));
      total += val;
      ++windows;
    }
  }
  return total / windows;
}

}  // namespace

double psnr(const ImageBatch& x, const ImageBatch& y, double range) {
  require_same_batch(x, y, "psnr");
  if (x.b == 0) throw std::invalid_argument("psnr: empty batch");
  size_t stride = image_stride(x);
  double total = 0.0;
  for (int i = 0; i < x.b; ++i)
    total += psnr_pair({x.pixels.data() + i * stride, stride},
                       {y.pixels.data() + i * stride, stride}, range);
  return total / x.b;
}

double ssim(const ImageBatch& x, const ImageBatch& y, double range) {
  require_same_batch(x, y, "ssim");
  if (x.b == 0) throw std::invalid_argument("ssim: empty batch");
  double total = 0.0;
  for (int i = 0; i < x.b; ++i) total += ssim_single(x, y, i, range);
  return total / x.b;
}

ReconReport recon_report(const ImageBatch& x, const ImageBatch& y, double range) {
  require_same_batch(x, y, "recon_report");
  ReconReport rep;
  size_t stride = image_stride(x);
  for (int i = 0; i < x.b; ++i) {
    double p = psnr_pair({x.pixels.data() + i * stride, stride},
                         {y.pixels.data() + i * stride, stride}, range);
    double s = ssim_single(x, y, i, range);
    rep.per_image.emplace_back(p, s);
    rep.psnr_db += p;
    rep.ssim += s;
  }
  rep.psnr_db /= x.b;
  rep.ssim /= x.b;
  return rep;
}

std::vector<int> kmeans_assign(const Mat& features, std::span<const int64_t> ids, int n_clusters,
                               uint64_t seed, int iterations) {
  const int n = static_cast<int>(features.rows());
  if (static_cast<int>(ids.size()) != n) throw ShapeError("kmeans: id count mismatch");
  if (n_clusters < 1 || n_clusters > n)
    throw std::invalid_argument("kmeans: n_clusters must be in [1, n]");

  // iterate points in stable-id order so results are order-invariant
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return ids[a] < ids[b]; });

  // seeded init by identity: draw distinct positions in the sorted-id list
  Rng rng(seed);
  std::vector<int> chosen;
  std::vector<char> used(n, 0);
  while (static_cast<int>(chosen.size()) < n_clusters) {
    int pick = static_cast<int>(rng.below(static_cast<uint32_t>(n)));
    if (used[pick]) continue;
    used[pick] = 1;
    chosen.push_back(order[pick]);
  }
  Mat centroids(n_clusters, features.cols());
  for (int c = 0; c < n_clusters; ++c) centroids.row(c) = features.row(chosen[c]);

  std::vector<int> assign(n, 0);
  for (int it = 0; it < iterations; ++it) {
    for (int oi = 0; oi < n; ++oi) {
      int i = order[oi];
      double best = std::numeric_limits<double>::infinity();
      int best_c = 0;
      for (int c = 0; c < n_clusters; ++c) {
        double d = (features.row(i) - centroids.row(c)).cast<double>().squaredNorm();
        if (d < best) {
          best = d;
          best_c = c;
        }
      }
      assign[i] = best_c;
    }
    Mat sums = Mat::Zero(n_clusters, features.cols());
    std::vector<int> counts(n_clusters, 0);
    for (int oi = 0; oi < n; ++oi) {
      int i = order[oi];
      sums.row(assign[i]) += features.row(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < n_clusters; ++c)
      if (counts[c] > 0) centroids.row(c) = sums.row(c) / static_cast<float>(counts[c]);
  }
  return assign;
}

double purity(std::span<const int> assignments, std::span<const int> labels, int n_clusters) {
  if (assignments.size() != labels.size()) throw ShapeError("purity: size mismatch");
  if (assignments.empty()) throw std::invalid_argument("purity: empty input");
  int max_label = *std::max_element(labels.begin(), labels.end());
  std::vector<std::vector<int64_t>> table(n_clusters, std::vector<int64_t>(max_label + 1, 0));
  for (size_t i = 0; i < assignments.size(); ++i) {
    int a = assignments[i];
    if (a < 0 || a >= n_clusters) throw std::invalid_argument("purity: assignment out of range");
    ++table[a][labels[i]];
  }
  int64_t correct = 0;
  for (const auto& row : table) correct += *std::max_element(row.begin(), row.end());
  return static_cast<double>(correct) / static_cast<double>(assignments.size());
}

}  // namespace vqtok
