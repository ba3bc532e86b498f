#pragma once

// 8-bit PPM/PGM export.  Grayscale maps are min/max stretched and the
// stretch range is written next to the image as <path>.range.txt.

#include "rvt/geom.hpp"
#include "rvt/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

namespace rvt {

inline unsigned char to_byte(double x) {
  return static_cast<unsigned char>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0));
}

/// Channels 0..2 of `img`, values in [0, 1].
inline void write_ppm(const Image<double>& img, const std::string& path) {
  if (img.channels < 3) throw std::invalid_argument("write_ppm: need 3 channels");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path + "'");
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      for (int k = 0; k < 3; ++k) os.put(static_cast<char>(to_byte(img.at(r, c, k))));
}

/// One channel stretched to [0, 255] over its own min/max.
inline void write_pgm(const Image<double>& img, int channel, const std::string& path) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      lo = std::min(lo, img.at(r, c, channel));
      hi = std::max(hi, img.at(r, c, channel));
    }
  if (img.height == 0 || img.width == 0) lo = hi = 0.0;
  const double span = hi > lo ? hi - lo : 1.0;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path + "'");
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) os.put(static_cast<char>(to_byte((img.at(r, c, channel) - lo) / span)));
  std::ofstream(path + ".range.txt") << "min " << lo << "\nmax " << hi << "\n";
}

/// rgb.ppm, depth.pgm, x.pgm, y.pgm, z.pgm under `stem_`.
inline void write_view(const ViewImage& v, const std::string& stem) {
  write_ppm(v.rgb, stem + "_rgb.ppm");
  write_pgm(v.depth, 0, stem + "_depth.pgm");
  const char* axes[3] = {"x", "y", "z"};
  for (int k = 0; k < 3; ++k) write_pgm(v.xyz, k, stem + "_" + axes[k] + ".pgm");
}

/// rgb dimmed by half, predicted heatmap added to red and ground truth to
/// green, each scaled by its own maximum.
inline Image<double> heatmap_overlay(const ViewImage& v, const Image<double>& predicted, const Image<double>& truth) {
  Image<double> out(v.height, v.width, 3, 0.0);
  auto peak = [](const Image<double>& h) {
    double m = 0.0;
    for (double x : h.data) m = std::max(m, x);
    return m > 0.0 ? m : 1.0;
  };
  const double pm = peak(predicted), tm = peak(truth);
  for (int r = 0; r < v.height; ++r)
    for (int c = 0; c < v.width; ++c) {
      for (int k = 0; k < 3; ++k) out.at(r, c, k) = 0.5 * v.rgb.at(r, c, k);
      out.at(r, c, 0) = std::min(1.0, out.at(r, c, 0) + predicted.at(r, c) / pm);
      out.at(r, c, 1) = std::min(1.0, out.at(r, c, 1) + truth.at(r, c) / tm);
    }
  return out;
}

}  // namespace rvt
