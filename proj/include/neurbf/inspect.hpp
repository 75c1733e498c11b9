#pragma once

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "neurbf/image.hpp"
#include "neurbf/rbf.hpp"

namespace neurbf {

/// Copy of `img` dimmed to 50%, with the unit-Mahalanobis contour of every shape drawn in yellow
/// and its center marked.
inline ImageBuffer ellipse_overlay(const ImageBuffer& img, std::span<const Point<2>> centers,
                                   std::span<const SymMatrix<2>> shapes) {
  require(centers.size() == shapes.size(), ErrorKind::logic, "ellipse_overlay: centers/shapes count mismatch");
  ImageBuffer out = img;
  for (double& v : out.data) v *= 0.5;
  const double W = img.width, H = img.height;
  auto plot = [&](double px, double py) {
    const long c = std::lround(std::floor(px)), r = std::lround(std::floor(py));
    if (r < 0 || c < 0 || r >= img.height || c >= img.width) return;
    out.at(static_cast<int>(r), static_cast<int>(c), 0) = 1.0;
    out.at(static_cast<int>(r), static_cast<int>(c), 1) = 0.9;
    out.at(static_cast<int>(r), static_cast<int>(c), 2) = 0.0;
  };
  for (std::size_t i = 0; i < centers.size(); ++i) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(shapes[i].dense());
    const Eigen::Vector2d l = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    const Eigen::Matrix2d e = eig.eigenvectors();
    const double radius_px = std::max(l[0], l[1]) * std::max(W, H);
    const int steps = std::clamp(static_cast<int>(std::ceil(2.0 * std::numbers::pi * radius_px * 2.0)), 16, 4096);
    for (int s = 0; s < steps; ++s) {
      const double t = 2.0 * std::numbers::pi * s / steps;
      const Eigen::Vector2d p = l[0] * std::cos(t) * e.col(0) + l[1] * std::sin(t) * e.col(1);
      plot((centers[i][0] + p[0]) * W, (centers[i][1] + p[1]) * H);
    }
    plot(centers[i][0] * W, centers[i][1] * H);
  }
  return out;
}

}  // namespace neurbf
