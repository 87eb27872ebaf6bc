#pragma once

#include <vector>

namespace symq {

struct Point {
  double x1;
  double x2;
  double y;
};

/// The observed evidence for one regression instance.
using PointSet = std::vector<Point>;

}  // namespace symq
