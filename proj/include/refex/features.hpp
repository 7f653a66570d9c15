#pragma once

#include "refex/mat.hpp"

namespace refex {

/// Visual input triple for one region: target attribute vector o, global
/// scene context g, bounding-box geometry l = (x0, y0, x1, y1, area).
struct RegionFeatures {
  Mat o;
  Mat g;
  Mat l;

  int dim() const { return o.rows + g.rows + l.rows; }

  Mat concat() const {
    Mat out(dim(), 1);
    int r = 0;
    for (double x : o.a) out.a[r++] = x;
    for (double x : g.a) out.a[r++] = x;
    for (double x : l.a) out.a[r++] = x;
    return out;
  }
};

}  // namespace refex
