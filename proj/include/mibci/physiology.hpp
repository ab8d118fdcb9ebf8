#pragma once

// ERD radius/angle model and the asymmetry biomarker computed from it.

#include <cmath>
#include <stdexcept>

namespace mibci {

struct DegenerateState : std::domain_error {
  using std::domain_error::domain_error;
};

struct ErdPair {
  double left = 0.0;
  double right = 0.0;
};

/// Left/right ERD for a strength in [0, 1] and an orientation angle in
/// [0, pi/2]; `baseline` is the spontaneous desynchronization floor.
inline ErdPair erd_from_polar(double intensity, double angle, double baseline) {
  return {intensity * std::cos(angle) + baseline, intensity * std::sin(angle) + baseline};
}

/// (L - R) / (L + R).
inline double asymmetry_index(double erd_left, double erd_right) {
  const double denom = erd_left + erd_right;
  if (!(denom > 0.0)) throw DegenerateState("asymmetry_index: ERD sum must be positive");
  return (erd_left - erd_right) / denom;
}

inline double asymmetry_index(ErdPair erd) { return asymmetry_index(erd.left, erd.right); }

/// Which end of the feedback gauge rewards which hemisphere. `right` maps a
/// right-oriented ERD (angle pi/2) to the top feedback bin by negating the raw
/// index; `left` keeps the raw (L - R)/(L + R) sign.
enum class FeedbackPolarity { right, left };

inline double polarity_sign(FeedbackPolarity p) { return p == FeedbackPolarity::right ? -1.0 : 1.0; }

}  // namespace mibci
