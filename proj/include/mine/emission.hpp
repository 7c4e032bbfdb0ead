#pragma once

#include "mine/rng.hpp"

#include <cstddef>

namespace mine::quantile {

// Base-year emission distribution: eta1 selects normal (0) or lognormal (1),
// eta2 is the mean in emission units, eta3 the scale.
struct Eta {
  int eta1 = 0;
  double eta2 = 0.0;
  double eta3 = 1.0;

  void validate() const;
};

struct EtaRanges {
  double loc_lo = 7.0, loc_hi = 11.0;           // GtC/yr
  double normal_sd_lo = 0.1, normal_sd_hi = 1.0;  // GtC/yr
  double log_sd_lo = 0.05, log_sd_hi = 0.3;      // sd of the underlying normal

  void validate() const;
  Eta sample(Rng& rng) const;
};

// Normal draws are truncated at zero by resampling; lognormal draws are
// exp(eta3 Z) shifted additively so the mean is eta2. `resamples` (if given)
// counts rejected draws.
double sample_e0(const Eta& eta, Rng& rng, std::size_t* resamples = nullptr);

}  // namespace mine::quantile
