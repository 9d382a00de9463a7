#pragma once

#include <vector>

#include "deva/edg.hpp"
#include "test_support.hpp"

namespace deva::testing {

using edg::ActionUnit;
using edg::AUCandidate;
using edg::AUTrack;
using edg::kActionUnits;

// Brute-force candidate oracle: slide a three-frame window over every AU.
inline std::vector<AUCandidate> oracle_candidates(const AUTrack& t) {
  std::vector<AUCandidate> out;
  for (std::size_t a = 0; a < kActionUnits; ++a) {
    const auto au = static_cast<ActionUnit>(a);
    std::size_t total = 0;
    for (std::size_t f = 0; f < t.frames; ++f) total += t.is_active(f, au);
    for (std::size_t s = 0; s + 3 <= t.frames; ++s) {
      if (t.is_active(s, au) && t.is_active(s + 1, au) && t.is_active(s + 2, au)) {
        out.push_back({au, total, s});
        break;
      }
    }
  }
  return out;
}

// Selection-sort oracle for top-k.
inline std::vector<ActionUnit> oracle_top_k(std::vector<AUCandidate> c, std::size_t k) {
  std::vector<ActionUnit> out;
  while (!c.empty() && out.size() < k) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < c.size(); ++i) {
      if (c[i].duration > c[best].duration ||
          (c[i].duration == c[best].duration && c[i].au < c[best].au))
        best = i;
    }
    out.push_back(c[best].au);
    c.erase(c.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return out;
}

inline AUTrack random_track(Gen& gen) {
  AUTrack t(gen.index(1, 200));
  const double density = gen.uniform(0.0, 0.9);
  for (std::size_t a = 0; a < kActionUnits; ++a) {
    const double p = gen.coin(0.3) ? 0.0 : density;
    bool on = gen.coin(p);
    for (std::size_t f = 0; f < t.frames; ++f) {
      // Sticky chain so runs of several frames are common.
      if (gen.coin(0.3)) on = gen.coin(p);
      t.set(f, static_cast<ActionUnit>(a), on);
    }
  }
  return t;
}

}  // namespace deva::testing
