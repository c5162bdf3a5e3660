#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mer/image.hpp"

namespace mer {

enum class MaskFamily { Dusk, Jelly, Droplet, Block, Line };

const char* family_name(MaskFamily f);
MaskFamily parse_family(const std::string& name);  // case-insensitive
std::vector<MaskFamily> all_families();

struct MaskSpec {
  MaskFamily family = MaskFamily::Dusk;
  double coverage = 0.2;  // in [0.05, 0.50]
  int size = 256;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Disc {
  double cy = 0, cx = 0, radius = 0;
};

struct Segment {
  double y0 = 0, x0 = 0, y1 = 0, x1 = 0, thickness = 1;
};

struct GeneratedMask {
  Mask mask;
  Mask parent;         // JELLY: the Dusk mask the ring was cut from
  int ring_radius = 0; // JELLY: structuring-element radius
  std::vector<Disc> discs;        // DROPLET, BLOCK
  std::vector<Segment> segments;  // LINE
  int iterations = 0;
};

// Coverage is driven to within 0.01 of the target (tolerance 0.02);
// GenerationError after 1000 growth iterations.
GeneratedMask generate_mask_detailed(const MaskSpec& spec);
Mask generate_mask(const MaskSpec& spec);

double coverage_of(const Mask& mask);

// Pixel (y, x) lies within distance thickness/2 of the segment.
bool segment_covers(const Segment& s, int y, int x);
bool disc_covers(const Disc& d, int y, int x);

}  // namespace mer
