#include "mer/maskgen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <random>

#include "mer/error.hpp"
#include "mer/flawfind.hpp"

namespace mer {

namespace {

constexpr int kMaxIterations = 1000;
constexpr double kAim = 0.01;

// Paints pixels and remembers which ones were newly set so an element can be reverted.
class Canvas {
 public:
  explicit Canvas(int size) : mask(size, size) {}
  Mask mask;
  std::vector<std::size_t> fresh;
  std::size_t set_count = 0;

  void set(int y, int x) {
    if (y < 0 || x < 0 || y >= mask.height() || x >= mask.width()) return;
    const std::size_t i = static_cast<std::size_t>(y) * mask.width() + x;
    if (!mask.bits()[i]) {
      mask.bits()[i] = 1;
      fresh.push_back(i);
      ++set_count;
    }
  }
  void stamp_disc(const Disc& d) {
    const int r = static_cast<int>(std::ceil(d.radius));
    for (int y = static_cast<int>(std::floor(d.cy)) - r; y <= static_cast<int>(std::ceil(d.cy)) + r; ++y)
      for (int x = static_cast<int>(std::floor(d.cx)) - r; x <= static_cast<int>(std::ceil(d.cx)) + r; ++x)
        if (disc_covers(d, y, x)) set(y, x);
  }
  void stamp_segment(const Segment& s) {
    const double pad = s.thickness / 2 + 1;
    const int y0 = static_cast<int>(std::floor(std::min(s.y0, s.y1) - pad));
    const int y1 = static_cast<int>(std::ceil(std::max(s.y0, s.y1) + pad));
    const int x0 = static_cast<int>(std::floor(std::min(s.x0, s.x1) - pad));
    const int x1 = static_cast<int>(std::ceil(std::max(s.x0, s.x1) + pad));
    for (int y = std::max(0, y0); y <= std::min(mask.height() - 1, y1); ++y)
      for (int x = std::max(0, x0); x <= std::min(mask.width() - 1, x1); ++x)
        if (segment_covers(s, y, x)) set(y, x);
  }
  void begin() { fresh.clear(); }
  void revert() {
    for (std::size_t i : fresh) mask.bits()[i] = 0;
    set_count -= fresh.size();
    fresh.clear();
  }
};

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
double uniform_real(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Thick-brush random walk with 8-neighbour steps.
void dusk_stroke(Canvas& cv, std::mt19937_64& rng, double budget_px) {
  const int n = cv.mask.height();
  const int r = uniform_int(rng, 2, 8);
  int y = uniform_int(rng, 0, n - 1), x = uniform_int(rng, 0, n - 1);
  const int steps = std::clamp(static_cast<int>(budget_px / r), 1, 4 * n);
  static constexpr int dy[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
  static constexpr int dx[8] = {-1, 0, 1, -1, 1, -1, 0, 1};
  for (int s = 0; s < steps; ++s) {
    cv.stamp_disc({static_cast<double>(y), static_cast<double>(x), static_cast<double>(r)});
    const int k = uniform_int(rng, 0, 7);
    y = std::clamp(y + dy[k], 0, n - 1);
    x = std::clamp(x + dx[k], 0, n - 1);
  }
}

struct Rect {
  int y0, y1, x0, x1;  // inclusive
};

// Recomputes dilate(parent) XOR erode(parent) inside `rect`.
void update_ring(const Mask& parent, Mask& ring, int r, Rect rect) {
  const int h = parent.height(), w = parent.width();
  const int ey0 = std::max(0, rect.y0 - r), ey1 = std::min(h - 1, rect.y1 + r);
  const int ew = rect.x1 - rect.x0 + 1;
  // Row pass over the expanded rows, restricted to the rect's columns.
  const int rows = ey1 - ey0 + 1;
  std::vector<std::uint8_t> rmax(static_cast<std::size_t>(rows) * ew), rmin(rmax.size());
  for (int y = ey0; y <= ey1; ++y)
    for (int x = rect.x0; x <= rect.x1; ++x) {
      std::uint8_t mx = 0, mn = 1;
      for (int d = -r; d <= r; ++d) {
        const int xx = x + d;
        const std::uint8_t v = (xx < 0 || xx >= w) ? 2 : parent.at(y, xx);
        if (v == 2) {
          mn = std::min<std::uint8_t>(mn, 1);
        } else {
          mx = std::max(mx, v);
          mn = std::min(mn, v);
        }
      }
      rmax[static_cast<std::size_t>(y - ey0) * ew + (x - rect.x0)] = mx;
      rmin[static_cast<std::size_t>(y - ey0) * ew + (x - rect.x0)] = mn;
    }
  for (int y = rect.y0; y <= rect.y1; ++y)
    for (int x = rect.x0; x <= rect.x1; ++x) {
      std::uint8_t mx = 0, mn = 1;
      for (int d = -r; d <= r; ++d) {
        const int yy = y + d;
        if (yy < 0 || yy >= h) continue;  // outside counts as set for erosion, unset for dilation
        const std::size_t i = static_cast<std::size_t>(yy - ey0) * ew + (x - rect.x0);
        mx = std::max(mx, rmax[i]);
        mn = std::min(mn, rmin[i]);
      }
      ring.at(y, x) = mx ^ mn;
    }
}

}  // namespace

const char* family_name(MaskFamily f) {
  switch (f) {
    case MaskFamily::Dusk: return "dusk";
    case MaskFamily::Jelly: return "jelly";
    case MaskFamily::Droplet: return "droplet";
    case MaskFamily::Block: return "block";
    case MaskFamily::Line: return "line";
  }
  return "?";
}

MaskFamily parse_family(const std::string& name) {
  std::string lower;
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (MaskFamily f : all_families()) {
    if (lower == family_name(f)) return f;
  }
  throw ArgumentError("unknown mask family '" + name + "' (dusk, jelly, droplet, block, line)");
}

std::vector<MaskFamily> all_families() {
  return {MaskFamily::Dusk, MaskFamily::Jelly, MaskFamily::Droplet, MaskFamily::Block, MaskFamily::Line};
}

void MaskSpec::validate() const {
  if (!(coverage >= 0.05 && coverage <= 0.50)) throw ArgumentError("mask coverage must lie in [0.05, 0.50]");
  if (size < 16) throw ArgumentError("mask size must be at least 16");
}

bool disc_covers(const Disc& d, int y, int x) {
  const double ddy = y - d.cy, ddx = x - d.cx;
  return ddy * ddy + ddx * ddx <= d.radius * d.radius;
}

bool segment_covers(const Segment& s, int y, int x) {
  const double vy = s.y1 - s.y0, vx = s.x1 - s.x0;
  const double len2 = vy * vy + vx * vx;
  double t = len2 > 0 ? ((y - s.y0) * vy + (x - s.x0) * vx) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double py = s.y0 + t * vy - y, px = s.x0 + t * vx - x;
  const double half = s.thickness / 2;
  return py * py + px * px <= half * half;
}

double coverage_of(const Mask& mask) {
  return mask.size() ? static_cast<double>(mask.count()) / static_cast<double>(mask.size()) : 0.0;
}

GeneratedMask generate_mask_detailed(const MaskSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(spec.family) + 1);
  const int n = spec.size;
  const double total = static_cast<double>(n) * n;
  const double target = spec.coverage;
  Canvas cv(n);
  GeneratedMask out;
  out.ring_radius = spec.family == MaskFamily::Jelly ? uniform_int(rng, 4, 6) : 0;
  Mask ring(n, n);
  std::size_t ring_count = 0;
  double shrink = 1.0;

  auto coverage = [&]() {
    if (spec.family == MaskFamily::Jelly) return static_cast<double>(ring_count) / total;
    return static_cast<double>(cv.set_count) / total;
  };

  for (int it = 0; it < kMaxIterations; ++it) {
    out.iterations = it + 1;
    const double cov = coverage();
    if (std::abs(cov - target) <= kAim) break;
    if (cov > target + kAim) {
      throw GenerationError("mask coverage overshot to " + std::to_string(cov));
    }
    const double budget = std::max(1.0, (target - cov) * total * shrink);
    cv.begin();
    std::vector<Disc> new_discs;
    std::vector<Segment> new_segments;
    switch (spec.family) {
      case MaskFamily::Dusk:
        dusk_stroke(cv, rng, budget);
        break;
      case MaskFamily::Jelly:
        dusk_stroke(cv, rng, budget / (2.0 * out.ring_radius + 1.0));
        break;
      case MaskFamily::Droplet: {
        const int count = std::max(1, static_cast<int>(budget / 40.0));
        for (int k = 0; k < count; ++k) {
          Disc d{uniform_real(rng, 0, n - 1), uniform_real(rng, 0, n - 1), static_cast<double>(uniform_int(rng, 1, 4))};
          cv.stamp_disc(d);
          new_discs.push_back(d);
        }
        break;
      }
      case MaskFamily::Block: {
        const double fit = std::sqrt(budget / std::numbers::pi);
        double r = uniform_real(rng, 16.0, 48.0);
        r = std::max(1.0, std::min(r, fit));
        Disc d{uniform_real(rng, 0, n - 1), uniform_real(rng, 0, n - 1), r};
        cv.stamp_disc(d);
        new_discs.push_back(d);
        break;
      }
      case MaskFamily::Line: {
        const double t = uniform_int(rng, 1, 5);
        const double len = std::clamp(budget / t, 2.0, 1.5 * n);
        const double a = uniform_real(rng, 0.0, 2.0 * std::numbers::pi);
        const double y0 = uniform_real(rng, 0, n - 1), x0 = uniform_real(rng, 0, n - 1);
        Segment s{y0, x0, y0 + len * std::sin(a), x0 + len * std::cos(a), t};
        cv.stamp_segment(s);
        new_segments.push_back(s);
        break;
      }
    }
    if (spec.family == MaskFamily::Jelly) {
      if (cv.fresh.empty()) continue;
      Rect rect{n, -1, n, -1};
      for (std::size_t i : cv.fresh) {
        const int y = static_cast<int>(i / n), x = static_cast<int>(i % n);
        rect = {std::min(rect.y0, y), std::max(rect.y1, y), std::min(rect.x0, x), std::max(rect.x1, x)};
      }
      const int r = out.ring_radius;
      rect = {std::max(0, rect.y0 - r), std::min(n - 1, rect.y1 + r), std::max(0, rect.x0 - r),
              std::min(n - 1, rect.x1 + r)};
      Mask saved = ring;
      update_ring(cv.mask, ring, r, rect);
      ring_count = ring.count();
      if (static_cast<double>(ring_count) / total > target + kAim) {
        ring = std::move(saved);
        ring_count = ring.count();
        cv.revert();
        shrink *= 0.5;
        continue;
      }
    } else if (coverage() > target + kAim) {
      cv.revert();
      shrink *= 0.5;
      continue;
    }
    shrink = std::min(1.0, shrink * 2.0);
    out.discs.insert(out.discs.end(), new_discs.begin(), new_discs.end());
    out.segments.insert(out.segments.end(), new_segments.begin(), new_segments.end());
  }
  if (std::abs(coverage() - target) > kAim) {
    throw GenerationError("mask coverage " + std::to_string(coverage()) + " not reached for target " +
                          std::to_string(target) + " after " + std::to_string(kMaxIterations) + " iterations");
  }
  if (spec.family == MaskFamily::Jelly) {
    out.parent = cv.mask;
    out.mask = std::move(ring);
  } else {
    out.mask = cv.mask;
  }
  return out;
}

Mask generate_mask(const MaskSpec& spec) { return generate_mask_detailed(spec).mask; }

}  // namespace mer
