#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <system_error>

#include "seaseg/datapipe.hpp"
#include "seaseg/error.hpp"
#include "seaseg/parallel.hpp"

namespace seaseg {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kMinShipArea = 8;
constexpr int kShipGap = 2;
constexpr double kCountDecay = 0.6;
constexpr int kPlacementTries = 400;
// Up to this many clutter blobs per 32 pixels of image side.
constexpr int kClutterPer32 = 2;

// Tags that keep the generator's random streams apart.
constexpr std::uint64_t kTagPlan = 0x706c616eULL;
constexpr std::uint64_t kTagImage = 0x696d6167ULL;

int sample_ship_count(Rng& rng, int max_ships) {
  double total = 0.0;
  for (int k = 1; k <= max_ships; ++k) total += std::pow(kCountDecay, k);
  double u = uniform01(rng) * total;
  for (int k = 1; k <= max_ships; ++k) {
    u -= std::pow(kCountDecay, k);
    if (u < 0.0) return k;
  }
  return max_ships;
}

// Pixels whose centres fall inside the rotated rectangle, or empty when it leaves the image.
std::vector<int> raster_ship(int size, double cy, double cx, double length, double width, double angle) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double hl = length / 2, hw = width / 2;
  const std::array<double, 2> su{-1, 1};
  double y_lo = size, y_hi = 0, x_lo = size, x_hi = 0;
  for (double a : su) {
    for (double b : su) {
      const double x = cx + a * hl * ca - b * hw * sa;
      const double y = cy + a * hl * sa + b * hw * ca;
      if (x < 0 || y < 0 || x > size || y > size) return {};
      y_lo = std::min(y_lo, y), y_hi = std::max(y_hi, y);
      x_lo = std::min(x_lo, x), x_hi = std::max(x_hi, x);
    }
  }
  std::vector<int> pixels;
  const int r0 = std::max(0, static_cast<int>(std::floor(y_lo)));
  const int r1 = std::min(size - 1, static_cast<int>(std::ceil(y_hi)));
  const int c0 = std::max(0, static_cast<int>(std::floor(x_lo)));
  const int c1 = std::min(size - 1, static_cast<int>(std::ceil(x_hi)));
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const double dx = c + 0.5 - cx, dy = r + 0.5 - cy;
      const double u = dx * ca + dy * sa, v = -dx * sa + dy * ca;
      if (std::abs(u) <= hl && std::abs(v) <= hw) pixels.push_back(r * size + c);
    }
  }
  return pixels;
}

bool single_component(const BinaryMask& mask) { return connected_components(mask, 8).instances.size() == 1; }

// Marks every pixel within Chebyshev distance kShipGap of the ship.
void block_around(std::vector<std::uint8_t>& blocked, const std::vector<int>& pixels, int size) {
  for (int p : pixels) {
    const int r = p / size, c = p % size;
    for (int dr = -kShipGap; dr <= kShipGap; ++dr) {
      for (int dc = -kShipGap; dc <= kShipGap; ++dc) {
        const int rr = r + dr, cc = c + dc;
        if (rr >= 0 && rr < size && cc >= 0 && cc < size) blocked[rr * size + cc] = 1;
      }
    }
  }
}

std::vector<BinaryMask> place_ships(const SynthConfig& cfg, Rng& rng) {
  const int size = cfg.size;
  const int wanted = sample_ship_count(rng, cfg.max_ships);
  std::vector<std::uint8_t> blocked(static_cast<std::size_t>(size) * size, 0);
  std::vector<BinaryMask> ships;
  for (int tries = 0; static_cast<int>(ships.size()) < wanted;) {
    if (++tries > kPlacementTries) {
      // A crowded image keeps the ships it has; the first ship must always fit.
      if (!ships.empty()) break;
      if (tries > 100 * kPlacementTries) throw RuntimeError("synth: could not place a ship");
    }
    const double length = uniform_real(rng, cfg.min_length, cfg.max_length) * size;
    const double width = std::max(2.0, length * uniform_real(rng, 0.25, 0.45));
    const double angle = uniform_real(rng, 0.0, kPi);
    const double cy = uniform_real(rng, 0.0, size), cx = uniform_real(rng, 0.0, size);
    std::vector<int> pixels = raster_ship(size, cy, cx, length, width, angle);
    if (static_cast<int>(pixels.size()) < kMinShipArea) continue;
    if (std::any_of(pixels.begin(), pixels.end(), [&](int p) { return blocked[p] != 0; })) continue;
    BinaryMask mask(size, size);
    for (int p : pixels) mask.set(p / size, p % size);
    if (!single_component(mask)) continue;
    block_around(blocked, pixels, size);
    ships.push_back(std::move(mask));
    tries = 0;
  }
  return ships;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

Image8 render(const SynthConfig& cfg, const std::vector<BinaryMask>& ships, Rng& rng) {
  const int size = cfg.size;
  const std::array<double, 3> sea{uniform_real(rng, 10, 30), uniform_real(rng, 30, 55), uniform_real(rng, 45, 80)};
  struct Wave {
    double ky, kx, phase, amp;
  };
  std::array<Wave, 2> waves{};
  for (auto& w : waves) {
    const double period = uniform_real(rng, 0.5, 1.0) * size;
    const double dir = uniform_real(rng, 0.0, 2 * kPi);
    w = {2 * kPi * std::sin(dir) / period, 2 * kPi * std::cos(dir) / period, uniform_real(rng, 0.0, 2 * kPi),
         uniform_real(rng, 2.0, 5.0)};
  }
  // Soft bright blobs (whitecaps, haze) that are not ships.
  struct Blob {
    double cy, cx, sigma, amp;
  };
  std::vector<Blob> clutter(static_cast<std::size_t>(uniform_index(rng, static_cast<std::uint64_t>(kClutterPer32 * size / 32 + 1))));
  for (auto& b : clutter) {
    b = {uniform_real(rng, 0, size), uniform_real(rng, 0, size), uniform_real(rng, 1.0, 3.5), uniform_real(rng, 60, 150)};
  }
  Image8 img(size, size, 3);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      double swell = 0.0;
      for (const auto& w : waves) swell += w.amp * std::sin(w.ky * r + w.kx * c + w.phase);
      for (const auto& b : clutter) {
        const double d2 = (r + 0.5 - b.cy) * (r + 0.5 - b.cy) + (c + 0.5 - b.cx) * (c + 0.5 - b.cx);
        swell += b.amp * std::exp(-d2 / (2 * b.sigma * b.sigma));
      }
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = to_byte(sea[ch] + swell + 3.0 * standard_normal(rng));
    }
  }
  for (const auto& ship : ships) {
    const double base = uniform_real(rng, 120, 235);
    const std::array<double, 3> tint{uniform_real(rng, -10, 10), uniform_real(rng, -10, 10), uniform_real(rng, -10, 10)};
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        if (!ship.get(r, c)) continue;
        for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = to_byte(base + tint[ch] + 5.0 * standard_normal(rng));
      }
    }
  }
  return img;
}

}  // namespace

void SynthConfig::validate() const {
  if (n < 1) throw ValidationError("synth: n must be at least 1");
  if (!(empty_frac >= 0.0 && empty_frac <= 1.0)) throw ValidationError("synth: empty fraction must be in [0, 1]");
  if (size < 16 || size % 16 != 0) {
    throw ValidationError("synth: size must be a positive multiple of 16, got " + std::to_string(size));
  }
  if (max_ships < 1) throw ValidationError("synth: max ships must be at least 1");
  if (!(min_length > 0.0 && min_length <= max_length && max_length <= 1.0)) {
    throw ValidationError("synth: ship length fractions must satisfy 0 < min <= max <= 1");
  }
}

std::string synth_image_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img%05d", index);
  return buf;
}

std::vector<bool> synth_empty_plan(const SynthConfig& config) {
  config.validate();
  const auto n_empty = static_cast<std::size_t>(std::llround(config.n * config.empty_frac));
  std::vector<bool> plan(static_cast<std::size_t>(config.n), false);
  std::fill(plan.begin(), plan.begin() + static_cast<std::ptrdiff_t>(n_empty), true);
  Rng rng(derive_seed(config.seed, {kTagPlan}));
  shuffle(plan, rng);
  return plan;
}

SynthImage synth_image(const SynthConfig& config, int index, bool empty) {
  Rng rng(derive_seed(config.seed, {kTagImage, static_cast<std::uint64_t>(index)}));
  SynthImage out;
  out.image_id = synth_image_id(index);
  out.instances.height = out.instances.width = config.size;
  if (!empty) out.instances.instances = place_ships(config, rng);
  out.image = render(config, out.instances.instances, rng);
  out.instances.validate();
  return out;
}

Manifest synth_generate(const SynthConfig& config, const std::filesystem::path& out, int workers) {
  const std::vector<bool> plan = synth_empty_plan(config);
  const auto images_dir = out / "images";
  std::error_code ec;
  std::filesystem::create_directories(images_dir, ec);
  if (ec) throw RuntimeError("cannot create " + images_dir.string() + ": " + ec.message());

  std::vector<SynthImage> images(plan.size());
  parallel_for(plan.size(), workers, [&](std::size_t i) {
    images[i] = synth_image(config, static_cast<int>(i), plan[i]);
    write_png(images_dir / (images[i].image_id + ".png"), images[i].image);
    images[i].image = Image8();
  });
  Manifest manifest;
  for (const auto& s : images) manifest.add_image(s.image_id, s.instances);
  write_manifest(out / "manifest.csv", manifest);
  return manifest;
}

}  // namespace seaseg
