#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "seaseg/datapipe.hpp"
#include "seaseg/error.hpp"
#include "test_util.hpp"

namespace seaseg {
namespace {

namespace fs = std::filesystem;

using testing::slurp;

// Two directories in one test need distinct names.
struct TempDir : testing::TempDir {
  TempDir() : testing::TempDir("_" + std::to_string(counter++)) {}
  static inline int counter = 0;
};

Image8 solid(int h, int w, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image8 img(h, w, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) img.at(y, x, 0) = r, img.at(y, x, 1) = g, img.at(y, x, 2) = b;
  }
  return img;
}

TEST(Normalize, ChannelExamples) {
  const Tensor<float> t = normalize(solid(1, 1, 255, 0, 0));
  EXPECT_NEAR(t[0], (1 - 0.485) / 0.229, 1e-6);
  EXPECT_NEAR(t[0], 2.2489, 1e-4);
  EXPECT_NEAR(t[2], -1.8044, 1e-4);
}

TEST(Normalize, MonotonePerChannel) {
  for (int ch = 0; ch < 3; ++ch) {
    float prev = -1e9f;
    for (int v = 0; v < 256; ++v) {
      Image8 img(1, 1, 3);
      img.at(0, 0, ch) = static_cast<std::uint8_t>(v);
      const float x = normalize(img)[ch];
      EXPECT_GT(x, prev);
      prev = x;
    }
  }
}

TEST(Normalize, RejectsWrongChannelCount) {
  EXPECT_THROW(normalize(Image8(2, 2, 1)), ShapeError);
  EXPECT_THROW(normalize_unit(Tensor<float>(Shape{4, 2, 2})), ShapeError);
}

TEST(Normalize, DenormalizeInverts) {
  Rng rng(3);
  Tensor<float> unit(Shape{3, 5, 7});
  for (std::int64_t i = 0; i < unit.numel(); ++i) unit[i] = static_cast<float>(uniform01(rng));
  const Tensor<float> back = denormalize(normalize_unit(unit));
  const Tensor<float> fwd = normalize_unit(denormalize(unit));
  for (std::int64_t i = 0; i < unit.numel(); ++i) {
    EXPECT_NEAR(back[i], unit[i], 1e-6);
    EXPECT_NEAR(fwd[i], unit[i], 1e-6);
  }
}

TEST(Png, RoundTrip) {
  TempDir dir;
  Rng rng(1);
  Image8 img(5, 9, 3);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(uniform_index(rng, 256));
  write_png(dir.path() / "a.png", img);
  EXPECT_EQ(read_png(dir.path() / "a.png"), img);
}

TEST(Png, ErrorsAreRuntime) {
  TempDir dir;
  std::ofstream(dir.path() / "bad.png") << "not a png";
  EXPECT_THROW(read_png(dir.path() / "bad.png"), RuntimeError);
  EXPECT_THROW(read_png(dir.path() / "missing.png"), RuntimeError);
  EXPECT_THROW(write_png(dir.path() / "no" / "dir.png", Image8(2, 2, 3)), RuntimeError);
}

TEST(Unit, ByteRoundTrip) {
  Image8 img(2, 3, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<std::uint8_t>(i * 13);
  EXPECT_EQ(from_unit(to_unit(img)), img);
  EXPECT_FLOAT_EQ(to_unit(img)[1 * 6 + 0], 13.0f / 255.0f);  // channel 1 of pixel (0,0)
}

TEST(Resize, BilinearAveragesOnHalving) {
  Tensor<float> t(Shape{1, 2, 2});
  t[0] = 0, t[1] = 1, t[2] = 2, t[3] = 3;
  EXPECT_FLOAT_EQ(resize_bilinear(t, 1, 1)[0], 1.5f);
  const Tensor<float> up = resize_bilinear(t, 4, 4);
  EXPECT_FLOAT_EQ(up[0], 0.0f);  // clamped corner
  EXPECT_FLOAT_EQ(up[15], 3.0f);
  EXPECT_FLOAT_EQ(up[1], 0.25f);  // half-pixel centre 0.75 of a column pair
}

TEST(Resize, ConstantAndIdentity) {
  Tensor<float> t(Shape{3, 5, 6}, 0.3f);
  const Tensor<float> r = resize_bilinear(t, 7, 4);
  for (std::int64_t i = 0; i < r.numel(); ++i) EXPECT_FLOAT_EQ(r[i], 0.3f);
  t[4] = 1.0f;
  EXPECT_EQ(resize_bilinear(t, 5, 6), t);
}

TEST(Resize, NearestMask) {
  BinaryMask m(2, 2);
  m.set(0, 1);
  const BinaryMask up = resize_nearest(m, 4, 4);
  EXPECT_EQ(up.popcount(), 4);
  EXPECT_TRUE(up.get(0, 2) && up.get(1, 3));
  EXPECT_EQ(resize_nearest(up, 2, 2), m);
}

TEST(Synth, ExactEmptyAllocation) {
  SynthConfig cfg;
  cfg.n = 100;
  cfg.empty_frac = 0.6;
  const auto plan = synth_empty_plan(cfg);
  EXPECT_EQ(std::count(plan.begin(), plan.end(), true), 60);
  cfg.seed = 9;
  EXPECT_NE(synth_empty_plan(cfg), plan);
}

TEST(Synth, CorpusContract) {
  TempDir dir;
  SynthConfig cfg;
  cfg.n = 100;
  cfg.size = 64;
  cfg.seed = 5;
  const Manifest m = synth_generate(cfg, dir.path());
  ASSERT_EQ(m.image_ids().size(), 100u);
  int empty = 0;
  for (int i = 0; i < cfg.n; ++i) {
    const std::string id = synth_image_id(i);
    ASSERT_TRUE(m.contains(id));
    const int k = m.ship_count(id);
    EXPECT_LE(k, cfg.max_ships);
    empty += k == 0;
    const InstanceSet inst = m.instances(id, 64, 64);  // validates disjointness
    // Ships are separated by a gap, so components of the union recover them.
    EXPECT_EQ(connected_components(inst.union_mask()).instances.size(), inst.instances.size());
    for (const auto& s : inst.instances) {
      EXPECT_GE(s.popcount(), 8);
      EXPECT_EQ(connected_components(s).instances.size(), 1u);
    }
    const Image8 img = read_png(dir.path() / "images" / (id + ".png"));
    EXPECT_EQ(img.height, 64);
    EXPECT_EQ(img.channels, 3);
  }
  EXPECT_EQ(empty, 60);
  EXPECT_EQ(read_manifest(dir.path() / "manifest.csv").rows(), m.rows());
}

TEST(Synth, ShipsStandOutAndClutterIsSoft) {
  SynthConfig cfg;
  cfg.seed = 2;
  int with_clutter = 0;
  for (int i = 0; i < 20; ++i) {
    const SynthImage s = synth_image(cfg, i, i % 2 == 0);
    const BinaryMask u = s.instances.union_mask();
    std::vector<int> sea;
    double ship_sum = 0;
    for (int r = 0; r < cfg.size; ++r) {
      for (int c = 0; c < cfg.size; ++c) {
        const int v = s.image.at(r, c, 0);
        if (u.get(r, c)) {
          ship_sum += v;
        } else {
          sea.push_back(v);
        }
      }
    }
    std::sort(sea.begin(), sea.end());
    const int median = sea[sea.size() / 2];
    if (u.popcount() > 0) {
      EXPECT_GT(ship_sum / u.popcount(), median + 60);
    }
    with_clutter += sea.back() > median + 40;
  }
  EXPECT_GE(with_clutter, 5);
}

TEST(Synth, ShipCountsCoverTheRange) {
  SynthConfig cfg;
  cfg.size = 128;
  std::set<std::size_t> counts;
  for (int i = 0; i < 300; ++i) counts.insert(synth_image(cfg, i, false).instances.instances.size());
  EXPECT_EQ(*counts.begin(), 1u);
  EXPECT_GE(*counts.rbegin(), 6u);
}

TEST(Synth, SameSeedByteIdentical) {
  TempDir a, b;
  fs::create_directories(a.path() / "x");
  SynthConfig cfg;
  cfg.n = 12;
  cfg.size = 32;
  cfg.seed = 77;
  synth_generate(cfg, a.path() / "x");
  synth_generate(cfg, b.path(), 3);
  for (const auto& name : {std::string("manifest.csv"), std::string("images/img00000.png"),
                           std::string("images/img00011.png")}) {
    EXPECT_EQ(slurp(a.path() / "x" / name), slurp(b.path() / name)) << name;
  }
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(b.path() / "images")) {
    EXPECT_EQ(slurp(e.path()), slurp(a.path() / "x" / "images" / e.path().filename()));
    ++files;
  }
  EXPECT_EQ(files, 12u);
}

TEST(Synth, Validation) {
  SynthConfig cfg;
  cfg.size = 60;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.size = 64;
  cfg.empty_frac = 1.5;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.empty_frac = 0.5;
  cfg.n = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Synth, UnwritableDirectory) {
  TempDir dir;
  std::ofstream(dir.path() / "file") << "x";
  SynthConfig cfg;
  cfg.n = 2;
  EXPECT_THROW(synth_generate(cfg, dir.path() / "file" / "out"), RuntimeError);
}

TEST(Manifest, WriteReadWriteByteIdentical) {
  TempDir dir;
  SynthConfig cfg;
  cfg.n = 40;
  cfg.seed = 11;
  synth_generate(cfg, dir.path());
  const std::string text = slurp(dir.path() / "manifest.csv");
  std::istringstream in(text);
  std::ostringstream out;
  write_manifest(out, parse_manifest(in));
  EXPECT_EQ(out.str(), text);
  const Dataset d = load_dataset(dir.path());
  EXPECT_EQ(d.manifest.image_ids().size(), 40u);
}

TEST(Stratify, ClampRule) {
  EXPECT_EQ(stratum_of(0), 0);
  EXPECT_EQ(stratum_of(15), 9);
  EXPECT_EQ(stratum_of(4), 4);
  EXPECT_EQ(stratum_of(9), 9);
  Manifest m;
  m.add({"a", ""});
  m.add({"b", "1 1"});
  m.add({"b", "3 1"});
  EXPECT_EQ(stratify(m, {"b", "a"}), (std::vector<int>{2, 0}));
}

std::vector<int> strata_of_sizes(const std::vector<int>& sizes) {
  std::vector<int> strata;
  for (int s = 0; s < static_cast<int>(sizes.size()); ++s) strata.insert(strata.end(), sizes[s], s);
  return strata;
}

TEST(Sampler, EveryWindowOfTenHitsEachStratumOnce) {
  const std::vector<int> strata = strata_of_sizes({7, 3, 5, 1, 2, 9, 4, 6, 2, 3});
  StratifiedSampler sampler(strata, 42);
  std::vector<int> seq;
  for (int i = 0; i < 1009; ++i) seq.push_back(strata[sampler.next()]);
  for (int start = 0; start < 1000; ++start) {
    std::set<int> seen(seq.begin() + start, seq.begin() + start + 10);
    ASSERT_EQ(seen.size(), 10u) << "window " << start;
  }
}

TEST(Sampler, WithoutReplacementWithinAPass) {
  const std::vector<int> strata = strata_of_sizes({5, 5});
  StratifiedSampler sampler(strata, 1);
  std::vector<std::size_t> first, second;
  for (int i = 0; i < 20; ++i) {
    const std::size_t x = sampler.next();
    if (strata[x] == 0) (first.size() < 5 ? first : second).push_back(x);
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  EXPECT_EQ(first, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(second, first);
}

TEST(Sampler, SingleStratumAndEmptyStrata) {
  StratifiedSampler sampler(std::vector<int>(6, 3), 0);
  EXPECT_EQ(sampler.active_strata(), std::vector<int>{3});
  EXPECT_EQ(sampler.empty_strata().size(), 9u);
  for (int i = 0; i < 30; ++i) EXPECT_LT(sampler.next(), 6u);
  EXPECT_THROW(StratifiedSampler({}, 0), ValidationError);
  EXPECT_THROW(StratifiedSampler({10}, 0), ValidationError);
}

TEST(Sampler, DeterministicAndSeekable) {
  const std::vector<int> strata = strata_of_sizes({4, 0, 3, 8});
  StratifiedSampler a(strata, 7), b(strata, 7), c(strata, 8);
  std::vector<std::size_t> sa, sb, sc;
  for (int i = 0; i < 100; ++i) sa.push_back(a.next()), sb.push_back(b.next()), sc.push_back(c.next());
  EXPECT_EQ(sa, sb);
  EXPECT_NE(sa, sc);
  StratifiedSampler d(strata, 7);
  d.advance_to(60);
  for (int i = 60; i < 100; ++i) EXPECT_EQ(d.next(), sa[i]);
  EXPECT_THROW(d.advance_to(10), ValidationError);
}

InstanceSet single_pixel(int h, int w, int r, int c) {
  BinaryMask m(h, w);
  m.set(r, c);
  return InstanceSet{h, w, {m}};
}

TEST(SmartCrop, EmptyImageCropsAnywhere) {
  Rng rng(0);
  const Tensor<float> img(Shape{3, 40, 48}, 0.5f);
  for (int i = 0; i < 50; ++i) {
    const Crop c = smart_scale_crop(img, InstanceSet{40, 48, {}}, 16, rng);
    EXPECT_EQ(c.image.shape(), (Shape{3, 16, 16}));
    EXPECT_TRUE(c.mask.none());
  }
}

TEST(SmartCrop, SinglePixelShipAlwaysInsideWindow) {
  Rng rng(1);
  Tensor<float> img(Shape{3, 32, 32});
  for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(i);
  const ScaleCropConfig fixed{0.8, 1.25, false};
  for (int trial = 0; trial < 1000; ++trial) {
    const int r = uniform_int(rng, 0, 31), c = uniform_int(rng, 0, 31);
    const Crop crop = smart_scale_crop(img, single_pixel(32, 32, r, c), 8, rng, fixed);
    ASSERT_EQ(crop.mask.popcount(), 1);
    // Locate the window from the image values and check it covers (r, c).
    const int top = static_cast<int>(crop.image[0]) / 32, left = static_cast<int>(crop.image[0]) % 32;
    ASSERT_TRUE(r >= top && r < top + 8 && c >= left && c < left + 8);
    ASSERT_TRUE(crop.mask.get(r - top, c - left));
  }
}

TEST(SmartCrop, ShipInclusionWithJitter) {
  SynthConfig cfg;
  cfg.size = 64;
  Rng rng(2);
  for (int trial = 0; trial < 10000; ++trial) {
    const int idx = trial % 50;
    static std::vector<SynthImage> cache;
    if (cache.size() < 50) cache.push_back(synth_image(cfg, idx, false));
    const Tensor<float> img = to_unit(cache[idx].image);
    const Crop c = smart_scale_crop(img, cache[idx].instances, 32, rng);
    ASSERT_FALSE(c.mask.none()) << "trial " << trial;
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const int r = uniform_int(rng, 0, 63), c = uniform_int(rng, 0, 63);
    ASSERT_FALSE(smart_scale_crop(Tensor<float>(Shape{3, 64, 64}), single_pixel(64, 64, r, c), 16, rng).mask.none());
  }
}

TEST(SmartCrop, FullSizeWithoutJitterIsIdentity) {
  Rng rng(3);
  const SynthImage s = synth_image(SynthConfig{}, 4, false);
  const Tensor<float> img = to_unit(s.image);
  const Crop c = smart_scale_crop(img, s.instances, 64, rng, {0.8, 1.25, false});
  EXPECT_EQ(c.image, img);
  EXPECT_EQ(c.mask, s.instances.union_mask());
}

TEST(SmartCrop, Errors) {
  Rng rng(0);
  const Tensor<float> img(Shape{3, 16, 16});
  EXPECT_THROW(smart_scale_crop(img, InstanceSet{16, 16, {}}, 17, rng), ValidationError);
  EXPECT_THROW(smart_scale_crop(img, InstanceSet{8, 16, {}}, 8, rng), ShapeError);
}

Crop random_crop(Rng& rng) {
  Crop c{Tensor<float>(Shape{3, 6, 5}), BinaryMask(6, 5)};
  for (std::int64_t i = 0; i < c.image.numel(); ++i) c.image[i] = static_cast<float>(uniform01(rng));
  for (int r = 0; r < 6; ++r) {
    for (int col = 0; col < 5; ++col) c.mask.set(r, col, bernoulli(rng, 0.3));
  }
  return c;
}

TEST(Augment, IdentityParams) {
  Rng rng(4);
  const Crop c = random_crop(rng);
  const Crop out = augment(c, AugmentParams{});
  EXPECT_EQ(out.image, c.image);
  EXPECT_EQ(out.mask, c.mask);
}

TEST(Augment, GeometryMatchesAndPopcountInvariant) {
  Rng rng(5);
  const Crop c = random_crop(rng);
  for (int e = 0; e < kD8Size; ++e) {
    AugmentParams p;
    p.d8 = e;
    p.brightness = 0.1;
    const Crop out = augment(c, p);
    EXPECT_EQ(out.mask.popcount(), c.mask.popcount());
    EXPECT_EQ(out.mask, transform_d8(c.mask, e));
    const Crop photometric = augment(c, AugmentParams{0.1, 1.0, 1.0, 0});
    EXPECT_EQ(out.image, transform_d8(photometric.image, e));
  }
}

TEST(Augment, PhotometricFormulas) {
  Crop c{Tensor<float>(Shape{3, 1, 2}), BinaryMask(1, 2)};
  c.image[0] = 0.5f, c.image[1] = 0.25f;
  AugmentParams p;
  p.contrast = 1.2;
  Crop out = augment(c, p);
  EXPECT_FLOAT_EQ(out.image[0], 0.5f);  // contrast pivots about mid-grey
  EXPECT_FLOAT_EQ(out.image[1], 0.2f);
  p = AugmentParams{};
  p.gamma = 2.0;
  out = augment(c, p);
  EXPECT_FLOAT_EQ(out.image[1], 0.0625f);
  p = AugmentParams{};
  p.brightness = 0.7;
  out = augment(c, p);
  EXPECT_FLOAT_EQ(out.image[0], 1.0f);  // clamped
  EXPECT_THROW(augment(c, AugmentParams{0, 1, 1, 8}), ValidationError);
  EXPECT_THROW(augment(c, AugmentParams{0, 0, 1, 0}), ValidationError);
}

TEST(Augment, SampledRangesAndDeterminism) {
  Rng a(6), b(6);
  std::set<int> elements;
  for (int i = 0; i < 2000; ++i) {
    const AugmentParams p = sample_augment(a);
    EXPECT_GE(p.brightness, -0.2);
    EXPECT_LE(p.brightness, 0.2);
    EXPECT_GE(p.contrast, 0.8);
    EXPECT_LE(p.contrast, 1.2);
    EXPECT_GE(p.gamma, 0.8);
    EXPECT_LE(p.gamma, 1.2);
    elements.insert(p.d8);
    const AugmentParams q = sample_augment(b);
    EXPECT_EQ(p.brightness, q.brightness);
    EXPECT_EQ(p.d8, q.d8);
  }
  EXPECT_EQ(elements.size(), 8u);
  AugmentConfig no_geometry;
  no_geometry.d8 = false;
  EXPECT_EQ(sample_augment(a, no_geometry).d8, 0);
}

TEST(LoadSample, HalfScale) {
  TempDir dir;
  SynthConfig cfg;
  cfg.n = 4;
  cfg.empty_frac = 0.0;
  synth_generate(cfg, dir.path());
  const Dataset d = load_dataset(dir.path());
  const Sample full = load_sample(d, "img00001");
  EXPECT_EQ(full.image.shape(), (Shape{3, 64, 64}));
  EXPECT_FALSE(full.instances.instances.empty());
  const Sample half = load_sample(d, "img00001", true);
  EXPECT_EQ(half.image.shape(), (Shape{3, 32, 32}));
  EXPECT_EQ(half.instances.height, 32);
  half.instances.validate();
}

}  // namespace
}  // namespace seaseg
