#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "assist/cam/cam.hpp"
#include "assist/infer/aggregate.hpp"
#include "assist/infer/predict.hpp"
#include "assist/nn/checkpoint.hpp"
#include "oracles.hpp"

using namespace assist;
using cam::Map;
using nn::Tensor;

TEST(Cam, MatchesTripleLoopOracle) {
  auto rng = CounterRng::stream(1, "cam");
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + int(rng.uniform_int(8)), h = 1 + int(rng.uniform_int(9)), w = 1 + int(rng.uniform_int(9));
    Tensor<float> f({std::size_t(k), std::size_t(h), std::size_t(w)});
    Tensor<float> wt({2, std::size_t(k)});
    for (auto& v : f.values()) v = float(rng.normal());
    for (auto& v : wt.values()) v = float(rng.normal());
    const std::vector<double> fd(f.values().begin(), f.values().end()), wd(wt.values().begin(), wt.values().end());
    for (int cls = 0; cls < 2; ++cls) {
      const auto ref = oracle::naive_cam(fd, k, h, w, wd, cls);
      const auto got = cam::compute_cam(f, wt, cls);
      for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(got[i], ref[i], 1e-5);
    }
  }
}

TEST(Cam, RejectsMismatchedShapes) {
  Tensor<float> f({3, 2, 2});
  EXPECT_THROW(cam::compute_cam(f, Tensor<float>({2, 4}), 0), PreconditionError);
  EXPECT_THROW(cam::compute_cam(f, Tensor<float>({2, 3}), 2), PreconditionError);
}

TEST(Cam, ScaleFactorIsTheProbability) {
  auto rng = CounterRng::stream(2, "scale");
  for (int trial = 0; trial < 50; ++trial) {
    Map raw({4, 5});
    for (auto& v : raw.values()) v = rng.normal();
    const double p = rng.uniform();
    const auto s = cam::scale_cam(raw, p);
    EXPECT_EQ(s.scale, p);
    EXPECT_EQ(*std::max_element(s.map.values().begin(), s.map.values().end()), p);
    EXPECT_EQ(*std::min_element(s.map.values().begin(), s.map.values().end()), 0.0);
    // Order of positions is preserved.
    for (std::size_t i = 1; i < raw.size(); ++i)
      EXPECT_EQ(raw[i] < raw[0], s.map[i] < s.map[0]);
  }
}

TEST(Cam, ConstantMapScalesToZero) {
  const auto s = cam::scale_cam(Map({3, 3}, 2.5), 0.9);
  for (double v : s.map.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(s.raw_min, 2.5);
  EXPECT_EQ(s.raw_max, 2.5);
}

TEST(Cam, UpsampleHandComputedCase) {
  // [[0, 1], [2, 3]] to 2 x 4, corners aligned: columns at 0, 1/3, 2/3, 1.
  const Map src({2, 2}, std::vector<double>{0, 1, 2, 3});
  const auto up = cam::upsample(src, 2, 4);
  const double want[8] = {0, 1.0 / 3, 2.0 / 3, 1, 2, 7.0 / 3, 8.0 / 3, 3};
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(up[i], want[i], 1e-12);
}

TEST(Cam, UpsampleStaysWithinSourceRangeProperty) {
  auto rng = CounterRng::stream(3, "up");
  for (int trial = 0; trial < 30; ++trial) {
    Map src({2 + rng.uniform_int(5), 2 + rng.uniform_int(5)});
    for (auto& v : src.values()) v = rng.uniform();
    const auto up = cam::upsample(src, src.dim(0) * 3, src.dim(1) * 5);
    const auto [lo, hi] = std::minmax_element(src.values().begin(), src.values().end());
    for (double v : up.values()) {
      EXPECT_GE(v, *lo - 1e-12);
      EXPECT_LE(v, *hi + 1e-12);
    }
    EXPECT_EQ(cam::upsample(src, src.dim(0), src.dim(1)), src);
    // Corners are preserved exactly.
    EXPECT_DOUBLE_EQ(up[0], src[0]);
    EXPECT_DOUBLE_EQ(up[up.size() - 1], src[src.size() - 1]);
  }
  EXPECT_THROW(cam::upsample(Map({4, 4}), 2, 8), PreconditionError);
}

// matplotlib's "jet" segment data, evaluated directly.
double jet_channel(const std::vector<std::array<double, 2>>& seg, double x) {
  for (std::size_t i = 1; i < seg.size(); ++i)
    if (x <= seg[i][0]) {
      const double t = (x - seg[i - 1][0]) / (seg[i][0] - seg[i - 1][0]);
      return seg[i - 1][1] + t * (seg[i][1] - seg[i - 1][1]);
    }
  return seg.back()[1];
}

TEST(Colormap, MatchesJetSegmentData) {
  const std::vector<std::array<double, 2>> r{{0, 0}, {0.35, 0}, {0.66, 1}, {0.89, 1}, {1, 0.5}};
  const std::vector<std::array<double, 2>> g{{0, 0}, {0.125, 0}, {0.375, 1}, {0.64, 1}, {0.91, 0}, {1, 0}};
  const std::vector<std::array<double, 2>> b{{0, 0.5}, {0.11, 1}, {0.34, 1}, {0.65, 0}, {1, 0}};
  for (int i = 0; i < 256; ++i) {
    const double x = i / 255.0;
    const auto& c = cam::kJet[i];
    EXPECT_NEAR(c[0], jet_channel(r, x) * 255.0, 1.01) << i;
    EXPECT_NEAR(c[1], jet_channel(g, x) * 255.0, 1.01) << i;
    EXPECT_NEAR(c[2], jet_channel(b, x) * 255.0, 1.01) << i;
  }
}

TEST(Overlay, AlphaZeroIsIdentityAndFullAlphaIsColormap) {
  RgbImage patch(4, 3);
  auto rng = CounterRng::stream(4, "ov");
  for (auto& p : patch.pixels) p = std::uint8_t(rng.uniform_int(256));
  Map m({3, 4});
  for (auto& v : m.values()) v = rng.uniform();
  EXPECT_EQ(cam::overlay(patch, m, 0.0), patch);
  const auto full = cam::overlay(patch, Map({3, 4}, 1.0), 1.0);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x)
      for (int k = 0; k < 3; ++k) EXPECT_EQ(full.at(x, y, k), cam::kJet[255][k]);
  // Blend formula at one pixel.
  const auto half = cam::overlay(patch, m, 0.5);
  const double a = 0.5 * m[0];
  const auto c = cam::jet(m[0]);
  EXPECT_EQ(half.at(0, 0, 1), std::lround((1 - a) * patch.at(0, 0, 1) + a * c[1]));
  EXPECT_THROW(cam::overlay(patch, Map({4, 4}), 0.5), PreconditionError);
}

TEST(Overlay, CustomColormapIsUsed) {
  RgbImage patch(2, 2, 0);
  const auto out = cam::overlay(patch, Map({2, 2}, 1.0), 1.0, [](double) { return cam::Rgb{1, 2, 3}; });
  EXPECT_EQ(out.at(1, 1, 2), 3);
}

TEST(Aggregate, MeanThresholdAndTie) {
  const std::vector<double> hcc{0.9, 0.2, 0.7};
  const auto v = infer::aggregate_slide(hcc, 0.5, "S1");
  EXPECT_NEAR(v.mean_hcc, 0.6, 1e-15);
  EXPECT_EQ(v.label, patch::Label::HCC);
  EXPECT_EQ(v.patch_count, 3u);
  const std::vector<double> tie{0.25, 0.75};
  EXPECT_EQ(infer::aggregate_slide(tie).label, patch::Label::CC);
  EXPECT_THROW(infer::aggregate_slide(std::vector<double>{}), PreconditionError);
  EXPECT_THROW(infer::aggregate_slide(std::vector<double>{1.5}), PreconditionError);
}

TEST(Aggregate, VerdictIsPermutationInvariantProperty) {
  auto rng = CounterRng::stream(5, "agg");
  for (int t = 0; t < 100; ++t) {
    std::vector<double> p(1 + rng.uniform_int(20));
    for (auto& v : p) v = rng.uniform();
    const auto a = infer::aggregate_slide(p);
    rng.shuffle(std::span<double>(p));
    EXPECT_EQ(infer::aggregate_slide(p).label, a.label);
    EXPECT_EQ(a.label == patch::Label::HCC,
              std::accumulate(p.begin(), p.end(), 0.0) / double(p.size()) > 0.5);
  }
}

nn::Checkpoint toy_checkpoint() {
  nn::Checkpoint ck;
  ck.model = nn::init_model<float>(nn::NetworkConfig::toy(), 3);
  ck.norm = {{0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}};
  return ck;
}

RgbImage noise_image(int side, std::uint64_t seed) {
  RgbImage img(side, side);
  auto rng = CounterRng::stream(seed, "img");
  for (auto& p : img.pixels) p = std::uint8_t(rng.uniform_int(256));
  return img;
}

TEST(Predict, ProbabilitiesSumToOneAndBatchMatchesSingle) {
  const auto ck = toy_checkpoint();
  std::vector<infer::NormalizedPatch> ps;
  for (int i = 0; i < 40; ++i) ps.push_back(infer::prepare_patch(ck, noise_image(8, i)));
  const auto batch = infer::predict_patches(ck, ps);
  ASSERT_EQ(batch.size(), 40u);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    EXPECT_NEAR(batch[i].hcc + batch[i].cc, 1.0, 1e-12);
    const auto one = infer::predict_patch(ck, ps[i]);
    EXPECT_NEAR(one.hcc, batch[i].hcc, 1e-6);
  }
}

TEST(Predict, ResizesArbitraryUploads) {
  const auto ck = toy_checkpoint();
  const auto big = noise_image(24, 1);
  const auto p = infer::prepare_patch(ck, big);
  EXPECT_EQ(p.side(), 8u);
  EXPECT_EQ(infer::predict_patch(ck, p), infer::predict_patch(ck, infer::prepare_patch(ck, resize_bilinear(big, 8, 8))));
}

TEST(Predict, RefusesPatchNormalizedForAnotherCheckpoint) {
  const auto ck = toy_checkpoint();
  const infer::NormalizedPatch p(noise_image(8, 2), patch::NormStats{});
  EXPECT_THROW(infer::predict_patch(ck, p), PreconditionError);
}

TEST(Explain, CamsAreConsistentWithLogits) {
  // mean over positions of the raw class map + head bias = class logit.
  const auto ck = toy_checkpoint();
  const auto patch = infer::prepare_patch(ck, noise_image(8, 7));
  const auto e = infer::explain_patch(ck, patch);
  const auto& b = ck.model.head_bias();
  const double mh = std::accumulate(e.hcc.raw.values().begin(), e.hcc.raw.values().end(), 0.0) / e.hcc.raw.size();
  const double mc = std::accumulate(e.cc.raw.values().begin(), e.cc.raw.values().end(), 0.0) / e.cc.raw.size();
  const double lh = mh + b[nn::kLabelHCC], lc = mc + b[nn::kLabelCC];
  EXPECT_NEAR(e.probabilities.hcc, 1.0 / (1.0 + std::exp(lc - lh)), 1e-5);
  EXPECT_EQ(e.probabilities, infer::predict_patch(ck, patch));
  EXPECT_EQ(e.hcc.scaled.scale, e.probabilities.hcc);
  EXPECT_EQ(e.cc.scaled.scale, e.probabilities.cc);
  EXPECT_EQ(e.hcc.upsampled.dim(0), 8u);
}

TEST(Explain, ExportWritesOverlayAndSidecar) {
  const auto ck = toy_checkpoint();
  const auto img = noise_image(8, 9);
  const auto e = infer::explain_patch(ck, infer::prepare_patch(ck, img));
  const auto dir = oracle::scratch("cam_export");
  cam::export_cam(dir, "p", img, e.hcc, 0.5);
  const auto png = load_png(dir / "p_HCC.png");
  EXPECT_EQ(png.width, 8);
  const auto j = nlohmann::json::parse(read_text(dir / "p_HCC.json"));
  EXPECT_EQ(j.at("class"), "HCC");
  EXPECT_DOUBLE_EQ(j.at("probability").get<double>(), e.probabilities.hcc);
}

TEST(Evaluation, CsvAndAccuracy) {
  std::vector<infer::EvaluatedSlide> s;
  s.push_back({{"A", 0.8, patch::Label::HCC, 3}, patch::Label::HCC});
  s.push_back({{"B", 0.3, patch::Label::CC, 3}, patch::Label::HCC});
  const auto e = infer::summarize_verdicts(s);
  EXPECT_EQ(e.correct, 1u);
  EXPECT_DOUBLE_EQ(e.accuracy, 0.5);
  const auto csv = infer::evaluation_csv(e);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "slide_id,mean_prob_hcc,verdict,truth,patches");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}
