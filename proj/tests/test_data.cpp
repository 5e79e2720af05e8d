#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "kmeans_oracle.hpp"
#include "tcc/data.hpp"
#include "tcc/metrics.hpp"

using namespace tcc;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("tcc_test_data_" + name);
}

}  // namespace

TEST(TwoMoons, NoiselessPointsLieOnArcs) {
  const Dataset ds = two_moons(400, 0.0, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double cx = ds.labels[i] == 0 ? 0.0 : 1.0;
    const double cy = ds.labels[i] == 0 ? 0.0 : 0.5;
    EXPECT_NEAR(std::hypot(ds.x(i, 0) - cx, ds.x(i, 1) - cy), 1.0, 1e-12);
    if (ds.labels[i] == 0) EXPECT_GE(ds.x(i, 1), -1e-12);
    else EXPECT_LE(ds.x(i, 1), 0.5 + 1e-12);
  }
}

TEST(TwoMoons, BalancedAndDeterministic) {
  const Dataset a = two_moons(2000, 0.05, 7), b = two_moons(2000, 0.05, 7), c = two_moons(2000, 0.05, 8);
  EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), 0), 1000);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.x, c.x);
  EXPECT_EQ(fingerprint(a), fingerprint(b));
  EXPECT_NE(fingerprint(a), fingerprint(c));
  EXPECT_THROW(two_moons(3, 0.1, 0), DataError);
  EXPECT_THROW(two_moons(4, -0.1, 0), DataError);
}

TEST(Blobs, BalancedZeroVarianceAndCltMeans) {
  const std::size_t n = 2048, K = 4;
  const double sigma = 0.5;
  const Dataset exact = blobs(n, K, 10.0, 0.0, 3);
  const Dataset noisy = blobs(n, K, 10.0, sigma, 3);
  for (std::size_t k = 0; k < K; ++k)
    EXPECT_EQ(std::count(noisy.labels.begin(), noisy.labels.end(), static_cast<int>(k)), 512);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(exact.x(i, j), exact.x(i % K, j));
  const double bound = 5 * sigma / std::sqrt(static_cast<double>(n / K));
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < 2; ++j) {
      double mean = 0.0;
      for (std::size_t i = k; i < n; i += K) mean += noisy.x(i, j);
      mean /= static_cast<double>(n / K);
      EXPECT_NEAR(mean, exact.x(k, j), bound);
    }
  }
}

TEST(Rings, RadiiAndBalance) {
  const Dataset zero = rings(300, {1.0, 2.0, 3.0}, 0.0, 1);
  for (std::size_t i = 0; i < zero.size(); ++i)
    EXPECT_NEAR(std::hypot(zero.x(i, 0), zero.x(i, 1)), 1.0 + zero.labels[i], 1e-12);
  EXPECT_EQ(std::count(zero.labels.begin(), zero.labels.end(), 2), 100);
  const Dataset noisy = rings(3000, {1.0, 3.0}, 0.1, 2);
  for (int k = 0; k < 2; ++k) {
    double mean = 0.0;
    for (std::size_t i = k; i < noisy.size(); i += 2) mean += std::hypot(noisy.x(i, 0), noisy.x(i, 1));
    mean /= 1500.0;
    EXPECT_NEAR(mean, k == 0 ? 1.0 : 3.0, 5 * 0.1 / std::sqrt(1500.0) + 0.01);
  }
}

TEST(MakeDataset, NamedSpecs) {
  EXPECT_EQ(make_dataset("two_moons").size(), 2000u);
  EXPECT_EQ(make_dataset("blobs").size(), 2048u);
  DatasetOptions o;
  o.clusters = 3;
  o.n = 300;
  EXPECT_EQ(make_dataset("rings", o).num_classes(), 3u);
  EXPECT_THROW(make_dataset("spirals"), DataError);
}

TEST(Augment, IdentityPolicyReturnsInput) {
  const Dataset ds = two_moons(10, 0.05, 1);
  CounterRng rng = make_stream(1, Stream::kAugmentOnline);
  EXPECT_EQ(augment_batch(ds.x, AugmentPolicy::identity(), rng), ds.x);
  const auto v = augment(ds.x.row(3), AugmentPolicy::identity(), rng);
  EXPECT_TRUE(std::equal(v.begin(), v.end(), ds.x.row(3).begin()));
}

TEST(Augment, IndependentStreamsDiffer) {
  const Dataset ds = two_moons(10, 0.05, 1);
  AugmentPolicy p;
  p.noise_sigma = 0.1;
  CounterRng a = make_stream(1, Stream::kAugmentOnline), b = make_stream(1, Stream::kAugmentMomentum);
  const DenseArray va = augment_batch(ds.x, p, a), vb = augment_batch(ds.x, p, b);
  for (std::size_t i = 0; i < va.size(); ++i) EXPECT_NE(va[i], vb[i]);
}

TEST(Augment, BadPolicyRejected) {
  AugmentPolicy p;
  p.dropout = 1.0;
  CounterRng rng = make_stream(1, Stream::kAugmentOnline);
  const std::vector<double> x{1.0, 2.0};
  EXPECT_THROW(augment(x, p, rng), BadPolicy);
  AugmentPolicy img;
  img.mode = AugmentPolicy::Mode::kImage;
  img.height = 3;
  img.width = 3;
  EXPECT_THROW(augment(x, img, rng), BadPolicy);
}

TEST(Augment, ImageModeKeepsShapeAndIdentityCrop) {
  AugmentPolicy img;
  img.mode = AugmentPolicy::Mode::kImage;
  img.height = 4;
  img.width = 4;
  std::vector<double> x(16);
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  CounterRng rng = make_stream(2, Stream::kAugmentOnline);
  img.flip = true;
  const auto y = augment(x, img, rng);
  ASSERT_EQ(y.size(), 16u);
  // Full-size crop: each row is either the original or its mirror.
  const bool flipped = y[0] == 3.0;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(y[r * 4 + c], x[r * 4 + (flipped ? 3 - c : c)], 1e-12);
}

TEST(Augment, BlobsKeepLabelSemantics) {
  const Dataset ds = blobs(2048, 4, 10.0, 0.5, 5);
  AugmentPolicy p;
  p.noise_sigma = 0.05 * ds.mean_feature_std();
  p.scale_range = 0.1;
  CounterRng rng = make_stream(5, Stream::kAugmentOnline);
  const DenseArray aug = augment_batch(ds.x, p, rng);
  const double clean = acc(tcc::testing::kmeans(ds.x, 4, 1).labels, ds.labels);
  const double augmented = acc(tcc::testing::kmeans(aug, 4, 1).labels, ds.labels);
  EXPECT_LT(std::abs(clean - augmented), 0.05);
}

TEST(Csv, RoundTrip) {
  const Dataset ds = two_moons(50, 0.1, 3);
  const auto path = temp_file("roundtrip.csv");
  save_csv(ds, path.string());
  const Dataset back = load_csv(path.string());
  EXPECT_EQ(back.x, ds.x);
  EXPECT_EQ(back.labels, ds.labels);
  std::filesystem::remove(path);
}

TEST(Csv, UnlabeledRoundTrip) {
  Dataset ds{"x", DenseArray::from_rows({{1.5, -2.25, 1e-300}}), {}};
  const auto path = temp_file("unlabeled.csv");
  save_csv(ds, path.string());
  const Dataset back = load_csv(path.string());
  EXPECT_EQ(back.x, ds.x);
  EXPECT_FALSE(back.has_labels());
  std::filesystem::remove(path);
}

TEST(Csv, EmptyHeaderOnlyAndMalformed) {
  const auto path = temp_file("edge.csv");
  auto write = [&](const std::string& text) { std::ofstream(path, std::ios::binary) << text; };
  write("");
  EXPECT_THROW(load_csv(path.string()), ParseError);
  write("x0,x1,x2\n");
  const Dataset empty = load_csv(path.string());
  EXPECT_EQ(empty.size(), 0u);
  EXPECT_EQ(empty.dim(), 3u);
  write("x0,x1,label\n1,2,0\n3,oops,1\n");
  try {
    load_csv(path.string());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  write("x0,x1\n1,2,3\n");
  EXPECT_THROW(load_csv(path.string()), ParseError);
  write("a,b\n1,2\n");
  EXPECT_THROW(load_csv(path.string()), ParseError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_csv(path.string()), DataError);
}
