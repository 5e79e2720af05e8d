#include <gtest/gtest.h>

#include "tcc/config.hpp"

using namespace tcc;

TEST(Config, Defaults) {
  const TrainConfig c;
  EXPECT_EQ(c.tau, 1.0);
  EXPECT_EQ(c.lambda, 0.8);
  EXPECT_EQ(c.alpha, 0.5);
  EXPECT_EQ(c.learning_rate, 3e-3);
  EXPECT_EQ(c.momentum, 0.999);
  EXPECT_EQ(c.gumbel_samples, 1u);
  EXPECT_EQ(c.hidden, (std::vector<std::size_t>{64, 64}));
  EXPECT_EQ(c.feature_dim, 16u);
}

TEST(Config, ResolvedDeskSizes) {
  TrainConfig c;
  c.clusters = 4;
  ResolvedSizes r = resolve_sizes(c, 2048);
  EXPECT_EQ(r.batch, 128u);
  EXPECT_EQ(r.cluster_queue, 400u);
  EXPECT_EQ(r.instance_queue, 1024u);
  r = resolve_sizes(c, 100000);
  EXPECT_EQ(r.instance_queue, 12800u);
  // 10N/K cap, rounded down to a multiple of K.
  c.clusters = 3;
  r = resolve_sizes(c, 100);
  EXPECT_EQ(r.cluster_queue, 300u);
  EXPECT_EQ(r.batch, 96u);
  c.clusters = 4;
  EXPECT_EQ(resolve_sizes(c, 100).cluster_queue, 248u);
  c.use_cluster_queue = false;
  EXPECT_EQ(resolve_sizes(c, 100).cluster_queue, 0u);
  c.batch_size = 500;
  EXPECT_THROW(resolve_sizes(c, 100), DataError);
}

TEST(Config, ParseOverridesAndComments) {
  const TrainConfig c = parse_config_text(
      "# comment\n"
      "clusters = 5\n"
      "alpha=0.25  # trailing\n"
      "\n"
      "hidden = 32, 16\n"
      "cluster_queue_size = 50\n"
      "batch_size = auto\n"
      "use_cluster_queue = false\n"
      "mode = alternating\n"
      "alpha = 0.75\n");
  EXPECT_EQ(c.clusters, 5u);
  EXPECT_EQ(c.alpha, 0.75);
  EXPECT_EQ(c.hidden, (std::vector<std::size_t>{32, 16}));
  EXPECT_EQ(c.cluster_queue_size, 50u);
  EXPECT_FALSE(c.batch_size.has_value());
  EXPECT_FALSE(c.use_cluster_queue);
  EXPECT_EQ(c.mode, TrainMode::kAlternating);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config_text("no_such_key = 1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("clusters 5\n"), ConfigError);
  EXPECT_THROW(parse_config_text("alpha = half\n"), ConfigError);
  EXPECT_THROW(parse_config_text("clusters = -2\n"), ConfigError);
  EXPECT_THROW(parse_config_text("use_cluster_queue = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config_text("mode = sometimes\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/tcc.cfg"), ConfigError);
  TrainConfig c;
  c.clusters = 4;
  c.cluster_queue_size = 10;
  EXPECT_THROW(c.validate(), ConfigError);
  c.cluster_queue_size.reset();
  c.alpha = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c.alpha = 0.5;
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, TextRoundTrip) {
  TrainConfig c;
  c.clusters = 7;
  c.tau = 0.2;
  c.learning_rate = 1e-3 / 3.0;
  c.instance_queue_size = 64;
  c.hidden = {10, 20, 30};
  c.augment_mode = "image";
  c.image_flip = false;
  const TrainConfig back = parse_config_text(config_to_text(c));
  EXPECT_EQ(config_to_text(back), config_to_text(c));
  EXPECT_EQ(back.learning_rate, c.learning_rate);
  EXPECT_EQ(back.instance_queue_size, 64u);
  for (const auto& key : config_keys()) EXPECT_EQ(get_config_value(back, key), get_config_value(c, key));
}

TEST(Config, SetSingleValue) {
  TrainConfig c;
  set_config_value(c, "seed", "42");
  set_config_value(c, "lambda", " 0.5 ");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.lambda, 0.5);
  EXPECT_EQ(get_config_value(c, "seed"), "42");
  EXPECT_THROW(get_config_value(c, "nope"), ConfigError);
}
