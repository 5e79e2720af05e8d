#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace tcc;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("tcc_test_ckpt_" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TrainConfig resume_config() {
  TrainConfig c;
  c.clusters = 3;
  c.hidden = {16, 16};
  c.feature_dim = 8;
  c.seed = 21;
  c.batch_size = 32;
  c.max_epochs = 6;
  c.stop_on_convergence = false;
  return c;
}

}  // namespace

TEST(Checkpoint, RoundTripIsExact) {
  const Dataset ds = blobs(128, 3, 10.0, 0.5, 2);
  TrainConfig c = resume_config();
  c.max_epochs = 2;
  c.tau = 0.3;
  const TrainState s = train(c, ds);
  const auto path = temp_file("roundtrip.ckpt");
  save_checkpoint(s, path.string());
  const TrainState back = load_checkpoint(path.string());
  EXPECT_EQ(config_to_text(back.config), config_to_text(s.config));
  EXPECT_EQ(back.epoch, s.epoch);
  EXPECT_EQ(back.step, s.step);
  EXPECT_EQ(back.epoch_losses, s.epoch_losses);
  EXPECT_EQ(back.cluster_queue, s.cluster_queue);
  EXPECT_EQ(back.instance_queue, s.instance_queue);
  for (const Encoder* e : {&s.online, &s.momentum}) {
    const Encoder& other = e == &s.online ? back.online : back.momentum;
    EXPECT_EQ(other.params().step, e->params().step);
    auto it = other.params().begin();
    for (const auto& [name, p] : e->params()) {
      const auto& [oname, q] = *it++;
      EXPECT_EQ(oname, name);
      EXPECT_EQ(q.value, p.value) << name;
      EXPECT_EQ(q.first_moment, p.first_moment) << name;
      EXPECT_EQ(q.second_moment, p.second_moment) << name;
    }
  }
  const auto again = temp_file("roundtrip2.ckpt");
  save_checkpoint(back, again.string());
  EXPECT_EQ(slurp(path), slurp(again));
  std::filesystem::remove(path);
  std::filesystem::remove(again);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  const Dataset ds = blobs(128, 3, 10.0, 0.5, 3);
  const TrainConfig c = resume_config();
  const TrainState full = train(c, ds);

  TrainState part = make_initial_state(c, ds);
  continue_training(part, ds, {}, 2);
  ASSERT_EQ(part.epoch, 2u);
  const auto path = temp_file("resume.ckpt");
  save_checkpoint(part, path.string());
  TrainState resumed = load_checkpoint(path.string());
  continue_training(resumed, ds);

  const auto a = temp_file("full.ckpt"), b = temp_file("resumed.ckpt");
  save_checkpoint(full, a.string());
  save_checkpoint(resumed, b.string());
  EXPECT_EQ(slurp(a), slurp(b));
  for (const auto& p : {path, a, b}) std::filesystem::remove(p);
}

TEST(Checkpoint, MalformedFilesRejected) {
  const auto path = temp_file("bad.ckpt");
  EXPECT_THROW(load_checkpoint(path.string() + ".missing"), DataError);
  std::ofstream(path, std::ios::binary) << "not-a-checkpoint\n";
  EXPECT_THROW(load_checkpoint(path.string()), ParseError);

  const Dataset ds = blobs(64, 3, 10.0, 0.5, 4);
  TrainConfig c = resume_config();
  c.max_epochs = 1;
  save_checkpoint(train(c, ds), path.string());
  std::string text = slurp(path);
  const auto end = text.rfind("end");
  std::ofstream(path, std::ios::binary) << text.substr(0, end);
  EXPECT_THROW(load_checkpoint(path.string()), ParseError);
  std::filesystem::remove(path);
}
