#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "neurbf/checkpoint.hpp"
#include "neurbf/config.hpp"
#include "neurbf/pipeline.hpp"

using namespace neurbf;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "neurbf_config_tests";
  fs::create_directories(d);
  return (d / name).string();
}

void expect_config_error(const std::string& toml, const std::string& fragment) {
  try {
    config_from_toml(toml, TaskKind::image);
    FAIL() << "accepted: " << toml;
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

RunConfig tiny_image_config() {
  RunConfig c = RunConfig::defaults(TaskKind::image);
  c.budget = 1000;
  c.rbf.features = 4;
  c.rbf.freq_low = 0.5;
  c.rbf.freq_high = 16.0;
  c.grid.levels = 2;
  c.grid.res_min = 2;
  c.grid.res_max = 8;
  c.decoder.width = 16;
  c.decoder.freq_high = 50.0;
  c.train.steps = 20;
  c.train.batch = 64;
  c.rbf.init_scale = 0.1;
  c.grid.init_scale = 0.1;
  return c;
}

ImageBuffer gradient_image(int n) {
  ImageBuffer img(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = (r + c + ch) / (2.0 * n + 2.0);
  return img;
}

std::string trained_checkpoint_bytes() {
  ImageFit fit(gradient_image(8), tiny_image_config());
  fit.train();
  return serialize_checkpoint(make_checkpoint<2>(fit.field(), fit.config(), fit.plan()));
}

ErrorKind parse_error_kind(const std::string& bytes) {
  try {
    parse_checkpoint(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "corrupted checkpoint was accepted";
  return ErrorKind::logic;
}

}  // namespace

TEST(Config, DefaultsValidate) {
  EXPECT_NO_THROW(RunConfig::defaults(TaskKind::image).validate());
  EXPECT_NO_THROW(RunConfig::defaults(TaskKind::sdf).validate());
  const auto s = RunConfig::defaults(TaskKind::sdf);
  EXPECT_EQ(s.train.loss, LossKind::mape);
  EXPECT_EQ(s.rbf.neighbors, 8);
}

TEST(Config, TomlOverridesOnlyNamedKeys) {
  const auto c = config_from_toml("seed = 7\n[rbf]\nneighbors = 6\n[train]\nsteps = 12\n", TaskKind::image);
  const auto d = RunConfig::defaults(TaskKind::image);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.rbf.neighbors, 6);
  EXPECT_EQ(c.train.steps, 12);
  EXPECT_EQ(c.rbf.features, d.rbf.features);
  EXPECT_EQ(c.budget, d.budget);
}

TEST(Config, TaskKeySelectsDefaults) {
  const auto c = config_from_toml("task = \"sdf\"\n", TaskKind::image);
  EXPECT_EQ(c.task, TaskKind::sdf);
  EXPECT_EQ(to_json(c), to_json(RunConfig::defaults(TaskKind::sdf)));
}

TEST(Config, UnknownKeysAreRejected) {
  expect_config_error("[train]\nstepz = 3\n", "unknown config key 'train.stepz'");
  expect_config_error("colour = 1\n", "unknown config key 'colour'");
  expect_config_error("[nope]\nx = 1\n", "nope");
}

TEST(Config, WrongTypesAndSyntaxAreConfigErrors) {
  expect_config_error("[train]\nsteps = \"many\"\n", "train.steps");
  expect_config_error("[train\nsteps = 3\n", "config");
  expect_config_error("task = \"video\"\n", "video");
}

TEST(Config, ValidationMessages) {
  auto c = RunConfig::defaults(TaskKind::image);
  c.budget = 0;
  EXPECT_THROW(c.validate(), Error);
  c = RunConfig::defaults(TaskKind::sdf);
  c.shape.radius = -1.0;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
    EXPECT_NE(std::string(e.what()).find("radius"), std::string::npos);
  }
  c = RunConfig::defaults(TaskKind::image);
  c.rbf.features = 1;
  EXPECT_THROW(c.validate(), Error);
  c.rbf.freq_high = c.rbf.freq_low;
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, TomlRoundTrip) {
  for (auto task : {TaskKind::image, TaskKind::sdf}) {
    auto c = RunConfig::defaults(task);
    c.seed = 1234567;
    c.input = "a b/c.png";
    c.train.lr_mlp = 3.25e-4;
    c.rbf.freq_high = 31.7;
    c.shape.center = {0.1, -0.2, 0.3};
    const auto back = config_from_toml(to_toml(c), TaskKind::image);
    EXPECT_EQ(to_json(back), to_json(c));
  }
}

TEST(Config, EchoedJsonReingests) {
  auto c = RunConfig::defaults(TaskKind::sdf);
  c.seed = 99;
  c.shape.kind = ShapeKind::torus;
  c.train.perturb_std = 0.02;
  const auto path = temp_path("config.echo.json");
  std::ofstream(path) << to_json(c).dump(2);
  EXPECT_EQ(to_json(load_config(path, TaskKind::image)), to_json(c));
}

TEST(Config, ResultJsonOmitsRunLocation) {
  auto a = RunConfig::defaults(TaskKind::image), b = a;
  b.out = "elsewhere";
  b.threads = 3;
  EXPECT_EQ(result_json(a), result_json(b));
  EXPECT_FALSE(result_json(a).contains("out"));
}

TEST(Config, MissingFileIsIoError) {
  try {
    load_config(temp_path("absent.toml"), TaskKind::image);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
    EXPECT_NE(std::string(e.what()).find("absent.toml"), std::string::npos);
  }
}

TEST(Checkpoint, RoundTripRestoresIdenticalField) {
  ImageFit fit(gradient_image(8), tiny_image_config());
  fit.train();
  const auto ck = make_checkpoint<2>(fit.field(), fit.config(), fit.plan());
  const auto path = temp_path("rt.nrbf");
  write_checkpoint(ck, path);
  const auto back = read_checkpoint(path);
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(ck));

  ImageFit restored(gradient_image(8), back);
  Rng rng(120);
  std::vector<Point<2>> pts(300);
  for (auto& p : pts) p = {rng.uniform(), rng.uniform()};
  EXPECT_EQ(restored.field().predict(pts), fit.field().predict(pts));
  EXPECT_EQ(restored.evaluate().psnr, fit.evaluate().psnr);
  EXPECT_EQ(parse_header(back).plan.rbf_count, fit.plan().rbf_count);
}

TEST(Checkpoint, SegmentsRoundTripExactly) {
  Checkpoint ck;
  ck.header = "{\"x\":1}";
  ck.segments.push_back({"a", true, {2, 3}, {1.0, -2.0, 3.5, 1e-300, -0.0, 7.0}});
  ck.segments.push_back({"empty", false, {0}, {}});
  const auto back = parse_checkpoint(serialize_checkpoint(ck));
  ASSERT_EQ(back.segments.size(), 2u);
  EXPECT_EQ(back.header, ck.header);
  EXPECT_EQ(back.at("a").dims, (std::vector<std::uint64_t>{2, 3}));
  EXPECT_EQ(back.at("a").values, ck.segments[0].values);
  EXPECT_TRUE(back.at("a").trainable);
  EXPECT_FALSE(back.at("empty").trainable);
  EXPECT_THROW(back.at("missing"), Error);
}

TEST(Checkpoint, EveryByteFlipIsDetected) {
  const std::string good = trained_checkpoint_bytes();
  for (std::size_t i = 0; i < good.size(); i += std::max<std::size_t>(1, good.size() / 200)) {
    std::string bad = good;
    bad[i] = static_cast<char>(bad[i] ^ 0x10);
    ASSERT_EQ(parse_error_kind(bad), ErrorKind::io) << "offset " << i;
  }
}

TEST(Checkpoint, TruncationAndBadMagicAreIoErrors) {
  const std::string good = trained_checkpoint_bytes();
  for (std::size_t n : {std::size_t{0}, std::size_t{3}, std::size_t{12}, good.size() / 2, good.size() - 1})
    EXPECT_EQ(parse_error_kind(good.substr(0, n)), ErrorKind::io) << n;
  std::string magic = good;
  magic[0] = 'X';
  EXPECT_EQ(parse_error_kind(magic), ErrorKind::io);
  EXPECT_EQ(parse_error_kind(good + "extra"), ErrorKind::io);
}

TEST(Checkpoint, WrongVersionIsConfigError) {
  Checkpoint ck = parse_checkpoint(trained_checkpoint_bytes());
  ck.version = kCheckpointVersion + 1;
  EXPECT_EQ(parse_error_kind(serialize_checkpoint(ck)), ErrorKind::config);
}

TEST(Checkpoint, ByteLayout) {
  Checkpoint ck;
  ck.header = "{}";
  ck.segments.push_back({"w", true, {1}, {0.5}});
  const std::string b = serialize_checkpoint(ck);
  // magic 4, version 4, header length 8 + 2, count 4, name length 4 + 1, flags 1, rank 4, dim 8, value 8, hash 8.
  ASSERT_EQ(b.size(), 4u + 4 + 8 + 2 + 4 + 4 + 1 + 1 + 4 + 8 + 8 + 8);
  EXPECT_EQ(b.substr(0, 4), "NRBF");
  EXPECT_EQ(static_cast<unsigned char>(b[4]), 1u);
  EXPECT_EQ(b.substr(16, 2), "{}");
  double v = 0.0;
  std::memcpy(&v, b.data() + b.size() - 16, 8);
  EXPECT_EQ(v, 0.5);
  std::uint64_t h = 0;
  std::memcpy(&h, b.data() + b.size() - 8, 8);
  EXPECT_EQ(h, detail::fnv1a(b, b.size() - 8));
}

TEST(Checkpoint, Fnv1aReferenceValues) {
  EXPECT_EQ(detail::fnv1a("", 0), 0xCBF29CE484222325ULL);
  EXPECT_EQ(detail::fnv1a("a", 1), 0xAF63DC4C8601EC8CULL);
  EXPECT_EQ(detail::fnv1a("foobar", 6), 0x85944171F73967E8ULL);
}

TEST(Checkpoint, MissingFileIsIoError) {
  try {
    read_checkpoint(temp_path("nothing.nrbf"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
    EXPECT_NE(std::string(e.what()).find("nothing.nrbf"), std::string::npos);
  }
}
