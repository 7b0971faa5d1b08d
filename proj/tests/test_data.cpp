#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "doctest.h"
#include "support.hpp"
#include "uaseg/data.hpp"
#include "uaseg/error.hpp"

using namespace uaseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("uaseg_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::io;
}

}  // namespace

TEST_CASE("splitmix64 test vectors") {
  SplitMix64 a(0);
  CHECK(a.next() == 0xe220a8397b1dcdafULL);
  CHECK(a.next() == 0x6e789e6aa1b965f4ULL);
  SplitMix64 b(1234567);
  CHECK(b.next() == 6457827717110365317ULL);
  CHECK(b.next() == 3203168211198807973ULL);
  CHECK(b.next() == 9817491932198370423ULL);
  SplitMix64 c(42);
  CHECK(c.next() == 0xbdd732262feb6e95ULL);
  CHECK(c.next() == 0x28efe333b266f103ULL);
  CHECK(c.next() == 0x47526757130f9f52ULL);
}

TEST_CASE("derived distributions") {
  SplitMix64 rng(9);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    const double z = rng.normal();
    sum += z;
    sq += z * z;
    CHECK(rng.below(7) < 7);
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
  std::set<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 1000; ++s) seeds.insert(derive_seed(42, s));
  CHECK(seeds.size() == 1000);
}

TEST_CASE("pgm round trips and errors") {
  const Grid zeros(Shape{4, 4}, 0.0);
  CHECK(parse_pgm(encode_pgm(zeros)) == zeros);
  BinaryMask checker(Shape{5, 6});
  for (std::size_t i = 0; i < checker.size(); ++i) checker.set(i, ((i / 6) + (i % 6)) % 2 == 0);
  CHECK(BinaryMask::from_grid(parse_pgm(encode_pgm(checker.to_grid()))) == checker);
  Grid levels(Shape{1, 256});
  for (std::size_t i = 0; i < 256; ++i) levels[i] = static_cast<double>(i) / 255.0;
  CHECK(parse_pgm(encode_pgm(levels)) == levels);
  CHECK(encode_pgm(zeros).substr(0, 11) == "P5\n4 4\n255\n");
  CHECK(parse_pgm("P5 # comment\n2 1\n255\n\x01\x02") == Grid(Shape{1, 2}, std::vector<double>{1 / 255.0, 2 / 255.0}));

  try {
    parse_pgm("P2\n2 2\n255\n0 0 0 0\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::pgm_variant);
    CHECK(std::string(e.what()).find("unsupported PGM variant") != std::string::npos);
  }
  CHECK(code_of([] { parse_pgm("P5\n2 2\n65535\n"); }) == ErrorCode::pgm_variant);
  CHECK(code_of([] { parse_pgm("GIF89a"); }) == ErrorCode::pgm_header);
  CHECK(code_of([] { parse_pgm("P5\nx 2\n255\n"); }) == ErrorCode::pgm_header);
  CHECK(code_of([] { parse_pgm("P5\n2 2\n255"); }) == ErrorCode::pgm_header);
  CHECK(code_of([] { parse_pgm("P5\n2 2\n255\n\x01\x02\x03"); }) == ErrorCode::pgm_truncated);
  CHECK(code_of([] { encode_pgm(Grid(Shape{2, 2}), 65535); }) == ErrorCode::pgm_variant);
}

TEST_CASE("noiseless images are two-level functions of the mask") {
  ShapeConfig cfg;
  cfg.noise_sigma = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SyntheticCase c = synthesize_case(cfg, seed);
    std::set<double> values;
    for (std::size_t i = 0; i < c.image.size(); ++i) {
      values.insert(c.image[i]);
      CHECK(c.image[i] == (c.mask[i] ? std::round(0.7 * 255) / 255 : std::round(0.3 * 255) / 255));
    }
    CHECK(values.size() == 2);
  }
}

TEST_CASE("config validation and json round trip") {
  ShapeConfig bad;
  bad.noise_sigma = -0.1;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = ShapeConfig{};
  bad.height = 8;
  CHECK_THROWS_AS(bad.validate(), Error);
  ShapeConfig cfg;
  cfg.families = {ShapeFamily::rectangle};
  cfg.max_jitter = 1;
  const ShapeConfig back = ShapeConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK_THROWS_AS(ShapeConfig::from_json(nlohmann::json{{"families", {"hexagon"}}}), Error);
  CHECK(parse_split("val") == Split::val);
  CHECK_THROWS_AS(parse_split("holdout"), Error);
}

TEST_CASE("dataset generation is deterministic and consistent") {
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  ShapeConfig cfg;
  const SplitCounts counts{200, 50, 50};
  const auto t0 = std::chrono::steady_clock::now();
  const DatasetManifest ma = generate_dataset(cfg, counts, 42, a);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("generated 300 cases in " << secs << " s");
  CHECK(secs < 10.0);
  generate_dataset(cfg, counts, 42, b);

  CHECK(ma.cases.size() == 300);
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  std::set<std::string> ids;
  for (const CaseEntry& e : ma.cases) {
    CHECK(ids.insert(e.id).second);
    CHECK(slurp(a / e.image) == slurp(b / e.image));
    CHECK(slurp(a / e.mask) == slurp(b / e.mask));
  }
  CHECK(ma.split(Split::train).size() == 200);
  CHECK(ma.split(Split::val).size() == 50);

  const Dataset ds = load_dataset(a);
  CHECK(ds.manifest.to_json() == ma.to_json());
  for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
    for (const Case& c : *split) {
      CHECK_FALSE(c.mask.empty());
      for (std::size_t i = 0; i < c.mask.size(); ++i)
        if (c.mask[i]) CHECK(c.box.contains(i / 64, i % 64));
      for (double v : c.image.data()) CHECK((v >= 0.0 && v <= 1.0));
    }
  }
  const DatasetManifest other = generate_dataset(cfg, {2, 1, 0}, 43, scratch("gen_c"));
  CHECK_FALSE(other.to_json()["cases"][0] == ma.to_json()["cases"][0]);
  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(scratch("gen_c"));
}

TEST_CASE("load_case binarises and validates") {
  const fs::path root = scratch("load");
  fs::create_directories(root);
  Grid img(Shape{4, 4}, 0.5);
  Grid mask(Shape{4, 4}, 0.0);
  mask.at(1, 1) = 1.0;
  write_pgm(img, root / "img.pgm");
  write_pgm(mask, root / "mask.pgm");
  CaseEntry e{"c0", Split::train, "img.pgm", "mask.pgm", BoxPrompt{0, 0, 3, 3}};
  const Case c = load_case(root, e);
  CHECK(c.mask.count() == 1);
  CHECK(c.mask[5]);
  CHECK(c.image == parse_pgm(encode_pgm(img)));

  write_pgm(Grid(Shape{4, 5}, 0.0), root / "wide.pgm");
  CaseEntry tampered = e;
  tampered.mask = "wide.pgm";
  CHECK(code_of([&] { load_case(root, tampered); }) == ErrorCode::shape_mismatch);
  CaseEntry outside = e;
  outside.box = BoxPrompt{0, 0, 5, 3};
  CHECK(code_of([&] { load_case(root, outside); }) == ErrorCode::box_out_of_bounds);
  CHECK(code_of([&] { load_dataset(root / "missing"); }) == ErrorCode::dataset_missing);
  CHECK(code_of([&] { load_dataset(root); }) == ErrorCode::dataset_missing);
  fs::remove_all(root);
}
