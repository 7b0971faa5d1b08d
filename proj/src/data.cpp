#include "uaseg/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "uaseg/error.hpp"
#include "uaseg/rng.hpp"

namespace uaseg {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "unknown";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw Error(ErrorCode::config, "unknown split '" + std::string(name) + "'");
}

static std::string_view family_name(ShapeFamily f) {
  return f == ShapeFamily::ellipse ? "ellipse" : "rectangle";
}

static ShapeFamily parse_family(const std::string& name) {
  if (name == "ellipse") return ShapeFamily::ellipse;
  if (name == "rectangle") return ShapeFamily::rectangle;
  throw Error(ErrorCode::config, "unknown shape family '" + name + "'");
}

void ShapeConfig::validate() const {
  if (height < 16 || width < 16) throw Error(ErrorCode::config, "images must be at least 16x16");
  if (shapes_per_image != 1) throw Error(ErrorCode::config, "exactly one shape per image is supported");
  if (families.empty()) throw Error(ErrorCode::config, "no shape families enabled");
  if (!(foreground >= 0.0 && foreground <= 1.0 && background >= 0.0 && background <= 1.0)) {
    throw Error(ErrorCode::config, "intensities must lie in [0, 1]");
  }
  if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::config, "noise sigma must be >= 0");
}

json ShapeConfig::to_json() const {
  json fam = json::array();
  for (ShapeFamily f : families) fam.push_back(family_name(f));
  return json{{"height", height},
              {"width", width},
              {"shapes_per_image", shapes_per_image},
              {"families", fam},
              {"foreground", foreground},
              {"background", background},
              {"noise_sigma", noise_sigma},
              {"max_jitter", max_jitter}};
}

ShapeConfig ShapeConfig::from_json(const json& j) {
  ShapeConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.shapes_per_image = j.value("shapes_per_image", c.shapes_per_image);
  if (j.contains("families")) {
    c.families.clear();
    for (const auto& f : j.at("families")) c.families.push_back(parse_family(f.get<std::string>()));
  }
  c.foreground = j.value("foreground", c.foreground);
  c.background = j.value("background", c.background);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.max_jitter = j.value("max_jitter", c.max_jitter);
  c.validate();
  return c;
}

json DatasetManifest::to_json() const {
  json cs = json::array();
  for (const CaseEntry& e : cases) {
    cs.push_back(json{{"id", e.id},
                      {"split", to_string(e.split)},
                      {"image", e.image},
                      {"mask", e.mask},
                      {"box", {e.box.row0, e.box.col0, e.box.row1, e.box.col1}}});
  }
  return json{{"version", version}, {"seed", seed}, {"generator", config.to_json()}, {"cases", cs}};
}

DatasetManifest DatasetManifest::from_json(const json& j) {
  try {
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    if (m.version != 1) throw Error(ErrorCode::config, "unsupported manifest version");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config = ShapeConfig::from_json(j.at("generator"));
    for (const auto& c : j.at("cases")) {
      CaseEntry e;
      e.id = c.at("id").get<std::string>();
      e.split = parse_split(c.at("split").get<std::string>());
      e.image = c.at("image").get<std::string>();
      e.mask = c.at("mask").get<std::string>();
      const auto box = c.at("box").get<std::vector<std::size_t>>();
      if (box.size() != 4) throw Error(ErrorCode::config, "box must have 4 entries");
      e.box = BoxPrompt{box[0], box[1], box[2], box[3]};
      m.cases.push_back(std::move(e));
    }
    return m;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::config, std::string("malformed manifest: ") + ex.what());
  }
}

std::vector<CaseEntry> DatasetManifest::split(Split s) const {
  std::vector<CaseEntry> out;
  for (const CaseEntry& e : cases) {
    if (e.split == s) out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation

static double quantize(double v) {
  return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

SyntheticCase synthesize_case(const ShapeConfig& cfg, std::uint64_t case_seed) {
  cfg.validate();
  SplitMix64 rng(case_seed);
  const std::size_t h = cfg.height, w = cfg.width;
  const double short_side = static_cast<double>(std::min(h, w));
  const ShapeFamily family = cfg.families[rng.below(cfg.families.size())];

  // Half extents between 8% and 22% of the short side, centre kept far enough
  // from the border that the shape never clips.
  const double a = rng.uniform(0.08, 0.22) * short_side;
  const double b = rng.uniform(0.08, 0.22) * short_side;
  const double reach = std::max(a, b) + 2.0;
  const double cy = rng.uniform(reach, static_cast<double>(h) - 1.0 - reach);
  const double cx = rng.uniform(reach, static_cast<double>(w) - 1.0 - reach);
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double ct = std::cos(theta), st = std::sin(theta);

  SyntheticCase out{Grid(Shape{h, w}), BinaryMask(Shape{h, w}), {}};
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double dy = static_cast<double>(r) - cy;
      const double dx = static_cast<double>(c) - cx;
      bool inside = false;
      if (family == ShapeFamily::ellipse) {
        const double u = (dx * ct + dy * st) / a;
        const double v = (-dx * st + dy * ct) / b;
        inside = u * u + v * v <= 1.0;
      } else {
        inside = std::abs(dy) <= b && std::abs(dx) <= a;
      }
      out.mask.set(r * w + c, inside);
    }
  }

  for (std::size_t i = 0; i < h * w; ++i) {
    const double level = out.mask[i] ? cfg.foreground : cfg.background;
    const double noise = cfg.noise_sigma > 0.0 ? cfg.noise_sigma * rng.normal() : 0.0;
    out.image[i] = quantize(level + noise);
  }

  std::size_t r0 = h, r1 = 0, c0 = w, c1 = 0;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      if (!out.mask[r * w + c]) continue;
      r0 = std::min(r0, r);
      r1 = std::max(r1, r + 1);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c + 1);
    }
  }
  if (r1 == 0) throw Error(ErrorCode::invalid_argument, "generated an empty mask");
  auto jitter = [&] { return rng.below(cfg.max_jitter + 1); };
  const std::size_t jt = jitter(), jl = jitter(), jb = jitter(), jr = jitter();
  out.box.row0 = r0 >= jt ? r0 - jt : 0;
  out.box.col0 = c0 >= jl ? c0 - jl : 0;
  out.box.row1 = std::min(h, r1 + jb);
  out.box.col1 = std::min(w, c1 + jr);
  return out;
}

static void check_box_covers(const CaseEntry& e, const BinaryMask& mask) {
  const std::size_t w = mask.shape()[1];
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] && !e.box.contains(i / w, i % w)) {
      throw Error(ErrorCode::invalid_argument, "box of case " + e.id + " does not cover its mask");
    }
  }
}

static void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::io, "cannot write " + path.string());
  os << bytes;
  if (!os) throw Error(ErrorCode::io, "failed writing " + path.string());
}

DatasetManifest generate_dataset(const ShapeConfig& cfg, const SplitCounts& counts,
                                 std::uint64_t seed, const fs::path& root) {
  cfg.validate();
  if (counts.train == 0 || counts.val == 0) {
    throw Error(ErrorCode::config, "train and val splits need at least one case");
  }
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error(ErrorCode::io, "cannot create " + root.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.seed = seed;
  manifest.config = cfg;
  std::uint64_t index = 0;
  for (auto [split, n] : {std::pair{Split::train, counts.train}, std::pair{Split::val, counts.val},
                          std::pair{Split::test, counts.test}}) {
    if (n == 0) continue;
    const std::string dir(to_string(split));
    fs::create_directories(root / dir, ec);
    if (ec) throw Error(ErrorCode::io, "cannot create " + (root / dir).string());
    for (std::size_t i = 0; i < n; ++i, ++index) {
      char id[32];
      std::snprintf(id, sizeof id, "%s_%04zu", dir.c_str(), i);
      const SyntheticCase sc = synthesize_case(cfg, derive_seed(seed, index));
      CaseEntry e{id, split, dir + "/" + id + "_img.pgm", dir + "/" + id + "_mask.pgm", sc.box};
      check_box_covers(e, sc.mask);
      write_pgm(sc.image, root / e.image);
      write_pgm(sc.mask.to_grid(), root / e.mask);
      manifest.cases.push_back(std::move(e));
    }
  }
  write_file(root / "manifest.json", manifest.to_json().dump(2) + "\n");
  return manifest;
}

DatasetManifest read_manifest(const fs::path& root) {
  std::ifstream is(root / "manifest.json");
  if (!is) throw Error(ErrorCode::dataset_missing, "no manifest.json under " + root.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::config, std::string("malformed manifest: ") + ex.what());
  }
  return DatasetManifest::from_json(j);
}

// ---------------------------------------------------------------------------
// PGM

std::string encode_pgm(const Grid& grid, int maxval) {
  if (grid.rank() != 2) throw Error(ErrorCode::shape_mismatch, "PGM needs a 2D grid");
  if (maxval != 255) throw Error(ErrorCode::pgm_variant, "unsupported PGM variant: maxval must be 255");
  std::string out = "P5\n" + std::to_string(grid.shape()[1]) + " " + std::to_string(grid.shape()[0]) +
                    "\n255\n";
  for (double v : grid.data()) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  return out;
}

Grid parse_pgm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P') {
    throw Error(ErrorCode::pgm_header, "malformed PGM header: missing magic");
  }
  if (bytes[1] != '5') {
    throw Error(ErrorCode::pgm_variant,
                "unsupported PGM variant 'P" + std::string(1, bytes[1]) + "'");
  }
  std::size_t pos = 2;
  auto next_token = [&]() -> long {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos == start || pos - start > 9) throw Error(ErrorCode::pgm_header, "malformed PGM header");
    return std::stol(std::string(bytes.substr(start, pos - start)));
  };
  const long width = next_token();
  const long height = next_token();
  const long maxval = next_token();
  if (width <= 0 || height <= 0) throw Error(ErrorCode::pgm_header, "malformed PGM header: bad size");
  if (maxval != 255) throw Error(ErrorCode::pgm_variant, "unsupported PGM variant: maxval " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw Error(ErrorCode::pgm_header, "malformed PGM header: no separator before raster");
  }
  ++pos;
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() - pos < n) {
    throw Error(ErrorCode::pgm_truncated, "truncated PGM payload: expected " + std::to_string(n) +
                                              " bytes, found " + std::to_string(bytes.size() - pos));
  }
  Grid g(Shape{static_cast<std::size_t>(height), static_cast<std::size_t>(width)});
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / 255.0;
  }
  return g;
}

Grid read_pgm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_pgm(ss.str());
}

void write_pgm(const Grid& grid, const fs::path& path, int maxval) {
  write_file(path, encode_pgm(grid, maxval));
}

Case load_case(const fs::path& root, const CaseEntry& entry) {
  Case c{entry.id, read_pgm(root / entry.image), BinaryMask(Shape{1, 1}), entry.box};
  const Grid raw_mask = read_pgm(root / entry.mask);
  if (raw_mask.shape() != c.image.shape()) {
    throw Error(ErrorCode::shape_mismatch, "case " + entry.id + ": image " + to_string(c.image.shape()) +
                                               " and mask " + to_string(raw_mask.shape()) + " differ");
  }
  // level >= 128  <=>  level / 255 > 127.5 / 255
  c.mask = BinaryMask::threshold(raw_mask, 127.5 / 255.0);
  entry.box.validate(c.image.shape()[0], c.image.shape()[1]);
  return c;
}

const std::vector<Case>& Dataset::split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return train;
}

Dataset load_dataset(const fs::path& root) {
  if (!fs::exists(root)) throw Error(ErrorCode::dataset_missing, "dataset root " + root.string() + " does not exist");
  Dataset ds;
  ds.root = root;
  ds.manifest = read_manifest(root);
  for (const CaseEntry& e : ds.manifest.cases) {
    Case c = load_case(root, e);
    switch (e.split) {
      case Split::train: ds.train.push_back(std::move(c)); break;
      case Split::val: ds.val.push_back(std::move(c)); break;
      case Split::test: ds.test.push_back(std::move(c)); break;
    }
  }
  return ds;
}

}  // namespace uaseg
