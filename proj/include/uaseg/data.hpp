#pragma once

// Seeded synthetic dataset: one ellipse or rectangle per image, a binary mask,
// and a jittered box prompt. Files are binary PGM plus a JSON manifest:
//
//   <root>/manifest.json
//   <root>/{train,val,test}/<case_id>_{img,mask}.pgm

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "uaseg/grid.hpp"
#include "uaseg/metrics.hpp"
#include "uaseg/model.hpp"

namespace uaseg {

enum class ShapeFamily { ellipse, rectangle };
enum class Split { train, val, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct ShapeConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t shapes_per_image = 1;
  std::vector<ShapeFamily> families{ShapeFamily::ellipse, ShapeFamily::rectangle};
  double foreground = 0.7;
  double background = 0.3;
  double noise_sigma = 0.1;
  std::size_t max_jitter = 3;  // box margin drawn from [0, max_jitter] per side

  void validate() const;
  nlohmann::json to_json() const;
  static ShapeConfig from_json(const nlohmann::json& j);
};

struct SplitCounts {
  std::size_t train = 200;
  std::size_t val = 50;
  std::size_t test = 50;
};

struct CaseEntry {
  std::string id;
  Split split = Split::train;
  std::string image;  // relative to the dataset root
  std::string mask;
  BoxPrompt box;
};

struct DatasetManifest {
  int version = 1;
  std::uint64_t seed = 0;
  ShapeConfig config;
  std::vector<CaseEntry> cases;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
  std::vector<CaseEntry> split(Split s) const;
};

// Writes all files and manifest.json under `root`. Deterministic in
// (cfg, counts, seed).
DatasetManifest generate_dataset(const ShapeConfig& cfg, const SplitCounts& counts,
                                 std::uint64_t seed, const std::filesystem::path& root);

// In-memory image and mask for one case (no files).
struct SyntheticCase {
  Grid image;  // quantised to 8-bit levels / 255
  BinaryMask mask;
  BoxPrompt box;
};
SyntheticCase synthesize_case(const ShapeConfig& cfg, std::uint64_t case_seed);

DatasetManifest read_manifest(const std::filesystem::path& root);

// Binary P5 PGM, maxval 255. Values are in [0, 1] and quantised to
// round(v * 255) on write; read returns level / 255.
Grid read_pgm(const std::filesystem::path& path);
void write_pgm(const Grid& grid, const std::filesystem::path& path, int maxval = 255);
Grid parse_pgm(std::string_view bytes);
std::string encode_pgm(const Grid& grid, int maxval = 255);

struct Case {
  std::string id;
  Grid image;
  BinaryMask mask;
  BoxPrompt box;
};

// Image scaled to [0, 1]; mask binarised at level 128.
Case load_case(const std::filesystem::path& root, const CaseEntry& entry);

struct Dataset {
  std::filesystem::path root;
  DatasetManifest manifest;
  std::vector<Case> train;
  std::vector<Case> val;
  std::vector<Case> test;

  const std::vector<Case>& split(Split s) const;
};

Dataset load_dataset(const std::filesystem::path& root);

}  // namespace uaseg
