#pragma once

// Aligned cross-modality pair datasets: on-disk layouts, splits, correspondence
// centered crops and a procedural visible / pseudo-infrared generator.
//
// Generic layout:
//   root/visible/<id>.png   visible image (RGB is converted to luma)
//   root/other/<id>.png     infrared / NIR / pseudo-IR image
//   root/scenes.tsv         optional, "<id>\t<scene>" per line
//
// RoadScene layout: root/crop_LR_visible/<id>.<ext>, root/cropinfrared/<id>.<ext>.
// RGB-NIR layout: root/<scene>/<id>_rgb.<ext>, root/<scene>/<id>_nir.<ext>.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xmodal/core.hpp"
#include "xmodal/transforms.hpp"

namespace xmodal {

struct ImagePair {
  Image visible;
  Image other;
  CorrespondenceMap correspondence;
  std::string pair_id;
  std::string scene;
};

enum class DatasetLayout { generic, roadscene, rgbnir };
DatasetLayout parse_layout(const std::string& name);
std::string layout_name(DatasetLayout layout);

struct ManifestEntry {
  std::string pair_id;
  std::filesystem::path visible;
  std::filesystem::path other;
  std::string scene;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::string split = "all";  // all, train or test

  std::size_t size() const { return entries.size(); }
  std::vector<std::string> scenes() const;

  /// Tab-separated: "# root\t<path>", "# split\t<name>", then id, visible, other, scene.
  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
};

/// Loads a [0, 1] grayscale image from 8- or 16-bit files; color goes through
/// 0.299 R + 0.587 G + 0.114 B.
Image read_image(const std::filesystem::path& path);
/// Writes a 16-bit grayscale PNG.
void write_image_png16(const Image& image, const std::filesystem::path& path);

/// Scans `root` in the given layout and checks every pair loads with matching
/// dimensions. Entries are sorted by pair id.
DatasetManifest load_dataset(const std::filesystem::path& root, DatasetLayout layout);

ImagePair load_pair(const ManifestEntry& entry);
std::vector<ImagePair> load_pairs(const DatasetManifest& manifest);

/// Exactly one of the three sizes is used, checked in the order
/// per_scene_count, test_count, test_fraction.
struct SplitRequest {
  std::optional<double> test_fraction;
  std::optional<std::size_t> test_count;
  std::optional<std::size_t> per_scene_count;
  std::uint64_t seed = 0;
};

/// The split the original benchmarks use for a layout: 43 test pairs for
/// RoadScene, 19 test images per scene for RGB-NIR, 20% otherwise.
SplitRequest default_split(DatasetLayout layout, std::uint64_t seed);

struct SplitResult {
  DatasetManifest train;
  DatasetManifest test;
};
SplitResult split_dataset(const DatasetManifest& manifest, const SplitRequest& request);

/// Identical window for both images of an aligned pair, centered on a uniformly
/// drawn pixel and shifted to stay inside the image.
ImagePair random_crop_pair(const ImagePair& pair, ImageSize crop, Rng& rng);
ImagePair crop_pair(const ImagePair& pair, int top, int left, ImageSize crop);

struct SyntheticParams {
  ImageSize size{128, 128};
  /// Optional directory of source images used instead of the procedural scenes.
  std::optional<std::filesystem::path> source_dir;
  double ir_blur_sigma = 2.0;
  double ir_noise_std = 0.02;
  Range ir_gamma{0.6, 1.6};
  int min_structures = 24;
};

/// Procedural scene: shaded background, random polygons, ellipses and texture patches.
Image procedural_scene(ImageSize size, int structures, Rng& rng);
/// clamp(remap(blur(1 - visible, sigma)) + noise), where remap is a random gamma and contrast.
Image pseudo_infrared(const Image& visible, const SyntheticParams& params, Rng& rng);

std::vector<ImagePair> make_synthetic_pairs(std::size_t n_pairs, const SyntheticParams& params, std::uint64_t seed);

/// Writes pairs in the generic layout (16-bit PNGs plus scenes.tsv and manifest.tsv)
/// and returns the manifest.
DatasetManifest write_generic_dataset(const std::vector<ImagePair>& pairs, const std::filesystem::path& root);

DatasetManifest make_synthetic_dataset(const std::filesystem::path& root, std::size_t n_pairs,
                                       const SyntheticParams& params, std::uint64_t seed);

}  // namespace xmodal
