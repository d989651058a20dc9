#include "xmodal/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace fs = std::filesystem;

namespace xmodal {

namespace {

bool is_image_file(const fs::path& p) {
  static const std::set<std::string> exts = {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp", ".pgm", ".ppm"};
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return exts.count(e) > 0;
}

std::map<std::string, fs::path> images_by_stem(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("dataset directory not found: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) out[e.path().stem().string()] = e.path();
  return out;
}

void pair_up(const std::map<std::string, fs::path>& visible, const std::map<std::string, fs::path>& other,
             const std::string& id_prefix, const std::string& scene, std::vector<ManifestEntry>& entries,
             std::vector<std::string>& orphans) {
  for (const auto& [id, path] : visible) {
    auto it = other.find(id);
    if (it == other.end()) {
      orphans.push_back(path.string());
      continue;
    }
    entries.push_back({id_prefix + id, path, it->second, scene});
  }
  for (const auto& [id, path] : other)
    if (!visible.count(id)) orphans.push_back(path.string());
}

std::map<std::string, std::string> read_scenes(const fs::path& file) {
  std::map<std::string, std::string> out;
  std::ifstream in(file);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ConfigError("malformed scenes.tsv line: " + line);
    out[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return out;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

void sort_by_id(std::vector<ManifestEntry>& v) {
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.pair_id < b.pair_id; });
}

Image crop_image(const Image& img, int top, int left, ImageSize crop) {
  Image out = make_image(crop.height, crop.width);
  for (int y = 0; y < crop.height; ++y)
    for (int x = 0; x < crop.width; ++x) out.at(y, x) = img.at(top + y, left + x);
  return out;
}

int window_start(double center, int extent, int window) {
  const int start = static_cast<int>(std::floor(center - window / 2.0));
  return std::clamp(start, 0, extent - window);
}

cv::Mat to_mat(const Image& img) {
  cv::Mat m(img.height(), img.width(), CV_64F);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) m.at<double>(y, x) = img.at(y, x);
  return m;
}

Image from_mat(const cv::Mat& m) {
  Image img = make_image(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) img.at(y, x) = m.at<double>(y, x);
  return img;
}

}  // namespace

DatasetLayout parse_layout(const std::string& name) {
  if (name == "generic") return DatasetLayout::generic;
  if (name == "roadscene") return DatasetLayout::roadscene;
  if (name == "rgbnir") return DatasetLayout::rgbnir;
  throw ConfigError("unknown dataset layout '" + name + "' (expected generic, roadscene or rgbnir)");
}

std::string layout_name(DatasetLayout layout) {
  switch (layout) {
    case DatasetLayout::generic: return "generic";
    case DatasetLayout::roadscene: return "roadscene";
    case DatasetLayout::rgbnir: return "rgbnir";
  }
  return "generic";
}

std::vector<std::string> DatasetManifest::scenes() const {
  std::set<std::string> s;
  for (const auto& e : entries) s.insert(e.scene);
  return {s.begin(), s.end()};
}

void DatasetManifest::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
  out << "# root\t" << root.string() << '\n' << "# split\t" << split << '\n';
  for (const auto& e : entries)
    out << e.pair_id << '\t' << e.visible.string() << '\t' << e.other.string() << '\t' << e.scene << '\n';
  if (!out) throw std::runtime_error("failed writing manifest: " + path.string());
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("manifest not found: " + path.string());
  DatasetManifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (line.rfind("# root", 0) == 0 && cols.size() == 2) {
      m.root = cols[1];
    } else if (line.rfind("# split", 0) == 0 && cols.size() == 2) {
      m.split = cols[1];
    } else if (line[0] == '#') {
      continue;
    } else {
      if (cols.size() != 4) throw ConfigError("malformed manifest line: " + line);
      m.entries.push_back({cols[0], cols[1], cols[2], cols[3]});
    }
  }
  return m;
}

Image read_image(const fs::path& path) {
  const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw ConfigError("cannot read image: " + path.string());
  double scale = 1.0;
  switch (raw.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    case CV_32F:
    case CV_64F: scale = 1.0; break;
    default: throw ConfigError("unsupported pixel depth in " + path.string());
  }
  cv::Mat f;
  raw.convertTo(f, CV_MAKETYPE(CV_64F, raw.channels()), scale);
  Image img = make_image(f.rows, f.cols);
  const int ch = f.channels();
  for (int y = 0; y < f.rows; ++y) {
    const double* row = f.ptr<double>(y);
    for (int x = 0; x < f.cols; ++x) {
      double v = 0.0;
      if (ch == 1 || ch == 2) {
        v = row[x * ch];
      } else {
        // OpenCV stores color as BGR(A).
        v = 0.299 * row[x * ch + 2] + 0.587 * row[x * ch + 1] + 0.114 * row[x * ch];
      }
      img.at(y, x) = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

void write_image_png16(const Image& image, const fs::path& path) {
  cv::Mat m(image.height(), image.width(), CV_16U);
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      m.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(std::lround(std::clamp(image.at(y, x), 0.0, 1.0) * 65535.0));
  if (!cv::imwrite(path.string(), m)) throw std::runtime_error("cannot write image: " + path.string());
}

DatasetManifest load_dataset(const fs::path& root, DatasetLayout layout) {
  if (!fs::is_directory(root)) throw ConfigError("dataset root not found: " + root.string());
  DatasetManifest m;
  m.root = root;
  std::vector<std::string> orphans;
  switch (layout) {
    case DatasetLayout::generic: {
      pair_up(images_by_stem(root / "visible"), images_by_stem(root / "other"), "", "default", m.entries, orphans);
      if (fs::exists(root / "scenes.tsv")) {
        const auto scenes = read_scenes(root / "scenes.tsv");
        for (auto& e : m.entries)
          if (auto it = scenes.find(e.pair_id); it != scenes.end()) e.scene = it->second;
      }
      break;
    }
    case DatasetLayout::roadscene:
      pair_up(images_by_stem(root / "crop_LR_visible"), images_by_stem(root / "cropinfrared"), "", "roadscene",
              m.entries, orphans);
      break;
    case DatasetLayout::rgbnir: {
      std::vector<fs::path> scene_dirs;
      for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) scene_dirs.push_back(e.path());
      std::sort(scene_dirs.begin(), scene_dirs.end());
      for (const auto& dir : scene_dirs) {
        std::map<std::string, fs::path> rgb, nir;
        for (const auto& [stem, path] : images_by_stem(dir)) {
          if (stem.size() > 4 && stem.ends_with("_rgb")) rgb[stem.substr(0, stem.size() - 4)] = path;
          else if (stem.size() > 4 && stem.ends_with("_nir")) nir[stem.substr(0, stem.size() - 4)] = path;
        }
        const std::string scene = dir.filename().string();
        pair_up(rgb, nir, scene + "/", scene, m.entries, orphans);
      }
      break;
    }
  }
  if (!orphans.empty()) {
    std::string msg = "pairs without a counterpart file:";
    for (const auto& o : orphans) msg += " " + o;
    throw ConfigError(msg);
  }
  sort_by_id(m.entries);
  for (const auto& e : m.entries) {
    const cv::Mat a = cv::imread(e.visible.string(), cv::IMREAD_UNCHANGED);
    const cv::Mat b = cv::imread(e.other.string(), cv::IMREAD_UNCHANGED);
    if (a.empty() || b.empty()) throw ConfigError("pair '" + e.pair_id + "' has an unreadable image");
    if (a.rows != b.rows || a.cols != b.cols)
      throw ConfigError("pair '" + e.pair_id + "' has mismatched dimensions");
  }
  return m;
}

ImagePair load_pair(const ManifestEntry& entry) {
  ImagePair p;
  p.visible = read_image(entry.visible);
  p.other = read_image(entry.other);
  if (!p.visible.same_shape(p.other)) throw ConfigError("pair '" + entry.pair_id + "' has mismatched dimensions");
  p.correspondence = CorrespondenceMap::identity(p.visible.size2d());
  p.pair_id = entry.pair_id;
  p.scene = entry.scene;
  return p;
}

std::vector<ImagePair> load_pairs(const DatasetManifest& manifest) {
  std::vector<ImagePair> out;
  out.reserve(manifest.size());
  for (const auto& e : manifest.entries) out.push_back(load_pair(e));
  return out;
}

SplitRequest default_split(DatasetLayout layout, std::uint64_t seed) {
  SplitRequest r;
  r.seed = seed;
  switch (layout) {
    case DatasetLayout::roadscene: r.test_count = 43; break;
    case DatasetLayout::rgbnir: r.per_scene_count = 19; break;
    case DatasetLayout::generic: r.test_fraction = 0.2; break;
  }
  return r;
}

SplitResult split_dataset(const DatasetManifest& manifest, const SplitRequest& request) {
  Rng rng(request.seed);
  std::vector<ManifestEntry> test;
  std::vector<ManifestEntry> train;
  auto take = [](std::vector<ManifestEntry> pool, std::size_t n, Rng& r, std::vector<ManifestEntry>& te,
                 std::vector<ManifestEntry>& tr) {
    shuffle(pool, r);
    for (std::size_t i = 0; i < pool.size(); ++i) (i < n ? te : tr).push_back(pool[i]);
  };
  if (request.per_scene_count) {
    for (const auto& scene : manifest.scenes()) {
      std::vector<ManifestEntry> pool;
      for (const auto& e : manifest.entries)
        if (e.scene == scene) pool.push_back(e);
      if (*request.per_scene_count > pool.size())
        throw ConfigError("scene '" + scene + "' has only " + std::to_string(pool.size()) + " pairs, " +
                          std::to_string(*request.per_scene_count) + " requested for testing");
      take(pool, *request.per_scene_count, rng, test, train);
    }
  } else {
    std::size_t n = 0;
    if (request.test_count) {
      n = *request.test_count;
    } else {
      const double f = request.test_fraction.value_or(0.0);
      if (f < 0.0 || f > 1.0) throw ConfigError("test fraction must lie in [0, 1]");
      n = static_cast<std::size_t>(std::lround(f * static_cast<double>(manifest.size())));
    }
    if (n > manifest.size())
      throw ConfigError("requested " + std::to_string(n) + " test pairs from a dataset of " +
                        std::to_string(manifest.size()));
    take(manifest.entries, n, rng, test, train);
  }
  sort_by_id(train);
  sort_by_id(test);
  SplitResult out;
  out.train = {manifest.root, std::move(train), "train"};
  out.test = {manifest.root, std::move(test), "test"};
  return out;
}

ImagePair crop_pair(const ImagePair& pair, int top, int left, ImageSize crop) {
  ImagePair out = pair;
  out.visible = crop_image(pair.visible, top, left, crop);
  out.other = crop_image(pair.other, top, left, crop);
  out.correspondence = CorrespondenceMap::identity(crop);
  return out;
}

ImagePair random_crop_pair(const ImagePair& pair, ImageSize crop, Rng& rng) {
  const ImageSize full = pair.visible.size2d();
  const ImageSize full_b = pair.other.size2d();
  if (crop.height <= 0 || crop.width <= 0 || crop.height > full.height || crop.width > full.width ||
      crop.height > full_b.height || crop.width > full_b.width)
    throw ConfigError("crop " + std::to_string(crop.height) + "x" + std::to_string(crop.width) +
                      " is larger than the image pair '" + pair.pair_id + "'");
  const auto& u = pair.correspondence;
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const Point2 p{static_cast<double>(uniform_index(rng, full.width)) + 0.5,
                   static_cast<double>(uniform_index(rng, full.height)) + 0.5};
    const Point2 q = u.map(p);
    if (!u.valid(q)) continue;
    const int top = window_start(p.y, full.height, crop.height);
    const int left = window_start(p.x, full.width, crop.width);
    if (u.kind == CorrespondenceMap::Kind::identity) return crop_pair(pair, top, left, crop);
    const int top_b = window_start(q.y, full_b.height, crop.height);
    const int left_b = window_start(q.x, full_b.width, crop.width);
    ImagePair out = pair;
    out.visible = crop_image(pair.visible, top, left, crop);
    out.other = crop_image(pair.other, top_b, left_b, crop);
    const Homography h = Homography::translation(-left_b, -top_b).after(u.forward.after(Homography::translation(left, top)));
    out.correspondence = {CorrespondenceMap::Kind::composed, h, crop, crop};
    return out;
  }
  throw std::runtime_error("pair '" + pair.pair_id + "' has no valid correspondence to center a crop on");
}

Image procedural_scene(ImageSize size, int structures, Rng& rng) {
  const int h = size.height;
  const int w = size.width;
  cv::Mat m(h, w, CV_64F);
  // Background stays clear of mid-gray so inversion produces a real intensity gap.
  const double base = bernoulli(rng, 0.5) ? uniform(rng, 0.1, 0.35) : uniform(rng, 0.65, 0.9);
  const double gx = uniform(rng, -0.3, 0.3) / w;
  const double gy = uniform(rng, -0.3, 0.3) / h;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at<double>(y, x) = base + gx * (x - w / 2.0) + gy * (y - h / 2.0);

  const double extent = std::min(h, w);
  for (int s = 0; s < structures; ++s) {
    const double value = uniform01(rng);
    const cv::Point2d c(uniform(rng, 0, w), uniform(rng, 0, h));
    const double radius = uniform(rng, 0.04, 0.16) * extent;
    switch (uniform_index(rng, 4)) {
      case 0: {  // star-shaped polygon
        const int n = 3 + static_cast<int>(uniform_index(rng, 4));
        const double phase = uniform(rng, 0, 2 * std::numbers::pi);
        std::vector<cv::Point> pts;
        for (int k = 0; k < n; ++k) {
          const double a = phase + 2 * std::numbers::pi * k / n + uniform(rng, -0.3, 0.3);
          const double r = radius * uniform(rng, 0.5, 1.0);
          pts.emplace_back(static_cast<int>(c.x + r * std::cos(a)), static_cast<int>(c.y + r * std::sin(a)));
        }
        cv::fillPoly(m, std::vector<std::vector<cv::Point>>{pts}, cv::Scalar(value));
        break;
      }
      case 1: {  // rectangle
        const cv::Point a(static_cast<int>(c.x - radius), static_cast<int>(c.y - radius * uniform(rng, 0.4, 1.0)));
        const cv::Point b(static_cast<int>(c.x + radius * uniform(rng, 0.4, 1.0)), static_cast<int>(c.y + radius));
        cv::rectangle(m, a, b, cv::Scalar(value), cv::FILLED);
        break;
      }
      case 2: {  // ellipse with an outline
        const cv::Size axes(static_cast<int>(radius), static_cast<int>(radius * uniform(rng, 0.3, 1.0)));
        const double angle = uniform(rng, 0, 180);
        cv::ellipse(m, cv::Point(static_cast<int>(c.x), static_cast<int>(c.y)), axes, angle, 0, 360, cv::Scalar(value),
                    cv::FILLED);
        cv::ellipse(m, cv::Point(static_cast<int>(c.x), static_cast<int>(c.y)), axes, angle, 0, 360,
                    cv::Scalar(1.0 - value), 1);
        break;
      }
      default: {  // checkerboard patch
        const int cell = 2 + static_cast<int>(uniform_index(rng, 4));
        const double other = uniform01(rng);
        const int x0 = std::max(0, static_cast<int>(c.x - radius));
        const int y0 = std::max(0, static_cast<int>(c.y - radius));
        const int x1 = std::min(w, static_cast<int>(c.x + radius));
        const int y1 = std::min(h, static_cast<int>(c.y + radius));
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) m.at<double>(y, x) = (((x - x0) / cell + (y - y0) / cell) % 2) ? value : other;
        break;
      }
    }
  }
  cv::GaussianBlur(m, m, cv::Size(0, 0), 0.7, 0.7, cv::BORDER_REPLICATE);
  cv::min(cv::max(m, 0.0), 1.0, m);
  return from_mat(m);
}

Image pseudo_infrared(const Image& visible, const SyntheticParams& params, Rng& rng) {
  Image ir = visible;
  for (auto& v : ir.values()) v = 1.0 - v;
  ir = gaussian_blur(ir, params.ir_blur_sigma);
  const double gamma = uniform(rng, params.ir_gamma.min, params.ir_gamma.max);
  const double lo = uniform(rng, 0.0, 0.15);
  const double hi = uniform(rng, 0.85, 1.0);
  for (auto& v : ir.values()) v = lo + (hi - lo) * std::pow(std::clamp(v, 0.0, 1.0), gamma);
  ir = add_gaussian_noise(ir, params.ir_noise_std, rng);
  for (auto& v : ir.values()) v = std::clamp(v, 0.0, 1.0);
  return ir;
}

std::vector<ImagePair> make_synthetic_pairs(std::size_t n_pairs, const SyntheticParams& params, std::uint64_t seed) {
  if (n_pairs < 1) throw ConfigError("synthetic dataset needs at least one pair");
  if (params.size.height < 8 || params.size.width < 8) throw ConfigError("synthetic image size must be at least 8x8");
  std::vector<fs::path> sources;
  if (params.source_dir) {
    if (!fs::is_directory(*params.source_dir)) throw ConfigError("source directory not found: " + params.source_dir->string());
    for (const auto& e : fs::directory_iterator(*params.source_dir))
      if (e.is_regular_file() && is_image_file(e.path())) sources.push_back(e.path());
    if (sources.empty()) throw ConfigError("source directory has no images: " + params.source_dir->string());
    std::sort(sources.begin(), sources.end());
  }
  Rng rng(seed);
  std::vector<ImagePair> pairs;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    ImagePair p;
    if (sources.empty()) {
      p.visible = procedural_scene(params.size, params.min_structures, rng);
    } else {
      cv::Mat m = to_mat(read_image(sources[i % sources.size()]));
      cv::resize(m, m, cv::Size(params.size.width, params.size.height), 0, 0, cv::INTER_AREA);
      p.visible = from_mat(m);
    }
    p.other = pseudo_infrared(p.visible, params, rng);
    p.correspondence = CorrespondenceMap::identity(params.size);
    std::ostringstream id;
    id << "synth_" << std::setw(5) << std::setfill('0') << i;
    p.pair_id = id.str();
    p.scene = "synthetic";
    pairs.push_back(std::move(p));
  }
  return pairs;
}

DatasetManifest write_generic_dataset(const std::vector<ImagePair>& pairs, const fs::path& root) {
  fs::create_directories(root / "visible");
  fs::create_directories(root / "other");
  DatasetManifest m;
  m.root = root;
  std::ofstream scenes(root / "scenes.tsv");
  for (const auto& p : pairs) {
    const fs::path vis = root / "visible" / (p.pair_id + ".png");
    const fs::path oth = root / "other" / (p.pair_id + ".png");
    write_image_png16(p.visible, vis);
    write_image_png16(p.other, oth);
    scenes << p.pair_id << '\t' << p.scene << '\n';
    m.entries.push_back({p.pair_id, vis, oth, p.scene});
  }
  if (!scenes) throw std::runtime_error("cannot write scenes.tsv under " + root.string());
  sort_by_id(m.entries);
  m.save(root / "manifest.tsv");
  return m;
}

DatasetManifest make_synthetic_dataset(const fs::path& root, std::size_t n_pairs, const SyntheticParams& params,
                                       std::uint64_t seed) {
  return write_generic_dataset(make_synthetic_pairs(n_pairs, params, seed), root);
}

}  // namespace xmodal
